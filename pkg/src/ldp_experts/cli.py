"""Command-line front end.

Exit codes: 0 success, 2 usage or validation error, 3 runtime/numerical error.
Every command writes a manifest.json with the fully resolved configuration.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .adabatch import compute_delay, run_adabatch
from .core import (
    InvalidInputError,
    NumericalError,
    PrivacyParams,
    noisy_stream,
    read_gain_csv,
    static_regret,
    write_gain_csv,
)
from .evaluation import LearnerSpec, build_learner, default_specs, ingest_csv, run_eval, synthetic_drift_stream
from .privacy import (
    DEFAULT_B_MAX,
    amplified_tradeoff,
    gaussian_tradeoff,
    proxy_batch_distribution,
    to_approx_dp,
)
from .rwftpl import run_ftpl
from .rwmeta import ConstantVertexLearner, run_meta
from .sim import McConfig, empirical_tradeoff, load_stream, mc_batch_pmf

SCHEMA_VERSION = 1


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# helpers


def _grid(spec: str) -> np.ndarray:
    """Parse ``start:stop:step`` (inclusive stop) or a comma list."""
    try:
        if ":" in spec:
            a, b, s = (float(x) for x in spec.split(":"))
            if s <= 0 or b < a:
                raise ValueError
            k = int(math.floor((b - a) / s + 1e-9))
            return a + s * np.arange(k + 1)
        return np.array([float(x) for x in spec.split(",")])
    except ValueError:
        raise UsageError(f"bad grid {spec!r}; use start:stop:step or a comma list") from None


def _levels(spec: str) -> list[float]:
    out = []
    for tok in spec.split(","):
        tok = tok.strip().lower()
        try:
            out.append(math.inf if tok in ("inf", "infinity") else float(tok))
        except ValueError:
            raise UsageError(f"bad privacy level {tok!r}") from None
    return out


def _outdir(path: str) -> Path:
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {p}: {exc.strerror}") from None
    return p


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _manifest(out: Path, command: str, config: dict, files: list[str]) -> None:
    _write_json(out / "manifest.json", {
        "schema_version": SCHEMA_VERSION,
        "tool_version": __version__,
        "command": command,
        "config": config,
        "files": sorted(files),
    })


def _curve_payload(curve) -> dict:
    return {"schema_version": SCHEMA_VERSION, "label": curve.label,
            "alpha": curve.alpha.tolist(), "beta": curve.beta.tolist()}


def _emit_curve(out: Path, name: str, curve, fmt: str) -> str:
    if fmt == "csv":
        curve.to_csv(out / f"{name}.csv")
        return f"{name}.csv"
    _write_json(out / f"{name}.json", _curve_payload(curve))
    return f"{name}.json"


def _resolve_eta(args, n: int) -> float:
    sens = math.sqrt(n) if args.sensitivity is None else args.sensitivity
    if args.eta is not None:
        if not args.eta > 0:
            raise InvalidInputError("--eta must be positive")
        return args.eta
    eta = sens / args.mu
    PrivacyParams(args.mu, sens, eta, n)
    return max(math.sqrt(2.0), eta) if getattr(args, "worst_case_eta", False) else eta


def parse_learners(spec: str, n: int):
    """Comma list of ``zoo``, ``ftpl``, ``vertex:I`` or ``ridge:WINDOW:STRENGTH``."""
    specs = []
    for tok in spec.split(","):
        parts = tok.strip().split(":")
        if parts[0] == "zoo" and len(parts) == 1:
            specs.extend(default_specs())
        elif parts[0] == "ftpl" and len(parts) == 1:
            specs.append(LearnerSpec("ftpl_baseline"))
        elif parts[0] == "vertex" and len(parts) == 2:
            specs.append(LearnerSpec("constant_vertex", index=int(parts[1])))
        elif parts[0] == "ridge" and len(parts) == 3:
            specs.append(LearnerSpec("rolling_regression", int(parts[1]), parts[2]))
        else:
            raise UsageError(f"bad learner spec {tok!r}")
    for s in specs:
        if s.kind == "constant_vertex" and not 0 <= s.index < n:
            raise InvalidInputError(f"vertex learner index {s.index} out of range for n={n}")
    return specs


# --------------------------------------------------------------------------
# commands


def cmd_privacy_curve(args) -> int:
    out = _outdir(args.out)
    sens = math.sqrt(args.n) if args.sensitivity is None else args.sensitivity
    eta = _resolve_eta(args, args.n)
    mu_local = sens / eta
    dist = proxy_batch_distribution(args.t, eta, args.n, args.alpha, args.B_max)
    base = gaussian_tradeoff(mu_local)
    amp = amplified_tradeoff(dist, mu_local)
    eps = _grid(args.eps_grid)
    delta = to_approx_dp(dist, mu_local, eps)
    files = [_emit_curve(out, "baseline", base, args.format), _emit_curve(out, "amplified", amp, args.format)]
    if args.format == "csv":
        with open(out / "dual.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["eps", "delta"])
            for e, d in zip(eps, np.atleast_1d(delta)):
                w.writerow([repr(float(e)), repr(float(d))])
        files.append("dual.csv")
    else:
        _write_json(out / "dual.json", {"schema_version": SCHEMA_VERSION, "eps": eps.tolist(),
                                        "delta": np.atleast_1d(delta).tolist()})
        files.append("dual.json")
    _write_json(out / "distribution.json", {"schema_version": SCHEMA_VERSION, "weights": dist.to_dict()})
    files.append("distribution.json")
    cfg = {"mu": args.mu, "n": args.n, "alpha": args.alpha, "t": args.t, "B_max": args.B_max,
           "sensitivity": sens, "eta": eta, "local_gdp": mu_local, "eps_grid": args.eps_grid,
           "format": args.format}
    _manifest(out, "privacy-curve", cfg, files)
    return 0


def cmd_simulate(args) -> int:
    out = _outdir(args.out)
    cfg = McConfig(
        runs=args.runs, T=args.T, n=args.n, mu=args.mu, sensitivity=args.sensitivity, alpha=args.alpha,
        master_seed=args.seed, stream=args.stream, eta=args.eta, worst_case_eta=args.worst_case_eta,
        regime_length=args.regime_length, workers=args.workers,
    )
    rounds = sorted({int(x) for x in _grid(args.rounds)}) if args.rounds else [args.T]
    pmf = mc_batch_pmf(cfg, rounds)
    pmf.to_json(out / "pmf.json")
    files = ["pmf.json"]
    mu_local = cfg.delta / cfg.resolved_eta
    for t in rounds:
        files.append(_emit_curve(out, f"tradeoff_t{t}", empirical_tradeoff(pmf, t, mu_local), args.format))
    if args.runs == 1:
        gains = cfg.gains()
        res = run_adabatch(noisy_stream(gains, cfg.resolved_eta, cfg.master_seed, "run0"), cfg.resolved_eta, cfg.alpha)
        _write_jsonl(out / "run_log.jsonl", res.log_records())
        files.append("run_log.jsonl")
    _manifest(out, "simulate", {**cfg.to_dict(), "rounds": rounds, "format": args.format}, files)
    return 0


def cmd_compute_delay(args) -> int:
    print(compute_delay(args.k, args.eta, args.n, args.alpha, args.t))
    return 0


def _write_jsonl(path: Path, records) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def cmd_run(args) -> int:
    gains = read_gain_csv(args.stream)
    T, n = gains.shape
    if args.n is not None and args.n != n:
        raise InvalidInputError(f"stream has {n} experts but --n {args.n} was given")
    eta = _resolve_eta(args, n)
    out = _outdir(args.out)
    noisy = noisy_stream(gains, eta, args.seed, "gains")
    files = []
    summary = {"schema_version": SCHEMA_VERSION, "algo": args.algo, "T": T, "n": n}
    if args.algo in ("ftpl", "adabatch"):
        if args.algo == "ftpl":
            actions = run_ftpl(noisy, eta)
        else:
            res = run_adabatch(noisy, eta, args.alpha)
            actions = res.actions
            _write_jsonl(out / "run_log.jsonl", res.log_records())
            files.append("run_log.jsonl")
            summary["flushes"] = len(res.batches)
        if args.format == "csv":
            with open(out / "actions.csv", "w", newline="", encoding="utf-8") as fh:
                fh.write("round,action\n")
                for i, a in enumerate(actions, start=1):
                    fh.write(f"{i},{int(a)}\n")
            files.append("actions.csv")
        else:
            _write_json(out / "actions.json", {"schema_version": SCHEMA_VERSION, "actions": [int(a) for a in actions]})
            files.append("actions.json")
        summary["total_gain"] = float(gains[np.arange(T), actions].sum())
        summary["static_regret"] = static_regret(gains, actions)
    else:
        specs = parse_learners(args.learners, n)
        learners = [build_learner(s, n) for s in specs]
        res = run_meta(noisy, learners, eta, args.seed, "meta")
        if args.format == "csv":
            with open(out / "actions.csv", "w", newline="", encoding="utf-8") as fh:
                fh.write("round,chosen_learner\n")
                for i, j in enumerate(res.chosen, start=1):
                    fh.write(f"{i},{int(j)}\n")
            files.append("actions.csv")
        _write_jsonl(out / "run_log.jsonl", res.log_records())
        files.append("run_log.jsonl")
        meta_gain = float(np.einsum("tn,tn->", res.actions, gains))
        learner_gain = np.einsum("tmn,tn->m", res.predictions, gains)
        summary.update({
            "total_gain": meta_gain,
            "static_regret": float(gains.sum(axis=0).max() - meta_gain),
            "learner_gains": learner_gain.tolist(),
            "regret_vs_best_learner": float(learner_gain.max() - meta_gain),
        })
    _write_json(out / "summary.json", summary)
    files.append("summary.json")
    cfg = {"algo": args.algo, "stream": str(args.stream), "eta": eta, "mu": args.mu,
           "sensitivity": args.sensitivity, "alpha": args.alpha, "seed": args.seed,
           "learners": args.learners if args.algo == "meta" else None, "format": args.format}
    _manifest(out, "run", cfg, files)
    return 0


def cmd_eval(args) -> int:
    if args.dataset is None and not args.synthetic:
        raise UsageError("give --dataset PATH or --synthetic")
    if args.dataset is not None and args.synthetic:
        raise UsageError("--dataset and --synthetic are mutually exclusive")
    levels = _levels(args.levels)
    if args.dataset is not None:
        ds = ingest_csv(args.dataset, args.min_cases)
        gains, sens = ds.density, ds.sensitivity
        source = {"dataset": str(args.dataset), "min_cases": args.min_cases, "dropped_units": list(ds.dropped)}
    else:
        gains = synthetic_drift_stream(args.n, args.T, args.regime_length, args.seed)
        sens = args.sensitivity
        source = {"synthetic": {"n": args.n, "T": args.T, "regime_length": args.regime_length}}
    specs = parse_learners(args.learners, gains.shape[1])
    out = _outdir(args.out)
    res = run_eval(gains, levels, specs, args.runs, sensitivity=sens, master_seed=args.seed,
                   include_naive=not args.no_naive)
    files = []
    if args.format == "csv":
        res.to_csv(out / "results.csv")
        files.append("results.csv")
    _write_json(out / "results.json", res.to_dict())
    files.append("results.json")
    _manifest(out, "eval", {**res.config, "source": source, "format": args.format}, files)
    return 0


def cmd_gen_stream(args) -> int:
    gains = load_stream(args.kind, args.T, args.n, args.seed, args.regime_length)
    out = Path(args.out)
    if out.suffix != ".csv":
        out = _outdir(args.out) / "stream.csv"
    try:
        write_gain_csv(out, gains)
    except OSError as exc:
        raise OSError(f"cannot write {out}: {exc.strerror}") from None
    return 0


# --------------------------------------------------------------------------
# parser


def _common(p, out_default="out"):
    p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    p.add_argument("--out", default=out_default, help="output directory")
    p.add_argument("--format", choices=("csv", "json"), default="csv")


def _privacy_flags(p, mu_default=1.0):
    p.add_argument("--mu", type=float, default=mu_default, help="local GDP level")
    p.add_argument("--sensitivity", type=float, default=None, help="L2 sensitivity (default sqrt(n))")
    p.add_argument("--eta", type=float, default=None, help="noise scale override")
    p.add_argument("--worst-case-eta", action="store_true", help="raise eta to at least sqrt(2)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ldp-experts", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("privacy-curve", help="baseline, amplified and (eps, delta) curves")
    _privacy_flags(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--t", type=int, required=True, help="round whose privacy is reported")
    p.add_argument("--B-max", dest="B_max", type=int, default=DEFAULT_B_MAX)
    p.add_argument("--eps-grid", default="0:5:0.1")
    _common(p)
    p.set_defaults(fn=cmd_privacy_curve)

    p = sub.add_parser("simulate", help="Monte Carlo batch-size PMFs of RW-AdaBatch")
    _privacy_flags(p)
    p.add_argument("--runs", type=int, default=1000)
    p.add_argument("--T", type=int, default=10_000)
    p.add_argument("--n", type=int, default=25)
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--stream", default="zero", help="zero, alternating, synthetic or a CSV path")
    p.add_argument("--regime-length", type=int, default=250)
    p.add_argument("--rounds", default=None, help="rounds to record, e.g. 500,1000 or 0:10000:1000")
    p.add_argument("--workers", type=int, default=1)
    _common(p)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("compute-delay", help="print the delay chosen at gap k")
    p.add_argument("--k", type=float, required=True)
    p.add_argument("--eta", type=float, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--t", type=int, required=True)
    p.set_defaults(fn=cmd_compute_delay)

    p = sub.add_parser("run", help="run one algorithm on a gain-stream CSV")
    p.add_argument("--algo", choices=("ftpl", "adabatch", "meta"), required=True)
    p.add_argument("--stream", required=True, help="headerless gain CSV")
    p.add_argument("--n", type=int, default=None, help="expected expert count (checked)")
    _privacy_flags(p)
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--learners", default="zoo", help="zoo, ftpl, vertex:I, ridge:W:STRENGTH (comma list)")
    _common(p)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("eval", help="learner-zoo evaluation table")
    p.add_argument("--dataset", default=None, help="week_index,unit_id,covid_density,total_beds CSV")
    p.add_argument("--min-cases", type=float, default=100.0)
    p.add_argument("--synthetic", action="store_true", help="use the synthetic drift stream")
    p.add_argument("--n", type=int, default=5)
    p.add_argument("--T", type=int, default=2000)
    p.add_argument("--regime-length", type=int, default=250)
    p.add_argument("--sensitivity", type=float, default=1.0, help="synthetic-stream sensitivity")
    p.add_argument("--levels", default="inf,1,0.5,0.25")
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--learners", default="zoo")
    p.add_argument("--no-naive", action="store_true", help="skip the budget-split baseline")
    _common(p)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("gen-stream", help="write a gain stream CSV")
    p.add_argument("--kind", choices=("synthetic", "zero", "alternating"), default="synthetic")
    p.add_argument("--n", type=int, default=5)
    p.add_argument("--T", type=int, default=2000)
    p.add_argument("--regime-length", type=int, default=250)
    _common(p, out_default="stream.csv")
    p.set_defaults(fn=cmd_gen_stream)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (UsageError, InvalidInputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical error: {exc} {exc.diagnostics}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
