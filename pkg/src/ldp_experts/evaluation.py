"""Evaluation pipeline: learner zoo, panel-data ingestion, baselines and result tables.

Every run draws one noisy stream that RW-Meta and all of its learners share.
The naive baseline instead splits the privacy budget, giving each learner
its own stream with noise inflated by sqrt(m).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .core import InvalidInputError, argmax_tiebreak, noisy_stream, round_rng
from .rwmeta import FtplLearner, Learner, run_meta

WINDOWS = (8, 16, 32, 64)
RIDGE = {"strong": 10.0, "medium": 1.0, "weak": 0.1}  # times the window length


@dataclass(frozen=True)
class PanelDataset:
    """Weekly per-unit densities in [0, 1] and the smallest unit size each week."""

    density: np.ndarray  # weeks x units
    min_beds: np.ndarray  # per week
    unit_ids: tuple = ()
    dropped: tuple = ()

    def __post_init__(self):
        d = np.asarray(self.density, dtype=float)
        mb = np.asarray(self.min_beds, dtype=float)
        if d.ndim != 2 or d.shape[1] < 1:
            raise InvalidInputError("density must be a weeks x units matrix")
        if d.size and (d.min() < 0 or d.max() > 1):
            raise InvalidInputError("density entries must lie in [0, 1]")
        if mb.shape != (d.shape[0],) or np.any(mb <= 0):
            raise InvalidInputError("min_beds must be positive, one per week")
        object.__setattr__(self, "density", d)
        object.__setattr__(self, "min_beds", mb)

    @property
    def weeks(self) -> int:
        return self.density.shape[0]

    @property
    def units(self) -> int:
        return self.density.shape[1]

    @property
    def sensitivity(self) -> np.ndarray:
        """Per-week L2 sensitivity sqrt(2) / min_beds."""
        return math.sqrt(2.0) / self.min_beds


def ingest_csv(path, min_cases_filter: float = 100.0) -> PanelDataset:
    """Read ``week_index,unit_id,covid_density,total_beds`` rows into a panel.

    An optional header row is skipped. Units whose total cases (density times
    beds, summed over weeks) fall below ``min_cases_filter`` are dropped.
    Missing (week, unit) cells count as density 0. Week indices are
    relabelled 0..W-1 in sorted order, unit columns follow sorted unit id.
    """
    records = {}
    with open(Path(path), encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            if lineno == 1 and parts[0].lower() == "week_index":
                continue
            if len(parts) != 4:
                raise InvalidInputError(f"{path}:{lineno}: expected 4 columns, got {len(parts)}")
            try:
                week, unit = int(parts[0]), parts[1]
                dens, beds = float(parts[2]), float(parts[3])
            except ValueError as exc:
                raise InvalidInputError(f"{path}:{lineno}: {exc}") from None
            if not 0.0 <= dens <= 1.0:
                raise InvalidInputError(f"{path}:{lineno}: density {dens} outside [0, 1]")
            if not beds > 0:
                raise InvalidInputError(f"{path}:{lineno}: total_beds must be positive")
            if (week, unit) in records:
                raise InvalidInputError(f"{path}:{lineno}: duplicate row for week {week}, unit {unit}")
            records[(week, unit)] = (dens, beds)
    if not records:
        raise InvalidInputError(f"{path}: no data rows")
    weeks = sorted({w for w, _ in records})
    units = sorted({u for _, u in records})
    cases = {u: 0.0 for u in units}
    for (w, u), (d, b) in records.items():
        cases[u] += d * b
    kept = [u for u in units if cases[u] >= min_cases_filter]
    dropped = tuple(u for u in units if cases[u] < min_cases_filter)
    if not kept:
        raise InvalidInputError(f"{path}: every unit falls below the case filter {min_cases_filter}")
    wi = {w: i for i, w in enumerate(weeks)}
    ui = {u: j for j, u in enumerate(kept)}
    density = np.zeros((len(weeks), len(kept)))
    min_beds = np.full(len(weeks), np.inf)
    for (w, u), (d, b) in records.items():
        if u in ui:
            density[wi[w], ui[u]] = d
            min_beds[wi[w]] = min(min_beds[wi[w]], b)
    if np.any(~np.isfinite(min_beds)):
        empty = [weeks[i] for i in np.nonzero(~np.isfinite(min_beds))[0]]
        raise InvalidInputError(f"{path}: weeks {empty} have no retained units")
    return PanelDataset(density, min_beds, tuple(kept), dropped)


# --------------------------------------------------------------------------
# learners


@dataclass(frozen=True)
class LearnerSpec:
    kind: str = "rolling_regression"  # or ftpl_baseline, constant_vertex
    window: int = 16
    regularization: str = "medium"
    index: int = 0  # vertex for constant_vertex learners

    def __post_init__(self):
        if self.kind not in ("rolling_regression", "ftpl_baseline", "constant_vertex"):
            raise InvalidInputError(f"unknown learner kind {self.kind!r}")
        if self.kind == "rolling_regression":
            if self.window < 2:
                raise InvalidInputError("regression window must be >= 2")
            if self.regularization not in RIDGE:
                raise InvalidInputError(f"regularization must be one of {sorted(RIDGE)}")

    @property
    def ridge(self) -> float:
        return RIDGE[self.regularization] * self.window


def forecast_weights(length: int, ridge: float) -> np.ndarray:
    """Weights c with c @ y = one-step-ahead forecast of a ridge trend fit.

    The intercept is unpenalised; the slope on the centred time index is
    shrunk by ``ridge``. The forecast is linear in y, hence this form.
    """
    tau = np.arange(length, dtype=float)
    centred = tau - tau.mean()
    return 1.0 / length + centred * (length - tau.mean()) / (centred @ centred + ridge)


class RollingRegressionLearner(Learner):
    """Per expert, fit a ridge-shrunk linear trend over the trailing window of
    noisy gains and play the vertex with the highest forecast."""

    def __init__(self, window: int, ridge: float, id: str | None = None):
        if window < 2:
            raise InvalidInputError("window must be >= 2")
        self.window, self.ridge = int(window), float(ridge)
        self.id = id or f"ridge(w={window},lam={ridge:g})"
        self._weights = {}

    def _w(self, length):
        w = self._weights.get(length)
        if w is None:
            w = self._weights[length] = forecast_weights(length, self.ridge)
        return w

    def forecast(self, history: np.ndarray) -> np.ndarray | None:
        data = np.asarray(history)[1:]  # row 0 is the initial perturbation, not data
        if data.shape[0] < 2:
            return None
        recent = data[-self.window:]
        return self._w(recent.shape[0]) @ recent

    def predict(self, history):
        n = np.shape(history)[1]
        x = np.zeros(n)
        f = self.forecast(history)
        x[0 if f is None else argmax_tiebreak(f)] = 1.0
        return x


def rolling_regression_learner(spec: LearnerSpec) -> RollingRegressionLearner:
    if spec.kind != "rolling_regression":
        raise InvalidInputError("spec is not a rolling regression learner")
    return RollingRegressionLearner(spec.window, spec.ridge, f"ridge-{spec.regularization}-w{spec.window}")


def default_specs() -> list[LearnerSpec]:
    specs = [LearnerSpec("rolling_regression", w, r) for w in WINDOWS for r in ("weak", "medium", "strong")]
    return specs + [LearnerSpec("ftpl_baseline")]


def build_learner(spec: LearnerSpec, n: int) -> Learner:
    if spec.kind == "rolling_regression":
        return rolling_regression_learner(spec)
    if spec.kind == "ftpl_baseline":
        return FtplLearner()
    from .rwmeta import ConstantVertexLearner

    return ConstantVertexLearner(spec.index, n)


def default_learners(n: int) -> list[Learner]:
    """The 13-member zoo: 4 windows x 3 ridge strengths, plus RW-FTPL."""
    return [build_learner(s, n) for s in default_specs()]


# --------------------------------------------------------------------------
# baselines and synthetic data


def naive_budget_split(m: int, mu: float) -> float:
    """Per-learner GDP level when mu is split evenly over m composed mechanisms."""
    if m < 1:
        raise InvalidInputError("need m >= 1")
    return mu / math.sqrt(m)


def run_naive_split(gains: np.ndarray, specs, eta: float, master_seed: int, stream_id: str):
    """Each learner gets its own noisy stream at noise eta * sqrt(m).

    A meta-level follow-the-perturbed-leader picks the learner with the
    highest estimated gain, where learner i's gain estimate uses learner i's
    own stream. Returns (gain of the baseline, per-learner true gains).
    """
    gains = np.asarray(gains, dtype=float)
    T, n = gains.shape
    m = len(specs)
    eta_split = eta * math.sqrt(m)
    learners = [build_learner(s, n) for s in specs]
    streams = [noisy_stream(gains, eta_split, master_seed, f"{stream_id}/learner{i}") for i in range(m)]
    est = eta_split * round_rng(master_seed, 0, f"{stream_id}/select").standard_normal(m)
    total = 0.0
    learner_gain = np.zeros(m)
    for t in range(1, T + 1):
        X = np.array([f(streams[i][:t]) for i, f in enumerate(learners)])
        j = argmax_tiebreak(est)
        total += X[j] @ gains[t - 1]
        learner_gain += X @ gains[t - 1]
        est = est + np.einsum("in,in->i", X, np.stack([s[t] for s in streams]))
    return float(total), learner_gain


def synthetic_drift_stream(
    n: int, T: int, regime_length: int, seed: int, *, base: float = 0.3, advantage: float = 0.3, jitter: float = 0.2
) -> np.ndarray:
    """Piecewise-stationary gains where the best expert rotates every regime.

    In regime r (rounds r*L .. r*L + L - 1) expert r mod n earns
    base + advantage, the rest earn base; every entry then gets independent
    uniform jitter in [-jitter, jitter], clipped to [0, 1].
    """
    if regime_length < 1 or T < 1 or n < 2:
        raise InvalidInputError("need regime_length >= 1, T >= 1, n >= 2")
    rng = round_rng(seed, 0, "synthetic-drift")
    g = np.full((T, n), base)
    leader = (np.arange(T) // regime_length) % n
    g[np.arange(T), leader] += advantage
    g += rng.uniform(-jitter, jitter, size=(T, n))
    return np.clip(g, 0.0, 1.0)


# --------------------------------------------------------------------------
# evaluation table


@dataclass
class EvalResult:
    levels: list  # privacy levels (inf allowed)
    columns: list  # algorithm names
    gains: dict  # (level, column) -> per-run total gains
    runs: int
    z: float  # Bonferroni-corrected normal quantile
    config: dict = field(default_factory=dict)

    def mean(self, level, col) -> float:
        return float(np.mean(self.gains[(level, col)]))

    def half_width(self, level, col) -> float:
        g = np.asarray(self.gains[(level, col)], dtype=float)
        if g.size < 2:
            return 0.0
        return float(self.z * g.std(ddof=1) / math.sqrt(g.size))

    def se(self, level, col) -> float:
        g = np.asarray(self.gains[(level, col)], dtype=float)
        return float(g.std(ddof=1) / math.sqrt(g.size)) if g.size > 1 else 0.0

    def rows(self):
        for lv in self.levels:
            row = {"mu": _fmt_level(lv)}
            for c in self.columns:
                row[c] = self.mean(lv, c)
                row[c + "_ci"] = self.half_width(lv, c)
            yield row

    def to_csv(self, path) -> None:
        header = ["mu"] + [x for c in self.columns for x in (c, c + "_ci")]
        with open(Path(path), "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=header, lineterminator="\n")
            w.writeheader()
            for row in self.rows():
                w.writerow({k: (v if isinstance(v, str) else repr(v)) for k, v in row.items()})

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "config": self.config,
            "runs": self.runs,
            "bonferroni_z": self.z,
            "table": list(self.rows()),
            "raw_gains": {
                _fmt_level(lv): {c: np.asarray(self.gains[(lv, c)]).tolist() for c in self.columns}
                for lv in self.levels
            },
        }


def _fmt_level(lv) -> str:
    return "inf" if math.isinf(lv) else repr(float(lv))


def run_eval(
    gains: np.ndarray,
    privacy_levels=(math.inf, 1.0, 0.5, 0.25),
    specs=None,
    runs: int = 100,
    *,
    sensitivity=1.0,
    master_seed: int = 0,
    include_naive: bool = True,
    confidence: float = 0.95,
) -> EvalResult:
    """Mean total gain of RW-Meta, every learner, the naive split and the
    best static expert, with Bonferroni-corrected normal CIs.

    ``sensitivity`` may be a scalar or a per-round array; the noise scale is
    the uniform max(sensitivity) / mu. ``mu = inf`` means no noise.
    """
    gains = np.asarray(gains, dtype=float)
    T, n = gains.shape
    specs = default_specs() if specs is None else list(specs)
    levels = [float(lv) for lv in privacy_levels]
    if any(not lv > 0 for lv in levels):
        raise InvalidInputError("privacy levels must be positive (inf allowed)")
    if runs < 1:
        raise InvalidInputError("runs must be >= 1")
    delta = float(np.max(sensitivity))
    names = [build_learner(s, n).id for s in specs]
    columns = ["rw_meta"] + names + (["naive_split"] if include_naive and len(specs) > 1 else []) + ["best_static"]
    best_static = float(gains.sum(axis=0).max())
    out = {}
    for lv in levels:
        eta = 0.0 if math.isinf(lv) else delta / lv
        cols = {c: [] for c in columns}
        for r in range(runs):
            sid = f"eval/mu={_fmt_level(lv)}/run{r}"
            noisy = np.vstack([np.zeros((1, n)), gains]) if eta == 0 else noisy_stream(gains, eta, master_seed, sid)
            learners = [build_learner(s, n) for s in specs]
            res = run_meta(noisy, learners, eta, master_seed, f"{sid}/meta")
            cols["rw_meta"].append(float(np.einsum("tn,tn->", res.actions, gains)))
            lg = np.einsum("tmn,tn->m", res.predictions, gains)
            for name, g in zip(names, lg):
                cols[name].append(float(g))
            if "naive_split" in cols:
                if eta == 0:
                    total, _ = _naive_noiseless(gains, specs)
                else:
                    total, _ = run_naive_split(gains, specs, eta, master_seed, f"{sid}/naive")
                cols["naive_split"].append(total)
            cols["best_static"].append(best_static)
        for c in columns:
            out[(lv, c)] = np.array(cols[c])
    k = len(levels) * len(columns)
    z = float(stats.norm.ppf(1 - (1 - confidence) / (2 * k)))
    cfg = {
        "T": T, "n": n, "runs": runs, "levels": [_fmt_level(lv) for lv in levels],
        "sensitivity_max": delta, "master_seed": master_seed,
        "learners": [s.__dict__ for s in specs],
    }
    return EvalResult(levels, columns, out, runs, z, cfg)


def _naive_noiseless(gains, specs):
    # without noise the budget split costs nothing: follow the leading learner
    T, n = gains.shape
    learners = [build_learner(s, n) for s in specs]
    hist = np.vstack([np.zeros((1, n)), gains])
    est = np.zeros(len(specs))
    total = 0.0
    lg = np.zeros(len(specs))
    for t in range(1, T + 1):
        X = np.array([f(hist[:t]) for f in learners])
        total += X[argmax_tiebreak(est)] @ gains[t - 1]
        lg += X @ gains[t - 1]
        est = est + X @ gains[t - 1]
    return float(total), lg


def write_eval_json(path, result: EvalResult) -> None:
    Path(path).write_text(json.dumps(result.to_dict(), indent=1) + "\n", encoding="utf-8")
