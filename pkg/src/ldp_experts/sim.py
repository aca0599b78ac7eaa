"""Monte Carlo harness: batch-size PMFs, leader-change rates and paired regret runs.

Every run r draws its noise from stream ``run{r}`` of the master seed, so two
algorithms run on the same config see identical noisy gains (paired design)
and any run can be replayed on its own.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .adabatch import StabilityQuery, adabatch_regret_bound, run_adabatch, stability_bound
from .core import InvalidInputError, PrivacyParams, noisy_stream, read_gain_csv, round_rng, static_regret
from .privacy import BatchSizeDistribution, TradeoffCurve, amplified_tradeoff
from .rwftpl import ftpl_regret_bound, run_ftpl

ALGOS = ("ftpl", "adabatch", "meta")


@dataclass(frozen=True)
class McConfig:
    """Parameters of a Monte Carlo study.

    ``stream`` is ``"zero"``, ``"alternating"`` (experts 0 and 1 take turns
    earning 1), ``"synthetic"`` (see :func:`evaluation.synthetic_drift_stream`)
    or a path to a gain CSV. ``eta`` overrides the noise scale derived from
    (mu, sensitivity); ``sensitivity`` defaults to sqrt(n).
    """

    runs: int
    T: int
    n: int
    mu: float = 1.0
    sensitivity: float | None = None
    alpha: float = 0.01
    master_seed: int = 0
    stream: str = "zero"
    eta: float | None = None
    worst_case_eta: bool = False
    regime_length: int = 250
    workers: int = 1

    def __post_init__(self):
        if self.runs < 1 or self.T < 1:
            raise InvalidInputError("need runs >= 1 and T >= 1")
        if self.n < 2:
            raise InvalidInputError("need n >= 2")
        if not self.alpha > 0:
            raise InvalidInputError("alpha must be positive")

    @property
    def delta(self) -> float:
        return math.sqrt(self.n) if self.sensitivity is None else float(self.sensitivity)

    @property
    def resolved_eta(self) -> float:
        if self.eta is not None:
            if not self.eta > 0:
                raise InvalidInputError("eta must be positive")
            return float(self.eta)
        eta = self.delta / self.mu
        return max(math.sqrt(2.0), eta) if self.worst_case_eta else eta

    @property
    def params(self) -> PrivacyParams:
        return PrivacyParams(self.mu, self.delta, self.resolved_eta, self.n)

    def gains(self) -> np.ndarray:
        return load_stream(self.stream, self.T, self.n, self.master_seed, self.regime_length)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["resolved_eta"] = self.resolved_eta
        return d


def load_stream(stream: str, T: int, n: int, seed: int = 0, regime_length: int = 250) -> np.ndarray:
    """Materialise a (T, n) gain stream from a source label or file path."""
    if stream == "zero":
        return np.zeros((T, n))
    if stream == "alternating":
        g = np.zeros((T, n))
        g[0::2, 0] = 1.0
        g[1::2, 1] = 1.0
        return g
    if stream == "synthetic":
        from .evaluation import synthetic_drift_stream

        return synthetic_drift_stream(n, T, regime_length, seed)
    gains = read_gain_csv(stream)
    if gains.shape[0] < T:
        raise InvalidInputError(f"stream {stream} has {gains.shape[0]} rounds, need {T}")
    if gains.shape[1] != n:
        raise InvalidInputError(f"stream {stream} has {gains.shape[1]} experts, config says {n}")
    return gains[:T]


def _shards(runs: int, workers: int) -> list[range]:
    workers = max(1, min(workers, runs))
    edges = np.linspace(0, runs, workers + 1).astype(int)
    return [range(a, b) for a, b in zip(edges[:-1], edges[1:])]


def _map_runs(fn, cfg: McConfig, *extra):
    """Apply fn(cfg, run_range, *extra) over shards; results come back in run order."""
    shards = _shards(cfg.runs, cfg.workers)
    if len(shards) == 1:
        return [fn(cfg, shards[0], *extra)]
    with ProcessPoolExecutor(max_workers=len(shards)) as pool:
        return list(pool.map(fn, [cfg] * len(shards), shards, *[[e] * len(shards) for e in extra]))


# --------------------------------------------------------------------------
# empirical batch-size PMFs


@dataclass
class EmpiricalPmf:
    """Per-round counts of containing-batch sizes over ``runs`` replays."""

    counts: dict  # round -> {batch size: count}
    runs: int
    config: dict = field(default_factory=dict)

    def distribution(self, t: int) -> BatchSizeDistribution:
        if t not in self.counts:
            raise InvalidInputError(f"no data recorded for round {t}")
        return BatchSizeDistribution.from_counts(self.counts[t], f"empirical(t={t})")

    def survival(self, t: int, B_max: int) -> np.ndarray:
        """Empirical P(size > b) for b = 1..B_max."""
        if t not in self.counts:
            raise InvalidInputError(f"no data recorded for round {t}")
        sizes = np.array([int(b) for b in self.counts[t]])
        weights = np.array(list(self.counts[t].values()), dtype=float)
        b = np.arange(1, B_max + 1)
        return (weights[None, :] * (sizes[None, :] > b[:, None])).sum(axis=1) / self.runs

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "runs": self.runs,
            "config": self.config,
            "rounds": {str(t): {str(b): int(k) for b, k in sorted(c.items())} for t, c in sorted(self.counts.items())},
        }

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")


def _pmf_shard(cfg: McConfig, runs: range, rounds):
    gains = cfg.gains()
    eta = cfg.resolved_eta
    counts = {t: Counter() for t in rounds}
    for r in runs:
        noisy = noisy_stream(gains, eta, cfg.master_seed, f"run{r}")
        res = run_adabatch(noisy, eta, cfg.alpha)
        sizes = res.scheduled_size
        for t in rounds:
            counts[t][int(sizes[t - 1])] += 1
    return counts


def mc_batch_pmf(cfg: McConfig, rounds=None) -> EmpiricalPmf:
    """Replay RW-AdaBatch ``cfg.runs`` times and tally containing-batch sizes.

    ``rounds`` restricts which rounds are recorded (default: all of 1..T).
    """
    rounds = list(range(1, cfg.T + 1)) if rounds is None else sorted({int(t) for t in rounds})
    if rounds and (rounds[0] < 1 or rounds[-1] > cfg.T):
        raise InvalidInputError(f"rounds must lie in 1..{cfg.T}")
    total = {t: Counter() for t in rounds}
    for part in _map_runs(_pmf_shard, cfg, rounds):
        for t, c in part.items():
            total[t].update(c)
    return EmpiricalPmf({t: dict(c) for t, c in total.items()}, cfg.runs, cfg.to_dict())


def empirical_tradeoff(pmf: EmpiricalPmf, t: int, mu: float) -> TradeoffCurve:
    return amplified_tradeoff(pmf.distribution(t), mu)


def clopper_pearson(k, n: int, level: float = 0.99):
    """Exact binomial confidence interval for k successes out of n."""
    k = np.asarray(k, dtype=float)
    a = (1.0 - level) / 2.0
    lo = np.where(k > 0, stats.beta.ppf(a, k, n - k + 1), 0.0)
    hi = np.where(k < n, stats.beta.ppf(1 - a, k + 1, n - k), 1.0)
    return lo, hi


# --------------------------------------------------------------------------
# leader changes of a Gaussian walk


@dataclass(frozen=True)
class LeaderChangeEstimate:
    k: float
    changes: int
    runs: int
    ci_low: float
    ci_high: float

    @property
    def p(self) -> float:
        return self.changes / self.runs


def leader_change_maxima(eta: float, B: int, n: int, runs: int, seed: int = 0, chunk: int = 20000) -> np.ndarray:
    """Per-walk max over steps and challengers of (challenger - leader) displacement.

    With the leader starting k above every challenger, the leader changes
    within B steps exactly when this maximum exceeds k.
    """
    if B < 1 or n < 2 or not eta > 0:
        raise InvalidInputError("need B >= 1, n >= 2, eta > 0")
    out = np.empty(runs)
    for c, lo in enumerate(range(0, runs, chunk)):
        size = min(chunk, runs - lo)
        rng = round_rng(seed, c, f"leader-change/{eta!r}/{B}/{n}")
        walk = np.cumsum(eta * rng.standard_normal((size, B, n)), axis=1)
        out[lo:lo + size] = (walk[:, :, 1:] - walk[:, :, :1]).max(axis=(1, 2))
    return out


def mc_leader_change(k, eta: float, B: int, n: int, runs: int, seed: int = 0, level: float = 0.99):
    """Empirical probability that the leader changes within B steps from gap k.

    Start: leader at 0, all n - 1 challengers at -k. ``k`` may be a list, in
    which case the same walks are reused for every gap.
    """
    if runs < 10_000:
        raise InvalidInputError("use at least 10^4 walks")
    ks = np.atleast_1d(np.asarray(k, dtype=float))
    if np.any(ks < 0):
        raise InvalidInputError("gap must be >= 0")
    maxima = leader_change_maxima(eta, B, n, runs, seed)
    hits = (maxima[None, :] > ks[:, None]).sum(axis=1)
    lo, hi = clopper_pearson(hits, runs, level)
    out = [LeaderChangeEstimate(float(kk), int(h), runs, float(a), float(b)) for kk, h, a, b in zip(ks, hits, lo, hi)]
    return out if np.ndim(k) else out[0]


def leader_change_bound(k: float, eta: float, B: int, n: int) -> float:
    return stability_bound(StabilityQuery(float(k), 0.0, float(eta), int(B), int(n)))


# --------------------------------------------------------------------------
# regret experiments


@dataclass
class RegretSummary:
    algo: str
    regrets: np.ndarray  # static regret per run
    bound: float
    extra: dict = field(default_factory=dict)

    @property
    def mean(self) -> float:
        return float(np.mean(self.regrets))

    @property
    def se(self) -> float:
        r = self.regrets
        return float(np.std(r, ddof=1) / math.sqrt(r.size)) if r.size > 1 else 0.0

    def to_dict(self) -> dict:
        d = {
            "algo": self.algo,
            "runs": int(self.regrets.size),
            "mean": self.mean,
            "se": self.se,
            "max": float(np.max(self.regrets)),
            "bound": self.bound,
            "regrets": self.regrets.tolist(),
        }
        for key, val in self.extra.items():
            d[key] = val.tolist() if isinstance(val, np.ndarray) else val
        return d


def _regret_shard(cfg: McConfig, runs: range, algo: str, paired: bool, learner_factory):
    gains = cfg.gains()
    eta = cfg.resolved_eta
    rows = []
    for r in runs:
        sid = f"run{r}" if paired else f"run{r}/{algo}"
        noisy = noisy_stream(gains, eta, cfg.master_seed, sid)
        if algo == "ftpl":
            rows.append((static_regret(gains, run_ftpl(noisy, eta)),))
        elif algo == "adabatch":
            res = run_adabatch(noisy, eta, cfg.alpha)
            rows.append((static_regret(gains, res.actions), len(res.batches)))
        else:
            from .rwmeta import decorrelate, meta_regret_bound, run_meta

            learners = learner_factory(cfg.n)
            res = run_meta(noisy, learners, eta, cfg.master_seed, f"{sid}/meta")
            meta_gain = float(np.einsum("tn,tn->", res.actions, gains))
            learner_gain = np.einsum("tmn,tn->m", res.predictions, gains)
            m = len(learners)
            bound = (
                meta_regret_bound(decorrelate(res.final.sigma_mat), eta, cfg.T, m) if m >= 2 else 0.0
            )
            rows.append((
                float(gains.sum(axis=0).max() - meta_gain),
                float(learner_gain.max() - meta_gain),
                bound,
                meta_gain,
            ))
    return rows


def regret_experiment(algo: str, cfg: McConfig, paired: bool = True, learner_factory=None) -> RegretSummary:
    """Static regret of one algorithm over ``cfg.runs`` seeded runs.

    With ``paired`` every algorithm sees the same noisy stream in run r.
    For ``meta`` the summary also carries the regret against the best
    learner and the per-run value of the RW-Meta bound.
    """
    if algo not in ALGOS:
        raise InvalidInputError(f"unknown algorithm {algo!r}; choose from {ALGOS}")
    if algo == "meta" and learner_factory is None:
        from .evaluation import default_learners

        learner_factory = default_learners
    rows = [row for part in _map_runs(_regret_shard, cfg, algo, paired, learner_factory) for row in part]
    eta = cfg.resolved_eta
    regrets = np.array([row[0] for row in rows])
    if algo == "ftpl":
        return RegretSummary(algo, regrets, ftpl_regret_bound(eta, cfg.T, cfg.n))
    if algo == "adabatch":
        return RegretSummary(
            algo, regrets, adabatch_regret_bound(eta, cfg.T, cfg.n, cfg.alpha),
            {"flushes": np.array([row[1] for row in rows])},
        )
    vs_best = np.array([row[1] for row in rows])
    bounds = np.array([row[2] for row in rows])
    gains = np.array([row[3] for row in rows])
    return RegretSummary(
        algo, regrets, float(bounds.mean()),
        {
            "regret_vs_best_learner": vs_best,
            "regret_vs_best_learner_mean": float(vs_best.mean()),
            "regret_vs_best_learner_se": float(vs_best.std(ddof=1) / math.sqrt(vs_best.size)) if vs_best.size > 1 else 0.0,
            "bound_per_run": bounds,
            "meta_gain": gains,
        },
    )


def write_json(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n", encoding="utf-8")
