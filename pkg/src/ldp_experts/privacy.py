"""f-DP accounting: Gaussian tradeoffs, the gap law, and amplification by batching.

A point that lands in a batch of size b is protected at GDP level mu/sqrt(b).
Given a distribution over containing-batch sizes we mix the per-size
tradeoffs at a shared likelihood-ratio threshold, which lower-bounds the
tradeoff of the whole mechanism.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import integrate, special

from .adabatch import _check_delay_args, log_bound_from_beta
from .core import InvalidInputError, NumericalError

_SQRT2 = math.sqrt(2.0)
N_THRESHOLDS = 2001
DEFAULT_B_MAX = 4096


# --------------------------------------------------------------------------
# tradeoff curves


@dataclass(frozen=True)
class TradeoffCurve:
    """Sampled tradeoff function: false-positive rate -> smallest false-negative rate."""

    alpha: np.ndarray
    beta: np.ndarray
    label: str = ""

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=float)
        b = np.asarray(self.beta, dtype=float)
        if a.shape != b.shape or a.ndim != 1 or a.size < 2:
            raise InvalidInputError("alpha and beta must be 1-D arrays of equal length >= 2")
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "beta", b)

    def check(self, tol: float = 1e-9) -> list[str]:
        """Return the list of violated invariants (empty when the curve is valid)."""
        a, b = self.alpha, self.beta
        problems = []
        if np.any(np.diff(a) <= 0):
            problems.append("alpha not strictly increasing")
        if np.any(np.diff(b) > tol):
            problems.append("beta increases somewhere")
        if a.min() < -tol or a.max() > 1 + tol or b.min() < -tol or b.max() > 1 + tol:
            problems.append("values outside [0, 1]")
        if not is_convex(a, b, tol):
            problems.append("piecewise-linear envelope not convex")
        return problems

    def beta_at(self, alpha) -> np.ndarray:
        """Linear interpolation of the sampled curve; endpoints are held constant."""
        return np.interp(alpha, self.alpha, self.beta)

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["alpha", "beta"])
            for x, y in zip(self.alpha, self.beta):
                w.writerow([repr(float(x)), repr(float(y))])


def is_convex(alpha: np.ndarray, beta: np.ndarray, tol: float = 1e-9) -> bool:
    """Slopes of the piecewise-linear interpolant are nondecreasing.

    Slopes of very short segments are noise-dominated, so a violation must
    exceed ``tol`` in the beta-deviation sense: the middle point may sit at
    most ``tol`` above the chord of its neighbours.
    """
    a = np.asarray(alpha, dtype=float)
    b = np.asarray(beta, dtype=float)
    if a.size < 3:
        return True
    a0, a1, a2 = a[:-2], a[1:-1], a[2:]
    lam = (a1 - a0) / (a2 - a0)
    chord = (1 - lam) * b[:-2] + lam * b[2:]
    return bool(np.all(b[1:-1] <= chord + tol))


def gaussian_beta(alpha, mu: float):
    """Closed form beta(alpha) = Phi(Phi^-1(1 - alpha) - mu)."""
    if mu < 0:
        raise InvalidInputError("mu must be >= 0")
    a = np.asarray(alpha, dtype=float)
    # Phi^-1(1 - a) = -Phi^-1(a) keeps precision for tiny alpha
    return special.ndtr(-special.ndtri(a) - mu)


def _alpha_grid(size: int = N_THRESHOLDS) -> np.ndarray:
    # log-spaced in the low-FPR tail plus a linear body
    tail = np.logspace(-16, -2, size // 2, endpoint=False)
    body = np.linspace(0.01, 1.0, size - size // 2)
    return np.concatenate([[0.0], tail, body[:-1], [1.0]])


def gaussian_tradeoff(mu: float, alpha_grid: np.ndarray | None = None) -> TradeoffCurve:
    """G_mu sampled on ``alpha_grid`` (default: dense grid on [0, 1])."""
    if not mu >= 0:
        raise InvalidInputError("mu must be >= 0")
    a = _alpha_grid() if alpha_grid is None else np.asarray(alpha_grid, dtype=float)
    return TradeoffCurve(a, gaussian_beta(a, mu), f"gaussian(mu={mu:g})")


# --------------------------------------------------------------------------
# gap law


@dataclass(frozen=True)
class GapLawParams:
    """Law of the top-two gap of n i.i.d. N(0, scale^2) coordinates."""

    n: int
    scale: float = 1.0

    def __post_init__(self):
        if self.n < 2 or not self.scale > 0:
            raise InvalidInputError("gap law needs n >= 2 and scale > 0")


def _quad(fn, lo, hi, what):
    val, err = integrate.quad(fn, lo, hi, epsabs=1e-13, epsrel=1e-12, limit=400)
    if not math.isfinite(val) or err > 1e-9:
        raise NumericalError(f"quadrature for {what} did not converge", value=val, error=err)
    return val


def gap_cdf(eps: float, params: GapLawParams) -> float:
    """P(gap <= eps) = 1 - n * int phi(x) Phi(x - e)^(n-1) dx with e = eps/scale."""
    if eps < 0:
        raise InvalidInputError("gap is nonnegative; eps must be >= 0")
    e = eps / params.scale
    n = params.n
    if e == 0.0:
        return 0.0
    # tail of the max: n * int phi(x) Phi(x - e)^(n-1)
    val = _quad(
        lambda x: math.exp(-0.5 * x * x) / math.sqrt(2 * math.pi) * special.ndtr(x - e) ** (n - 1),
        -10.0, 10.0 + e, "gap cdf",
    )
    return min(1.0, max(0.0, 1.0 - n * val))


def gap_pdf(eps: float, params: GapLawParams) -> float:
    """Density of the gap: n(n-1) int phi(x) phi(x - e) Phi(x - e)^(n-2) dx / scale."""
    if eps < 0:
        raise InvalidInputError("gap is nonnegative; eps must be >= 0")
    e = eps / params.scale
    n = params.n
    c = 1.0 / (2 * math.pi)
    val = _quad(
        lambda x: c * math.exp(-0.5 * x * x - 0.5 * (x - e) ** 2) * special.ndtr(x - e) ** (n - 2),
        -10.0, 10.0 + e, "gap pdf",
    )
    return n * (n - 1) * val / params.scale


def gap_pdf_table(n: int, u: np.ndarray, n_x: int = 2401) -> np.ndarray:
    """Unit-scale gap density on an array of gaps by a vectorised trapezoid rule.

    Used inside the proxy construction where thousands of evaluations are
    needed; :func:`gap_pdf` is the reference implementation.
    """
    u = np.asarray(u, dtype=float)
    out = np.empty_like(u)
    log_norm = math.log(n * (n - 1)) - math.log(2 * math.pi)
    for i0 in range(0, u.size, 256):
        uu = u[i0:i0 + 256, None]
        x = np.linspace(-12.0, 12.0, n_x)[None, :] + uu  # shift so x - u spans [-12, 12]
        z = x - uu
        log_f = log_norm - 0.5 * x * x - 0.5 * z * z + (n - 2) * special.log_ndtr(z)
        out[i0:i0 + 256] = integrate.trapezoid(np.exp(log_f), x, axis=1)
    return out


# --------------------------------------------------------------------------
# batch-size distributions


@dataclass(frozen=True)
class BatchSizeDistribution:
    """Probability mass over containing-batch sizes 1..B_max (index b-1)."""

    weights: np.ndarray
    label: str = ""

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or w.size < 1:
            raise InvalidInputError("weights must be a non-empty 1-D array")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise InvalidInputError(f"weights must be nonnegative and sum to 1 (sum={w.sum()!r})")
        object.__setattr__(self, "weights", w)

    @property
    def B_max(self) -> int:
        return self.weights.size

    @classmethod
    def point_mass(cls, b: int, B_max: int | None = None) -> "BatchSizeDistribution":
        if b < 1:
            raise InvalidInputError("batch size must be >= 1")
        w = np.zeros(max(b, B_max or b))
        w[b - 1] = 1.0
        return cls(w, f"point({b})")

    @classmethod
    def from_counts(cls, counts: dict, label: str = "") -> "BatchSizeDistribution":
        sizes = [int(b) for b in counts]
        if not sizes or min(sizes) < 1:
            raise InvalidInputError("counts need batch sizes >= 1")
        w = np.zeros(max(sizes))
        for b, c in counts.items():
            w[int(b) - 1] += c
        total = w.sum()
        if total <= 0:
            raise InvalidInputError("counts sum to zero")
        return cls(_renormalise(w / total), label)

    @classmethod
    def from_survival(cls, surv: np.ndarray, label: str = "") -> "BatchSizeDistribution":
        """Build from S(b) = P(size > b) for b = 1..B_max (mass beyond B_max lands on B_max)."""
        s = np.clip(np.asarray(surv, dtype=float), 0.0, 1.0)
        s = np.maximum.accumulate(s[::-1])[::-1]  # tightest nonincreasing lower envelope
        prev = np.concatenate([[1.0], s[:-1]])
        w = prev - s
        w[-1] += s[-1]
        return cls(_renormalise(w), label)

    def survival(self) -> np.ndarray:
        """S(b) = P(size > b) for b = 1..B_max."""
        return np.clip(1.0 - np.cumsum(self.weights), 0.0, 1.0)

    def to_dict(self) -> dict:
        return {str(b + 1): float(w) for b, w in enumerate(self.weights) if w > 0}

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")


def _renormalise(w: np.ndarray) -> np.ndarray:
    w = np.maximum(w, 0.0)
    w = w / w.sum()
    # push the rounding residue onto the largest entry so the sum is 1 to ~1 ulp
    w[np.argmax(w)] += 1.0 - w.sum()
    return w


# --------------------------------------------------------------------------
# proxy distribution from the stability bound


def batch_threshold(t: int, B, eta: float, n: int, alpha: float, *, k_cap: float = 1e12):
    """Smallest gap kappa at which the next delay exceeds B + 1.

    The delay exceeds B + 1 exactly when B' = B + 2 satisfies the delay
    condition, i.e. when the stability bound at beta((k - B')/(eta sqrt(2B')))
    is below delta_t(B'). That predicate is monotone in k, so kappa is found
    by bisection on k. Returns ``inf`` when kappa would exceed ``k_cap``.
    Accepts scalar or array ``B``.
    """
    _check_delay_args(0.0, eta, n, alpha, t)
    Bs = np.atleast_1d(np.asarray(B, dtype=float))
    if np.any(Bs < 0):
        raise InvalidInputError("B must be >= 0")
    b2 = Bs + 2.0
    E = math.sqrt(math.log(2 * n - 2))
    log_delta = math.log(alpha) + 0.5 * (math.log(math.log(n)) - np.log(t + b2))

    def feasible(k):
        beta = (k - b2) / (eta * np.sqrt(2.0 * b2)) - E
        return log_bound_from_beta(beta) <= log_delta

    lo = np.zeros_like(b2)
    hi = np.full_like(b2, k_cap)
    reachable = feasible(hi)
    zero_ok = feasible(lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        ok = feasible(mid)
        hi = np.where(ok, mid, hi)
        lo = np.where(ok, lo, mid)
        if np.all(hi - lo <= 1e-9 * np.maximum(1.0, hi)):
            break
    kappa = np.where(zero_ok, 0.0, np.where(reachable, hi, np.inf))
    return float(kappa[0]) if np.ndim(B) == 0 else kappa


def proxy_survival(
    t: int, eta: float, n: int, alpha: float, B_max: int = DEFAULT_B_MAX, *, n_u: int = 3000
) -> np.ndarray:
    """Lower bound on P(containing batch of round t has size > b), b = 1..B_max.

    Worst case is all-zero data, so the full noisy sum at the window start
    tau0 = max(1, t - b) has i.i.d. N(0, eta^2 (tau0 + 1)) coordinates. If
    its gap is at least kappa_b + k and then stays above kappa_b for the
    remaining t - 1 - tau0 steps, every flush in the window opens a batch
    longer than b that covers t (and if no flush happens, the batch
    covering t already spans the window). The stay-above probability is
    lower-bounded by one minus the stability bound with residual kappa_b.
    """
    if B_max < 1:
        raise InvalidInputError("B_max must be >= 1")
    _check_delay_args(0.0, eta, n, alpha, t)
    b = np.arange(1, B_max + 1, dtype=float)
    kappa = batch_threshold(t, b - 1.0, eta, n, alpha)
    tau0 = np.maximum(1.0, t - b)
    steps = t - 1.0 - tau0
    sigma = eta * np.sqrt(tau0 + 1.0)
    E = math.sqrt(math.log(2 * n - 2))

    # unit-scale gap law on a grid; gaps beyond 14 sd have negligible mass
    u = np.linspace(0.0, 14.0, n_u)
    pdf = gap_pdf_table(n, u)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (pdf[1:] + pdf[:-1]) * np.diff(u))])
    cdf = np.minimum(cdf / cdf[-1], 1.0)

    surv = np.zeros(B_max)
    finite = np.isfinite(kappa)
    for i in np.nonzero(finite)[0]:
        u0 = kappa[i] / sigma[i]
        if u0 >= u[-1]:
            continue
        if steps[i] <= 0:
            surv[i] = 1.0 - np.interp(u0, u, cdf)
            continue
        uu = np.concatenate([[u0], u[u > u0]])
        ff = np.interp(uu, u, pdf)
        k = sigma[i] * uu - kappa[i]
        beta = k / (eta * math.sqrt(2.0 * steps[i])) - E
        stay = -np.expm1(log_bound_from_beta(beta))
        surv[i] = integrate.trapezoid(ff * stay, uu)
    return np.clip(surv, 0.0, 1.0)


def proxy_batch_distribution(
    t: int, eta: float, n: int, alpha: float, B_max: int = DEFAULT_B_MAX
) -> BatchSizeDistribution:
    """Stochastically smaller stand-in for the containing-batch-size law at round t."""
    surv = proxy_survival(t, eta, n, alpha, B_max)
    return BatchSizeDistribution.from_survival(surv, f"proxy(t={t})")


# --------------------------------------------------------------------------
# amplification by mixing


def _threshold_grid(mu: float, size: int = N_THRESHOLDS) -> np.ndarray:
    # cosine spacing clusters points near 0; the range grows with mu so that
    # both tails reach machine-zero FPR / FNR
    T0 = max(40.0, 40.0 * mu + 0.5 * mu * mu)
    u = np.linspace(-1.0, 1.0, size)
    return T0 * np.sign(u) * (1.0 - np.cos(0.5 * np.pi * u))


def _mixture_ab(w: np.ndarray, sizes: np.ndarray, mu: float, thr: np.ndarray):
    sq = np.sqrt(sizes)[:, None]
    a = special.ndtr(-thr[None, :] * sq / mu - mu / (2 * sq))
    b = special.ndtr(thr[None, :] * sq / mu - mu / (2 * sq))
    return w @ a, w @ b


def _support(dist: BatchSizeDistribution):
    idx = np.nonzero(dist.weights)[0]
    return dist.weights[idx], (idx + 1).astype(float)


def amplified_tradeoff(dist: BatchSizeDistribution, mu: float) -> TradeoffCurve:
    """Mixture tradeoff sum_b w_b * G_{mu/sqrt(b)} at a shared LLR threshold."""
    if not mu > 0:
        raise InvalidInputError("mu must be positive")
    w, sizes = _support(dist)
    thr = _threshold_grid(mu)
    a, b = _mixture_ab(w, sizes, mu, thr)
    # sweep thresholds from high to low so alpha increases
    a, b = a[::-1], b[::-1]
    a = np.concatenate([[0.0], a, [1.0]])
    b = np.concatenate([[1.0], b, [0.0]])
    keep = np.concatenate([[True], np.diff(a) > 0])
    return TradeoffCurve(a[keep], b[keep], f"amplified(mu={mu:g})")


def amplified_beta_at(dist: BatchSizeDistribution, mu: float, alpha) -> np.ndarray:
    """Exact mixture beta at given FPRs: bisection on the shared threshold."""
    if not mu > 0:
        raise InvalidInputError("mu must be positive")
    w, sizes = _support(dist)
    target = np.atleast_1d(np.asarray(alpha, dtype=float))
    T0 = max(60.0, 60.0 * mu + mu * mu)
    lo = np.full(target.shape, -T0)  # alpha(lo) ~ 1
    hi = np.full(target.shape, T0)  # alpha(hi) ~ 0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        a, _ = _mixture_ab(w, sizes, mu, mid)
        above = a > target
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
    _, b = _mixture_ab(w, sizes, mu, hi)
    b = np.where(target <= 0.0, 1.0, np.where(target >= 1.0, 0.0, b))
    return b if np.ndim(alpha) else float(b[0])


def to_approx_dp(dist: BatchSizeDistribution, mu: float, eps) -> np.ndarray:
    """delta(eps) = 1 - e^eps alpha(eps) - beta(eps) for the mixture, in [0, 1]."""
    if not mu > 0:
        raise InvalidInputError("mu must be positive")
    e = np.atleast_1d(np.asarray(eps, dtype=float))
    if np.any(e < 0):
        raise InvalidInputError("eps must be >= 0")
    w, sizes = _support(dist)
    sq = np.sqrt(sizes)[:, None]
    log_p = special.log_ndtr(-e[None, :] * sq / mu + mu / (2 * sq))
    log_q = special.log_ndtr(-e[None, :] * sq / mu - mu / (2 * sq))
    # Phi(a) - e^eps Phi(c) = Phi(a) * (1 - exp(eps + log Phi(c) - log Phi(a)))
    per = np.exp(log_p) * -np.expm1(np.minimum(e[None, :] + log_q - log_p, 0.0))
    delta = np.clip(w @ per, 0.0, 1.0)
    return delta if np.ndim(eps) else float(delta[0])


def gdp_delta(mu: float, eps):
    """Closed-form (eps, delta) dual of a single mu-GDP mechanism."""
    e = np.asarray(eps, dtype=float)
    return special.ndtr(-e / mu + mu / 2) - np.exp(e) * special.ndtr(-e / mu - mu / 2)


def heuristic_amplification(t: float, n: int, alpha: float, gamma: float) -> float:
    """Closed-form guess at the amplification ratio reached at round t.

    r = gamma^2 pi t / (sqrt(2 log(2n-2)) + sqrt(2 log(1/alpha) + log(t / log n)))^2.
    Heuristic only; never used for accounting.
    """
    if t < 2 or n < 2 or not 0 < gamma < 1 or not 0 < alpha < 1:
        raise InvalidInputError("need t >= 2, n >= 2, 0 < gamma < 1, 0 < alpha < 1")
    denom = math.sqrt(2 * math.log(2 * n - 2)) + math.sqrt(
        2 * math.log(1 / alpha) + math.log(t / math.log(n))
    )
    return gamma**2 * math.pi * t / denom**2


def write_dual_csv(path, eps: np.ndarray, delta: np.ndarray) -> None:
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["eps", "delta"])
        for x, y in zip(eps, delta):
            w.writerow([repr(float(x)), repr(float(y))])
