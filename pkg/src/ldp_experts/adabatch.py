"""RW-AdaBatch: RW-FTPL that absorbs noisy gains in adaptively sized batches.

Batch sizes come from a random-walk stability bound: after each flush the
algorithm picks the longest delay over which the probability that the leader
changes stays below ``alpha * sqrt(log n / (t + B))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import optimize, special
from scipy.interpolate import PchipInterpolator

from .core import (
    InvalidInputError,
    NoisyGainVector,
    NumericalError,
    RoundSeed,
    argmax_tiebreak,
    gap,
    gaussian_perturb,
)
from .rwftpl import ftpl_regret_bound

_SQRT2 = math.sqrt(2.0)
_LOG_2SQRTPI = math.log(2.0 * math.sqrt(math.pi))
_LOG_SQRT2PI = 0.5 * math.log(2.0 * math.pi)
# beyond this the bound is below the smallest subnormal double
_BETA_TAIL = 38.0


def _norm_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / _SQRT2)


def bound_from_beta(beta: float) -> float:
    """min(1, 2 Phi(-sqrt2 b) + 2 sqrt(pi) phi(b) [Phi(b) - Phi(-b)]), 1 for b <= 0."""
    if beta <= 0.0:
        return 1.0
    if beta > _BETA_TAIL:
        return 0.0
    phi = math.exp(-0.5 * beta * beta - _LOG_SQRT2PI)
    val = 2.0 * _norm_cdf(-_SQRT2 * beta) + 2.0 * math.sqrt(math.pi) * phi * math.erf(beta / _SQRT2)
    return min(1.0, val)


def log_bound_from_beta(beta):
    """Natural log of :func:`bound_from_beta`, accurate far into the tail.

    Accepts scalars or arrays; returns 0 wherever beta <= 0.
    """
    b = np.asarray(beta, dtype=float)
    pos = b > 0
    bp = np.where(pos, b, 1.0)
    first = math.log(2.0) + special.log_ndtr(-_SQRT2 * bp)
    second = _LOG_2SQRTPI - 0.5 * bp * bp - _LOG_SQRT2PI + np.log(special.erf(bp / _SQRT2))
    out = np.where(pos, np.minimum(np.logaddexp(first, second), 0.0), 0.0)
    return float(out) if out.ndim == 0 else out


def _log_bound_scalar(beta: float) -> float:
    if beta <= 0.0:
        return 0.0
    first = math.log(2.0) + special.log_ndtr(-_SQRT2 * beta)
    second = _LOG_2SQRTPI - 0.5 * beta * beta - _LOG_SQRT2PI + math.log(math.erf(beta / _SQRT2))
    hi, lo = (first, second) if first > second else (second, first)
    return min(0.0, hi + math.log1p(math.exp(lo - hi)))


@dataclass(frozen=True)
class StabilityQuery:
    """Inputs of the leader-stability bound for a Gaussian walk of B steps.

    k is the current gap, kappa the residual gap we must not dip below.
    """

    k: float
    kappa: float
    eta: float
    B: int
    n: int

    def __post_init__(self):
        vals = (self.k, self.kappa, self.eta, self.B, self.n)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidInputError("stability query fields must be finite")
        if self.k < 0 or self.kappa < 0 or self.eta <= 0 or self.B < 1 or self.n < 2:
            raise InvalidInputError(f"invalid stability query {self}")
        if int(self.B) != self.B:
            raise InvalidInputError("walk length B must be an integer")

    @property
    def expected_max(self) -> float:
        """eta * sqrt(2 B log(2n - 2)): bound on the challengers' expected excursion."""
        return self.eta * math.sqrt(2.0 * self.B * math.log(2 * self.n - 2))

    @property
    def beta(self) -> float:
        return (self.k - self.kappa) / (self.eta * math.sqrt(2.0 * self.B)) - math.sqrt(
            math.log(2 * self.n - 2)
        )


def stability_bound(q: StabilityQuery) -> float:
    """Upper bound on P(leader changes within B steps) for a walk started at gap k.

    With ``kappa > 0`` it bounds the probability that a gap of k ever dips
    below kappa instead.
    """
    return bound_from_beta(q.beta)


def _delay_objective(B: float, k: float, eta: float, n: int, alpha: float, t: int) -> float:
    """log(U1 + U2 U3) - log(delta_t(B)); increasing in B, feasible where <= 0."""
    E = math.sqrt(math.log(2 * n - 2))
    beta = (k - B) / (eta * math.sqrt(2.0 * B)) - E
    log_delta = math.log(alpha) + 0.5 * (math.log(math.log(n)) - math.log(t + B))
    return _log_bound_scalar(beta) - log_delta


def delay_objective(B: float, k: float, eta: float, n: int, alpha: float, t: int) -> float:
    """Raw ComputeDelay residual U1(B) + U2(B) U3(B) - delta_t(B).

    The worst-case shrink of the deterministic gap (at most 1 per round for
    gains in [0, 1]) enters through k - B.
    """
    E = math.sqrt(math.log(2 * n - 2))
    a = (B - k) / (eta * math.sqrt(B))
    c = (k - B) / (eta * math.sqrt(2.0 * B)) - E
    u1 = 2.0 * _norm_cdf(a + _SQRT2 * E)
    u2 = 2.0 * math.sqrt(math.pi) * math.exp(-0.5 * c * c - _LOG_SQRT2PI)
    u3 = _norm_cdf(c) - _norm_cdf(-c)
    return u1 + u2 * u3 - alpha * math.sqrt(math.log(n) / (t + B))


def _check_delay_args(k, eta, n, alpha, t):
    if not (k >= 0 and math.isfinite(k)):
        raise InvalidInputError(f"gap must be finite and >= 0, got {k}")
    if not eta > 0 or not alpha > 0 or t < 1 or n < 2:
        raise InvalidInputError("need eta > 0, alpha > 0, t >= 1, n >= 2")


def compute_delay(
    k: float, eta: float, n: int, alpha: float, t: int, *, xtol: float = 1e-9
) -> int:
    """Largest delay B whose stability bound stays under alpha * sqrt(log n / (t + B)).

    Brent's method on the log of the ComputeDelay condition, bracketed on
    [1, t + 1e6]; returns 0 when even B = 1 is infeasible.
    """
    _check_delay_args(k, eta, n, alpha, t)
    if _delay_objective(1.0, k, eta, n, alpha, t) > 0.0:
        return 0
    cap = float(t) + 1e6
    if _delay_objective(cap, k, eta, n, alpha, t) <= 0.0:
        return int(cap)
    try:
        root, info = optimize.brentq(
            _delay_objective, 1.0, cap, args=(k, eta, n, alpha, t),
            xtol=xtol, rtol=1e-9, maxiter=200, full_output=True, disp=False,
        )
    except (RuntimeError, ValueError) as exc:
        raise NumericalError(
            "ComputeDelay root finder failed", k=k, eta=eta, n=n, alpha=alpha, t=t, error=str(exc)
        ) from exc
    if not info.converged:
        raise NumericalError(
            "ComputeDelay root finder did not converge",
            k=k, eta=eta, n=n, alpha=alpha, t=t, iterations=info.iterations, last=root,
        )
    return max(0, int(math.floor(root)))


class BoundInverse:
    """Monotone cubic (PCHIP) inverse of the stability bound as a function of beta.

    Knots are exact (beta, log bound) pairs; queries map a target failure
    probability to the smallest beta that achieves it.
    """

    def __init__(self, eta: float, n: int, alpha: float, n_knots: int = 4000, beta_max: float = 40.0):
        if not eta > 0 or not alpha > 0 or n < 2:
            raise InvalidInputError("need eta > 0, alpha > 0, n >= 2")
        self.eta, self.n, self.alpha = float(eta), int(n), float(alpha)
        # denser near 0 where the bound bends
        u = np.linspace(0.0, 1.0, n_knots)
        self.knots_beta = beta_max * u**2
        self.knots_log_bound = log_bound_from_beta(self.knots_beta)
        self.knots_log_bound[0] = 0.0
        # interpolate beta against -log(bound), which increases strictly
        self._interp = PchipInterpolator(-self.knots_log_bound, self.knots_beta, extrapolate=True)
        self._E = math.sqrt(math.log(2 * n - 2))

    def beta_for_log(self, log_p):
        """Smallest beta whose bound is <= exp(log_p)."""
        x = -np.minimum(np.asarray(log_p, dtype=float), 0.0)
        out = self._interp(x)
        return float(out) if np.ndim(out) == 0 else out

    def __call__(self, p):
        """Smallest beta with bound <= p (p a probability in (0, 1])."""
        return self.beta_for_log(np.log(p))

    def compute_delay(self, k: float, t: int) -> int:
        """Spline-accelerated counterpart of :func:`compute_delay`."""
        eta, n, alpha = self.eta, self.n, self.alpha
        _check_delay_args(k, eta, n, alpha, t)
        half_log_log_n = 0.5 * math.log(math.log(n))
        log_alpha = math.log(alpha)

        def h(B):
            beta = (k - B) / (eta * math.sqrt(2.0 * B)) - self._E
            need = self.beta_for_log(log_alpha + half_log_log_n - 0.5 * math.log(t + B))
            return need - beta

        if h(1.0) > 0.0:
            return 0
        cap = float(t) + 1e6
        if h(cap) <= 0.0:
            return int(cap)
        root = optimize.brentq(h, 1.0, cap, xtol=1e-9, rtol=1e-9, maxiter=200)
        return max(0, int(math.floor(root)))


def build_bound_inverse(eta: float, n: int, alpha: float) -> BoundInverse:
    return BoundInverse(eta, n, alpha)


@dataclass(frozen=True)
class BatchRecord:
    start: int
    size: int


@dataclass(frozen=True)
class AdaBatchState:
    """RW-AdaBatch state.

    ``estimate`` holds only flushed data; ``buffer`` the noisy gains received
    since the last flush. A flush happens on the round where ``delay`` is 0.
    """

    estimate: np.ndarray
    buffer: tuple = ()
    delay: int = 0
    t: int = 0
    alpha: float = 0.01
    eta: float = 1.0
    inverse: BoundInverse | None = None

    def to_dict(self) -> dict:
        return {
            "estimate": self.estimate.tolist(),
            "buffer": [b.tolist() for b in self.buffer],
            "delay": self.delay,
            "t": self.t,
            "alpha": self.alpha,
            "eta": self.eta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AdaBatchState":
        return cls(
            np.array(d["estimate"], dtype=float),
            tuple(np.array(b, dtype=float) for b in d["buffer"]),
            int(d["delay"]), int(d["t"]), float(d["alpha"]), float(d["eta"]),
        )


def adabatch_init(
    n: int, eta: float, alpha: float, seed: RoundSeed, *, accelerate: bool = False
) -> AdaBatchState:
    if n < 2:
        raise InvalidInputError("need at least two experts")
    if not alpha > 0:
        raise InvalidInputError("alpha must be positive")
    z0 = gaussian_perturb(np.zeros(n), eta, seed)
    inverse = build_bound_inverse(eta, n, alpha) if accelerate else None
    return AdaBatchState(np.array(z0.values), (), 0, 0, float(alpha), float(eta), inverse)


def _exact_sum(vectors) -> np.ndarray:
    # correctly rounded per coordinate, so the result ignores buffer order
    stacked = np.asarray(vectors)
    return np.array([math.fsum(col) for col in stacked.T])


def adabatch_step(
    state: AdaBatchState, g_noisy: NoisyGainVector
) -> tuple[int, AdaBatchState, BatchRecord | None]:
    """One round: play the leader of the flushed estimate, buffer the new gain,
    and flush if the delay has run out."""
    n = state.estimate.size
    if g_noisy.n != n:
        raise InvalidInputError(f"noisy gain has {g_noisy.n} entries, state has {n}")
    action = argmax_tiebreak(state.estimate)
    t = state.t + 1
    buffer = state.buffer + (g_noisy.values,)
    if state.delay > 0:
        return action, replace(state, buffer=buffer, delay=state.delay - 1, t=t), None
    estimate = state.estimate + _exact_sum(buffer)
    k = gap(estimate)
    if state.inverse is not None:
        delay = state.inverse.compute_delay(k, t)
    else:
        delay = compute_delay(k, state.eta, n, state.alpha, t)
    record = BatchRecord(start=t - len(buffer) + 1, size=len(buffer))
    return action, replace(state, estimate=estimate, buffer=(), delay=delay, t=t), record


def adabatch_regret_bound(eta: float, T: int, n: int, alpha: float) -> float:
    """(1 + alpha/2) times the RW-FTPL bound."""
    if not alpha > 0:
        raise InvalidInputError("alpha must be positive")
    return (1.0 + alpha / 2.0) * ftpl_regret_bound(eta, T, n)


@dataclass
class AdaBatchRun:
    actions: np.ndarray
    delays: np.ndarray  # delay remaining after each round
    flushes: np.ndarray  # bool per round
    batches: list  # BatchRecord per flush
    pending: int  # rounds still buffered at the end
    scheduled_size: np.ndarray  # size of the batch each round belongs to

    def log_records(self):
        for i, a in enumerate(self.actions):
            yield {
                "round": i + 1,
                "action": int(a),
                "delay_remaining": int(self.delays[i]),
                "flush": bool(self.flushes[i]),
                "batch_size_if_flush": int(self._flush_size[i]) if self.flushes[i] else None,
            }

    @property
    def _flush_size(self):
        out = np.zeros(len(self.actions), dtype=int)
        for rec in self.batches:
            out[rec.start + rec.size - 2] = rec.size
        return out


def run_adabatch(
    noisy: np.ndarray, eta: float, alpha: float, *, accelerate: bool = False
) -> AdaBatchRun:
    """Replay RW-AdaBatch over a pre-drawn (T + 1, n) noisy stream (row 0 = initial draw).

    Besides the actions, records the size of the batch that contains every
    round. A batch's size is fixed by the delay chosen at the flush that opens
    it, so rounds in the trailing, not-yet-flushed batch get their scheduled
    size.
    """
    noisy = np.asarray(noisy, dtype=float)
    T, n = noisy.shape[0] - 1, noisy.shape[1]
    inverse = build_bound_inverse(eta, n, alpha) if accelerate else None
    state = AdaBatchState(noisy[0].copy(), (), 0, 0, float(alpha), float(eta), inverse)
    actions = np.empty(T, dtype=int)
    delays = np.empty(T, dtype=int)
    flushes = np.zeros(T, dtype=bool)
    sizes = np.empty(T, dtype=int)
    batches = []
    current = 1  # the first batch is round 1 alone (initial delay 0)
    for t in range(1, T + 1):
        sizes[t - 1] = current
        actions[t - 1], state, rec = adabatch_step(state, NoisyGainVector(noisy[t], eta))
        delays[t - 1] = state.delay
        if rec is not None:
            flushes[t - 1] = True
            batches.append(rec)
            current = state.delay + 1
    return AdaBatchRun(actions, delays, flushes, batches, len(state.buffer), sizes)
