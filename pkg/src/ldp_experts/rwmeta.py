"""RW-Meta: private selection among data-dependent learners.

All learners read the same noisy gain history. Their estimated cumulative
gains are correlated Gaussians; the decorrelation step tops that noise up to
a scaled identity so the selection behaves like RW-FTPL over learners.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import InvalidInputError, NoisyGainVector, NumericalError, RoundSeed, argmax_tiebreak

logger = logging.getLogger(__name__)


class Learner:
    """Deterministic map from a noisy gain history to a point on the simplex.

    Subclasses implement ``predict(history)`` where ``history`` is a
    (t, n) array of noisy gains, row 0 being the round-0 perturbation.
    """

    id: str = "learner"

    def predict(self, history: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, history: np.ndarray) -> np.ndarray:
        return self.predict(history)

    def __repr__(self):
        return f"{type(self).__name__}({self.id!r})"


class FunctionLearner(Learner):
    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], id: str = "fn"):
        self.fn = fn
        self.id = id

    def predict(self, history):
        return np.asarray(self.fn(history), dtype=float)


class ConstantVertexLearner(Learner):
    """Always plays expert ``index``."""

    def __init__(self, index: int, n: int):
        self.index, self.n = int(index), int(n)
        self.id = f"vertex{index}"

    def predict(self, history):
        x = np.zeros(self.n)
        x[self.index] = 1.0
        return x


class FtplLearner(Learner):
    """RW-FTPL wrapped as a learner: the leader of the summed noisy history.

    Row 0 of the history is the initial perturbation, so this reproduces
    RW-FTPL exactly. Keeps a running sum because histories only grow.
    """

    id = "rw-ftpl"

    def __init__(self):
        self._len = 0
        self._sum = None

    def predict(self, history):
        history = np.asarray(history)
        t, n = history.shape
        if self._sum is None or self._sum.size != n or t < self._len:
            self._sum, self._len = np.zeros(n), 0
        for row in history[self._len:t]:
            self._sum = self._sum + row
        self._len = t
        x = np.zeros(n)
        x[argmax_tiebreak(self._sum)] = 1.0
        return x


@dataclass(frozen=True)
class MetaState:
    learner_estimate: np.ndarray
    sigma_mat: np.ndarray
    warm_eigvec: np.ndarray
    t: int = 0


def meta_init(m: int, eta: float, seed: RoundSeed) -> MetaState:
    if m < 1:
        raise InvalidInputError("need at least one learner")
    est = eta * seed.rng().standard_normal(m)
    warm = np.ones(m) / math.sqrt(m)
    return MetaState(est, (eta**2) * np.eye(m), warm, 0)


def _check_symmetric(mat: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise InvalidInputError("expected a square matrix")
    scale = max(1.0, float(np.max(np.abs(mat)))) if mat.size else 1.0
    if np.max(np.abs(mat - mat.T), initial=0.0) > tol * scale:
        raise InvalidInputError("matrix is not symmetric")
    return mat


def decorrelate(sigma_mat: np.ndarray) -> np.ndarray:
    """Remove the all-ones component: S - (1'S1 / m^2) 11'."""
    s = _check_symmetric(sigma_mat)
    m = s.shape[0]
    return s - (s.sum() / m**2) * np.ones((m, m))


def _sign_normalize(v: np.ndarray) -> np.ndarray:
    nz = np.flatnonzero(np.abs(v) > 1e-10 * np.max(np.abs(v)))
    if nz.size and v[nz[0]] < 0:
        v = -v
    return v


def leading_eigenvalue(
    mat: np.ndarray, warm: np.ndarray | None = None, *, max_iter: int = 1000, tol: float = 1e-10
) -> tuple[float, np.ndarray]:
    """Largest (algebraic) eigenvalue of a symmetric matrix and its unit eigenvector.

    Lanczos with full reorthogonalisation, started from ``warm`` (the
    previous round's eigenvector) and restarted from the current Ritz vector
    when the Krylov space fills up. Converged when the Ritz residual is below
    ``tol * ||A||_F``. ``max_iter`` caps the total number of mat-vecs.
    """
    a = _check_symmetric(mat)
    m = a.shape[0]
    if m == 1:
        return float(a[0, 0]), np.ones(1)
    scale = float(np.linalg.norm(a))
    if scale == 0.0:
        v = np.zeros(m)
        v[0] = 1.0
        return 0.0, v
    x = np.ones(m) if warm is None else np.asarray(warm, dtype=float).copy()
    if x.shape != (m,) or not np.any(x):
        x = np.ones(m)
    # nudge so a start orthogonal to the top eigenspace still gets there
    x = x / np.linalg.norm(x) + 1e-6 * np.cos(np.arange(1, m + 1))
    x /= np.linalg.norm(x)
    matvecs = 0
    resid = np.inf
    while matvecs < max_iter:
        basis = np.empty((m, m))
        diag = np.zeros(m)
        off = np.zeros(m)
        basis[:, 0] = x
        for j in range(m):
            w = a @ basis[:, j]
            matvecs += 1
            diag[j] = basis[:, j] @ w
            q = basis[:, : j + 1]
            w -= q @ (q.T @ w)
            w -= q @ (q.T @ w)
            beta = math.sqrt(w @ w)
            last = j == m - 1 or beta <= 1e-14 * scale or matvecs >= max_iter
            # Ritz check every third step keeps the small eigensolves cheap
            if last or (j >= 1 and (j + 1) % 3 == 0):
                tri = np.diag(diag[: j + 1]) + np.diag(off[:j], 1) + np.diag(off[:j], -1)
                evals, evecs = np.linalg.eigh(tri)
                theta, s = float(evals[-1]), evecs[:, -1]
                resid = beta * abs(s[-1])
                if resid <= tol * scale or last:
                    break
            basis[:, j + 1] = w / beta
            off[j] = beta
        x = basis[:, : j + 1] @ s
        x /= np.linalg.norm(x)
        if resid <= tol * scale:
            return theta, _sign_normalize(x)
        if beta <= 1e-14 * scale:
            # invariant subspace found; verify directly
            resid = float(np.linalg.norm(a @ x - theta * x))
            if resid <= tol * scale:
                return theta, _sign_normalize(x)
    raise NumericalError("eigensolver hit the iteration cap", residual=resid, iterations=matvecs)


def _draw(lam: np.ndarray, vecs: np.ndarray, z: np.ndarray) -> np.ndarray:
    return vecs @ (np.sqrt(np.clip(lam, 0.0, None)) * z)


def sample_correlated(cov: np.ndarray, seed: RoundSeed) -> np.ndarray:
    """Draw from N(0, cov) using a symmetric eigen-factorisation."""
    c = _check_symmetric(cov, tol=1e-10)
    m = c.shape[0]
    z = seed.rng().standard_normal(m)
    if not np.any(c):
        return np.zeros(m)
    lam, vecs = np.linalg.eigh(c)
    floor = -1e-8 * max(float(np.trace(c)), 0.0) / m
    if lam.min() < floor:
        raise NumericalError("covariance has a negative eigenvalue", min_eigenvalue=float(lam.min()))
    return _draw(lam, vecs, z)


@dataclass(frozen=True)
class MetaStepInfo:
    chosen: int
    action: np.ndarray
    sigma_sq: float
    lambda_max: float
    min_cov_eig: float
    predictions: np.ndarray


def meta_step(
    state: MetaState,
    learners: Sequence[Callable[[np.ndarray], np.ndarray]],
    history: np.ndarray,
    g_noisy: NoisyGainVector,
    eta: float,
    seed: RoundSeed,
) -> tuple[int, np.ndarray, MetaState, MetaStepInfo]:
    """One RW-Meta round.

    ``history`` holds noisy gains of rounds 0..t-1 (row 0 is the round-0
    perturbation); ``g_noisy`` is this round's noisy gain, absorbed after
    the choice is made. ``seed`` drives the decorrelating perturbation.
    """
    if not isinstance(g_noisy, NoisyGainVector):
        raise InvalidInputError("RW-Meta only consumes NoisyGainVector data")
    m = state.learner_estimate.size
    if len(learners) != m:
        raise InvalidInputError(f"{len(learners)} learners for a state of size {m}")
    t = state.t + 1

    sigma_star = decorrelate(state.sigma_mat)
    try:
        lam, vec = leading_eigenvalue(sigma_star, state.warm_eigvec)
    except NumericalError as exc:
        logger.warning("iterative eigensolver failed (%s); using dense eigensolver", exc.diagnostics)
        evals, evecs = np.linalg.eigh(sigma_star)
        lam, vec = float(evals[-1]), _sign_normalize(evecs[:, -1])
    sigma_sq = max(2.0 * t, lam)
    cov = sigma_sq * np.eye(m) - sigma_star
    cov = 0.5 * (cov + cov.T)
    # one factorisation serves both the PSD check and the draw
    cov_eig, cov_vecs = np.linalg.eigh(cov)
    min_eig = float(cov_eig[0])
    if min_eig < -1e-8 * sigma_sq:
        raise NumericalError(
            "sigma^2 I - Sigma* is not positive semidefinite", min_eigenvalue=min_eig, sigma_sq=sigma_sq
        )
    y = _draw(cov_eig, cov_vecs, seed.rng().standard_normal(m))
    chosen = argmax_tiebreak(state.learner_estimate + y)

    n = g_noisy.n
    X = np.empty((m, n))
    for i, f in enumerate(learners):
        x = np.asarray(f(history), dtype=float)
        if x.shape != (n,):
            name = getattr(f, "id", repr(f))
            raise InvalidInputError(f"learner {name!r} returned shape {x.shape}, expected ({n},)")
        X[i] = x
    bad = (X.min(axis=1) < -1e-9) | (np.abs(X.sum(axis=1) - 1.0) > 1e-9) | ~np.all(np.isfinite(X), axis=1)
    if bad.any():
        i = int(np.argmax(bad))
        name = getattr(learners[i], "id", repr(learners[i]))
        raise InvalidInputError(f"learner {name!r} returned a point off the simplex: {X[i]}")
    action = X[chosen].copy()
    nxt = MetaState(
        state.learner_estimate + X @ g_noisy.values,
        state.sigma_mat + (eta**2) * (X @ X.T),
        vec,
        t,
    )
    return chosen, action, nxt, MetaStepInfo(chosen, action, sigma_sq, lam, min_eig, X)


def meta_regret_bound(sigma_star_T: np.ndarray, eta: float, T: int, m: int) -> float:
    """[max(sqrt2, eta * sqrt(lambda_max(S*/(eta^2 T)))) + sqrt2] * sqrt(2 T ln m)."""
    if T < 1 or m < 2:
        raise InvalidInputError("need T >= 1 and m >= 2")
    if eta > 0:
        lam = float(np.linalg.eigvalsh(np.asarray(sigma_star_T) / (eta**2 * T))[-1])
        spread = eta * math.sqrt(max(lam, 0.0))
    else:
        spread = 0.0
    return (max(math.sqrt(2.0), spread) + math.sqrt(2.0)) * math.sqrt(2.0 * T * math.log(m))


@dataclass
class MetaRun:
    chosen: np.ndarray
    actions: np.ndarray  # (T, n) played simplex points
    predictions: np.ndarray  # (T, m, n) every learner's suggestion
    sigma_sq: np.ndarray
    lambda_max: np.ndarray
    min_cov_eig: np.ndarray
    final: MetaState

    def log_records(self):
        for i in range(len(self.chosen)):
            yield {
                "round": i + 1,
                "chosen_learner": int(self.chosen[i]),
                "sigma_sq": float(self.sigma_sq[i]),
                "lambda_max": float(self.lambda_max[i]),
                "action_vector": self.actions[i].tolist(),
            }


def run_meta(
    noisy: np.ndarray,
    learners: Sequence[Learner],
    eta: float,
    master_seed: int,
    stream_id: str = "meta",
    etas: Sequence[float] | None = None,
) -> MetaRun:
    """Replay RW-Meta over a pre-drawn (T + 1, n) noisy stream.

    ``etas`` optionally gives a per-round noise scale (index t for round t)
    used in the covariance update; by default ``eta`` throughout.
    """
    noisy = np.asarray(noisy, dtype=float)
    T, n = noisy.shape[0] - 1, noisy.shape[1]
    m = len(learners)
    state = meta_init(m, eta, RoundSeed(master_seed, 0, stream_id + "/init"))
    chosen = np.empty(T, dtype=int)
    actions = np.empty((T, n))
    preds = np.empty((T, m, n))
    sig = np.empty(T)
    lam = np.empty(T)
    mins = np.empty(T)
    for t in range(1, T + 1):
        eta_t = eta if etas is None else etas[t]
        j, x, state, info = meta_step(
            state, learners, noisy[:t], NoisyGainVector(noisy[t], eta_t), eta_t,
            RoundSeed(master_seed, t, stream_id + "/y"),
        )
        chosen[t - 1], actions[t - 1], preds[t - 1] = j, x, info.predictions
        sig[t - 1], lam[t - 1], mins[t - 1] = info.sigma_sq, info.lambda_max, info.min_cov_eig
    return MetaRun(chosen, actions, preds, sig, lam, mins, state)
