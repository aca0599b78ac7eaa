"""RW-FTPL: follow the leader of a Gaussian random walk over noisy gains."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import InvalidInputError, NoisyGainVector, RoundSeed, argmax_tiebreak, gaussian_perturb


@dataclass(frozen=True)
class FtplState:
    """Running perturbed estimate: the round-0 draw plus every noisy gain so far."""

    estimate: np.ndarray
    t: int = 0

    def to_dict(self) -> dict:
        return {"estimate": self.estimate.tolist(), "t": self.t}

    @classmethod
    def from_dict(cls, d: dict) -> "FtplState":
        return cls(np.array(d["estimate"], dtype=float), int(d["t"]))


def ftpl_init(n: int, eta: float, seed: RoundSeed) -> FtplState:
    if n < 2:
        raise InvalidInputError("need at least two experts")
    z0 = gaussian_perturb(np.zeros(n), eta, seed)
    return FtplState(np.array(z0.values), 0)


def ftpl_step(state: FtplState, g_noisy: NoisyGainVector) -> tuple[int, FtplState]:
    """Play the current leader, then absorb this round's noisy gain."""
    if g_noisy.n != state.estimate.size:
        raise InvalidInputError(
            f"noisy gain has {g_noisy.n} entries, state has {state.estimate.size}"
        )
    action = argmax_tiebreak(state.estimate)
    return action, FtplState(state.estimate + g_noisy.values, state.t + 1)


def ftpl_regret_bound(eta: float, T: int, n: int) -> float:
    """Expected static regret bound (eta + 2/eta) * sqrt(2 T ln n)."""
    if T < 1 or n < 2 or not eta > 0:
        raise InvalidInputError("need T >= 1, n >= 2, eta > 0")
    return (eta + 2.0 / eta) * math.sqrt(2.0 * T * math.log(n))


def run_ftpl(noisy: np.ndarray, eta: float) -> np.ndarray:
    """Action sequence of RW-FTPL on a pre-drawn noisy stream.

    ``noisy`` has shape (T + 1, n); row 0 is the initial perturbation and row
    t the noisy gain of round t.
    """
    noisy = np.asarray(noisy, dtype=float)
    state = FtplState(noisy[0].copy(), 0)
    actions = np.empty(noisy.shape[0] - 1, dtype=int)
    for t in range(1, noisy.shape[0]):
        actions[t - 1], state = ftpl_step(state, NoisyGainVector(noisy[t], eta))
    return actions
