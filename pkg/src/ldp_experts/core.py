"""Shared types, seeded randomness and the Gaussian local mechanism."""

from __future__ import annotations

import functools
import hashlib
import math
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class InvalidInputError(ValueError):
    """Raised when caller-supplied data violates an operation's contract."""


class NumericalError(RuntimeError):
    """Raised when an internal numerical routine fails (non-convergence etc.).

    Attributes:
      diagnostics: dict with whatever the failing routine could report.
    """

    def __init__(self, message: str, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class GainVector:
    """True per-round gains, one entry per expert, each in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size < 2:
            raise InvalidInputError("gain vector needs at least 2 experts")
        if not np.all(np.isfinite(v)) or v.min() < 0.0 or v.max() > 1.0:
            raise InvalidInputError("gain entries must lie in [0, 1]")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class NoisyGainVector:
    """A gain vector after local Gaussian perturbation.

    This is the only view of the data the learning algorithms are allowed to
    consume.
    """

    values: np.ndarray
    noise_scale: float

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1:
            raise InvalidInputError("noisy gain vector must be one-dimensional")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class PrivacyParams:
    mu: float
    sensitivity: float
    eta: float
    n: int | None = None

    def __post_init__(self):
        if self.mu <= 0 or self.sensitivity <= 0 or self.eta <= 0:
            raise InvalidInputError("mu, sensitivity and eta must be positive")
        # small slack so that eta = sensitivity / mu round-trips
        if self.eta * (1 + 1e-12) < self.sensitivity / self.mu:
            raise InvalidInputError(
                f"eta={self.eta} is below sensitivity/mu={self.sensitivity / self.mu}"
            )
        if self.n is not None and self.sensitivity > math.sqrt(self.n) * (1 + 1e-12):
            raise InvalidInputError("sensitivity cannot exceed sqrt(n) for gains in [0,1]^n")

    @property
    def local_gdp(self) -> float:
        """GDP level actually delivered by noise of scale eta."""
        return self.sensitivity / self.eta


@dataclass(frozen=True)
class RoundSeed:
    """Coordinates of one round's randomness: (master_seed, round, stream_id)."""

    master_seed: int
    round: int
    stream_id: str = "gains"

    def rng(self) -> np.random.Generator:
        return round_rng(self.master_seed, self.round, self.stream_id)


@functools.lru_cache(maxsize=4096)
def _stream_key(master_seed: int, stream_id: str) -> tuple[int, int]:
    digest = hashlib.sha256(stream_id.encode("utf-8")).digest()
    words = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]
    ss = np.random.SeedSequence([master_seed & 0xFFFFFFFFFFFFFFFF, *words])
    k0, k1 = ss.generate_state(2, dtype=np.uint64)
    return int(k0), int(k1)


class _PhiloxPool:
    """One Philox generator per key, repositioned by counter for each round."""

    def __init__(self):
        self._gens: dict[tuple[int, int], tuple[np.random.Philox, np.random.Generator]] = {}

    def get(self, key: tuple[int, int], counter: int) -> np.random.Generator:
        entry = self._gens.get(key)
        if entry is None:
            if len(self._gens) > 4096:
                self._gens.clear()
            bg = np.random.Philox(key=np.array(key, dtype=np.uint64))
            entry = (bg, np.random.Generator(bg))
            self._gens[key] = entry
        bg, gen = entry
        bg.state = {
            "bit_generator": "Philox",
            "state": {
                "counter": np.array([0, 0, counter & 0xFFFFFFFFFFFFFFFF, 0], dtype=np.uint64),
                "key": np.array(key, dtype=np.uint64),
            },
            "buffer": np.zeros(4, dtype=np.uint64),
            "buffer_pos": 4,
            "has_uint32": 0,
            "uinteger": 0,
        }
        return gen


_LOCAL = threading.local()


def round_rng(master_seed: int, round_index: int, stream_id: str) -> np.random.Generator:
    """Counter-based generator for one (master_seed, round, stream_id) triple.

    The returned generator is reused (per thread) and repositioned on every
    call, so draw from it before asking for another round.
    """
    pool = getattr(_LOCAL, "pool", None)
    if pool is None:
        pool = _LOCAL.pool = _PhiloxPool()
    return pool.get(_stream_key(int(master_seed), str(stream_id)), int(round_index))


def argmax_tiebreak(v) -> int:
    """Index of the largest entry, lowest index on ties."""
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        raise InvalidInputError("argmax of an empty array")
    # np.argmax already returns the first occurrence of the maximum
    return int(np.argmax(v))


def gap(v) -> float:
    """Largest entry minus second-largest entry."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size < 2:
        raise InvalidInputError("gap needs at least two entries")
    top2 = np.partition(v, v.size - 2)[-2:]
    return float(top2[1] - top2[0])


def gaussian_perturb(g, eta: float, seed: RoundSeed) -> NoisyGainVector:
    """Add i.i.d. N(0, eta^2) noise to every coordinate of ``g``.

    ``g`` may be a GainVector or a plain array (the round-0 perturbation is
    drawn as the perturbation of an all-zero vector).
    """
    if not eta > 0:
        raise InvalidInputError(f"eta must be positive, got {eta}")
    values = g.values if isinstance(g, GainVector) else np.asarray(g, dtype=float)
    z = seed.rng().standard_normal(values.size)
    return NoisyGainVector(values + eta * z, float(eta))


def default_eta(mu: float, sensitivity: float, worst_case: bool = False) -> float:
    """Noise scale delivering mu-GDP for the given sensitivity.

    With ``worst_case`` the scale is raised to sqrt(2), which minimises the
    worst-case regret bound of RW-FTPL and RW-AdaBatch.
    """
    if not mu > 0 or not sensitivity > 0:
        raise InvalidInputError("mu and sensitivity must be positive")
    eta = sensitivity / mu
    return max(math.sqrt(2.0), eta) if worst_case else eta


def read_gain_csv(path) -> np.ndarray:
    """Load a headerless gain-stream CSV into a (T, n) array.

    Every row must hold the same number of comma-separated reals in [0, 1].
    """
    rows = []
    width = None
    with open(Path(path), encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = [float(x) for x in line.split(",")]
            except ValueError as exc:
                raise InvalidInputError(f"{path}:{lineno}: unparsable value ({exc})") from None
            if width is None:
                width = len(row)
                if width < 2:
                    raise InvalidInputError(f"{path}:{lineno}: need at least 2 experts")
            elif len(row) != width:
                raise InvalidInputError(
                    f"{path}:{lineno}: ragged row, expected {width} values, got {len(row)}"
                )
            if any(not (0.0 <= x <= 1.0) for x in row):
                raise InvalidInputError(f"{path}:{lineno}: gain outside [0, 1]")
            rows.append(row)
    if not rows:
        raise InvalidInputError(f"{path}: empty gain stream")
    return np.array(rows, dtype=float)


def write_gain_csv(path, gains: np.ndarray) -> None:
    gains = np.asarray(gains, dtype=float)
    with open(Path(path), "w", encoding="utf-8", newline="\n") as fh:
        for row in gains:
            fh.write(",".join(repr(float(x)) for x in row) + "\n")


def static_regret(gains: np.ndarray, actions) -> float:
    """Best single expert's total gain minus the gain of the played vertices."""
    gains = np.asarray(gains, dtype=float)
    actions = np.asarray(actions, dtype=int)
    earned = gains[np.arange(len(actions)), actions].sum()
    return float(gains[: len(actions)].sum(axis=0).max() - earned)


def noisy_stream(gains: np.ndarray, eta: float, master_seed: int, stream_id: str = "gains") -> np.ndarray:
    """Locally perturb a whole (T, n) gain stream.

    Returns a (T + 1, n) array: row 0 is the initial perturbation (the noisy
    version of an all-zero round 0) and row t is the noisy gain of round t.
    """
    gains = np.asarray(gains, dtype=float)
    T, n = gains.shape
    out = np.empty((T + 1, n))
    out[0] = gaussian_perturb(np.zeros(n), eta, RoundSeed(master_seed, 0, stream_id)).values
    for t in range(1, T + 1):
        out[t] = gains[t - 1] + eta * round_rng(master_seed, t, stream_id).standard_normal(n)
    return out
