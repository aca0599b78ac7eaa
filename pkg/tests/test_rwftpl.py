import math

import numpy as np
import pytest

from ldp_experts.core import InvalidInputError, NoisyGainVector, RoundSeed, noisy_stream, static_regret
from ldp_experts.rwftpl import FtplState, ftpl_init, ftpl_regret_bound, ftpl_step, run_ftpl


def test_init_tiny_eta_is_zero():
    s = ftpl_init(4, 1e-12, RoundSeed(0, 0))
    assert np.allclose(s.estimate, 0, atol=1e-9) and s.t == 0


def test_init_deterministic():
    a = ftpl_init(4, 1.0, RoundSeed(3, 0))
    b = ftpl_init(4, 1.0, RoundSeed(3, 0))
    assert np.array_equal(a.estimate, b.estimate)


def test_init_variance():
    x = np.array([ftpl_init(2, 2.0, RoundSeed(9, r)).estimate[0] for r in range(100_000)])
    # sd of the sample variance is 4 * sqrt(2 / 1e5) ~ 0.018
    assert abs(x.var() - 4.0) < 0.1


def test_init_rejects_single_expert():
    with pytest.raises(InvalidInputError):
        ftpl_init(1, 1.0, RoundSeed(0, 0))


def test_step_examples():
    a, nxt = ftpl_step(FtplState(np.array([0.0, 10.0])), NoisyGainVector(np.array([5.0, -3.0]), 1.0))
    assert a == 1 and np.array_equal(nxt.estimate, [5.0, 7.0]) and nxt.t == 1
    s = FtplState(np.array([1.0, 2.0]))
    _, nxt = ftpl_step(s, NoisyGainVector(np.zeros(2), 1.0))
    assert np.array_equal(nxt.estimate, s.estimate)
    s = FtplState(np.zeros(2))
    a1, s = ftpl_step(s, NoisyGainVector(np.array([1.0, 0.0]), 1.0))
    a2, s = ftpl_step(s, NoisyGainVector(np.array([0.0, 1.0]), 1.0))
    assert (a1, a2) == (0, 0)


def test_step_dimension_mismatch():
    with pytest.raises(InvalidInputError):
        ftpl_step(FtplState(np.zeros(2)), NoisyGainVector(np.zeros(3), 1.0))


def test_regret_bound_examples():
    assert ftpl_regret_bound(math.sqrt(2), 1, math.e) == pytest.approx(4.0)
    assert ftpl_regret_bound(5, 10_000, 25) == pytest.approx(5.4 * math.sqrt(2e4 * math.log(25)))
    etas = np.linspace(0.5, 4, 701)
    vals = [ftpl_regret_bound(e, 100, 5) for e in etas]
    assert etas[int(np.argmin(vals))] == pytest.approx(math.sqrt(2), abs=0.01)


def test_state_roundtrip():
    s = FtplState(np.array([0.5, -1.25]), 7)
    r = FtplState.from_dict(s.to_dict())
    assert np.array_equal(r.estimate, s.estimate) and r.t == 7


def test_determinism_and_scale_invariance():
    rng = np.random.default_rng(0)
    g = rng.random((300, 4))
    noisy = noisy_stream(g, 1.0, 42)
    a = run_ftpl(noisy, 1.0)
    assert np.array_equal(a, run_ftpl(noisy_stream(g, 1.0, 42), 1.0))
    assert np.array_equal(a, run_ftpl(noisy * 8.0, 8.0))


def test_regret_within_bound_on_alternating_stream():
    T, runs, eta = 500, 200, math.sqrt(2)
    g = np.zeros((T, 2))
    g[0::2, 0] = 1
    g[1::2, 1] = 1
    r = np.array([static_regret(g, run_ftpl(noisy_stream(g, eta, 0, f"run{i}"), eta)) for i in range(runs)])
    assert r.mean() <= ftpl_regret_bound(eta, T, 2) + 3 * r.std(ddof=1) / math.sqrt(runs)
