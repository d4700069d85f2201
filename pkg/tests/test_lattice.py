import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from adhesion.errors import IndexOutOfRange, NonFiniteState, StabilityViolation
from adhesion.lattice import (LatticeState, convergence_study, integrate, rhs, stable_dt,
                              transition_rates)
from adhesion.model import FluxParams

from oracles import heat_matrix, heat_series

FWD = FluxParams(0.5, 1.0)


def state(u, n=3, L=1.0):
    return LatticeState(n, L, np.asarray(u, dtype=float))


def test_state_validation():
    with pytest.raises(ValueError):
        LatticeState(1, 1.0, np.zeros(3))
    with pytest.raises(ValueError):
        LatticeState(3, 1.0, np.zeros(8))
    s = state(np.zeros(9))
    assert s.h == 1 / 8
    with pytest.raises(ValueError):
        s.densities[0] = 1.0


def test_rates_examples():
    s = state(np.zeros(9))
    h2 = s.h ** 2
    assert transition_rates(s, FluxParams(0.3, 0.6), 4) == pytest.approx((1 / h2, 1 / h2))
    s = state(np.ones(9))
    assert transition_rates(s, FluxParams(1.0, 1.0), 4) == (0.0, 0.0)
    u = np.zeros(9)
    u[5] = 0.5
    tp, tm = transition_rates(state(u), FluxParams(1.0, 0.0), 4)
    assert tp == pytest.approx(1 / h2) and tm == pytest.approx(0.5 / h2)
    for i in (0, 8):
        with pytest.raises(IndexOutOfRange):
            transition_rates(s, FWD, i)


@settings(max_examples=100)
@given(arrays(float, 9, elements=st.floats(0, 1)), st.floats(0, 1), st.floats(0, 1),
       st.integers(1, 7))
def test_rate_symmetry(u, a, b, i):
    p = FluxParams(a, b)
    flipped = u[::-1].copy()
    tp, tm = transition_rates(state(u), p, i)
    fp, fm = transition_rates(state(flipped), p, 8 - i)
    assert tp == pytest.approx(fm, rel=1e-14, abs=1e-12)
    assert tm == pytest.approx(fp, rel=1e-14, abs=1e-12)


def test_heat_stencil():
    rng = np.random.default_rng(0)
    u = rng.uniform(0, 1, 17)
    u[0] = u[-1] = 0
    s = state(u, n=4)
    A = heat_matrix(16, s.h)
    np.testing.assert_allclose(rhs(s, FluxParams(0, 0)), A @ u, rtol=0, atol=1e-15 / s.h ** 2)
    # single-site bump
    v = np.zeros(17)
    v[8] = 1.0
    d = rhs(state(v, n=4), FluxParams(0, 0))
    h2 = (1 / 16) ** 2
    assert d[8] == pytest.approx(-2 / h2) and d[7] == d[9] == pytest.approx(1 / h2)
    assert np.count_nonzero(d) == 3


def test_plateau_interior_zero():
    u = np.zeros(33)
    u[4:29] = 0.4
    d = rhs(state(u, n=5), FluxParams(0.7, 0.3))
    assert np.all(np.abs(d[6:27]) < 1e-9)


def test_mass_telescopes():
    rng = np.random.default_rng(1)
    for _ in range(20):
        u = rng.uniform(0, 1, 33)
        u[0] = u[-1] = 0
        p = FluxParams(*rng.uniform(0, 1, 2))
        s = state(u, n=5)
        d = rhs(s, p)
        h2 = s.h ** 2
        # only hops out through the end sites change the total
        tp_last = (1 - p.beta * 0.0) * (1 - p.alpha * u[-3]) / h2
        tm_first = (1 - p.alpha * u[2]) * (1 - p.beta * 0.0) / h2
        out = tm_first * u[1] + tp_last * u[-2]
        assert d.sum() == pytest.approx(-out, rel=1e-12, abs=1e-9)


def test_integrate_t0_and_stability():
    s = LatticeState.from_profile(5, 1.0, 0.8)
    assert integrate(s, FWD, 0.0) == [s]
    with pytest.raises(StabilityViolation):
        integrate(s, FWD, 0.01, dt=2 * stable_dt(5, 1.0))


def test_non_finite():
    u = np.zeros(9)
    u[4] = 1e308
    with pytest.raises(NonFiniteState):
        integrate(state(u), FluxParams(0.5, 0.5), 0.01)


def test_forward_decay_and_bounds():
    s = LatticeState.from_profile(7, 1.0, 0.8)
    traj = integrate(s, FWD, 0.05, n_out=10)
    peaks = [t.densities.max() for t in traj]
    assert np.all(np.diff(peaks) < 0)
    assert all(t.densities.min() >= 0 and t.densities.max() <= 1 for t in traj)
    assert traj[-1].time == pytest.approx(0.05)


def test_heat_against_series():
    s = LatticeState.from_profile(6, 1.0, 0.5)
    last = integrate(s, FluxParams(0, 0), 0.05, n_out=1)[-1]
    ref = heat_series(lambda x: 0.5 * np.sin(np.pi * x) ** 4, 1.0, last.x, 0.05)
    assert np.max(np.abs(last.densities - ref)) < 5e-4


def test_convergence_small():
    cs = convergence_study(FWD, levels=(4, 5, 6), ref_nx=513, ref_dt=2e-5, t_end=0.01)
    assert cs.monotone
