import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adhesion import model
from adhesion.errors import OutOfRange, WrongRegime
from adhesion.model import FluxParams, classify, inverse_branch, rho, sigma, thresholds

from oracles import mp_inverse, mp_thresholds, sign_scan_variant

P = FluxParams(0.75, 0.9)

# frozen from tests/oracles.py (mpmath, 40 digits)
S0_MINUS = 0.5064979510986385680
S0_PLUS = 0.9749835303828429135
RHO_S0_MINUS = 0.2093952134988662789
RHO_S0_PLUS = 0.1746925779963326237
S_MINUS_R1 = 0.2722551614565363953
S_MINUS_R2 = 0.2731798594278766839


def test_params_validated():
    with pytest.raises(ValueError):
        FluxParams(1.2, 0.5)
    with pytest.raises(ValueError):
        FluxParams(0.5, -0.1)


def test_sigma_values():
    assert sigma(FluxParams(0.3, 0.7), 0.0) == 1.0
    assert sigma(FluxParams(0.75, 1.0), 2.0 / 3.0) == pytest.approx(0.0, abs=1e-15)
    # 3 * 0.675 * 0.25 - 3 * 0.5 + 1 by hand
    assert sigma(P, 0.5) == pytest.approx(0.00625, abs=1e-15)


def test_rho_values():
    assert rho(P, 0.0) == 0.0
    assert rho(P, 1.0) == pytest.approx(0.175, abs=1e-15)


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0.01, 0.99))
def test_rho_derivative_is_sigma(a, b, s):
    p = FluxParams(a, b)
    h = 1e-5
    fd = (rho(p, s + h) - rho(p, s - h)) / (2 * h)
    assert fd == pytest.approx(sigma(p, s), abs=1e-8)


@pytest.mark.parametrize("ab, variant", [
    ((0.5, 1.0), "F"),
    ((1.0, 1.0), "FDBD"),
    ((0.75, 0.9), "FDBDF"),
    ((0.75, 1.0), "FDF"),
    ((0.0, 0.5), "F"),
    ((0.4, 0.5), "FD"),        # alpha = 1/(4 - 3 beta) with sigma(1) = 0
    ((0.9, 0.5), "FDB"),
])
def test_classify_examples(ab, variant):
    assert classify(FluxParams(*ab)).variant == variant


def test_classify_fdbd_degenerate_points():
    ec = classify(FluxParams(1.0, 1.0))
    assert ec.degenerate_points == pytest.approx((1 / 3, 1.0), abs=1e-14)


def test_fdbdf_structure():
    ec = classify(P)
    assert len(ec.backward_intervals) == 1
    lo, hi = ec.backward_intervals[0]
    assert 0 < lo < hi < 1
    assert (lo, hi) == pytest.approx((S0_MINUS, S0_PLUS), abs=1e-15)


def test_boundary_formulas_for_example():
    assert 0.75 * 0.9 == pytest.approx(0.675)
    assert 1 / (4 - 3 * 0.9) == pytest.approx(0.769230769230769)


def test_classifier_agrees_with_sign_scan():
    rng = np.random.default_rng(2024)
    ab = rng.uniform(0, 1, size=(10_000, 2))
    t0 = time.perf_counter()
    got = [classify(FluxParams(a, b)).variant for a, b in ab]
    elapsed = time.perf_counter() - t0
    want = [sign_scan_variant(a, b) for a, b in ab]
    assert elapsed < 5.0
    assert got == want


def test_intervals_partition_by_sign():
    rng = np.random.default_rng(7)
    for a, b in rng.uniform(0, 1, size=(200, 2)):
        p = FluxParams(a, b)
        ec = classify(p)
        for lo, hi in ec.forward_intervals:
            s = np.linspace(lo, hi, 51)[1:-1]
            assert np.all(sigma(p, s) > -1e-12)
        for lo, hi in ec.backward_intervals:
            s = np.linspace(lo, hi, 51)[1:-1]
            assert np.all(sigma(p, s) < 1e-12)


def test_thresholds_against_mpmath():
    th = thresholds(P)
    ref = mp_thresholds(0.75, 0.9)
    assert th.s0_minus == pytest.approx(float(ref["s0_minus"]), abs=1e-15)
    assert th.s0_plus == pytest.approx(float(ref["s0_plus"]), abs=1e-15)
    assert th.s0_minus == pytest.approx(S0_MINUS, abs=1e-15)
    assert th.s0_plus == pytest.approx(S0_PLUS, abs=1e-15)
    assert th.rho_at_s0_plus == pytest.approx(RHO_S0_PLUS, abs=1e-15)
    assert float(rho(P, th.s0_minus)) == pytest.approx(RHO_S0_MINUS, abs=1e-15)
    assert th.r_star == pytest.approx(0.175, abs=1e-15)
    assert th.s2_plus == 1.0
    assert th.rho_at_s0_plus < th.r_star
    assert model.check_chain(th)


def test_thresholds_with_levels():
    th = thresholds(P, RHO_S0_PLUS, 0.175)
    assert th.S_m > 0 and th.d0 > 0 and th.S_M >= th.S_m
    # d0 = s+(r1) - s-(r2)
    assert th.d0 == pytest.approx(S0_PLUS - S_MINUS_R2, abs=1e-12)


def test_thresholds_wrong_regime():
    with pytest.raises(WrongRegime):
        thresholds(FluxParams(0.5, 1.0))


def test_inverse_branch_examples():
    th = thresholds(P)
    assert inverse_branch(P, th.rho_at_s0_plus, "plus") == pytest.approx(th.s0_plus, abs=1e-12)
    assert inverse_branch(P, th.r_star, "plus") == pytest.approx(1.0, abs=1e-12)
    assert inverse_branch(P, th.rho_at_s0_plus, "minus") == pytest.approx(S_MINUS_R1, abs=1e-13)
    assert inverse_branch(P, 0.175, "minus") == pytest.approx(S_MINUS_R2, abs=1e-13)
    with pytest.raises(OutOfRange):
        inverse_branch(P, 0.2, "plus")


def test_inverse_branch_against_mpmath():
    rng = np.random.default_rng(3)
    for r in rng.uniform(RHO_S0_PLUS, 0.175, 10):
        for br in ("minus", "plus"):
            assert inverse_branch(P, r, br) == pytest.approx(float(mp_inverse(0.75, 0.9, r, br)),
                                                             abs=1e-12)


def test_roundtrip_100_levels():
    rng = np.random.default_rng(11)
    r = rng.uniform(RHO_S0_PLUS, 0.175, 100)
    for br in ("minus", "plus"):
        s = inverse_branch(P, r, br)
        assert np.max(np.abs(rho(P, s) - r)) < 1e-12


def test_inverse_branch_monotone():
    r = np.linspace(RHO_S0_PLUS, 0.175, 1000)
    assert np.all(np.diff(inverse_branch(P, r, "plus")) >= 0)
    assert np.all(np.diff(inverse_branch(P, r, "minus")) >= 0)


fdbdf = st.tuples(st.floats(0.67, 1.0), st.floats(0.0, 1.0)).map(
    lambda bf: (bf[0], 0.75 * bf[0] + bf[1] * (1 / (4 - 3 * bf[0]) - 0.75 * bf[0]))
).filter(lambda ba: 0.75 * ba[0] + 1e-6 < ba[1] < 1 / (4 - 3 * ba[0]) - 1e-6)


@settings(max_examples=60, deadline=None)
@given(fdbdf)
def test_fdbdf_invariants(ba):
    b, a = ba
    p = FluxParams(a, b)
    assert classify(p).variant == "FDBDF"
    th = thresholds(p)
    assert model.check_chain(th)
    assert th.rho_at_s0_plus < th.r_star
    assert th.s2_minus == th.s0_minus or th.s2_plus == 1.0
    s = np.linspace(1e-6, 1.0, 100_001)
    assert np.min(rho(p, s)) > 0
