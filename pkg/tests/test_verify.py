import json

import numpy as np
import pytest

from adhesion import model, pde, verify
from adhesion.errors import GridMismatch, WindowOutside


class Combo:
    """a f + b g as a test function (duck-typed)."""

    def __init__(self, a, f, b, g):
        self.a, self.f, self.b, self.g = a, f, b, g

    def phi(self, x, t):
        return self.a * self.f.phi(x, t) + self.b * self.g.phi(x, t)

    def phi_t(self, x, t):
        return self.a * self.f.phi_t(x, t) + self.b * self.g.phi_t(x, t)

    def phi_xx(self, x, t):
        return self.a * self.f.phi_xx(x, t) + self.b * self.g.phi_xx(x, t)


FWD = model.FluxParams(0.5, 1.0)


def forward_field(Nx, Nt, T=0.1):
    g = pde.Grid(1.0, Nx, T / Nt, T)
    sf = pde.solve_star(FWD, None, pde.initial_density(0.8, FWD, g), g)
    return verify.GridField(sf.u_star, g.x, sf.times), sf


def test_bank_admissible():
    bank = verify.test_bank(0.25)
    assert len(bank) == 12
    x = np.linspace(0, 1, 101)
    for f in bank:
        assert np.all(f.phi(np.array([0.0, 1.0]), 0.1) == 0)
        assert np.max(np.abs(f.phi(x, 0.25))) < 1e-30
        assert np.max(np.abs(f.phi(x, 0.0))) > 0


def test_test_function_derivatives():
    f = verify.TestFunction(0.4, 0.3, 0.5, "cos4")
    x, t, h = 0.47, 0.2, 1e-5
    ft = (f.phi(x, t + h) - f.phi(x, t - h)) / (2 * h)
    fxx = (f.phi(x + h, t) - 2 * f.phi(x, t) + f.phi(x - h, t)) / h ** 2
    assert f.phi_t(x, t) == pytest.approx(ft, rel=1e-6)
    assert f.phi_xx(x, t) == pytest.approx(fxx, rel=1e-4)


def test_zero_residual():
    x = np.linspace(0, 1, 33)
    t = np.linspace(0, 0.1, 11)
    F = verify.GridField(np.zeros((11, 33)), x, t)
    for f in verify.test_bank(0.1):
        assert verify.weak_residual(F, FWD, np.zeros(33), f) == 0.0


def test_residual_linear():
    F, sf = forward_field(65, 200)
    bank = verify.test_bank(0.1)
    rng = np.random.default_rng(0)
    for _ in range(5):
        i, j = rng.choice(12, 2, replace=False)
        a, b = rng.normal(size=2)
        lhs = verify.weak_residual(F, FWD, sf.u_star[0], [Combo(a, bank[i], b, bank[j])])[0]
        rhs = a * verify.weak_residual(F, FWD, sf.u_star[0], bank[i]) + \
            b * verify.weak_residual(F, FWD, sf.u_star[0], bank[j])
        assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-15)


def test_forward_residual_converges():
    res = []
    for Nx, Nt in ((33, 100), (65, 400), (129, 1600)):
        F, sf = forward_field(Nx, Nt)
        res.append(np.max(np.abs(verify.weak_residual(F, FWD, sf.u_star[0],
                                                      verify.test_bank(0.1)))))
    assert res[0] > res[1] > res[2]
    # second order in dx with dt ~ dx^2
    assert res[1] / res[2] > 3.0


def test_stage_correction_against_diamond_quadrature(quick_run):
    star, p = quick_run.star, quick_run.config.params
    tfs = verify.test_bank(quick_run.sf.times[-1])[:3]
    B = quick_run.stages[0].blocks
    D = B.take(np.argsort(B.nu)[-3:])
    got = verify.stage_correction(D, star, p, tfs)
    n = 600
    s = (np.arange(n) + 0.5) / n
    a, b = np.meshgrid(s, s)
    X, T = (a - b).ravel(), (a + b - 1).ravel()
    want = np.zeros(3)
    for k in range(len(D)):
        x = D.xc[k] + X * D.nu[k] * D.delta[k]
        t = D.tc[k] + T * D.nu[k]
        c = D.take(np.array([k])).evaluate(x, t)["phi_x"]
        u = star.u(x, t)
        jac = 2 * D.nu[k] ** 2 * D.delta[k] / n ** 2
        for j, f in enumerate(tfs):
            val = (model.rho(p, u + c) - model.rho(p, u)) * f.phi_xx(x, t) + c * f.phi_t(x, t)
            want[j] += np.sum(val) * jac
    np.testing.assert_allclose(got, want, rtol=1e-3)


def test_residual_table_matches_weak_residual(quick_run):
    tfs = verify.test_bank(quick_run.sf.times[-1])[:4]
    p = quick_run.config.params
    tab = verify.residual_table(quick_run.star, quick_run.state, p, tfs)
    assert tab.shape == (3, 4)
    F = verify.ConstructedField(quick_run.state, quick_run.star)
    direct = verify.weak_residual(F, p, quick_run.sf.u_star[0], tfs)
    np.testing.assert_allclose(tab[-1], direct, rtol=1e-12)


def test_mass_compare():
    g = pde.Grid(1.0, 33, 0.01, 0.1)
    u = np.random.default_rng(0).uniform(size=(11, 33))
    assert np.all(verify.mass_compare(u, u, g) == 0)
    with pytest.raises(GridMismatch):
        verify.mass_compare(u, u[:, :-1], g)


def test_oscillation_probe():
    smooth = lambda x, t: 0.1 * np.sin(x) * np.exp(-t)  # noqa: E731
    osc = verify.oscillation_probe(smooth, [(0.2, 0.3, 0.0, 0.1)], domain=(1.0, 1.0))
    assert osc[0] < 0.02
    with pytest.raises(WindowOutside):
        verify.oscillation_probe(smooth, [(0.9, 1.1, 0.0, 0.1)], domain=(1.0, 1.0))


def test_oscillation_on_stage_one_diamonds(quick_run):
    b = quick_run.stages[0].blocks
    F = verify.ConstructedField(quick_run.stages[0], quick_run.star)
    sel = np.arange(0, len(b), max(1, len(b) // 50))
    wins = [verify.DiamondWindow(b.xc[k], b.tc[k], b.nu[k], b.delta[k]) for k in sel]
    osc = verify.oscillation_probe(F, wins, n=32)
    assert np.all(osc >= (b.tp + b.tm)[sel] * (1 - 1e-9) - 0.05)
    target = (1 - 2 * quick_run.schedule.lam_p(1)) * quick_run.wall.S_m
    assert osc.min() >= target


def test_cutoff():
    c = verify.CutoffFn(0.8)
    assert c(0.0) == 1.0 and c(0.2) == 1.0 and c(0.4) == 0.0 and c(3.0) == 0.0
    d = np.linspace(0, 0.5, 5001)
    v = c(d)
    assert np.all(np.diff(v) <= 0) and v.min() >= 0 and v.max() <= 1
    # C2 at the plateau ends
    h = 1e-6
    for e in (0.2, 0.4):
        assert abs(c(e + h) - c(e)) < 1e-12


def test_zeta_far_from_walls(quick_run):
    wall = quick_run.wall
    c = verify.CutoffFn(wall.d0)
    r = np.linspace(wall.r1, wall.r2, 9)
    # each wall is at least d0 from the opposite one
    assert np.all(wall.dist_K(wall.omega1(r), r, "+") >= wall.d0 / 2)
    assert np.all(c.zeta(wall, wall.omega1(r), r, "+") == 0)
    assert np.all(c.zeta(wall, wall.omega2(r), r, "-") == 0)
    assert np.all(c.zeta(wall, wall.omega2(r), r, "+") == 1.0)
    assert np.all(c.zeta(wall, wall.omega1(r), r, "-") == 1.0)


def test_zeta_one_on_previous_shells(quick_run):
    sch, wall = quick_run.schedule, quick_run.wall
    c = verify.CutoffFn(wall.d0)
    i = sch.i0
    lam_k, lam_n = sch.lam(i - 1), sch.lam(i)
    lo, hi = wall.band(lam_n)
    r = np.linspace(lo, hi, 50)[1:-1]
    w1, w2 = wall.omega1(r), wall.omega2(r)
    for f in np.linspace(0.01, 0.99, 9):
        sp = (lam_k * w1 + (1 - lam_k) * w2) * (1 - f) + (lam_n * w1 + (1 - lam_n) * w2) * f
        sm = ((1 - lam_n) * w1 + lam_n * w2) * (1 - f) + ((1 - lam_k) * w1 + lam_k * w2) * f
        assert np.all(c.zeta(wall, sp, r, "+") == 1.0)
        assert np.all(c.zeta(wall, sm, r, "-") == 1.0)


def test_inclusion_distance_on_wall(quick_run):
    wall = quick_run.wall
    r = np.linspace(wall.r1, wall.r2, 20)
    assert np.max(wall.dist_to_K(wall.omega1(r), r)) < 1e-9
    assert np.max(wall.dist_to_K(wall.omega2(r), r)) < 1e-9


def test_report_json():
    rep = verify.VerificationReport()
    rep.add("a", 1.0, 2.0, True)
    rep.add("b", 3.0, 2.0, False, hard=False)
    rep.data["arr"] = np.arange(3)
    d = json.loads(rep.to_json())
    assert d["passed"] is True and d["data"]["arr"] == [0, 1, 2]
    assert all("tolerance" in c for c in d["checks"])
    assert "warn" in rep.summary()
