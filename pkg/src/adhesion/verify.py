"""Quantitative checks of constructed and classical solutions.

The weak residual of a density u against a test function f is

    R(u; f) = int int (u f_t + rho(u) f_xx) dx dt + int u0(x) f(x, 0) dx

with the original flux rho. For a constructed solution u = u* + sum of
piecewise-constant diamond slopes, R splits exactly into the grid part
R(u*) and, per stage, integrals over the diamond pieces where the stage
adds a constant c to the density:

    int_P (rho(u_prev + c) - rho(u_prev)) f_xx + c f_t.

The pieces are triangles, integrated with a degree-5 rule.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from itertools import product

import numpy as np

from . import model
from .convex.blocks import R, T1, T2, T3, T4, eval_arrays, max_abs_phi, max_abs_psi
from .convex.geometry import WallGeometry
from .convex.schedule import Schedule
from .convex.surgery import (BlockSet, StageState, StarEval, evaluate_z,
                             gradient_pair, sample_solution)
from .errors import GridMismatch, WindowOutside

# ------------------------------------------------------------ test functions


def _bump(y):
    """exp(-1/(1-y^2)) and its first two derivatives, zero for |y| >= 1."""
    y = np.asarray(y, dtype=float)
    inside = np.abs(y) < 1.0
    q = np.where(inside, 1.0 - y * y, 1.0)
    b = np.where(inside, np.exp(-1.0 / q), 0.0)
    g1 = -2.0 * y / (q * q)
    g2 = -2.0 / (q * q) - 8.0 * y * y / q ** 3
    return b, b * g1, b * (g1 * g1 + g2)


@dataclass(frozen=True)
class TestFunction:
    """Tensor product bump(x) * profile(t), admissible on (0, L) x [0, T]."""
    __test__ = False

    center: float
    width: float
    T: float
    profile: str = "cubic"      # "cubic": (1 - t/T)^3, "cos4": cos(pi t/(2T))^4

    def _time(self, t):
        t = np.asarray(t, dtype=float)
        if self.profile == "cubic":
            s = np.clip(1.0 - t / self.T, 0.0, None)
            return s ** 3, -3.0 * s * s / self.T
        if self.profile == "cos4":
            a = 0.5 * np.pi * np.clip(t / self.T, 0.0, 1.0)
            c, s = np.cos(a), np.sin(a)
            return c ** 4, -4.0 * c ** 3 * s * 0.5 * np.pi / self.T
        raise ValueError(self.profile)

    def phi(self, x, t):
        b, _, _ = _bump((np.asarray(x) - self.center) / self.width)
        return b * self._time(t)[0]

    def phi_t(self, x, t):
        b, _, _ = _bump((np.asarray(x) - self.center) / self.width)
        return b * self._time(t)[1]

    def phi_xx(self, x, t):
        _, _, b2 = _bump((np.asarray(x) - self.center) / self.width)
        return b2 / self.width ** 2 * self._time(t)[0]


def test_bank(T: float, L: float = 1.0) -> list[TestFunction]:
    """The fixed bank: 3 centres x 2 widths x 2 time profiles."""
    return [TestFunction(c * L, w * L, T, prof)
            for c, w, prof in product((0.35, 0.5, 0.65), (0.15, 0.3), ("cubic", "cos4"))]


# ------------------------------------------------------------ evaluators

@dataclass
class GridField:
    """Nodal values on a tensor grid, read by bilinear interpolation."""
    values: np.ndarray      # (n_t, n_x)
    x: np.ndarray
    t: np.ndarray

    def __call__(self, x, t):
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        j = np.clip(np.searchsorted(self.x, x, side="right") - 1, 0, self.x.size - 2)
        n = np.clip(np.searchsorted(self.t, t, side="right") - 1, 0, self.t.size - 2)
        fx = np.clip((x - self.x[j]) / (self.x[j + 1] - self.x[j]), 0, 1)
        ft = np.clip((t - self.t[n]) / (self.t[n + 1] - self.t[n]), 0, 1)
        F = self.values
        return ((1 - ft) * ((1 - fx) * F[n, j] + fx * F[n, j + 1])
                + ft * ((1 - fx) * F[n + 1, j] + fx * F[n + 1, j + 1]))


@dataclass
class ConstructedField:
    """u = (v_i)_x of a stage state on top of the star fields."""
    state: StageState | None
    star: StarEval

    @property
    def x(self):
        return self.star.x

    @property
    def t(self):
        return self.star.t

    @property
    def values(self):
        return self.star.sf.u_star

    def __call__(self, x, t):
        return gradient_pair(self.state, self.star, x, t)[0]

    def stages(self):
        return [] if self.state is None else self.state.chain()


@dataclass(frozen=True)
class Quadrature:
    refine: int = 1          # sub-intervals per grid cell for the grid part
    triangle_rule: int = 7   # 1 (centroid) or 7 (degree 5)


_TRI7 = (np.array([[1 / 3, 1 / 3, 1 / 3],
                   [0.059715871789770, 0.470142064105115, 0.470142064105115],
                   [0.470142064105115, 0.059715871789770, 0.470142064105115],
                   [0.470142064105115, 0.470142064105115, 0.059715871789770],
                   [0.797426985353087, 0.101286507323456, 0.101286507323456],
                   [0.101286507323456, 0.797426985353087, 0.101286507323456],
                   [0.101286507323456, 0.101286507323456, 0.797426985353087]]),
         np.array([0.225, 0.132394152788506, 0.132394152788506, 0.132394152788506,
                   0.125939180544827, 0.125939180544827, 0.125939180544827]))
_TRI1 = (np.array([[1 / 3, 1 / 3, 1 / 3]]), np.array([1.0]))


# ------------------------------------------------------------ residual

def _grid_part(F: GridField, p: model.FluxParams, u0, tf: TestFunction, refine: int):
    x, t = F.x, F.t
    if refine > 1:
        xs = np.linspace(x[0], x[-1], (x.size - 1) * refine + 1)
        ts = np.linspace(t[0], t[-1], (t.size - 1) * refine + 1)
        X, Tt = np.meshgrid(xs, ts)
        U = F(X, Tt)
        x0 = xs
        u0s = np.interp(xs, x, np.asarray(u0, dtype=float))
    else:
        xs, ts = x, t
        X, Tt = np.meshgrid(xs, ts)
        U = F.values
        x0 = x
        u0s = np.asarray(u0, dtype=float)
    integrand = U * tf.phi_t(X, Tt) + model.rho(p, U) * tf.phi_xx(X, Tt)
    inner = np.trapezoid(integrand, xs, axis=1)
    return float(np.trapezoid(inner, ts) + np.trapezoid(u0s * tf.phi(x0, 0.0), x0))


def piece_triangles(blocks: BlockSet):
    """Per-piece triangles of every diamond.

    Returns vertices (m, 3, 2), the block index, the slope the piece adds
    to the density and the piece label. Rhombi are cut along T = 0.
    """
    verts, idx, slope, lab = [], [], [], []
    n = len(blocks)
    ar = np.arange(n)
    for label in (T1, T2, T3, T4):
        verts.append(blocks.piece_vertices(label))
        idx.append(ar)
        slope.append(blocks.tp)
        lab.append(np.full(n, label, dtype=np.int8))
    rv = blocks.piece_vertices(R)        # (k, 0), (0, 1), (-k, 0), (0, -1)
    verts.append(rv[:, [0, 1, 2]])
    verts.append(rv[:, [2, 3, 0]])
    for _ in range(2):
        idx.append(ar)
        slope.append(-blocks.tm)
        lab.append(np.full(n, R, dtype=np.int8))
    return (np.concatenate(verts), np.concatenate(idx), np.concatenate(slope),
            np.concatenate(lab))


def stage_correction(blocks: BlockSet, star: StarEval, p: model.FluxParams, tfs,
                     rule: int = 7, chunk: int = 200_000) -> np.ndarray:
    """Change of the weak residual caused by one stage, for each test function."""
    out = np.zeros(len(tfs))
    if len(blocks) == 0:
        return out
    bary, w = _TRI7 if rule == 7 else _TRI1
    tri, idx, c, _ = piece_triangles(blocks)
    # ancestors' slopes are constant on each piece
    base = blocks.s_anchor - star.u(blocks.xc, blocks.tc)
    for a in range(0, tri.shape[0], chunk):
        V = tri[a:a + chunk]
        i = idx[a:a + chunk]
        cc = c[a:a + chunk]
        e1, e2 = V[:, 1] - V[:, 0], V[:, 2] - V[:, 0]
        area = 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
        Q = np.einsum("qk,mkd->mqd", bary, V)
        xq, tq = Q[..., 0], Q[..., 1]
        u_prev = star.u(xq, tq) + base[i][:, None]
        drho = model.rho(p, u_prev + cc[:, None]) - model.rho(p, u_prev)
        wa = area[:, None] * w[None, :]
        for j, tf in enumerate(tfs):
            val = drho * tf.phi_xx(xq, tq) + cc[:, None] * tf.phi_t(xq, tq)
            out[j] += float(np.sum(wa * val))
    return out


def weak_residual(u, p: model.FluxParams, u0, tf, quadrature: Quadrature | None = None):
    """Weak residual with the original flux; ``tf`` may be a single test
    function (returns a float) or a list (returns an array)."""
    q = quadrature or Quadrature()
    single = isinstance(tf, TestFunction)
    tfs = [tf] if single else list(tf)
    if isinstance(u, ConstructedField):
        grid = GridField(u.values, u.x, u.t)
    elif isinstance(u, GridField):
        grid = u
    else:
        raise TypeError("u must be a GridField or a ConstructedField")
    res = np.array([_grid_part(grid, p, u0, f, q.refine) for f in tfs])
    if isinstance(u, ConstructedField):
        for st in u.stages():
            res += stage_correction(st.blocks, u.star, p, tfs, q.triangle_rule)
    return float(res[0]) if single else res


def residual_table(star: StarEval, state: StageState | None, p, tfs, quadrature=None):
    """Residuals of u*, and of every stage up to ``state``: (n_stages + 1, n_tf)."""
    q = quadrature or Quadrature()
    u0 = star.sf.u_star[0]
    grid = GridField(star.sf.u_star, star.x, star.t)
    rows = [np.array([_grid_part(grid, p, u0, f, q.refine) for f in tfs])]
    if state is not None:
        for st in state.chain():
            rows.append(rows[-1] + stage_correction(st.blocks, star, p, tfs, q.triangle_rule))
    return np.array(rows)


# ------------------------------------------------------------ mass, oscillation

def mass_compare(u: np.ndarray, u_star: np.ndarray, grid) -> np.ndarray:
    """Per-time trapezoid mass difference of two fields on the same grid."""
    u, u_star = np.asarray(u), np.asarray(u_star)
    x = grid.x
    if u.shape != u_star.shape or u.shape[-1] != x.size:
        raise GridMismatch(f"shapes {u.shape} and {u_star.shape} on {x.size} nodes")
    return np.trapezoid(u, x, axis=-1) - np.trapezoid(u_star, x, axis=-1)


@dataclass(frozen=True)
class DiamondWindow:
    xc: float
    tc: float
    nu: float
    delta: float


def oscillation_probe(u, windows, n: int = 64, domain=None) -> np.ndarray:
    """max - min of u on an n x n sub-grid of each window.

    Windows are rectangles (x0, x1, t0, t1) or DiamondWindow, sampled on a
    grid in the diamond's own rotated coordinates.
    """
    out = np.empty(len(windows))
    s = (np.arange(n) + 0.5) / n
    for k, wdw in enumerate(windows):
        if isinstance(wdw, DiamondWindow):
            a, b = np.meshgrid(s, s)
            X = (a - b)            # |X| + |T| < 1 on the rotated square
            T = (a + b - 1.0)
            x = wdw.xc + X * wdw.nu * wdw.delta
            t = wdw.tc + T * wdw.nu
        else:
            x0, x1, t0, t1 = wdw
            if domain is not None:
                L, T_end = domain
                if x0 < 0 or x1 > L or t0 < 0 or t1 > T_end or x1 <= x0 or t1 <= t0:
                    raise WindowOutside(f"window {wdw} outside the domain")
            x, t = np.meshgrid(x0 + (x1 - x0) * s, t0 + (t1 - t0) * s)
        v = u(x, t)
        out[k] = float(np.max(v) - np.min(v))
    return out


# ------------------------------------------------------------ inclusion

def sample_pieces(blocks: BlockSet, n_samples: int, seed=0, labels=None, inset: float = 1e-9):
    """Uniform interior points of the stage's pieces (area weighted).

    Returns x, t, the block index and the piece label.
    """
    tri, idx, _, lab = piece_triangles(blocks)
    if labels is not None:
        keep = np.isin(lab, labels)
        tri, idx, lab = tri[keep], idx[keep], lab[keep]
    e1, e2 = tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]
    area = 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    rng = np.random.default_rng(seed)
    pick = rng.choice(area.size, size=n_samples, p=area / area.sum())
    a, b = rng.random((2, n_samples))
    flip = a + b > 1
    a, b = np.where(flip, 1 - a, a), np.where(flip, 1 - b, b)
    a = inset + (1 - 3 * inset) * a
    b = inset + (1 - 3 * inset) * b
    P = tri[pick, 0] + a[:, None] * e1[pick] + b[:, None] * e2[pick]
    return P[:, 0], P[:, 1], idx[pick], lab[pick]


def inclusion_check(state: StageState, star: StarEval, wall: WallGeometry, sched: Schedule,
                    n_samples: int = 20000, seed=0) -> dict:
    """Fraction of sampled points of stage-i triangles (rhombi) with the
    gradient of z_i in U_i^+ (U_i^-)."""
    i = state.stage
    if len(state.blocks) == 0:
        return dict(stage=i, n=0, fraction=1.0, n_fail=0)
    x, t, _, lab = sample_pieces(state.blocks, n_samples, seed)
    s, r = gradient_pair(state, star, x, t)
    lam_i, lam_n = sched.lam(i), sched.lam(i + 1)
    ok = np.where(lab == R, wall.in_U_minus(s, r, lam_i, lam_n),
                  wall.in_U_plus(s, r, lam_i, lam_n))
    return dict(stage=i, n=int(x.size), fraction=float(np.mean(ok)),
                n_fail=int(np.count_nonzero(~ok)))


def inclusion_distance(state: StageState, star: StarEval, wall: WallGeometry, sched: Schedule,
                       n_samples: int = 20000, seed=0) -> dict:
    """Distance of (v_x, w_t) to K over the diamonds covering Q at stage i."""
    i = state.stage
    x, t, _, _ = sample_pieces(state.blocks, n_samples, seed)
    s, r = gradient_pair(state, star, x, t)
    d = wall.dist_to_K(s, r)
    return dict(stage=i, max=float(d.max()), mean=float(d.mean()),
                bound=float(wall.S_M * sched.lam(i)))


# ------------------------------------------------------------ cutoffs

@dataclass(frozen=True)
class CutoffFn:
    """theta0 = 1 on [0, d0/4], 0 on [d0/2, inf), quintic smoothstep between."""
    d0: float

    def __call__(self, d):
        d = np.asarray(d, dtype=float)
        q = np.clip((d - 0.25 * self.d0) / (0.25 * self.d0), 0.0, 1.0)
        return 1.0 - q ** 3 * (10.0 - 15.0 * q + 6.0 * q * q)

    def zeta(self, wall: WallGeometry, s, r, side):
        return self(wall.dist_K(s, r, side))


def zeta_integrals(state: StageState, star: StarEval, cutoff: CutoffFn, wall: WallGeometry,
                   blocks: BlockSet, n: int = 16) -> np.ndarray:
    """(int zeta0+, int zeta0-) of the gradient of z_i over each given diamond.

    Midpoint rule on an n x n grid of the diamond's rotated coordinates.
    """
    s_ = (np.arange(n) + 0.5) / n
    a, b = np.meshgrid(s_, s_)
    X, T = (a - b).ravel(), (a + b - 1.0).ravel()
    out = np.empty((len(blocks), 2))
    chunk = max(1, 200_000 // X.size)
    for c0 in range(0, len(blocks), chunk):
        sl = slice(c0, c0 + chunk)
        x = (blocks.xc[sl, None] + X[None, :] * (blocks.nu * blocks.delta)[sl, None])
        t = blocks.tc[sl, None] + T[None, :] * blocks.nu[sl, None]
        s, r = gradient_pair(state, star, x, t)
        area = blocks.areas[sl]
        out[sl, 0] = cutoff.zeta(wall, s, r, "+").mean(axis=1) * area
        out[sl, 1] = cutoff.zeta(wall, s, r, "-").mean(axis=1) * area
    return out


# ------------------------------------------------------------ stage checks

def stage_bounds(state: StageState, sched: Schedule) -> dict:
    """Closed-form sups of the stage's perturbation over its diamonds."""
    b = state.blocks
    i = state.stage
    eps = sched.epsilon / 2 ** (i + 1)
    if len(b) == 0:
        return dict(stage=i, max_diameter=0.0, sup_z=0.0, sup_vt=0.0, bound=eps,
                    diam_bound=2.0 ** -i)
    sup_z = float(max(np.max(max_abs_phi(b.tp, b.tm, b.delta, b.nu)),
                      np.max(max_abs_psi(b.tp, b.tm, b.delta, b.nu))))
    return dict(stage=i, max_diameter=float(np.max(2 * b.nu * np.maximum(b.delta, 1.0))),
                diam_bound=2.0 ** -i, sup_z=sup_z, sup_vt=float(np.max(b.tp * b.delta)),
                bound=eps)


def sampled_stage_difference(state: StageState, star: StarEval, n_samples=20000, seed=0):
    """Dense-sample sup of |z_i - z_{i-1}| and |(v_i)_t - (v_{i-1})_t|."""
    x, t, _, _ = sample_pieces(state.blocks, n_samples, seed)
    c = state.blocks.evaluate(x, t)
    return dict(sup_z=float(max(np.max(np.abs(c["phi"])), np.max(np.abs(c["psi"])))),
                sup_vt=float(np.max(np.abs(c["phi_t"]))))


def w_x_mismatch(state: StageState | None, star: StarEval, n_samples=1000, seed=0) -> float:
    """max |w_x - v| of z_i at random points of the box."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(star.x[0], star.x[-1], n_samples)
    t = rng.uniform(star.t[0], star.t[-1], n_samples)
    z = evaluate_z(state, star, x, t)
    return float(np.max(np.abs(z["w_x"] - z["v"])))


def lipschitz_check(state: StageState, star: StarEval, wall: WallGeometry, n_samples=20000,
                    seed=0) -> dict:
    """Sampled sup |grad z_i| against c1 = 2 |grad z*| + C_U + |z*| + 1."""
    sf = star.sf
    g0 = np.sqrt(sf.u_star ** 2 + star.vt ** 2 + star.wx ** 2 + sf.flux_star ** 2)
    z0 = np.sqrt(sf.v_star ** 2 + sf.w_star ** 2)
    c1 = 2 * float(g0.max()) + wall.C_U + float(z0.max()) + 1.0
    sup = 0.0
    for c in state.chain():
        if len(c.blocks) == 0:
            continue
        x, t, _, _ = sample_pieces(c.blocks, n_samples, seed)
        z = evaluate_z(state, star, x, t)
        g = np.sqrt(z["v_x"] ** 2 + z["v_t"] ** 2 + z["w_x"] ** 2 + z["w_t"] ** 2)
        sup = max(sup, float(g.max()))
    return dict(sup_grad=max(sup, float(g0.max())), c1=c1)


def gradient_integral(state: StageState, star: StarEval, n: int = 8) -> float:
    """int |grad z_i - grad z_{i-1}| over the stage's diamonds (midpoint rule)."""
    b = state.blocks
    if len(b) == 0:
        return 0.0
    s_ = (np.arange(n) + 0.5) / n
    a, c = np.meshgrid(s_, s_)
    X, T = (a - c).ravel(), (a + c - 1.0).ravel()
    total = 0.0
    chunk = max(1, 400_000 // X.size)
    for c0 in range(0, len(b), chunk):
        sl = slice(c0, c0 + chunk)
        x = b.xc[sl, None] + X[None, :] * (b.nu * b.delta)[sl, None]
        t = b.tc[sl, None] + T[None, :] * b.nu[sl, None]
        e = eval_arrays(b.xc[sl, None], b.tc[sl, None], b.nu[sl, None], b.delta[sl, None],
                        b.tp[sl, None], b.tm[sl, None], x, t)
        g = np.sqrt(e["phi_x"] ** 2 + e["phi_t"] ** 2 + e["phi"] ** 2 + e["psi_t"] ** 2)
        total += float(np.sum(g.mean(axis=1) * b.areas[sl]))
    return total


@dataclass
class Check:
    name: str
    value: float
    tolerance: float
    passed: bool
    hard: bool = True
    note: str = ""


@dataclass
class VerificationReport:
    checks: list = field(default_factory=list)
    data: dict = field(default_factory=dict)

    def add(self, name, value, tolerance, passed, hard=True, note=""):
        self.checks.append(Check(name, float(value), float(tolerance), bool(passed), hard, note))

    @property
    def passed(self):
        return all(c.passed for c in self.checks if c.hard)

    def to_json(self) -> str:
        return json.dumps(dict(passed=self.passed, checks=[asdict(c) for c in self.checks],
                               data=self.data), indent=2, default=_jsonable)

    def summary(self) -> str:
        w = max((len(c.name) for c in self.checks), default=4)
        lines = [f"{'check':<{w}}  {'value':>12}  {'tolerance':>12}  result"]
        for c in self.checks:
            res = "pass" if c.passed else ("FAIL" if c.hard else "warn")
            lines.append(f"{c.name:<{w}}  {c.value:12.4e}  {c.tolerance:12.4e}  {res}")
        return "\n".join(lines)


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(type(o))


def solution_on_grid(state, star: StarEval, mode: str = "cell") -> np.ndarray:
    return sample_solution(state, star, mode)

