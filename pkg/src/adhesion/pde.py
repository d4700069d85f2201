"""Modified flux, implicit solver for u_t = (rho*(u))_xx and derived potentials."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.linalg import solve_banded

from . import model
from .errors import (BadProfile, InsufficientTail, NewtonDivergence, RegimeError,
                     StepTooLarge)
from .model import FluxParams, Thresholds


class PlainFlux:
    """The unmodified flux rho, used for forward-regime runs."""

    def __init__(self, p: FluxParams):
        self.base = p

    def rho(self, s):
        return model.rho(self.base, s)

    def sigma(self, s):
        return model.sigma(self.base, s)


def _hermite5(y0, d0, c0, y1, d1, c1, h):
    """Coefficients (in powers of x/h) of the quintic with given value,
    slope and curvature at both ends of [0, h]."""
    A = np.array([
        [1, 0, 0, 0, 0, 0],
        [0, 1, 0, 0, 0, 0],
        [0, 0, 2, 0, 0, 0],
        [1, 1, 1, 1, 1, 1],
        [0, 1, 2, 3, 4, 5],
        [0, 0, 2, 6, 12, 20],
    ], dtype=float)
    rhs = np.array([y0, d0 * h, c0 * h * h, y1, d1 * h, c1 * h * h])
    return np.linalg.solve(A, rhs)


@dataclass
class ModifiedFlux:
    base: FluxParams
    r1: float
    r2: float
    knots: tuple
    pieces: list
    derivative_floor: float
    info: dict = field(default_factory=dict)

    def rho(self, s):
        s = np.asarray(s, dtype=float)
        out = np.asarray(model.rho(self.base, s), dtype=float).copy()
        for lo, hi, coef in self.pieces:
            m = (s > lo) & (s < hi)
            if np.any(m):
                x = (s[m] - lo) / (hi - lo)
                out[m] = np.polynomial.polynomial.polyval(x, coef)
        return out if out.ndim else float(out)

    def sigma(self, s):
        s = np.asarray(s, dtype=float)
        out = np.asarray(model.sigma(self.base, s), dtype=float).copy()
        for lo, hi, coef in self.pieces:
            m = (s > lo) & (s < hi)
            if np.any(m):
                x = (s[m] - lo) / (hi - lo)
                dc = np.polynomial.polynomial.polyder(coef)
                out[m] = np.polynomial.polynomial.polyval(x, dc) / (hi - lo)
        return out if out.ndim else float(out)

    def sigma_prime(self, s):
        s = np.asarray(s, dtype=float)
        out = np.asarray(model.sigma_prime(self.base, s), dtype=float).copy()
        for lo, hi, coef in self.pieces:
            m = (s > lo) & (s < hi)
            if np.any(m):
                x = (s[m] - lo) / (hi - lo)
                dc = np.polynomial.polynomial.polyder(coef, 2)
                out[m] = np.polynomial.polynomial.polyval(x, dc) / (hi - lo) ** 2
        return out if out.ndim else float(out)


def build_modified_flux(p: FluxParams, th: Thresholds, r1: float, r2: float,
                        left_fraction: float = 0.25,
                        right_fraction: float = 0.1,
                        n_check: int = 10_000) -> ModifiedFlux:
    """C^2 monotone splice of rho across [s^-(r1), s^+(r2)].

    rho* is built from its derivative: sigma* is a cubic Hermite ramp from
    sigma(s^-(r1)) down to a constant level m, flat in the middle and a
    second cubic Hermite ramp up to sigma(s^+(r2)). Each piece of rho* is
    then the quintic Hermite interpolant of the matching value, slope and
    curvature data (it degenerates to a quartic). The level m is fixed by
    requiring rho*(s^+(r2)) = r2.
    """
    if not (th.rho_at_s0_plus - 1e-15 <= r1 < r2 <= th.r_star + 1e-15):
        raise RegimeError(f"need rho(s0+) <= r1 < r2 <= r*, got {r1}, {r2}")
    a = model.inverse_branch(p, r1, "minus")
    k1 = model.inverse_branch(p, r2, "minus")
    k2 = model.inverse_branch(p, r1, "plus")
    b = model.inverse_branch(p, r2, "plus")
    if not (a < k1 < k2 < b):
        raise RegimeError("knot ordering s-(r1) < s-(r2) < s+(r1) < s+(r2) fails")
    sa, sb = float(model.sigma(p, a)), float(model.sigma(p, b))
    ca, cb = float(model.sigma_prime(p, a)), float(model.sigma_prime(p, b))
    width = b - a
    delta = r2 - r1
    fl, fr = left_fraction, right_fraction
    for _ in range(60):
        h1 = fl * (k1 - a)
        h2 = fr * (b - k2) if b > k2 else fr * width
        # integral of a cubic Hermite ramp: h (f0 + f1)/2 + h^2 (f0' - f1')/12
        fixed = h1 * sa / 2 + h1 * h1 * ca / 12 + h2 * sb / 2 - h2 * h2 * cb / 12
        m = (delta - fixed) / (width - h1 / 2 - h2 / 2)
        if m > 0 and fixed < delta:
            break
        fl *= 0.5
        fr *= 0.5
    else:
        raise RegimeError("could not fit a monotone splice")
    c1, c2 = a + h1, b - h2
    y1 = r1 + h1 * (sa + m) / 2 + h1 * h1 * ca / 12
    y2 = r2 - h2 * (m + sb) / 2 + h2 * h2 * cb / 12
    pieces = [
        (a, c1, _hermite5(r1, sa, ca, y1, m, 0.0, h1)),
        (c1, c2, _hermite5(y1, m, 0.0, y2, m, 0.0, c2 - c1)),
        (c2, b, _hermite5(y2, m, 0.0, r2, sb, cb, h2)),
    ]
    mf = ModifiedFlux(base=p, r1=r1, r2=r2, knots=(a, k1, k2, b), pieces=pieces,
                      derivative_floor=0.0,
                      info=dict(h_left=h1, h_right=h2, plateau_slope=m,
                                smoothness="C2"))
    s = np.linspace(a, b, n_check)
    sig = mf.sigma(s)
    c0 = float(sig.min())
    if c0 <= 0:
        raise RegimeError("modified diffusivity is not positive")
    mf.derivative_floor = c0
    left = np.linspace(a, k1, n_check)[1:]
    right = np.linspace(k2, b, n_check)[:-1]
    if not (np.all(mf.rho(left) < model.rho(p, left))
            and np.all(mf.rho(right) > model.rho(p, right))):
        raise RegimeError("modified flux fails the ordering against rho")
    return mf


@dataclass
class Grid:
    L: float = 1.0
    Nx: int = 256
    dt: float = 1e-3
    t_end: float = 1.0

    def __post_init__(self):
        if self.Nx < 16 or self.dt <= 0 or self.t_end <= 0:
            raise ValueError("grid needs Nx >= 16, dt > 0, t_end > 0")

    @property
    def x(self):
        return np.linspace(0.0, self.L, self.Nx)

    @property
    def dx(self):
        return self.L / (self.Nx - 1)

    @property
    def Nt(self):
        return int(round(self.t_end / self.dt))

    @property
    def times(self):
        return np.linspace(0.0, self.Nt * self.dt, self.Nt + 1)


@dataclass(frozen=True)
class ProfileSpec:
    M0: float
    shape: str = "sin4"


def initial_density(spec, p: FluxParams | None, grid: Grid) -> np.ndarray:
    """Bump with second-order flat contact at both ends and maximum M0.

    ``spec`` is a ProfileSpec, a mapping with keys M0 and shape, or a bare
    number taken as M0. The flat contact makes the compatibility
    conditions at the boundary hold trivially for every flux.
    """
    if isinstance(spec, ProfileSpec):
        M0, shape = spec.M0, spec.shape
    elif isinstance(spec, dict):
        M0, shape = float(spec["M0"]), spec.get("shape", "sin4")
    else:
        M0, shape = float(spec), "sin4"
    x = grid.x
    if M0 == 0.0:
        return np.zeros_like(x)
    if not (0.0 < M0 <= 1.0):
        raise BadProfile(f"M0 must lie in (0, 1], got {M0}")
    if shape != "sin4":
        raise BadProfile(f"unknown profile {shape!r}")
    u = M0 * np.sin(np.pi * x / grid.L) ** 4
    u[0] = u[-1] = 0.0
    return u


def sin4_derivatives(M0, L, x):
    """Closed-form u0, u0' and u0'' of the sin^4 bump."""
    k = np.pi / L
    s, c = np.sin(k * x), np.cos(k * x)
    u = M0 * s ** 4
    du = 4 * M0 * k * s ** 3 * c
    d2u = 4 * M0 * k * k * (3 * s * s * c * c - s ** 4)
    return u, du, d2u


@dataclass
class StarFields:
    grid: Grid
    u_star: np.ndarray
    v_star: np.ndarray
    w_star: np.ndarray
    flux_star: np.ndarray
    T0: float | None
    mass: np.ndarray
    times: np.ndarray
    params: FluxParams | None = None
    flux: object = None
    info: dict = field(default_factory=dict)


def _newton_step(u_old, flux, dt, dx, tol, max_iter=30):
    n = u_old.size
    u = u_old.copy()
    lam = dt / (dx * dx)
    inner = slice(1, n - 1)
    ab = np.zeros((3, n - 2))
    for it in range(max_iter):
        r = flux.rho(u)
        F = u[inner] - u_old[inner] - lam * (r[2:] - 2 * r[1:-1] + r[:-2])
        res = float(np.max(np.abs(F)))
        if res <= tol:
            return u, it, res
        sg = flux.sigma(u)
        ab[1] = 1.0 + 2.0 * lam * sg[1:-1]
        ab[0, 1:] = -lam * sg[2:-1]
        ab[2, :-1] = -lam * sg[1:-2]
        du = solve_banded((1, 1), ab, -F)
        step = 1.0
        for _ in range(20):
            cand = u.copy()
            cand[inner] += step * du
            rc = flux.rho(cand)
            Fc = cand[inner] - u_old[inner] - lam * (rc[2:] - 2 * rc[1:-1] + rc[:-2])
            if np.all(np.isfinite(Fc)) and np.max(np.abs(Fc)) < res:
                break
            step *= 0.5
        else:
            return None, it, res
        u = cand
    r = flux.rho(u)
    F = u[inner] - u_old[inner] - lam * (r[2:] - 2 * r[1:-1] + r[:-2])
    res = float(np.max(np.abs(F)))
    return (u if res <= tol else None), max_iter, res


def solve_star(p: FluxParams, mf, u0, grid: Grid, tol: float = 1e-11,
               max_halvings: int = 6, s_threshold: float | None = None,
               source=None) -> StarFields:
    """Backward Euler with a conservative central flux Laplacian.

    ``mf`` is a ModifiedFlux, a PlainFlux or None (plain rho).
    ``source(x, t)`` adds a right-hand side, used for manufactured
    solutions. ``s_threshold`` overrides the density s^-(r1) used to
    locate T0.
    """
    flux = PlainFlux(p) if mf is None else mf
    if s_threshold is None and isinstance(flux, ModifiedFlux):
        s_threshold = flux.knots[0]
    x, dx, dt = grid.x, grid.dx, grid.dt
    Nt = grid.Nt
    u = np.array(u0, dtype=float)
    if u.shape != x.shape:
        raise ValueError("u0 does not match the grid")
    U = np.empty((Nt + 1, x.size))
    U[0] = u
    newton_its = 0
    halvings_used = 0
    for n in range(Nt):
        t0 = n * dt
        sub = 1
        for h in range(max_halvings + 1):
            sub = 2 ** h
            h_dt = dt / sub
            v = u.copy()
            ok = True
            for k in range(sub):
                rhs_old = v
                if source is not None:
                    tk = t0 + (k + 1) * h_dt
                    rhs_old = v + h_dt * source(x, tk)
                    rhs_old[0] = rhs_old[-1] = 0.0
                nv, its, res = _newton_step(rhs_old, flux, h_dt, dx, tol)
                newton_its += its
                if nv is None:
                    ok = False
                    break
                nv[0] = nv[-1] = 0.0
                v = nv
            if ok:
                halvings_used = max(halvings_used, h)
                break
        else:
            raise NewtonDivergence(f"Newton failed at step {n} (t={t0:.6g})",
                                   diagnostics=dict(step=n, time=t0, residual=res))
        u = v
        if not np.all(np.isfinite(u)):
            raise StepTooLarge(f"non-finite state at step {n}")
        U[n + 1] = u
    times = grid.times
    R = flux.rho(U)
    # potentials v*, w*
    V = cumulative_trapezoid(U, x, axis=1, initial=0.0)
    flux0 = (-3 * R[:, 0] + 4 * R[:, 1] - R[:, 2]) / (2 * dx)
    V += cumulative_trapezoid(flux0, times, initial=0.0)[:, None]
    v0 = V[0]
    W = cumulative_trapezoid(R, times, axis=0, initial=0.0)
    W += cumulative_trapezoid(v0, x, initial=0.0)[None, :]
    mass = np.trapezoid(U, x, axis=1)
    T0 = None
    if s_threshold is not None:
        below = np.nonzero(U.max(axis=1) < s_threshold)[0]
        if below.size:
            # the last step still at or above the threshold
            T0 = float(times[max(below[0] - 1, 0)])
    return StarFields(grid=grid, u_star=U, v_star=V, w_star=W, flux_star=R, T0=T0,
                      mass=mass, times=times, params=p, flux=flux,
                      info=dict(newton_iterations=newton_its, max_halvings=halvings_used))


def truncation_estimate(sf: StarFields) -> float:
    """A priori size of the discrete mismatch in w*_x = v*.

    The time quadrature differs from the backward Euler sum by a
    telescoping dt/2 (F^0 - F^n) term (F the flux slope), and the spatial
    quadratures and central differences are second order.
    """
    dx, dt = sf.grid.dx, sf.grid.dt
    F = np.gradient(sf.flux_star, dx, axis=1)
    ux = np.gradient(sf.u_star, dx, axis=1)
    r3 = np.gradient(np.gradient(F, dx, axis=1), dx, axis=1)
    t_end = sf.times[-1]
    return float(dt * np.max(np.abs(F)) + dx * dx * (np.max(np.abs(ux)) / 2.0
                 + t_end * np.max(np.abs(r3)) / 6.0))


def w_x_field(sf: StarFields) -> np.ndarray:
    """Central-difference x-derivative of the stored w*."""
    return np.gradient(sf.w_star, sf.grid.dx, axis=1, edge_order=2)


@dataclass
class RegionMask:
    grid: Grid
    q_mask: np.ndarray
    q_i_masks: list
    areas: dict


def u_lambda_member(s, r, lam, r1, r2, om1, om2):
    """Membership of (s, r) in the open set U^lambda (om1, om2 evaluated at r)."""
    lo_r = (1 - lam) * r1 + lam * r2
    hi_r = lam * r1 + (1 - lam) * r2
    lo_s = (1 - lam) * om1 + lam * om2
    hi_s = lam * om1 + (1 - lam) * om2
    return (r > lo_r) & (r < hi_r) & (s > lo_s) & (s < hi_s)


def walls_at(p: FluxParams, r, r1, r2):
    """omega_1(r), omega_2(r) with r clipped to [r1, r2]."""
    rc = np.clip(r, r1, r2)
    return (model.inverse_branch(p, rc, "minus", check=False),
            model.inverse_branch(p, rc, "plus", check=False))


def detect_Q(sf: StarFields, th: Thresholds, schedule) -> RegionMask:
    """Mixture region Q and its shells Q_i from the star fields.

    ``schedule`` is anything with a ``lambdas`` sequence, or the sequence
    itself.
    """
    p = sf.params
    lambdas = getattr(schedule, "lambdas", schedule)
    lo = model.inverse_branch(p, th.r1, "minus")
    hi = model.inverse_branch(p, th.r2, "plus")
    U = sf.u_star
    q = (U > lo) & (U < hi)
    q[:, 0] = q[:, -1] = False
    R = sf.flux_star
    om1, om2 = walls_at(p, R, th.r1, th.r2)
    masks = []
    prev = np.zeros_like(q)
    for lam in lambdas:
        inside = u_lambda_member(U, R, lam, th.r1, th.r2, om1, om2) & q
        masks.append(inside & ~prev)
        prev = prev | inside
    cell = sf.grid.dx * sf.grid.dt
    areas = dict(Q=float(q.sum() * cell), Q_i=[float(m.sum() * cell) for m in masks])
    return RegionMask(grid=sf.grid, q_mask=q, q_i_masks=masks, areas=areas)


def decay_fit(sf: StarFields, t_start: float | None = None, floor: float = 1e-300):
    """Least-squares fit of log max_x u*(., t) = log C - gamma t on a tail window."""
    times = sf.times
    peak = sf.u_star.max(axis=1)
    if t_start is None:
        t_start = sf.T0 if sf.T0 is not None else 0.5 * times[-1]
    sel = (times >= t_start) & (peak > floor)
    if sel.sum() < 3 or np.all(peak == 0.0):
        raise InsufficientTail("not enough positive samples on the tail window")
    t, y = times[sel], np.log(peak[sel])
    A = np.vstack([np.ones_like(t), t]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    pred = A @ coef
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(np.exp(coef[0])), float(-coef[1]), r2
