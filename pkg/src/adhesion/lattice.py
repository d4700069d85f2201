"""Cell-hopping lattice with adhesion and volume filling.

Site i of the level-n lattice on [0, L] has density u_i at x_i = i h,
h = L/2^n. A cell jumps right (left) at rate T+ (T-):

    T+_i = (1 - beta u_{i+1})(1 - alpha u_{i-1}) / h^2
    T-_i = (1 - alpha u_{i+1})(1 - beta u_{i-1}) / h^2

and du_i/dt = T+_{i-1} u_{i-1} + T-_{i+1} u_{i+1} - (T+_i + T-_i) u_i.
Ends are pinned at zero, with zero ghost values beyond them.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import pde
from .errors import IndexOutOfRange, NonFiniteState, StabilityViolation
from .model import FluxParams

STABILITY_FACTOR = 0.25


@dataclass(frozen=True)
class LatticeState:
    n: int
    L: float
    densities: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("refinement level n must be >= 2")
        u = np.array(self.densities, dtype=float)
        if u.shape != (2 ** self.n + 1,):
            raise ValueError(f"need {2 ** self.n + 1} densities, got {u.shape}")
        u.setflags(write=False)
        object.__setattr__(self, "densities", u)

    @property
    def h(self):
        return self.L / 2 ** self.n

    @property
    def x(self):
        return np.linspace(0.0, self.L, 2 ** self.n + 1)

    @classmethod
    def from_profile(cls, n: int, L: float, M0: float, shape: str = "sin4"):
        # the profile on a fine grid, restricted to the lattice sites
        g = pde.Grid(L, 2 ** max(n, 4) + 1, 1.0, 1.0)
        u = pde.initial_density(dict(M0=M0, shape=shape), None, g)
        return cls(n, L, u[:: 2 ** (max(n, 4) - n)])


def _rates(u, p: FluxParams, h):
    """(T+, T-) on every site, ghosts zero."""
    g = np.concatenate([[0.0], u, [0.0]])
    left, right = g[:-2], g[2:]
    tp = (1.0 - p.beta * right) * (1.0 - p.alpha * left) / (h * h)
    tm = (1.0 - p.alpha * right) * (1.0 - p.beta * left) / (h * h)
    return tp, tm


def transition_rates(state: LatticeState, p: FluxParams, i: int) -> tuple[float, float]:
    N = 2 ** state.n
    if not (1 <= i <= N - 1):
        raise IndexOutOfRange(f"site {i} outside 1..{N - 1}")
    u, h = state.densities, state.h
    tp = (1.0 - p.beta * u[i + 1]) * (1.0 - p.alpha * u[i - 1]) / (h * h)
    tm = (1.0 - p.alpha * u[i + 1]) * (1.0 - p.beta * u[i - 1]) / (h * h)
    return float(tp), float(tm)


def _rhs(u, p: FluxParams, h):
    tp, tm = _rates(u, p, h)
    out = np.zeros_like(u)
    out[1:-1] = tp[:-2] * u[:-2] + tm[2:] * u[2:] - (tp[1:-1] + tm[1:-1]) * u[1:-1]
    return out


def rhs(state: LatticeState, p: FluxParams) -> np.ndarray:
    """du/dt on every site; the pinned ends have zero derivative."""
    return _rhs(np.asarray(state.densities), p, state.h)


def stable_dt(n: int, L: float) -> float:
    return STABILITY_FACTOR * (L / 2 ** n) ** 2


def integrate(state: LatticeState, p: FluxParams, t_end: float, dt: float | None = None,
              n_out: int = 10, tol: float = 1e-9) -> list[LatticeState]:
    """Classical RK4 with fixed dt; n_out equally spaced snapshots after t0."""
    if t_end < 0:
        raise ValueError("t_end must be >= 0")
    if t_end == 0:
        return [state]
    bound = stable_dt(state.n, state.L)
    dt = bound if dt is None else dt
    if dt > bound * (1 + 1e-12):
        raise StabilityViolation(f"dt = {dt:.3e} exceeds 0.25 h^2 = {bound:.3e}")
    steps = int(np.ceil(t_end / dt - 1e-9))
    dt = t_end / steps
    marks = set(np.unique(np.round(np.linspace(0, steps, n_out + 1)[1:]).astype(int)).tolist())
    u = np.array(state.densities, dtype=float)
    h = state.h
    out = [state]
    for k in range(1, steps + 1):
        # overflow shows up as a non-finite state, reported below
        with np.errstate(over="ignore", invalid="ignore"):
            k1 = _rhs(u, p, h)
            k2 = _rhs(u + 0.5 * dt * k1, p, h)
            k3 = _rhs(u + 0.5 * dt * k2, p, h)
            k4 = _rhs(u + dt * k3, p, h)
            u = u + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(u)):
            raise NonFiniteState(f"non-finite density at step {k}")
        if k in marks:
            out.append(LatticeState(state.n, state.L, np.clip(u, 0.0, 1.0),
                                    state.time + k * dt))
    return out


@dataclass
class ConvergenceStudy:
    levels: list
    errors: list
    t_end: float
    reference_nx: int
    info: dict = field(default_factory=dict)

    @property
    def monotone(self):
        return bool(np.all(np.diff(self.errors) < 0))


def convergence_study(p: FluxParams, levels=(5, 6, 7, 8), L: float = 1.0, M0: float = 0.8,
                      t_end: float = 0.02, ref_nx: int = 2049, ref_dt: float = 2e-6
                      ) -> ConvergenceStudy:
    """Sup error at t_end of each lattice level against the continuum
    solve u_t = (rho(u))_xx on a fine grid (forward regimes only)."""
    g = pde.Grid(L, ref_nx, ref_dt, t_end)
    u0 = pde.initial_density(dict(M0=M0), p, g)
    sf = pde.solve_star(p, None, u0, g)
    ref = sf.u_star[-1]
    errs = []
    for n in levels:
        traj = integrate(LatticeState.from_profile(n, L, M0), p, t_end, n_out=1)
        last = traj[-1]
        errs.append(float(np.max(np.abs(last.densities - np.interp(last.x, g.x, ref)))))
    return ConvergenceStudy(list(levels), errs, t_end, ref_nx)
