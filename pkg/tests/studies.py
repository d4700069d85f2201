"""Solver studies shared by the unit and acceptance suites."""
import numpy as np

from adhesion import pde
from adhesion.model import FluxParams


def _mms_error(Nx, dt, T):
    # u = exp(-t) sin(pi x) for the heat case with a matching source
    g = pde.Grid(1.0, Nx, dt, T)
    x = g.x
    u0 = np.sin(np.pi * x)
    u0[-1] = 0.0
    src = lambda x, t: (np.pi ** 2 - 1) * np.exp(-t) * np.sin(np.pi * x)  # noqa: E731
    sf = pde.solve_star(FluxParams(0.0, 0.0), None, u0, g, source=src)
    return np.max(np.abs(sf.u_star[-1] - np.exp(-T) * np.sin(np.pi * x)))


def mms_orders():
    """Observed orders in dt (fine space grid) and in dx (tiny dt)."""
    et = [_mms_error(801, d, 0.1) for d in (0.01, 0.005, 0.0025)]
    ex = [_mms_error(n, 1e-5, 0.01) for n in (17, 33, 65)]
    ot = np.log2(np.array(et[:-1]) / et[1:])
    ox = np.log2(np.array(ex[:-1]) / ex[1:])
    return ot, ox


def heat_gamma(beta=0.3, L=1.0):
    """alpha = 0 gives rho(u) = u: the decay rate is pi^2 / L^2."""
    g = pde.Grid(L, 129, 1e-3, 0.5)
    u0 = pde.initial_density(0.5, None, g)
    sf = pde.solve_star(FluxParams(0.0, beta), None, u0, g)
    return sf, pde.decay_fit(sf, t_start=0.2)
