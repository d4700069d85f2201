"""Independent reference computations used by the tests.

None of these call into the package: they re-derive the quantities with
other tools (sign scans, mpmath roots, shapely polygons, scipy quadrature,
dense matrices).
"""
from __future__ import annotations

import mpmath as mp
import numpy as np
from scipy import integrate
from shapely.geometry import Point, Polygon

mp.mp.dps = 40


def sigma_np(a, b, s):
    return 3 * a * b * s * s - 4 * a * s + 1


def rho_np(a, b, s):
    return a * b * s ** 3 - 2 * a * s * s + s


def sign_scan_variant(a: float, b: float, n: int = 100_000) -> str:
    """Variant from the sign pattern of sigma on an n-point grid of [0, 1].

    Valid for generic (a, b): touching zeros and zeros at s = 1 are
    measure-zero events and are not resolved.
    """
    s = np.linspace(0.0, 1.0, n)
    sg = np.sign(sigma_np(a, b, s))
    sg = sg[sg != 0]
    runs = sg[np.concatenate([[True], sg[1:] != sg[:-1]])]
    pattern = "".join("+" if v > 0 else "-" for v in runs)
    return {"+": "F", "+-": "FDB", "+-+": "FDBDF"}[pattern]


def mp_thresholds(a, b):
    a, b = mp.mpf(a), mp.mpf(b)
    r = sorted(mp.polyroots([3 * a * b, -4 * a, 1]))
    rho = lambda s: a * b * s ** 3 - 2 * a * s ** 2 + s  # noqa: E731
    return dict(s0_minus=r[0], s0_plus=r[1], rho_s0_minus=rho(r[0]), rho_s0_plus=rho(r[1]),
                rho_1=rho(mp.mpf(1)))


def mp_inverse(a, b, r, branch):
    """Bisection in mpmath on the monotone branch."""
    th = mp_thresholds(a, b)
    a, b, r = mp.mpf(a), mp.mpf(b), mp.mpf(r)
    lo, hi = (mp.mpf(0), th["s0_minus"]) if branch == "minus" else (th["s0_plus"], mp.mpf(1))
    f = lambda s: a * b * s ** 3 - 2 * a * s ** 2 + s - r  # noqa: E731
    flo = f(lo)
    for _ in range(200):
        mid = (lo + hi) / 2
        if (f(mid) > 0) == (flo > 0):
            lo, flo = mid, f(mid)
        else:
            hi = mid
    return (lo + hi) / 2


# ------------------------------------------------------------ building block

def block_value(tp, tm, d, X, T):
    """The canonical block written directly from its three affine pieces."""
    a = d * (1 - abs(T))
    if abs(T) >= 1 or abs(X) >= a:
        return 0.0
    k = tp / (tp + tm)
    if X <= -k * a:
        return tp * (X + a)
    if X >= k * a:
        return tp * (X - a)
    return -tm * X


def slice_integral(tp, tm, d, T):
    a = d * (1 - abs(T))
    k = tp / (tp + tm)
    pts = [-a, -k * a, k * a, a]
    return sum(integrate.quad(lambda x: block_value(tp, tm, d, x, T), pts[i], pts[i + 1],
                              epsabs=1e-15, epsrel=1e-13)[0] for i in range(3))


def shapely_piece_areas(tp, tm, d, nu=1.0):
    """Areas of {phi_x = tau+} and {phi_x = -tau-} via polygon clipping."""
    k = tp / (tp + tm)
    D = Polygon([(nu * d, 0), (0, nu), (-nu * d, 0), (0, -nu)])
    mid = Polygon([(k * nu * d, 0), (0, nu), (-k * nu * d, 0), (0, -nu)])
    return D.difference(mid).area, D.intersection(mid).area, D.area


def in_polygon(vertices, x, t):
    poly = Polygon(vertices)
    return np.array([poly.contains(Point(a, b)) for a, b in zip(np.ravel(x), np.ravel(t))])


# ------------------------------------------------------------ lattice / heat

def heat_matrix(N: int, h: float) -> np.ndarray:
    """Dense Dirichlet Laplacian on N + 1 nodes with pinned ends."""
    A = np.zeros((N + 1, N + 1))
    for i in range(1, N):
        A[i, i - 1] = A[i, i + 1] = 1.0 / h ** 2
        A[i, i] = -2.0 / h ** 2
    return A


def heat_series(u0_fn, L, x, t, modes=200, quad_n=4001):
    """Fourier sine series solution of u_t = u_xx with Dirichlet ends."""
    xs = np.linspace(0.0, L, quad_n)
    u0 = u0_fn(xs)
    out = np.zeros_like(x, dtype=float)
    for m in range(1, modes + 1):
        km = m * np.pi / L
        bm = 2.0 / L * np.trapezoid(u0 * np.sin(km * xs), xs)
        out += bm * np.exp(-km * km * t) * np.sin(km * x)
    return out


# ------------------------------------------------------------ schedule

def mp_ell0():
    """Sum of alpha_i for midpoint lambdas, by mpmath series acceleration."""
    lam = lambda i: (1 / (2 * i + 1) ** 2 + 1 / (2 * i) ** 2) / 2  # noqa: E731

    def alpha(i):
        lp = (lam(i + 1) + lam(i + 2)) / 2
        return (lam(i) - lp) / (1 - 2 * lp)

    return mp.nsum(lambda i: alpha(mp.mpf(i)), [1, mp.inf])
