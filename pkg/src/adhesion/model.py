"""Fluxes, equation types and threshold densities for u_t = (rho(u))_xx.

The diffusivity is sigma(s) = 3 a b s^2 - 4 a s + 1 and the flux is its
antiderivative rho(s) = a b s^3 - 2 a s^2 + s, where a is the adhesion
constant and b the volume-filling constant.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Literal

import numpy as np
from scipy.optimize import elementwise

from .errors import OutOfRange, WrongRegime

VARIANTS = ("F", "FD", "FDF", "FDB", "FDBD", "FDBDF")
BOUNDARY_TOL = 1e-14


@dataclass(frozen=True)
class FluxParams:
    alpha: float
    beta: float

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0 and 0.0 <= self.beta <= 1.0):
            raise ValueError(f"alpha, beta must lie in [0, 1], got {self.alpha}, {self.beta}")


def sigma(p: FluxParams, s):
    """Diffusivity sigma(s), evaluated in Horner form."""
    s = np.asarray(s, dtype=float) if not np.isscalar(s) else float(s)
    return (3.0 * p.alpha * p.beta * s - 4.0 * p.alpha) * s + 1.0


def rho(p: FluxParams, s):
    s = np.asarray(s, dtype=float) if not np.isscalar(s) else float(s)
    return ((p.alpha * p.beta * s - 2.0 * p.alpha) * s + 1.0) * s


def sigma_prime(p: FluxParams, s):
    return 6.0 * p.alpha * p.beta * np.asarray(s, dtype=float) - 4.0 * p.alpha


@dataclass(frozen=True)
class EquationClass:
    variant: str
    degenerate_points: tuple
    forward_intervals: tuple
    backward_intervals: tuple
    z_rho: tuple
    z_sigma: tuple


def _cmp(x: Fraction, y: Fraction, tol: float) -> int:
    """Three-way comparison, exact unless the gap is within tol."""
    if x == y or abs(float(x - y)) <= tol:
        return 0
    return 1 if x > y else -1


def _variant(alpha: float, beta: float, tol: float) -> str:
    a, b = Fraction(alpha), Fraction(beta)
    if a == 0:
        return "F"
    crit = 1 / (4 - 3 * b)
    if b > Fraction(2, 3) and _cmp(b, Fraction(2, 3), tol) != 0:
        c1 = _cmp(a, Fraction(3, 4) * b, tol)
        if c1 < 0:
            return "F"
        if c1 == 0:
            return "FDF"
        c2 = _cmp(a, crit, tol)
        if c2 < 0:
            return "FDBDF"
        return "FDBD" if c2 == 0 else "FDB"
    c = _cmp(a, crit, tol)
    if c < 0:
        return "F"
    return "FD" if c == 0 else "FDB"


def sigma_zeros(p: FluxParams) -> tuple:
    """Real zeros of sigma in [0, 1], ascending."""
    a, b = p.alpha, p.beta
    if a == 0.0:
        return ()
    if b == 0.0:
        z = 1.0 / (4.0 * a)
        return (z,) if z <= 1.0 else ()
    disc = 4.0 * a * a - 3.0 * a * b
    if disc < 0.0:
        return ()
    root = np.sqrt(disc)
    # stable quadratic roots: product of roots is 1/(3ab)
    big = (2.0 * a + root) / (3.0 * a * b)
    small = 1.0 / (3.0 * a * b * big)
    out = sorted({small, big})
    return tuple(z for z in out if -1e-15 <= z <= 1.0 + 1e-15)


def classify(p: FluxParams, tol: float = BOUNDARY_TOL) -> EquationClass:
    """Six-way type of the equation on [0, 1] for the given constants."""
    variant = _variant(p.alpha, p.beta, tol)
    zeros = sigma_zeros(p)
    if variant == "F":
        zeros = ()
    elif variant in ("FD", "FDBD"):
        # boundary cases: a root sits at s = 1 (possibly off by rounding)
        zeros = tuple(z for z in zeros if z < 1.0 - 1e-9) + (1.0,)
    elif variant == "FDF":
        zeros = (2.0 / (3.0 * p.beta),)
    elif variant == "FDB":
        zeros = (min(zeros),) if zeros else (1.0,)
    forward, backward = _sign_intervals(p, zeros)
    return EquationClass(
        variant=variant,
        degenerate_points=zeros,
        forward_intervals=forward,
        backward_intervals=backward,
        z_rho=rho_zeros(p),
        z_sigma=zeros,
    )


def _sign_intervals(p: FluxParams, zeros) -> tuple:
    edges = [0.0, *zeros, 1.0]
    forward, backward = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        if hi <= lo:
            continue
        mid = 0.5 * (lo + hi)
        (forward if sigma(p, mid) > 0 else backward).append((lo, hi))
    return tuple(forward), tuple(backward)


def rho_zeros(p: FluxParams) -> tuple:
    """Real zeros of rho in (0, 1]."""
    a, b = p.alpha, p.beta
    # rho(s) = s (a b s^2 - 2 a s + 1)
    roots = np.roots([a * b, -2.0 * a, 1.0]) if a * b > 0 else (
        np.array([1.0 / (2.0 * a)]) if a > 0 else np.array([]))
    out = [float(r.real) for r in np.atleast_1d(roots)
           if abs(complex(r).imag) < 1e-14 and 0.0 < r.real <= 1.0]
    return tuple(sorted(out))


@dataclass(frozen=True)
class Thresholds:
    s0_minus: float
    s0_plus: float
    rho_at_s0_plus: float
    r_star: float
    s1_minus: float
    s1_plus: float
    s2_minus: float
    s2_plus: float
    r1: float | None = None
    r2: float | None = None
    S_M: float | None = None
    S_m: float | None = None
    d0: float | None = None
    extras: dict = field(default_factory=dict, compare=False)


def _require_fdbdf(p: FluxParams):
    v = classify(p).variant
    if v != "FDBDF":
        raise WrongRegime(f"thresholds need the FDBDF regime, got {v} for {p}")


def s0_pair(p: FluxParams) -> tuple[float, float]:
    a, b = p.alpha, p.beta
    root = np.sqrt(4.0 * a * a - 3.0 * a * b)
    plus = (2.0 * a + root) / (3.0 * a * b)
    minus = 1.0 / (3.0 * a * b * plus)
    return minus, plus


def _newton_polish(p, s, r, lo, hi, steps=5):
    for _ in range(steps):
        d = sigma(p, s)
        safe = np.abs(d) > 1e-8
        step = np.where(safe, (rho(p, s) - r) / np.where(safe, d, 1.0), 0.0)
        cand = np.clip(s - step, lo, hi)
        better = np.abs(rho(p, cand) - r) <= np.abs(rho(p, s) - r)
        s = np.where(better, cand, s)
    return s


def inverse_branch(p: FluxParams, r, branch: Literal["minus", "plus"],
                   check: bool = True):
    """s^-(r) in (0, s0-] or s^+(r) in [s0+, 1] with rho(s) = r.

    Accepts scalars or arrays. Bracketed root finding on the monotone
    branch followed by at most five guarded Newton steps.
    """
    s0m, s0p = s0_pair(p)
    r_lo = float(rho(p, s0p))
    r_hi = min(float(rho(p, s0m)), float(rho(p, 1.0)))
    scalar = np.isscalar(r)
    rr = np.atleast_1d(np.asarray(r, dtype=float))
    if check:
        slack = 1e-14
        if np.any(rr < r_lo - slack) or np.any(rr > r_hi + slack):
            raise OutOfRange(f"flux level outside [{r_lo}, {r_hi}]")
    if branch == "plus":
        lo, hi = s0p, 1.0
    elif branch == "minus":
        lo, hi = np.finfo(float).eps, s0m
    else:
        raise ValueError(branch)
    lo_a = np.full_like(rr, lo)
    hi_a = np.full_like(rr, hi)
    res = elementwise.find_root(
        lambda s, c: rho(p, s) - c, (lo_a, hi_a), args=(rr,),
        tolerances=dict(xatol=1e-15, xrtol=2e-16, fatol=1e-17, frtol=0.0),
        maxiter=200)
    s = np.clip(res.x, lo, hi)
    # exact endpoints where the level matches the branch end
    if branch == "plus":
        s = np.where(rr <= r_lo, s0p, s)
    s = _newton_polish(p, s, rr, lo, hi)
    return float(s[0]) if scalar else s


def thresholds(p: FluxParams, r1: float | None = None, r2: float | None = None,
               n_sample: int = 2001) -> Thresholds:
    """Critical densities and flux levels of the FDBDF regime.

    When r1 < r2 are given, the wall statistics S_M, S_m and d0 are filled.
    """
    _require_fdbdf(p)
    s0m, s0p = s0_pair(p)
    r0p = float(rho(p, s0p))
    r_star = min(float(rho(p, s0m)), float(rho(p, 1.0)))
    s1m = inverse_branch(p, r0p, "minus")
    s2m = s0m if r_star == float(rho(p, s0m)) else inverse_branch(p, r_star, "minus")
    s2p = 1.0 if r_star == float(rho(p, 1.0)) else inverse_branch(p, r_star, "plus")
    th = Thresholds(s0_minus=s0m, s0_plus=s0p, rho_at_s0_plus=r0p, r_star=r_star,
                    s1_minus=s1m, s1_plus=s0p, s2_minus=s2m, s2_plus=s2p)
    if r1 is None or r2 is None:
        return th
    return with_levels(p, th, r1, r2, n_sample=n_sample)


def with_levels(p: FluxParams, th: Thresholds, r1: float, r2: float,
                n_sample: int = 2001) -> Thresholds:
    if not (th.rho_at_s0_plus - 1e-15 <= r1 < r2 <= th.r_star + 1e-15):
        raise OutOfRange(f"need rho(s0+) <= r1 < r2 <= r*, got {r1}, {r2}")
    r = np.linspace(r1, r2, n_sample)
    gap = inverse_branch(p, r, "plus") - inverse_branch(p, r, "minus")
    # S_M, S_m from a dense sample refined by a bounded scalar search
    from scipy.optimize import minimize_scalar

    def gap_at(x):
        return inverse_branch(p, x, "plus") - inverse_branch(p, x, "minus")

    i_max, i_min = int(np.argmax(gap)), int(np.argmin(gap))
    S_M, S_m = float(gap[i_max]), float(gap[i_min])
    for idx, sign in ((i_max, -1.0), (i_min, 1.0)):
        a = r[max(idx - 1, 0)]
        b = r[min(idx + 1, n_sample - 1)]
        if b > a:
            out = minimize_scalar(lambda x: sign * gap_at(x), bounds=(a, b),
                                  method="bounded", options=dict(xatol=1e-14))
            val = float(gap_at(out.x))
            if sign < 0:
                S_M = max(S_M, val)
            else:
                S_m = min(S_m, val)
    d0 = float(inverse_branch(p, r1, "plus") - inverse_branch(p, r2, "minus"))
    return replace(th, r1=float(r1), r2=float(r2), S_M=S_M, S_m=S_m, d0=d0)


def check_chain(th: Thresholds) -> bool:
    """Ordering 0 < s1- < s2- <= s0- < s0+ = s1+ < s2+ <= 1."""
    return (0.0 < th.s1_minus < th.s2_minus <= th.s0_minus < th.s0_plus
            and th.s0_plus == th.s1_plus and th.s1_plus < th.s2_plus <= 1.0)
