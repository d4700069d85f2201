"""Piecewise-affine diamond building block with zero boundary trace.

On the diamond D = int co{(+-d, 0), (0, +-1)} the block is, for t >= 0,

    phi = tau+ (x + d - d t)   left piece
    phi = -tau- x              middle piece
    phi = tau+ (x - d + d t)   right piece

with the middle piece |x| <= k d (1 - t), k = tau+/(tau+ + tau-), and it is
even in t. A scaled copy at centre c with scale nu is nu * phi((p - c)/nu).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LABELS = ("Outside", "T1", "T2", "T3", "T4", "R")
OUTSIDE, T1, T2, T3, T4, R = range(6)


@dataclass(frozen=True)
class BuildingBlock:
    tau_plus: float
    tau_minus: float
    delta: float
    center: tuple = (0.0, 0.0)
    nu: float = 1.0

    def __post_init__(self):
        if min(self.tau_plus, self.tau_minus, self.delta, self.nu) <= 0:
            raise ValueError("tau+, tau-, delta and nu must be positive")

    @property
    def k(self):
        return self.tau_plus / (self.tau_plus + self.tau_minus)

    @property
    def area(self):
        return 2.0 * self.nu * self.nu * self.delta

    def vertices(self):
        xc, tc = self.center
        hw, hh = self.nu * self.delta, self.nu
        return np.array([[xc + hw, tc], [xc, tc + hh], [xc - hw, tc], [xc, tc - hh]])


def _local(xc, tc, nu, delta, tp, tm, x, t):
    """Canonical coordinates and piece data, all arrays broadcast together."""
    X = (np.asarray(x, dtype=float) - xc) / nu
    T = (np.asarray(t, dtype=float) - tc) / nu
    aT = np.abs(T)
    a = delta * (1.0 - aT)
    k = tp / (tp + tm)
    inside = (aT < 1.0) & (np.abs(X) < a)
    left = inside & (X <= -k * a)
    right = inside & (X >= k * a)
    mid = inside & ~left & ~right
    return X, T, a, k, inside, left, right, mid


def eval_arrays(xc, tc, nu, delta, tp, tm, x, t):
    """Vectorised value, gradient, primitive and label of scaled blocks.

    Every argument is an array (or scalar) broadcast to a common shape; the
    i-th point is evaluated against the i-th block. Returns a dict with
    phi, phi_x, phi_t, psi, psi_t and label.
    """
    X, T, a, k, inside, left, right, mid = _local(xc, tc, nu, delta, tp, tm, x, t)
    sgn = np.where(T >= 0.0, 1.0, -1.0)
    aT = -delta * sgn                       # d a / d T
    tp = np.broadcast_to(tp, X.shape)
    tm = np.broadcast_to(tm, X.shape)
    nu = np.broadcast_to(nu, X.shape)
    zero = np.zeros(X.shape)
    phi = np.where(left, tp * (X + a), np.where(right, tp * (X - a),
                   np.where(mid, -tm * X, zero)))
    phi_x = np.where(left | right, tp, np.where(mid, -tm, zero))
    phi_t = np.where(left, tp * aT, np.where(right, -tp * aT, zero))
    harm = tp * tm / (tp + tm)
    # x-primitive from the left edge; the middle piece equals a^2 harm/2 - tm X^2/2
    Phi = np.where(left, 0.5 * tp * (X + a) ** 2,
                   np.where(right, 0.5 * tp * (X - a) ** 2,
                            np.where(mid, 0.5 * (a * a * harm - tm * X * X), zero)))
    PhiT = np.where(left, tp * (X + a) * aT, np.where(right, -tp * (X - a) * aT,
                    np.where(mid, a * aT * harm, zero)))
    label = np.full(X.shape, OUTSIDE, dtype=np.int8)
    top = T >= 0.0
    label[right & top] = T1
    label[left & ~top] = T2
    label[left & top] = T3
    label[right & ~top] = T4
    label[mid] = R
    return dict(phi=nu * phi, phi_x=phi_x, phi_t=phi_t, psi=nu * nu * Phi, psi_t=nu * PhiT,
                label=label)


def phi_eval(b: BuildingBlock, x, t):
    """(value, (phi_x, phi_t), label name) of the scaled block at (x, t)."""
    out = eval_arrays(b.center[0], b.center[1], b.nu, b.delta, b.tau_plus, b.tau_minus, x, t)
    if np.ndim(out["phi"]) == 0:
        return (float(out["phi"]), (float(out["phi_x"]), float(out["phi_t"])),
                LABELS[int(out["label"])])
    return out["phi"], (out["phi_x"], out["phi_t"]), out["label"]


def psi_eval(b: BuildingBlock, x, t):
    """(psi, psi_t) where psi(x, t) is the x-primitive of phi from the left.

    Zero on both sides of the diamond since every slice integrates to zero.
    """
    out = eval_arrays(b.center[0], b.center[1], b.nu, b.delta, b.tau_plus, b.tau_minus, x, t)
    if np.ndim(out["psi"]) == 0:
        return float(out["psi"]), float(out["psi_t"])
    return out["psi"], out["psi_t"]


def canonical_polygons(k: float, delta: float = 1.0) -> dict:
    """Vertices of the five pieces of D_delta (unit scale, centre 0)."""
    d = delta
    return {
        "T1": np.array([[k * d, 0.0], [d, 0.0], [0.0, 1.0]]),
        "T2": np.array([[-k * d, 0.0], [0.0, -1.0], [-d, 0.0]]),
        "T3": np.array([[-d, 0.0], [-k * d, 0.0], [0.0, 1.0]]),
        "T4": np.array([[d, 0.0], [k * d, 0.0], [0.0, -1.0]]),
        "R": np.array([[k * d, 0.0], [0.0, 1.0], [-k * d, 0.0], [0.0, -1.0]]),
    }


def polygons(b: BuildingBlock) -> dict:
    """Physical vertices of the pieces of a scaled block."""
    xc, tc = b.center
    out = {}
    for name, v in canonical_polygons(b.k, b.delta).items():
        out[name] = np.column_stack([xc + b.nu * v[:, 0], tc + b.nu * v[:, 1]])
    return out


def polygon_area(v: np.ndarray) -> float:
    x, y = v[:, 0], v[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def subdomain_areas(b: BuildingBlock) -> dict:
    """Exact areas of T1..T4 and R."""
    return {name: polygon_area(v) for name, v in polygons(b).items()}


def max_abs_phi(tp, tm, delta, nu=1.0):
    return nu * delta * tp * tm / (tp + tm)


def max_abs_psi(tp, tm, delta, nu=1.0):
    return nu * nu * delta * delta * tp * tm / (2.0 * (tp + tm))


def max_abs_psi_t(tp, tm, delta, nu=1.0):
    return nu * delta * delta * tp * tm / (tp + tm)
