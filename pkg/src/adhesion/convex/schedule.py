"""In-approximation schedule: the shrinking shells U^lambda_i and their constants."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import WallGeometry


def lambda_interval(i):
    """Open interval (1/(2i+1)^2, 1/(2i)^2) that lambda_i must lie in."""
    i = np.asarray(i, dtype=float)
    return 1.0 / (2 * i + 1) ** 2, 1.0 / (2 * i) ** 2


def lambda_midpoint(i):
    lo, hi = lambda_interval(i)
    return 0.5 * (lo + hi)


def _alpha_from(lam, lam_p1, lam_p2):
    lp = 0.5 * (lam_p1 + lam_p2)
    return (lam - lp) / (1.0 - 2.0 * lp)


def ell0_sum(head: np.ndarray, n_tail: int = 2_000_000) -> float:
    """Sum of alpha_i over all i.

    ``head`` holds the (possibly perturbed) lambda_1..lambda_m; the rest
    follow the midpoint rule. The tail decays like 1/i^3, so partial sums
    at N and 2N are Richardson-extrapolated assuming an N^-2 remainder.
    """
    m = head.size

    def lam_at(idx):
        out = lambda_midpoint(idx)
        sel = idx <= m
        out = np.where(sel, head[np.clip(idx - 1, 0, m - 1)], out)
        return out

    def partial(N):
        total = 0.0
        chunk = 1_000_000
        for start in range(1, N + 1, chunk):
            idx = np.arange(start, min(start + chunk, N + 1))
            a = _alpha_from(lam_at(idx), lam_at(idx + 1), lam_at(idx + 2))
            total += float(np.sum(a[::-1]))
        return total

    s1 = partial(n_tail // 2)
    s2 = partial(n_tail)
    return s2 + (s2 - s1) / 3.0


@dataclass
class Schedule:
    i_max: int
    epsilon: float
    lambdas: np.ndarray          # lambda_1 .. lambda_{i_max+2}
    lambda_prime: np.ndarray     # lambda'_1 .. lambda'_{i_max+1}
    alpha_seq: np.ndarray        # alpha_1 .. alpha_{i_max}
    ell0: float
    kappa0: float
    beta_seq: np.ndarray         # beta_1 .. beta_{i_max+1}
    eta: np.ndarray | None = None
    delta: np.ndarray | None = None        # admissible delta_i (strict bound)
    delta_block: np.ndarray | None = None  # aspect cap actually used by blocks
    i0: int | None = None
    r1: float | None = None
    r2: float | None = None
    L: float = 1.0
    seed: int = 0
    info: dict = field(default_factory=dict)

    def lam(self, i):
        """lambda_i, 1-based."""
        return float(self.lambdas[i - 1])

    def lam_p(self, i):
        return float(self.lambda_prime[i - 1])

    def beta(self, i):
        return float(self.beta_seq[i - 1])


def build_schedule(i_max: int = 3, epsilon: float = 1.0, kappa0_fraction: float = 0.5,
                   seed: int = 0, wall: WallGeometry | None = None, L: float = 1.0,
                   n_eta: int = 1000, image=None) -> Schedule:
    """Midpoint lambdas and the derived constants.

    With ``wall`` the wall-dependent eta_i, delta_i and i0 are filled.
    ``image`` is an optional (s, r) sample of the subsolution gradient; if a
    sample sits on some boundary of U^lambda_i the lambda is perturbed with
    the seeded generator and retested.
    """
    if i_max < 1:
        raise ValueError("i_max must be >= 1")
    m = i_max + 2
    idx = np.arange(1, m + 1)
    lam = lambda_midpoint(idx).astype(float)
    rng = np.random.default_rng(seed)
    perturbed = []
    if image is not None and wall is not None:
        s_img, r_img = (np.ravel(a) for a in image)
        for k in range(m):
            for _ in range(20):
                if not _on_boundary(wall, s_img, r_img, lam[k]):
                    break
                lo, hi = lambda_interval(k + 1)
                lam[k] = lo + (hi - lo) * rng.uniform(0.25, 0.75)
                perturbed.append(k + 1)
    lam_p = 0.5 * (lam[:-1] + lam[1:])
    alpha = np.array([_alpha_from(lam[i], lam[i + 1], lam[i + 2]) for i in range(i_max)])
    ell0 = ell0_sum(lam)
    if not (0.0 < ell0 < 1.0):
        raise ValueError(f"ell0 = {ell0} outside (0, 1)")
    kappa0 = 1.0 + kappa0_fraction * (1.0 / ell0 - 1.0)
    beta = np.empty(i_max + 1)
    beta[0] = 1.0 - 1.0 / kappa0
    for i in range(i_max):
        beta[i + 1] = beta[i] + alpha[i] / (kappa0 * ell0)
    sch = Schedule(i_max=i_max, epsilon=epsilon, lambdas=lam, lambda_prime=lam_p,
                   alpha_seq=alpha, ell0=ell0, kappa0=kappa0, beta_seq=beta, L=L, seed=seed,
                   info=dict(perturbed=perturbed))
    if wall is not None:
        _fill_wall_constants(sch, wall, n_eta)
    return sch


def _on_boundary(wall, s, r, lam, tol=1e-12):
    lo, hi = wall.band(lam)
    w1, w2 = wall.omega1(r), wall.omega2(r)
    a = (1 - lam) * w1 + lam * w2
    b = lam * w1 + (1 - lam) * w2
    inside_r = (r >= lo - tol) & (r <= hi + tol)
    inside_s = (s >= a - tol) & (s <= b + tol)
    hit = ((np.abs(r - lo) < tol) | (np.abs(r - hi) < tol)) & inside_s
    hit |= ((np.abs(s - a) < tol) | (np.abs(s - b) < tol)) & inside_r
    return bool(np.any(hit))


def _eta(wall: WallGeometry, sch: Schedule, i: int, n: int) -> float:
    lam_i, lam_n, lp = sch.lam(i), sch.lam(i + 1), sch.lam_p(i)
    lo, hi = wall.band(lam_n)
    r = np.linspace(lo, hi, n)
    w1, w2 = wall.omega1(r), wall.omega2(r)
    out = [(lam_i - lam_n) * (wall.r2 - wall.r1)]
    pairs = [
        (lp * w1 + (1 - lp) * w2, lam_i * w1 + (1 - lam_i) * w2),
        (lp * w1 + (1 - lp) * w2, lam_n * w1 + (1 - lam_n) * w2),
        ((1 - lp) * w1 + lp * w2, (1 - lam_i) * w1 + lam_i * w2),
        ((1 - lp) * w1 + lp * w2, (1 - lam_n) * w1 + lam_n * w2),
    ]
    for a, b in pairs:
        ds = a[:, None] - b[None, :]
        dr = r[:, None] - r[None, :]
        out.append(float(np.sqrt(np.min(ds * ds + dr * dr))))
    return min(out)


def _fill_wall_constants(sch: Schedule, wall: WallGeometry, n_eta: int):
    sch.r1, sch.r2 = wall.r1, wall.r2
    eta = np.array([_eta(wall, sch, i, n_eta) for i in range(1, sch.i_max + 1)])
    i = np.arange(1, sch.i_max + 1)
    eps_part = sch.epsilon / (2.0 ** (i + 1) * np.sqrt(1 + sch.L ** 2) * wall.S_M)
    sch.eta = eta
    sch.delta = 0.99 * np.minimum(np.minimum(eps_part, eta / 4.0), 1.0)
    sch.delta_block = 0.99 * np.minimum(eps_part, 1.0)
    sch.i0 = find_i0(sch, wall)


def find_i0(sch: Schedule, wall: WallGeometry, n: int = 200, i_cap: int = 50) -> int:
    """Smallest i >= 2 with U_{i-1}^+ and U_{i-1}^- inside the d0/4 plateau of the
    cutoff around K+ and K- respectively (checked on a sample of each shell)."""
    target = wall.d0 / 4.0
    for i in range(2, i_cap):
        k = i - 1
        lam_k = sch.lam(k) if k <= len(sch.lambdas) else lambda_midpoint(k)
        lam_n = sch.lam(k + 1) if k + 1 <= len(sch.lambdas) else lambda_midpoint(k + 1)
        lo, hi = wall.band(lam_n)
        r = np.linspace(lo, hi, n)
        f = np.linspace(0.0, 1.0, n)
        R, F = np.meshgrid(r, f)
        w1, w2 = wall.omega1(R), wall.omega2(R)
        a_p = lam_k * w1 + (1 - lam_k) * w2
        b_p = lam_n * w1 + (1 - lam_n) * w2
        s_p = a_p + F * (b_p - a_p)
        a_m = (1 - lam_n) * w1 + lam_n * w2
        b_m = (1 - lam_k) * w1 + lam_k * w2
        s_m = a_m + F * (b_m - a_m)
        if (np.max(wall.dist_K(s_p, R, "+")) <= target
                and np.max(wall.dist_K(s_m, R, "-")) <= target):
            return i
    return i_cap
