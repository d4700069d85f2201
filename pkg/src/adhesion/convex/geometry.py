"""Two-wall geometry in the (density, flux) plane."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import model
from ..model import FluxParams, Thresholds


@dataclass
class WallGeometry:
    """Walls K- = {(w1(r), r)} and K+ = {(w2(r), r)} over r in [r1, r2].

    w1 = s^- and w2 = s^+ are the monotone inverse branches of rho.
    """

    p: FluxParams
    th: Thresholds
    n_curve: int = 4001

    def __post_init__(self):
        if self.th.r1 is None or self.th.r2 is None:
            raise ValueError("thresholds need flux levels r1, r2")
        self.r1, self.r2 = float(self.th.r1), float(self.th.r2)
        r = np.linspace(self.r1, self.r2, self.n_curve)
        self._curve_r = r
        self._curve_minus = np.column_stack([self.omega1(r), r])
        self._curve_plus = np.column_stack([self.omega2(r), r])
        if not self._curve_minus[:, 0].max() < self._curve_plus[:, 0].min():
            raise ValueError("walls overlap: max w1 >= min w2")

    @property
    def S_M(self):
        return self.th.S_M

    @property
    def S_m(self):
        return self.th.S_m

    @property
    def d0(self):
        return self.th.d0

    def _table(self, branch):
        tab = getattr(self, "_tab_" + branch, None)
        if tab is None:
            lo = model.inverse_branch(self.p, self.r1, branch)
            hi = model.inverse_branch(self.p, self.r2, branch)
            s = np.linspace(min(lo, hi), max(lo, hi), 20001)
            tab = (self._coord(np.asarray(model.rho(self.p, s)), branch), s)
            setattr(self, "_tab_" + branch, tab)
        return tab

    def _coord(self, r, branch):
        # s+ has a square-root fold at rho(s0+); sqrt(r - rho(s0+)) unfolds it
        if branch == "plus":
            return np.sqrt(np.maximum(r - self.th.rho_at_s0_plus, 0.0))
        return r

    def _inverse(self, r, branch):
        # both branches are increasing: table guess, then guarded Newton
        q_tab, s_tab = self._table(branch)
        scalar = np.isscalar(r)
        rr = np.clip(np.asarray(r, dtype=float), self.r1, self.r2)
        s = np.interp(self._coord(rr, branch), q_tab, s_tab)
        s = model._newton_polish(self.p, s, rr, s_tab[0], s_tab[-1], steps=3)
        return float(s) if scalar else s

    def omega1(self, r):
        return self._inverse(r, "minus")

    def omega2(self, r):
        return self._inverse(r, "plus")

    def band(self, lam):
        """Open flux interval of U^lam."""
        return ((1 - lam) * self.r1 + lam * self.r2, lam * self.r1 + (1 - lam) * self.r2)

    def combo(self, lam, r):
        """Point lam*w1 + (1-lam)*w2 at level r (lam near 0 hugs the right wall)."""
        return lam * self.omega1(r) + (1 - lam) * self.omega2(r)

    def in_U_lambda(self, s, r, lam):
        lo, hi = self.band(lam)
        w1, w2 = self.omega1(r), self.omega2(r)
        return ((r > lo) & (r < hi) & (s > (1 - lam) * w1 + lam * w2)
                & (s < lam * w1 + (1 - lam) * w2))

    def in_U(self, s, r):
        return self.in_U_lambda(s, r, 0.0)

    def in_U_plus(self, s, r, lam_i, lam_next):
        """U_i^+: flux in the lam_{i+1} band, density between the lam_i and
        lam_{i+1} combinations next to the right wall."""
        lo, hi = self.band(lam_next)
        w1, w2 = self.omega1(r), self.omega2(r)
        return ((r > lo) & (r < hi) & (s > lam_i * w1 + (1 - lam_i) * w2)
                & (s < lam_next * w1 + (1 - lam_next) * w2))

    def in_U_minus(self, s, r, lam_i, lam_next):
        lo, hi = self.band(lam_next)
        w1, w2 = self.omega1(r), self.omega2(r)
        return ((r > lo) & (r < hi) & (s > (1 - lam_next) * w1 + lam_next * w2)
                & (s < (1 - lam_i) * w1 + lam_i * w2))

    def shell_margin(self, s, r, lam_i, lam_next, side):
        """Signed distance-like margin of (s, r) inside U_i^side.

        Positive inside. Density margins are absolute; the flux margin is
        reported separately as the second output.
        """
        lo, hi = self.band(lam_next)
        w1, w2 = self.omega1(r), self.omega2(r)
        if side == "+":
            a = lam_i * w1 + (1 - lam_i) * w2
            b = lam_next * w1 + (1 - lam_next) * w2
        else:
            a = (1 - lam_next) * w1 + lam_next * w2
            b = (1 - lam_i) * w1 + lam_i * w2
        return np.minimum(s - a, b - s), np.minimum(r - lo, hi - r)

    def dist_K(self, s, r, side):
        """Euclidean distance from (s, r) to K+ ('+') or K- ('-')."""
        curve = self._curve_plus if side == "+" else self._curve_minus
        pts = np.column_stack([np.ravel(s), np.ravel(r)])
        from scipy.spatial import cKDTree

        tree = getattr(self, "_tree" + side, None)
        if tree is None:
            tree = cKDTree(curve)
            setattr(self, "_tree" + side, tree)
        d, idx = tree.query(pts)
        # refine against the two adjacent polyline segments
        best = d
        for off in (-1, 0):
            i0 = np.clip(idx + off, 0, len(curve) - 2)
            a, b = curve[i0], curve[i0 + 1]
            ab = b - a
            t = np.clip(np.einsum("ij,ij->i", pts - a, ab) / np.einsum("ij,ij->i", ab, ab), 0, 1)
            proj = a + t[:, None] * ab
            best = np.minimum(best, np.linalg.norm(pts - proj, axis=1))
        return best.reshape(np.shape(s))

    def dist_to_K(self, s, r):
        return np.minimum(self.dist_K(s, r, "+"), self.dist_K(s, r, "-"))

    @property
    def C_U(self):
        """sup |(s, r)| over U."""
        return float(np.max(np.hypot(self._curve_plus[:, 0], self._curve_plus[:, 1])))
