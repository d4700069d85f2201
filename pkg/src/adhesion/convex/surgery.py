"""Inductive surgeries: stage-wise diamond perturbations of the subsolution z*.

Stage 1 packs Q_1 with diamonds anchored on z* = (v*, w*). Stage i >= 2
packs the new shell region Q_i and re-packs every triangle and rhombus of
stage i-1, anchored on z_{i-1}. In every stage the anchor (s, r) fixes the
slopes through

    tau+ = lam'_i w1(r) + (1 - lam'_i) w2(r) - s,
    tau- = s - (1 - lam'_i) w1(r) - lam'_i w2(r),

so that the triangles land next to the right wall and the rhombus next to
the left wall.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from ..errors import AnchorOutsideU, EmptyRegion
from ..pde import RegionMask, StarFields, w_x_field
from .blocks import R, T1, T2, T3, T4, eval_arrays
from .geometry import WallGeometry
from .packing import CellRegion, pack_cells_quadtree, pack_polygon
from .schedule import Schedule

PIECE_SIGNS = {T1: (1.0, 1.0), T2: (-1.0, -1.0), T3: (-1.0, 1.0), T4: (1.0, -1.0)}


# ------------------------------------------------------------------ star

class StarEval:
    """Bilinear evaluation of the subsolution z* and its gradient."""

    def __init__(self, sf: StarFields):
        self.sf = sf
        self.x = sf.grid.x
        self.t = sf.times
        self.dx = sf.grid.dx
        self.dt = sf.grid.dt
        self.flux = sf.flux
        self.wx = w_x_field(sf)
        self.vt = np.gradient(sf.flux_star, self.dx, axis=1, edge_order=2)
        u = sf.u_star
        c_max = np.maximum(np.maximum(u[:-1, :-1], u[:-1, 1:]), np.maximum(u[1:, :-1], u[1:, 1:]))
        c_min = np.minimum(np.minimum(u[:-1, :-1], u[:-1, 1:]), np.minimum(u[1:, :-1], u[1:, 1:]))
        # bilinear interpolants attain their extremes at the nodes
        self._umax = _RowMaxTable(c_max)
        self._umin = _RowMaxTable(-c_min)

    def _locate(self, x, t):
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        j = np.clip(np.floor(x / self.dx).astype(np.int64), 0, self.x.size - 2)
        n = np.clip(np.floor(t / self.dt).astype(np.int64), 0, self.t.size - 2)
        fx = np.clip((x - self.x[j]) / self.dx, 0.0, 1.0)
        ft = np.clip((t - self.t[n]) / self.dt, 0.0, 1.0)
        return j, n, fx, ft

    def bilinear(self, F, x, t):
        j, n, fx, ft = self._locate(x, t)
        return ((1 - ft) * ((1 - fx) * F[n, j] + fx * F[n, j + 1])
                + ft * ((1 - fx) * F[n + 1, j] + fx * F[n + 1, j + 1]))

    def u(self, x, t):
        return self.bilinear(self.sf.u_star, x, t)

    def fields(self, x, t):
        u = self.u(x, t)
        return dict(v=self.bilinear(self.sf.v_star, x, t), w=self.bilinear(self.sf.w_star, x, t),
                    v_x=u, v_t=self.bilinear(self.vt, x, t), w_x=self.bilinear(self.wx, x, t),
                    w_t=np.asarray(self.flux.rho(u), dtype=float))

    def u_range(self, x, t, hw, hh):
        """Min and max of u* over the boxes [x -+ hw] x [t -+ hh]."""
        j0 = np.clip(np.floor((x - hw) / self.dx).astype(np.int64), 0, self.x.size - 2)
        j1 = np.clip(np.floor((x + hw) / self.dx).astype(np.int64), 0, self.x.size - 2)
        n0 = np.clip(np.floor((t - hh) / self.dt).astype(np.int64), 0, self.t.size - 2)
        n1 = np.clip(np.floor((t + hh) / self.dt).astype(np.int64), 0, self.t.size - 2)
        return -self._umin.query(n0, n1, j0, j1), self._umax.query(n0, n1, j0, j1)


class _RowMaxTable:
    """Range maxima over row intervals and (short) column intervals."""

    def __init__(self, a: np.ndarray, block: int = 16):
        self.block = block
        nr, nc = a.shape
        nb = -(-nr // block)
        pad = np.full((nb * block, nc), -np.inf)
        pad[:nr] = a
        coarse = pad.reshape(nb, block, nc).max(axis=1)
        self.levels = [coarse]
        k = 1
        while (1 << k) <= nb:
            prev = self.levels[-1]
            half = 1 << (k - 1)
            self.levels.append(np.maximum(prev[:-half], prev[half:]))
            k += 1

    def query(self, n0, n1, j0, j1):
        b0 = n0 // self.block
        b1 = n1 // self.block
        length = b1 - b0 + 1
        k = np.floor(np.log2(np.maximum(length, 1))).astype(np.int64)
        out = np.full(np.shape(n0), -np.inf)
        span = int(np.max(j1 - j0)) if np.size(j0) else 0
        for off in range(span + 1):
            j = np.minimum(j0 + off, j1)
            for kk in np.unique(k):
                sel = k == kk
                lev = self.levels[kk]
                v = np.maximum(lev[b0[sel], j[sel]], lev[b1[sel] - (1 << kk) + 1, j[sel]])
                out[sel] = np.maximum(out[sel], v)
        return out


# ---------------------------------------------------------------- blocks

@dataclass
class BlockSet:
    """Struct of arrays for the diamonds of one stage."""
    xc: np.ndarray
    tc: np.ndarray
    nu: np.ndarray
    delta: np.ndarray
    tp: np.ndarray
    tm: np.ndarray
    s_anchor: np.ndarray
    r_anchor: np.ndarray
    parent: np.ndarray           # index into the previous stage, -1 for Q_i diamonds
    parent_label: np.ndarray     # piece label of the parent, 0 for Q_i diamonds
    lip_x: np.ndarray            # sum of tau+ delta over the diamond and its ancestors
    lip_t: np.ndarray            # sum of tau+ delta^2 over the diamond and its ancestors

    def __post_init__(self):
        self._index = None

    def __len__(self):
        return int(self.xc.size)

    @classmethod
    def empty(cls):
        z = np.empty(0)
        zi = np.empty(0, dtype=np.int64)
        return cls(z, z, z, z, z, z, z, z, zi, np.empty(0, dtype=np.int8), z, z)

    @classmethod
    def concat(cls, parts):
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls.empty()
        return cls(*(np.concatenate([getattr(p, f) for p in parts]) for f in
                     ("xc", "tc", "nu", "delta", "tp", "tm", "s_anchor", "r_anchor", "parent",
                      "parent_label", "lip_x", "lip_t")))

    def take(self, sel):
        return BlockSet(self.xc[sel], self.tc[sel], self.nu[sel], self.delta[sel],
                        self.tp[sel], self.tm[sel], self.s_anchor[sel], self.r_anchor[sel],
                        self.parent[sel], self.parent_label[sel], self.lip_x[sel],
                        self.lip_t[sel])

    @property
    def k(self):
        return self.tp / (self.tp + self.tm)

    @property
    def areas(self):
        return 2.0 * self.nu * self.nu * self.delta

    def _build_index(self):
        hw = self.nu * self.delta
        hh = self.nu
        bx = max(float(np.median(2 * hw)) * 2, 1e-9)
        bt = max(float(np.median(2 * hh)) * 2, 1e-9)
        x0, t0 = float(np.min(self.xc - hw)), float(np.min(self.tc - hh))
        i0 = np.floor((self.xc - hw - x0) / bx).astype(np.int64)
        i1 = np.floor((self.xc + hw - x0) / bx).astype(np.int64)
        k0 = np.floor((self.tc - hh - t0) / bt).astype(np.int64)
        k1 = np.floor((self.tc + hh - t0) / bt).astype(np.int64)
        nbx, nbt = int(i1.max()) + 1, int(k1.max()) + 1
        ids, keys = [], []
        ni, nk = i1 - i0 + 1, k1 - k0 + 1
        for blk in np.nonzero((ni * nk) > 0)[0]:
            ii = np.arange(i0[blk], i1[blk] + 1)
            kk = np.arange(k0[blk], k1[blk] + 1)
            key = (ii[:, None] * nbt + kk[None, :]).ravel()
            keys.append(key)
            ids.append(np.full(key.size, blk))
        keys = np.concatenate(keys)
        ids = np.concatenate(ids)
        order = np.argsort(keys, kind="stable")
        keys, ids = keys[order], ids[order]
        ptr = np.searchsorted(keys, np.arange(nbx * nbt + 1))
        self._index = (x0, t0, bx, bt, nbx, nbt, ptr, ids)

    def locate(self, x, t):
        """Index of the diamond containing each point, -1 if none."""
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        out = np.full(np.broadcast(x, t).shape, -1, dtype=np.int64)
        if len(self) == 0:
            return out
        if self._index is None:
            self._build_index()
        x0, t0, bx, bt, nbx, nbt, ptr, ids = self._index
        xf, tf = np.broadcast_to(x, out.shape).ravel(), np.broadcast_to(t, out.shape).ravel()
        flat = out.ravel()
        i = np.floor((xf - x0) / bx).astype(np.int64)
        k = np.floor((tf - t0) / bt).astype(np.int64)
        ok = (i >= 0) & (i < nbx) & (k >= 0) & (k < nbt)
        pts = np.nonzero(ok)[0]
        key = i[pts] * nbt + k[pts]
        start, stop = ptr[key], ptr[key + 1]
        n_c = stop - start
        for c in range(int(n_c.max()) if n_c.size else 0):
            sel = n_c > c
            p = pts[sel]
            j = ids[start[sel] + c]
            inside = (np.abs(xf[p] - self.xc[j]) / (self.nu[j] * self.delta[j])
                      + np.abs(tf[p] - self.tc[j]) / self.nu[j]) < 1.0
            flat[p[inside]] = j[inside]
        return flat.reshape(out.shape)

    def evaluate(self, x, t):
        """Contribution (phi, phi_x, phi_t, psi, psi_t, label, idx) at points."""
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        idx = self.locate(x, t)
        shape = idx.shape
        res = {name: np.zeros(shape) for name in ("phi", "phi_x", "phi_t", "psi", "psi_t")}
        res["label"] = np.zeros(shape, dtype=np.int8)
        res["idx"] = idx
        m = idx >= 0
        if m.any():
            j = idx[m]
            xs, ts = np.broadcast_to(x, shape)[m], np.broadcast_to(t, shape)[m]
            out = eval_arrays(self.xc[j], self.tc[j], self.nu[j], self.delta[j], self.tp[j],
                              self.tm[j], xs, ts)
            for name in ("phi", "phi_x", "phi_t", "psi", "psi_t", "label"):
                res[name][m] = out[name]
        return res

    def piece_vertices(self, label: int) -> np.ndarray:
        """(n, m, 2) physical vertices of piece ``label`` of every diamond."""
        k = self.k
        hw, hh = self.nu * self.delta, self.nu
        if label == R:
            X = np.stack([k, np.zeros_like(k), -k, np.zeros_like(k)], axis=1)
            T = np.tile([0.0, 1.0, 0.0, -1.0], (k.size, 1))
        else:
            sx, st = PIECE_SIGNS[label]
            X = sx * np.stack([k, np.ones_like(k), np.zeros_like(k)], axis=1)
            T = st * np.tile([0.0, 0.0, 1.0], (k.size, 1))
        return np.stack([self.xc[:, None] + hw[:, None] * X, self.tc[:, None] + hh[:, None] * T],
                        axis=2)


# ------------------------------------------------------------ stage state

@dataclass
class StageState:
    stage: int
    blocks: BlockSet
    prev: "StageState | None" = None
    info: dict = field(default_factory=dict)

    @property
    def F_i(self):
        return np.arange(len(self.blocks))

    @property
    def F_i_plus(self):
        """Triangles as (n, 3, 2) vertex arrays, ordered T1, T2, T3, T4 per diamond."""
        if len(self.blocks) == 0:
            return np.empty((0, 3, 2))
        return np.concatenate([self.blocks.piece_vertices(lb) for lb in (T1, T2, T3, T4)])

    @property
    def F_i_minus(self):
        if len(self.blocks) == 0:
            return np.empty((0, 4, 2))
        return self.blocks.piece_vertices(R)

    def chain(self):
        """Stages 1..i in order."""
        out, s = [], self
        while s is not None:
            out.append(s)
            s = s.prev
        return out[::-1]


@dataclass
class SurgeryConfig:
    aspect: float = 0.02           # aspect of diamonds packed into new regions Q_i
    nu_min: float = 1e-3           # smallest scale in the Q_i packs
    piece_coverage: float = 0.8    # target for the canonical child layouts
    piece_max_children: int = 3
    k_bins: int = 32
    child_refine: int = 2          # halvings allowed when a child fails its caps
    child_nu_min: float = 1e-4
    safety: float = 0.9            # fraction of the inclusion margins that may be used
    max_new: int | None = None
    strict_anchors: bool = False
    seed: int = 0


# -------------------------------------------------------- z evaluation

def evaluate_z(state: StageState | None, star: StarEval, x, t) -> dict:
    """z_i = z* + sum of stage contributions, with its gradient.

    Returns v, w, v_x, v_t, w_x, w_t as arrays shaped like the input.
    """
    out = star.fields(x, t)
    if state is None:
        return out
    for st in state.chain():
        c = st.blocks.evaluate(x, t)
        out["v"] = out["v"] + c["phi"]
        out["w"] = out["w"] + c["psi"]
        out["v_x"] = out["v_x"] + c["phi_x"]
        out["v_t"] = out["v_t"] + c["phi_t"]
        out["w_x"] = out["w_x"] + c["phi"]
        out["w_t"] = out["w_t"] + c["psi_t"]
    return out


def gradient_pair(state, star: StarEval, x, t):
    """(v_x, w_t) of z_i at points."""
    s = star.u(x, t)
    r = np.asarray(star.flux.rho(s), dtype=float)
    if state is not None:
        for st in state.chain():
            c = st.blocks.evaluate(x, t)
            s = s + c["phi_x"]
            r = r + c["psi_t"]
    return s, r


def sample_solution(state: StageState | None, star: StarEval, mode: str = "point",
                    rows=None) -> np.ndarray:
    """u = v_x on the star grid.

    ``point`` samples the exact piecewise-constant-plus-u* derivative at the
    nodes. ``cell`` uses the exact x-average of v_x over the dual cell
    [x_k - dx/2, x_k + dx/2], so that trapezoid masses telescope.
    """
    x, t = star.x, star.t
    if rows is not None:
        t = t[rows]
    u = star.sf.u_star if rows is None else star.sf.u_star[rows]
    u = np.array(u, dtype=float)
    if state is None:
        return u
    X, Tt = np.meshgrid(x, t)
    if mode == "point":
        for st in state.chain():
            u += st.blocks.evaluate(X, Tt)["phi_x"]
    elif mode == "cell":
        xm = np.concatenate([[x[0]], 0.5 * (x[:-1] + x[1:]), [x[-1]]])
        XM, TM = np.meshgrid(xm, t)
        phi = np.zeros(XM.shape)
        for st in state.chain():
            phi += st.blocks.evaluate(XM, TM)["phi"]
        width = np.diff(xm)
        u += (phi[:, 1:] - phi[:, :-1]) / width[None, :]
        u[:, 0] = u[:, -1] = 0.0
    else:
        raise ValueError(mode)
    return u


# ------------------------------------------------------------ local caps

class _Caps:
    """Certified inclusion test for diamonds at a given stage.

    A diamond anchored at (s, r) lands its triangles at A(r) and its rhombus
    at B(r), the midpoints of the density shells next to each wall. Over the
    diamond the density moves by at most du, the oscillation of u* over its
    bounding box, and the flux by

        dr = sigma_max du + nu (delta ax + at) + nu delta^2 H,

    where (ax, at) bound the Lipschitz constants of the ancestors' psi_t and
    H = tp tm/(tp + tm) bounds the diamond's own psi_t. Shell edges move by
    at most W dr with W the largest wall slope 1/sigma nearby.
    """

    def __init__(self, star: StarEval, wall: WallGeometry, sched: Schedule, i: int,
                 safety: float):
        from scipy.ndimage import maximum_filter1d

        self.star, self.wall, self.sched, self.i = star, wall, sched, i
        self.lam_i, self.lam_n, self.lam_p = sched.lam(i), sched.lam(i + 1), sched.lam_p(i)
        self.safety = safety
        s = np.linspace(0.0, 1.0, 4001)
        self._sig_s = s
        self._sig_max = maximum_filter1d(np.abs(np.asarray(star.flux.sigma(s))), size=201)
        self.du_max = 0.025    # half-window of the sigma_max table

    def sigma_max(self, u):
        return np.interp(u, self._sig_s, self._sig_max)

    def anchors(self, s, r):
        w1, w2 = self.wall.omega1(r), self.wall.omega2(r)
        lp = self.lam_p
        return lp * w1 + (1 - lp) * w2 - s, s - (1 - lp) * w1 - lp * w2

    def margins(self, r):
        """Density and flux margins of the landing points at level r."""
        gap = self.wall.omega2(r) - self.wall.omega1(r)
        lo, hi = self.wall.band(self.lam_n)
        return 0.5 * (self.lam_i - self.lam_n) * gap, np.minimum(r - lo, hi - r)

    def wall_slope(self, r_lo, r_hi):
        from .. import model

        p = self.wall.p
        s2 = self.wall.omega2(np.maximum(r_lo, self.wall.r1))
        s1 = self.wall.omega1(np.minimum(r_hi, self.wall.r2))
        sg2 = np.maximum(np.abs(model.sigma(p, s2)), 1e-300)
        sg1 = np.maximum(np.abs(model.sigma(p, s1)), 1e-300)
        return np.maximum(1.0 / sg2, 1.0 / sg1)

    def fits(self, xc, tc, nu, delta, s, r, tp, tm, ax=0.0, at=0.0):
        xc, tc, nu, delta, s, r, tp, tm, ax, at = np.broadcast_arrays(
            *(np.asarray(a, dtype=float) for a in (xc, tc, nu, delta, s, r, tp, tm, ax, at)))
        sf = self.safety
        m_s, m_r = self.margins(r)
        u_c = self.star.u(xc, tc)
        lo, hi = self.star.u_range(xc, tc, nu * delta, nu)
        du = np.maximum(hi - u_c, u_c - lo)
        pos = (tp > 0) & (tm > 0)
        H = np.where(pos, tp * tm / np.where(pos, tp + tm, 1.0), 0.0)
        dr = self.sigma_max(u_c) * du + nu * (delta * ax + at) + nu * delta * delta * H
        W = self.wall_slope(r - sf * m_r, r + sf * m_r)
        return (pos & (m_s > 0) & (m_r > 0) & (du <= self.du_max)
                & (du + W * dr <= sf * m_s) & (dr <= sf * m_r))


# -------------------------------------------------------------- patterns

HALF_RHOMBUS = np.array([[-1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


class _Patterns:
    """Cached child layouts in canonical piece coordinates.

    Triangles T1 live in (X/delta, T) with vertices (k, 0), (1, 0), (0, 1)
    and are laid out per k-bin at the bin's upper k, whose triangle sits
    inside every triangle of the bin. The upper half of a rhombus is the
    fixed triangle HALF_RHOMBUS in (X/(k delta), T).
    """

    def __init__(self, coverage, max_children, k_bins, seed):
        self.coverage, self.max_children, self.k_bins = coverage, max_children, k_bins
        self.seed = seed
        self._cache = {}

    def _pack(self, key, vertices):
        if key not in self._cache:
            # crc32, not hash(): str hashes are salted per process
            salt = zlib.crc32(repr(key).encode()) % 997
            pk = pack_polygon(vertices, self.coverage, seed=self.seed * 1000 + salt,
                              max_count=self.max_children, r_min=0.01)
            self._cache[key] = (pk.centers, pk.radii)
        return self._cache[key]

    def triangle(self, b: int):
        k_hi = (b + 1) / self.k_bins
        if k_hi >= 1.0:
            return np.empty((0, 2)), np.empty(0)
        return self._pack(("T", b), np.array([[k_hi, 0.0], [1.0, 0.0], [0.0, 1.0]]))

    def half_rhombus(self):
        return self._pack(("R",), HALF_RHOMBUS)


# ---------------------------------------------------------------- stages

def _cells_from_nodes(node_mask: np.ndarray) -> np.ndarray:
    m = node_mask
    return m[:-1, :-1] & m[:-1, 1:] & m[1:, :-1] & m[1:, 1:]


def stage_aspect(cfg: SurgeryConfig, sched: Schedule, i: int) -> float:
    return min(cfg.aspect, float(sched.delta_block[i - 1]))


def _new_blocks(xc, tc, nu, delta, s, r, tp, tm, parent, label, ax, at):
    return BlockSet(xc, tc, nu, delta, tp, tm, s, r, parent, label,
                    ax + tp * delta, at + tp * delta * delta)


def _new_region_blocks(i, region: RegionMask, sched, star, caps: _Caps, cfg: SurgeryConfig,
                       prev_state, info):
    cells = _cells_from_nodes(region.q_i_masks[i - 1])
    reg = CellRegion(cells, star.x, star.t)
    delta = stage_aspect(cfg, sched, i)
    gamma = 2.0 ** (-(i + 1))
    info.update(Q_i_area=reg.area, aspect=delta, gamma=gamma)

    def accept(c, nu):
        s, r = gradient_pair(prev_state, star, c[:, 0], c[:, 1])
        tp, tm = caps.anchors(s, r)
        return caps.fits(c[:, 0], c[:, 1], nu, delta, s, r, tp, tm)

    try:
        pk = pack_cells_quadtree(reg, delta, gamma, cfg.nu_min, seed=cfg.seed * 7919 + i,
                                 accept=accept, max_count=cfg.max_new)
    except EmptyRegion:
        info.update(new_count=0, new_coverage=0.0, new_reason="empty")
        return BlockSet.empty()
    info.update(new_count=int(pk.radii.size), new_coverage=pk.coverage, new_reason=pk.reason)
    n = pk.radii.size
    xc, tc, nu = pk.centers[:, 0], pk.centers[:, 1], pk.radii
    s, r = gradient_pair(prev_state, star, xc, tc)
    tp, tm = caps.anchors(s, r)
    z = np.zeros(n)
    return _new_blocks(xc, tc, nu, np.full(n, delta), s, r, tp, tm,
                       np.full(n, -1, dtype=np.int64), np.zeros(n, dtype=np.int8), z, z)


def _child_candidates(P: BlockSet, patterns: _Patterns, k_bins: int):
    """Children of every triangle and rhombus half, from the cached layouts."""
    k = P.k
    xs, ts, nus, dels, par, lab = [], [], [], [], [], []

    def add(js, X, T, rad, q, label):
        # X, T canonical centres relative to the parent, scaled by delta_p and nu_p
        xs.append((P.xc[js, None] + X * (P.delta[js] * P.nu[js])[:, None]).ravel())
        ts.append((P.tc[js, None] + T * P.nu[js, None]).ravel())
        nus.append((rad[None, :] * P.nu[js, None]).ravel())
        dels.append(np.repeat(q * P.delta[js], rad.size))
        par.append(np.repeat(js, rad.size))
        lab.append(np.full(js.size * rad.size, label, dtype=np.int8))

    bins = np.minimum(np.floor(k * k_bins).astype(np.int64), k_bins - 1)
    for b in np.unique(bins):
        cen, rad = patterns.triangle(int(b))
        if rad.size == 0:
            continue
        js = np.nonzero(bins == b)[0]
        for label in (T1, T2, T3, T4):
            sx, st = PIECE_SIGNS[label]
            add(js, sx * cen[None, :, 0], st * cen[None, :, 1], rad, 1.0, label)
    cen, rad = patterns.half_rhombus()
    js = np.arange(len(P))
    for st in (1.0, -1.0):
        add(js, cen[None, :, 0] * k[:, None], st * cen[None, :, 1], rad, k, R)
    return tuple(np.concatenate(a) for a in (xs, ts, nus, dels, par, lab))


def _children_blocks(i, prev: StageState, sched, wall, star, caps: _Caps, cfg, patterns, info):
    P = prev.blocks
    if len(P) == 0:
        return BlockSet.empty()
    xc, tc, nu, delta, parent, plabel = _child_candidates(P, patterns, cfg.k_bins)
    is_r = plabel == R
    nu = np.minimum(nu, 2.0 ** (-(i + 1)))
    nu = np.where(is_r, np.minimum(nu, sched.lam(i - 1) * wall.S_M), nu)
    info["child_candidates"] = int(nu.size)
    info["child_candidate_area"] = float(np.sum(2 * nu * nu * delta))
    lam_prev, lam_cur = sched.lam(i - 1), sched.lam(i)
    kept, n_bad, n_split, n_lost = [], 0, 0, 0
    for level in range(cfg.child_refine + 1):
        if nu.size == 0:
            break
        s, r = gradient_pair(prev, star, xc, tc)
        tp, tm = caps.anchors(s, r)
        # the anchor must lie in the shell its parent piece was pushed into
        good = np.where(is_r, wall.in_U_minus(s, r, lam_prev, lam_cur),
                        wall.in_U_plus(s, r, lam_prev, lam_cur))
        n_bad += int(np.count_nonzero(~good))
        if n_bad and cfg.strict_anchors:
            raise AnchorOutsideU(f"{n_bad} stage-{i} anchors outside their shell")
        ax, at = P.lip_x[parent], P.lip_t[parent]
        ok = good & caps.fits(xc, tc, nu, delta, s, r, tp, tm, ax, at)
        sel = np.nonzero(ok)[0]
        kept.append(_new_blocks(xc[sel], tc[sel], nu[sel], delta[sel], s[sel], r[sel], tp[sel],
                                tm[sel], parent[sel], plabel[sel], ax[sel], at[sel]))
        # split the rest into their four sub-diamonds
        rest = np.nonzero(good & ~ok & (0.5 * nu >= cfg.child_nu_min))[0]
        n_lost += int(np.count_nonzero(good & ~ok)) - rest.size
        if level == cfg.child_refine:
            n_lost += rest.size
            break
        n_split += rest.size
        h = 0.5 * nu[rest]
        d = delta[rest]
        xc = np.concatenate([xc[rest] + h * d, xc[rest] - h * d, xc[rest], xc[rest]])
        tc = np.concatenate([tc[rest], tc[rest], tc[rest] + h, tc[rest] - h])
        nu = np.tile(h, 4)
        delta = np.tile(d, 4)
        parent = np.tile(parent[rest], 4)
        plabel = np.tile(plabel[rest], 4)
        is_r = plabel == R
    info.update(child_bad_anchor=n_bad, child_split=n_split, child_lost=n_lost)
    return BlockSet.concat(kept)


def gamma_modulus(prev, star: StarEval, node_mask: np.ndarray, delta: float, n: int = 500,
                  seed: int = 0) -> float:
    """Largest dyadic radius over which sampled gradients of z_{i-1} move by <= delta."""
    rows, cols = np.nonzero(node_mask)
    if rows.size == 0:
        return float("nan")
    rng = np.random.default_rng(seed)
    pick = rng.integers(0, rows.size, size=n)
    x, t = star.x[cols[pick]], star.t[rows[pick]]
    g0 = np.column_stack(gradient_pair(prev, star, x, t))
    for m in range(1, 40):
        rad = 2.0 ** (-m)
        dx_, dt_ = rng.uniform(-rad, rad, size=(2, n))
        xs = np.clip(x + dx_, star.x[0], star.x[-1])
        ts = np.clip(t + dt_, star.t[0], star.t[-1])
        g1 = np.column_stack(gradient_pair(prev, star, xs, ts))
        if np.max(np.abs(g1 - g0)) <= delta:
            return rad
    return 0.0


def surgery_stage(prev: StageState | None, sched: Schedule, i: int, wall: WallGeometry,
                  star: StarEval, region: RegionMask, cfg: SurgeryConfig | None = None,
                  patterns: _Patterns | None = None) -> StageState:
    """Stage i of the construction on top of ``prev`` (None for stage 1)."""
    cfg = cfg or SurgeryConfig()
    if patterns is None:
        patterns = _Patterns(cfg.piece_coverage, cfg.piece_max_children, cfg.k_bins, cfg.seed)
    caps = _Caps(star, wall, sched, i, cfg.safety)
    info = dict(stage=i)
    new = _new_region_blocks(i, region, sched, star, caps, cfg, prev, info)
    kids = BlockSet.empty()
    if i >= 2 and prev is not None:
        kids = _children_blocks(i, prev, sched, wall, star, caps, cfg, patterns, info)
        parent_area = float(np.sum(prev.blocks.areas))
        info["child_coverage"] = float(np.sum(kids.areas)) / parent_area if parent_area else 0.0
    blocks = BlockSet.concat([new, kids])
    cell = star.dx * star.dt
    union = sum(float(np.sum(_cells_from_nodes(m))) for m in region.q_i_masks[:i]) * cell
    covered = float(np.sum(blocks.areas)) if len(blocks) else 0.0
    info.update(n_blocks=len(blocks), n_new=len(new), n_children=len(kids),
                covered_area=covered, union_area=union,
                uncovered_fraction=1.0 - covered / union if union > 0 else 1.0,
                max_diameter=float(2 * blocks.nu.max()) if len(blocks) else 0.0,
                gamma_empirical=gamma_modulus(prev, star, region.q_i_masks[i - 1],
                                              float(sched.delta[i - 1]), seed=cfg.seed))
    return StageState(stage=i, blocks=blocks, prev=prev, info=info)
