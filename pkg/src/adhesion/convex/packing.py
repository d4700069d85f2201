"""Truncated Vitali packings by scaled diamonds.

Diamonds of aspect d are L1 balls in the coordinates (x/d, t), so packing is
done there. Two packers are provided. The greedy one places balls by
decreasing admissible radius over a raster of the region, with exact
ball-ball clearances. The quadtree one starts from the checkerboard lattice
of L1 balls, which tiles the plane, keeps the balls that are admissible and
splits the others into their four half-size sub-balls; it is vectorised per
level and disjoint by construction.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import ndimage

from ..errors import EmptyRegion


@dataclass
class Packing:
    centers: np.ndarray        # (n, 2) in the region's isotropic coordinates
    radii: np.ndarray          # (n,)
    region_area: float         # isotropic area of the candidate region
    covered_area: float
    reason: str

    @property
    def coverage(self):
        return self.covered_area / self.region_area if self.region_area > 0 else 0.0


@lru_cache(maxsize=256)
def _l1_window(r: int) -> np.ndarray:
    i = np.arange(-r, r + 1)
    return (np.abs(i)[:, None] + np.abs(i)[None, :]) <= r


def _mark(occ: np.ndarray, a: int, b: int, r: int):
    """Set pixels within L1 pixel distance r of (a, b)."""
    w = _l1_window(r)
    a0, a1 = a - r, a + r + 1
    b0, b1 = b - r, b + r + 1
    ca0, cb0 = max(a0, 0), max(b0, 0)
    ca1, cb1 = min(a1, occ.shape[0]), min(b1, occ.shape[1])
    occ[ca0:ca1, cb0:cb1] |= w[ca0 - a0:w.shape[0] - (a1 - ca1), cb0 - b0:w.shape[1] - (b1 - cb1)]


def _ball_gap(c, centers, radii):
    """min_j |c - c_j|_1 - r_j over the given balls (inf if none)."""
    if len(radii) == 0:
        return np.inf
    return float(np.min(np.abs(centers - c).sum(axis=1) - radii))


def greedy_l1(mask: np.ndarray, h: float, origin, radius: np.ndarray,
              coverage_target: float, seed=0, r_min: float = 0.0, r_cap: float | None = None,
              max_count: int = 100_000, cap_fn=None, area=None) -> Packing:
    """Greedy by levels over the pixel centres of ``mask``.

    ``radius`` holds, per pixel, the largest admissible ball radius inside
    the region (isotropic units). Ball-ball clearances are exact; a pixel
    distance transform only orders the candidates. ``cap_fn(centers,
    radii)`` may shrink radii and returns the new radii.
    """
    if not mask.any():
        raise EmptyRegion("packing region has no interior pixels")
    from scipy.spatial import cKDTree

    rng = np.random.default_rng(seed)
    region_area = float(mask.sum()) * h * h if area is None else float(area)
    occ = ~mask.copy()
    touched = np.zeros_like(mask)
    centers = np.empty((0, 2))
    radii = np.empty(0)
    covered = 0.0
    jitter = rng.random(mask.shape)
    reason = "exhausted"
    u0, v0 = origin
    cap = np.inf if r_cap is None else r_cap
    while True:
        if touched.any():
            d_occ = (ndimage.distance_transform_cdt(~touched, metric="taxicab") - 1.0) * h
        else:
            d_occ = np.full(mask.shape, np.inf)
        est = np.minimum(np.minimum(radius, d_occ), cap)
        est[occ] = -1.0
        rmax = float(est.max())
        if rmax < max(r_min, 1e-300):
            break
        level = max(rmax / 2.0, r_min)
        ia, ib = np.nonzero(est >= level)
        key = np.lexsort((jitter[ia, ib], -np.floor(est[ia, ib] / h)))
        tree = cKDTree(centers) if len(radii) else None
        r_big = float(radii.max()) if len(radii) else 0.0
        new_c, new_r = [], []
        for a, b in zip(ia[key], ib[key]):
            if occ[a, b]:
                continue
            c = np.array([u0 + (a + 0.5) * h, v0 + (b + 0.5) * h])
            rad = min(float(radius[a, b]), cap)
            if tree is not None:
                idx = tree.query_ball_point(c, rad + r_big, p=1)
                if idx:
                    rad = min(rad, _ball_gap(c, centers[idx], radii[idx]))
            if new_r:
                rad = min(rad, _ball_gap(c, np.array(new_c), np.array(new_r)))
            if rad < level:
                continue
            if cap_fn is not None:
                rad = float(cap_fn(c[None, :], np.array([rad]))[0])
                if rad < max(r_min, 1e-300):
                    occ[a, b] = True
                    continue
            new_c.append(c)
            new_r.append(rad)
            covered += 2.0 * rad * rad
            ri = int(np.ceil(rad / h))
            _mark(touched, a, b, ri + 1)
            _mark(occ, a, b, max(int(np.floor(rad / h - 1e-12)), 0))
            if covered >= coverage_target * region_area:
                reason = "coverage"
                break
            if len(radii) + len(new_r) >= max_count:
                reason = "max_count"
                break
        if new_r:
            centers = np.vstack([centers, np.array(new_c)])
            radii = np.concatenate([radii, np.array(new_r)])
        if reason != "exhausted":
            break
    return Packing(centers, radii, region_area, covered, reason)


# ---------------------------------------------------------------- polygons

def halfplanes(vertices: np.ndarray):
    """Outward normals n and offsets b with n.p <= b inside (counter-clockwise
    or clockwise input)."""
    v = np.asarray(vertices, dtype=float)
    area2 = np.sum(v[:, 0] * np.roll(v[:, 1], -1) - v[:, 1] * np.roll(v[:, 0], -1))
    if area2 < 0:
        v = v[::-1]
    e = np.roll(v, -1, axis=0) - v
    n = np.column_stack([e[:, 1], -e[:, 0]])
    b = np.einsum("ij,ij->i", n, v)
    return n, b


def l1_inradius(vertices: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Largest L1 ball radius about each centre inside a convex polygon."""
    n, b = halfplanes(vertices)
    slack = b[None, :] - centers @ n.T
    return np.min(slack / np.max(np.abs(n), axis=1)[None, :], axis=1)


def pack_polygon(vertices: np.ndarray, coverage_target: float, seed=0, res: int = 128,
                 margin: float = 0.02, max_count: int = 8, r_min: float = 0.01) -> Packing:
    """Pack a convex polygon (isotropic coordinates) with L1 balls."""
    v = np.asarray(vertices, dtype=float)
    lo, hi = v.min(axis=0), v.max(axis=0)
    h = float(np.max(hi - lo)) / res
    na = int(np.ceil((hi[0] - lo[0]) / h))
    nb = int(np.ceil((hi[1] - lo[1]) / h))
    ua = lo[0] + (np.arange(na) + 0.5) * h
    vb = lo[1] + (np.arange(nb) + 0.5) * h
    U, V = np.meshgrid(ua, vb, indexing="ij")
    pts = np.column_stack([U.ravel(), V.ravel()])
    rad = l1_inradius(v, pts).reshape(U.shape)
    mask = rad > 0
    from .blocks import polygon_area

    radius = np.where(mask, rad * (1.0 - margin), -1.0)
    return greedy_l1(mask, h, (lo[0], lo[1]), radius, coverage_target, seed=seed,
                     r_min=r_min, max_count=max_count, area=polygon_area(v))


# ------------------------------------------------------------ cell regions

@dataclass
class CellRegion:
    """Union of grid cells (x_j, x_j+1) x (t_n, t_n+1) flagged in ``cells``."""
    cells: np.ndarray      # (n_t, n_x) boolean, rows are time
    x: np.ndarray          # node coordinates
    t: np.ndarray

    @property
    def area(self):
        dx = np.diff(self.x)[None, :]
        dt = np.diff(self.t)[:, None]
        return float(np.sum(self.cells * dx * dt))

    def eroded(self, n: int = 1) -> "CellRegion":
        if n <= 0:
            return self
        st = ndimage.generate_binary_structure(2, 2)
        return CellRegion(ndimage.binary_erosion(self.cells, st, iterations=n,
                                                 border_value=0), self.x, self.t)


def raster_cells(region: CellRegion, delta: float, h: float):
    """Isotropic raster (u = x/delta, t) of pixels fully inside the cells."""
    rows, cols = np.nonzero(region.cells)
    if rows.size == 0:
        raise EmptyRegion("cell region is empty")
    x, t = region.x, region.t
    u_lo, u_hi = x[cols.min()] / delta, x[cols.max() + 1] / delta
    v_lo, v_hi = t[rows.min()], t[rows.max() + 1]
    na = max(int(np.floor((u_hi - u_lo) / h)), 1)
    nb = max(int(np.floor((v_hi - v_lo) / h)), 1)
    bad = (~region.cells).astype(np.int64)
    sat = np.zeros((bad.shape[0] + 1, bad.shape[1] + 1), dtype=np.int64)
    sat[1:, 1:] = bad.cumsum(0).cumsum(1)
    ua0 = u_lo + np.arange(na) * h
    vb0 = v_lo + np.arange(nb) * h
    # cell index ranges overlapped by each pixel column / row
    j0 = np.searchsorted(x, ua0 * delta, side="right") - 1
    j1 = np.searchsorted(x, (ua0 + h) * delta, side="left") - 1
    n0 = np.searchsorted(t, vb0, side="right") - 1
    n1 = np.searchsorted(t, vb0 + h, side="left") - 1
    j0 = np.clip(j0, 0, bad.shape[1] - 1)
    j1 = np.clip(j1, 0, bad.shape[1] - 1)
    n0 = np.clip(n0, 0, bad.shape[0] - 1)
    n1 = np.clip(n1, 0, bad.shape[0] - 1)
    J0, N0 = np.meshgrid(j0, n0, indexing="ij")
    J1, N1 = np.meshgrid(j1, n1, indexing="ij")
    cnt = sat[N1 + 1, J1 + 1] - sat[N0, J1 + 1] - sat[N1 + 1, J0] + sat[N0, J0]
    mask = cnt == 0
    return mask, (u_lo, v_lo)


def pack_vitali(region, delta_i: float, gamma_i: float, coverage_target: float = 0.95,
                seed=0, h: float | None = None, nu_min: float | None = None,
                cap_fn=None, max_count: int = 200_000, erode: int = 1, cap_field=None,
                method: str = "greedy"):
    """Disjoint scaled diamonds of aspect ``delta_i`` and scale <= ``gamma_i``
    compactly inside ``region``.

    ``region`` is a CellRegion (eroded by ``erode`` cells first) or the
    vertex array of a convex polygon in physical coordinates. Returns the
    Packing with centres mapped back to physical (x, t) and radii equal to
    the diamond scales nu. ``cap_fn(centers_xt, nu)`` may shrink scales at
    placement time; ``cap_field`` has the same signature but is applied once,
    vectorised, to every raster pixel (valid when caps only tighten with nu).
    ``method="quadtree"`` uses the lattice packer instead (no caps).
    """
    if method == "quadtree":
        return _pack_quadtree(region, delta_i, gamma_i, coverage_target, seed, nu_min, erode,
                              max_count)
    if method != "greedy":
        raise ValueError(method)
    if isinstance(region, CellRegion):
        reg = region.eroded(erode)
        if not reg.cells.any():
            raise EmptyRegion("region has no interior after erosion")
        if h is None:
            h = min(gamma_i / 8.0, float(np.min(np.diff(reg.x))) / delta_i / 4.0)
        mask, origin = raster_cells(reg, delta_i, h)
        if not mask.any():
            raise EmptyRegion("region has no pixel at this resolution")
        dist = ndimage.distance_transform_cdt(np.pad(mask, 1), metric="taxicab")[1:-1, 1:-1]
        radius = np.where(mask, (dist - 1.0) * h, -1.0)
        area = float(mask.sum()) * h * h
    else:
        v = np.asarray(region, dtype=float)
        vi = np.column_stack([v[:, 0] / delta_i, v[:, 1]])
        lo, hi = vi.min(axis=0), vi.max(axis=0)
        if h is None:
            h = float(np.max(hi - lo)) / 128
        na = int(np.ceil((hi[0] - lo[0]) / h))
        nb = int(np.ceil((hi[1] - lo[1]) / h))
        U, V = np.meshgrid(lo[0] + (np.arange(na) + 0.5) * h, lo[1] + (np.arange(nb) + 0.5) * h,
                           indexing="ij")
        rad = l1_inradius(vi, np.column_stack([U.ravel(), V.ravel()])).reshape(U.shape)
        mask = rad > 0
        if not mask.any():
            raise EmptyRegion("polygon has no interior at this resolution")
        radius = np.where(mask, 0.98 * rad, -1.0)
        origin = (lo[0], lo[1])
        from .blocks import polygon_area

        area = polygon_area(vi)
    if nu_min is None:
        nu_min = 2.0 * h
    if cap_field is not None:
        ia, ib = np.nonzero(mask)
        cen = np.column_stack([(origin[0] + (ia + 0.5) * h) * delta_i, origin[1] + (ib + 0.5) * h])
        r0 = np.minimum(radius[ia, ib], gamma_i)
        radius = radius.copy()
        radius[ia, ib] = np.minimum(r0, cap_field(cen, r0))
    wrapped = None
    if cap_fn is not None:
        def wrapped(c, r):
            return cap_fn(np.column_stack([c[:, 0] * delta_i, c[:, 1]]), r)
    pk = greedy_l1(mask, h, origin, radius, coverage_target, seed=seed, r_min=nu_min,
                   r_cap=gamma_i, max_count=max_count, cap_fn=wrapped, area=area)
    pk.centers = np.column_stack([pk.centers[:, 0] * delta_i, pk.centers[:, 1]])
    return pk


# ---------------------------------------------------------------- quadtree

def l1_lattice(bbox, r0: float, offset=(0.0, 0.0)) -> np.ndarray:
    """Centres of the radius-r0 L1 balls of the checkerboard tiling meeting bbox."""
    u0, u1, v0, v1 = bbox
    m = np.arange(np.floor((u0 - offset[0]) / r0) - 1, np.ceil((u1 - offset[0]) / r0) + 2)
    n = np.arange(np.floor((v0 - offset[1]) / r0) - 1, np.ceil((v1 - offset[1]) / r0) + 2)
    M, N = np.meshgrid(m, n, indexing="ij")
    sel = (M + N) % 2 == 0
    return np.column_stack([offset[0] + r0 * M[sel], offset[1] + r0 * N[sel]])


def split_l1(centers: np.ndarray, r: float) -> np.ndarray:
    """Centres of the four radius-r/2 sub-balls of each radius-r ball."""
    h = 0.5 * r
    return np.concatenate([centers + (h, 0.0), centers - (h, 0.0),
                           centers + (0.0, h), centers - (0.0, h)])


def quadtree_l1(inside, touches, bbox, r0: float, r_min: float, offset=(0.0, 0.0),
                accept=None, coverage_target: float | None = None, area: float | None = None,
                max_count: int | None = None) -> Packing:
    """Rotated quadtree packing.

    ``inside(c, r)`` says whether the balls lie compactly in the region,
    ``touches(c, r)`` whether they may meet it (a conservative superset is
    fine) and ``accept(c, r)`` applies further admissibility. Balls that are
    not accepted are split while the radius stays >= ``r_min``.
    """
    C = l1_lattice(bbox, r0, offset)
    r = float(r0)
    acc_c, acc_r = [], []
    covered = 0.0
    count = 0
    reason = "exhausted"
    while C.size:
        C = C[touches(C, r)]
        if not C.size:
            break
        ok = inside(C, r)
        if accept is not None and ok.any():
            ok[ok] = accept(C[ok], r)
        if ok.any():
            take = C[ok]
            if max_count is not None and count + take.shape[0] > max_count:
                take = take[:max_count - count]
                reason = "max_count"
            acc_c.append(take)
            acc_r.append(np.full(take.shape[0], r))
            covered += 2.0 * r * r * take.shape[0]
            count += take.shape[0]
        if reason == "max_count":
            break
        if coverage_target is not None and area and covered >= coverage_target * area:
            reason = "coverage"
            break
        if 0.5 * r < r_min:
            break
        C = split_l1(C[~ok], r)
        r *= 0.5
    centers = np.concatenate(acc_c) if acc_c else np.empty((0, 2))
    radii = np.concatenate(acc_r) if acc_r else np.empty(0)
    return Packing(centers, radii, float(area) if area else 0.0, covered, reason)


def polygon_tests(vertices: np.ndarray, margin: float = 0.0):
    """(inside, touches) predicates of L1 balls against a convex polygon."""
    n, b = halfplanes(vertices)
    scale = np.max(np.abs(n), axis=1)

    def slack(c):
        return (b[None, :] - c @ n.T) / scale[None, :]

    def inside(c, r):
        return np.min(slack(c), axis=1) > r * (1.0 + margin)

    def touches(c, r):
        return np.min(slack(c), axis=1) > -r

    return inside, touches


def cell_tests(region: CellRegion, delta: float):
    """(inside, touches) predicates of diamonds of aspect delta, given by
    isotropic centres (x/delta, t), against a union of grid cells."""
    x, t = region.x, region.t
    bad = (~region.cells).astype(np.int64)
    sat = np.zeros((bad.shape[0] + 1, bad.shape[1] + 1), dtype=np.int64)
    sat[1:, 1:] = bad.cumsum(0).cumsum(1)

    def ranges(c, r):
        xl, xh = (c[:, 0] - r) * delta, (c[:, 0] + r) * delta
        tl, th = c[:, 1] - r, c[:, 1] + r
        out = (xl < x[0]) | (xh > x[-1]) | (tl < t[0]) | (th > t[-1])
        j0 = np.clip(np.searchsorted(x, xl, side="right") - 1, 0, bad.shape[1] - 1)
        j1 = np.clip(np.searchsorted(x, xh, side="left") - 1, 0, bad.shape[1] - 1)
        n0 = np.clip(np.searchsorted(t, tl, side="right") - 1, 0, bad.shape[0] - 1)
        n1 = np.clip(np.searchsorted(t, th, side="left") - 1, 0, bad.shape[0] - 1)
        n_bad = sat[n1 + 1, j1 + 1] - sat[n0, j1 + 1] - sat[n1 + 1, j0] + sat[n0, j0]
        total = (n1 - n0 + 1) * (j1 - j0 + 1)
        return out, n_bad, total

    def inside(c, r):
        out, n_bad, _ = ranges(c, r)
        return ~out & (n_bad == 0)

    def touches(c, r):
        _, n_bad, total = ranges(c, r)
        return n_bad < total

    return inside, touches


def pack_cells_quadtree(region: CellRegion, delta: float, gamma: float, r_min: float,
                        seed=0, accept=None, coverage_target: float | None = None,
                        erode: int = 1, max_count: int | None = None) -> Packing:
    """Quadtree packing of a cell union; centres are returned physical."""
    reg = region.eroded(erode)
    rows, cols = np.nonzero(reg.cells)
    if rows.size == 0:
        raise EmptyRegion("region has no interior after erosion")
    inside, touches = cell_tests(reg, delta)
    bbox = (reg.x[cols.min()] / delta, reg.x[cols.max() + 1] / delta,
            reg.t[rows.min()], reg.t[rows.max() + 1])
    off = np.random.default_rng(seed).uniform(0.0, gamma, size=2)
    wrapped = None
    if accept is not None:
        def wrapped(c, r):
            return accept(np.column_stack([c[:, 0] * delta, c[:, 1]]), r)
    area = reg.area / delta
    pk = quadtree_l1(inside, touches, bbox, gamma, r_min, offset=tuple(off), accept=wrapped,
                     coverage_target=coverage_target, area=area, max_count=max_count)
    pk.centers = np.column_stack([pk.centers[:, 0] * delta, pk.centers[:, 1]])
    return pk


def _pack_quadtree(region, delta, gamma, coverage_target, seed, nu_min, erode, max_count):
    if isinstance(region, CellRegion):
        if nu_min is None:
            nu_min = 2.0 * float(np.min(np.diff(region.x))) / delta
        return pack_cells_quadtree(region, delta, gamma, nu_min, seed=seed,
                                   coverage_target=coverage_target, erode=erode,
                                   max_count=max_count)
    v = np.asarray(region, dtype=float)
    vi = np.column_stack([v[:, 0] / delta, v[:, 1]])
    lo, hi = vi.min(axis=0), vi.max(axis=0)
    from .blocks import polygon_area

    area = polygon_area(vi)
    if area <= 0:
        raise EmptyRegion("polygon has no interior")
    if nu_min is None:
        nu_min = float(np.max(hi - lo)) / 512
    inside, touches = polygon_tests(vi)
    off = np.random.default_rng(seed).uniform(0.0, gamma, size=2)
    pk = quadtree_l1(inside, touches, (lo[0], hi[0], lo[1], hi[1]), gamma, nu_min,
                     offset=tuple(off), coverage_target=coverage_target, area=area,
                     max_count=max_count)
    pk.centers = np.column_stack([pk.centers[:, 0] * delta, pk.centers[:, 1]])
    return pk
