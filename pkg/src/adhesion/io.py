"""Files of a run directory: field CSVs, diamond tables, JSON, SVG heatmaps."""
from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import numpy as np

from .errors import MissingArtifacts

OUTPUT_ROOT_ENV = "ADHESION_OUTPUT_ROOT"
DEFAULT_OUTPUT_ROOT = "runs"


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, DEFAULT_OUTPUT_ROOT))


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    from .verify import _jsonable

    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as e:
        raise MissingArtifacts(f"missing {path}") from e


# ------------------------------------------------------------ field CSVs

def write_field_csv(path, values: np.ndarray, x: np.ndarray, t: np.ndarray, name: str, **meta):
    """Rows are times: the first column is t, the rest are values at x.

    The first line is a comment with the grid as JSON; %.17g keeps every
    double exactly.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    values = np.asarray(values, dtype=float)
    head = dict(field=name, rows="t", L=float(x[-1]), Nx=int(x.size), Nt=int(t.size - 1),
                t_end=float(t[-1]), x=[float(v) for v in x], **meta)
    with open(path, "w") as fh:
        fh.write("# " + json.dumps(head, sort_keys=True) + "\n")
        np.savetxt(fh, np.column_stack([t, values]), fmt="%.17g", delimiter=",")


def read_field_csv(path):
    """(values, x, t, meta) from a field CSV."""
    path = Path(path)
    if not path.exists():
        raise MissingArtifacts(f"missing {path}")
    with open(path) as fh:
        first = fh.readline()
        if not first.startswith("# "):
            raise ValueError(f"{path}: missing grid header")
        meta = json.loads(first[2:])
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    return data[:, 1:], np.array(meta["x"]), data[:, 0], meta


def write_trajectory_csv(path, snapshots, **meta):
    """Lattice snapshots as long-format rows t, x, u."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = [np.column_stack([np.full(s.densities.size, s.time), s.x, s.densities])
            for s in snapshots]
    head = dict(kind="lattice", n=int(snapshots[0].n), L=float(snapshots[0].L), **meta)
    with open(path, "w") as fh:
        fh.write("# " + json.dumps(head, sort_keys=True) + "\n")
        fh.write("t,x,u\n")
        np.savetxt(fh, np.concatenate(rows), fmt="%.17g", delimiter=",")


def read_trajectory_csv(path):
    with open(path) as fh:
        meta = json.loads(fh.readline()[2:])
        fh.readline()
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    return data, meta


# ------------------------------------------------------------ diamond tables

def write_blocks(path, arrays: dict):
    """One structured .npy per stage (np.save output is byte-stable)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(arrays)
    dtype = [(k, np.asarray(arrays[k]).dtype.str) for k in names]
    n = len(np.asarray(arrays[names[0]]))
    rec = np.empty(n, dtype=dtype)
    for k in names:
        rec[k] = arrays[k]
    np.save(path, rec, allow_pickle=False)


def read_blocks(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise MissingArtifacts(f"missing {path}")
    rec = np.load(path, allow_pickle=False)
    return {k: np.ascontiguousarray(rec[k]) for k in rec.dtype.names}


# ------------------------------------------------------------ SVG

def _palette(values, bands):
    """Blue shades below the lower band, red above the upper band, green
    inside the mixture band, each scaled within its own range."""
    v = np.clip(values, 0.0, 1.0)
    lo, hi = bands if bands is not None else (np.inf, np.inf)
    rgb = np.empty(v.shape + (3,))
    a = np.clip(v / max(lo if np.isfinite(lo) else 1.0, 1e-12), 0, 1)
    rgb[...] = np.stack([255 * (1 - a), 255 * (1 - 0.6 * a), 255 * np.ones_like(a)], axis=-1)
    if np.isfinite(lo):
        mid = (v > lo) & (v < hi)
        b = np.clip((v - lo) / max(hi - lo, 1e-12), 0, 1)
        rgb[mid] = np.stack([40 + 60 * b, 150 + 60 * b, 60 + 0 * b], axis=-1)[mid]
        top = v >= hi
        c = np.clip((v - hi) / max(1 - hi, 1e-12), 0, 1)
        rgb[top] = np.stack([200 + 55 * c, 60 * (1 - c), 40 * (1 - c)], axis=-1)[top]
    return np.round(rgb).astype(int)


def write_svg_heatmap(path, values, x, t, bands=None, title="", max_cells=200):
    """Cell-averaged heatmap, x to the right and t upward."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    v = np.asarray(values, dtype=float)
    nt, nx = v.shape
    ft, fx = max(1, -(-nt // max_cells)), max(1, -(-nx // max_cells))
    v = v[: nt - nt % ft or nt, : nx - nx % fx or nx]
    v = v.reshape(v.shape[0] // ft, ft, v.shape[1] // fx, fx).mean(axis=(1, 3))
    rows, cols = v.shape
    cw, ch = 600.0 / cols, 400.0 / rows
    rgb = _palette(v, bands)
    parts = ['<svg xmlns="http://www.w3.org/2000/svg" width="680" height="460" '
             'viewBox="0 0 680 460">',
             f'<text x="40" y="20" font-size="14">{title}</text>',
             '<g transform="translate(40,30)" shape-rendering="crispEdges">']
    for r in range(rows):
        y = 400.0 - (r + 1) * ch
        for c in range(cols):
            R, G, B = rgb[r, c]
            parts.append(f'<rect x="{c * cw:.3f}" y="{y:.3f}" width="{cw:.3f}" '
                         f'height="{ch:.3f}" fill="rgb({R},{G},{B})"/>')
    parts.append("</g>")
    parts.append(f'<text x="40" y="450" font-size="12">x in [{x[0]:g}, {x[-1]:g}]</text>')
    parts.append(f'<text x="400" y="450" font-size="12">t in [{t[0]:g}, {t[-1]:g}] (up)</text>')
    parts.append("</svg>")
    path.write_text("\n".join(parts) + "\n")
