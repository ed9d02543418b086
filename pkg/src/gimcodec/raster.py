"""Pixel-center triangle rasterization in fixed point with a half-open edge rule.

Pixel (row i, col j) of an R x R raster has its center at
u = (j + 0.5) / R, v = (i + 0.5) / R; row index grows with v.
Vertices snap to 1/SUBPIXEL of a pixel so that edge tests are exact integer
arithmetic: an edge shared by two triangles is owned by exactly one of them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SUBPIXEL = 256
_CHUNK = 1 << 22


@dataclass
class Coverage:
    """One record per (triangle, pixel) hit. ``bary`` weights refer to the input corner order."""

    tri: np.ndarray
    row: np.ndarray
    col: np.ndarray
    bary: np.ndarray

    def __len__(self):
        return len(self.tri)

    def linear(self, resolution: int) -> np.ndarray:
        return self.row * resolution + self.col


def pixel_centers(resolution: int) -> np.ndarray:
    """(R,) coordinates of pixel centers along one axis."""
    return (np.arange(resolution) + 0.5) / resolution


def snap(uv: np.ndarray, resolution: int) -> np.ndarray:
    return np.rint(np.asarray(uv, np.float64) * (resolution * SUBPIXEL)).astype(np.int64)


def _owns(dx, dy):
    # antisymmetric: exactly one of d and -d owns a zero-distance sample
    return (dy > 0) | ((dy == 0) & (dx < 0))


def rasterize(tri_uv: np.ndarray, resolution: int) -> Coverage:
    """Rasterize (T, 3, 2) UV triangles at pixel centers.

    Orientation does not matter; zero-area triangles (after snapping) cover
    nothing. Output is ordered by triangle index, then row, then column.
    """
    tri_uv = np.asarray(tri_uv, np.float64).reshape(-1, 3, 2)
    q = snap(tri_uv, resolution)
    x, y = q[..., 0], q[..., 1]
    area2 = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (y[:, 1] - y[:, 0]) * (x[:, 2] - x[:, 0])
    flip = area2 < 0
    order = np.where(flip[:, None], [0, 2, 1], [0, 1, 2])
    x = np.take_along_axis(x, order, 1)
    y = np.take_along_axis(y, order, 1)
    area2 = np.abs(area2)

    half = SUBPIXEL // 2
    lo_c = np.maximum(-((half - x.min(1)) // SUBPIXEL), 0)  # ceil((xmin - half) / S)
    hi_c = np.minimum((x.max(1) - half) // SUBPIXEL, resolution - 1)
    lo_r = np.maximum(-((half - y.min(1)) // SUBPIXEL), 0)
    hi_r = np.minimum((y.max(1) - half) // SUBPIXEL, resolution - 1)
    w = np.where(area2 > 0, np.maximum(hi_c - lo_c + 1, 0), 0)
    h = np.where(area2 > 0, np.maximum(hi_r - lo_r + 1, 0), 0)
    counts = w * h

    parts = []
    ends = np.cumsum(counts)
    start_tri = 0
    while start_tri < len(counts):
        base = ends[start_tri - 1] if start_tri else 0
        stop = int(np.searchsorted(ends, base + _CHUNK, side="right"))
        stop = max(stop, start_tri + 1)
        sel = np.arange(start_tri, stop)
        parts.append(_raster_chunk(sel, counts[sel], lo_c, lo_r, w, x, y, area2, order, flip))
        start_tri = stop
    if not parts:
        empty = np.zeros(0, np.int64)
        return Coverage(empty, empty, empty, np.zeros((0, 3)))
    return Coverage(*(np.concatenate(p) for p in zip(*parts)))


def _raster_chunk(sel, counts, lo_c, lo_r, w, x, y, area2, order, flip):
    total = int(counts.sum())
    t = np.repeat(sel, counts)
    local = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    wt = w[t]
    col = lo_c[t] + local % np.maximum(wt, 1)
    row = lo_r[t] + local // np.maximum(wt, 1)
    px = col * SUBPIXEL + SUBPIXEL // 2
    py = row * SUBPIXEL + SUBPIXEL // 2
    xt, yt = x[t], y[t]
    inside = np.ones(total, bool)
    ws = []
    for a, b in ((1, 2), (2, 0), (0, 1)):
        dx = xt[:, b] - xt[:, a]
        dy = yt[:, b] - yt[:, a]
        e = dx * (py - yt[:, a]) - dy * (px - xt[:, a])
        inside &= (e > 0) | ((e == 0) & _owns(dx, dy))
        ws.append(e)
    keep = np.flatnonzero(inside)
    bary_sorted = np.stack([wi[keep] for wi in ws], 1) / area2[t[keep], None]
    # undo the orientation swap so weights line up with the caller's corners
    tk = t[keep]
    bary = np.empty_like(bary_sorted)
    np.put_along_axis(bary, order[tk], bary_sorted, 1)
    return tk, row[keep], col[keep], bary
