"""Geometry image encode/decode: positions + mask rasters, albedo resampling, atlas rotation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .atlas import AtlasLayout, ChartTransform, layout_coverage
from .mesh import Mesh, NormalizationParams, UVProvenance
from .raster import Coverage, pixel_centers

CARTESIAN = "cartesian"
CYLINDRICAL = "cylindrical"
ENCODINGS = (CARTESIAN, CYLINDRICAL)
TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class CylindricalParams:
    """Range of the (radius, azimuth, height) channels; defaults bound the [-1, 1] cube."""

    r_max: float = math.sqrt(2.0)
    h_min: float = -1.0
    h_max: float = 1.0

    def __post_init__(self):
        if not (self.r_max > 0 and self.h_max > self.h_min):
            raise ValueError("need r_max > 0 and h_max > h_min")

    def to_dict(self) -> dict:
        return {"r_max": self.r_max, "h_min": self.h_min, "h_max": self.h_max}


def to_cylindrical(p: np.ndarray, params: CylindricalParams = CylindricalParams(),
                   theta_offset=0.0) -> np.ndarray:
    """(..., 3) xyz to (r, theta, h) channels in [0, 1]; Y is the cylinder axis.

    ``theta_offset`` (radians) broadcasts against the leading dimensions.
    """
    p = np.asarray(p, np.float64)
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    rad = np.hypot(x, z)
    theta = np.where(rad > 0, np.arctan2(z, x), 0.0)
    t = np.mod(theta - theta_offset, TWO_PI) / TWO_PI
    t = np.where((rad > 0) & (t < 1.0), t, 0.0)
    return np.stack([rad / params.r_max, t, (y - params.h_min) / (params.h_max - params.h_min)], -1)


def from_cylindrical(c: np.ndarray, params: CylindricalParams = CylindricalParams(),
                     theta_offset=0.0) -> np.ndarray:
    c = np.asarray(c, np.float64)
    rad = c[..., 0] * params.r_max
    theta = c[..., 1] * TWO_PI + theta_offset
    y = params.h_min + c[..., 2] * (params.h_max - params.h_min)
    return np.stack([rad * np.cos(theta), y, rad * np.sin(theta)], -1)


def to_cartesian_channels(p: np.ndarray) -> np.ndarray:
    return (np.asarray(p, np.float64) + 1.0) * 0.5


def from_cartesian_channels(c: np.ndarray) -> np.ndarray:
    return np.asarray(c, np.float64) * 2.0 - 1.0


@dataclass(frozen=True)
class ChartRecord:
    id: int
    transform: ChartTransform
    box: tuple  # (col0, row0, col1, row1), end-exclusive
    theta_offset: float = 0.0
    provenance: int = int(UVProvenance.MANUAL)

    def to_dict(self) -> dict:
        return {"id": self.id, "transform": self.transform.to_list(), "scale": self.transform.scale,
                "quarter_turns": self.transform.quarter_turns, "box": [int(b) for b in self.box],
                "theta_offset": self.theta_offset, "provenance": UVProvenance(self.provenance).name.lower()}

    @classmethod
    def from_dict(cls, d: dict) -> ChartRecord:
        return cls(int(d["id"]), ChartTransform(tuple(d["transform"]), d.get("scale", 1.0), d.get("quarter_turns", 0)),
                   tuple(d["box"]), float(d.get("theta_offset", 0.0)),
                   int(UVProvenance[d.get("provenance", "manual").upper()]))


@dataclass(frozen=True, eq=False)
class GeometryImage:
    """Sampled surface: ``positions`` (R, R, 3) channels in [0, 1], ``mask`` and ``chart_ids``.

    Row i holds v = (i + 0.5) / R. Pixels outside the mask are 0 in every
    channel and -1 in ``chart_ids``; ``chart_ids`` index ``chart_table``.
    """

    resolution: int
    positions: np.ndarray
    mask: np.ndarray
    chart_ids: np.ndarray
    encoding: str = CARTESIAN
    norm: NormalizationParams = NormalizationParams()
    cylinder: CylindricalParams = CylindricalParams()
    chart_table: tuple = ()
    flags: dict = field(default_factory=dict)

    @property
    def valid_pixels(self) -> int:
        return int(self.mask.sum())

    def theta_offsets(self) -> np.ndarray:
        """Per-pixel azimuth offset (0 outside charts)."""
        offs = np.array([c.theta_offset for c in self.chart_table] + [0.0])
        return offs[self.chart_ids]  # -1 picks the trailing 0

    def decode_positions(self) -> np.ndarray:
        """(R, R, 3) positions in normalized coordinates (garbage outside the mask)."""
        if self.encoding == CYLINDRICAL:
            return from_cylindrical(self.positions, self.cylinder, self.theta_offsets())
        return from_cartesian_channels(self.positions)


@dataclass(frozen=True, eq=False)
class AlbedoImage:
    resolution: int
    color: np.ndarray  # (R, R, 3) float32 in [0, 1]
    mask: np.ndarray
    missing_texture: bool = False


# ---------------------------------------------------------------- encode


def _azimuth_offsets(tri: np.ndarray, face_chart: np.ndarray, n_charts: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-chart theta offset placing the 0/1 wrap in the chart's widest azimuth gap.

    Also returns, per chart, whether some triangle still straddles the wrap
    (or encloses the axis), i.e. the chart spans the full circle.
    """
    offsets = np.zeros(n_charts)
    wraps = np.zeros(n_charts, bool)
    rad = np.hypot(tri[..., 0], tri[..., 2])
    theta = np.arctan2(tri[..., 2], tri[..., 0])
    for c in range(n_charts):
        sel = face_chart == c
        th = theta[sel]
        r = rad[sel]
        pts = np.unique(th[r > 1e-9])
        if len(pts) == 0:
            continue
        gaps = np.diff(np.concatenate([pts, pts[:1] + TWO_PI]))
        k = int(np.argmax(gaps))
        off = pts[k] + gaps[k] / 2
        offsets[c] = off
        rel = np.mod(th - off, TWO_PI)
        rel = np.where(r > 1e-9, rel, np.nan)
        span = np.nanmax(rel, axis=1) - np.nanmin(rel, axis=1)
        straddle = np.nan_to_num(span, nan=0.0) > math.pi
        xz = tri[sel][..., [0, 2]]
        wraps[c] = bool(straddle.any() or _encloses_origin(xz).any())
    return offsets, wraps


def _encloses_origin(xz: np.ndarray) -> np.ndarray:
    """Whether each (K, 3, 2) triangle strictly contains the origin."""
    a, b, c = xz[:, 0], xz[:, 1], xz[:, 2]

    def side(p, q):
        return p[:, 0] * q[:, 1] - p[:, 1] * q[:, 0]

    s1, s2, s3 = side(a, b), side(b, c), side(c, a)
    return ((s1 > 0) & (s2 > 0) & (s3 > 0)) | ((s1 < 0) & (s2 < 0) & (s3 < 0))


def encode_gim(mesh: Mesh, layout: AtlasLayout, resolution: int, encoding: str = CYLINDRICAL,
               norm: NormalizationParams = NormalizationParams(), coverage: Coverage | None = None,
               cylinder: CylindricalParams = CylindricalParams()) -> GeometryImage:
    """Sample the mesh surface at every pixel center covered by a chart.

    ``mesh`` must already be in normalized coordinates (``norm`` records how
    it got there). Cylindrical encoding falls back to cartesian for the whole
    object when a chart wraps around the Y axis; ``flags`` records this.
    """
    if encoding not in ENCODINGS:
        raise ValueError(f"unknown encoding {encoding!r}")
    if not layout.charts:
        raise ValueError("empty layout")
    if layout.certified_resolution != resolution:
        raise ValueError(f"layout certified for resolution {layout.certified_resolution}, not {resolution}")
    cov = coverage if coverage is not None else layout_coverage(layout, resolution)
    lin = cov.linear(resolution)
    _, first = np.unique(lin, return_index=True)
    face, row, col, bary = cov.tri[first], cov.row[first], cov.col[first], cov.bary[first]

    tri = mesh.positions[mesh.faces]
    p = np.einsum("kc,kcd->kd", bary, tri[face])
    face_chart = layout.chartset.face_chart()
    chart = face_chart[face]

    flags = {}
    offsets = np.zeros(len(layout.charts))
    if encoding == CYLINDRICAL:
        offsets, wraps = _azimuth_offsets(tri, face_chart, len(layout.charts))
        if wraps.any():
            flags["cylindrical_fallback"] = [int(i) for i in np.flatnonzero(wraps)]
            encoding = CARTESIAN
            offsets = np.zeros(len(layout.charts))
    if encoding == CYLINDRICAL:
        ch = to_cylindrical(p, cylinder, offsets[chart])
    else:
        ch = to_cartesian_channels(p)
    ch = np.clip(ch, 0.0, 1.0)

    R = resolution
    positions = np.zeros((R, R, 3))
    mask = np.zeros((R, R), bool)
    ids = np.full((R, R), -1, np.int32)
    positions[row, col] = ch
    mask[row, col] = True
    ids[row, col] = chart
    table = tuple(
        ChartRecord(i, c.transform, tuple(int(b) for b in layout.boxes[i]), float(offsets[i]), int(c.provenance))
        for i, c in enumerate(layout.charts)
    )
    return GeometryImage(R, positions, mask, ids, encoding, norm, cylinder, table, flags)


# ---------------------------------------------------------------- albedo


def sample_bilinear(texture: np.ndarray, uv: np.ndarray) -> np.ndarray:
    """Bilinear lookup with clamp-to-edge; texel (i, j) has its center at ((j+.5)/W, (i+.5)/H)."""
    H, W = texture.shape[:2]
    x = np.asarray(uv[..., 0]) * W - 0.5
    y = np.asarray(uv[..., 1]) * H - 0.5
    # land exactly on texel centers when within rounding of them
    x = np.where(np.abs(x - np.rint(x)) < 1e-9, np.rint(x), x)
    y = np.where(np.abs(y - np.rint(y)) < 1e-9, np.rint(y), y)
    x0, y0 = np.floor(x), np.floor(y)
    fx, fy = (x - x0)[..., None], (y - y0)[..., None]
    x0i = np.clip(x0.astype(np.int64), 0, W - 1)
    x1i = np.clip(x0.astype(np.int64) + 1, 0, W - 1)
    y0i = np.clip(y0.astype(np.int64), 0, H - 1)
    y1i = np.clip(y0.astype(np.int64) + 1, 0, H - 1)
    t = texture
    top = t[y0i, x0i] * (1 - fx) + t[y0i, x1i] * fx
    bot = t[y1i, x0i] * (1 - fx) + t[y1i, x1i] * fx
    return top * (1 - fy) + bot * fy


def resample_albedo(mesh: Mesh, layout: AtlasLayout, resolution: int, fill: float = 0.5,
                    coverage: Coverage | None = None) -> AlbedoImage:
    """Albedo atlas pixel-aligned with the geometry image of the same layout.

    Each covered pixel maps back through its chart transform to the authored
    UV and reads the source texture there. Generated charts (no authored UVs)
    and meshes without a texture get the constant ``fill``.
    """
    R = resolution
    cov = coverage if coverage is not None else layout_coverage(layout, R)
    _, first = np.unique(cov.linear(R), return_index=True)
    face, row, col = cov.tri[first], cov.row[first], cov.col[first]
    chart = layout.chartset.face_chart()[face]

    color = np.zeros((R, R, 3), np.float32)
    mask = np.zeros((R, R), bool)
    mask[row, col] = True
    color[row, col] = fill
    missing = mesh.texture is None
    if not missing:
        centers = pixel_centers(R)
        for i, c in enumerate(layout.charts):
            if c.provenance != UVProvenance.MANUAL:
                continue
            sel = chart == i
            atlas_uv = np.stack([centers[col[sel]], centers[row[sel]]], -1)
            src = c.transform.invert(atlas_uv)
            color[row[sel], col[sel]] = sample_bilinear(mesh.texture, src)
    return AlbedoImage(R, color, mask, missing)


# ---------------------------------------------------------------- extract


def extract_mesh(gim: GeometryImage) -> Mesh:
    """Triangulate the pixel grid: one vertex per valid pixel, up to two triangles per 2x2 block.

    Blocks with four same-chart pixels split along the 3D-shorter diagonal
    (ties take the main diagonal, top-left to bottom-right); blocks with
    exactly three same-chart pixels give one triangle; anything else, including
    blocks that mix charts, gives none.
    """
    R = gim.resolution
    mask = gim.mask
    ids = np.where(mask, gim.chart_ids, -1)
    P = gim.decode_positions()
    vidx = np.full((R, R), -1, np.int64)
    vidx[mask] = np.arange(int(mask.sum()))
    centers = pixel_centers(R)
    rows, cols = np.nonzero(mask)
    positions = gim.norm.invert(P[mask])
    uvs = np.stack([centers[cols], centers[rows]], -1)

    # corners: A top-left (i, j), B (i, j+1), C (i+1, j), D bottom-right (i+1, j+1)
    A, B, C, D = (np.s_[:-1, :-1], np.s_[:-1, 1:], np.s_[1:, :-1], np.s_[1:, 1:])
    iA, iB, iC, iD = ids[A], ids[B], ids[C], ids[D]
    vA, vB, vC, vD = vidx[A], vidx[B], vidx[C], vidx[D]
    valid = np.stack([iA >= 0, iB >= 0, iC >= 0, iD >= 0])
    nvalid = valid.sum(0)
    ref = np.max(np.stack([iA, iB, iC, iD]), axis=0)
    same = np.all(~valid | (np.stack([iA, iB, iC, iD]) == ref), axis=0)

    full = (nvalid == 4) & same
    dAD = ((P[A] - P[D]) ** 2).sum(-1)
    dBC = ((P[B] - P[C]) ** 2).sum(-1)
    main = dAD <= dBC

    tris = []
    m = full & main
    tris += [np.stack([vA[m], vB[m], vD[m]], 1), np.stack([vA[m], vD[m], vC[m]], 1)]
    m = full & ~main
    tris += [np.stack([vA[m], vB[m], vC[m]], 1), np.stack([vB[m], vD[m], vC[m]], 1)]

    three = (nvalid == 3) & same
    if three.any():
        tris.append(_three_pixel_triangles(three, valid, (vA, vB, vC, vD), P, ids, full, main))
    faces = np.concatenate(tris) if tris else np.zeros((0, 3), np.int64)
    return Mesh(positions, faces, uvs, faces, np.zeros(len(faces), np.int8))


def _three_pixel_triangles(three, valid, vs, P, ids, full, main):
    vA, vB, vC, vD = vs
    hb, wb = three.shape
    ti, tj = np.nonzero(three)
    chart3 = np.max(np.stack([ids[ti, tj], ids[ti, tj + 1], ids[ti + 1, tj], ids[ti + 1, tj + 1]]), 0)
    # summed normal of neighbouring full blocks in the same chart
    acc = np.zeros((len(ti), 3))
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == dj == 0:
                continue
            ni, nj = ti + di, tj + dj
            k = np.flatnonzero((ni >= 0) & (ni < hb) & (nj >= 0) & (nj < wb))
            ni, nj = ni[k], nj[k]
            k = k[full[ni, nj] & (ids[ni, nj] == chart3[k])]
            if len(k) == 0:
                continue
            ni, nj = ti[k] + di, tj[k] + dj
            pA, pB, pC, pD = P[ni, nj], P[ni, nj + 1], P[ni + 1, nj], P[ni + 1, nj + 1]
            acc[k] += np.where(main[ni, nj][:, None],
                               np.cross(pB - pA, pD - pA) + np.cross(pD - pA, pC - pA),
                               np.cross(pB - pA, pC - pA) + np.cross(pD - pB, pC - pB))
    pA, pB, pC, pD = P[ti, tj], P[ti, tj + 1], P[ti + 1, tj], P[ti + 1, tj + 1]
    wA, wB, wC, wD = (v[ti, tj] for v in vs)
    # counter-clockwise in UV for whichever corner is missing
    options = [
        (~valid[0][ti, tj], (wB, wD, wC), (pB, pD, pC)),
        (~valid[1][ti, tj], (wA, wD, wC), (pA, pD, pC)),
        (~valid[2][ti, tj], (wA, wB, wD), (pA, pB, pD)),
        (~valid[3][ti, tj], (wA, wB, wC), (pA, pB, pC)),
    ]
    out = []
    for m, (a, b, c), (qa, qb, qc) in options:
        if not m.any():
            continue
        n = np.cross(qb[m] - qa[m], qc[m] - qa[m])
        flip = (n * acc[m]).sum(-1) < 0
        t = np.stack([a[m], b[m], c[m]], 1)
        t[flip] = t[flip][:, [0, 2, 1]]
        out.append(t)
    return np.concatenate(out) if out else np.zeros((0, 3), np.int64)


# ---------------------------------------------------------------- rotation


_ROT_A = np.array([[0.0, 1.0], [-1.0, 0.0]])
_ROT_T = np.array([0.0, 1.0])


def _rot_box(box, R):
    c0, r0, c1, r1 = box
    # one quarter turn of np.rot90: new row = R - 1 - old col, new col = old row
    return (r0, R - c1, r1, R - c0)


def rotate_atlas(gim: GeometryImage, albedo: AlbedoImage | None, k: int):
    """Rotate both rasters by k quarter turns (np.rot90 sense); geometry is unchanged."""
    if k not in (0, 1, 2, 3):
        raise ValueError("k must be in 0..3")
    R = gim.resolution
    table = list(gim.chart_table)
    for _ in range(k):
        table = [replace(c, transform=c.transform.then(_ROT_A, _ROT_T, turns=1), box=_rot_box(c.box, R))
                 for c in table]
    g = replace(gim, positions=np.rot90(gim.positions, k).copy(), mask=np.rot90(gim.mask, k).copy(),
                chart_ids=np.rot90(gim.chart_ids, k).copy(), chart_table=tuple(table))
    a = None
    if albedo is not None:
        a = replace(albedo, color=np.rot90(albedo.color, k).copy(), mask=np.rot90(albedo.mask, k).copy())
    return g, a


# ---------------------------------------------------------------- validation


def validate_arrays(positions: np.ndarray, mask: np.ndarray, chart_ids: np.ndarray | None = None) -> list[str]:
    """Reasons a raw geometry image violates the codec invariants (empty when valid)."""
    reasons = []
    if positions.ndim != 3 or positions.shape[2] != 3 or positions.shape[:2] != mask.shape:
        return ["shape mismatch between positions and mask"]
    if positions.shape[0] != positions.shape[1]:
        reasons.append("raster is not square")
    inside = positions[mask]
    outside = positions[~mask]
    if np.any(outside != 0):
        reasons.append("mask/channel inconsistency")
    if not np.all(np.isfinite(inside)):
        reasons.append("non-finite positions inside mask")
    elif inside.size and (inside.min() < 0 or inside.max() > 1):
        reasons.append("channel values outside [0, 1]")
    if chart_ids is not None:
        if np.any(chart_ids[mask] < 0) or np.any(chart_ids[~mask] >= 0):
            reasons.append("chart id raster disagrees with mask")
    return reasons


def validate_gim(gim: GeometryImage) -> list[str]:
    reasons = validate_arrays(gim.positions, gim.mask, gim.chart_ids)
    if gim.positions.shape[0] != gim.resolution:
        reasons.append("resolution mismatch")
    if gim.encoding not in ENCODINGS:
        reasons.append(f"unknown encoding {gim.encoding!r}")
    if gim.chart_ids.size and gim.chart_ids.max() >= len(gim.chart_table) and gim.chart_table:
        reasons.append("chart id without chart table entry")
    return reasons
