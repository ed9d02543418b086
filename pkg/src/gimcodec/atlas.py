"""Chart decomposition of a mesh's UV mapping, equal-area rescaling and atlas packing."""

from __future__ import annotations

import logging
import math
import os
import subprocess
import tempfile
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components as _cc
from scipy.spatial import cKDTree

from .mesh import Mesh, UVProvenance, signed_uv_areas, triangle_areas
from .raster import Coverage, rasterize

log = logging.getLogger(__name__)

WELD_TOL = 1e-9
UV_TOL = 1e-7
MIN_CHART_UV_AREA = 1e-12
MAX_SHRINK = 4.0


class AtlasOverflowError(RuntimeError):
    pass


class InjectivityError(RuntimeError):
    def __init__(self, report: InjectivityReport):
        super().__init__(f"UV mapping not injective: {report.n_conflict_pixels} conflicting pixels")
        self.report = report


# ---------------------------------------------------------------- transforms


@dataclass(frozen=True)
class ChartTransform:
    """Affine map from source UV to atlas UV: ``atlas = A @ uv + t``."""

    matrix: tuple = (1.0, 0.0, 0.0, 0.0, 1.0, 0.0)
    scale: float = 1.0
    quarter_turns: int = 0

    @property
    def A(self) -> np.ndarray:
        m = self.matrix
        return np.array([[m[0], m[1]], [m[3], m[4]]])

    @property
    def t(self) -> np.ndarray:
        return np.array([self.matrix[2], self.matrix[5]])

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.A))

    def apply(self, uv: np.ndarray) -> np.ndarray:
        return np.asarray(uv) @ self.A.T + self.t

    def invert(self, uv: np.ndarray) -> np.ndarray:
        return (np.asarray(uv) - self.t) @ np.linalg.inv(self.A).T

    def then(self, A: np.ndarray, t: np.ndarray, scale: float = 1.0, turns: int = 0) -> ChartTransform:
        """Compose with a further affine step applied after this one."""
        A2 = A @ self.A
        t2 = A @ self.t + t
        return ChartTransform((A2[0, 0], A2[0, 1], t2[0], A2[1, 0], A2[1, 1], t2[1]),
                              self.scale * scale, (self.quarter_turns + turns) % 4)

    def to_list(self) -> list:
        return [float(v) for v in self.matrix]


@dataclass(frozen=True, eq=False)
class Chart:
    id: int
    face_ids: np.ndarray
    uv_bbox: tuple
    surface_area_3d: float
    uv_area: float
    transform: ChartTransform = ChartTransform()
    provenance: UVProvenance = UVProvenance.MANUAL

    @property
    def atlas_uv_area(self) -> float:
        return self.uv_area * abs(self.transform.det)


@dataclass(frozen=True, eq=False)
class ChartSet:
    """Charts plus the per-face data needed to place them without the mesh.

    ``source_uv`` is (F, 3, 2) and NaN for faces in ``uncovered_faces``.
    """

    charts: tuple
    uncovered_faces: np.ndarray
    manual_coverage: float
    source_uv: np.ndarray
    face_area: np.ndarray
    demoted: int = 0

    @property
    def n_faces(self) -> int:
        return len(self.face_area)

    def face_chart(self) -> np.ndarray:
        out = np.full(self.n_faces, -1, np.int64)
        for i, c in enumerate(self.charts):
            out[c.face_ids] = i
        return out

    def atlas_uv(self) -> np.ndarray:
        out = np.full_like(self.source_uv, np.nan)
        for c in self.charts:
            out[c.face_ids] = c.transform.apply(self.source_uv[c.face_ids])
        return out

    def with_charts(self, charts) -> ChartSet:
        return replace(self, charts=tuple(charts))


@dataclass(frozen=True, eq=False)
class AtlasLayout:
    """Packed charts. ``boxes`` are integer pixel boxes (col0, row0, col1, row1), end-exclusive."""

    chartset: ChartSet
    resolution: int
    gutter_px: int
    fill_scale: float
    boxes: np.ndarray
    certified_resolution: int | None = None

    @property
    def charts(self) -> tuple:
        return self.chartset.charts

    def certified(self, resolution: int) -> AtlasLayout:
        return replace(self, certified_resolution=resolution)


# ---------------------------------------------------------------- topology


def weld_ids(positions: np.ndarray, tol: float = WELD_TOL) -> np.ndarray:
    """Canonical id per position: the smallest index among positions within ``tol``."""
    n = len(positions)
    if n == 0:
        return np.zeros(0, np.int64)
    pairs = cKDTree(positions).query_pairs(tol, output_type="ndarray")
    if len(pairs) == 0:
        return np.arange(n)
    g = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, labels = _cc(g, directed=False)
    first = np.full(labels.max() + 1, n, np.int64)
    np.minimum.at(first, labels, np.arange(n))
    return first[labels]


@dataclass
class _EdgePairs:
    """Interior edges (exactly two incident faces) of a face subset."""

    key: np.ndarray      # (P, 2) canonical endpoint ids, sorted
    face: np.ndarray     # (P, 2) incident faces
    uv_lo: np.ndarray    # (P, 2, 2) each face's UV at key[:, 0]
    uv_hi: np.ndarray    # (P, 2, 2) each face's UV at key[:, 1]
    uv_apex: np.ndarray  # (P, 2, 2) each face's UV at its opposite corner
    nonmanifold: np.ndarray  # (Q, 2) keys of edges with more than two faces


def _edge_pairs(mesh: Mesh, faces: np.ndarray, tol: float, vid_all: np.ndarray | None = None) -> _EdgePairs:
    faces = np.asarray(faces, np.int64)
    vid_all = weld_ids(mesh.positions, tol) if vid_all is None else vid_all
    vid = vid_all[mesh.faces[faces]]
    uv = mesh.face_uv_coords()[faces] if len(mesh.uvs) else np.full((len(faces), 3, 2), np.nan)
    a = vid.reshape(-1)
    b = np.roll(vid, -1, axis=1).reshape(-1)
    hf = np.repeat(np.arange(len(faces)), 3)
    hk = np.tile(np.arange(3), len(faces))
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    ok = lo != hi
    lo, hi, a, hf, hk = lo[ok], hi[ok], a[ok], hf[ok], hk[ok]
    n = np.int64(max(len(mesh.positions), 1))
    key = lo * n + hi
    order = np.argsort(key, kind="stable")
    key, lo, hi, a, hf, hk = key[order], lo[order], hi[order], a[order], hf[order], hk[order]
    uniq, start, count = np.unique(key, return_index=True, return_counts=True)
    two = start[count == 2]
    nm = start[count > 2]

    def corner_uv(h, corner):
        return uv[hf[h], corner]

    h1, h2 = two, two + 1
    out_lo, out_hi, out_apex = [], [], []
    for h in (h1, h2):
        k0, k1 = hk[h], (hk[h] + 1) % 3
        starts_lo = a[h] == lo[h]
        c_lo = np.where(starts_lo, k0, k1)
        c_hi = np.where(starts_lo, k1, k0)
        out_lo.append(corner_uv(h, c_lo))
        out_hi.append(corner_uv(h, c_hi))
        out_apex.append(corner_uv(h, (hk[h] + 2) % 3))
    return _EdgePairs(
        key=np.stack([lo[two], hi[two]], 1),
        face=np.stack([faces[hf[h1]], faces[hf[h2]]], 1),
        uv_lo=np.stack(out_lo, 1), uv_hi=np.stack(out_hi, 1), uv_apex=np.stack(out_apex, 1),
        nonmanifold=np.stack([lo[nm], hi[nm]], 1),
    )


def _seam_mask(p: _EdgePairs) -> np.ndarray:
    d = np.maximum(np.abs(p.uv_lo[:, 0] - p.uv_lo[:, 1]).max(-1), np.abs(p.uv_hi[:, 0] - p.uv_hi[:, 1]).max(-1))
    has = ~np.isnan(d)
    return has & (d > UV_TOL)


def _crease_mask(p: _EdgePairs, seams: np.ndarray) -> np.ndarray:
    def orient(lo, hi, apex):
        e = hi - lo
        r = apex - lo
        return e[:, 0] * r[:, 1] - e[:, 1] * r[:, 0]

    s1 = orient(p.uv_lo[:, 0], p.uv_hi[:, 0], p.uv_apex[:, 0])
    s2 = orient(p.uv_lo[:, 1], p.uv_hi[:, 1], p.uv_apex[:, 1])
    # both apexes on the same side of the shared edge: the map folds back here
    with np.errstate(invalid="ignore"):
        return ~seams & (s1 * s2 > 0)


def _as_edge_set(keys: np.ndarray) -> set:
    return {(int(a), int(b)) for a, b in keys}


def connected_components(mesh: Mesh, tol: float = WELD_TOL) -> list[np.ndarray]:
    """Face sets connected through shared (welded) vertex positions, ordered by smallest face id."""
    F = mesh.n_faces
    if F == 0:
        return []
    vid = weld_ids(mesh.positions, tol)[mesh.faces]
    n = len(mesh.positions)
    rows = np.repeat(np.arange(F), 3)
    g = coo_matrix((np.ones(3 * F), (rows, F + vid.reshape(-1))), shape=(F + n, F + n))
    _, labels = _cc(g, directed=False)
    return _groups(labels[:F])


def _groups(labels: np.ndarray) -> list[np.ndarray]:
    order = np.argsort(labels, kind="stable")
    _, start = np.unique(labels[order], return_index=True)
    groups = np.split(order, start[1:])
    return sorted((np.sort(g) for g in groups), key=lambda g: int(g[0]))


def detect_seams(mesh: Mesh, component, tol: float = WELD_TOL) -> set:
    """Edges (pairs of canonical position ids) whose two faces disagree on the UVs of its endpoints."""
    p = _edge_pairs(mesh, np.asarray(sorted(component)), tol)
    return _as_edge_set(p.key[_seam_mask(p)])


def detect_creases(mesh: Mesh, component, tol: float = WELD_TOL) -> set:
    """Interior non-seam edges across which the UV orientation flips (fold lines)."""
    p = _edge_pairs(mesh, np.asarray(sorted(component)), tol)
    return _as_edge_set(p.key[_crease_mask(p, _seam_mask(p))])


# ---------------------------------------------------------------- charts


def _chart_from_faces(cid, face_ids, source_uv, face_area, provenance=UVProvenance.MANUAL) -> Chart:
    uv = source_uv[face_ids].reshape(-1, 2)
    lo, hi = uv.min(0), uv.max(0)
    return Chart(
        id=cid,
        face_ids=np.asarray(face_ids, np.int64),
        uv_bbox=(float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])),
        surface_area_3d=float(face_area[face_ids].sum()),
        uv_area=float(np.abs(signed_uv_areas(source_uv[face_ids])).sum()),
        provenance=provenance,
    )


def split_charts(mesh: Mesh, tol: float = WELD_TOL) -> ChartSet:
    """Cut every connected component along seams, creases and non-manifold edges."""
    F = mesh.n_faces
    face_area = mesh.face_areas()
    source_uv = mesh.face_uv_coords()
    has = mesh.has_uv
    covered = np.flatnonzero(has)

    p = _edge_pairs(mesh, covered, tol)
    seams = _seam_mask(p)
    cut = seams | _crease_mask(p, seams)
    keep = ~cut
    e = p.face[keep]
    g = coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(F, F))
    _, labels = _cc(g, directed=False)

    charts, demoted_faces = [], []
    for group in (_groups(labels[covered]) if len(covered) else []):
        faces = covered[group]
        c = _chart_from_faces(len(charts), faces, source_uv, face_area)
        if c.uv_area < MIN_CHART_UV_AREA or c.surface_area_3d <= 0:
            demoted_faces.append(faces)
            continue
        charts.append(c)
    if demoted_faces:
        log.warning("%d charts with vanishing UV area moved to uncovered faces", len(demoted_faces))
    uncovered = np.sort(np.concatenate([np.flatnonzero(~has)] + demoted_faces)).astype(np.int64)
    src = source_uv.copy()
    src[uncovered] = np.nan
    total = face_area.sum()
    manual = face_area[mesh.uv_provenance == UVProvenance.MANUAL].sum()
    return ChartSet(tuple(charts), uncovered, float(manual / total) if total > 0 else 0.0,
                    src, face_area, demoted=len(demoted_faces))


Unwrapper = Callable[[np.ndarray], np.ndarray]


def flatten_faces(tri: np.ndarray) -> np.ndarray:
    """Lay each (K, 3, 3) triangle flat in the plane preserving edge lengths."""
    e1 = tri[:, 1] - tri[:, 0]
    e2 = tri[:, 2] - tri[:, 0]
    l1 = np.linalg.norm(e1, axis=1)
    x = e1 / l1[:, None]
    px = (e2 * x).sum(1)
    py = np.linalg.norm(e2 - px[:, None] * x, axis=1)
    uv = np.zeros((len(tri), 3, 2))
    uv[:, 1, 0] = l1
    uv[:, 2, 0] = px
    uv[:, 2, 1] = py
    uv[:, :, 0] -= uv[:, :, 0].min(1, keepdims=True)
    return uv


def unwrap_missing(mesh: Mesh, charts: ChartSet, unwrapper: Unwrapper | None = None) -> ChartSet:
    """Give uncovered faces generated UVs and charts.

    The built-in fallback makes every face its own chart, flattened
    isometrically and uniformly scaled into the unit square, so UV area is
    proportional to 3D area. ``unwrapper`` maps (K, 3, 3) face corners to
    (K, 3, 2) UVs; its output is charted with the same seam/fold rules.
    """
    faces = charts.uncovered_faces
    if len(faces) == 0:
        return charts
    tri = mesh.positions[mesh.faces[faces]]
    src = charts.source_uv.copy()
    new = list(charts.charts)
    if unwrapper is None:
        uv = flatten_faces(tri)
        ext = float(np.ptp(uv, axis=1).max()) or 1.0
        uv /= ext
        src[faces] = uv
        for f in faces:
            new.append(_chart_from_faces(len(new), np.array([f]), src, charts.face_area, UVProvenance.GENERATED))
    else:
        uv = np.asarray(unwrapper(tri), np.float64).reshape(len(faces), 3, 2)
        sub = Mesh(mesh.positions, mesh.faces[faces], uv.reshape(-1, 2),
                   np.arange(3 * len(faces)).reshape(-1, 3), np.zeros(len(faces), np.int8))
        src[faces] = uv
        for c in split_charts(sub).charts:
            new.append(_chart_from_faces(len(new), faces[c.face_ids], src, charts.face_area,
                                         UVProvenance.GENERATED))
        # anything the external tool left degenerate gets the per-face fallback
        done = np.concatenate([c.face_ids for c in new[len(charts.charts):]]) if len(new) > len(charts.charts) else []
        rest = np.setdiff1d(faces, done)
        if len(rest):
            flat = flatten_faces(mesh.positions[mesh.faces[rest]])
            src[rest] = flat / (float(np.ptp(flat, axis=1).max()) or 1.0)
            for f in rest:
                new.append(_chart_from_faces(len(new), np.array([f]), src, charts.face_area, UVProvenance.GENERATED))
    return replace(charts, charts=tuple(new), uncovered_faces=np.zeros(0, np.int64), source_uv=src)


@dataclass
class SubprocessUnwrapper:
    """External unwrapper: runs ``command + [in.obj, out.obj]``.

    The input holds one triangle per uncovered face; the tool must write an
    OBJ with the same faces in the same order, each carrying ``vt`` refs.
    """

    command: list
    timeout: float = 300.0

    def __call__(self, tri: np.ndarray) -> np.ndarray:
        from .mesh import load_mesh, save_mesh

        k = len(tri)
        m = Mesh(tri.reshape(-1, 3), np.arange(3 * k).reshape(-1, 3), np.zeros((0, 2)),
                 np.full((k, 3), -1), np.full(k, UVProvenance.ABSENT, np.int8))
        with tempfile.TemporaryDirectory() as d:
            src, dst = os.path.join(d, "in.obj"), os.path.join(d, "out.obj")
            with open(src, "wb") as f:
                f.write(save_mesh(m))
            subprocess.run(list(self.command) + [src, dst], check=True, timeout=self.timeout)
            with open(dst, "rb") as f:
                out, _ = load_mesh(f, "obj")
        if out.n_faces != k or not out.has_uv.all():
            raise RuntimeError("external unwrapper changed the face list or left faces without UVs")
        return out.uvs[out.face_uvs]


@dataclass(frozen=True)
class CoverageDecision:
    accepted: bool
    coverage: float
    threshold: float


def coverage_filter(charts: ChartSet, threshold: float = 0.8) -> CoverageDecision:
    """Accept when at least ``threshold`` of the surface area carries authored UVs."""
    # slack absorbs summation order only; it cannot move 0.79 across 0.8
    return CoverageDecision(charts.manual_coverage >= threshold - 1e-12, charts.manual_coverage, threshold)


# ---------------------------------------------------------------- injectivity


@dataclass
class InjectivityReport:
    ok: bool
    resolution: int
    n_conflict_pixels: int
    conflicts: list = field(default_factory=list)  # ((row, col), face_a, face_b)


def layout_coverage(charts: ChartSet | AtlasLayout, resolution: int) -> Coverage:
    """Rasterize every charted face in atlas space; ``Coverage.tri`` holds face ids."""
    cs = charts.chartset if isinstance(charts, AtlasLayout) else charts
    faces = np.concatenate([c.face_ids for c in cs.charts]) if cs.charts else np.zeros(0, np.int64)
    uv = np.concatenate([c.transform.apply(cs.source_uv[c.face_ids]) for c in cs.charts]) if cs.charts \
        else np.zeros((0, 3, 2))
    order = np.argsort(faces, kind="stable")
    cov = rasterize(uv[order], resolution)
    cov.tri = faces[order][cov.tri]
    return cov


def verify_injective(charts: ChartSet | AtlasLayout, resolution: int, coverage: Coverage | None = None,
                     max_conflicts: int = 100) -> InjectivityReport:
    """Fail when a pixel center is claimed by faces of two charts or two non-adjacent faces of one chart."""
    cs = charts.chartset if isinstance(charts, AtlasLayout) else charts
    cov = coverage if coverage is not None else layout_coverage(cs, resolution)
    lin = cov.linear(resolution)
    order = np.lexsort((cov.tri, lin))
    lin_s, face_s = lin[order], cov.tri[order]
    dup = np.flatnonzero(lin_s[1:] == lin_s[:-1]) + 1
    if len(dup) == 0:
        return InjectivityReport(True, resolution, 0)
    # pair every extra claimant with the first one and with its predecessor
    first_idx = np.searchsorted(lin_s, lin_s[dup], side="left")
    fa = np.concatenate([face_s[first_idx], face_s[dup - 1]])
    fb = np.concatenate([face_s[dup], face_s[dup]])
    pix = np.concatenate([lin_s[dup], lin_s[dup]])
    fchart = cs.face_chart()
    bad = fchart[fa] != fchart[fb]
    same = ~bad & (fa != fb)
    if same.any():
        ua = cs.source_uv[fa[same]]
        ub = cs.source_uv[fb[same]]
        shared = (np.abs(ua[:, :, None, :] - ub[:, None, :, :]).max(-1) <= 1e-12).any(axis=(1, 2))
        bad[np.flatnonzero(same)[~shared]] = True
    bad_pix = np.unique(pix[bad])
    conflicts = []
    for i in np.flatnonzero(bad)[:max_conflicts]:
        conflicts.append(((int(pix[i] // resolution), int(pix[i] % resolution)), int(fa[i]), int(fb[i])))
    return InjectivityReport(len(bad_pix) == 0, resolution, int(len(bad_pix)), conflicts)


# ---------------------------------------------------------------- rescale and pack


def equal_area_rescale(charts: ChartSet) -> ChartSet:
    """Scale each chart so its UV area is its share of the total 3D area (unit total UV area)."""
    total = sum(c.surface_area_3d for c in charts.charts)
    out = []
    for c in charts.charts:
        if c.uv_area <= 0 or c.surface_area_3d <= 0:
            raise ValueError(f"chart {c.id} has no area")
        s = math.sqrt((c.surface_area_3d / total) / c.uv_area)
        lo = np.array(c.uv_bbox[:2])
        A = np.eye(2) * s
        out.append(replace(c, transform=ChartTransform().then(A, -s * lo, scale=s)))
    return charts.with_charts(out)


def _local_extent(c: Chart, cs: ChartSet) -> tuple[np.ndarray, np.ndarray]:
    uv = c.transform.apply(cs.source_uv[c.face_ids]).reshape(-1, 2)
    return uv.min(0), uv.max(0)


def _shelf(sizes: np.ndarray, order: np.ndarray, res: int, gutter: int):
    pos = np.zeros((len(sizes), 2), np.int64)
    x = y = shelf = 0
    for i in order:
        w, h = int(sizes[i, 0]), int(sizes[i, 1])
        if x + w + gutter > res:
            y += shelf + gutter
            x = shelf = 0
        if x + w + gutter > res or y + h + gutter > res:
            return None
        pos[i] = (x, y)
        x += w + gutter
        shelf = max(shelf, h)
    return pos


def pack_atlas(charts: ChartSet, resolution: int, gutter_px: int = 2, allow_rotation: bool = True) -> AtlasLayout:
    """Deterministic shelf packing of chart boxes into the unit square.

    Charts taller than wide are turned a quarter; boxes are sorted by
    decreasing height and the largest global scale that fits is found by
    bisection, never shrinking more than MAX_SHRINK below the area bound.
    """
    cs = charts
    n = len(cs.charts)
    if n == 0:
        raise ValueError("nothing to pack")
    lows, ext = [], []
    for c in cs.charts:
        lo, hi = _local_extent(c, cs)
        lows.append(lo)
        ext.append(hi - lo)
    lows, ext = np.array(lows), np.array(ext)
    turn = (ext[:, 1] > ext[:, 0]) if allow_rotation else np.zeros(n, bool)
    wh = np.where(turn[:, None], ext[:, ::-1], ext)

    def sizes_at(lam):
        return np.maximum(np.ceil(wh * lam * resolution - 1e-9), 1).astype(np.int64)

    order = np.lexsort((np.arange(n), -wh[:, 0], -wh[:, 1]))
    usable = (resolution - gutter_px) / resolution
    hi = min(1.0 / math.sqrt(float((wh[:, 0] * wh[:, 1]).sum())), usable / float(wh.max()))
    pos = _shelf(sizes_at(hi), order, resolution, gutter_px)
    lam = hi
    if pos is None:
        lo = hi / MAX_SHRINK
        pos = _shelf(sizes_at(lo), order, resolution, gutter_px)
        if pos is None:
            raise AtlasOverflowError(f"{n} charts do not fit at resolution {resolution}")
        lam = lo
        for _ in range(40):
            mid = 0.5 * (lo + hi)
            p = _shelf(sizes_at(mid), order, resolution, gutter_px)
            if p is None:
                hi = mid
            else:
                lo, lam, pos = mid, mid, p
    sizes = sizes_at(lam)

    out = []
    for i, c in enumerate(cs.charts):
        t = c.transform.then(np.eye(2), -lows[i])
        if turn[i]:
            t = t.then(np.array([[0.0, -1.0], [1.0, 0.0]]), np.array([ext[i, 1], 0.0]), turns=1)
        t = t.then(np.eye(2) * lam, pos[i] / resolution, scale=lam)
        out.append(replace(c, transform=t))
    boxes = np.concatenate([pos, pos + sizes], 1)
    return AtlasLayout(cs.with_charts(out), resolution, gutter_px, lam, boxes)


def identity_layout(charts: ChartSet, resolution: int) -> AtlasLayout:
    """Layout that keeps the authored (or current) chart placement as is."""
    boxes = []
    for c in charts.charts:
        lo, hi = _local_extent(c, charts)
        boxes.append([int(np.floor(lo[0] * resolution)), int(np.floor(lo[1] * resolution)),
                      int(np.ceil(hi[0] * resolution)), int(np.ceil(hi[1] * resolution))])
    return AtlasLayout(charts, resolution, 0, 1.0, np.array(boxes, np.int64).reshape(-1, 4))


def prepare_layout(mesh: Mesh, charts: ChartSet, resolution: int, gutter_px: int = 2,
                   unwrapper: Unwrapper | None = None) -> tuple[AtlasLayout, Coverage]:
    """Unwrap, rescale, pack and certify; raises on overflow or injectivity failure."""
    cs = unwrap_missing(mesh, charts, unwrapper)
    cs = equal_area_rescale(cs)
    layout = pack_atlas(cs, resolution, gutter_px)
    cov = layout_coverage(layout, resolution)
    report = verify_injective(layout, resolution, coverage=cov)
    if not report.ok:
        raise InjectivityError(report)
    return layout.certified(resolution), cov
