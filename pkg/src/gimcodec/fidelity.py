"""Surface distance metrics and round-trip reports."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numba
import numpy as np

from .atlas import ChartSet, prepare_layout, split_charts
from .codec import CYLINDRICAL, encode_gim, extract_mesh
from .mesh import Mesh, normalize_mesh, triangle_areas


@numba.njit(cache=True, fastmath=False)
def _closest_sq(px, py, pz, t):
    ax, ay, az = t[0, 0], t[0, 1], t[0, 2]
    abx, aby, abz = t[1, 0] - ax, t[1, 1] - ay, t[1, 2] - az
    acx, acy, acz = t[2, 0] - ax, t[2, 1] - ay, t[2, 2] - az
    apx, apy, apz = px - ax, py - ay, pz - az
    d1 = abx * apx + aby * apy + abz * apz
    d2 = acx * apx + acy * apy + acz * apz
    if d1 <= 0.0 and d2 <= 0.0:
        return apx * apx + apy * apy + apz * apz
    bpx, bpy, bpz = px - t[1, 0], py - t[1, 1], pz - t[1, 2]
    d3 = abx * bpx + aby * bpy + abz * bpz
    d4 = acx * bpx + acy * bpy + acz * bpz
    if d3 >= 0.0 and d4 <= d3:
        return bpx * bpx + bpy * bpy + bpz * bpz
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3)
        qx, qy, qz = apx - v * abx, apy - v * aby, apz - v * abz
        return qx * qx + qy * qy + qz * qz
    cpx, cpy, cpz = px - t[2, 0], py - t[2, 1], pz - t[2, 2]
    d5 = abx * cpx + aby * cpy + abz * cpz
    d6 = acx * cpx + acy * cpy + acz * cpz
    if d6 >= 0.0 and d5 <= d6:
        return cpx * cpx + cpy * cpy + cpz * cpz
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        qx, qy, qz = apx - w * acx, apy - w * acy, apz - w * acz
        return qx * qx + qy * qy + qz * qz
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        bcx, bcy, bcz = t[2, 0] - t[1, 0], t[2, 1] - t[1, 1], t[2, 2] - t[1, 2]
        qx, qy, qz = bpx - w * bcx, bpy - w * bcy, bpz - w * bcz
        return qx * qx + qy * qy + qz * qz
    denom = va + vb + vc
    if denom > 0.0:
        v = vb / denom
        w = vc / denom
        qx = apx - v * abx - w * acx
        qy = apy - v * aby - w * acy
        qz = apz - v * abz - w * acz
        return qx * qx + qy * qy + qz * qz
    # degenerate triangle: nearest of the three edges
    best = np.inf
    for i in range(3):
        j = (i + 1) % 3
        ex, ey, ez = t[j, 0] - t[i, 0], t[j, 1] - t[i, 1], t[j, 2] - t[i, 2]
        fx, fy, fz = px - t[i, 0], py - t[i, 1], pz - t[i, 2]
        ee = ex * ex + ey * ey + ez * ez
        s = 0.0
        if ee > 0.0:
            s = min(max((fx * ex + fy * ey + fz * ez) / ee, 0.0), 1.0)
        qx, qy, qz = fx - s * ex, fy - s * ey, fz - s * ez
        best = min(best, qx * qx + qy * qy + qz * qz)
    return best


@numba.njit(cache=True)
def _pairwise(p, tri, out):
    for i in range(p.shape[0]):
        out[i] = np.sqrt(_closest_sq(p[i, 0], p[i, 1], p[i, 2], tri[i]))


def point_triangle_distance(p: np.ndarray, tri: np.ndarray) -> np.ndarray:
    """Euclidean distance from points (N, 3) to triangles (N, 3, 3), pairwise by row.

    Closest point by Voronoi region of the triangle (Ericson, Real-Time
    Collision Detection); degenerate triangles fall back to their edges.
    """
    p = np.require(np.reshape(p, (-1, 3)), np.float64, ["C", "W"])
    tri = np.require(np.reshape(tri, (-1, 3, 3)), np.float64, ["C", "W"])
    out = np.empty(len(p))
    _pairwise(p, tri, out)
    return out


def brute_force_distance(points: np.ndarray, tri: np.ndarray) -> np.ndarray:
    """Minimum over all triangles; reference implementation for small inputs."""
    points = np.asarray(points, np.float64).reshape(-1, 3)
    tri = np.asarray(tri, np.float64).reshape(-1, 3, 3)
    if len(points) < len(tri):
        # loop over the shorter axis; each point meets every triangle
        return np.array([point_triangle_distance(np.broadcast_to(q, (len(tri), 3)), tri).min(initial=np.inf)
                         for q in points])
    best = np.full(len(points), np.inf)
    for t in tri:
        best = np.minimum(best, point_triangle_distance(points, np.broadcast_to(t, (len(points), 3, 3))))
    return best


MAX_CELLS = 1 << 22


@numba.njit(cache=True)
def _grid_query(p, tri, lo, h, dims, start, items, out):
    nx, ny, nz = dims[0], dims[1], dims[2]
    stamp = np.full(tri.shape[0], -1, np.int64)
    rmax = max(nx, max(ny, nz))
    for i in range(p.shape[0]):
        px, py, pz = p[i, 0], p[i, 1], p[i, 2]
        cx = min(max(int(np.floor((px - lo[0]) / h)), 0), nx - 1)
        cy = min(max(int(np.floor((py - lo[1]) / h)), 0), ny - 1)
        cz = min(max(int(np.floor((pz - lo[2]) / h)), 0), nz - 1)
        # clearance to the walls of the point's own cell (0 when outside the grid)
        wall = np.inf
        for a, c in ((px - lo[0], cx), (py - lo[1], cy), (pz - lo[2], cz)):
            wall = min(wall, a - c * h, (c + 1) * h - a)
        wall = max(wall, 0.0)
        best = np.inf
        r = 0
        while r <= rmax:
            # every cell of ring r is at least (r - 1) h + wall away
            if r > 0 and (r - 1) * h + wall >= best:
                break
            for ix in range(max(cx - r, 0), min(cx + r, nx - 1) + 1):
                for iy in range(max(cy - r, 0), min(cy + r, ny - 1) + 1):
                    edge = abs(ix - cx) == r or abs(iy - cy) == r
                    iz = max(cz - r, 0)
                    while iz <= min(cz + r, nz - 1):
                        cell = (ix * ny + iy) * nz + iz
                        for k in range(start[cell], start[cell + 1]):
                            t = items[k]
                            if stamp[t] == i:
                                continue
                            stamp[t] = i
                            d = _closest_sq(px, py, pz, tri[t])
                            if d < best * best:
                                best = np.sqrt(d)
                        # interior rows of the shell only need its two z faces
                        if edge or iz == cz + r or r == 0:
                            iz += 1
                        else:
                            iz = cz + r if cz + r <= nz - 1 else nz
            r += 1
        out[i] = best


@numba.njit(cache=True)
def _grid_build(tri, lo, h, dims):
    n = tri.shape[0]
    ncell = dims[0] * dims[1] * dims[2]
    # inclusive cell range of each triangle's bounding box, clamped to the grid
    rng = np.empty((n, 6), np.int64)
    count = np.zeros(ncell + 1, np.int64)
    for t in range(n):
        for a in range(3):
            mn = min(tri[t, 0, a], min(tri[t, 1, a], tri[t, 2, a]))
            mx = max(tri[t, 0, a], max(tri[t, 1, a], tri[t, 2, a]))
            rng[t, a] = min(max(int(np.floor((mn - lo[a]) / h)), 0), dims[a] - 1)
            rng[t, 3 + a] = min(max(int(np.floor((mx - lo[a]) / h)), 0), dims[a] - 1)
        for ix in range(rng[t, 0], rng[t, 3] + 1):
            for iy in range(rng[t, 1], rng[t, 4] + 1):
                for iz in range(rng[t, 2], rng[t, 5] + 1):
                    count[(ix * dims[1] + iy) * dims[2] + iz + 1] += 1
    for c in range(ncell):
        count[c + 1] += count[c]
    fill = count[:-1].copy()
    items = np.empty(count[ncell], np.int64)
    for t in range(n):
        for ix in range(rng[t, 0], rng[t, 3] + 1):
            for iy in range(rng[t, 1], rng[t, 4] + 1):
                for iz in range(rng[t, 2], rng[t, 5] + 1):
                    cell = (ix * dims[1] + iy) * dims[2] + iz
                    items[fill[cell]] = t
                    fill[cell] += 1
    return count, items


class SurfaceDistance:
    """Exact nearest-triangle distance queries over a uniform grid.

    Each cell lists the triangles whose bounding boxes touch it. A query
    scans rings of cells around its own cell and stops once the ring's lower
    bound exceeds the best distance found, so the result equals the
    brute-force minimum over all triangles.
    """

    def __init__(self, tri: np.ndarray, max_cells: int = MAX_CELLS):
        tri = np.require(np.reshape(tri, (-1, 3, 3)), np.float64, ["C", "W"])
        if len(tri) == 0:
            raise ValueError("empty mesh")
        self.tri = tri
        tlo = np.minimum(np.minimum(tri[:, 0], tri[:, 1]), tri[:, 2])
        thi = np.maximum(np.maximum(tri[:, 0], tri[:, 1]), tri[:, 2])
        lo, hi = tlo.min(0), thi.max(0)
        span = float(max((hi - lo).max(), 1e-12))
        # a strided subsample sets the cell size; any size gives exact results
        typical = float(np.median((thi - tlo)[:: max(1, len(tri) // 4096)].max(1)))
        h = max(typical, span / max_cells ** (1 / 3), 1e-12)
        dims = np.maximum(np.ceil((hi - lo) / h).astype(np.int64), 1)
        while int(np.prod(dims)) > max_cells:
            h *= 1.25
            dims = np.maximum(np.ceil((hi - lo) / h).astype(np.int64), 1)
        self.start, self.items = _grid_build(tri, lo, float(h), dims)
        self.lo, self.h, self.dims = lo, float(h), dims

    def query(self, points: np.ndarray) -> np.ndarray:
        # writeable input keeps numba on its one cached specialization
        p = np.require(np.reshape(points, (-1, 3)), np.float64, ["C", "W"])
        out = np.empty(len(p))
        _grid_query(p, self.tri, self.lo, self.h, self.dims, self.start, self.items, out)
        return out


def sample_surface(mesh: Mesh, n: int, seed: int = 0, faces: np.ndarray | None = None) -> np.ndarray:
    """Area-uniform points on the mesh from a counter-based (Philox) stream."""
    if n < 1:
        raise ValueError("n_samples must be positive")
    tri = mesh.face_positions() if faces is None else mesh.face_positions()[faces]
    area = triangle_areas(tri)
    if len(tri) == 0 or area.sum() <= 0:
        raise ValueError("empty mesh")
    rng = np.random.Generator(np.random.Philox(seed))
    cdf = np.cumsum(area)
    k = np.minimum(np.searchsorted(cdf, rng.random(n) * cdf[-1], side="right"), len(tri) - 1)
    r1, r2 = rng.random(n), rng.random(n)
    s = np.sqrt(r1)
    w = np.stack([1 - s, s * (1 - r2), s * r2], 1)
    return np.einsum("nc,ncd->nd", w, tri[k])


@dataclass(frozen=True)
class DistanceStats:
    mean: float
    p95: float
    max: float

    @classmethod
    def of(cls, d: np.ndarray) -> DistanceStats:
        return cls(float(d.mean()), float(np.percentile(d, 95)), float(d.max()))


@dataclass(frozen=True)
class ChamferResult:
    a_to_b: DistanceStats
    b_to_a: DistanceStats
    pooled: DistanceStats


def chamfer_distance(a: Mesh, b: Mesh, n_samples: int = 100_000, seed: int = 0) -> ChamferResult:
    """Sampled point-to-surface distances in both directions plus the pooled statistics."""
    if a.n_faces == 0 or b.n_faces == 0:
        raise ValueError("empty mesh")
    dab, dba = _directed_pair(a, b, n_samples, seed)
    return _chamfer(dab, dba)


def _directed_pair(a: Mesh, b: Mesh, n: int, seed: int, index_a=None, index_b=None):
    index_a = index_a or SurfaceDistance(a.face_positions())
    index_b = index_b or SurfaceDistance(b.face_positions())
    return index_b.query(sample_surface(a, n, seed)), index_a.query(sample_surface(b, n, seed))


def _chamfer(dab, dba) -> ChamferResult:
    return ChamferResult(DistanceStats.of(dab), DistanceStats.of(dba), DistanceStats.of(np.concatenate([dab, dba])))


@dataclass(frozen=True)
class AreaDistortion:
    ratios: np.ndarray
    spread: float


def area_distortion(charts: ChartSet) -> AreaDistortion:
    """Per-chart 3D area over atlas UV area, and the max/min spread."""
    r = np.array([c.surface_area_3d / c.atlas_uv_area for c in charts.charts])
    if len(r) == 0:
        return AreaDistortion(r, 1.0)
    return AreaDistortion(r, float(r.max() / r.min()))


@dataclass(frozen=True)
class FidelityReport:
    chamfer_mean: float
    chamfer_p95: float
    chamfer_max: float
    coverage_fraction: float
    area_ratio_spread: float
    vertex_count: int
    triangle_count: int
    chart_count: int
    source_to_recon: DistanceStats
    recon_to_source: DistanceStats
    tolerance: float
    resolution: int
    encoding: str

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def pixel_tolerance(resolution: int) -> float:
    """Two pixel spacings of the [-1, 1] cube."""
    return 2.0 * 2.0 / resolution


def roundtrip_report(mesh: Mesh, resolution: int = 768, encoding: str = CYLINDRICAL,
                     n_samples: int = 100_000, seed: int = 0, gutter_px: int = 2) -> FidelityReport:
    """Split, rescale, pack, encode and extract, then measure the reconstruction in normalized units."""
    m, norm = normalize_mesh(mesh)
    layout, cov = prepare_layout(m, split_charts(m), resolution, gutter_px)
    gim = encode_gim(m, layout, resolution, encoding, norm, cov)
    recon = extract_mesh(gim)
    recon = recon.with_positions(norm.apply(recon.positions))
    return compare_meshes(m, recon, layout.chartset, resolution, gim.encoding, n_samples, seed)


def compare_meshes(source: Mesh, recon: Mesh, charts: ChartSet, resolution: int, encoding: str,
                   n_samples: int = 100_000, seed: int = 0) -> FidelityReport:
    tol = pixel_tolerance(resolution)
    src_index = SurfaceDistance(source.face_positions())
    rec_index = SurfaceDistance(recon.face_positions())
    dab, dba = _directed_pair(source, recon, n_samples, seed, src_index, rec_index)
    ch = _chamfer(dab, dba)
    # coverage counts only samples on charted faces
    charted = np.sort(np.concatenate([c.face_ids for c in charts.charts])) if charts.charts else np.zeros(0, np.int64)
    if len(charted) == source.n_faces:
        near = dab <= tol
    else:
        near = rec_index.query(sample_surface(source, n_samples, seed + 1, faces=charted)) <= tol
    return FidelityReport(
        ch.pooled.mean, ch.pooled.p95, ch.pooled.max, float(near.mean()),
        area_distortion(charts).spread, len(recon.positions), recon.n_faces, len(charts.charts),
        ch.a_to_b, ch.b_to_a, tol, resolution, encoding,
    )
