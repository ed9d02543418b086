"""Procedural UV-mapped meshes with known chart structure, used by tests and scripts."""

from __future__ import annotations

import math

import numpy as np

from .mesh import Mesh, UVProvenance, build_mesh


def mesh_from_triangles(tri_pos: np.ndarray, tri_uv: np.ndarray | None, texture=None,
                        uv_mask: np.ndarray | None = None) -> Mesh:
    """Index (F, 3, 3) corner positions and (F, 3, 2) corner UVs, merging exact duplicates.

    Positions are merged after rounding to 1e-12 so analytically equal points
    built through different trig paths share an index.
    """
    tri_pos = np.asarray(tri_pos, np.float64)
    F = len(tri_pos)
    flat = tri_pos.reshape(-1, 3)
    keys = np.round(flat, 12) + 0.0
    pos, pinv = np.unique(keys, axis=0, return_inverse=True)
    first = np.zeros(len(pos), np.int64)
    first[pinv[::-1]] = np.arange(len(flat))[::-1]
    positions = flat[first]
    faces = pinv.reshape(F, 3)
    if tri_uv is None:
        uvs = np.zeros((0, 2))
        face_uvs = np.full((F, 3), -1)
    else:
        tri_uv = np.asarray(tri_uv, np.float64)
        ukeys = np.round(tri_uv.reshape(-1, 2), 12) + 0.0
        uvs, uinv = np.unique(ukeys, axis=0, return_inverse=True)
        face_uvs = uinv.reshape(F, 3)
        if uv_mask is not None:
            face_uvs = np.where(np.asarray(uv_mask)[:, None], face_uvs, -1)
    mesh, _ = build_mesh(positions, faces, uvs, face_uvs)
    if texture is not None:
        mesh = Mesh(mesh.positions, mesh.faces, mesh.uvs, mesh.face_uvs, mesh.uv_provenance, texture)
    return mesh


def _quads_to_tris(qpos, quv):
    qpos, quv = np.asarray(qpos, float), np.asarray(quv, float)
    idx = np.array([[0, 1, 2], [0, 2, 3]])
    return qpos[:, idx].reshape(-1, 3, 3), quv[:, idx].reshape(-1, 3, 2)


def checker_texture(size: int = 64, cells: int = 8) -> np.ndarray:
    i = np.arange(size) * cells // size
    board = (i[:, None] + i[None, :]) % 2
    tex = np.empty((size, size, 3), np.float32)
    tex[..., 0] = 0.2 + 0.6 * board
    tex[..., 1] = np.linspace(0, 1, size, dtype=np.float32)[:, None]
    tex[..., 2] = np.linspace(1, 0, size, dtype=np.float32)[None, :]
    return tex


def cube(size: float = 1.0, texture: bool = False) -> Mesh:
    """Axis-aligned cube with six independent UV quads (8 positions, 24 UVs, 12 faces)."""
    s = size
    faces = [  # outward-facing corner loops
        [(0, 0, s), (s, 0, s), (s, s, s), (0, s, s)],
        [(s, 0, 0), (0, 0, 0), (0, s, 0), (s, s, 0)],
        [(s, 0, s), (s, 0, 0), (s, s, 0), (s, s, s)],
        [(0, 0, 0), (0, 0, s), (0, s, s), (0, s, 0)],
        [(0, s, s), (s, s, s), (s, s, 0), (0, s, 0)],
        [(0, 0, 0), (s, 0, 0), (s, 0, s), (0, 0, s)],
    ]
    cell = 1.0 / 3.0
    quv = []
    for k in range(6):
        u0, v0 = (k % 3) * cell + 0.02, (k // 3) * 0.5 + 0.02
        w = cell - 0.04
        quv.append([(u0, v0), (u0 + w, v0), (u0 + w, v0 + w), (u0, v0 + w)])
    p, uv = _quads_to_tris(faces, quv)
    return mesh_from_triangles(p, uv, checker_texture() if texture else None)


def box_net(lo, dims, uv_origin, uv_scale):
    """Triangles of a box whose six faces unfold into one cross-shaped UV island.

    Returns (tri_pos, tri_uv); the island spans (2X + 2Z, Y + 2Z) * uv_scale.
    """
    X, Y, Z = dims
    ox, oy, oz = lo

    def P(x, y, z):
        return (ox + x, oy + y, oz + z)

    quads_p, quads_uv = [], []

    def face(corners3d, corners_net):
        quads_p.append(corners3d)
        quads_uv.append([(uv_origin[0] + a * uv_scale, uv_origin[1] + b * uv_scale) for a, b in corners_net])

    face([P(0, 0, Z), P(X, 0, Z), P(X, Y, Z), P(0, Y, Z)],
         [(Z, Z), (Z + X, Z), (Z + X, Z + Y), (Z, Z + Y)])
    face([P(X, 0, Z), P(X, 0, 0), P(X, Y, 0), P(X, Y, Z)],
         [(Z + X, Z), (2 * Z + X, Z), (2 * Z + X, Z + Y), (Z + X, Z + Y)])
    face([P(X, 0, 0), P(0, 0, 0), P(0, Y, 0), P(X, Y, 0)],
         [(2 * Z + X, Z), (2 * Z + 2 * X, Z), (2 * Z + 2 * X, Z + Y), (2 * Z + X, Z + Y)])
    face([P(0, 0, 0), P(0, 0, Z), P(0, Y, Z), P(0, Y, 0)],
         [(0, Z), (Z, Z), (Z, Z + Y), (0, Z + Y)])
    face([P(0, Y, Z), P(X, Y, Z), P(X, Y, 0), P(0, Y, 0)],
         [(Z, Z + Y), (Z + X, Z + Y), (Z + X, 2 * Z + Y), (Z, 2 * Z + Y)])
    face([P(0, 0, 0), P(X, 0, 0), P(X, 0, Z), P(0, 0, Z)],
         [(Z, 0), (Z + X, 0), (Z + X, Z), (Z, Z)])
    return _quads_to_tris(quads_p, quads_uv)


def _grid_tris(nu, nv, wrap_u=False, wrap_v=False):
    """Triangles (as pairs of grid coordinates) of an nu x nv cell grid."""
    tris = []
    for j in range(nv):
        for i in range(nu):
            a, b, c, d = (i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)
            tris.append((a, b, c))
            tris.append((a, c, d))
    return np.array(tris)  # (T, 3, 2) integer grid coords


def parametric_surface(fn, nu, nv, uv_rect, u_range=(0.0, 1.0), v_range=(0.0, 1.0)):
    """Sample ``fn(s, t) -> xyz`` on a grid; UVs are the grid mapped into ``uv_rect``."""
    g = _grid_tris(nu, nv)
    s = u_range[0] + (u_range[1] - u_range[0]) * g[..., 0] / nu
    t = v_range[0] + (v_range[1] - v_range[0]) * g[..., 1] / nv
    pos = fn(s, t)
    u0, v0, u1, v1 = uv_rect
    uv = np.stack([u0 + (u1 - u0) * g[..., 0] / nu, v0 + (v1 - v0) * g[..., 1] / nv], -1)
    return pos, uv


def uv_cut_cylinder(n_around: int = 48, n_height: int = 12, radius: float = 0.5, height: float = 1.5,
                    uv_missing: float = 0.0) -> Mesh:
    """Open tube with a single UV cut along theta = 0."""

    def fn(s, t):
        th = 2 * math.pi * s
        return np.stack([radius * np.cos(th), height * t - height / 2, radius * np.sin(th)], -1)

    circ = 2 * math.pi * radius
    k = 0.96 / max(circ, height)
    pos, uv = parametric_surface(fn, n_around, n_height, (0.02, 0.02, 0.02 + circ * k, 0.02 + height * k))
    return mesh_from_triangles(pos, uv, uv_mask=_missing_band(pos, uv_missing))


def _missing_band(pos, fraction):
    """Mask that drops UVs from the faces with the highest centroid y, about ``fraction`` of them."""
    if fraction <= 0:
        return None
    y = pos.mean(1)[:, 1]
    order = np.argsort(-y, kind="stable")
    mask = np.ones(len(pos), bool)
    mask[order[: int(round(fraction * len(pos)))]] = False
    return mask


def octant_point(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Equal-area map from the triangle a, b >= 0, a + b <= 1 to the +x +y +z sphere octant.

    The corner (0, 0) goes to the pole (0, 0, 1), (1, 0) to +x and (0, 1) to +y.
    """
    r = a + b
    with np.errstate(invalid="ignore", divide="ignore"):
        phi = np.where(r > 0, (b - a) / np.where(r > 0, r, 1.0) + 1.0, 1.0) * (math.pi / 4)
    z = 1.0 - r * r
    rho = r * np.sqrt(np.maximum(2.0 - r * r, 0.0))
    return np.stack([rho * np.cos(phi), rho * np.sin(phi), z], -1)


def octahedral_sphere(n: int = 16, uv_missing: float = 0.0, texture: bool = False) -> Mesh:
    """Unit sphere as eight equal-area octant charts, each a right triangle in UV."""
    tris = []
    for i in range(n):
        for j in range(n - i):
            tris.append(((i, j), (i + 1, j), (i, j + 1)))
            if i + j + 2 <= n:
                tris.append(((i + 1, j), (i + 1, j + 1), (i, j + 1)))
    g = np.array(tris, float) / n
    base = octant_point(g[..., 0], g[..., 1])
    pos_all, uv_all = [], []
    cell_w, cell_h = 0.25, 0.5
    for k in range(8):
        sx, sy, sz = (1 if k & 1 == 0 else -1), (1 if k & 2 == 0 else -1), (1 if k & 4 == 0 else -1)
        p = base * np.array([sx, sy, sz])
        # keep the 3D winding consistent with the UV winding under reflection
        flip = sx * sy * sz < 0
        uv = np.stack([(k % 4) * cell_w + 0.01 + g[..., 0] * (cell_w - 0.02),
                       (k // 4) * cell_h + 0.01 + g[..., 1] * (cell_w - 0.02)], -1)
        if flip:
            p, uv = p[:, [0, 2, 1]], uv[:, [0, 2, 1]]
        # y up: swap so the poles sit on the Y axis
        pos_all.append(p[..., [0, 2, 1]])
        uv_all.append(uv)
    pos, uv = np.concatenate(pos_all), np.concatenate(uv_all)
    return mesh_from_triangles(pos, uv, checker_texture() if texture else None,
                               uv_mask=_missing_band(pos, uv_missing))


def torus(n_major: int = 64, n_minor: int = 16, R: float = 0.75, r: float = 0.25) -> Mesh:
    """Torus cut into two half-ring charts."""

    def fn(s, t):
        th, ph = 2 * math.pi * s, 2 * math.pi * t
        rr = R + r * np.cos(ph)
        return np.stack([rr * np.cos(th), r * np.sin(ph), rr * np.sin(th)], -1)

    length, circ = math.pi * R, 2 * math.pi * r
    k = 0.46 / length
    pos, uv = [], []
    for half in range(2):
        p, u = parametric_surface(fn, n_major // 2, n_minor,
                                  (0.02, 0.02 + half * 0.5, 0.02 + length * k, 0.02 + half * 0.5 + circ * k),
                                  u_range=(0.5 * half, 0.5 * half + 0.5))
        pos.append(p)
        uv.append(u)
    return mesh_from_triangles(np.concatenate(pos), np.concatenate(uv))


def mirrored_strip() -> Mesh:
    """Flat 2x1 strip of four triangles whose UVs reflect at the x = 1 midline."""
    P = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [0, 1, 0], [1, 1, 0], [2, 1, 0]], float)
    U = np.array([[0.1, 0.1], [0.9, 0.1], [0.1, 0.1], [0.1, 0.5], [0.9, 0.5], [0.1, 0.5]])
    F = np.array([[0, 1, 4], [0, 4, 3], [1, 2, 5], [1, 5, 4]])
    return Mesh(P, F, U, F, np.zeros(4, np.int8))


MIRRORED_STRIP_FOLD = (1, 4)


def fold_fan() -> Mesh:
    """Seven-vertex tent whose two sides share one UV region; the ridge D-B-E is the fold.

    Vertex order: A, B, C, D, E, F, G. Side one (A, C) and side two (F, G)
    meet along the ridge D-B-E and map to the same UV half-plane.
    """
    A, B, C, D, E, F_, G = range(7)
    P = np.array([[-0.5, 1, 0.3], [0, 0, 0.6], [0.5, 1, 0.3], [-1, 0, 0.5], [1, 0, 0.5],
                  [-0.5, -1, 0.3], [0.5, -1, 0.3]])
    U = np.c_[0.5 + 0.4 * P[:, 0], 0.1 + 0.8 * np.abs(P[:, 1])]
    F = np.array([[D, B, A], [A, B, C], [B, E, C], [D, F_, B], [F_, G, B], [B, G, E]])
    return Mesh(P, F, U, F, np.zeros(len(F), np.int8))


FOLD_FAN_CREASES = {(1, 3), (1, 4)}


def articulated_figure(texture: bool = False, uv_missing_parts: tuple = ()) -> Mesh:
    """Six box parts (torso, head, two arms, two legs), one cross-shaped UV island each.

    Each box face is split into an s x s grid of quads to give the parts
    realistic triangle counts.
    """
    parts = [  # lo corner, dims
        ((-0.4, 0.0, -0.2), (0.8, 1.0, 0.4)),   # torso
        ((-0.2, 1.05, -0.2), (0.4, 0.4, 0.4)),  # head
        ((-0.65, 0.3, -0.1), (0.2, 0.7, 0.2)),  # left arm
        ((0.45, 0.3, -0.1), (0.2, 0.7, 0.2)),   # right arm
        ((-0.35, -1.0, -0.15), (0.3, 0.95, 0.3)),  # left leg
        ((0.05, -1.0, -0.15), (0.3, 0.95, 0.3)),   # right leg
    ]
    slots = [(0.02, 0.02), (0.02, 0.52), (0.52, 0.52), (0.52, 0.76), (0.52, 0.02), (0.52, 0.27)]
    pos, uv, keep = [], [], []
    for k, ((lo, dims), slot) in enumerate(zip(parts, slots)):
        X, Y, Z = dims
        span = max(2 * X + 2 * Z, Y + 2 * Z)
        scale = (0.46 if k == 0 else 0.46 if k == 1 else 0.22) / span
        p, u = box_net(lo, dims, slot, scale)
        p, u = _subdivide(p, u, 3)
        pos.append(p)
        uv.append(u)
        keep.append(np.full(len(p), k not in uv_missing_parts))
    return mesh_from_triangles(np.concatenate(pos), np.concatenate(uv),
                               checker_texture() if texture else None, uv_mask=np.concatenate(keep))


def _subdivide(tri_pos, tri_uv, s):
    """Split each triangle into s*s triangles (positions and UVs interpolated alike)."""
    bary = []
    for i in range(s):
        for j in range(s - i):
            bary.append(((i, j), (i + 1, j), (i, j + 1)))
            if i + j + 2 <= s:
                bary.append(((i + 1, j), (i + 1, j + 1), (i, j + 1)))
    b = np.array(bary, float) / s  # (k, 3, 2)
    w = np.stack([1 - b[..., 0] - b[..., 1], b[..., 0], b[..., 1]], -1)  # (k, 3, 3)
    p = np.einsum("kcw,fwd->fkcd", w, tri_pos).reshape(-1, 3, 3)
    u = np.einsum("kcw,fwd->fkcd", w, tri_uv).reshape(-1, 3, 2)
    return p, u


def coverage_strip(n_faces: int = 100, n_absent: int = 0) -> Mesh:
    """Row of equal-area triangles; the last ``n_absent`` faces have no UVs."""
    n_quads = n_faces // 2
    qp, qu = [], []
    for i in range(n_quads):
        qp.append([(i, 0, 0), (i + 1, 0, 0), (i + 1, 1, 0), (i, 1, 0)])
        a, b = 0.01 + 0.98 * i / n_quads, 0.01 + 0.98 * (i + 1) / n_quads
        qu.append([(a, 0.4), (b, 0.4), (b, 0.6), (a, 0.6)])
    p, u = _quads_to_tris(qp, qu)
    mask = np.arange(len(p)) < len(p) - n_absent
    return mesh_from_triangles(p, u, uv_mask=mask)


def random_disjoint_triangles(n: int, seed: int = 0) -> Mesh:
    """``n`` triangles in separate grid cells, none sharing a vertex."""
    rng = np.random.default_rng(seed)
    side = int(math.ceil(math.sqrt(n)))
    cells = np.stack(np.unravel_index(np.arange(n), (side, side)), 1).astype(float)
    tri = rng.uniform(0.1, 0.9, (n, 3, 2)) + cells[:, None, :]
    pos = np.concatenate([tri, rng.uniform(0, 0.1, (n, 3, 1))], -1)
    uv = tri / side
    return Mesh(pos.reshape(-1, 3), np.arange(3 * n).reshape(-1, 3), uv.reshape(-1, 2),
                np.arange(3 * n).reshape(-1, 3), np.zeros(n, np.int8))


def without_uvs(mesh: Mesh, faces) -> Mesh:
    """Copy of ``mesh`` with the UVs of ``faces`` removed."""
    fu = mesh.face_uvs.copy()
    prov = mesh.uv_provenance.copy()
    fu[np.asarray(faces)] = -1
    prov[np.asarray(faces)] = UVProvenance.ABSENT
    return Mesh(mesh.positions, mesh.faces, mesh.uvs, fu, prov, mesh.texture)


def fixture_corpus() -> dict[str, Mesh]:
    """Named fixtures covering every chart situation the pipeline handles."""
    return {
        "cube": cube(texture=True),
        "cylinder": uv_cut_cylinder(),
        "sphere": octahedral_sphere(16, texture=True),
        "mirrored_strip": mirrored_strip(),
        "fold_fan": fold_fan(),
        "figure": articulated_figure(texture=True),
        "torus": torus(),
        "sphere_missing": octahedral_sphere(8, uv_missing=0.12),
        "cylinder_missing": uv_cut_cylinder(32, 10, uv_missing=0.18),
        "figure_missing": articulated_figure(uv_missing_parts=(1,)),
    }


def synthetic_object(seed: int) -> Mesh:
    """Randomized but deterministic object for batch experiments."""
    rng = np.random.default_rng(seed)
    kind = seed % 4
    if kind == 0:
        return uv_cut_cylinder(int(rng.integers(16, 48)), int(rng.integers(4, 12)),
                               float(rng.uniform(0.3, 0.8)), float(rng.uniform(0.5, 2.0)),
                               uv_missing=float(rng.choice([0.0, 0.1])))
    if kind == 1:
        return octahedral_sphere(int(rng.integers(4, 12)), uv_missing=float(rng.choice([0.0, 0.15])))
    if kind == 2:
        return torus(2 * int(rng.integers(8, 32)), int(rng.integers(6, 16)),
                     float(rng.uniform(0.5, 1.0)), float(rng.uniform(0.1, 0.3)))
    n = int(rng.integers(1, 5))
    pos, uv = [], []
    for k in range(n):
        dims = rng.uniform(0.2, 1.0, 3)
        lo = rng.uniform(-1, 1, 3)
        span = max(2 * dims[0] + 2 * dims[2], dims[1] + 2 * dims[2])
        p, u = box_net(lo, dims, ((k % 2) * 0.5 + 0.01, (k // 2) * 0.5 + 0.01), 0.47 / span)
        pos.append(p)
        uv.append(u)
    return mesh_from_triangles(np.concatenate(pos), np.concatenate(uv), checker_texture(32, 4))
