"""Indexed triangle mesh with per-corner UVs, OBJ I/O and normalization."""

from __future__ import annotations

import io
import logging
import os
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import BinaryIO

import numpy as np

log = logging.getLogger(__name__)


class UVProvenance(IntEnum):
    MANUAL = 0
    GENERATED = 1
    ABSENT = 2


class MeshParseError(ValueError):
    """Malformed mesh file. ``offset`` is the byte offset of the offending record."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Mesh:
    """Triangle mesh; the UV mapping lives in ``uvs``/``face_uvs``.

    ``face_uvs`` holds -1 for faces without texture coordinates. ``texture``
    is an (H, W, 3) float32 raster whose row 0 sits at v = 0.
    """

    positions: np.ndarray
    faces: np.ndarray
    uvs: np.ndarray
    face_uvs: np.ndarray
    uv_provenance: np.ndarray
    texture: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "positions", _readonly(np.asarray(self.positions, np.float64).reshape(-1, 3)))
        object.__setattr__(self, "faces", _readonly(np.asarray(self.faces, np.int64).reshape(-1, 3)))
        object.__setattr__(self, "uvs", _readonly(np.asarray(self.uvs, np.float64).reshape(-1, 2)))
        object.__setattr__(self, "face_uvs", _readonly(np.asarray(self.face_uvs, np.int64).reshape(-1, 3)))
        object.__setattr__(self, "uv_provenance", _readonly(np.asarray(self.uv_provenance, np.int8).reshape(-1)))
        if self.texture is not None:
            object.__setattr__(self, "texture", _readonly(np.asarray(self.texture, np.float32)))
        n = len(self.faces)
        if self.face_uvs.shape[0] != n or self.uv_provenance.shape[0] != n:
            raise ValueError("faces, face_uvs and uv_provenance disagree in length")
        if n:
            if self.faces.min() < 0 or self.faces.max() >= len(self.positions):
                raise ValueError("face references a missing position")
            has = self.face_uvs >= 0
            if np.any(has.any(axis=1) != has.all(axis=1)):
                raise ValueError("faces must carry UVs on all three corners or none")
            if np.any(self.face_uvs >= len(self.uvs)):
                raise ValueError("face references a missing UV")
            if np.any((self.uv_provenance == UVProvenance.ABSENT) != ~has[:, 0]):
                raise ValueError("uv_provenance disagrees with UV indices")

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def has_uv(self) -> np.ndarray:
        return self.face_uvs[:, 0] >= 0

    def face_positions(self) -> np.ndarray:
        """(F, 3, 3) corner positions."""
        return self.positions[self.faces]

    def face_uv_coords(self) -> np.ndarray:
        """(F, 3, 2) corner UVs, NaN for faces without UVs."""
        out = np.full((self.n_faces, 3, 2), np.nan)
        has = self.has_uv
        out[has] = self.uvs[self.face_uvs[has]]
        return out

    def face_areas(self) -> np.ndarray:
        return triangle_areas(self.face_positions())

    def with_positions(self, positions: np.ndarray) -> Mesh:
        return replace(self, positions=positions)


def triangle_areas(tri: np.ndarray) -> np.ndarray:
    """Areas of (..., 3, 3) triangles."""
    e1 = tri[..., 1, :] - tri[..., 0, :]
    e2 = tri[..., 2, :] - tri[..., 0, :]
    # written out: np.cross is several times slower on large batches
    x = e1[..., 1] * e2[..., 2] - e1[..., 2] * e2[..., 1]
    y = e1[..., 2] * e2[..., 0] - e1[..., 0] * e2[..., 2]
    z = e1[..., 0] * e2[..., 1] - e1[..., 1] * e2[..., 0]
    return 0.5 * np.sqrt(x * x + y * y + z * z)


def signed_uv_areas(tri: np.ndarray) -> np.ndarray:
    """Signed areas of (..., 3, 2) triangles, positive when counter-clockwise."""
    e1 = tri[..., 1, :] - tri[..., 0, :]
    e2 = tri[..., 2, :] - tri[..., 0, :]
    return 0.5 * (e1[..., 0] * e2[..., 1] - e1[..., 1] * e2[..., 0])


@dataclass
class LoadReport:
    n_positions: int = 0
    n_uvs: int = 0
    n_faces: int = 0
    faces_without_uv: int = 0
    degenerate_removed: int = 0
    skipped_primitives: int = 0
    uvs_wrapped: int = 0
    multi_texture: bool = False
    texture_missing: bool = False
    warnings: list[str] = field(default_factory=list)

    def warn(self, msg: str):
        log.warning(msg)
        self.warnings.append(msg)


@dataclass(frozen=True)
class NormalizationParams:
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    scale: float = 1.0

    def apply(self, p: np.ndarray) -> np.ndarray:
        return (np.asarray(p, np.float64) - np.asarray(self.center)) / self.scale

    def invert(self, p: np.ndarray) -> np.ndarray:
        return np.asarray(p, np.float64) * self.scale + np.asarray(self.center)

    def to_dict(self) -> dict:
        return {"center": [float(c) for c in self.center], "scale": float(self.scale)}

    @classmethod
    def from_dict(cls, d: dict) -> NormalizationParams:
        return cls(tuple(float(c) for c in d["center"]), float(d["scale"]))


def normalize_mesh(mesh: Mesh) -> tuple[Mesh, NormalizationParams]:
    """Map the mesh so its longest bounding-box axis spans exactly [-1, 1]."""
    if mesh.n_faces == 0:
        raise ValueError("no geometry")
    used = mesh.positions[np.unique(mesh.faces)]
    lo, hi = used.min(axis=0), used.max(axis=0)
    scale = float((hi - lo).max() / 2.0)
    if not scale > 0:
        raise ValueError("no geometry")
    params = NormalizationParams(tuple(float(c) for c in (lo + hi) / 2.0), scale)
    return mesh.with_positions(params.apply(mesh.positions)), params


def build_mesh(positions, faces, uvs, face_uvs, face_material=None, textures=None,
               report: LoadReport | None = None) -> tuple[Mesh, LoadReport]:
    """Shared load-time cleanup: wrap UVs, drop degenerate faces, pick the albedo texture.

    ``textures`` maps material key to an image array (or None when the file
    could not be found); ``face_material`` gives each face's material key.
    """
    report = report or LoadReport()
    positions = np.asarray(positions, np.float64).reshape(-1, 3)
    faces = np.asarray(faces, np.int64).reshape(-1, 3)
    uvs = np.array(uvs, np.float64).reshape(-1, 2)
    face_uvs = np.asarray(face_uvs, np.int64).reshape(-1, 3)

    outside = (uvs < 0.0) | (uvs > 1.0)
    if outside.any():
        report.uvs_wrapped = int(outside.any(axis=1).sum())
        uvs = np.where(outside, uvs - np.floor(uvs), uvs)

    keep = ~_degenerate(positions[faces]) if len(faces) else np.zeros(0, bool)
    report.degenerate_removed = int((~keep).sum())
    faces, face_uvs = faces[keep], face_uvs[keep]
    if face_material is not None:
        face_material = [m for m, k in zip(face_material, keep) if k]

    has_uv = face_uvs[:, 0] >= 0
    prov = np.where(has_uv, UVProvenance.MANUAL, UVProvenance.ABSENT).astype(np.int8)
    texture = None
    if textures:
        texture = _choose_texture(positions[faces], has_uv, face_material, textures, report)

    mesh = Mesh(positions, faces, uvs, face_uvs, prov, texture)
    report.n_positions = len(positions)
    report.n_uvs = len(uvs)
    report.n_faces = mesh.n_faces
    report.faces_without_uv = int((~has_uv).sum())
    return mesh, report


def _degenerate(tri: np.ndarray) -> np.ndarray:
    cross = np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)
    edges = np.stack([tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 1], tri[:, 0] - tri[:, 2]], 1)
    longest = (edges ** 2).sum(-1).max(axis=1)
    return ~(cross > 1e-12 * longest)


def _choose_texture(tri, has_uv, face_material, textures, report):
    # Images keyed by identity of their source; a single referenced image is used
    # directly, otherwise the one covering the most textured surface wins.
    if face_material is None:
        face_material = [None] * len(tri)
    area = triangle_areas(tri)
    cover: dict = {}
    for mat, a, h in zip(face_material, area, has_uv):
        if h and mat in textures:
            cover[mat] = cover.get(mat, 0.0) + a
    if not cover:
        return None
    distinct = {}
    for mat, a in cover.items():
        img_key = textures[mat][0]
        distinct[img_key] = distinct.get(img_key, 0.0) + a
    best = max(sorted(distinct), key=lambda k: distinct[k])
    if len(distinct) > 1:
        report.multi_texture = True
        report.warn(f"{len(distinct)} textures referenced; keeping {best!r}")
    image = next(img for key, img in textures.values() if key == best)
    if image is None:
        report.texture_missing = True
        report.warn(f"texture {best!r} not found")
    return image


# --------------------------------------------------------------------- OBJ


def load_mesh(source: bytes | BinaryIO, format: str = "obj", base_dir: str | None = None
              ) -> tuple[Mesh, LoadReport]:
    """Parse an OBJ or glTF (text or binary) mesh from bytes or a binary stream.

    ``base_dir`` resolves material libraries, external buffers and texture
    images; without it textures are reported missing.
    """
    data = source if isinstance(source, (bytes, bytearray)) else source.read()
    fmt = format.lower()
    if fmt == "obj":
        return _load_obj(bytes(data), base_dir)
    if fmt in ("gltf", "glb"):
        from .gltf import load_gltf

        return load_gltf(bytes(data), base_dir)
    raise ValueError(f"unsupported mesh format {format!r}")


def load_mesh_file(path: str) -> tuple[Mesh, LoadReport]:
    ext = os.path.splitext(path)[1].lower().lstrip(".")
    with open(path, "rb") as f:
        return load_mesh(f, "gltf" if ext == "glb" else ext, os.path.dirname(os.path.abspath(path)))


def _obj_index(tok: str, count: int, offset: int) -> int:
    try:
        i = int(tok)
    except ValueError:
        raise MeshParseError(f"bad index {tok!r}", offset) from None
    if i > 0:
        i -= 1
    elif i < 0:
        i += count
    else:
        raise MeshParseError("index 0 is not valid in OBJ", offset)
    if not 0 <= i < count:
        raise MeshParseError(f"index {tok} out of range", offset)
    return i


def _load_obj(data: bytes, base_dir: str | None) -> tuple[Mesh, LoadReport]:
    report = LoadReport()
    positions: list = []
    uvs: list = []
    faces: list = []
    face_uvs: list = []
    face_mat: list = []
    mtllibs: list[str] = []
    material = None

    offset = 0
    for raw in data.splitlines(keepends=True):
        line_offset = offset
        offset += len(raw)
        line = raw.split(b"#", 1)[0].decode("utf-8", "replace").strip()
        if not line:
            continue
        parts = line.split()
        tag, args = parts[0], parts[1:]
        try:
            if tag == "v":
                if len(args) < 3:
                    raise MeshParseError("vertex needs 3 coordinates", line_offset)
                positions.append([float(a) for a in args[:3]])
            elif tag == "vt":
                if not args:
                    raise MeshParseError("texture coordinate needs values", line_offset)
                uv = [float(a) for a in args[:2]]
                uvs.append(uv if len(uv) == 2 else uv + [0.0])
            elif tag == "f":
                if len(args) < 3:
                    raise MeshParseError("face needs at least 3 vertices", line_offset)
                vi, ti = [], []
                for corner in args:
                    sub = corner.split("/")
                    vi.append(_obj_index(sub[0], len(positions), line_offset))
                    ti.append(_obj_index(sub[1], len(uvs), line_offset) if len(sub) > 1 and sub[1] else -1)
                if min(ti) < 0:
                    ti = [-1] * len(ti)
                for k in range(1, len(vi) - 1):
                    faces.append((vi[0], vi[k], vi[k + 1]))
                    face_uvs.append((ti[0], ti[k], ti[k + 1]))
                    face_mat.append(material)
            elif tag in ("l", "p"):
                report.skipped_primitives += 1
            elif tag == "mtllib":
                mtllibs.append(line[len("mtllib"):].strip())
            elif tag == "usemtl":
                material = line[len("usemtl"):].strip()
        except ValueError as e:
            if isinstance(e, MeshParseError):
                raise
            raise MeshParseError(f"bad number in {tag!r} record", line_offset) from None

    if report.skipped_primitives:
        report.warn(f"skipped {report.skipped_primitives} point/line records")
    textures = _obj_textures(mtllibs, set(face_mat), base_dir, report)
    return build_mesh(positions, faces, uvs, face_uvs, face_mat, textures, report)


def _obj_textures(mtllibs, used, base_dir, report) -> dict:
    used = {m for m in used if m is not None}
    if not used or not mtllibs:
        return {}
    if base_dir is None:
        report.texture_missing = True
        report.warn("material library present but no base directory to resolve it")
        return {}
    maps: dict[str, str] = {}
    for lib in mtllibs:
        path = os.path.join(base_dir, lib)
        if not os.path.exists(path):
            report.warn(f"material library {lib!r} not found")
            continue
        current = None
        with open(path, encoding="utf-8", errors="replace") as f:
            for line in f:
                parts = line.split("#", 1)[0].split()
                if not parts:
                    continue
                if parts[0] == "newmtl":
                    current = " ".join(parts[1:])
                elif parts[0] == "map_Kd" and current is not None and len(parts) > 1:
                    # options such as -s/-o precede the file name
                    maps[current] = parts[-1]
    out = {}
    cache: dict[str, np.ndarray | None] = {}
    for m in sorted(used):
        if m not in maps:
            continue
        fname = os.path.join(base_dir, maps[m])
        if fname not in cache:
            cache[fname] = read_texture(fname) if os.path.exists(fname) else None
        out[m] = (fname, cache[fname])
    if not out:
        report.texture_missing = True
        report.warn("no diffuse texture referenced by the used materials")
    return out


def read_texture(source) -> np.ndarray:
    """Load an 8-bit image as float32 RGB with row 0 at v = 0."""
    from PIL import Image

    if isinstance(source, (bytes, bytearray)):
        source = io.BytesIO(source)
    with Image.open(source) as im:
        rgb = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return np.ascontiguousarray(rgb[::-1])


def save_mesh(mesh: Mesh, format: str = "obj", mtllib: str | None = None,
              material: str | None = None) -> bytes:
    """Serialize to OBJ text. Faces without UVs are written without ``vt`` refs."""
    if format.lower() != "obj":
        raise ValueError(f"unsupported output format {format!r}")
    out = io.StringIO()
    if mtllib:
        out.write(f"mtllib {mtllib}\n")
    for x, y, z in mesh.positions.tolist():
        out.write(f"v {x!r} {y!r} {z!r}\n")
    for u, v in mesh.uvs.tolist():
        out.write(f"vt {u!r} {v!r}\n")
    if material:
        out.write(f"usemtl {material}\n")
    f1 = (mesh.faces + 1).tolist()
    t1 = (mesh.face_uvs + 1).tolist()
    for (a, b, c), (ta, tb, tc) in zip(f1, t1):
        if ta > 0:
            out.write(f"f {a}/{ta} {b}/{tb} {c}/{tc}\n")
        else:
            out.write(f"f {a} {b} {c}\n")
    return out.getvalue().encode()


def write_mtl(material: str, texture_file: str) -> bytes:
    return f"newmtl {material}\nKd 1 1 1\nmap_Kd {texture_file}\n".encode()


def save_mesh_file(path: str, mesh: Mesh) -> list[str]:
    """Write ``path`` as OBJ; a textured mesh also gets a sibling .mtl and .png. Returns written paths."""
    from PIL import Image

    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    stem = os.path.splitext(path)[0]
    name = os.path.basename(stem)
    written = [path]
    mtllib = material = None
    if mesh.texture is not None:
        mtllib, material = name + ".mtl", "albedo"
        png = stem + ".png"
        rgb = np.rint(np.clip(mesh.texture, 0, 1) * 255).astype(np.uint8)[::-1]
        Image.fromarray(np.ascontiguousarray(rgb), "RGB").save(png)
        with open(stem + ".mtl", "wb") as f:
            f.write(write_mtl(material, os.path.basename(png)))
        written += [stem + ".mtl", png]
    with open(path, "wb") as f:
        f.write(save_mesh(mesh, "obj", mtllib, material))
    return written
