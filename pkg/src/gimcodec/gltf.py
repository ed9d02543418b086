"""Minimal glTF 2.0 reader (text and binary): triangle geometry, TEXCOORD_0 and base-color texture."""

from __future__ import annotations

import base64
import json
import os
import struct

import numpy as np

from .mesh import LoadReport, Mesh, MeshParseError, build_mesh, read_texture

_COMPONENT = {5120: np.int8, 5121: np.uint8, 5122: np.int16, 5123: np.uint16, 5125: np.uint32, 5126: np.float32}
_WIDTH = {"SCALAR": 1, "VEC2": 2, "VEC3": 3, "VEC4": 4, "MAT4": 16}
_NORM_DIV = {np.int8: 127.0, np.uint8: 255.0, np.int16: 32767.0, np.uint16: 65535.0}
TRIANGLES, STRIP, FAN = 4, 5, 6


def _split_glb(data: bytes) -> tuple[dict, bytes | None]:
    if len(data) < 20:
        raise MeshParseError("truncated GLB header", 0)
    magic, version, length = struct.unpack_from("<4sII", data, 0)
    if version != 2:
        raise MeshParseError(f"unsupported GLB version {version}", 4)
    pos, doc, binary = 12, None, None
    while pos + 8 <= min(length, len(data)):
        clen, ctype = struct.unpack_from("<II", data, pos)
        chunk = data[pos + 8:pos + 8 + clen]
        if len(chunk) != clen:
            raise MeshParseError("truncated GLB chunk", pos)
        if ctype == 0x4E4F534A:
            try:
                doc = json.loads(chunk.decode("utf-8"))
            except ValueError as e:
                raise MeshParseError(f"bad GLB JSON chunk: {e}", pos + 8) from None
        elif ctype == 0x004E4942:
            binary = chunk
        pos += 8 + clen
    if doc is None:
        raise MeshParseError("GLB without JSON chunk", 12)
    return doc, binary


class _Doc:
    def __init__(self, doc: dict, glb_bin: bytes | None, base_dir: str | None):
        self.doc = doc
        self.glb_bin = glb_bin
        self.base_dir = base_dir
        self._buffers: dict[int, bytes] = {}

    def _uri(self, uri: str) -> bytes:
        if uri.startswith("data:"):
            return base64.b64decode(uri.split(",", 1)[1])
        if self.base_dir is None:
            raise FileNotFoundError(uri)
        with open(os.path.join(self.base_dir, uri), "rb") as f:
            return f.read()

    def buffer(self, i: int) -> bytes:
        if i not in self._buffers:
            b = self.doc["buffers"][i]
            self._buffers[i] = self._uri(b["uri"]) if "uri" in b else (self.glb_bin or b"")
        return self._buffers[i]

    def view(self, i: int) -> tuple[bytes, int, int | None]:
        v = self.doc["bufferViews"][i]
        buf = self.buffer(v["buffer"])
        start = v.get("byteOffset", 0)
        return buf[start:start + v["byteLength"]], v["byteLength"], v.get("byteStride")

    def accessor(self, i: int) -> np.ndarray:
        a = self.doc["accessors"][i]
        dtype = np.dtype(_COMPONENT[a["componentType"]]).newbyteorder("<")
        width = _WIDTH[a["type"]]
        count = a["count"]
        if "bufferView" in a:
            raw, _, stride = self.view(a["bufferView"])
            off = a.get("byteOffset", 0)
            item = dtype.itemsize * width
            stride = stride or item
            need = off + stride * (count - 1) + item if count else 0
            if need > len(raw):
                raise ValueError("accessor exceeds its buffer view")
            arr = np.ndarray((count, width), dtype, buffer=raw, offset=off, strides=(stride, dtype.itemsize)).copy()
        else:
            arr = np.zeros((count, width), dtype)
        if "sparse" in a:
            sp = a["sparse"]
            idx_view, _, _ = self.view(sp["indices"]["bufferView"])
            idt = np.dtype(_COMPONENT[sp["indices"]["componentType"]]).newbyteorder("<")
            idx = np.frombuffer(idx_view, idt, sp["count"], sp["indices"].get("byteOffset", 0))
            val_view, _, _ = self.view(sp["values"]["bufferView"])
            vals = np.frombuffer(val_view, dtype, sp["count"] * width, sp["values"].get("byteOffset", 0))
            arr[idx.astype(np.int64)] = vals.reshape(-1, width)
        out = arr.astype(np.float64)
        if a.get("normalized") and dtype.type in _NORM_DIV:
            out = np.maximum(out / _NORM_DIV[dtype.type], -1.0)
        return out

    def image(self, tex_index: int) -> tuple[str, np.ndarray | None]:
        tex = self.doc["textures"][tex_index]
        src = tex.get("source")
        if src is None:
            return f"texture{tex_index}", None
        img = self.doc["images"][src]
        key = img.get("uri", f"image{src}") if not img.get("uri", "").startswith("data:") else f"image{src}"
        try:
            if "bufferView" in img:
                raw, _, _ = self.view(img["bufferView"])
            else:
                raw = self._uri(img["uri"])
            return key, read_texture(raw)
        except (OSError, ValueError):
            return key, None


def _node_matrix(node: dict) -> np.ndarray:
    if "matrix" in node:
        return np.asarray(node["matrix"], np.float64).reshape(4, 4).T
    t = np.asarray(node.get("translation", [0, 0, 0]), np.float64)
    x, y, z, w = node.get("rotation", [0, 0, 0, 1])
    s = np.asarray(node.get("scale", [1, 1, 1]), np.float64)
    r = np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])
    m = np.eye(4)
    m[:3, :3] = r * s
    m[:3, 3] = t
    return m


def _mesh_instances(doc: dict) -> list[tuple[int, np.ndarray]]:
    nodes = doc.get("nodes", [])
    scenes = doc.get("scenes")
    if not scenes:
        return [(i, np.eye(4)) for i in range(len(doc.get("meshes", [])))]
    roots = scenes[doc.get("scene", 0)].get("nodes", [])
    out = []
    stack = [(r, np.eye(4)) for r in reversed(roots)]
    while stack:
        ni, parent = stack.pop()
        node = nodes[ni]
        world = parent @ _node_matrix(node)
        if "mesh" in node:
            out.append((node["mesh"], world))
        for c in reversed(node.get("children", [])):
            stack.append((c, world))
    return out


def _triangles(indices: np.ndarray, mode: int) -> np.ndarray:
    if mode == TRIANGLES:
        return indices[: len(indices) // 3 * 3].reshape(-1, 3)
    if mode == STRIP:
        k = np.arange(len(indices) - 2)
        a, b, c = indices[k], indices[k + 1], indices[k + 2]
        odd = k % 2 == 1
        return np.stack([a, np.where(odd, c, b), np.where(odd, b, c)], 1)
    k = np.arange(1, len(indices) - 1)
    return np.stack([np.full(len(k), indices[0]), indices[k], indices[k + 1]], 1)


def load_gltf(data: bytes, base_dir: str | None = None) -> tuple[Mesh, LoadReport]:
    if data[:4] == b"glTF":
        doc, glb_bin = _split_glb(data)
    else:
        try:
            doc = json.loads(data.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise MeshParseError(f"invalid glTF JSON: {e}", getattr(e, "pos", 0)) from None
        glb_bin = None
    reader = _Doc(doc, glb_bin, base_dir)
    report = LoadReport()
    if doc.get("extensionsRequired"):
        raise MeshParseError(f"required extensions not supported: {doc['extensionsRequired']}", 0)

    positions, uvs, faces, face_uvs, face_mat = [], [], [], [], []
    n_pos = n_uv = 0
    materials = doc.get("materials", [])
    for mesh_index, world in _mesh_instances(doc):
        for prim in doc["meshes"][mesh_index].get("primitives", []):
            mode = prim.get("mode", TRIANGLES)
            if mode not in (TRIANGLES, STRIP, FAN):
                report.skipped_primitives += 1
                continue
            attrs = prim.get("attributes", {})
            try:
                pos = reader.accessor(attrs["POSITION"])[:, :3]
                uv = reader.accessor(attrs["TEXCOORD_0"])[:, :2] if "TEXCOORD_0" in attrs else None
                idx = (reader.accessor(prim["indices"])[:, 0].astype(np.int64)
                       if "indices" in prim else np.arange(len(pos)))
            except (KeyError, IndexError, ValueError, OSError) as e:
                raise MeshParseError(f"bad primitive in mesh {mesh_index}: {e}", 0) from None
            if len(idx) and (idx.min() < 0 or idx.max() >= len(pos)):
                raise MeshParseError(f"index out of range in mesh {mesh_index}", 0)
            tri = _triangles(idx, mode)
            pos = pos @ world[:3, :3].T + world[:3, 3]
            if np.linalg.det(world[:3, :3]) < 0:
                tri = tri[:, [0, 2, 1]]
            positions.append(pos)
            faces.append(tri + n_pos)
            if uv is not None:
                # glTF puts t = 0 at the image top; OBJ convention has v = 0 at the bottom
                uvs.append(np.stack([uv[:, 0], 1.0 - uv[:, 1]], 1))
                face_uvs.append(tri + n_uv)
                n_uv += len(uv)
            else:
                face_uvs.append(np.full_like(tri, -1))
            n_pos += len(pos)
            face_mat.extend([prim.get("material")] * len(tri))

    if report.skipped_primitives:
        report.warn(f"skipped {report.skipped_primitives} point/line primitives")
    textures = {}
    for m in sorted({m for m in face_mat if m is not None}):
        bc = materials[m].get("pbrMetallicRoughness", {}).get("baseColorTexture")
        if bc is not None:
            textures[m] = reader.image(bc["index"])
    if any(m is not None for m in face_mat) and not textures:
        report.warn("no base-color texture on the used materials")
    return build_mesh(
        np.concatenate(positions) if positions else np.zeros((0, 3)),
        np.concatenate(faces) if faces else np.zeros((0, 3), np.int64),
        np.concatenate(uvs) if uvs else np.zeros((0, 2)),
        np.concatenate(face_uvs) if face_uvs else np.zeros((0, 3), np.int64),
        face_mat, textures, report,
    )
