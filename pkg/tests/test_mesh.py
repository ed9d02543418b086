import base64
import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gimcodec import fixtures as F
from gimcodec.mesh import (Mesh, MeshParseError, UVProvenance, load_mesh, load_mesh_file, normalize_mesh, save_mesh,
                           save_mesh_file)

TRIANGLE_OBJ = b"v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvt 1 0\nvt 0 1\nf 1/1 2/2 3/3\n"


def cube_obj() -> bytes:
    """Unit cube: 8 shared positions, one independent UV quad (4 vt) per side."""
    corners = [(x, y, z) for x in (0, 1) for y in (0, 1) for z in (0, 1)]
    sides = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    lines = [f"v {x} {y} {z}" for x, y, z in corners]
    for k in range(6):
        u0 = (k % 3) / 3 + 0.01
        v0 = (k // 3) / 2 + 0.01
        lines += [f"vt {u0} {v0}", f"vt {u0 + 0.3} {v0}", f"vt {u0 + 0.3} {v0 + 0.45}", f"vt {u0} {v0 + 0.45}"]
    for k, s in enumerate(sides):
        lines.append("f " + " ".join(f"{v + 1}/{4 * k + i + 1}" for i, v in enumerate(s)))
    return ("\n".join(lines) + "\n").encode()


def reference_counts(text: bytes):
    """Tiny independent OBJ counter: positions, uvs, triangles after fan split."""
    nv = nt = nf = 0
    for line in text.decode().splitlines():
        parts = line.split()
        if not parts:
            continue
        nv += parts[0] == "v"
        nt += parts[0] == "vt"
        if parts[0] == "f":
            nf += len(parts) - 3
    return nv, nt, nf


def test_single_triangle():
    m, rep = load_mesh(TRIANGLE_OBJ)
    assert (len(m.positions), len(m.uvs), m.n_faces) == (3, 3, 1)
    assert m.uv_provenance[0] == UVProvenance.MANUAL
    assert rep.faces_without_uv == 0


def test_cube_counts_match_reference_parser():
    text = cube_obj()
    m, rep = load_mesh(text)
    assert (len(m.positions), len(m.uvs), m.n_faces) == reference_counts(text) == (8, 24, 12)
    assert (rep.n_positions, rep.n_uvs, rep.n_faces) == (8, 24, 12)


def test_face_without_uv_is_absent():
    m, rep = load_mesh(b"v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
    assert m.uv_provenance[0] == UVProvenance.ABSENT
    assert rep.faces_without_uv == 1
    assert not m.has_uv[0]


def test_negative_indices():
    m, _ = load_mesh(b"v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvt 1 0\nvt 0 1\nf -3/-3 -2/-2 -1/-1\n")
    np.testing.assert_array_equal(m.faces, [[0, 1, 2]])
    np.testing.assert_array_equal(m.face_uvs, [[0, 1, 2]])


def test_parse_error_reports_byte_offset():
    text = b"v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n"
    with pytest.raises(MeshParseError) as e:
        load_mesh(text)
    assert e.value.offset == text.index(b"f 1 2 9")
    with pytest.raises(MeshParseError) as e:
        load_mesh(b"v 0 0 0\nv 1 x 0\n")
    assert e.value.offset == 8


def test_lines_and_points_are_skipped_with_warning():
    m, rep = load_mesh(TRIANGLE_OBJ + b"l 1 2\np 3\n")
    assert m.n_faces == 1
    assert rep.skipped_primitives == 2
    assert rep.warnings


def test_degenerate_faces_dropped_and_counted():
    m, rep = load_mesh(b"v 0 0 0\nv 1 0 0\nv 0 1 0\nv 2 0 0\nf 1 2 3\nf 1 2 4\n")
    assert m.n_faces == 1
    assert rep.degenerate_removed == 1


def test_uvs_wrapped_into_unit_square():
    m, rep = load_mesh(b"v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 1.25 -0.25\nvt 2 0\nvt 0 1\nf 1/1 2/2 3/3\n")
    assert rep.uvs_wrapped == 2
    assert np.all((m.uvs >= 0) & (m.uvs <= 1))
    np.testing.assert_allclose(m.uvs[0], [0.25, 0.75])


def test_missing_texture_is_reported(tmp_path):
    (tmp_path / "a.mtl").write_text("newmtl skin\nmap_Kd nowhere.png\n")
    (tmp_path / "a.obj").write_bytes(b"mtllib a.mtl\nusemtl skin\n" + TRIANGLE_OBJ)
    m, rep = load_mesh_file(str(tmp_path / "a.obj"))
    assert m.texture is None
    assert rep.texture_missing and rep.warnings


def test_textured_obj_round_trip(tmp_path):
    cube = F.cube(texture=True)
    written = save_mesh_file(str(tmp_path / "out" / "cube.obj"), cube)
    assert [p.rsplit(".", 1)[1] for p in written] == ["obj", "mtl", "png"]
    m, rep = load_mesh_file(written[0])
    assert m.texture is not None and not rep.texture_missing
    assert np.abs(m.texture - cube.texture).max() <= 1 / 255


def test_save_single_triangle_records():
    m, _ = load_mesh(TRIANGLE_OBJ)
    recs = [line.split()[0] for line in save_mesh(m).decode().splitlines()]
    assert (recs.count("v"), recs.count("vt"), recs.count("f")) == (3, 3, 1)


def test_absent_faces_written_without_vt():
    m = F.without_uvs(F.cube(), [0, 5])
    faces = [line for line in save_mesh(m).decode().splitlines() if line.startswith("f ")]
    assert sum("/" not in f for f in faces) == 2


def test_cube_load_save_load_keeps_faces_bitwise():
    m1, _ = load_mesh(cube_obj())
    m2, _ = load_mesh(save_mesh(m1))
    assert m1.faces.tobytes() == m2.faces.tobytes()
    assert m1.face_uvs.tobytes() == m2.face_uvs.tobytes()


@st.composite
def meshes(draw):
    n = draw(st.integers(1, 12))
    seed = draw(st.integers(0, 2**31 - 1))
    m = F.random_disjoint_triangles(n, seed)
    drop = draw(st.lists(st.integers(0, n - 1), max_size=n, unique=True))
    return F.without_uvs(m, drop) if drop else m


@settings(max_examples=40, deadline=None)
@given(meshes())
def test_save_load_round_trip(m):
    back, _ = load_mesh(save_mesh(m))
    np.testing.assert_allclose(back.positions, m.positions, atol=1e-6)
    np.testing.assert_array_equal(back.faces, m.faces)
    np.testing.assert_array_equal(back.has_uv, m.has_uv)
    np.testing.assert_allclose(back.face_uv_coords()[m.has_uv], m.face_uv_coords()[m.has_uv], atol=1e-6)


@settings(max_examples=40, deadline=None)
@given(meshes())
def test_provenance_partitions_faces(m):
    counts = [(m.uv_provenance == p).sum() for p in UVProvenance]
    assert sum(counts) == m.n_faces


def box(lo, hi):
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    c = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], float)
    P = lo + c * (hi - lo)
    Fc = [[0, 1, 3], [0, 3, 2], [4, 6, 7], [4, 7, 5], [0, 4, 5], [0, 5, 1],
          [2, 3, 7], [2, 7, 6], [0, 2, 6], [0, 6, 4], [1, 5, 7], [1, 7, 3]]
    return Mesh(P, Fc, np.zeros((0, 2)), np.full((12, 3), -1), np.full(12, UVProvenance.ABSENT, np.int8))


def test_normalize_cube_0_2():
    out, p = normalize_mesh(box([0, 0, 0], [2, 2, 2]))
    assert p.center == (1.0, 1.0, 1.0) and p.scale == 1.0
    np.testing.assert_array_equal(out.positions.min(0), [-1, -1, -1])
    np.testing.assert_array_equal(out.positions.max(0), [1, 1, 1])


def test_normalize_fixed_point():
    _, p = normalize_mesh(box([-1, -1, -1], [1, 1, 1]))
    assert p.center == (0.0, 0.0, 0.0) and p.scale == 1.0


def test_normalize_elongated_box():
    out, p = normalize_mesh(box([0, 0, 0], [4, 1, 1]))
    # scalar oracle: half the longest side, center the box middle
    assert p.scale == 2.0
    for axis, want in ((0, (-1.0, 1.0)), (1, (-0.25, 0.25)), (2, (-0.25, 0.25))):
        assert (out.positions[:, axis].min(), out.positions[:, axis].max()) == want


def test_normalize_empty_mesh():
    empty = Mesh(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 2)), np.zeros((0, 3)), np.zeros(0))
    with pytest.raises(ValueError, match="no geometry"):
        normalize_mesh(empty)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 100), st.lists(st.floats(-50, 50), min_size=3, max_size=3))
def test_normalize_properties(seed, s, shift):
    m = F.random_disjoint_triangles(5, seed)
    m = m.with_positions(m.positions * s + np.array(shift))
    out, p = normalize_mesh(m)
    ext = out.positions.max(0) - out.positions.min(0)
    assert abs(ext.max() - 2.0) < 1e-9
    assert np.all(np.abs(out.positions) <= 1 + 1e-12)
    np.testing.assert_allclose(p.invert(out.positions), m.positions, atol=1e-9 * max(s, 1))
    np.testing.assert_array_equal(out.uvs, m.uvs)
    _, p2 = normalize_mesh(out)
    assert np.abs(p2.center).max() < 1e-9 and abs(p2.scale - 1) < 1e-9


def gltf_triangle(with_uv=True) -> bytes:
    pos = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], np.float32).tobytes()
    uv = np.array([[0, 0], [1, 0], [0, 1]], np.float32).tobytes()
    idx = np.array([0, 1, 2], np.uint16).tobytes() + b"\0\0"
    blob = pos + uv + idx
    attrs = {"POSITION": 0}
    if with_uv:
        attrs["TEXCOORD_0"] = 1
    doc = {
        "asset": {"version": "2.0"},
        "buffers": [{"byteLength": len(blob)}],
        "bufferViews": [{"buffer": 0, "byteOffset": 0, "byteLength": 36},
                        {"buffer": 0, "byteOffset": 36, "byteLength": 24},
                        {"buffer": 0, "byteOffset": 60, "byteLength": 6}],
        "accessors": [{"bufferView": 0, "componentType": 5126, "count": 3, "type": "VEC3"},
                      {"bufferView": 1, "componentType": 5126, "count": 3, "type": "VEC2"},
                      {"bufferView": 2, "componentType": 5123, "count": 3, "type": "SCALAR"}],
        "meshes": [{"primitives": [{"attributes": attrs, "indices": 2}]}],
        "nodes": [{"mesh": 0}],
        "scenes": [{"nodes": [0]}],
    }
    return doc, blob


def test_gltf_text_with_data_uri():
    doc, blob = gltf_triangle()
    doc["buffers"][0]["uri"] = "data:application/octet-stream;base64," + base64.b64encode(blob).decode()
    m, rep = load_mesh(json.dumps(doc).encode(), "gltf")
    assert (len(m.positions), m.n_faces) == (3, 1)
    assert m.uv_provenance[0] == UVProvenance.MANUAL
    # glTF puts the texture origin top-left; v is flipped to the OBJ convention
    np.testing.assert_allclose(m.face_uv_coords()[0], [[0, 1], [1, 1], [0, 0]])


def test_glb_binary():
    doc, blob = gltf_triangle(with_uv=False)
    js = json.dumps(doc).encode()
    js += b" " * (-len(js) % 4)
    blob += b"\0" * (-len(blob) % 4)
    body = struct.pack("<II", len(js), 0x4E4F534A) + js + struct.pack("<II", len(blob), 0x004E4942) + blob
    data = struct.pack("<4sII", b"glTF", 2, 12 + len(body)) + body
    m, rep = load_mesh(data, "glb")
    assert m.n_faces == 1
    assert rep.faces_without_uv == 1


def test_glb_truncated():
    with pytest.raises(MeshParseError):
        load_mesh(b"glTF\x02\0\0\0", "glb")
