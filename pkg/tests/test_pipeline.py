import json
import os

import numpy as np
import pytest

from gimcodec import fixtures as F
from gimcodec.atlas import split_charts
from gimcodec.cli import main
from gimcodec.fidelity import chamfer_distance, pixel_tolerance
from gimcodec.mesh import load_mesh_file, normalize_mesh, save_mesh_file
from gimcodec.pipeline import (ACCEPTED, FAULT_ENV, PARSE_ERROR, REJECTED_COVERAGE, REJECTED_FILTER, STATUSES,
                               WORKERS_ENV, BatchConfig, JobManifest, ManifestEntry, process_object, run_batch)


def write_obj(tmp_path, name, mesh):
    path = str(tmp_path / f"{name}.obj")
    save_mesh_file(path, mesh)
    return path


def small(tmp_path, **kw):
    base = dict(resolution=128, fidelity_samples=500, output_dir=str(tmp_path / "out"))
    return BatchConfig(**{**base, **kw})


@pytest.fixture
def three(tmp_path):
    """cube and torus with full UVs plus a strip at manual coverage 0.5."""
    meshes = {"cube": F.cube(), "torus": F.torus(24, 8), "half": F.coverage_strip(40, 20)}
    return [ManifestEntry(k, write_obj(tmp_path, k, m), (f"a {k}",)) for k, m in meshes.items()]


def test_config_defaults_and_validation():
    c = BatchConfig()
    assert (c.resolution, c.encoding, c.coverage_threshold, c.gutter, c.rotations) == (768, "cylindrical", 0.8, 2, True)
    assert (c.min_faces, c.max_faces, c.max_charts) == (0, 0, 0)
    for bad in ({"encoding": "polar"}, {"resolution": 1}, {"coverage_threshold": 1.5}, {"workers": 0},
                {"gutter": -1}, {"image_format": "jpg"}, {"max_faces": -1}, {"fidelity_samples": -1}):
        with pytest.raises(ValueError):
            BatchConfig(**bad)
    with pytest.raises(ValueError, match="unknown"):
        BatchConfig.from_dict({"resolutoin": 512})
    assert BatchConfig.from_dict({"resolution": 512}).resolution == 512


def test_filter_reason_bounds():
    c = BatchConfig(min_faces=10, max_faces=100, max_charts=3)
    assert c.filter_reason(50, 3) == ""
    assert "min_faces" in c.filter_reason(9, 1)
    assert "max_faces" in c.filter_reason(101, 1)
    assert "max_charts" in c.filter_reason(50, 4)
    assert BatchConfig().filter_reason(1, 10_000) == ""


def test_manifest_round_trip_and_relative_paths(tmp_path, three):
    m = JobManifest(three, small(tmp_path))
    path = str(tmp_path / "m.jsonl")
    m.dump(path)
    back = JobManifest.load(path)
    assert back.entries == three and back.config == m.config
    (tmp_path / "rel.jsonl").write_text('# comment\n\n{"id": "c", "path": "cube.obj"}\n')
    rel = JobManifest.load(str(tmp_path / "rel.jsonl"))
    assert rel.entries[0].path == str(tmp_path / "cube.obj") and rel.validate() == []


def test_manifest_validation(tmp_path, three):
    dup = JobManifest(three + [ManifestEntry("cube", three[0].path), ManifestEntry("x", str(tmp_path / "no.obj")),
                               ManifestEntry("a/b", three[0].path)])
    problems = dup.validate()
    assert any("duplicate" in p for p in problems)
    assert any("missing input" in p for p in problems)
    assert any("bad id" in p for p in problems)
    with pytest.raises(ValueError):
        run_batch(dup)
    (tmp_path / "bad.jsonl").write_text("{not json\n")
    with pytest.raises(ValueError):
        JobManifest.load(str(tmp_path / "bad.jsonl"))


def test_batch_statuses_outputs_and_report(tmp_path, three):
    cfg = small(tmp_path)
    rep = run_batch(JobManifest(three, cfg))
    by = {o["id"]: o for o in rep.objects}
    assert [o["id"] for o in rep.objects] == ["cube", "torus", "half"]
    assert (by["cube"]["status"], by["torus"]["status"], by["half"]["status"]) == (ACCEPTED, ACCEPTED,
                                                                                  REJECTED_COVERAGE)
    assert by["half"]["manual_coverage"] == pytest.approx(0.5)
    assert rep.counts[ACCEPTED] == 2 and rep.counts[REJECTED_COVERAGE] == 1
    assert sum(rep.counts.values()) == 3 and set(rep.counts) == set(STATUSES)
    assert rep.wall_seconds >= rep.max_wall_seconds
    want = {"cube.gim.png", "cube.albedo.png", "cube.meta"}
    for deg in (90, 180, 270):
        want |= {f"cube.rot{deg}.gim.png", f"cube.rot{deg}.albedo.png", f"cube.rot{deg}.meta"}
    assert set(by["cube"]["outputs"]) == want
    assert want <= set(os.listdir(cfg.output_dir))
    assert not any(f.startswith("half") for f in os.listdir(cfg.output_dir))
    meta = json.load(open(os.path.join(cfg.output_dir, "cube.meta")))
    assert meta["captions"] == ["a cube"] and meta["valid_pixels"] <= 128 * 128
    assert json.load(open(os.path.join(cfg.output_dir, "cube.rot90.meta")))["rotation"] == 90
    saved = json.load(open(os.path.join(cfg.output_dir, "report.json")))
    assert saved["counts"] == rep.counts
    assert by["cube"]["fidelity"]["chamfer_p95"] <= pixel_tolerance(128)


def test_rotations_can_be_disabled_and_exr_output(tmp_path, three):
    cfg = small(tmp_path, rotations=False, image_format="exr")
    rep = run_batch(JobManifest(three[:1], cfg))
    assert set(rep.objects[0]["outputs"]) == {"cube.gim.exr", "cube.albedo.png", "cube.meta"}


def test_empty_manifest(tmp_path):
    rep = run_batch(JobManifest([], small(tmp_path)))
    assert sum(rep.counts.values()) == 0 and rep.objects == []


def test_unwritable_output_dir(tmp_path, three):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError):
        run_batch(JobManifest(three, small(tmp_path, output_dir=str(blocker / "sub"))))


def test_filter_status(tmp_path, three):
    n = [len(split_charts(normalize_mesh(load_mesh_file(e.path)[0])[0]).charts) for e in three]
    assert n[0] == 6 and n[2] == 1
    rep = run_batch(JobManifest(three, small(tmp_path, max_charts=n[1], fidelity_samples=0)))
    st = [o["status"] for o in rep.objects]
    assert st == [REJECTED_FILTER if n[1] < 6 else ACCEPTED, ACCEPTED, REJECTED_COVERAGE]
    rep = run_batch(JobManifest(three, small(tmp_path, max_charts=1, fidelity_samples=0)))
    assert [o["status"] for o in rep.objects][:2] == [REJECTED_FILTER, REJECTED_FILTER if n[1] > 1 else ACCEPTED]
    rep = run_batch(JobManifest(three, small(tmp_path, min_faces=100, fidelity_samples=0)))
    assert [o["status"] for o in rep.objects] == [REJECTED_FILTER, ACCEPTED, REJECTED_FILTER]


def test_parse_error_isolated(tmp_path, three):
    bad = tmp_path / "bad.obj"
    bad.write_text("v 0 0 0\nf 1 2 3\n")
    res = process_object(ManifestEntry("bad", str(bad)), small(tmp_path))
    assert res.status == PARSE_ERROR and "byte" in res.reason
    rep = run_batch(JobManifest(three[:1] + [ManifestEntry("bad", str(bad))], small(tmp_path)))
    assert [o["status"] for o in rep.objects] == [ACCEPTED, PARSE_ERROR]


def test_fault_injection_with_workers(tmp_path, three, monkeypatch):
    monkeypatch.setenv(FAULT_ENV, "cube:exit,torus")
    rep = run_batch(JobManifest(three, small(tmp_path, workers=2, fidelity_samples=0)))
    assert [o["status"] for o in rep.objects] == [PARSE_ERROR, PARSE_ERROR, REJECTED_COVERAGE]
    assert "crashed" in rep.objects[0]["reason"] and "injected" in rep.objects[1]["reason"]
    # objects_per_second counts only objects that finished
    assert rep.objects_per_second == pytest.approx(1 / rep.wall_seconds)


def test_workers_env_override(tmp_path, three, monkeypatch):
    monkeypatch.setenv(WORKERS_ENV, "2")
    rep = run_batch(JobManifest(three, small(tmp_path, fidelity_samples=0)))
    assert rep.workers == 2 and rep.config["workers"] == 2


def test_parallel_outputs_bit_identical(tmp_path, three):
    outs = []
    for w in (1, 3):
        cfg = small(tmp_path, workers=w, output_dir=str(tmp_path / f"w{w}"))
        run_batch(JobManifest(three, cfg))
        files = sorted(f for f in os.listdir(cfg.output_dir) if f != "report.json")
        outs.append({f: open(os.path.join(cfg.output_dir, f), "rb").read() for f in files})
    assert outs[0] == outs[1]


# command line


def run(capsys, *argv):
    code = main(list(argv))
    return code, capsys.readouterr()


def test_cli_usage_errors(capsys):
    assert run(capsys, "encode", "--bogus")[0] == 2
    assert run(capsys)[0] == 2
    assert run(capsys, "stats", "x.obj", "--encoding", "polar")[0] == 2


def test_cli_encode_decode_cube(tmp_path, capsys):
    src = write_obj(tmp_path, "cube", F.cube(size=3.0))
    out = str(tmp_path / "o")
    code, cap = run(capsys, "encode", src, "-o", out, "--no-rotations", "--fidelity-samples", "0")
    assert code == 0 and json.loads(cap.out)["status"] == ACCEPTED
    meta = json.load(open(os.path.join(out, "cube.meta")))
    assert meta["valid_pixels"] <= 589_824
    dec = str(tmp_path / "back.obj")
    code, cap = run(capsys, "decode", os.path.join(out, "cube.gim.png"), os.path.join(out, "cube.albedo.png"),
                    "-o", dec)
    assert code == 0 and json.loads(cap.out)["ok"]
    orig, norm = normalize_mesh(F.cube(size=3.0))
    back, _ = load_mesh_file(dec)
    back = back.with_positions(norm.apply(back.positions))
    assert back.texture is not None
    assert chamfer_distance(orig, back, 20_000).pooled.p95 <= pixel_tolerance(768)


def test_cli_validate(tmp_path, capsys):
    import cv2

    src = write_obj(tmp_path, "cube", F.cube())
    out = str(tmp_path / "o")
    assert run(capsys, "encode", src, "-o", out, "--resolution", "128", "--no-rotations")[0] == 0
    img = os.path.join(out, "cube.gim.png")
    code, cap = run(capsys, "validate", img)
    assert code == 0 and json.loads(cap.out)["ok"]
    raw = cv2.imread(img, cv2.IMREAD_UNCHANGED)
    i, j = np.argwhere(raw[..., 3] == 0)[0]
    raw[i, j, :3] = 999
    cv2.imwrite(img, raw)
    code, cap = run(capsys, "validate", img)
    assert code == 1 and "mask/channel inconsistency" in json.loads(cap.out)["reasons"]
    half = write_obj(tmp_path, "half", F.coverage_strip(40, 20))
    code, cap = run(capsys, "validate", half, "--resolution", "128")
    assert code == 1 and "coverage" in json.loads(cap.out)["reasons"][0]
    assert run(capsys, "validate", src, "--resolution", "128")[0] == 0


def test_cli_encode_rejected_exits_1(tmp_path, capsys):
    half = write_obj(tmp_path, "half", F.coverage_strip(40, 20))
    code, cap = run(capsys, "encode", half, "-o", str(tmp_path / "o"))
    assert code == 1 and json.loads(cap.out)["status"] == REJECTED_COVERAGE


def test_cli_config_precedence(tmp_path, capsys):
    src = write_obj(tmp_path, "cube", F.cube())
    cfg = tmp_path / "c.yaml"
    cfg.write_text("resolution: 64\nfidelity_samples: 300\nseed: 5\n")
    code, cap = run(capsys, "stats", src, "--config", str(cfg))
    rep = json.loads(cap.out)
    assert code == 0 and rep["resolution"] == 64
    code, cap = run(capsys, "stats", src, "--config", str(cfg), "--resolution", "96")
    assert json.loads(cap.out)["resolution"] == 96
    code, cap = run(capsys, "stats", src, "--resolution", "64", "--fidelity-samples", "300", "--seed", "5")
    assert json.loads(cap.out) == rep
    cfg.write_text("resolutoin: 64\n")
    assert run(capsys, "stats", src, "--config", str(cfg))[0] == 2


def test_cli_batch(tmp_path, capsys, three):
    path = str(tmp_path / "m.jsonl")
    JobManifest(three, small(tmp_path)).dump(path)
    code, cap = run(capsys, "batch", path, "--fidelity-samples", "0", "-o", str(tmp_path / "b"))
    counts = json.loads(cap.out)["counts"]
    assert code == 0 and counts[ACCEPTED] == 2 and counts[REJECTED_COVERAGE] == 1
    assert os.path.exists(tmp_path / "b" / "report.json")
    JobManifest(three + [ManifestEntry("cube", three[0].path)], small(tmp_path)).dump(path)
    assert run(capsys, "batch", path)[0] == 1
