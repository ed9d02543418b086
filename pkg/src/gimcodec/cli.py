"""Command line: encode, decode, validate, stats, batch.

Precedence for every setting: built-in default < ``--config`` file < flag.
Exit codes: 0 success, 1 validation or processing failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, replace

import yaml

from .atlas import coverage_filter, split_charts, verify_injective
from .codec import ENCODINGS, extract_mesh, validate_gim
from .fidelity import roundtrip_report
from .files import EXR, PNG16, read_albedo, read_gim, validate_gim_file
from .mesh import MeshParseError, load_mesh_file, normalize_mesh, save_mesh_file
from .pipeline import ACCEPTED, BatchConfig, JobManifest, ManifestEntry, process_object, run_batch

_MESH_EXT = (".obj", ".gltf", ".glb")
# flag dest -> config key
_CONFIG_KEYS = {"resolution": "resolution", "encoding": "encoding", "coverage_threshold": "coverage_threshold",
                "gutter": "gutter", "rotations": "rotations", "workers": "workers", "image_format": "image_format",
                "fidelity_samples": "fidelity_samples", "seed": "seed", "output": "output_dir",
                "min_faces": "min_faces", "max_faces": "max_faces", "max_charts": "max_charts"}


class UsageError(Exception):
    pass


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path) as f:
        text = f.read()
    data = json.loads(text) if path.endswith(".json") else yaml.safe_load(text)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise UsageError(f"{path}: config must be a mapping")
    return data


def _config(args) -> BatchConfig:
    merged = asdict(BatchConfig())
    try:
        merged.update(asdict(BatchConfig.from_dict({**_load_config(args.config)})))
    except (ValueError, TypeError) as e:
        raise UsageError(str(e)) from None
    for dest, key in _CONFIG_KEYS.items():
        v = getattr(args, dest, None)
        if v is not None:
            merged[key] = v
    try:
        return BatchConfig(**merged)
    except ValueError as e:
        raise UsageError(str(e)) from None


def _common(p: argparse.ArgumentParser, output_required=False, output_help="output directory"):
    p.add_argument("--config", help="JSON or YAML file with default settings")
    p.add_argument("-o", "--output", required=output_required, help=output_help)


def _codec_flags(p: argparse.ArgumentParser):
    p.add_argument("--resolution", type=int)
    p.add_argument("--encoding", choices=ENCODINGS)
    p.add_argument("--coverage-threshold", type=float, dest="coverage_threshold")
    p.add_argument("--gutter", type=int)
    p.add_argument("--image-format", choices=(PNG16, EXR), dest="image_format")
    p.add_argument("--fidelity-samples", type=int, dest="fidelity_samples")
    p.add_argument("--seed", type=int)
    p.add_argument("--min-faces", type=int, dest="min_faces")
    p.add_argument("--max-faces", type=int, dest="max_faces", help="0 means unbounded")
    p.add_argument("--max-charts", type=int, dest="max_charts", help="0 means unbounded")
    p.add_argument("--rotations", action=argparse.BooleanOptionalAction, default=None,
                   help="also write the 90/180/270 degree atlas rotations")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gimcodec", description="Multi-chart geometry image codec")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", help="mesh -> geometry image, albedo and sidecar")
    p.add_argument("mesh")
    _common(p, output_required=False)
    _codec_flags(p)
    p.add_argument("--id", help="output name stem (default: mesh file stem)")

    p = sub.add_parser("decode", help="geometry image -> OBJ")
    p.add_argument("gim")
    p.add_argument("albedo", nargs="?")
    p.add_argument("-o", "--output", required=True, help="output .obj path")

    p = sub.add_parser("validate", help="check a mesh or geometry image; exit 1 on failure")
    p.add_argument("path")
    _common(p)
    _codec_flags(p)

    p = sub.add_parser("stats", help="round-trip fidelity report for a mesh")
    p.add_argument("mesh")
    _common(p)
    _codec_flags(p)

    p = sub.add_parser("batch", help="process a JSON Lines manifest")
    p.add_argument("manifest")
    _common(p)
    _codec_flags(p)
    p.add_argument("--workers", type=int)
    return ap


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def cmd_encode(args) -> int:
    cfg = _config(args)
    obj_id = args.id or os.path.basename(args.mesh).split(".")[0]
    os.makedirs(cfg.output_dir, exist_ok=True)
    res = process_object(ManifestEntry(obj_id, args.mesh), cfg)
    _emit(asdict(res))
    return 0 if res.status == ACCEPTED else 1


def cmd_decode(args) -> int:
    gim = read_gim(args.gim)
    reasons = validate_gim(gim)
    if reasons:
        _emit({"ok": False, "reasons": reasons})
        return 1
    mesh = extract_mesh(gim)
    if args.albedo:
        mesh = replace(mesh, texture=read_albedo(args.albedo, gim.mask).color)
    written = save_mesh_file(args.output, mesh)
    _emit({"ok": True, "vertices": len(mesh.positions), "triangles": mesh.n_faces, "written": written})
    return 0


def cmd_validate(args) -> int:
    path = args.path
    if path.lower().endswith(_MESH_EXT):
        cfg = _config(args)
        try:
            mesh, load = load_mesh_file(path)
            mesh, _ = normalize_mesh(mesh)
        except (MeshParseError, ValueError) as e:
            _emit({"ok": False, "reasons": [f"parse error: {e}"]})
            return 1
        charts = split_charts(mesh)
        reasons = []
        dec = coverage_filter(charts, cfg.coverage_threshold)
        if not dec.accepted:
            reasons.append(f"manual UV coverage {dec.coverage:.4f} below {cfg.coverage_threshold}")
        inj = verify_injective(charts, cfg.resolution)
        if not inj.ok:
            reasons.append(f"authored UVs not injective at {cfg.resolution}: {inj.n_conflict_pixels} pixels")
        _emit({"ok": not reasons, "reasons": reasons, "charts": len(charts.charts),
               "manual_coverage": charts.manual_coverage, "warnings": load.warnings})
        return 1 if reasons else 0
    reasons = validate_gim_file(path)
    if not reasons:
        reasons = validate_gim(read_gim(path))
    _emit({"ok": not reasons, "reasons": reasons})
    return 1 if reasons else 0


def cmd_stats(args) -> int:
    cfg = _config(args)
    mesh, _ = load_mesh_file(args.mesh)
    rep = roundtrip_report(mesh, cfg.resolution, cfg.encoding, cfg.fidelity_samples, cfg.seed, cfg.gutter)
    _emit(rep.to_dict())
    return 0


def cmd_batch(args) -> int:
    try:
        manifest = JobManifest.load(args.manifest)
    except (ValueError, KeyError, TypeError) as e:
        raise UsageError(f"bad manifest: {e}") from None
    # file config sits between manifest config and flags
    base = asdict(manifest.config)
    file_cfg = _load_config(args.config)
    try:
        BatchConfig.from_dict(file_cfg)
    except (ValueError, TypeError) as e:
        raise UsageError(str(e)) from None
    base.update(file_cfg)
    for dest, key in _CONFIG_KEYS.items():
        v = getattr(args, dest, None)
        if v is not None:
            base[key] = v
    try:
        manifest.config = BatchConfig(**base)
    except ValueError as e:
        raise UsageError(str(e)) from None
    problems = manifest.validate()
    if problems:
        _emit({"ok": False, "reasons": problems})
        return 1
    report = run_batch(manifest)
    _emit({"counts": report.counts, "wall_seconds": report.wall_seconds,
           "objects_per_second": report.objects_per_second, "median_cpu_seconds": report.median_cpu_seconds})
    return 0


_COMMANDS = {"encode": cmd_encode, "decode": cmd_decode, "validate": cmd_validate, "stats": cmd_stats,
             "batch": cmd_batch}


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except UsageError as e:
        print(f"gimcodec: error: {e}", file=sys.stderr)
        return 2
    except (OSError, MeshParseError, ValueError) as e:
        print(f"gimcodec: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
