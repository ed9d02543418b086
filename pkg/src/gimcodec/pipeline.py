"""Batch curation: manifest in, geometry images + albedo + sidecars + report out."""

from __future__ import annotations

import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from concurrent.futures.process import BrokenProcessPool
from dataclasses import asdict, dataclass, field, fields
import multiprocessing as mp

import numpy as np

from .atlas import AtlasOverflowError, InjectivityError, coverage_filter, prepare_layout, split_charts
from .codec import ENCODINGS, encode_gim, extract_mesh, resample_albedo, rotate_atlas
from .fidelity import compare_meshes
from .files import EXR, PNG16, albedo_path, write_albedo, write_gim
from .mesh import MeshParseError, load_mesh_file, normalize_mesh

log = logging.getLogger(__name__)

WORKERS_ENV = "GIMCODEC_WORKERS"
# comma-separated object ids whose processing raises (or, with ":exit", kills the worker); for tests
FAULT_ENV = "GIMCODEC_FAULT_IDS"

ACCEPTED = "accepted"
REJECTED_COVERAGE = "rejected_coverage"
REJECTED_INJECTIVITY = "rejected_injectivity"
REJECTED_OVERFLOW = "rejected_overflow"
REJECTED_FILTER = "rejected_filter"
PARSE_ERROR = "parse_error"
STATUSES = (ACCEPTED, REJECTED_COVERAGE, REJECTED_INJECTIVITY, REJECTED_OVERFLOW, REJECTED_FILTER, PARSE_ERROR)
ROTATIONS = (90, 180, 270)


@dataclass
class BatchConfig:
    resolution: int = 768
    encoding: str = "cylindrical"
    coverage_threshold: float = 0.8
    gutter: int = 2
    rotations: bool = True
    workers: int = 1
    output_dir: str = "out"
    image_format: str = PNG16
    fidelity_samples: int = 10_000
    seed: int = 0
    # scan / low-poly filter; 0 disables a bound (the defaults filter nothing)
    min_faces: int = 0
    max_faces: int = 0
    max_charts: int = 0

    def __post_init__(self):
        if self.encoding not in ENCODINGS:
            raise ValueError(f"encoding must be one of {ENCODINGS}")
        if self.image_format not in (PNG16, EXR):
            raise ValueError("image_format must be png or exr")
        if self.resolution < 2 or self.gutter < 0 or self.workers < 1:
            raise ValueError("resolution >= 2, gutter >= 0 and workers >= 1 required")
        if not 0.0 <= self.coverage_threshold <= 1.0:
            raise ValueError("coverage_threshold must lie in [0, 1]")
        if min(self.min_faces, self.max_faces, self.max_charts, self.fidelity_samples) < 0:
            raise ValueError("face/chart bounds and fidelity_samples must be >= 0")

    def filter_reason(self, n_faces: int, n_charts: int) -> str:
        """Why an object falls outside the face/chart bounds ("" when inside)."""
        if n_faces < self.min_faces:
            return f"{n_faces} faces below min_faces {self.min_faces}"
        if self.max_faces and n_faces > self.max_faces:
            return f"{n_faces} faces above max_faces {self.max_faces}"
        if self.max_charts and n_charts > self.max_charts:
            return f"{n_charts} charts above max_charts {self.max_charts}"
        return ""

    @classmethod
    def from_dict(cls, d: dict) -> BatchConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def with_env(self) -> BatchConfig:
        """Apply the worker-count override from the environment."""
        env = os.environ.get(WORKERS_ENV)
        if env:
            return BatchConfig(**{**asdict(self), "workers": int(env)})
        return self


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    path: str
    captions: tuple = ()


@dataclass
class JobManifest:
    entries: list = field(default_factory=list)
    config: BatchConfig = field(default_factory=BatchConfig)

    @classmethod
    def load(cls, path: str, config: BatchConfig | None = None) -> JobManifest:
        """Read JSON Lines: optional ``{"config": {...}}`` record, then ``{"id", "path", "captions"}`` records.

        Relative paths resolve against the manifest's directory. An explicit
        ``config`` replaces the one in the file.
        """
        base = os.path.dirname(os.path.abspath(path))
        entries, cfg = [], None
        with open(path) as f:
            for n, line in enumerate(f, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as e:
                    raise ValueError(f"{path}:{n}: {e}") from None
                if "config" in rec:
                    cfg = BatchConfig.from_dict(rec["config"])
                    continue
                p = rec["path"]
                entries.append(ManifestEntry(str(rec["id"]), p if os.path.isabs(p) else os.path.join(base, p),
                                             tuple(rec.get("captions", ()))))
        return cls(entries, config or cfg or BatchConfig())

    def dump(self, path: str) -> None:
        with open(path, "w") as f:
            f.write(json.dumps({"config": asdict(self.config)}) + "\n")
            for e in self.entries:
                f.write(json.dumps({"id": e.id, "path": e.path, "captions": list(e.captions)}) + "\n")

    def validate(self) -> list[str]:
        problems = []
        seen = set()
        for e in self.entries:
            if e.id in seen:
                problems.append(f"duplicate id {e.id!r}")
            seen.add(e.id)
            if not os.path.exists(e.path):
                problems.append(f"{e.id}: missing input {e.path}")
            if not e.id or os.sep in e.id or e.id.startswith("."):
                problems.append(f"bad id {e.id!r}")
        return problems


@dataclass
class ObjectResult:
    id: str
    status: str
    reason: str = ""
    cpu_seconds: float = 0.0
    wall_seconds: float = 0.0
    manual_coverage: float | None = None
    valid_pixels: int | None = None
    outputs: list = field(default_factory=list)
    fidelity: dict | None = None
    warnings: list = field(default_factory=list)


@dataclass
class CurationReport:
    objects: list
    counts: dict
    wall_seconds: float
    objects_per_second: float
    median_cpu_seconds: float
    max_wall_seconds: float
    workers: int
    config: dict

    def to_dict(self) -> dict:
        return asdict(self)


def _inject_fault(obj_id: str) -> None:
    for tok in os.environ.get(FAULT_ENV, "").split(","):
        name, _, mode = tok.partition(":")
        if name and name == obj_id:
            if mode == "exit":
                os._exit(3)
            raise RuntimeError(f"injected fault in {obj_id}")


def process_object(entry: ManifestEntry, config: BatchConfig) -> ObjectResult:
    """Run one object end to end; never raises."""
    t0, c0 = time.perf_counter(), time.process_time()
    res = ObjectResult(entry.id, PARSE_ERROR)
    try:
        _process(entry, config, res)
    except MeshParseError as e:
        res.status, res.reason = PARSE_ERROR, f"{e} (byte {e.offset})"
    except AtlasOverflowError as e:
        res.status, res.reason = REJECTED_OVERFLOW, str(e)
    except InjectivityError as e:
        res.status, res.reason = REJECTED_INJECTIVITY, str(e)
    except Exception as e:  # crash isolation: any failure is this object's problem only
        res.status, res.reason = PARSE_ERROR, f"{type(e).__name__}: {e}"
    res.cpu_seconds = time.process_time() - c0
    res.wall_seconds = time.perf_counter() - t0
    return res


def _process(entry: ManifestEntry, cfg: BatchConfig, res: ObjectResult) -> None:
    _inject_fault(entry.id)
    mesh, load = load_mesh_file(entry.path)
    res.warnings = list(load.warnings)
    mesh, norm = normalize_mesh(mesh)
    charts = split_charts(mesh)
    why = cfg.filter_reason(mesh.n_faces, len(charts.charts))
    if why:
        res.status, res.reason = REJECTED_FILTER, why
        return
    decision = coverage_filter(charts, cfg.coverage_threshold)
    res.manual_coverage = decision.coverage
    if not decision.accepted:
        res.status = REJECTED_COVERAGE
        res.reason = f"manual UV coverage {decision.coverage:.4f} below {cfg.coverage_threshold}"
        return
    R = cfg.resolution
    layout, cov = prepare_layout(mesh, charts, R, cfg.gutter)
    gim = encode_gim(mesh, layout, R, cfg.encoding, norm, cov)
    albedo = resample_albedo(mesh, layout, R, coverage=cov)
    extra = {"id": entry.id, "captions": list(entry.captions), "manual_coverage": decision.coverage,
             "missing_texture": albedo.missing_texture}
    out = cfg.output_dir
    res.outputs += write_gim(out, entry.id, gim, cfg.image_format, extra=extra)
    write_albedo(albedo_path(out, entry.id), albedo)
    res.outputs.append(albedo_path(out, entry.id))
    if cfg.rotations:
        for deg in ROTATIONS:
            g, a = rotate_atlas(gim, albedo, deg // 90)
            sfx = f".rot{deg}"
            res.outputs += write_gim(out, entry.id, g, cfg.image_format, sfx, {**extra, "rotation": deg})
            write_albedo(albedo_path(out, entry.id, sfx), a)
            res.outputs.append(albedo_path(out, entry.id, sfx))
    res.valid_pixels = gim.valid_pixels
    if cfg.fidelity_samples > 0:
        recon = extract_mesh(gim)
        recon = recon.with_positions(norm.apply(recon.positions))
        rep = compare_meshes(mesh, recon, layout.chartset, R, gim.encoding, cfg.fidelity_samples, cfg.seed)
        res.fidelity = rep.to_dict()
    res.outputs = [os.path.basename(p) for p in res.outputs]
    res.status = ACCEPTED


def _check_output_dir(path: str) -> None:
    os.makedirs(path, exist_ok=True)
    probe = os.path.join(path, ".write_probe")
    try:
        with open(probe, "w") as f:
            f.write("")
        os.remove(probe)
    except OSError as e:
        raise OSError(f"output directory {path} is not writable: {e}") from None


def _run_pool(entries, config, workers) -> dict:
    """Process entries in a spawn pool; a worker that dies takes down only its own object."""
    ctx = mp.get_context("spawn")
    results = {}
    try:
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
            futs = {i: pool.submit(process_object, e, config) for i, e in enumerate(entries)}
            for i, f in futs.items():
                results[i] = f.result()
    except BrokenProcessPool:
        # rerun the unfinished objects one per pool so the culprit is isolated
        for i in range(len(entries)):
            if i in results:
                continue
            try:
                with ProcessPoolExecutor(max_workers=1, mp_context=ctx) as pool:
                    results[i] = pool.submit(process_object, entries[i], config).result()
            except BrokenProcessPool:
                results[i] = ObjectResult(entries[i].id, PARSE_ERROR, "worker process crashed")
    return results


def run_batch(manifest: JobManifest, report_path: str | None = None) -> CurationReport:
    """Process every manifest entry independently and write ``report.json`` to the output directory."""
    cfg = manifest.config.with_env()
    problems = manifest.validate()
    if problems:
        raise ValueError("invalid manifest: " + "; ".join(problems))
    _check_output_dir(cfg.output_dir)
    entries = manifest.entries
    t0 = time.perf_counter()
    workers = min(cfg.workers, max(len(entries), 1))
    if workers <= 1:
        results = {i: process_object(e, cfg) for i, e in enumerate(entries)}
    else:
        results = _run_pool(entries, cfg, workers)
    wall = time.perf_counter() - t0
    objs = [results[i] for i in range(len(entries))]  # ordered merge by manifest index
    counts = {s: sum(o.status == s for o in objs) for s in STATUSES}
    cpu = [o.cpu_seconds for o in objs] or [0.0]
    finished = len(objs) - counts[PARSE_ERROR]
    report = CurationReport(
        [asdict(o) for o in objs], counts, wall, finished / wall if wall > 0 else 0.0,
        float(np.median(cpu)), max([o.wall_seconds for o in objs], default=0.0), workers, asdict(cfg),
    )
    path = report_path or os.path.join(cfg.output_dir, "report.json")
    with open(path, "w") as f:
        json.dump(report.to_dict(), f, indent=2)
    log.info("batch done: %s in %.1fs", counts, wall)
    return report
