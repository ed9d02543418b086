"""On-disk formats: 16-bit PNG or float EXR geometry images, JSON sidecar, 8-bit albedo PNG.

Images are stored top row first with v increasing upward, so raster row 0
(v near 0) is the last image row.
"""

from __future__ import annotations

import json
import os

import cv2
import numpy as np
import OpenEXR
from PIL import Image
from scipy import ndimage

from .codec import AlbedoImage, ChartRecord, CylindricalParams, GeometryImage, validate_arrays
from .mesh import NormalizationParams

FORMAT_VERSION = 1
PNG16 = "png"
EXR = "exr"
_U16 = 65535.0


def gim_path(out_dir: str, obj_id: str, fmt: str = PNG16, suffix: str = "") -> str:
    return os.path.join(out_dir, f"{obj_id}{suffix}.gim.{fmt}")


def meta_path(out_dir: str, obj_id: str, suffix: str = "") -> str:
    return os.path.join(out_dir, f"{obj_id}{suffix}.meta")


def albedo_path(out_dir: str, obj_id: str, suffix: str = "") -> str:
    return os.path.join(out_dir, f"{obj_id}{suffix}.albedo.png")


def quantize16(c: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(c, 0.0, 1.0) * _U16).astype(np.uint16)


def write_gim_image(path: str, gim: GeometryImage) -> None:
    rgba = np.concatenate([gim.positions, gim.mask[..., None].astype(np.float64)], -1)[::-1]
    if path.endswith(".exr"):
        header = {"compression": OpenEXR.ZIP_COMPRESSION, "type": OpenEXR.scanlineimage}
        with OpenEXR.File(header, {"RGBA": np.ascontiguousarray(rgba, np.float32)}) as f:
            f.write(path)
        return
    bgra = quantize16(rgba)[..., [2, 1, 0, 3]]
    if not cv2.imwrite(path, bgra):
        raise OSError(f"could not write {path}")


def read_gim_image(path: str) -> tuple[np.ndarray, np.ndarray]:
    """(positions (R, R, 3) float64, alpha (R, R) float64), rows in raster order."""
    if path.endswith(".exr"):
        with OpenEXR.File(path) as f:
            ch = f.channels()
            if "RGBA" in ch:
                rgba = np.asarray(ch["RGBA"].pixels, np.float64)
            else:
                rgba = np.stack([np.asarray(ch[k].pixels, np.float64) for k in "RGBA"], -1)
    else:
        raw = cv2.imread(path, cv2.IMREAD_UNCHANGED)
        if raw is None:
            raise OSError(f"could not read {path}")
        if raw.ndim != 3 or raw.shape[2] != 4 or raw.dtype != np.uint16:
            raise ValueError(f"{path}: expected a 16-bit RGBA image")
        rgba = raw[..., [2, 1, 0, 3]].astype(np.float64) / _U16
    rgba = rgba[::-1]
    return np.ascontiguousarray(rgba[..., :3]), np.ascontiguousarray(rgba[..., 3])


def sidecar(gim: GeometryImage, image_format: str = PNG16, extra: dict | None = None) -> dict:
    doc = {
        "format_version": FORMAT_VERSION,
        "resolution": gim.resolution,
        "encoding": gim.encoding,
        "image_format": image_format,
        "channel_range": "positions in [-1, 1] mapped to [0, 1]",
        "normalization": gim.norm.to_dict(),
        "cylinder": gim.cylinder.to_dict(),
        "valid_pixels": gim.valid_pixels,
        "charts": [c.to_dict() for c in gim.chart_table],
        "flags": gim.flags,
    }
    if extra:
        doc.update(extra)
    return doc


def write_gim(out_dir: str, obj_id: str, gim: GeometryImage, fmt: str = PNG16, suffix: str = "",
              extra: dict | None = None) -> tuple[str, str]:
    img = gim_path(out_dir, obj_id, fmt, suffix)
    meta = meta_path(out_dir, obj_id, suffix)
    write_gim_image(img, gim)
    with open(meta, "w") as f:
        json.dump(sidecar(gim, fmt, extra), f, indent=2, sort_keys=True)
        f.write("\n")
    return img, meta


def chart_ids_from_boxes(mask: np.ndarray, charts: tuple) -> np.ndarray:
    """Assign chart ids from the disjoint chart boxes, or from 8-connected components if that fails."""
    ids = np.full(mask.shape, -1, np.int32)
    hits = np.zeros(mask.shape, np.int32)
    for c in charts:
        c0, r0, c1, r1 = c.box
        sub = mask[r0:r1, c0:c1]
        ids[r0:r1, c0:c1][sub] = c.id
        hits[r0:r1, c0:c1] += sub
    if charts and not np.any(hits > 1) and np.all(hits[mask] == 1):
        return ids
    labels, _ = ndimage.label(mask, structure=np.ones((3, 3)))
    return np.where(mask, labels - 1, -1).astype(np.int32)


def read_gim(image_path: str, meta: str | dict | None = None) -> GeometryImage:
    """Load a geometry image and its sidecar (default: ``<id>.meta`` next to the image)."""
    if meta is None:
        base = image_path
        for ext in (".gim.png", ".gim.exr"):
            if base.endswith(ext):
                base = base[: -len(ext)]
        meta = base + ".meta"
    if isinstance(meta, str):
        with open(meta) as f:
            meta = json.load(f)
    pos, alpha = read_gim_image(image_path)
    mask = alpha >= 0.5
    res = int(meta["resolution"])
    if pos.shape[:2] != (res, res):
        raise ValueError(f"image is {pos.shape[:2]}, sidecar says {res}")
    charts = tuple(ChartRecord.from_dict(c) for c in meta.get("charts", []))
    return GeometryImage(
        res, pos, mask, chart_ids_from_boxes(mask, charts), meta.get("encoding", "cartesian"),
        NormalizationParams.from_dict(meta.get("normalization", {"center": [0, 0, 0], "scale": 1.0})),
        CylindricalParams(**meta.get("cylinder", {})), charts, dict(meta.get("flags", {})),
    )


def validate_gim_file(image_path: str) -> list[str]:
    """Reasons the stored raster violates the mask/channel invariants."""
    pos, alpha = read_gim_image(image_path)
    reasons = []
    if np.any((alpha != 0) & (alpha != 1)):
        reasons.append("mask is not binary")
    return reasons + validate_arrays(pos, alpha >= 0.5)


def write_albedo(path: str, albedo: AlbedoImage) -> None:
    rgb = np.rint(np.clip(albedo.color, 0, 1) * 255).astype(np.uint8)[::-1]
    Image.fromarray(np.ascontiguousarray(rgb), "RGB").save(path)


def read_albedo(path: str, mask: np.ndarray | None = None) -> AlbedoImage:
    rgb = np.asarray(Image.open(path).convert("RGB"), np.float32)[::-1] / 255.0
    m = mask if mask is not None else np.any(rgb > 0, -1)
    return AlbedoImage(rgb.shape[0], np.ascontiguousarray(rgb), m)
