"""On-disk formats: frame bundle directories, map files, colored PLY export.

Everything binary is little-endian regardless of host. A frame lives at
``<root>/frames/<index>/`` as manifest.json + depth.u16 (millimeters) +
mask.u16 + emb.f32; a map is map.json plus float32 sidecars for points and
embeddings. JSON is written with sorted keys and atomically (tmp + rename),
so identical inputs produce identical bytes.
"""

from __future__ import annotations

import colorsys
import json
import os
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .types import (
    CameraIntrinsics,
    FrameBundle,
    FusionConfig,
    InstanceMap,
    InstanceRecord,
    MapInstance,
    Observation,
    Pose,
    area_fraction_from_bbox,
    validate_frame_bundle,
)

__all__ = [
    "BundleError",
    "MAP_FORMAT",
    "MAP_VERSION",
    "frame_dir",
    "list_frame_indices",
    "write_frame_bundle",
    "read_frame_bundle",
    "write_map",
    "read_map",
    "export_ply",
    "write_json_atomic",
]

MAP_FORMAT = "scenefuse-map"
MAP_VERSION = 1

_DEPTH_SCALE = 1000.0  # meters -> stored millimeters
_U16_MAX = 65535


class BundleError(RuntimeError):
    """A bundle or map on disk is missing, truncated, or inconsistent."""


def write_json_atomic(path: Path, payload: dict) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    os.replace(tmp, path)


def frame_dir(root: str | Path, frame_index: int) -> Path:
    return Path(root) / "frames" / str(int(frame_index))


def list_frame_indices(root: str | Path) -> list[int]:
    """Frame indices present under <root>/frames, numerically sorted."""
    frames_root = Path(root) / "frames"
    if not frames_root.is_dir():
        return []
    indices = []
    for entry in frames_root.iterdir():
        if entry.is_dir() and entry.name.isdigit():
            indices.append(int(entry.name))
    return sorted(indices)


def _encode_depth(depth: np.ndarray) -> np.ndarray:
    values = np.asarray(depth, dtype=np.float64)
    mm = np.where(np.isnan(values), 0.0, np.round(values * _DEPTH_SCALE))
    if np.any(mm < 0) or np.any(mm > _U16_MAX):
        raise BundleError("depth outside the storable 0..65.535 m range")
    return mm.astype("<u2")


def write_frame_bundle(root: str | Path, bundle: FrameBundle) -> Path:
    """Write one frame under <root>/frames/<index>; returns the directory.

    Depth is rounded to the nearest millimeter and NaN becomes 0 (both mean
    no measurement); values already mm-quantized round-trip exactly.
    """
    directory = frame_dir(root, bundle.frame_index)
    directory.mkdir(parents=True, exist_ok=True)

    depth_u16 = _encode_depth(bundle.depth)
    if np.any(bundle.mask < 0) or np.any(bundle.mask > _U16_MAX):
        raise BundleError("mask ids outside the storable u16 range")
    mask_u16 = bundle.mask.astype("<u2")

    dim = int(np.asarray(bundle.global_embedding).shape[0])
    vector_blocks = [
        np.asarray(rec.embedding, dtype="<f4") for rec in bundle.instances
    ]
    vector_blocks.append(np.asarray(bundle.global_embedding, dtype="<f4"))
    emb_blob = np.concatenate(vector_blocks) if vector_blocks else np.empty(0, "<f4")

    manifest = {
        "frame_index": bundle.frame_index,
        "intrinsics": bundle.intrinsics.to_dict(),
        "pose": bundle.pose.to_list(),
        "depth_file": "depth.u16",
        "mask_file": "mask.u16",
        "embeddings_file": "emb.f32",
        "embedding_dim": dim,
        "global_embedding_offset": len(bundle.instances) * dim,
        "instances": [
            {
                "local_id": rec.local_id,
                "name": rec.name,
                "caption": rec.caption,
                "pred_score": rec.pred_score,
                "bbox": list(rec.bbox_2d),
                "embedding_offset": slot * dim,
            }
            for slot, rec in enumerate(bundle.instances)
        ],
    }
    (directory / "depth.u16").write_bytes(depth_u16.tobytes())
    (directory / "mask.u16").write_bytes(mask_u16.tobytes())
    (directory / "emb.f32").write_bytes(emb_blob.tobytes())
    write_json_atomic(directory / "manifest.json", manifest)
    return directory


def _read_grid(path: Path, height: int, width: int) -> np.ndarray:
    if not path.is_file():
        raise BundleError(f"missing file {path}")
    blob = path.read_bytes()
    expected = height * width * 2
    if len(blob) != expected:
        raise BundleError(
            f"dimension mismatch: {path} holds {len(blob)} bytes, expected {expected}"
        )
    return np.frombuffer(blob, dtype="<u2").reshape(height, width)


def read_frame_bundle(root: str | Path, frame_index: int) -> FrameBundle:
    """Load and validate one frame bundle; raises BundleError on any defect."""
    directory = frame_dir(root, frame_index)
    manifest_path = directory / "manifest.json"
    if not manifest_path.is_file():
        raise BundleError(f"missing file {manifest_path}")
    manifest = json.loads(manifest_path.read_text())

    intrinsics = CameraIntrinsics.from_dict(manifest["intrinsics"])
    pose = Pose.from_list(manifest["pose"])
    h, w = intrinsics.height, intrinsics.width
    depth_u16 = _read_grid(directory / manifest["depth_file"], h, w)
    mask = _read_grid(directory / manifest["mask_file"], h, w).astype(np.int32)
    depth = depth_u16.astype(np.float64) / _DEPTH_SCALE

    emb_path = directory / manifest["embeddings_file"]
    if not emb_path.is_file():
        raise BundleError(f"missing file {emb_path}")
    flat = np.frombuffer(emb_path.read_bytes(), dtype="<f4")
    dim = int(manifest["embedding_dim"])
    if dim < 1:
        raise BundleError("embedding_dim must be >= 1")

    def take(offset: int) -> np.ndarray:
        offset = int(offset)
        if offset < 0 or offset + dim > flat.shape[0]:
            raise BundleError(
                f"embedding offset {offset} out of bounds for {flat.shape[0]} floats"
            )
        return flat[offset : offset + dim].astype(np.float64)

    records = []
    for item in manifest["instances"]:
        bbox = tuple(float(v) for v in item["bbox"])
        records.append(
            InstanceRecord(
                local_id=int(item["local_id"]),
                name=str(item["name"]),
                caption=str(item["caption"]),
                pred_score=float(item["pred_score"]),
                bbox_2d=bbox,
                embedding=take(item["embedding_offset"]),
                area_fraction=area_fraction_from_bbox(bbox, w, h),
            )
        )
    bundle = FrameBundle(
        frame_index=int(manifest["frame_index"]),
        depth=depth,
        mask=mask,
        pose=pose,
        intrinsics=intrinsics,
        instances=tuple(records),
        global_embedding=take(manifest["global_embedding_offset"]),
    )
    violations = validate_frame_bundle(bundle)
    if violations:
        raise BundleError(
            f"invalid bundle {directory}: " + "; ".join(violations)
        )
    return bundle


# ---------------------------------------------------------------------------
# Map files


def write_map(path: str | Path, scene_map: InstanceMap) -> None:
    """Write map.json plus map_points.f32 / map_emb.f32 next to it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    points_name = path.stem + "_points.f32"
    emb_name = path.stem + "_emb.f32"

    point_blocks: list[np.ndarray] = []
    emb_blocks: list[np.ndarray] = []
    entries = []
    point_offset = 0
    for slot, inst in enumerate(scene_map.instances):
        pts = np.asarray(inst.points, dtype="<f4")
        point_blocks.append(pts.reshape(-1))
        emb_blocks.append(np.asarray(inst.embedding, dtype="<f4"))
        entries.append(
            {
                "global_id": inst.global_id,
                "name": inst.name,
                "refined_name": inst.refined_name,
                "caption": inst.caption,
                "centroid": [float(v) for v in inst.centroid],
                "bbox": {
                    "min": [float(v) for v in inst.bbox_min],
                    "max": [float(v) for v in inst.bbox_max],
                },
                "point_count": int(pts.shape[0]),
                "point_offset": point_offset,
                "embedding_offset": slot * scene_map.embedding_dim,
                "observations": [
                    [obs.frame_index, obs.local_id, obs.pred_score, obs.name]
                    for obs in inst.observations
                ],
            }
        )
        point_offset += int(pts.shape[0])

    payload = {
        "format": MAP_FORMAT,
        "version": MAP_VERSION,
        "config": scene_map.config.to_dict(),
        "embedding_dim": scene_map.embedding_dim,
        "points_file": points_name,
        "embeddings_file": emb_name,
        "instances": entries,
    }
    points_blob = (
        np.concatenate(point_blocks) if point_blocks else np.empty(0, "<f4")
    )
    emb_blob = np.concatenate(emb_blocks) if emb_blocks else np.empty(0, "<f4")
    (path.parent / points_name).write_bytes(points_blob.tobytes())
    (path.parent / emb_name).write_bytes(emb_blob.tobytes())
    write_json_atomic(path, payload)


def read_map(path: str | Path) -> InstanceMap:
    """Load a map document and its sidecars; exact inverse of write_map."""
    path = Path(path)
    if not path.is_file():
        raise BundleError(f"missing file {path}")
    payload = json.loads(path.read_text())
    if payload.get("format") != MAP_FORMAT:
        raise BundleError(f"{path}: not a {MAP_FORMAT} document")
    if payload.get("version") != MAP_VERSION:
        raise BundleError(
            f"{path}: version {payload.get('version')} unsupported (want {MAP_VERSION})"
        )
    config = FusionConfig.from_dict(payload["config"])
    dim = int(payload["embedding_dim"])
    points_flat = np.frombuffer(
        (path.parent / payload["points_file"]).read_bytes(), dtype="<f4"
    )
    emb_flat = np.frombuffer(
        (path.parent / payload["embeddings_file"]).read_bytes(), dtype="<f4"
    )
    instances = []
    for slot, item in enumerate(payload["instances"]):
        count = int(item["point_count"])
        start = int(item["point_offset"]) * 3
        if start + count * 3 > points_flat.shape[0]:
            raise BundleError(f"{path}: point offsets out of bounds")
        pts = points_flat[start : start + count * 3].reshape(count, 3)
        e0 = int(item["embedding_offset"])
        if e0 + dim > emb_flat.shape[0]:
            raise BundleError(f"{path}: embedding offsets out of bounds")
        instances.append(
            MapInstance(
                global_id=int(item["global_id"]),
                points=pts.astype(np.float32),
                name=str(item["name"]),
                caption=str(item["caption"]),
                embedding=emb_flat[e0 : e0 + dim].astype(np.float32),
                bbox_min=np.asarray(item["bbox"]["min"], dtype=np.float64),
                bbox_max=np.asarray(item["bbox"]["max"], dtype=np.float64),
                centroid=np.asarray(item["centroid"], dtype=np.float64),
                observations=tuple(
                    Observation(int(f), int(l), float(s), str(n))
                    for f, l, s, n in item["observations"]
                ),
                refined_name=(
                    None if item["refined_name"] is None else str(item["refined_name"])
                ),
            )
        )
    return InstanceMap(tuple(instances), config, dim)


# ---------------------------------------------------------------------------
# Colored PLY export

_GOLDEN = 0.6180339887498949


def _id_color(gid: int) -> tuple[int, int, int]:
    hue = (gid * _GOLDEN) % 1.0
    r, g, b = colorsys.hsv_to_rgb(hue, 0.65, 0.95)
    return int(round(r * 255)), int(round(g * 255)), int(round(b * 255))


def export_ply(
    positions: np.ndarray,
    ids: np.ndarray,
    mode: str = "by_id",
    scores: Mapping[int, float] | None = None,
) -> bytes:
    """Binary little-endian PLY with uchar RGB per vertex.

    by_id hashes each instance id to a stable palette color; by_similarity
    maps the per-id scores linearly from blue (minimum) to red (maximum),
    with a single mid-palette purple when all scores are equal.
    """
    pts = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    labels = np.asarray(ids, dtype=np.int64).reshape(-1)
    if pts.shape[0] != labels.shape[0]:
        raise ValueError("positions and ids must align")
    if pts.shape[0] == 0:
        raise ValueError("cannot export an empty cloud")

    if mode == "by_id":
        palette = {int(g): _id_color(int(g)) for g in np.unique(labels)}
    elif mode == "by_similarity":
        if scores is None:
            raise ValueError("by_similarity needs per-id scores")
        missing = set(int(g) for g in np.unique(labels)) - set(
            int(k) for k in scores
        )
        if missing:
            raise ValueError(f"scores missing for ids {sorted(missing)}")
        values = {int(k): float(v) for k, v in scores.items()}
        lo = min(values[int(g)] for g in np.unique(labels))
        hi = max(values[int(g)] for g in np.unique(labels))
        palette = {}
        for g in np.unique(labels):
            if hi == lo:
                palette[int(g)] = (128, 0, 128)
            else:
                t = (values[int(g)] - lo) / (hi - lo)
                palette[int(g)] = (int(round(255 * t)), 0, int(round(255 * (1 - t))))
    else:
        raise ValueError(f"unknown coloring mode {mode!r}")

    dtype = np.dtype(
        [
            ("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
            ("red", "u1"), ("green", "u1"), ("blue", "u1"),
        ]
    )
    rows = np.empty(pts.shape[0], dtype=dtype)
    pos32 = pts.astype(np.float32)
    rows["x"], rows["y"], rows["z"] = pos32[:, 0], pos32[:, 1], pos32[:, 2]
    colors = np.array([palette[int(g)] for g in labels], dtype=np.uint8)
    rows["red"], rows["green"], rows["blue"] = colors[:, 0], colors[:, 1], colors[:, 2]
    header = "\n".join(
        [
            "ply",
            "format binary_little_endian 1.0",
            f"element vertex {pts.shape[0]}",
            "property float x",
            "property float y",
            "property float z",
            "property uchar red",
            "property uchar green",
            "property uchar blue",
            "end_header",
        ]
    ) + "\n"
    return header.encode("ascii") + rows.tobytes()
