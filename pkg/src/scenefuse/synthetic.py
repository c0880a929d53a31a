"""Deterministic synthetic RGB-D-style scenes with exact ground truth.

Scenes are axis-aligned boxes and spheres, rendered per pose by closed-form
ray casting: the ray through pixel (u, v) has camera-frame direction
((u-cx)/fx, (v-cy)/fy, 1), so the hit parameter IS the stored z-depth and
zero-noise back-projection lands exactly on the primitive surfaces. One
seed fully determines embeddings, depth noise, and dropout.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .metrics import GroundTruthScene, write_gt_ply
from .storage import write_frame_bundle, write_json_atomic
from .types import (
    CameraIntrinsics,
    FrameBundle,
    InstanceRecord,
    Pose,
    area_fraction_from_bbox,
)

__all__ = [
    "SceneObject",
    "SyntheticScene",
    "pose_from_lookat",
    "orbit_poses",
    "object_embeddings",
    "class_vocabulary",
    "class_query_embeddings",
    "render_bundles",
    "ground_truth",
    "scene_from_json",
    "scene_to_json",
    "load_scene",
    "save_scene",
    "write_dataset",
]

logger = logging.getLogger(__name__)

_RAY_EPS = 1e-9


@dataclass(frozen=True)
class SceneObject:
    """One primitive: an axis-aligned box (center+size) or a sphere."""

    shape: str
    center: tuple[float, float, float]
    label: str
    embedding: dict
    size: tuple[float, float, float] | None = None
    radius: float | None = None

    def __post_init__(self) -> None:
        if self.shape not in ("box", "sphere"):
            raise ValueError("shape must be 'box' or 'sphere'")
        if self.shape == "box":
            if self.size is None or len(self.size) != 3 or min(self.size) <= 0:
                raise ValueError("box needs a positive 3-vector size")
        else:
            if self.radius is None or self.radius <= 0:
                raise ValueError("sphere needs a positive radius")
        kind = self.embedding.get("kind")
        if kind not in ("one_hot", "random_unit"):
            raise ValueError("embedding kind must be one_hot or random_unit")
        if kind == "one_hot" and "index" not in self.embedding:
            raise ValueError("one_hot embedding needs an index")
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        if self.size is not None:
            object.__setattr__(self, "size", tuple(float(v) for v in self.size))

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        center = np.asarray(self.center)
        if self.shape == "box":
            half = np.asarray(self.size) / 2.0
            return center - half, center + half
        return center - self.radius, center + self.radius


@dataclass(frozen=True)
class SyntheticScene:
    """Primitive list, camera trajectory, intrinsics, noise model, seed."""

    objects: tuple[SceneObject, ...]
    poses: tuple[Pose, ...]
    intrinsics: CameraIntrinsics
    seed: int
    embedding_dim: int
    depth_sigma: float = 0.0
    dropout: float = 0.0
    gt_spacing: float = 0.01

    def __post_init__(self) -> None:
        if self.embedding_dim < 1:
            raise ValueError("embedding_dim must be >= 1")
        if self.depth_sigma < 0 or not (0.0 <= self.dropout < 1.0):
            raise ValueError("noise parameters out of range")
        if self.gt_spacing <= 0:
            raise ValueError("gt_spacing must be positive")
        object.__setattr__(self, "objects", tuple(self.objects))
        object.__setattr__(self, "poses", tuple(self.poses))


def pose_from_lookat(
    eye: Sequence[float],
    target: Sequence[float],
    up: Sequence[float] = (0.0, 0.0, 1.0),
) -> Pose:
    """Camera-to-world pose looking from eye toward target, +z forward."""
    eye_v = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye_v
    norm = np.linalg.norm(forward)
    if norm == 0:
        raise ValueError("eye and target coincide")
    forward = forward / norm
    up_v = np.asarray(up, dtype=np.float64)
    right = np.cross(forward, up_v)
    if np.linalg.norm(right) < 1e-12:  # forward parallel to up
        right = np.cross(forward, np.asarray([0.0, 1.0, 0.0]))
    right = right / np.linalg.norm(right)
    down = np.cross(forward, right)
    matrix = np.eye(4)
    matrix[:3, 0] = right
    matrix[:3, 1] = down
    matrix[:3, 2] = forward
    matrix[:3, 3] = eye_v
    return Pose(matrix)


def orbit_poses(
    target: Sequence[float],
    radius: float,
    height: float,
    start_deg: float,
    arc_deg: float,
    count: int,
) -> list[Pose]:
    """Poses on a circular arc around (and looking at) the target point."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if radius <= 0:
        raise ValueError("radius must be positive")
    tgt = np.asarray(target, dtype=np.float64)
    poses = []
    for i in range(count):
        frac = i / (count - 1) if count > 1 else 0.0
        angle = math.radians(start_deg + arc_deg * frac)
        eye = tgt + np.asarray(
            [radius * math.cos(angle), radius * math.sin(angle), height]
        )
        poses.append(pose_from_lookat(eye, tgt))
    return poses


def object_embeddings(scene: SyntheticScene) -> np.ndarray:
    """True embedding per object, float32-representable, pairwise distinct."""
    rng = np.random.default_rng([int(scene.seed), 0])
    dim = scene.embedding_dim
    out = np.empty((len(scene.objects), dim), dtype=np.float64)
    for row, obj in enumerate(scene.objects):
        kind = obj.embedding["kind"]
        if kind == "one_hot":
            index = int(obj.embedding["index"])
            if not (0 <= index < dim):
                raise ValueError(f"one_hot index {index} outside dim {dim}")
            vec = np.zeros(dim)
            vec[index] = 1.0
        else:
            vec = rng.standard_normal(dim)
            vec = vec / np.linalg.norm(vec)
        out[row] = vec.astype(np.float32).astype(np.float64)
    for i in range(len(scene.objects)):
        for j in range(i + 1, len(scene.objects)):
            if np.allclose(out[i], out[j]):
                raise ValueError(f"objects {i} and {j} share an embedding")
    return out


def class_vocabulary(scene: SyntheticScene) -> dict[int, str]:
    """Class id per distinct label, ids dense from 1 in sorted label order."""
    labels = sorted({obj.label for obj in scene.objects})
    return {i + 1: label for i, label in enumerate(labels)}


def class_query_embeddings(scene: SyntheticScene) -> dict[int, np.ndarray]:
    """Query vector per class: the first same-label object's true embedding."""
    vocab = class_vocabulary(scene)
    embeddings = object_embeddings(scene)
    out: dict[int, np.ndarray] = {}
    for class_id, label in vocab.items():
        for row, obj in enumerate(scene.objects):
            if obj.label == label:
                out[class_id] = embeddings[row]
                break
    return out


def _ray_box(
    origin: np.ndarray, dirs: np.ndarray, lo: np.ndarray, hi: np.ndarray
) -> np.ndarray:
    """Slab-method hit parameter per ray, +inf on miss."""
    n = dirs.shape[0]
    tmin = np.full(n, -np.inf)
    tmax = np.full(n, np.inf)
    for axis in range(3):
        d = dirs[:, axis]
        o = origin[axis]
        parallel = d == 0
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (lo[axis] - o) / d
            t2 = (hi[axis] - o) / d
        near = np.minimum(t1, t2)
        far = np.maximum(t1, t2)
        inside = (lo[axis] <= o) & (o <= hi[axis])
        near = np.where(parallel, np.where(inside, -np.inf, np.inf), near)
        far = np.where(parallel, np.where(inside, np.inf, -np.inf), far)
        tmin = np.maximum(tmin, near)
        tmax = np.minimum(tmax, far)
    t = np.where(tmin > _RAY_EPS, tmin, tmax)
    hit = (tmax >= tmin) & (t > _RAY_EPS)
    return np.where(hit, t, np.inf)


def _ray_sphere(
    origin: np.ndarray, dirs: np.ndarray, center: np.ndarray, radius: float
) -> np.ndarray:
    oc = origin - center
    a = np.sum(dirs * dirs, axis=1)
    b = 2.0 * (dirs @ oc)
    c = float(oc @ oc) - radius * radius
    disc = b * b - 4.0 * a * c
    hit = disc >= 0
    sqrt_disc = np.sqrt(np.where(hit, disc, 0.0))
    t_near = (-b - sqrt_disc) / (2.0 * a)
    t_far = (-b + sqrt_disc) / (2.0 * a)
    t = np.where(t_near > _RAY_EPS, t_near, t_far)
    return np.where(hit & (t > _RAY_EPS), t, np.inf)


def render_bundles(
    scene: SyntheticScene,
) -> tuple[list[FrameBundle], GroundTruthScene | None]:
    """Render every pose into a frame bundle plus the reference cloud.

    A pose that sees no object pixel (while objects exist) is skipped with a
    log notice; its frame index is left as a gap. Depth stays exact float in
    memory; noise (if configured) adds Gaussian depth error then drops a
    fraction of measurements to 0. A scene with no objects renders empty
    frames and has no reference cloud (None).
    """
    intr = scene.intrinsics
    h, w = intr.height, intr.width
    cols, rows = np.meshgrid(np.arange(w), np.arange(h))
    dirs_cam = np.stack(
        [
            (cols.astype(np.float64) - intr.cx) / intr.fx,
            (rows.astype(np.float64) - intr.cy) / intr.fy,
            np.ones((h, w)),
        ],
        axis=2,
    ).reshape(-1, 3)

    embeddings = object_embeddings(scene)
    noise_rng = np.random.default_rng([int(scene.seed), 1])
    bundles: list[FrameBundle] = []
    for frame_index, pose in enumerate(scene.poses):
        dirs_world = dirs_cam @ pose.rotation.T
        origin = pose.translation
        t_all = np.full((max(len(scene.objects), 1), h * w), np.inf)
        for obj_idx, obj in enumerate(scene.objects):
            if obj.shape == "box":
                lo, hi = obj.bounds()
                t_all[obj_idx] = _ray_box(origin, dirs_world, lo, hi)
            else:
                t_all[obj_idx] = _ray_sphere(
                    origin, dirs_world, np.asarray(obj.center), obj.radius
                )
        nearest = np.argmin(t_all, axis=0)
        depth_flat = t_all[nearest, np.arange(h * w)]
        valid = np.isfinite(depth_flat)
        if scene.objects and not np.any(valid):
            logger.warning(
                "frame %d sees no object pixels; skipping", frame_index
            )
            continue
        mask_flat = np.where(valid, nearest + 1, 0).astype(np.int32)
        depth_flat = np.where(valid, depth_flat, 0.0)
        if scene.depth_sigma > 0 and np.any(valid):
            depth_flat = depth_flat.copy()
            depth_flat[valid] += noise_rng.normal(
                0.0, scene.depth_sigma, int(valid.sum())
            )
            depth_flat[valid] = np.maximum(depth_flat[valid], 0.001)
        if scene.dropout > 0 and np.any(valid):
            drop = noise_rng.random(int(valid.sum())) < scene.dropout
            flat_valid_rows = np.nonzero(valid)[0]
            depth_flat = depth_flat.copy()
            depth_flat[flat_valid_rows[drop]] = 0.0

        mask = mask_flat.reshape(h, w)
        depth = depth_flat.reshape(h, w)
        records = []
        present = [int(v) for v in np.unique(mask) if v > 0]
        for local_id in present:
            obj = scene.objects[local_id - 1]
            ys, xs = np.nonzero(mask == local_id)
            bbox = (
                float(xs.min()),
                float(ys.min()),
                float(xs.max() + 1),
                float(ys.max() + 1),
            )
            records.append(
                InstanceRecord(
                    local_id=local_id,
                    name=obj.label,
                    caption=f"a {obj.label} in a synthetic scene",
                    pred_score=1.0,
                    bbox_2d=bbox,
                    embedding=embeddings[local_id - 1],
                    area_fraction=area_fraction_from_bbox(bbox, w, h),
                )
            )
        if records:
            stack = np.stack([rec.embedding for rec in records])
            global_embedding = (
                (np.sum(stack, axis=0) / stack.shape[0])
                .astype(np.float32)
                .astype(np.float64)
            )
        else:
            global_embedding = np.zeros(scene.embedding_dim)
        bundles.append(
            FrameBundle(
                frame_index=frame_index,
                depth=depth,
                mask=mask,
                pose=pose,
                intrinsics=intr,
                instances=tuple(records),
                global_embedding=global_embedding,
            )
        )
    gt = ground_truth(scene) if scene.objects else None
    return bundles, gt


def _box_surface(lo: np.ndarray, hi: np.ndarray, spacing: float) -> np.ndarray:
    def centers(a: float, b: float) -> np.ndarray:
        extent = b - a
        n = max(1, int(round(extent / spacing)))
        return a + (np.arange(n) + 0.5) * extent / n

    points = []
    for axis in range(3):
        others = [i for i in range(3) if i != axis]
        g0 = centers(lo[others[0]], hi[others[0]])
        g1 = centers(lo[others[1]], hi[others[1]])
        a_grid, b_grid = np.meshgrid(g0, g1, indexing="ij")
        for value in (lo[axis], hi[axis]):
            face = np.empty((a_grid.size, 3))
            face[:, axis] = value
            face[:, others[0]] = a_grid.reshape(-1)
            face[:, others[1]] = b_grid.reshape(-1)
            points.append(face)
    return np.concatenate(points)


def _sphere_surface(center: np.ndarray, radius: float, spacing: float) -> np.ndarray:
    n_lat = max(2, int(round(math.pi * radius / spacing)))
    points = []
    for k in range(n_lat):
        theta = (k + 0.5) * math.pi / n_lat
        ring_radius = radius * math.sin(theta)
        n_lon = max(1, int(round(2.0 * math.pi * ring_radius / spacing)))
        phi = np.arange(n_lon) * 2.0 * math.pi / n_lon
        ring = np.stack(
            [
                center[0] + ring_radius * np.cos(phi),
                center[1] + ring_radius * np.sin(phi),
                np.full(n_lon, center[2] + radius * math.cos(theta)),
            ],
            axis=1,
        )
        points.append(ring)
    return np.concatenate(points)


def ground_truth(scene: SyntheticScene) -> GroundTruthScene:
    """Dense deterministic surface sampling with instance and class labels."""
    if not scene.objects:
        raise ValueError("ground truth needs at least one object")
    vocab = class_vocabulary(scene)
    label_to_class = {label: cid for cid, label in vocab.items()}
    chunks = []
    class_chunks = []
    instance_chunks = []
    for obj_idx, obj in enumerate(scene.objects):
        if obj.shape == "box":
            lo, hi = obj.bounds()
            pts = _box_surface(lo, hi, scene.gt_spacing)
        else:
            pts = _sphere_surface(
                np.asarray(obj.center), obj.radius, scene.gt_spacing
            )
        chunks.append(pts)
        class_chunks.append(
            np.full(pts.shape[0], label_to_class[obj.label], dtype=np.int64)
        )
        instance_chunks.append(np.full(pts.shape[0], obj_idx + 1, dtype=np.int64))
    return GroundTruthScene(
        np.concatenate(chunks),
        np.concatenate(class_chunks),
        np.concatenate(instance_chunks),
        vocab,
    )


# ---------------------------------------------------------------------------
# JSON description and dataset writing


def scene_from_json(data: Mapping) -> SyntheticScene:
    objects = []
    for item in data.get("objects", []):
        objects.append(
            SceneObject(
                shape=item["shape"],
                center=tuple(item["center"]),
                label=item["label"],
                embedding=dict(item["embedding"]),
                size=tuple(item["size"]) if "size" in item else None,
                radius=item.get("radius"),
            )
        )
    intrinsics = CameraIntrinsics.from_dict(data["intrinsics"])
    traj = data["trajectory"]
    if traj["kind"] == "orbit":
        poses = orbit_poses(
            traj["target"],
            traj["radius"],
            traj["height"],
            traj.get("start_deg", 0.0),
            traj.get("arc_deg", 90.0),
            traj["count"],
        )
    elif traj["kind"] == "poses":
        poses = [Pose.from_list(values) for values in traj["matrices"]]
    else:
        raise ValueError(f"unknown trajectory kind {traj['kind']!r}")
    noise = data.get("noise", {})
    return SyntheticScene(
        objects=tuple(objects),
        poses=tuple(poses),
        intrinsics=intrinsics,
        seed=int(data["seed"]),
        embedding_dim=int(data["embedding_dim"]),
        depth_sigma=float(noise.get("depth_sigma", 0.0)),
        dropout=float(noise.get("dropout", 0.0)),
        gt_spacing=float(data.get("gt_spacing", 0.01)),
    )


def scene_to_json(scene: SyntheticScene) -> dict:
    objects = []
    for obj in scene.objects:
        item: dict = {
            "shape": obj.shape,
            "center": list(obj.center),
            "label": obj.label,
            "embedding": dict(obj.embedding),
        }
        if obj.size is not None:
            item["size"] = list(obj.size)
        if obj.radius is not None:
            item["radius"] = obj.radius
        objects.append(item)
    return {
        "seed": scene.seed,
        "embedding_dim": scene.embedding_dim,
        "gt_spacing": scene.gt_spacing,
        "intrinsics": scene.intrinsics.to_dict(),
        "noise": {"depth_sigma": scene.depth_sigma, "dropout": scene.dropout},
        "objects": objects,
        "trajectory": {
            "kind": "poses",
            "matrices": [pose.to_list() for pose in scene.poses],
        },
    }


def load_scene(path: str | Path) -> SyntheticScene:
    return scene_from_json(json.loads(Path(path).read_text()))


def save_scene(path: str | Path, scene: SyntheticScene) -> None:
    write_json_atomic(Path(path), scene_to_json(scene))


def write_dataset(scene: SyntheticScene, out_root: str | Path) -> dict:
    """Render and write frames plus gt.ply and its label/query sidecars."""
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    bundles, gt = render_bundles(scene)
    written = []
    for bundle in bundles:
        write_frame_bundle(out_root, bundle)
        written.append(bundle.frame_index)
    if gt is not None:
        write_gt_ply(out_root / "gt.ply", gt)
    vocab = class_vocabulary(scene)
    queries = class_query_embeddings(scene)
    ordered_ids = sorted(vocab)
    write_json_atomic(
        out_root / "gt.labels.json",
        {
            "embedding_dim": scene.embedding_dim,
            "classes": {str(cid): vocab[cid] for cid in ordered_ids},
        },
    )
    blob = np.concatenate(
        [np.asarray(queries[cid], dtype="<f4") for cid in ordered_ids]
    ) if ordered_ids else np.empty(0, "<f4")
    (out_root / "gt.queries.f32").write_bytes(blob.tobytes())
    return {
        "frames_written": written,
        "frames_skipped": [
            i for i in range(len(scene.poses)) if i not in set(written)
        ],
        "gt_points": len(gt) if gt is not None else 0,
        "classes": {str(cid): vocab[cid] for cid in ordered_ids},
    }
