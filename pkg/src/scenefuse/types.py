"""Domain types shared across the mapping pipeline.

Geometry lives in numpy arrays: positions are float64 (N, 3) world-frame
meters, instance ids are int64, embeddings are 1-D float64 vectors. The
frozen dataclasses are value objects; the two mutable containers
(ScenePointCloud, GlobalIDTable) follow a single-writer contract: one
integrator mutates them, readers only look between updates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Mapping, NamedTuple, Sequence

import numpy as np

__all__ = [
    "IntegrityError",
    "CameraIntrinsics",
    "Pose",
    "InstanceRecord",
    "FrameBundle",
    "LabeledPoint",
    "ScenePointCloud",
    "GlobalIDTable",
    "Observation",
    "MapInstance",
    "InstanceMap",
    "FusionConfig",
    "validate_frame_bundle",
    "area_fraction_from_bbox",
    "voxel_grid_keys",
    "pack_voxel_keys",
]

# Packed voxel keys give each axis 21 bits, i.e. +/- 2**20 cells. At the
# default 2 cm voxel that is roughly +/- 21 km of indexable world.
_AXIS_BITS = 21
_AXIS_HALF = 1 << 20


class IntegrityError(RuntimeError):
    """Raised when the scene cloud and the global ID table disagree."""


def _as_readonly(arr: np.ndarray) -> np.ndarray:
    view = arr.view()
    view.flags.writeable = False
    return view


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics. (u, v) are pixel-center coordinates, u = column."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self) -> None:
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]],
            dtype=np.float64,
        )

    def to_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "CameraIntrinsics":
        return cls(
            fx=float(data["fx"]),
            fy=float(data["fy"]),
            cx=float(data["cx"]),
            cy=float(data["cy"]),
            width=int(data["width"]),
            height=int(data["height"]),
        )


@dataclass(frozen=True)
class Pose:
    """Camera-to-world rigid transform as a 4x4 homogeneous matrix."""

    matrix: np.ndarray

    def __post_init__(self) -> None:
        m = np.array(self.matrix, dtype=np.float64, copy=True)
        if m.shape != (4, 4):
            raise ValueError("pose matrix must be 4x4")
        if not np.array_equal(m[3], np.array([0.0, 0.0, 0.0, 1.0])):
            raise ValueError("pose last row must be exactly (0, 0, 0, 1)")
        rot = m[:3, :3]
        if abs(float(np.linalg.det(rot)) - 1.0) >= 1e-6:
            raise ValueError("pose rotation must have determinant 1")
        if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-6):
            raise ValueError("pose rotation block must be orthonormal")
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    @property
    def rotation(self) -> np.ndarray:
        return self.matrix[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.matrix[:3, 3]

    def inverse(self) -> "Pose":
        inv = np.eye(4)
        inv[:3, :3] = self.rotation.T
        inv[:3, 3] = -self.rotation.T @ self.translation
        return Pose(inv)

    def to_list(self) -> list[float]:
        return [float(v) for v in self.matrix.reshape(-1)]

    @classmethod
    def from_list(cls, values: Sequence[float]) -> "Pose":
        arr = np.asarray(list(values), dtype=np.float64)
        if arr.size != 16:
            raise ValueError("pose list must have 16 entries")
        return cls(arr.reshape(4, 4))


def area_fraction_from_bbox(
    bbox: Sequence[float], width: int, height: int
) -> float:
    """Fraction of the image covered by a half-open pixel box [x0,x1)x[y0,y1)."""
    x0, y0, x1, y1 = (float(v) for v in bbox)
    if not (x1 > x0 and y1 > y0):
        raise ValueError("bbox must have positive extent")
    return ((x1 - x0) * (y1 - y0)) / (float(width) * float(height))


@dataclass(frozen=True)
class InstanceRecord:
    """One detected 2D instance: mask id, naming, score, box and embedding."""

    local_id: int
    name: str
    caption: str
    pred_score: float
    bbox_2d: tuple[float, float, float, float]
    embedding: np.ndarray
    area_fraction: float

    def __post_init__(self) -> None:
        if self.local_id < 1:
            raise ValueError("local_id must be >= 1 (0 marks unlabeled pixels)")
        if not (0.0 <= self.pred_score <= 1.0):
            raise ValueError("pred_score must lie in [0, 1]")
        if not (0.0 < self.area_fraction <= 1.0):
            raise ValueError("area_fraction must lie in (0, 1]")
        x0, y0, x1, y1 = self.bbox_2d
        if not (x1 > x0 and y1 > y0):
            raise ValueError("bbox_2d must have positive extent")
        emb = np.asarray(self.embedding, dtype=np.float64)
        if emb.ndim != 1 or emb.size == 0:
            raise ValueError("embedding must be a non-empty 1-D vector")
        if not np.all(np.isfinite(emb)):
            raise ValueError("embedding must be finite")
        emb = emb.copy()
        emb.flags.writeable = False
        object.__setattr__(self, "embedding", emb)
        object.__setattr__(self, "bbox_2d", tuple(float(v) for v in self.bbox_2d))


@dataclass(frozen=True)
class FrameBundle:
    """Everything one frame contributes: depth, id mask, pose, detections.

    depth is (H, W) float64 meters, 0 or NaN meaning no measurement; mask is
    (H, W) integer local ids with 0 = unlabeled. Cross-field consistency is
    checked by validate_frame_bundle, not the constructor.
    """

    frame_index: int
    depth: np.ndarray
    mask: np.ndarray
    pose: Pose
    intrinsics: CameraIntrinsics
    instances: tuple[InstanceRecord, ...]
    global_embedding: np.ndarray

    def __post_init__(self) -> None:
        depth = np.asarray(self.depth, dtype=np.float64)
        mask = np.asarray(self.mask)
        if not np.issubdtype(mask.dtype, np.integer):
            raise ValueError("mask must be an integer array")
        mask = mask.astype(np.int32, copy=True)
        glob = np.asarray(self.global_embedding, dtype=np.float64).copy()
        for arr in (depth, mask, glob):
            arr.flags.writeable = False
        object.__setattr__(self, "depth", depth)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "global_embedding", glob)
        object.__setattr__(self, "instances", tuple(self.instances))

    def instance_by_id(self, local_id: int) -> InstanceRecord:
        for rec in self.instances:
            if rec.local_id == local_id:
                return rec
        raise KeyError(f"no instance record with local_id {local_id}")


class LabeledPoint(NamedTuple):
    """One scene point: world position (3,) and its global instance id."""

    position: np.ndarray
    instance_id: int


def voxel_grid_keys(positions: np.ndarray, voxel: float) -> np.ndarray:
    """Integer voxel coordinates floor(p / voxel) per axis, shape (N, 3)."""
    if voxel <= 0:
        raise ValueError("voxel size must be positive")
    pts = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    return np.floor(pts / voxel).astype(np.int64)


def pack_voxel_keys(keys3: np.ndarray) -> np.ndarray:
    """Pack (N, 3) integer voxel coordinates into one int64 key per row."""
    keys3 = np.asarray(keys3, dtype=np.int64).reshape(-1, 3)
    if keys3.size and int(np.abs(keys3).max()) >= _AXIS_HALF:
        raise ValueError("coordinates exceed the indexable voxel range")
    shifted = keys3 + _AXIS_HALF
    return (
        (shifted[:, 0] << (2 * _AXIS_BITS))
        | (shifted[:, 1] << _AXIS_BITS)
        | shifted[:, 2]
    )


class ScenePointCloud:
    """Append-only labeled world point cloud with a voxel occupancy index.

    The index maps each occupied voxel (at ``voxel_size``) to the row of its
    earliest-inserted point; appends with dedup enabled are gated on it, so
    re-observations do not grow the cloud. Global ids are issued here,
    monotonically, and never reused. Rows are immutable once appended.
    """

    def __init__(self, voxel_size: float) -> None:
        if voxel_size <= 0:
            raise ValueError("voxel_size must be positive")
        self.voxel_size = float(voxel_size)
        self._positions = np.empty((0, 3), dtype=np.float64)
        self._ids = np.empty(0, dtype=np.int64)
        self._voxel_rows: dict[int, int] = {}
        self._id_counts: dict[int, int] = {}
        self._next_global_id = 1

    def __len__(self) -> int:
        return int(self._ids.shape[0])

    @property
    def positions(self) -> np.ndarray:
        return _as_readonly(self._positions)

    @property
    def ids(self) -> np.ndarray:
        return _as_readonly(self._ids)

    @property
    def next_global_id(self) -> int:
        return self._next_global_id

    def issue_id(self) -> int:
        gid = self._next_global_id
        self._next_global_id += 1
        return gid

    def unique_ids(self) -> set[int]:
        return set(self._id_counts)

    def id_count(self, gid: int) -> int:
        return self._id_counts.get(int(gid), 0)

    def point_at(self, row: int) -> LabeledPoint:
        return LabeledPoint(self._positions[row].copy(), int(self._ids[row]))

    def packed_keys(self, positions: np.ndarray) -> np.ndarray:
        return pack_voxel_keys(voxel_grid_keys(positions, self.voxel_size))

    def append_points(
        self,
        positions: np.ndarray,
        instance_ids: np.ndarray | int,
        dedup: bool = True,
    ) -> np.ndarray:
        """Append points, returning the batch row indices actually inserted.

        With dedup on, a point whose voxel is already occupied (by the scene
        or by an earlier point of this batch) is dropped. With dedup off,
        every point is appended and the index keeps the earliest occupant.
        """
        pts = np.ascontiguousarray(positions, dtype=np.float64).reshape(-1, 3)
        ids = np.broadcast_to(
            np.asarray(instance_ids, dtype=np.int64), (pts.shape[0],)
        ).copy()
        if pts.shape[0] == 0:
            return np.empty(0, dtype=np.int64)
        if not np.all(np.isfinite(pts)):
            raise ValueError("positions must be finite")
        if ids.size and int(ids.min()) < 1:
            raise ValueError("instance ids must be >= 1")
        keys = self.packed_keys(pts)
        if dedup:
            _, first = np.unique(keys, return_index=True)
            first.sort()
            taken = [
                int(i) for i in first if int(keys[i]) not in self._voxel_rows
            ]
            inserted = np.asarray(taken, dtype=np.int64)
        else:
            inserted = np.arange(pts.shape[0], dtype=np.int64)
        if inserted.size == 0:
            return inserted
        base = len(self)
        self._positions = np.concatenate([self._positions, pts[inserted]])
        self._ids = np.concatenate([self._ids, ids[inserted]])
        for offset, batch_row in enumerate(inserted):
            self._voxel_rows.setdefault(int(keys[batch_row]), base + offset)
        for gid, count in zip(*np.unique(ids[inserted], return_counts=True)):
            self._id_counts[int(gid)] = self._id_counts.get(int(gid), 0) + int(count)
        if int(ids.max()) >= self._next_global_id:
            self._next_global_id = int(ids.max()) + 1
        return inserted

    def append_point_unchecked(self, position: np.ndarray, gid: int) -> None:
        """Append one point past the occupancy gate (earliest occupant kept).

        Only the integrator uses this, for segments that would otherwise
        vanish entirely into occupied voxels while their id is already
        recorded in the global table.
        """
        pos = np.asarray(position, dtype=np.float64).reshape(1, 3)
        key = int(self.packed_keys(pos)[0])
        row = len(self)
        self._positions = np.concatenate([self._positions, pos])
        self._ids = np.concatenate([self._ids, np.asarray([gid], dtype=np.int64)])
        self._voxel_rows.setdefault(key, row)
        self._id_counts[int(gid)] = self._id_counts.get(int(gid), 0) + 1
        if int(gid) >= self._next_global_id:
            self._next_global_id = int(gid) + 1

    def verify_index(self) -> None:
        """Cross-check the voxel index against the stored points (tests)."""
        expected: dict[int, int] = {}
        if len(self):
            for row, key in enumerate(self.packed_keys(self._positions)):
                expected.setdefault(int(key), row)
        if expected != self._voxel_rows:
            raise IntegrityError("voxel index inconsistent with stored points")
        counts: dict[int, int] = {}
        for gid in self._ids:
            counts[int(gid)] = counts.get(int(gid), 0) + 1
        if counts != self._id_counts:
            raise IntegrityError("id counts inconsistent with stored points")


class GlobalIDTable:
    """Maps each global instance id to its ordered (frame, local_id) observations."""

    def __init__(self) -> None:
        self._entries: dict[int, list[tuple[int, int]]] = {}
        self._claimed: set[tuple[int, int]] = set()

    def add(self, gid: int, frame_index: int, local_id: int) -> None:
        pair = (int(frame_index), int(local_id))
        if pair in self._claimed:
            raise IntegrityError(f"observation {pair} recorded under two ids")
        self._claimed.add(pair)
        self._entries.setdefault(int(gid), []).append(pair)

    def observations(self, gid: int) -> tuple[tuple[int, int], ...]:
        return tuple(self._entries.get(int(gid), ()))

    def ids(self) -> set[int]:
        return set(self._entries)

    def __contains__(self, gid: int) -> bool:
        return int(gid) in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def total_observations(self) -> int:
        return len(self._claimed)

    def as_dict(self) -> dict[int, tuple[tuple[int, int], ...]]:
        return {gid: tuple(obs) for gid, obs in self._entries.items()}


class Observation(NamedTuple):
    """One recorded sighting of a map instance."""

    frame_index: int
    local_id: int
    pred_score: float
    name: str


@dataclass(frozen=True)
class MapInstance:
    """One finalized map entry: points, naming, fused embedding, geometry."""

    global_id: int
    points: np.ndarray
    name: str
    caption: str
    embedding: np.ndarray
    bbox_min: np.ndarray
    bbox_max: np.ndarray
    centroid: np.ndarray
    observations: tuple[Observation, ...]
    refined_name: str | None = None

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=np.float32).reshape(-1, 3)
        if pts.shape[0] == 0:
            raise ValueError("map instance must keep at least one point")
        emb = np.asarray(self.embedding, dtype=np.float32)
        bmin = np.asarray(self.bbox_min, dtype=np.float64).reshape(3)
        bmax = np.asarray(self.bbox_max, dtype=np.float64).reshape(3)
        cen = np.asarray(self.centroid, dtype=np.float64).reshape(3)
        slack = 1e-9 * (1.0 + np.abs(bmax - bmin))
        if np.any(bmin > bmax) or np.any(cen < bmin - slack) or np.any(cen > bmax + slack):
            raise ValueError("centroid must lie inside bbox")
        for arr in (pts, emb, bmin, bmax, cen):
            arr.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "embedding", emb)
        object.__setattr__(self, "bbox_min", bmin)
        object.__setattr__(self, "bbox_max", bmax)
        object.__setattr__(self, "centroid", cen)
        object.__setattr__(self, "observations", tuple(self.observations))


@dataclass(frozen=True)
class InstanceMap:
    """Finalized instance-level scene map, ordered by global id."""

    instances: tuple[MapInstance, ...]
    config: "FusionConfig"
    embedding_dim: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "instances", tuple(self.instances))
        gids = [inst.global_id for inst in self.instances]
        if gids != sorted(gids) or len(set(gids)) != len(gids):
            raise ValueError("instances must be sorted by unique global_id")
        for inst in self.instances:
            if inst.embedding.shape != (self.embedding_dim,):
                raise ValueError("instance embedding dimension mismatch")

    def instance_by_id(self, gid: int) -> MapInstance:
        for inst in self.instances:
            if inst.global_id == gid:
                return inst
        raise KeyError(f"no map instance with id {gid}")


@dataclass(frozen=True)
class FusionConfig:
    """Pipeline knobs; defaults are the reference operating point."""

    stride: int = 40
    border_px: int = 20
    voxel_size: float = 0.02
    overlap_threshold: float = 0.3
    top_m: int = 5
    crop_levels: int = 3
    crop_ratios: tuple[float, ...] = (0.8, 1.0, 1.2)
    dbscan_eps: float = 0.1
    dbscan_min_points: int = 20
    split_fraction: float = 0.8
    bbox_area_max: float = 0.95
    background_names: tuple[str, ...] = ("wall", "floor", "ground", "roof", "ceiling")
    scheme: int = 4
    dedup: bool = True

    def __post_init__(self) -> None:
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.border_px < 0:
            raise ValueError("border_px must be >= 0")
        if self.voxel_size <= 0:
            raise ValueError("voxel_size must be positive")
        if not (0.0 <= self.overlap_threshold <= 1.0):
            raise ValueError("overlap_threshold must lie in [0, 1]")
        if self.top_m < 1:
            raise ValueError("top_m must be >= 1")
        if self.crop_levels < 1:
            raise ValueError("crop_levels must be >= 1")
        ratios = tuple(float(r) for r in self.crop_ratios)
        if len(ratios) != self.crop_levels:
            raise ValueError("crop_ratios length must equal crop_levels")
        if any(r <= 0 for r in ratios):
            raise ValueError("crop_ratios must be positive")
        if self.dbscan_eps <= 0:
            raise ValueError("dbscan_eps must be positive")
        if self.dbscan_min_points < 1:
            raise ValueError("dbscan_min_points must be >= 1")
        if not (0.0 < self.split_fraction <= 1.0):
            raise ValueError("split_fraction must lie in (0, 1]")
        if not (0.0 < self.bbox_area_max <= 1.0):
            raise ValueError("bbox_area_max must lie in (0, 1]")
        if self.scheme not in (1, 2, 3, 4):
            raise ValueError("scheme must be one of 1, 2, 3, 4")
        object.__setattr__(self, "crop_ratios", ratios)
        object.__setattr__(
            self, "background_names", tuple(str(n) for n in self.background_names)
        )

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            out[f.name] = list(value) if isinstance(value, tuple) else value
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "FusionConfig":
        kwargs = {}
        for f in fields(cls):
            if f.name in data:
                value = data[f.name]
                kwargs[f.name] = tuple(value) if isinstance(value, list) else value
        return cls(**kwargs)


def validate_frame_bundle(bundle: FrameBundle) -> list[str]:
    """Collect every cross-field violation in the bundle; empty means valid.

    Value-object invariants (score ranges, pose orthonormality) are already
    enforced by the constructors; this checks the relations between fields.
    """
    violations: list[str] = []
    intr = bundle.intrinsics
    expected_shape = (intr.height, intr.width)
    if bundle.depth.shape != expected_shape:
        violations.append(
            f"dimension mismatch: depth {bundle.depth.shape} vs intrinsics {expected_shape}"
        )
    if bundle.mask.shape != expected_shape:
        violations.append(
            f"dimension mismatch: mask {bundle.mask.shape} vs intrinsics {expected_shape}"
        )
    if bundle.depth.shape != bundle.mask.shape:
        violations.append(
            f"dimension mismatch: depth {bundle.depth.shape} vs mask {bundle.mask.shape}"
        )

    finite = np.isfinite(bundle.depth)
    if np.any(bundle.depth[finite] < 0):
        violations.append("negative depth value")
    if np.any(np.isinf(bundle.depth)):
        violations.append("infinite depth value")

    if np.any(bundle.mask < 0):
        violations.append("negative mask id")
    mask_ids = set(int(v) for v in np.unique(bundle.mask)) - {0}
    record_ids = [rec.local_id for rec in bundle.instances]
    if len(record_ids) != len(set(record_ids)):
        violations.append("duplicate instance record local_id")
    record_id_set = set(record_ids)
    for mid in sorted(mask_ids - record_id_set):
        violations.append(f"orphan mask id {mid} has no instance record")
    for rid in sorted(record_id_set - mask_ids):
        violations.append(f"orphan instance record {rid} missing from mask")

    dim = int(bundle.global_embedding.shape[0]) if bundle.global_embedding.ndim == 1 else -1
    if dim <= 0:
        violations.append("global embedding must be a non-empty 1-D vector")
    if not np.all(np.isfinite(bundle.global_embedding)):
        violations.append("global embedding must be finite")
    for rec in bundle.instances:
        if dim > 0 and rec.embedding.shape[0] != dim:
            violations.append(
                f"embedding dimension mismatch for local_id {rec.local_id}"
            )
        derived = area_fraction_from_bbox(rec.bbox_2d, intr.width, intr.height)
        if not math.isclose(rec.area_fraction, derived, rel_tol=0.0, abs_tol=1e-9):
            violations.append(
                f"area_fraction inconsistent with bbox for local_id {rec.local_id}"
            )
    return violations
