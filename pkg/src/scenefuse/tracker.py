"""Incremental frame-into-scene integration.

Each frame's labeled points are matched against the scene points inside the
frame's bounding box (plus a voxel-size margin); per frame segment the
dominant overlapped scene segment decides between id replacement (merge)
and a fresh global id. All decisions for one frame are taken against the
same pre-update snapshot, so segments of a frame cannot cascade into each
other. Scene ids are never merged with each other here and never reused.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .projection import FramePointCloud
from .types import FusionConfig, GlobalIDTable, IntegrityError, ScenePointCloud
from .types import pack_voxel_keys, voxel_grid_keys

__all__ = [
    "SubCloud",
    "MatchPairs",
    "OverlapEntry",
    "OverlapReport",
    "crop_scene",
    "match_points",
    "overlap_ratio",
    "integrate_frame",
    "dedup_voxels",
]


@dataclass(frozen=True)
class SubCloud:
    """Scene points inside a crop box, with their original scene rows."""

    positions: np.ndarray
    ids: np.ndarray
    rows: np.ndarray

    def __len__(self) -> int:
        return int(self.ids.shape[0])


@dataclass(frozen=True)
class MatchPairs:
    """Index pairs: frame point i matched sub-cloud point j (distance < eps)."""

    frame_indices: np.ndarray
    sub_indices: np.ndarray

    def __len__(self) -> int:
        return int(self.frame_indices.shape[0])


@dataclass(frozen=True)
class OverlapEntry:
    """One overlapped scene segment: distinct matched points and its crop total."""

    scene_id: int
    overlap_count: int
    scene_total: int


@dataclass(frozen=True)
class OverlapReport:
    """Audit record for one frame segment's merge-or-new decision."""

    local_id: int
    frame_point_count: int
    overlaps: tuple[OverlapEntry, ...]
    ratio: float
    action: str  # "merge" | "new"
    assigned_id: int


def crop_scene(
    scene: ScenePointCloud, frame_cloud: FramePointCloud, margin: float
) -> SubCloud:
    """Scene points within the frame cloud's bbox expanded by margin (inclusive)."""
    if margin < 0:
        raise ValueError("margin must be >= 0")
    empty = SubCloud(
        np.empty((0, 3)), np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    )
    if len(frame_cloud) == 0 or len(scene) == 0:
        return empty
    lo = frame_cloud.positions.min(axis=0) - margin
    hi = frame_cloud.positions.max(axis=0) + margin
    pts = scene.positions
    inside = np.all((pts >= lo) & (pts <= hi), axis=1)
    rows = np.nonzero(inside)[0]
    return SubCloud(pts[rows], scene.ids[rows], rows.astype(np.int64))


def match_points(
    frame_cloud: FramePointCloud, sub: SubCloud, eps: float
) -> MatchPairs:
    """Pair each frame point with its nearest sub-cloud point iff distance < eps."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    if len(frame_cloud) == 0 or len(sub) == 0:
        return MatchPairs(np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64))
    tree = cKDTree(sub.positions)
    dist, idx = tree.query(frame_cloud.positions, k=1)
    hit = dist < eps
    return MatchPairs(
        np.nonzero(hit)[0].astype(np.int64), idx[hit].astype(np.int64)
    )


def overlap_ratio(
    frame_point_count: int, overlaps: Sequence[OverlapEntry]
) -> float:
    """Dominant overlap count over min(frame count, dominant segment's crop total).

    Zero when nothing overlaps. The dominant segment is the one with the
    largest overlap count, ties broken toward the smallest scene id.
    """
    if frame_point_count < 1:
        raise ValueError("frame_point_count must be >= 1")
    if not overlaps:
        return 0.0
    dom = max(overlaps, key=lambda e: (e.overlap_count, -e.scene_id))
    denom = min(frame_point_count, dom.scene_total)
    return dom.overlap_count / denom


def _segment_overlaps(
    sub: SubCloud,
    matched_sub_rows: np.ndarray,
    crop_totals: Mapping[int, int],
) -> tuple[OverlapEntry, ...]:
    if matched_sub_rows.size == 0:
        return ()
    distinct = np.unique(matched_sub_rows)
    seg_ids, counts = np.unique(sub.ids[distinct], return_counts=True)
    return tuple(
        OverlapEntry(int(sid), int(cnt), crop_totals[int(sid)])
        for sid, cnt in zip(seg_ids, counts)
    )


def integrate_frame(
    scene: ScenePointCloud,
    table: GlobalIDTable,
    frame_cloud: FramePointCloud,
    config: FusionConfig,
) -> list[OverlapReport]:
    """Fold one frame cloud into the scene, mutating scene and table in place.

    Per frame segment (ascending local id): match against the pre-update
    crop, compute the overlap ratio, then either relabel the segment to the
    dominant scene id (ratio >= threshold) or issue a fresh global id. The
    relabeled points are appended behind the voxel occupancy gate; a new-id
    segment whose points all land in occupied voxels still contributes its
    earliest point so the table and the scene stay in lockstep.
    """
    if table.ids() != scene.unique_ids():
        raise IntegrityError("global table ids diverge from scene ids")
    if len(frame_cloud) == 0:
        return []

    eps = config.voxel_size
    sub = crop_scene(scene, frame_cloud, eps)
    pairs = match_points(frame_cloud, sub, eps)
    if len(sub):
        ids_in_crop, totals = np.unique(sub.ids, return_counts=True)
        crop_totals = {int(i): int(c) for i, c in zip(ids_in_crop, totals)}
    else:
        crop_totals = {}

    matched_frame = pairs.frame_indices
    matched_sub = pairs.sub_indices
    seg_of_match = frame_cloud.local_ids[matched_frame] if len(pairs) else None

    reports: list[OverlapReport] = []
    assigned = np.empty(len(frame_cloud), dtype=np.int64)
    for local_id in sorted(int(v) for v in np.unique(frame_cloud.local_ids)):
        seg_mask = frame_cloud.local_ids == local_id
        c_frame = int(np.count_nonzero(seg_mask))
        if seg_of_match is not None:
            seg_rows = matched_sub[seg_of_match == local_id]
        else:
            seg_rows = np.empty(0, dtype=np.int64)
        overlaps = _segment_overlaps(sub, seg_rows, crop_totals)
        ratio = overlap_ratio(c_frame, overlaps)
        if overlaps and ratio >= config.overlap_threshold:
            dom = max(overlaps, key=lambda e: (e.overlap_count, -e.scene_id))
            gid, action = dom.scene_id, "merge"
        else:
            gid, action = scene.issue_id(), "new"
        table.add(gid, frame_cloud.frame_index, local_id)
        assigned[seg_mask] = gid
        reports.append(
            OverlapReport(local_id, c_frame, overlaps, ratio, action, gid)
        )

    inserted = scene.append_points(
        frame_cloud.positions, assigned, dedup=config.dedup
    )
    surviving = set(int(g) for g in assigned[inserted])
    for report in reports:
        if report.action == "new" and report.assigned_id not in surviving:
            first_row = int(np.nonzero(assigned == report.assigned_id)[0][0])
            scene.append_point_unchecked(
                frame_cloud.positions[first_row], report.assigned_id
            )
    if table.ids() != scene.unique_ids():
        raise IntegrityError("integration left table and scene inconsistent")
    return reports


def dedup_voxels(
    positions: np.ndarray, ids: np.ndarray, voxel: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Keep the earliest point per voxel; returns (positions, ids, kept rows).

    Survivor order preserves insertion order; ids ride along untouched.
    """
    pts = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    labels = np.asarray(ids, dtype=np.int64).reshape(-1)
    if pts.shape[0] != labels.shape[0]:
        raise ValueError("positions and ids must align")
    if pts.shape[0] == 0:
        return pts.copy(), labels.copy(), np.empty(0, dtype=np.int64)
    keys = pack_voxel_keys(voxel_grid_keys(pts, voxel))
    _, first = np.unique(keys, return_index=True)
    first.sort()
    return pts[first], labels[first], first.astype(np.int64)
