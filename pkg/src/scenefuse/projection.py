"""Frame sampling, mask hygiene, and depth back-projection.

Back-projection convention: pixel (u, v) with u = column, v = row, both at
pixel centers; the camera ray direction is ((u - cx)/fx, (v - cy)/fy, 1)
and depth scales it, so depth is the z-coordinate in the camera frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .types import CameraIntrinsics, FrameBundle, FusionConfig, Pose

__all__ = [
    "FramePointCloud",
    "sample_frames",
    "pad_mask_borders",
    "apply_mask_padding",
    "filter_instances",
    "backproject",
    "project_points",
]


@dataclass(frozen=True)
class FramePointCloud:
    """World-frame points lifted from one frame, labeled with mask local ids."""

    frame_index: int
    positions: np.ndarray
    local_ids: np.ndarray

    def __post_init__(self) -> None:
        pts = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        ids = np.asarray(self.local_ids, dtype=np.int64).reshape(-1)
        if pts.shape[0] != ids.shape[0]:
            raise ValueError("positions and local_ids must align")
        for arr in (pts, ids):
            arr.flags.writeable = False
        object.__setattr__(self, "positions", pts)
        object.__setattr__(self, "local_ids", ids)

    def __len__(self) -> int:
        return int(self.local_ids.shape[0])

    @property
    def counts(self) -> dict[int, int]:
        ids, counts = np.unique(self.local_ids, return_counts=True)
        return {int(i): int(c) for i, c in zip(ids, counts)}


def sample_frames(n_total: int, stride: int) -> list[int]:
    """Every stride-th frame, always starting at 0."""
    if n_total < 0:
        raise ValueError("n_total must be >= 0")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    return list(range(0, n_total, stride))


def pad_mask_borders(mask: np.ndarray, px: int) -> np.ndarray:
    """Clear every instance pixel within px (Chebyshev) of its region boundary.

    Each instance region is eroded with a (2*px+1) square structuring
    element; outside the image counts as background, so regions touching the
    frame edge recede from it too. Adjacent instances recede from each other
    symmetrically, which is what delineates touching entities.
    """
    if px < 0:
        raise ValueError("px must be >= 0")
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError("mask must be 2-D")
    if px == 0:
        return mask.copy()
    out = np.zeros_like(mask)
    size = 2 * px + 1
    for lid in np.unique(mask):
        if lid == 0:
            continue
        region = (mask == lid).astype(np.uint8)
        kept = ndimage.minimum_filter(region, size=size, mode="constant", cval=0)
        out[kept == 1] = lid
    return out


def apply_mask_padding(bundle: FrameBundle, px: int) -> FrameBundle:
    """Pad the bundle's mask and drop instance records whose region emptied."""
    padded = pad_mask_borders(bundle.mask, px)
    surviving = set(int(v) for v in np.unique(padded)) - {0}
    instances = tuple(rec for rec in bundle.instances if rec.local_id in surviving)
    return FrameBundle(
        frame_index=bundle.frame_index,
        depth=bundle.depth,
        mask=padded,
        pose=bundle.pose,
        intrinsics=bundle.intrinsics,
        instances=instances,
        global_embedding=bundle.global_embedding,
    )


def filter_instances(bundle: FrameBundle, config: FusionConfig) -> FrameBundle:
    """Drop background-named and near-full-frame instances, clearing their pixels.

    Name matching is case-insensitive substring against the configured
    background terms; boxes covering more than bbox_area_max of the image are
    treated as non-objects.
    """
    terms = tuple(t.lower() for t in config.background_names)
    removed: set[int] = set()
    for rec in bundle.instances:
        lowered = rec.name.lower()
        if any(term in lowered for term in terms):
            removed.add(rec.local_id)
        elif rec.area_fraction > config.bbox_area_max:
            removed.add(rec.local_id)
    if not removed:
        return bundle
    mask = bundle.mask.copy()
    mask[np.isin(mask, sorted(removed))] = 0
    instances = tuple(rec for rec in bundle.instances if rec.local_id not in removed)
    return FrameBundle(
        frame_index=bundle.frame_index,
        depth=bundle.depth,
        mask=mask,
        pose=bundle.pose,
        intrinsics=bundle.intrinsics,
        instances=instances,
        global_embedding=bundle.global_embedding,
    )


def backproject(bundle: FrameBundle) -> FramePointCloud:
    """Lift labeled valid-depth pixels into world points, row-major order.

    A pixel contributes iff its mask id is nonzero and its depth is finite
    and positive (0 and NaN both mean no measurement).
    """
    depth = bundle.depth
    mask = bundle.mask
    if depth.shape != mask.shape:
        raise ValueError("depth and mask shapes differ")
    valid = (mask > 0) & np.isfinite(depth) & (depth > 0)
    rows, cols = np.nonzero(valid)
    if rows.size == 0:
        return FramePointCloud(
            bundle.frame_index, np.empty((0, 3)), np.empty(0, dtype=np.int64)
        )
    intr = bundle.intrinsics
    d = depth[rows, cols]
    x = (cols.astype(np.float64) - intr.cx) / intr.fx * d
    y = (rows.astype(np.float64) - intr.cy) / intr.fy * d
    cam = np.stack([x, y, d], axis=1)
    world = cam @ bundle.pose.rotation.T + bundle.pose.translation
    return FramePointCloud(bundle.frame_index, world, mask[rows, cols].astype(np.int64))


def project_points(
    points: np.ndarray, pose: Pose, intrinsics: CameraIntrinsics
) -> tuple[np.ndarray, np.ndarray]:
    """World points -> pixel (u, v) and camera-frame depth; inverse of backproject."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    cam = (pts - pose.translation) @ pose.rotation
    z = cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = cam[:, 0] / z * intrinsics.fx + intrinsics.cx
        v = cam[:, 1] / z * intrinsics.fy + intrinsics.cy
    return np.stack([u, v], axis=1), z
