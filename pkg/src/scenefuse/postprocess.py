"""Map finalization: per-instance clustering, splitting, naming, fusion.

After integration, each global id's points are cleaned with DBSCAN;
far-apart clusters that accidentally share an id become separate map
instances; the label with the highest prediction score names the instance;
the top-scoring observations fuse into its retrieval embedding.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Mapping, NamedTuple, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .fusion import FusionScheme, fuse_views_for_scheme
from .types import (
    FrameBundle,
    FusionConfig,
    GlobalIDTable,
    InstanceMap,
    IntegrityError,
    MapInstance,
    Observation,
    ScenePointCloud,
)

__all__ = [
    "ClusterResult",
    "ObservationView",
    "dbscan",
    "split_instance",
    "select_label",
    "top_m_observations",
    "gather_observations",
    "finalize_map",
]


@dataclass(frozen=True)
class ClusterResult:
    """DBSCAN output: clusters in discovery order plus noise indices."""

    clusters: tuple[np.ndarray, ...]
    noise: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(
            self,
            "clusters",
            tuple(np.asarray(c, dtype=np.int64) for c in self.clusters),
        )
        object.__setattr__(self, "noise", np.asarray(self.noise, dtype=np.int64))


def dbscan(points: np.ndarray, eps: float, min_points: int) -> ClusterResult:
    """Euclidean DBSCAN with deterministic scan order.

    A point is core iff its eps-ball (distance <= eps, itself included)
    holds at least min_points points. Clusters are grown from core points in
    index order; a border point belongs to the first cluster that reaches
    it. Every point ends up in exactly one cluster or in noise.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if eps <= 0:
        raise ValueError("eps must be positive")
    if min_points < 1:
        raise ValueError("min_points must be >= 1")
    n = pts.shape[0]
    if n == 0:
        return ClusterResult((), np.empty(0, dtype=np.int64))
    tree = cKDTree(pts)
    neighborhoods = tree.query_ball_point(pts, r=eps)
    core = np.array([len(nb) >= min_points for nb in neighborhoods])
    labels = np.full(n, -1, dtype=np.int64)
    clusters: list[list[int]] = []
    for seed in range(n):
        if not core[seed] or labels[seed] != -1:
            continue
        cid = len(clusters)
        members: list[int] = []
        labels[seed] = cid
        members.append(seed)
        queue = deque(neighborhoods[seed])
        while queue:
            j = queue.popleft()
            if labels[j] != -1:
                continue
            labels[j] = cid
            members.append(j)
            if core[j]:
                queue.extend(neighborhoods[j])
        clusters.append(members)
    noise = np.nonzero(labels == -1)[0]
    return ClusterResult(
        tuple(np.asarray(sorted(c), dtype=np.int64) for c in clusters), noise
    )


def split_instance(
    clusters: Sequence[np.ndarray], split_fraction: float
) -> list[np.ndarray]:
    """Keep the largest cluster first, then others at least split_fraction of it.

    The returned list is ordered: element 0 retains the original id, the
    rest get fresh ids. Size ties go to the earliest-discovered cluster.
    Sub-threshold clusters are discarded.
    """
    if not (0.0 < split_fraction <= 1.0):
        raise ValueError("split_fraction must lie in (0, 1]")
    arrays = [np.asarray(c, dtype=np.int64) for c in clusters]
    if not arrays:
        return []
    largest_idx = max(range(len(arrays)), key=lambda i: (arrays[i].size, -i))
    largest = arrays[largest_idx].size
    kept = [arrays[largest_idx]]
    for i, arr in enumerate(arrays):
        if i == largest_idx:
            continue
        if arr.size >= split_fraction * largest:
            kept.append(arr)
    return kept


class ObservationView(NamedTuple):
    """One sighting of an instance with the frame context fusion needs."""

    frame_index: int
    local_id: int
    pred_score: float
    name: str
    caption: str
    embedding: np.ndarray
    global_embedding: np.ndarray


def select_label(observations: Sequence[ObservationView]) -> tuple[str, str]:
    """Name and caption of the highest-scoring observation; ties to earliest frame."""
    if not observations:
        raise ValueError("observations must be non-empty")
    best = min(
        observations, key=lambda o: (-o.pred_score, o.frame_index, o.local_id)
    )
    return best.name, best.caption


def top_m_observations(
    observations: Sequence[ObservationView], m: int
) -> list[ObservationView]:
    """The min(m, len) highest-scoring observations, score ties by frame order."""
    if m < 1:
        raise ValueError("m must be >= 1")
    ranked = sorted(
        observations, key=lambda o: (-o.pred_score, o.frame_index, o.local_id)
    )
    return ranked[:m]


def gather_observations(
    table: GlobalIDTable, gid: int, frames: Mapping[int, FrameBundle]
) -> list[ObservationView]:
    """Resolve an id's (frame, local) observations against frame metadata."""
    views: list[ObservationView] = []
    for frame_index, local_id in table.observations(gid):
        if frame_index not in frames:
            raise IntegrityError(
                f"observation references unknown frame {frame_index}"
            )
        bundle = frames[frame_index]
        rec = bundle.instance_by_id(local_id)
        views.append(
            ObservationView(
                frame_index,
                local_id,
                rec.pred_score,
                rec.name,
                rec.caption,
                np.asarray(rec.embedding, dtype=np.float64),
                np.asarray(bundle.global_embedding, dtype=np.float64),
            )
        )
    return views


def finalize_map(
    scene: ScenePointCloud,
    table: GlobalIDTable,
    frames: Mapping[int, FrameBundle],
    config: FusionConfig,
) -> InstanceMap:
    """Build the retrieval-ready instance map from the integrated scene.

    Per global id: DBSCAN the points, drop noise, split far-apart clusters
    (splits inherit the parent's observations), then per kept instance take
    exact min/max bounds, the 3D point centroid, the best-scored name and
    caption, and the scheme-fused embedding of the top-m observations.
    Points and embeddings are cast to float32, the map's storage precision.
    """
    if table.ids() != scene.unique_ids():
        raise IntegrityError("global table ids diverge from scene ids")
    scheme = FusionScheme(config.scheme)

    embedding_dim = 0
    for bundle in frames.values():
        embedding_dim = int(np.asarray(bundle.global_embedding).shape[0])
        break

    next_id = scene.next_global_id
    entries: list[MapInstance] = []
    scene_ids = scene.ids
    scene_positions = scene.positions
    for gid in sorted(scene.unique_ids()):
        rows = np.nonzero(scene_ids == gid)[0]
        points = scene_positions[rows]
        result = dbscan(points, config.dbscan_eps, config.dbscan_min_points)
        kept = split_instance(result.clusters, config.split_fraction)
        if not kept:
            continue  # all noise: the instance leaves the map
        views = gather_observations(table, gid, frames)
        if not views:
            raise IntegrityError(f"scene id {gid} has no recorded observations")
        name, caption = select_label(views)
        top = top_m_observations(views, config.top_m)
        fused = fuse_views_for_scheme(
            scheme,
            [v.embedding for v in top],
            [v.global_embedding for v in top] if scheme.global_multiview else None,
        )
        observations = tuple(
            Observation(v.frame_index, v.local_id, v.pred_score, v.name)
            for v in views
        )
        for slot, cluster in enumerate(kept):
            instance_id = gid if slot == 0 else next_id
            if slot > 0:
                next_id += 1
            pts32 = points[cluster].astype(np.float32)
            pts64 = pts32.astype(np.float64)
            entries.append(
                MapInstance(
                    global_id=instance_id,
                    points=pts32,
                    name=name,
                    caption=caption,
                    embedding=fused.astype(np.float32),
                    bbox_min=pts64.min(axis=0),
                    bbox_max=pts64.max(axis=0),
                    centroid=pts64.mean(axis=0),
                    observations=observations,
                    refined_name=None,
                )
            )
    entries.sort(key=lambda inst: inst.global_id)
    if entries and embedding_dim == 0:
        embedding_dim = int(entries[0].embedding.shape[0])
    return InstanceMap(tuple(entries), config, embedding_dim)
