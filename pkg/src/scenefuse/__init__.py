"""Incremental fusion of per-frame 2D instance detections into a 3D scene map.

The package takes frame bundles (depth + instance masks + embeddings +
camera poses), back-projects and matches them against a growing scene point
cloud, merges overlapping segments under persistent global ids, and
post-processes the result into an instance map that supports
open-vocabulary retrieval, colored point cloud export, evaluation against
labeled ground truth, and LLM prompt generation.
"""

from .fusion import (
    FusionScheme,
    best_fit_index,
    cosine,
    fuse_for_scheme,
    fuse_multiscale_direct,
    fuse_multiscale_weighted,
    fuse_multiview_direct,
    fuse_multiview_global,
    fuse_views_for_scheme,
)
from .metrics import (
    DEFAULT_VOXEL,
    EvalReport,
    GroundTruthScene,
    adjusted_rand_index,
    evaluate,
    iou,
    load_gt_ply,
    voxel_downsample_pair,
    voxel_key_set,
    write_gt_ply,
)
from .postprocess import (
    ClusterResult,
    dbscan,
    finalize_map,
    gather_observations,
    select_label,
    split_instance,
    top_m_observations,
)
from .projection import (
    FramePointCloud,
    apply_mask_padding,
    backproject,
    filter_instances,
    pad_mask_borders,
    project_points,
    sample_frames,
)
from .retrieval import (
    PROMPT_INSTRUCTIONS,
    QueryResult,
    SimplifiedInstance,
    build_simplified_map,
    build_spatial_prompt,
    query,
    simplified_map_to_json,
)
from .storage import (
    BundleError,
    export_ply,
    list_frame_indices,
    read_frame_bundle,
    read_map,
    write_frame_bundle,
    write_map,
)
from .synthetic import (
    SceneObject,
    SyntheticScene,
    load_scene,
    orbit_poses,
    pose_from_lookat,
    render_bundles,
    save_scene,
    write_dataset,
)
from .tracker import (
    MatchPairs,
    OverlapEntry,
    OverlapReport,
    SubCloud,
    crop_scene,
    dedup_voxels,
    integrate_frame,
    match_points,
    overlap_ratio,
)
from .types import (
    CameraIntrinsics,
    FrameBundle,
    FusionConfig,
    GlobalIDTable,
    InstanceMap,
    InstanceRecord,
    IntegrityError,
    MapInstance,
    Observation,
    Pose,
    ScenePointCloud,
    validate_frame_bundle,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # types
    "CameraIntrinsics",
    "FrameBundle",
    "FusionConfig",
    "GlobalIDTable",
    "InstanceMap",
    "InstanceRecord",
    "IntegrityError",
    "MapInstance",
    "Observation",
    "Pose",
    "ScenePointCloud",
    "validate_frame_bundle",
    # projection
    "FramePointCloud",
    "apply_mask_padding",
    "backproject",
    "filter_instances",
    "pad_mask_borders",
    "project_points",
    "sample_frames",
    # fusion
    "FusionScheme",
    "best_fit_index",
    "cosine",
    "fuse_for_scheme",
    "fuse_multiscale_direct",
    "fuse_multiscale_weighted",
    "fuse_multiview_direct",
    "fuse_multiview_global",
    "fuse_views_for_scheme",
    # tracking
    "MatchPairs",
    "OverlapEntry",
    "OverlapReport",
    "SubCloud",
    "crop_scene",
    "dedup_voxels",
    "integrate_frame",
    "match_points",
    "overlap_ratio",
    # postprocessing
    "ClusterResult",
    "dbscan",
    "finalize_map",
    "gather_observations",
    "select_label",
    "split_instance",
    "top_m_observations",
    # retrieval
    "PROMPT_INSTRUCTIONS",
    "QueryResult",
    "SimplifiedInstance",
    "build_simplified_map",
    "build_spatial_prompt",
    "query",
    "simplified_map_to_json",
    # metrics
    "DEFAULT_VOXEL",
    "EvalReport",
    "GroundTruthScene",
    "adjusted_rand_index",
    "evaluate",
    "iou",
    "load_gt_ply",
    "voxel_downsample_pair",
    "voxel_key_set",
    "write_gt_ply",
    # storage
    "BundleError",
    "export_ply",
    "list_frame_indices",
    "read_frame_bundle",
    "read_map",
    "write_frame_bundle",
    "write_map",
    # synthetic scenes
    "SceneObject",
    "SyntheticScene",
    "load_scene",
    "orbit_poses",
    "pose_from_lookat",
    "render_bundles",
    "save_scene",
    "write_dataset",
]
