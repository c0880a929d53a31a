"""Command line interface: build, query, export-prompt, eval, synth, stats, validate.

Every subcommand prints machine-readable output on stdout (JSON, except the
raw prompt text of export-prompt) and logs progress to stderr. Exit code 0
means success, 2 means a reported input or data problem.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .metrics import DEFAULT_VOXEL, evaluate, load_gt_ply
from .postprocess import finalize_map
from .projection import (
    apply_mask_padding,
    backproject,
    filter_instances,
    sample_frames,
)
from .retrieval import build_simplified_map, build_spatial_prompt, query
from .storage import (
    BundleError,
    export_ply,
    frame_dir,
    list_frame_indices,
    read_frame_bundle,
    read_map,
    write_json_atomic,
    write_map,
)
from .synthetic import load_scene, write_dataset
from .tracker import integrate_frame
from .types import FusionConfig, GlobalIDTable, IntegrityError, ScenePointCloud

__all__ = ["main"]

logger = logging.getLogger(__name__)

_DEFAULTS = FusionConfig()
THREADS_ENV = "OPENSU_THREADS"


def _resolve_threads(requested: int | None) -> int:
    if requested is not None:
        return max(1, requested)
    raw = os.environ.get(THREADS_ENV)
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            logger.warning("ignoring non-integer %s=%r", THREADS_ENV, raw)
    return 1


def _config_from_args(args: argparse.Namespace) -> FusionConfig:
    return FusionConfig(
        stride=args.stride,
        border_px=args.px,
        voxel_size=args.epsilon,
        overlap_threshold=args.rho,
        top_m=args.top_m,
        dbscan_eps=args.dbscan_eps,
        dbscan_min_points=args.dbscan_min,
        scheme=args.scheme,
    )


def _emit(payload: dict) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True))


def cmd_build(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    root = Path(args.frames)
    indices = list_frame_indices(root)
    if not indices:
        raise BundleError(f"no frame bundles under {root}")
    positions = sample_frames(len(indices), config.stride)
    chosen = [indices[p] for p in positions]
    threads = _resolve_threads(args.threads)
    logger.info(
        "building from %d/%d frames (stride %d, %d thread%s)",
        len(chosen), len(indices), config.stride, threads,
        "" if threads == 1 else "s",
    )

    def load(index: int):
        bundle = read_frame_bundle(root, index)
        bundle = apply_mask_padding(bundle, config.border_px)
        bundle = filter_instances(bundle, config)
        return index, bundle, backproject(bundle)

    timings: dict[str, float] = {}
    start = time.perf_counter()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            loaded = list(pool.map(load, chosen))
    else:
        loaded = [load(index) for index in chosen]
    timings["load"] = time.perf_counter() - start

    # Integration is order-sensitive (ids depend on what came before), so it
    # always runs sequentially in ascending frame order.
    scene = ScenePointCloud(config.voxel_size)
    table = GlobalIDTable()
    frames = {}
    segments = 0
    start = time.perf_counter()
    for index, bundle, cloud in loaded:
        frames[index] = bundle
        segments += len(integrate_frame(scene, table, cloud, config))
    timings["integrate"] = time.perf_counter() - start

    start = time.perf_counter()
    scene_map = finalize_map(scene, table, frames, config)
    timings["finalize"] = time.perf_counter() - start

    out = Path(args.out)
    start = time.perf_counter()
    write_map(out, scene_map)
    timings["write"] = time.perf_counter() - start

    digest = hashlib.sha256()
    for index in chosen:
        digest.update((frame_dir(root, index) / "manifest.json").read_bytes())
    run_path = out.with_name(out.stem + "_run.json")
    write_json_atomic(
        run_path,
        {
            "format": "scenefuse-run",
            "version": 1,
            "config": config.to_dict(),
            "input": {
                "root": str(root),
                "frame_indices": chosen,
                "manifests_sha256": digest.hexdigest(),
            },
            "timings": {k: round(v, 6) for k, v in timings.items()},
            "outputs": {
                "map": str(out),
                "points": out.stem + "_points.f32",
                "embeddings": out.stem + "_emb.f32",
            },
            "stats": {
                "frames_used": len(chosen),
                "segments_integrated": segments,
                "scene_points": int(scene.positions.shape[0]),
                "instances": len(scene_map.instances),
            },
        },
    )
    _emit(
        {
            "map": str(out),
            "run_manifest": str(run_path),
            "frames_used": len(chosen),
            "scene_points": int(scene.positions.shape[0]),
            "instances": len(scene_map.instances),
        }
    )
    return 0


def cmd_query(args: argparse.Namespace) -> int:
    scene_map = read_map(args.map)
    raw = np.fromfile(args.embedding, dtype="<f4")
    if raw.size != scene_map.embedding_dim:
        raise BundleError(
            f"query embedding has {raw.size} values, map expects "
            f"{scene_map.embedding_dim}"
        )
    result = query(scene_map, raw.astype(np.float64))
    rankings = result.rankings
    if args.top is not None:
        rankings = rankings[: args.top]
    _emit(
        {
            "argmax_id": result.argmax_id,
            "rankings": [[gid, score] for gid, score in rankings],
        }
    )
    if args.heatmap:
        positions = np.concatenate(
            [inst.points.astype(np.float64) for inst in scene_map.instances]
        )
        ids = np.concatenate(
            [
                np.full(inst.points.shape[0], inst.global_id, dtype=np.int64)
                for inst in scene_map.instances
            ]
        )
        blob = export_ply(positions, ids, mode="by_similarity", scores=result.scores)
        Path(args.heatmap).write_bytes(blob)
        logger.info("wrote similarity heatmap to %s", args.heatmap)
    return 0


def cmd_export_prompt(args: argparse.Namespace) -> int:
    scene_map = read_map(args.map)
    prompt = build_spatial_prompt(build_simplified_map(scene_map))
    if args.out:
        Path(args.out).write_text(prompt)
        logger.info("wrote prompt to %s", args.out)
    else:
        sys.stdout.write(prompt)
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    scene_map = read_map(args.map)
    gt_path = Path(args.gt)
    labels_path = (
        Path(args.labels) if args.labels else gt_path.with_name("gt.labels.json")
    )
    queries_path = (
        Path(args.queries) if args.queries else gt_path.with_name("gt.queries.f32")
    )
    vocab = None
    dim = scene_map.embedding_dim
    if labels_path.is_file():
        meta = json.loads(labels_path.read_text())
        vocab = {int(k): str(v) for k, v in meta.get("classes", {}).items()}
        dim = int(meta.get("embedding_dim", dim))
    gt = load_gt_ply(gt_path, vocab)
    class_ids = sorted(vocab) if vocab else sorted(
        int(c) for c in np.unique(gt.class_ids)
    )
    if not queries_path.is_file():
        raise BundleError(f"missing query sidecar {queries_path}")
    raw = np.fromfile(queries_path, dtype="<f4")
    if raw.size != len(class_ids) * dim:
        raise BundleError(
            f"{queries_path} holds {raw.size} floats, expected "
            f"{len(class_ids)} x {dim}"
        )
    if scene_map.instances and dim != scene_map.embedding_dim:
        raise BundleError(
            f"query dim {dim} does not match map dim {scene_map.embedding_dim}"
        )
    queries = {}
    for slot, class_id in enumerate(class_ids):
        if not scene_map.instances:
            queries[class_id] = []
            continue
        vec = raw[slot * dim : (slot + 1) * dim].astype(np.float64)
        queries[class_id] = query(scene_map, vec).rankings
    report = evaluate(
        scene_map, gt, queries, voxel=args.voxel, acc_iou_threshold=args.acc_iou
    )
    text = report.to_json()
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    scene = load_scene(args.scene)
    summary = write_dataset(scene, args.out)
    _emit(summary)
    return 0


def cmd_stats(args: argparse.Namespace) -> int:
    scene_map = read_map(args.map)
    per_instance = [
        {
            "id": inst.global_id,
            "name": inst.name,
            "refined_name": inst.refined_name,
            "points": int(inst.points.shape[0]),
            "observations": len(inst.observations),
        }
        for inst in scene_map.instances
    ]
    _emit(
        {
            "instances": len(scene_map.instances),
            "embedding_dim": scene_map.embedding_dim,
            "total_points": sum(entry["points"] for entry in per_instance),
            "per_instance": per_instance,
        }
    )
    return 0


def cmd_validate(args: argparse.Namespace) -> int:
    root = Path(args.frames)
    indices = list_frame_indices(root)
    problems = []
    for index in indices:
        try:
            read_frame_bundle(root, index)
        except BundleError as exc:
            problems.append({"frame": index, "error": str(exc)})
    _emit(
        {
            "frames": len(indices),
            "invalid": len(problems),
            "problems": problems,
        }
    )
    if not indices:
        print(f"error: no frame bundles under {root}", file=sys.stderr)
        return 2
    return 0 if not problems else 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scenefuse",
        description="Fuse per-frame instance detections into a 3D scene map.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="integrate frame bundles into a map")
    p.add_argument("--frames", required=True, help="dataset root (holds frames/)")
    p.add_argument("--out", required=True, help="output map.json path")
    p.add_argument("--stride", type=int, default=_DEFAULTS.stride)
    p.add_argument(
        "--epsilon", type=float, default=_DEFAULTS.voxel_size,
        help="voxel size / match radius in meters",
    )
    p.add_argument(
        "--rho", type=float, default=_DEFAULTS.overlap_threshold,
        help="overlap ratio needed to merge a segment",
    )
    p.add_argument(
        "--scheme", type=int, choices=(1, 2, 3, 4), default=_DEFAULTS.scheme,
        help="embedding fusion scheme",
    )
    p.add_argument("--top-m", type=int, default=_DEFAULTS.top_m)
    p.add_argument("--dbscan-eps", type=float, default=_DEFAULTS.dbscan_eps)
    p.add_argument("--dbscan-min", type=int, default=_DEFAULTS.dbscan_min_points)
    p.add_argument(
        "--px", type=int, default=_DEFAULTS.border_px,
        help="mask border erosion in pixels",
    )
    p.add_argument(
        "--threads", type=int, default=None,
        help=f"frame loading workers (default ${THREADS_ENV} or 1)",
    )
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("query", help="rank map instances against an embedding")
    p.add_argument("--map", required=True)
    p.add_argument("--embedding", required=True, help="little-endian f32 vector file")
    p.add_argument("--top", type=int, default=None)
    p.add_argument("--heatmap", default=None, help="write similarity PLY here")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("export-prompt", help="emit the LLM scene prompt")
    p.add_argument("--map", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_export_prompt)

    p = sub.add_parser("eval", help="score a map against a labeled PLY")
    p.add_argument("--map", required=True)
    p.add_argument("--gt", required=True, help="labeled ground-truth PLY")
    p.add_argument("--voxel", type=float, default=DEFAULT_VOXEL)
    p.add_argument("--acc-iou", type=float, default=0.25)
    p.add_argument(
        "--labels", default=None,
        help="class id/name sidecar (default: gt.labels.json beside --gt)",
    )
    p.add_argument(
        "--queries", default=None,
        help="per-class query vectors (default: gt.queries.f32 beside --gt)",
    )
    p.add_argument("--out", default=None, help="also write the report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="render a synthetic dataset")
    p.add_argument("--scene", required=True, help="scene description JSON")
    p.add_argument("--out", required=True, help="dataset output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("stats", help="summarize a map")
    p.add_argument("--map", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("validate", help="check every frame bundle in a dataset")
    p.add_argument("--frames", required=True)
    p.set_defaults(func=cmd_validate)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (BundleError, IntegrityError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
