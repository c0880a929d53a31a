"""Retrieval-driven segmentation quality metrics on a shared voxel grid.

Predicted and ground-truth point sets are compared after snapping both to
one world-aligned voxel grid: IoU is intersection over union of occupied
voxel keys. Per class, the top-1 retrieved instance is scored against the
best-matching ground-truth instance of that class (which makes
self-evaluation exactly 1.0); AP follows the greedy score-ranked matching
protocol with each ground-truth instance claimable once.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .types import InstanceMap, voxel_grid_keys

__all__ = [
    "GroundTruthScene",
    "EvalReport",
    "DEFAULT_VOXEL",
    "AP_THRESHOLDS",
    "voxel_key_set",
    "voxel_downsample_pair",
    "iou",
    "adjusted_rand_index",
    "evaluate",
    "load_gt_ply",
    "write_gt_ply",
]

DEFAULT_VOXEL = 0.025
AP_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


@dataclass(frozen=True)
class GroundTruthScene:
    """Labeled reference cloud: positions with class and instance ids."""

    positions: np.ndarray
    class_ids: np.ndarray
    instance_ids: np.ndarray
    vocabulary: dict[int, str]

    def __post_init__(self) -> None:
        pts = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        cls = np.asarray(self.class_ids, dtype=np.int64).reshape(-1)
        inst = np.asarray(self.instance_ids, dtype=np.int64).reshape(-1)
        if not (pts.shape[0] == cls.shape[0] == inst.shape[0]):
            raise ValueError("positions, class_ids, instance_ids must align")
        if pts.shape[0] == 0:
            raise ValueError("ground truth scene must contain points")
        for arr in (pts, cls, inst):
            arr.flags.writeable = False
        object.__setattr__(self, "positions", pts)
        object.__setattr__(self, "class_ids", cls)
        object.__setattr__(self, "instance_ids", inst)

    def __len__(self) -> int:
        return int(self.class_ids.shape[0])


@dataclass(frozen=True)
class EvalReport:
    """Aggregate metrics plus the per-class breakdown they average."""

    mAcc: float
    f_miou: float
    ap: float
    ap50: float
    ap25: float
    ari: float
    per_class: dict[int, dict]

    def to_dict(self) -> dict:
        return {
            "mAcc": self.mAcc,
            "F_mIoU": self.f_miou,
            "AP": self.ap,
            "AP50": self.ap50,
            "AP25": self.ap25,
            "ARI": self.ari,
            "per_class": {str(k): v for k, v in sorted(self.per_class.items())},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def voxel_key_set(points: np.ndarray, voxel: float) -> set[tuple[int, int, int]]:
    """Occupied voxel keys of a cloud on the shared world grid."""
    keys = voxel_grid_keys(points, voxel)
    return set(map(tuple, keys.tolist()))


def voxel_downsample_pair(
    pred_points: np.ndarray, gt_points: np.ndarray, voxel: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Downsample both clouds to one point per voxel and correspond them.

    Returns (pred_rows, gt_rows, matches): survivor row indices into each
    input (earliest point per voxel), and (i, j) pairs into those survivor
    arrays where survivor i's nearest ground-truth survivor j lies within
    the voxel diagonal.
    """
    if voxel <= 0:
        raise ValueError("voxel must be positive")
    pred = np.asarray(pred_points, dtype=np.float64).reshape(-1, 3)
    gt = np.asarray(gt_points, dtype=np.float64).reshape(-1, 3)
    if pred.shape[0] == 0 or gt.shape[0] == 0:
        raise ValueError("both clouds must be non-empty")

    def survivors(points: np.ndarray) -> np.ndarray:
        keys = voxel_grid_keys(points, voxel)
        view = np.ascontiguousarray(keys).view(
            np.dtype((np.void, keys.dtype.itemsize * 3))
        )
        _, first = np.unique(view, return_index=True)
        first.sort()
        return first.astype(np.int64)

    pred_rows = survivors(pred)
    gt_rows = survivors(gt)
    tree = cKDTree(gt[gt_rows])
    dist, idx = tree.query(pred[pred_rows], k=1)
    diagonal = voxel * math.sqrt(3.0)
    hit = dist <= diagonal
    matches = np.stack(
        [np.nonzero(hit)[0].astype(np.int64), idx[hit].astype(np.int64)], axis=1
    ) if np.any(hit) else np.empty((0, 2), dtype=np.int64)
    return pred_rows, gt_rows, matches


def iou(pred_keys: set, gt_keys: set) -> float:
    """Intersection over union of two voxel key sets; two empties give 0."""
    union = len(pred_keys | gt_keys)
    if union == 0:
        return 0.0
    return len(pred_keys & gt_keys) / union


def adjusted_rand_index(labels_a: Sequence[int], labels_b: Sequence[int]) -> float:
    """Chance-corrected agreement of two labelings of the same elements."""
    a = list(labels_a)
    b = list(labels_b)
    if len(a) != len(b):
        raise ValueError("labelings must cover the same elements")
    n = len(a)
    if n == 0:
        raise ValueError("labelings must be non-empty")
    contingency: dict[tuple[int, int], int] = {}
    rows: dict[int, int] = {}
    cols: dict[int, int] = {}
    for la, lb in zip(a, b):
        contingency[(la, lb)] = contingency.get((la, lb), 0) + 1
        rows[la] = rows.get(la, 0) + 1
        cols[lb] = cols.get(lb, 0) + 1
    sum_cells = sum(math.comb(c, 2) for c in contingency.values())
    sum_rows = sum(math.comb(c, 2) for c in rows.values())
    sum_cols = sum(math.comb(c, 2) for c in cols.values())
    total = math.comb(n, 2)
    if total == 0:
        return 1.0
    expected = sum_rows * sum_cols / total
    max_index = (sum_rows + sum_cols) / 2.0
    if max_index == expected:
        return 1.0  # both partitions trivial
    return (sum_cells - expected) / (max_index - expected)


def _average_precision(tp_flags: Sequence[bool], n_gt: int) -> float:
    """All-point interpolated AP of one ranked prediction list."""
    if n_gt == 0:
        return 0.0
    tp_cum = 0
    recalls: list[float] = []
    precisions: list[float] = []
    for rank, is_tp in enumerate(tp_flags, start=1):
        if is_tp:
            tp_cum += 1
        recalls.append(tp_cum / n_gt)
        precisions.append(tp_cum / rank)
    # running max from the right makes precision monotone non-increasing
    for i in range(len(precisions) - 2, -1, -1):
        precisions[i] = max(precisions[i], precisions[i + 1])
    ap = 0.0
    prev_recall = 0.0
    for recall, precision in zip(recalls, precisions):
        if recall > prev_recall:
            ap += (recall - prev_recall) * precision
            prev_recall = recall
    return ap


def _greedy_tp_flags(
    ranked_ious: Sequence[Sequence[float]], threshold: float
) -> list[bool]:
    """Greedy score-order matching: each GT instance claimable once."""
    matched: set[int] = set()
    flags: list[bool] = []
    for ious in ranked_ious:
        best_gt = -1
        best_iou = 0.0
        for gt_idx, value in enumerate(ious):
            if gt_idx in matched:
                continue
            if value > best_iou:
                best_iou = value
                best_gt = gt_idx
        if best_gt >= 0 and best_iou >= threshold:
            matched.add(best_gt)
            flags.append(True)
        else:
            flags.append(False)
    return flags


def _ari_over_common_voxels(
    pred_key_owner: Mapping[tuple, int], gt_key_owner: Mapping[tuple, int]
) -> float:
    common = sorted(set(pred_key_owner) & set(gt_key_owner))
    if not common:
        return 0.0
    return adjusted_rand_index(
        [pred_key_owner[k] for k in common], [gt_key_owner[k] for k in common]
    )


def evaluate(
    scene_map: InstanceMap,
    gt: GroundTruthScene,
    queries: Mapping[int, Sequence[tuple[int, float]]],
    voxel: float,
    acc_iou_threshold: float = 0.25,
) -> EvalReport:
    """Score per-class retrievals of the map against the reference scene.

    queries maps each ground-truth class id to its ranked retrieval result
    (instance id, score), best first. Per class the top-1 instance is
    compared to the best-matching GT instance of the class (hit threshold
    acc_iou_threshold for mAcc); the F-mIoU weights are downsampled class
    voxel counts; AP averages greedy-matched average precision over the
    0.5:0.05:0.95 grid, with AP50/AP25 at fixed thresholds. A missing class
    entry in queries counts as retrieving nothing.
    """
    if voxel <= 0:
        raise ValueError("voxel must be positive")
    if len(gt) == 0:
        raise ValueError("ground truth scene must contain points")

    pred_keys: dict[int, set] = {
        inst.global_id: voxel_key_set(inst.points, voxel)
        for inst in scene_map.instances
    }
    gt_instance_keys: dict[int, set] = {}
    gt_instance_class: dict[int, int] = {}
    for inst_id in sorted(int(v) for v in np.unique(gt.instance_ids)):
        rows = gt.instance_ids == inst_id
        gt_instance_keys[inst_id] = voxel_key_set(gt.positions[rows], voxel)
        classes = np.unique(gt.class_ids[rows])
        gt_instance_class[inst_id] = int(classes[0])

    class_ids = sorted(int(v) for v in np.unique(gt.class_ids))
    per_class: dict[int, dict] = {}
    ap_sums = {t: 0.0 for t in AP_THRESHOLDS + (0.25,)}
    correct_count = 0
    weighted_iou = 0.0
    total_weight = 0

    for class_id in class_ids:
        gt_ids = [g for g, c in gt_instance_class.items() if c == class_id]
        gt_keysets = [gt_instance_keys[g] for g in gt_ids]
        weight = sum(len(ks) for ks in gt_keysets)
        ranked = sorted(
            ((int(gid), float(score)) for gid, score in queries.get(class_id, ())),
            key=lambda pair: (-pair[1], pair[0]),
        )
        ranked_ious = [
            [
                iou(pred_keys.get(gid, set()), gt_ks)
                for gt_ks in gt_keysets
            ]
            for gid, _ in ranked
        ]
        if ranked_ious:
            top1_iou = max(ranked_ious[0], default=0.0)
        else:
            top1_iou = 0.0
        correct = top1_iou >= acc_iou_threshold
        correct_count += int(correct)
        weighted_iou += weight * top1_iou
        total_weight += weight

        class_aps = {}
        for threshold in ap_sums:
            flags = _greedy_tp_flags(ranked_ious, threshold)
            class_aps[threshold] = _average_precision(flags, len(gt_ids))
            ap_sums[threshold] += class_aps[threshold]
        per_class[class_id] = {
            "name": gt.vocabulary.get(class_id, str(class_id)),
            "top1_iou": top1_iou,
            "correct": bool(correct),
            "gt_instances": len(gt_ids),
            "ap50": class_aps[0.5],
            "ap25": class_aps[0.25],
        }

    n_classes = len(class_ids)
    ap_means = {t: s / n_classes for t, s in ap_sums.items()}
    ap = sum(ap_means[t] for t in AP_THRESHOLDS) / len(AP_THRESHOLDS)

    pred_owner: dict[tuple, int] = {}
    for gid in sorted(pred_keys):
        for key in pred_keys[gid]:
            pred_owner.setdefault(key, gid)
    gt_owner: dict[tuple, int] = {}
    for inst_id in sorted(gt_instance_keys):
        for key in gt_instance_keys[inst_id]:
            gt_owner.setdefault(key, inst_id)

    return EvalReport(
        mAcc=correct_count / n_classes,
        f_miou=weighted_iou / total_weight if total_weight else 0.0,
        ap=ap,
        ap50=ap_means[0.5],
        ap25=ap_means[0.25],
        ari=_ari_over_common_voxels(pred_owner, gt_owner),
        per_class=per_class,
    )


# ---------------------------------------------------------------------------
# Labeled PLY ground truth

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


def write_gt_ply(path: str | Path, gt: GroundTruthScene) -> None:
    """Binary little-endian PLY with x, y, z, label, instance per vertex."""
    path = Path(path)
    n = len(gt)
    header = "\n".join(
        [
            "ply",
            "format binary_little_endian 1.0",
            f"element vertex {n}",
            "property float x",
            "property float y",
            "property float z",
            "property int label",
            "property int instance",
            "end_header",
        ]
    ) + "\n"
    dtype = np.dtype(
        [("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("label", "<i4"), ("instance", "<i4")]
    )
    rows = np.empty(n, dtype=dtype)
    pos32 = gt.positions.astype(np.float32)
    rows["x"], rows["y"], rows["z"] = pos32[:, 0], pos32[:, 1], pos32[:, 2]
    rows["label"] = gt.class_ids.astype(np.int32)
    rows["instance"] = gt.instance_ids.astype(np.int32)
    path.write_bytes(header.encode("ascii") + rows.tobytes())


def load_gt_ply(
    path: str | Path, vocabulary: Mapping[int, str] | None = None
) -> GroundTruthScene:
    """Read a labeled PLY (binary little-endian or ascii) into a scene.

    Requires vertex properties x, y, z, label, instance; other properties
    are skipped. List properties are not supported on the vertex element.
    """
    path = Path(path)
    blob = path.read_bytes()
    end_marker = b"end_header\n"
    end = blob.find(end_marker)
    if not blob.startswith(b"ply") or end < 0:
        raise ValueError(f"{path} is not a PLY file")
    header_lines = blob[:end].decode("ascii", "replace").splitlines()
    body = blob[end + len(end_marker):]

    fmt = None
    n_vertices = None
    in_vertex = False
    fields: list[tuple[str, str]] = []
    for line in header_lines:
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            in_vertex = parts[1] == "vertex"
            if in_vertex:
                n_vertices = int(parts[2])
        elif parts[0] == "property" and in_vertex:
            if parts[1] == "list":
                raise ValueError("list properties on vertices are not supported")
            if parts[1] not in _PLY_TYPES:
                raise ValueError(f"unsupported property type {parts[1]}")
            fields.append((parts[2], _PLY_TYPES[parts[1]]))
    if fmt not in ("binary_little_endian", "ascii") or n_vertices is None:
        raise ValueError(f"{path}: unsupported PLY format {fmt}")
    names = [name for name, _ in fields]
    for required in ("x", "y", "z", "label", "instance"):
        if required not in names:
            raise ValueError(f"{path}: missing vertex property {required}")

    if fmt == "binary_little_endian":
        dtype = np.dtype([(name, "<" + code) for name, code in fields])
        if len(body) < n_vertices * dtype.itemsize:
            raise ValueError(f"{path}: vertex data truncated")
        table = np.frombuffer(body[: n_vertices * dtype.itemsize], dtype=dtype)
    else:
        text_rows = body.decode("ascii").split()
        width = len(fields)
        if len(text_rows) < n_vertices * width:
            raise ValueError(f"{path}: vertex data truncated")
        raw = np.array(text_rows[: n_vertices * width], dtype=np.float64)
        raw = raw.reshape(n_vertices, width)
        table = {name: raw[:, i] for i, (name, _) in enumerate(fields)}

    positions = np.stack(
        [np.asarray(table["x"]), np.asarray(table["y"]), np.asarray(table["z"])],
        axis=1,
    ).astype(np.float64)
    class_ids = np.asarray(table["label"]).astype(np.int64)
    instance_ids = np.asarray(table["instance"]).astype(np.int64)
    vocab = dict(vocabulary) if vocabulary else {
        int(c): str(int(c)) for c in np.unique(class_ids)
    }
    return GroundTruthScene(positions, class_ids, instance_ids, vocab)
