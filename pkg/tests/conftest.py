"""Shared fixtures and helpers for the test suite."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import settings

from scenefuse.types import (
    CameraIntrinsics,
    FrameBundle,
    InstanceRecord,
    Pose,
    area_fraction_from_bbox,
)

settings.register_profile("suite", deadline=None, max_examples=60)
settings.load_profile("suite")


def make_intrinsics(width: int = 64, height: int = 48) -> CameraIntrinsics:
    return CameraIntrinsics(
        fx=60.0, fy=60.0, cx=width / 2.0, cy=height / 2.0,
        width=width, height=height,
    )


def identity_pose() -> Pose:
    return Pose(np.eye(4))


def make_record(
    local_id: int,
    intrinsics: CameraIntrinsics,
    bbox: tuple[float, float, float, float],
    embedding: np.ndarray,
    name: str = "object",
    caption: str = "an object",
    pred_score: float = 0.9,
) -> InstanceRecord:
    return InstanceRecord(
        local_id=local_id,
        name=name,
        caption=caption,
        pred_score=pred_score,
        bbox_2d=bbox,
        embedding=np.asarray(embedding, dtype=np.float64),
        area_fraction=area_fraction_from_bbox(
            bbox, intrinsics.width, intrinsics.height
        ),
    )


def bbox_of_mask(mask: np.ndarray, local_id: int) -> tuple[float, float, float, float]:
    ys, xs = np.nonzero(mask == local_id)
    return float(xs.min()), float(ys.min()), float(xs.max() + 1), float(ys.max() + 1)


def make_bundle(
    mask: np.ndarray,
    depth: np.ndarray | float,
    intrinsics: CameraIntrinsics | None = None,
    pose: Pose | None = None,
    frame_index: int = 0,
    embedding_dim: int = 4,
    names: dict[int, str] | None = None,
    scores: dict[int, float] | None = None,
) -> FrameBundle:
    """Builds a consistent bundle around a mask; embeddings are one-hot by id."""
    mask = np.asarray(mask, dtype=np.int32)
    h, w = mask.shape
    if intrinsics is None:
        intrinsics = CameraIntrinsics(
            fx=60.0, fy=60.0, cx=w / 2.0, cy=h / 2.0, width=w, height=h
        )
    if pose is None:
        pose = identity_pose()
    if np.isscalar(depth):
        depth = np.full((h, w), float(depth))
    records = []
    ids = sorted(int(v) for v in np.unique(mask) if v > 0)
    for local_id in ids:
        emb = np.zeros(embedding_dim)
        emb[(local_id - 1) % embedding_dim] = 1.0
        records.append(
            make_record(
                local_id,
                intrinsics,
                bbox_of_mask(mask, local_id),
                emb,
                name=(names or {}).get(local_id, f"object-{local_id}"),
                pred_score=(scores or {}).get(local_id, 0.9),
            )
        )
    if records:
        global_embedding = np.mean([r.embedding for r in records], axis=0)
    else:
        global_embedding = np.zeros(embedding_dim)
    return FrameBundle(
        frame_index=frame_index,
        depth=np.asarray(depth, dtype=np.float64),
        mask=mask,
        pose=pose,
        intrinsics=intrinsics,
        instances=tuple(records),
        global_embedding=global_embedding,
    )


_PLY_TYPES = {
    "float": "<f4", "float32": "<f4", "double": "<f8",
    "uchar": "u1", "uint8": "u1",
    "int": "<i4", "int32": "<i4", "uint": "<u4", "ushort": "<u2",
}


def parse_ply(blob: bytes) -> dict[str, np.ndarray]:
    """Minimal independent binary-LE PLY reader used to audit exports."""
    end = blob.index(b"end_header\n") + len(b"end_header\n")
    header = blob[:end].decode("ascii").splitlines()
    assert header[0] == "ply"
    assert "format binary_little_endian 1.0" in header[1]
    count = None
    fields: list[tuple[str, str]] = []
    for line in header[2:]:
        parts = line.split()
        if parts[0] == "element":
            assert parts[1] == "vertex", "only vertex elements expected"
            count = int(parts[2])
        elif parts[0] == "property":
            fields.append((parts[2], _PLY_TYPES[parts[1]]))
    assert count is not None
    dtype = np.dtype(fields)
    data = np.frombuffer(blob[end:], dtype=dtype, count=count)
    return {name: np.ascontiguousarray(data[name]) for name, _ in fields}


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


# ---------------------------------------------------------------------------
# One pass/fail line per acceptance criterion at the end of the run.

ACCEPTANCE_TITLES = {
    "test_fusion_algebra_suite": "fusion algebra suite",
    "test_projection_round_trip": "projection round trip",
    "test_merge_correctness": "merge correctness",
    "test_constant_update_bound": "constant-update bound",
    "test_spatial_matching_oracle": "spatial matching oracle",
    "test_metrics_identity_and_oracle": "metrics identity and oracle",
    "test_retrieval_correctness": "retrieval correctness",
    "test_end_to_end_determinism": "end-to-end determinism",
    "test_dbscan_oracle": "density clustering oracle",
}

_ACCEPTANCE_ORDER = list(ACCEPTANCE_TITLES)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    outcomes: dict[str, str] = {}
    for category, verdict in (("passed", "PASS"), ("failed", "FAIL"), ("error", "FAIL")):
        for report in terminalreporter.stats.get(category, []):
            if "test_acceptance.py" not in getattr(report, "nodeid", ""):
                continue
            name = report.nodeid.split("::")[-1].split("[")[0]
            if name in ACCEPTANCE_TITLES and outcomes.get(name) != "FAIL":
                outcomes[name] = verdict
    if not outcomes:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for name in _ACCEPTANCE_ORDER:
        if name in outcomes:
            terminalreporter.write_line(
                f"[acceptance] {ACCEPTANCE_TITLES[name]}: {outcomes[name]}"
            )
