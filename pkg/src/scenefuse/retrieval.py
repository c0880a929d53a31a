"""Open-vocabulary retrieval over the map and LLM-ready scene serialization."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .fusion import cosine
from .types import InstanceMap

__all__ = [
    "QueryResult",
    "SimplifiedInstance",
    "query",
    "build_simplified_map",
    "simplified_map_to_json",
    "build_spatial_prompt",
    "PROMPT_INSTRUCTIONS",
]


@dataclass(frozen=True)
class QueryResult:
    """Instances ranked by cosine similarity to a query embedding."""

    rankings: tuple[tuple[int, float], ...]
    argmax_id: int

    @property
    def scores(self) -> dict[int, float]:
        return {gid: score for gid, score in self.rankings}


def query(scene_map: InstanceMap, embedding: np.ndarray) -> QueryResult:
    """Rank every map instance against the query vector, best first.

    Score ties break toward the smaller global id, so rankings are total
    and deterministic.
    """
    if not scene_map.instances:
        raise ValueError("cannot query an empty map")
    vec = np.asarray(embedding, dtype=np.float64).reshape(-1)
    if vec.shape[0] != scene_map.embedding_dim:
        raise ValueError(
            f"query dimension {vec.shape[0]} != map dimension {scene_map.embedding_dim}"
        )
    scored = [
        (inst.global_id, cosine(vec, np.asarray(inst.embedding, dtype=np.float64)))
        for inst in scene_map.instances
    ]
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return QueryResult(tuple(scored), scored[0][0])


@dataclass(frozen=True)
class SimplifiedInstance:
    """Map entry with bulky fields dropped and coordinates rounded for text."""

    global_id: int
    name: str
    refined_name: str | None
    caption: str
    centroid: tuple[float, float, float]
    bbox_min: tuple[float, float, float]
    bbox_max: tuple[float, float, float]


def _rounded(values: np.ndarray) -> tuple[float, float, float]:
    return tuple(round(float(v), 3) for v in values)


def build_simplified_map(scene_map: InstanceMap) -> list[SimplifiedInstance]:
    """Strip points and embeddings; keep ids, naming, and rounded geometry."""
    return [
        SimplifiedInstance(
            global_id=inst.global_id,
            name=inst.name,
            refined_name=inst.refined_name,
            caption=inst.caption,
            centroid=_rounded(inst.centroid),
            bbox_min=_rounded(inst.bbox_min),
            bbox_max=_rounded(inst.bbox_max),
        )
        for inst in scene_map.instances
    ]


def _instance_payload(inst: SimplifiedInstance) -> dict:
    return {
        "id": inst.global_id,
        "name": inst.name,
        "refined_name": inst.refined_name,
        "caption": inst.caption,
        "centroid": list(inst.centroid),
        "bbox": {"min": list(inst.bbox_min), "max": list(inst.bbox_max)},
    }


def simplified_map_to_json(instances: list[SimplifiedInstance]) -> str:
    """Serialize the simplified map as a JSON array."""
    return json.dumps(
        [_instance_payload(inst) for inst in instances], sort_keys=True
    )


PROMPT_INSTRUCTIONS: tuple[str, ...] = (
    "Use 'Name' & 'Description' to understand object.",
    "Use 'ID' to refer object.",
    "Use 'Cartesian Coordinates'.",
    "Get 'Centroid' & 'Bounding Box' information.",
    "Compute 'Euclidean Distance' if necessary.",
    "Assume 'Tolerance' if necessary.",
)


def build_spatial_prompt(instances: list[SimplifiedInstance]) -> str:
    """Assemble the system prompt: fixed instructions plus one record per line.

    Output size grows linearly with the instance count; everything an
    assistant needs for metric reasoning (ids, names, captions, centroids,
    boxes) is inline.
    """
    lines = [
        "You are an assistant answering spatial questions about a 3D scene.",
        "The scene is a list of object records in world coordinates (meters).",
        "Follow these instructions:",
    ]
    lines.extend(f"- {instruction}" for instruction in PROMPT_INSTRUCTIONS)
    lines.append("")
    lines.append("Objects:")
    for inst in instances:
        lines.append(json.dumps(_instance_payload(inst), sort_keys=True))
    return "\n".join(lines) + "\n"
