"""Query ranking, simplified-map projection, and prompt assembly."""

from __future__ import annotations

import dataclasses
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from scenefuse import (
    FusionConfig,
    InstanceMap,
    MapInstance,
    Observation,
    PROMPT_INSTRUCTIONS,
    build_simplified_map,
    build_spatial_prompt,
    query,
    simplified_map_to_json,
)


def make_map(embeddings, ids=None, centers=None, names=None):
    """Small finalized map with one point per instance."""
    embeddings = [np.asarray(e, dtype=np.float64) for e in embeddings]
    dim = embeddings[0].shape[0] if embeddings else 4
    ids = ids or list(range(1, len(embeddings) + 1))
    instances = []
    for slot, (gid, emb) in enumerate(zip(ids, embeddings)):
        center = np.asarray(
            centers[slot] if centers is not None else (float(slot), 0.0, 0.0)
        )
        instances.append(
            MapInstance(
                global_id=gid,
                points=center.reshape(1, 3),
                name=names[slot] if names is not None else f"object {gid}",
                caption=f"a test object {gid}",
                embedding=emb,
                bbox_min=center,
                bbox_max=center,
                centroid=center,
                observations=(Observation(0, gid, 0.9, "object"),),
            )
        )
    return InstanceMap(tuple(instances), FusionConfig(), dim)


def oracle_rank(scene_map, vec):
    """Plain-loop cosine ranking, sorted descending with id tie-break."""
    scored = []
    for inst in scene_map.instances:
        emb = [float(x) for x in inst.embedding]
        dot = sum(a * b for a, b in zip(vec, emb))
        na = math.sqrt(sum(a * a for a in vec))
        nb = math.sqrt(sum(b * b for b in emb))
        scored.append((inst.global_id, dot / (na * nb)))
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return scored


class TestQuery:
    def test_singleton_map_is_always_argmax(self, rng):
        scene_map = make_map([rng.normal(size=4)])
        for _ in range(10):
            result = query(scene_map, rng.normal(size=4))
            assert result.argmax_id == 1
            assert len(result.rankings) == 1

    def test_one_hot_query_scores_exactly(self):
        dim = 5
        scene_map = make_map([np.eye(dim)[i] for i in range(dim)])
        result = query(scene_map, np.eye(dim)[1])
        assert result.argmax_id == 2
        scores = result.scores
        assert scores[2] == 1.0
        for gid in (1, 3, 4, 5):
            assert scores[gid] == 0.0

    def test_matches_full_scan_oracle(self, rng):
        embs = [rng.normal(size=16) for _ in range(40)]
        scene_map = make_map([e / np.linalg.norm(e) for e in embs])
        for _ in range(5):
            vec = rng.normal(size=16)
            result = query(scene_map, vec)
            expected = oracle_rank(scene_map, [float(x) for x in vec])
            assert [gid for gid, _ in result.rankings] == [g for g, _ in expected]
            for (_, got), (_, want) in zip(result.rankings, expected):
                assert got == pytest.approx(want, abs=1e-12)

    def test_equal_scores_order_by_id(self):
        shared = np.array([1.0, 1.0, 0.0, 0.0])
        scene_map = make_map([shared, np.array([0.0, 0.0, 1.0, 0.0]), shared],
                             ids=[3, 5, 9])
        result = query(scene_map, shared)
        assert [gid for gid, _ in result.rankings] == [3, 9, 5]
        assert result.argmax_id == 3

    def test_scores_descending_and_argmax_first(self, rng):
        for _ in range(10):
            scene_map = make_map([rng.normal(size=6) for _ in range(8)])
            result = query(scene_map, rng.normal(size=6))
            scores = [s for _, s in result.rankings]
            assert all(a >= b for a, b in zip(scores, scores[1:]))
            assert result.argmax_id == result.rankings[0][0]
            assert all(-1.0 - 1e-12 <= s <= 1.0 + 1e-12 for s in scores)

    @given(
        scale=st.floats(min_value=1e-6, max_value=1e6),
        seed=st.integers(min_value=0, max_value=2**31 - 1),
    )
    def test_ranking_invariant_to_query_scale(self, scale, seed):
        gen = np.random.default_rng(seed)
        scene_map = make_map([gen.normal(size=5) for _ in range(6)])
        vec = gen.normal(size=5)
        base = query(scene_map, vec)
        scaled = query(scene_map, vec * scale)
        assert [g for g, _ in scaled.rankings] == [g for g, _ in base.rankings]
        assert scaled.argmax_id == base.argmax_id

    def test_empty_map_rejected(self):
        empty = InstanceMap((), FusionConfig(), 4)
        with pytest.raises(ValueError, match="empty"):
            query(empty, np.ones(4))

    def test_dimension_mismatch_rejected(self, rng):
        scene_map = make_map([rng.normal(size=4)])
        with pytest.raises(ValueError, match="dimension"):
            query(scene_map, np.ones(7))

    def test_query_leaves_map_untouched(self, rng):
        scene_map = make_map([rng.normal(size=4) for _ in range(3)])
        before = [
            (inst.embedding.tobytes(), inst.points.tobytes())
            for inst in scene_map.instances
        ]
        query(scene_map, rng.normal(size=4))
        after = [
            (inst.embedding.tobytes(), inst.points.tobytes())
            for inst in scene_map.instances
        ]
        assert before == after
        assert not scene_map.instances[0].embedding.flags.writeable

    def test_scores_table_mirrors_rankings(self, rng):
        scene_map = make_map([rng.normal(size=4) for _ in range(5)])
        result = query(scene_map, rng.normal(size=4))
        assert result.scores == dict(result.rankings)


class TestSimplifiedMap:
    def test_two_instances_give_two_plain_records(self, rng):
        scene_map = make_map([rng.normal(size=4), rng.normal(size=4)])
        records = build_simplified_map(scene_map)
        assert len(records) == 2
        for rec in records:
            assert not hasattr(rec, "embedding")
            assert not hasattr(rec, "points")

    def test_empty_map_gives_empty_list(self):
        assert build_simplified_map(InstanceMap((), FusionConfig(), 4)) == []

    def test_ids_and_names_carry_over(self, rng):
        scene_map = make_map(
            [rng.normal(size=4) for _ in range(3)],
            ids=[2, 7, 11],
            names=["mug", "chair", "lamp"],
        )
        records = build_simplified_map(scene_map)
        assert [r.global_id for r in records] == [2, 7, 11]
        assert [r.name for r in records] == ["mug", "chair", "lamp"]
        assert all(r.refined_name is None for r in records)

    def test_coordinates_rounded_to_millimeters(self, rng):
        center = (1.23456, -0.00049, 2.0)
        scene_map = make_map([rng.normal(size=4)], centers=[center])
        rec = build_simplified_map(scene_map)[0]
        # float32 point storage perturbs the raw values; rounding to 3
        # decimals lands back on exact millimeters
        assert rec.centroid == (1.235, -0.0, 2.0)
        assert rec.bbox_min == rec.centroid
        assert rec.bbox_max == rec.centroid

    def test_projection_drops_exactly_bulk_fields(self, rng):
        from scenefuse.retrieval import SimplifiedInstance

        full = {f.name for f in dataclasses.fields(MapInstance)}
        slim = {f.name for f in dataclasses.fields(SimplifiedInstance)}
        assert full - slim == {"points", "embedding", "observations"}
        assert slim <= full

    def test_json_is_a_valid_array(self, rng):
        scene_map = make_map([rng.normal(size=4) for _ in range(2)])
        payload = json.loads(simplified_map_to_json(build_simplified_map(scene_map)))
        assert isinstance(payload, list) and len(payload) == 2
        for entry in payload:
            assert set(entry) == {
                "id", "name", "refined_name", "caption", "centroid", "bbox",
            }
            assert set(entry["bbox"]) == {"min", "max"}

    def test_empty_json_array(self):
        assert json.loads(simplified_map_to_json([])) == []


class TestSpatialPrompt:
    def test_six_instructions_present(self, rng):
        assert len(PROMPT_INSTRUCTIONS) == 6
        scene_map = make_map([rng.normal(size=4) for _ in range(2)])
        prompt = build_spatial_prompt(build_simplified_map(scene_map))
        for instruction in PROMPT_INSTRUCTIONS:
            assert instruction in prompt

    def test_empty_map_keeps_instructions(self):
        prompt = build_spatial_prompt([])
        for instruction in PROMPT_INSTRUCTIONS:
            assert instruction in prompt
        assert prompt.rstrip().endswith("Objects:")

    def test_one_record_line_per_instance(self, rng):
        scene_map = make_map([rng.normal(size=4) for _ in range(7)])
        prompt = build_spatial_prompt(build_simplified_map(scene_map))
        lines = prompt.splitlines()
        body = lines[lines.index("Objects:") + 1:]
        assert len(body) == 7
        assert [json.loads(line)["id"] for line in body] == list(range(1, 8))

    def test_size_grows_linearly_with_instances(self, rng):
        sizes = []
        counts = range(1, 101)
        for n in counts:
            scene_map = make_map([np.eye(4)[i % 4] for i in range(n)])
            sizes.append(len(build_spatial_prompt(build_simplified_map(scene_map))))
        xs = np.array(counts, dtype=np.float64)
        ys = np.array(sizes, dtype=np.float64)
        slope, intercept = np.polyfit(xs, ys, 1)
        residuals = ys - (slope * xs + intercept)
        r_squared = 1.0 - residuals.var() / ys.var()
        assert r_squared > 0.99
        assert slope > 0
