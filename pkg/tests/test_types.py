"""Domain type invariants, bundle validation, and the core containers."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from scenefuse.types import (
    CameraIntrinsics,
    FusionConfig,
    GlobalIDTable,
    InstanceRecord,
    IntegrityError,
    MapInstance,
    Pose,
    ScenePointCloud,
    area_fraction_from_bbox,
    pack_voxel_keys,
    validate_frame_bundle,
    voxel_grid_keys,
)

from conftest import make_bundle, make_intrinsics, make_record


class TestCameraIntrinsics:
    def test_rejects_nonpositive_focal(self):
        with pytest.raises(ValueError):
            CameraIntrinsics(fx=0.0, fy=60.0, cx=1.0, cy=1.0, width=4, height=4)

    def test_rejects_principal_point_outside(self):
        with pytest.raises(ValueError):
            CameraIntrinsics(fx=60.0, fy=60.0, cx=10.0, cy=1.0, width=4, height=4)

    def test_matrix_layout(self):
        intr = make_intrinsics()
        k = intr.matrix()
        assert k[0, 0] == intr.fx and k[1, 1] == intr.fy
        assert k[0, 2] == intr.cx and k[1, 2] == intr.cy
        assert k[2, 2] == 1.0

    def test_dict_round_trip(self):
        intr = make_intrinsics(width=100, height=80)
        assert CameraIntrinsics.from_dict(intr.to_dict()) == intr


class TestPose:
    def test_identity_ok(self):
        Pose(np.eye(4))

    def test_rejects_bad_last_row(self):
        m = np.eye(4)
        m[3, 0] = 1e-9
        with pytest.raises(ValueError, match="last row"):
            Pose(m)

    def test_rejects_reflection(self):
        m = np.eye(4)
        m[0, 0] = -1.0  # determinant -1
        with pytest.raises(ValueError, match="determinant"):
            Pose(m)

    def test_rejects_non_orthonormal(self):
        m = np.eye(4)
        m[0, 0] = 1.1
        with pytest.raises(ValueError):
            Pose(m)

    def test_inverse_composes_to_identity(self):
        angle = 0.7
        m = np.eye(4)
        m[:3, :3] = np.array(
            [
                [np.cos(angle), -np.sin(angle), 0.0],
                [np.sin(angle), np.cos(angle), 0.0],
                [0.0, 0.0, 1.0],
            ]
        )
        m[:3, 3] = (1.0, -2.0, 3.0)
        pose = Pose(m)
        product = pose.matrix @ pose.inverse().matrix
        assert np.allclose(product, np.eye(4), atol=1e-12)

    def test_list_round_trip(self):
        m = np.eye(4)
        m[:3, 3] = (0.25, -1.5, 3.0)
        pose = Pose(m)
        assert np.array_equal(Pose.from_list(pose.to_list()).matrix, pose.matrix)


class TestInstanceRecord:
    def test_rejects_local_id_zero(self):
        with pytest.raises(ValueError):
            make_record(0, make_intrinsics(), (0, 0, 4, 4), np.ones(3))

    def test_rejects_score_out_of_range(self):
        with pytest.raises(ValueError):
            make_record(
                1, make_intrinsics(), (0, 0, 4, 4), np.ones(3), pred_score=1.5
            )

    def test_rejects_non_finite_embedding(self):
        with pytest.raises(ValueError):
            make_record(1, make_intrinsics(), (0, 0, 4, 4), np.array([1.0, np.nan]))

    def test_embedding_is_frozen(self):
        rec = make_record(1, make_intrinsics(), (0, 0, 4, 4), np.ones(3))
        with pytest.raises(ValueError):
            rec.embedding[0] = 5.0


class TestAreaFraction:
    def test_full_frame(self):
        assert area_fraction_from_bbox((0, 0, 64, 48), 64, 48) == 1.0

    def test_half_frame(self):
        assert area_fraction_from_bbox((0, 0, 32, 48), 64, 48) == 0.5

    def test_rejects_degenerate(self):
        with pytest.raises(ValueError):
            area_fraction_from_bbox((5, 5, 5, 10), 64, 48)


class TestValidateFrameBundle:
    def test_well_formed_bundle_is_clean(self):
        mask = np.zeros((48, 64), dtype=np.int32)
        mask[10:20, 10:20] = 1
        bundle = make_bundle(mask, 2.0)
        assert validate_frame_bundle(bundle) == []

    def test_orphan_mask_id_reported(self):
        mask = np.zeros((48, 64), dtype=np.int32)
        mask[10:20, 10:20] = 1
        bundle = make_bundle(mask, 2.0)
        raised = np.array(bundle.mask, copy=True)
        raised[30:35, 30:35] = 7
        broken = make_bundle(raised, 2.0)
        broken = type(broken)(
            frame_index=broken.frame_index,
            depth=broken.depth,
            mask=broken.mask,
            pose=broken.pose,
            intrinsics=broken.intrinsics,
            instances=bundle.instances,  # record for id 7 deliberately missing
            global_embedding=broken.global_embedding,
        )
        report = validate_frame_bundle(broken)
        assert any("orphan mask id 7" in line for line in report)

    def test_dimension_mismatch_reported(self):
        mask = np.zeros((48, 64), dtype=np.int32)
        mask[5:10, 5:10] = 1
        good = make_bundle(mask, 2.0)
        small = CameraIntrinsics(
            fx=60.0, fy=60.0, cx=16.0, cy=12.0, width=32, height=24
        )
        broken = type(good)(
            frame_index=0,
            depth=good.depth,
            mask=good.mask,
            pose=good.pose,
            intrinsics=small,
            instances=good.instances,
            global_embedding=good.global_embedding,
        )
        report = validate_frame_bundle(broken)
        assert any("dimension mismatch" in line for line in report)

    def test_orphan_record_reported(self):
        mask = np.zeros((48, 64), dtype=np.int32)
        mask[10:20, 10:20] = 1
        bundle = make_bundle(mask, 2.0)
        extra = make_record(9, bundle.intrinsics, (0, 0, 4, 4), np.ones(4))
        broken = type(bundle)(
            frame_index=0,
            depth=bundle.depth,
            mask=bundle.mask,
            pose=bundle.pose,
            intrinsics=bundle.intrinsics,
            instances=bundle.instances + (extra,),
            global_embedding=bundle.global_embedding,
        )
        report = validate_frame_bundle(broken)
        assert any("orphan instance record 9" in line for line in report)

    def test_embedding_dim_mismatch_reported(self):
        mask = np.zeros((48, 64), dtype=np.int32)
        mask[10:20, 10:20] = 1
        bundle = make_bundle(mask, 2.0, embedding_dim=4)
        wrong = make_record(
            1, bundle.intrinsics, bundle.instances[0].bbox_2d, np.ones(3)
        )
        broken = type(bundle)(
            frame_index=0,
            depth=bundle.depth,
            mask=bundle.mask,
            pose=bundle.pose,
            intrinsics=bundle.intrinsics,
            instances=(wrong,),
            global_embedding=bundle.global_embedding,
        )
        report = validate_frame_bundle(broken)
        assert any("embedding dimension mismatch" in line for line in report)


class TestFusionConfigDefaults:
    def test_reference_operating_point(self):
        config = FusionConfig()
        assert config.stride == 40
        assert config.border_px == 20
        assert config.voxel_size == 0.02
        assert config.overlap_threshold == 0.3
        assert config.top_m == 5
        assert config.crop_levels == 3
        assert config.crop_ratios == (0.8, 1.0, 1.2)
        assert config.dbscan_eps == 0.1
        assert config.dbscan_min_points == 20
        assert config.split_fraction == 0.8
        assert config.bbox_area_max == 0.95
        assert config.background_names == (
            "wall", "floor", "ground", "roof", "ceiling",
        )
        assert config.scheme == 4

    def test_crop_ratios_must_match_levels(self):
        with pytest.raises(ValueError):
            FusionConfig(crop_levels=2, crop_ratios=(1.0,))

    def test_dict_round_trip(self):
        config = FusionConfig(stride=3, scheme=2, crop_levels=1, crop_ratios=(1.0,))
        assert FusionConfig.from_dict(config.to_dict()) == config


class TestScenePointCloud:
    def test_issue_id_monotone(self):
        scene = ScenePointCloud(0.02)
        assert [scene.issue_id() for _ in range(3)] == [1, 2, 3]

    def test_append_respects_occupancy(self):
        scene = ScenePointCloud(0.1)
        first = scene.append_points(np.array([[0.0, 0.0, 0.0]]), 1)
        # same voxel: dropped; neighboring voxel: kept
        second = scene.append_points(
            np.array([[0.01, 0.02, 0.03], [0.25, 0.0, 0.0]]), 2
        )
        assert list(first) == [0]
        assert list(second) == [1]
        assert len(scene) == 2
        assert scene.unique_ids() == {1, 2}
        scene.verify_index()

    def test_append_dedups_within_batch(self):
        scene = ScenePointCloud(0.1)
        inserted = scene.append_points(
            np.array([[0.0, 0.0, 0.0], [0.001, 0.0, 0.0], [0.5, 0.0, 0.0]]), 1
        )
        assert list(inserted) == [0, 2]

    def test_dedup_off_appends_everything(self):
        scene = ScenePointCloud(0.1)
        scene.append_points(np.zeros((1, 3)), 1)
        inserted = scene.append_points(np.zeros((4, 3)), 1, dedup=False)
        assert inserted.size == 4
        assert len(scene) == 5
        scene.verify_index()

    def test_ids_advance_next_global_id(self):
        scene = ScenePointCloud(0.1)
        scene.append_points(np.array([[1.0, 1.0, 1.0]]), 7)
        assert scene.next_global_id == 8

    def test_all_ids_below_next(self):
        scene = ScenePointCloud(0.1)
        scene.append_points(np.random.default_rng(0).normal(size=(20, 3)), 3)
        assert all(gid < scene.next_global_id for gid in scene.unique_ids())

    def test_rejects_nonpositive_ids(self):
        scene = ScenePointCloud(0.1)
        with pytest.raises(ValueError):
            scene.append_points(np.zeros((1, 3)), 0)

    def test_readonly_views(self):
        scene = ScenePointCloud(0.1)
        scene.append_points(np.zeros((1, 3)), 1)
        with pytest.raises(ValueError):
            scene.positions[0, 0] = 9.0


class TestGlobalIDTable:
    def test_duplicate_observation_rejected(self):
        table = GlobalIDTable()
        table.add(1, 0, 1)
        with pytest.raises(IntegrityError):
            table.add(2, 0, 1)

    def test_observation_order_preserved(self):
        table = GlobalIDTable()
        table.add(5, 3, 1)
        table.add(5, 1, 2)
        assert table.observations(5) == ((3, 1), (1, 2))
        assert table.total_observations() == 2
        assert table.ids() == {5}

    def test_disjointness_across_entries(self):
        table = GlobalIDTable()
        table.add(1, 0, 1)
        table.add(2, 0, 2)
        table.add(1, 1, 1)
        sets = [set(table.observations(g)) for g in table.ids()]
        assert sets[0].isdisjoint(sets[1])


class TestMapInstance:
    def _make(self, points: np.ndarray, centroid=None) -> MapInstance:
        pts64 = np.asarray(points, dtype=np.float64)
        return MapInstance(
            global_id=1,
            points=points,
            name="thing",
            caption="a thing",
            embedding=np.ones(4, dtype=np.float32),
            bbox_min=pts64.min(axis=0),
            bbox_max=pts64.max(axis=0),
            centroid=pts64.mean(axis=0) if centroid is None else centroid,
            observations=(),
        )

    def test_rejects_empty_points(self):
        with pytest.raises(ValueError):
            self._make(np.empty((0, 3), dtype=np.float32))

    def test_rejects_centroid_outside_bbox(self):
        points = np.zeros((3, 3), dtype=np.float32)
        points[1] = (1, 1, 1)
        with pytest.raises(ValueError, match="centroid"):
            self._make(points, centroid=np.array([5.0, 0.0, 0.0]))

    def test_points_stored_float32(self):
        inst = self._make(np.array([[0.1, 0.2, 0.3]], dtype=np.float64))
        assert inst.points.dtype == np.float32


class TestVoxelKeys:
    def test_floor_semantics(self):
        keys = voxel_grid_keys(np.array([[0.05, -0.05, 0.0]]), 0.1)
        assert keys.tolist() == [[0, -1, 0]]

    def test_pack_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            pack_voxel_keys(np.array([[1 << 20, 0, 0]]))

    @given(
        hnp.arrays(
            np.int64,
            st.tuples(st.integers(1, 30), st.just(3)),
            elements=st.integers(-(1 << 20) + 1, (1 << 20) - 1),
        )
    )
    def test_pack_is_injective(self, keys3):
        packed = pack_voxel_keys(keys3)
        tuples = {tuple(row) for row in keys3.tolist()}
        assert len(set(packed.tolist())) == len(tuples)

    @given(st.integers(-1000, 1000), st.integers(-1000, 1000), st.integers(-1000, 1000))
    def test_pack_round_trips_single_key(self, x, y, z):
        packed = int(pack_voxel_keys(np.array([[x, y, z]]))[0])
        half = 1 << 20
        zz = (packed & (half * 2 - 1)) - half
        yy = ((packed >> 21) & (half * 2 - 1)) - half
        xx = (packed >> 42) - half
        assert (xx, yy, zz) == (x, y, z)
