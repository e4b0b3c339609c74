import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pointssl.augment import (
    AugmentationPipeline,
    BoxBlur,
    ChannelScaleJitter,
    FeatureNoise,
    FlipHorizontal,
    FlipVertical,
    GeometricRecord,
    strong_labeled_pipeline,
    strong_unlabeled_pipeline,
    transfer_points,
    weak_pipeline,
)
from pointssl.errors import ContractError


def grid(h=6, w=8, d=3, seed=0):
    return np.random.default_rng(seed).normal(size=(h, w, d)).astype(np.float32)


class TestApply:
    def test_returns_copy_and_never_mutates_input(self):
        features = grid()
        before = features.copy()
        pipeline = strong_unlabeled_pipeline()
        out, _ = pipeline.apply(features, np.random.default_rng(3))
        np.testing.assert_array_equal(features, before)
        assert out is not features

    def test_output_dtype_and_shape(self):
        out, _ = strong_labeled_pipeline().apply(grid(), np.random.default_rng(0))
        assert out.dtype == np.float32
        assert out.shape == (6, 8, 3)

    def test_certain_hflip_mirrors_columns(self):
        features = grid()
        pipeline = AugmentationPipeline("t", (FlipHorizontal(probability=1.0),))
        out, record = pipeline.apply(features, np.random.default_rng(0))
        np.testing.assert_array_equal(out, features[:, ::-1, :])
        assert record.hflip and not record.vflip

    def test_certain_vflip_mirrors_rows(self):
        features = grid()
        pipeline = AugmentationPipeline("t", (FlipVertical(probability=1.0),))
        out, record = pipeline.apply(features, np.random.default_rng(0))
        np.testing.assert_array_equal(out, features[::-1, :, :])
        assert record.vflip and not record.hflip

    def test_zero_probability_flip_is_identity(self):
        features = grid()
        pipeline = AugmentationPipeline(
            "t", (FlipHorizontal(probability=0.0), FlipVertical(probability=0.0))
        )
        out, record = pipeline.apply(features, np.random.default_rng(0))
        np.testing.assert_array_equal(out, features)
        assert record == GeometricRecord(grid_height=6, grid_width=8)

    def test_double_hflip_cancels_in_record(self):
        pipeline = AugmentationPipeline(
            "t", (FlipHorizontal(probability=1.0), FlipHorizontal(probability=1.0))
        )
        out, record = pipeline.apply(grid(), np.random.default_rng(0))
        assert not record.hflip
        np.testing.assert_array_equal(out, grid())

    def test_same_rng_state_replays_identically(self):
        features = grid()
        pipeline = strong_unlabeled_pipeline()
        a, rec_a = pipeline.apply(features, np.random.default_rng(42))
        b, rec_b = pipeline.apply(features, np.random.default_rng(42))
        np.testing.assert_array_equal(a, b)
        assert rec_a == rec_b

    def test_photometric_ops_leave_record_clean(self):
        pipeline = AugmentationPipeline(
            "t", (FeatureNoise(0.2), ChannelScaleJitter(0.3), BoxBlur(3, probability=1.0))
        )
        _, record = pipeline.apply(grid(), np.random.default_rng(1))
        assert not record.hflip and not record.vflip

    def test_channel_jitter_bounded(self):
        features = np.ones((4, 4, 5), dtype=np.float32)
        pipeline = AugmentationPipeline("t", (ChannelScaleJitter(max_delta=0.2),))
        out, _ = pipeline.apply(features, np.random.default_rng(0))
        assert np.all(out >= 0.8 - 1e-6) and np.all(out <= 1.2 + 1e-6)
        # one factor per channel, constant across the grid
        assert np.unique(out.reshape(-1, 5), axis=0).shape[0] == 1

    def test_blur_preserves_constant_fields(self):
        features = np.full((5, 5, 2), 3.25, dtype=np.float32)
        pipeline = AugmentationPipeline("t", (BoxBlur(size=3, probability=1.0),))
        out, _ = pipeline.apply(features, np.random.default_rng(0))
        np.testing.assert_allclose(out, 3.25, rtol=1e-6)

    def test_noise_changes_values(self):
        features = grid()
        pipeline = AugmentationPipeline("t", (FeatureNoise(sigma=0.5),))
        out, _ = pipeline.apply(features, np.random.default_rng(0))
        assert not np.array_equal(out, features)

    def test_bad_rank_rejected(self):
        with pytest.raises(ContractError):
            weak_pipeline().apply(np.zeros((4, 4), dtype=np.float32), np.random.default_rng(0))


class TestTransferPoints:
    def test_hflip_maps_x(self):
        record = GeometricRecord(grid_height=10, grid_width=8, hflip=True)
        out = transfer_points(np.array([[0.0, 2.0], [7.0, 3.0]]), record)
        np.testing.assert_array_equal(out, [[7.0, 2.0], [0.0, 3.0]])

    def test_vflip_maps_y(self):
        record = GeometricRecord(grid_height=10, grid_width=8, vflip=True)
        out = transfer_points(np.array([[1.0, 0.0], [2.0, 9.0]]), record)
        np.testing.assert_array_equal(out, [[1.0, 9.0], [2.0, 0.0]])

    def test_identity_record_is_identity(self):
        record = GeometricRecord(grid_height=10, grid_width=8)
        pts = np.array([[1.5, 2.5]])
        np.testing.assert_array_equal(transfer_points(pts, record), pts)

    # coordinates are fractional pixel indices (multiples of 2**-10
    # spanning the grid, endpoints included); exactness cannot hold for
    # magnitudes below the ulp of W-1, e.g. y=1.2e-38 has 23-y == 23.0
    @given(
        st.lists(
            st.tuples(st.integers(0, 31 * 1024), st.integers(0, 23 * 1024)),
            min_size=1,
            max_size=8,
        ),
        st.booleans(),
        st.booleans(),
    )
    @settings(max_examples=60)
    def test_involution_on_pixel_index_coords(self, coords, hflip, vflip):
        record = GeometricRecord(grid_height=24, grid_width=32, hflip=hflip, vflip=vflip)
        pts = np.array(coords, dtype=np.float64).reshape(-1, 2) / 1024.0
        round_trip = transfer_points(transfer_points(pts, record), record)
        np.testing.assert_array_equal(round_trip, pts)

    def test_empty_points_pass_through(self):
        record = GeometricRecord(grid_height=4, grid_width=4, hflip=True)
        out = transfer_points(np.zeros((0, 2)), record)
        assert out.shape == (0, 2)

    def test_bad_shape_rejected(self):
        record = GeometricRecord(grid_height=4, grid_width=4)
        with pytest.raises(ContractError):
            transfer_points(np.zeros((3, 3)), record)

    def test_flip_consistent_with_feature_mirror(self):
        # moving a bright pixel through the flip lands where the mirrored
        # feature grid puts it
        features = np.zeros((5, 7, 1), dtype=np.float32)
        features[2, 1, 0] = 1.0
        pipeline = AugmentationPipeline("t", (FlipHorizontal(probability=1.0),))
        out, record = pipeline.apply(features, np.random.default_rng(0))
        (mapped,) = transfer_points(np.array([[1.0, 2.0]]), record)
        x, y = int(mapped[0]), int(mapped[1])
        assert out[y, x, 0] == 1.0


class TestPipelines:
    def test_weak_is_flip_only(self):
        ops = weak_pipeline().ops
        assert len(ops) == 1 and isinstance(ops[0], FlipHorizontal)

    def test_strong_variants_extend_weak(self):
        labeled_kinds = [type(op) for op in strong_labeled_pipeline().ops]
        unlabeled_kinds = [type(op) for op in strong_unlabeled_pipeline().ops]
        assert labeled_kinds[0] is FlipHorizontal
        assert FeatureNoise in labeled_kinds
        assert BoxBlur in unlabeled_kinds and BoxBlur not in labeled_kinds

    def test_kind_tags(self):
        assert weak_pipeline().kind == "weak"
        assert strong_labeled_pipeline().kind == "strong_labeled"
        assert strong_unlabeled_pipeline().kind == "strong_unlabeled"
