"""
Unit tests for the sampling-based volumetric augmentation.
"""
import numpy as np
import pytest

from aggregate_decouple.core.enums import AugName, OpKind
from aggregate_decouple.core.exceptions import ShapeMismatchError, ValidationError
from aggregate_decouple.core.models import LabelMap, Volume
from aggregate_decouple.core.svda import (
    OPERATIONS, AugmentationOp, apply, augment, random_crop, rotation_matrix, sample_ops
)


def _rotation(d: float = 0.0, h: float = 0.0, w: float = 0.0) -> AugmentationOp:
    return OPERATIONS[AugName.RANDOM_ROTATION].with_ranges(
        about_d=(d, d), about_h=(h, h), about_w=(w, w))


class TestOperationTable:
    """The seven operations and their ranges."""

    def test_seven_operations(self):
        assert len(OPERATIONS) == 7
        spatial = {name for name, op in OPERATIONS.items() if op.kind == OpKind.SPATIAL}
        assert spatial == {AugName.RANDOM_CROP, AugName.RANDOM_ROTATION, AugName.RANDOM_SCALING}

    def test_inverted_range_rejected(self):
        with pytest.raises(ValidationError):
            AugmentationOp(AugName.GAMMA, OpKind.VOXEL, {"gamma": (1.5, 0.7)})

    def test_unknown_range_override(self):
        with pytest.raises(ValidationError):
            OPERATIONS[AugName.GAMMA].with_ranges(sigma=(1.0, 1.0))


class TestSampleOps:
    """sample_ops."""

    @pytest.mark.parametrize("n_aug", [1, 3, 7])
    def test_distinct_ops(self, n_aug):
        ops = sample_ops(n_aug, np.random.default_rng(0))
        assert len(ops) == n_aug
        assert len({op.name for op in ops}) == n_aug

    def test_same_seed_same_ops(self):
        a = sample_ops(3, np.random.default_rng(11))
        b = sample_ops(3, np.random.default_rng(11))
        assert [op.name for op in a] == [op.name for op in b]

    @pytest.mark.parametrize("n_aug", [0, 8])
    def test_out_of_range(self, n_aug):
        with pytest.raises(ValidationError):
            sample_ops(n_aug, np.random.default_rng(0))

    def test_uniform_over_operations(self):
        rng = np.random.default_rng(5)
        counts = {name: 0 for name in OPERATIONS}
        for _ in range(700):
            counts[sample_ops(1, rng)[0].name] += 1
        assert min(counts.values()) > 60


class TestApply:
    """apply on known geometries."""

    def test_brightness_adds_shift(self, cube_pair):
        v, y = cube_pair
        pair = apply(v, y, [OPERATIONS[AugName.BRIGHTNESS]], np.random.default_rng(1))
        name, params = pair.applied[0]
        assert name == "brightness"
        np.testing.assert_allclose(pair.volume.data, np.asarray(v.data, dtype=np.float64)
                                   + params["shift"], atol=1e-6)
        np.testing.assert_array_equal(pair.label.data, y.data)

    def test_voxel_ops_leave_label(self, cube_pair):
        v, y = cube_pair
        ops = [OPERATIONS[n] for n in (AugName.GAUSSIAN_BLUR, AugName.CONTRAST, AugName.GAMMA)]
        pair = apply(v, y, ops, np.random.default_rng(2))
        np.testing.assert_array_equal(pair.label.data, y.data)
        assert not np.allclose(pair.volume.data, v.data)

    def test_zero_rotation_is_identity(self, cube_pair):
        v, y = cube_pair
        pair = apply(v, y, [_rotation()], np.random.default_rng(3))
        np.testing.assert_allclose(pair.volume.data, v.data, atol=1e-6)
        np.testing.assert_array_equal(pair.label.data, y.data)

    def test_quarter_turn_about_depth(self, rng):
        mask = np.zeros((4, 4, 4), dtype=np.int64)
        mask[0, 0, 1] = 1
        mask[1, 2, 0:3] = 1
        mask[3, 1, 3] = 1
        y = LabelMap(mask, num_classes=2)
        v = Volume(rng.standard_normal((4, 4, 4)))
        pair = apply(v, y, [_rotation(d=90.0)], np.random.default_rng(0))

        expected = np.zeros_like(mask)
        n = mask.shape[2]
        for d in range(4):
            for h in range(4):
                for w in range(4):
                    expected[d, h, w] = mask[d, n - 1 - w, h]
        np.testing.assert_array_equal(pair.label.data, expected)

    def test_rotation_matrix_is_orthonormal(self):
        m = rotation_matrix(12.0, -7.0, 25.0)
        np.testing.assert_allclose(m @ m.T, np.eye(3), atol=1e-12)
        assert np.linalg.det(m) == pytest.approx(1.0)

    def test_unit_scaling_is_identity(self, cube_pair):
        v, y = cube_pair
        op = OPERATIONS[AugName.RANDOM_SCALING].with_ranges(factor=(1.0, 1.0))
        pair = apply(v, y, [op], np.random.default_rng(0))
        np.testing.assert_array_equal(pair.label.data, y.data)

    def test_unlabeled_volume(self, cube_pair):
        v, _ = cube_pair
        pair = apply(v, None, [_rotation(d=10.0)], np.random.default_rng(0))
        assert pair.label is None
        assert pair.volume.shape == v.shape

    def test_shape_mismatch(self):
        v = Volume(np.zeros((4, 4, 4)))
        y = LabelMap(np.zeros((4, 4, 5)), num_classes=2)
        with pytest.raises(ShapeMismatchError):
            apply(v, y, [OPERATIONS[AugName.BRIGHTNESS]], np.random.default_rng(0))


class TestCrop:
    """random_crop and the final patch crop."""

    def test_crop_stays_aligned(self, cube_pair):
        v, y = cube_pair
        cv, cy, params = random_crop(v, y, (16, 16, 16), np.random.default_rng(4))
        assert cv.shape == cy.shape == (16, 16, 16)
        d, h, w = params["offset"]
        np.testing.assert_array_equal(cy.data, y.data[d:d + 16, h:h + 16, w:w + 16])

    def test_small_volume_is_padded(self, rng):
        v = Volume(rng.standard_normal((10, 20, 20)))
        y = LabelMap(np.zeros((10, 20, 20)), num_classes=2)
        pair = augment(v, y, 3, np.random.default_rng(0), (16, 16, 16), enabled=False)
        assert pair.volume.shape == (16, 16, 16)
        assert pair.label.shape == (16, 16, 16)
        assert pair.applied == ()

    def test_augment_reaches_patch_size(self, cube_pair):
        v, y = cube_pair
        for seed in range(5):
            pair = augment(v, y, 3, np.random.default_rng(seed), (16, 16, 16))
            assert pair.volume.shape == (16, 16, 16)
            assert len(pair.applied) == 3
            assert set(np.unique(pair.label.data)) <= {0, 1}

    def test_augment_is_deterministic(self, cube_pair):
        v, y = cube_pair
        a = augment(v, y, 3, np.random.default_rng(9), (16, 16, 16))
        b = augment(v, y, 3, np.random.default_rng(9), (16, 16, 16))
        np.testing.assert_array_equal(a.volume.data, b.volume.data)
        np.testing.assert_array_equal(a.label.data, b.label.data)
