import math

import numpy as np
import pytest

from coalshap import (
    BinaryMask,
    LabelMap,
    MetricConfig,
    dice,
    hd95,
    label_averaged_metric,
    metric_by_name,
    one_hot,
    squared_edt,
    surface,
)
from coalshap.errors import DimMismatch, SubjectSkipped
from coalshap.metrics import DICE, EmptyPolicy, HD95, Orientation
from conftest import (
    brute_force_hd95,
    brute_force_sq_edt,
    brute_force_surface,
    random_mask,
)


def mask(bits, spacing=(1.0, 1.0, 1.0)):
    return BinaryMask(bits=np.asarray(bits, dtype=bool), spacing=spacing)


def single_voxel(dims, at, spacing=(1.0, 1.0, 1.0)):
    bits = np.zeros(dims, dtype=bool)
    bits[at] = True
    return mask(bits, spacing)


class TestDice:
    def test_identical_nonempty(self, rng):
        m = random_mask(rng, (4, 4, 4), density=0.5)
        assert dice(m, m) == 1.0

    def test_disjoint(self):
        a = single_voxel((2, 2, 2), (0, 0, 0))
        b = single_voxel((2, 2, 2), (1, 1, 1))
        assert dice(a, b) == 0.0

    def test_half_overlap(self):
        # |P| = |G| = 4 with two shared voxels on a 4x4x1 grid
        p = np.zeros((4, 4, 1), bool)
        g = np.zeros((4, 4, 1), bool)
        p[0, 0:4, 0] = True
        g[0, 2:4, 0] = g[1, 0:2, 0] = True
        assert dice(mask(p), mask(g)) == 0.5

    def test_symmetry_and_range(self, rng):
        for _ in range(10):
            a = random_mask(rng, (5, 5, 5), density=0.3)
            b = random_mask(rng, (5, 5, 5), density=0.3)
            d = dice(a, b)
            assert 0.0 <= d <= 1.0
            assert d == dice(b, a)

    def test_permutation_invariance(self, rng):
        a = random_mask(rng, (4, 4, 4), density=0.4)
        b = random_mask(rng, (4, 4, 4), density=0.4)
        perm = rng.permutation(64)
        ap = mask(a.bits.reshape(-1)[perm].reshape(4, 4, 4))
        bp = mask(b.bits.reshape(-1)[perm].reshape(4, 4, 4))
        assert dice(a, b) == pytest.approx(dice(ap, bp), abs=0)

    def test_both_empty_uses_config(self):
        e = mask(np.zeros((2, 2, 2), bool))
        assert dice(e, e) == 1.0
        assert dice(e, e, MetricConfig(empty_pair_dice=0.0)) == 0.0

    def test_dim_mismatch(self):
        with pytest.raises(DimMismatch):
            dice(mask(np.zeros((2, 2, 2), bool)), mask(np.zeros((3, 2, 2), bool)))


class TestSquaredEdt:
    def test_single_seed_axis_distance(self):
        m = single_voxel((1, 1, 4), (0, 0, 0))
        d2 = squared_edt(m)
        assert d2[0, 0, 3] == 9.0

    def test_anisotropic(self):
        m = single_voxel((1, 1, 2), (0, 0, 0), spacing=(1.0, 1.0, 2.0))
        assert squared_edt(m)[0, 0, 1] == 4.0

    def test_empty_mask_all_inf(self):
        d2 = squared_edt(mask(np.zeros((2, 3, 2), bool)))
        assert np.all(np.isinf(d2))

    @pytest.mark.parametrize("spacing", [(1.0, 1.0, 1.0), (1.0, 1.5, 2.0)])
    def test_matches_brute_force(self, rng, spacing):
        for _ in range(8):
            dims = tuple(rng.integers(1, 13, 3))
            m = random_mask(rng, dims, density=0.15, spacing=spacing)
            if not m.bits.any():
                continue
            got = squared_edt(m)
            want = brute_force_sq_edt(m.bits, spacing)
            if spacing == (1.0, 1.0, 1.0):
                assert np.array_equal(got, want)  # exact in integer arithmetic
            else:
                assert np.allclose(got, want, atol=1e-9)


class TestSurface:
    def test_solid_cube(self):
        bits = np.zeros((5, 5, 5), bool)
        bits[1:4, 1:4, 1:4] = True
        s = surface(mask(bits))
        assert int(s.bits.sum()) == 26
        assert not s.bits[2, 2, 2]

    def test_single_voxel_is_its_own_surface(self):
        m = single_voxel((3, 3, 3), (1, 1, 1))
        assert np.array_equal(surface(m).bits, m.bits)

    def test_matches_brute_force(self, rng):
        for _ in range(6):
            m = random_mask(rng, (6, 6, 6), density=0.4)
            got = surface(m).bits
            assert np.array_equal(got, brute_force_surface(m.bits))
            assert np.all(m.bits[got])  # surface subset of mask


class TestHd95:
    def test_identical(self, rng):
        m = random_mask(rng, (5, 5, 5), density=0.3)
        assert hd95(m, m) == 0.0

    def test_two_lone_voxels(self):
        a = single_voxel((1, 1, 8), (0, 0, 0))
        b = single_voxel((1, 1, 8), (0, 0, 5))
        assert hd95(a, b) == 5.0

    def test_both_empty(self):
        e = mask(np.zeros((3, 3, 3), bool))
        assert hd95(e, e) == 0.0

    def test_one_empty_penalty_default_diagonal(self):
        e = mask(np.zeros((3, 4, 5), bool))
        m = single_voxel((3, 4, 5), (0, 0, 0))
        assert hd95(e, m) == pytest.approx(math.sqrt(9 + 16 + 25))

    def test_one_empty_explicit_penalty(self):
        e = mask(np.zeros((2, 2, 2), bool))
        m = single_voxel((2, 2, 2), (0, 0, 0))
        assert hd95(e, m, MetricConfig(hd95_penalty_mm=42.0)) == 42.0

    def test_one_empty_skip_policy(self):
        e = mask(np.zeros((2, 2, 2), bool))
        m = single_voxel((2, 2, 2), (0, 0, 0))
        with pytest.raises(SubjectSkipped):
            hd95(e, m, MetricConfig(hd95_empty_policy=EmptyPolicy.SKIP_SUBJECT))

    @pytest.mark.parametrize("spacing", [(1.0, 1.0, 1.0), (0.7, 1.3, 2.1)])
    def test_matches_brute_force(self, rng, spacing):
        for _ in range(8):
            dims = tuple(rng.integers(2, 9, 3))
            a = random_mask(rng, dims, density=0.25, spacing=spacing)
            b = random_mask(rng, dims, density=0.25, spacing=spacing)
            assert hd95(a, b) == pytest.approx(
                brute_force_hd95(a.bits, b.bits, spacing), abs=1e-9
            )

    def test_symmetry(self, rng):
        a = random_mask(rng, (6, 6, 6), density=0.3)
        b = random_mask(rng, (6, 6, 6), density=0.3)
        assert hd95(a, b) == hd95(b, a)

    def test_spacing_linearity(self, rng):
        bits_a = rng.random((5, 5, 5)) < 0.3
        bits_b = rng.random((5, 5, 5)) < 0.3
        base = hd95(mask(bits_a), mask(bits_b))
        scaled = hd95(
            mask(bits_a, spacing=(3, 3, 3)), mask(bits_b, spacing=(3, 3, 3))
        )
        assert scaled == pytest.approx(3 * base, rel=1e-12)

    def test_hd95_le_exact_hausdorff(self, rng):
        for _ in range(5):
            a = random_mask(rng, (6, 6, 6), density=0.3)
            b = random_mask(rng, (6, 6, 6), density=0.3)
            if not (a.bits.any() and b.bits.any()):
                continue
            sa, sb = surface(a), surface(b)
            exact = max(
                float(np.sqrt(squared_edt(sb)[sa.bits]).max()),
                float(np.sqrt(squared_edt(sa)[sb.bits]).max()),
            )
            assert hd95(a, b) <= exact + 1e-12

    def test_spacing_mismatch(self):
        a = single_voxel((2, 2, 2), (0, 0, 0))
        b = single_voxel((2, 2, 2), (0, 0, 0), spacing=(2, 2, 2))
        with pytest.raises(DimMismatch):
            hd95(a, b)


class TestLabelAveraged:
    def _lm(self, labels, label_set=(1, 2, 3)):
        return LabelMap(
            labels=np.asarray(labels, dtype=np.uint8),
            spacing=(1, 1, 1),
            label_set=label_set,
        )

    def test_perfect(self):
        lm = self._lm(np.ones((3, 3, 3)))
        lm = self._lm(np.random.default_rng(0).integers(0, 4, (4, 4, 4)))
        assert label_averaged_metric(DICE, lm, lm) == 1.0

    def test_mean_formula(self, rng):
        # build prediction/gt pairs whose per-label Dice values are known
        gt = self._lm(rng.integers(0, 4, (6, 6, 6)))
        pred = self._lm(rng.integers(0, 4, (6, 6, 6)))
        per_label = [
            dice(one_hot(pred, l), one_hot(gt, l)) for l in gt.label_set
        ]
        assert label_averaged_metric(DICE, pred, gt) == pytest.approx(
            float(np.mean(per_label)), abs=1e-15
        )

    def test_simple_mean(self):
        vals = (0.2, 0.4, 0.6)
        assert float(np.mean(vals)) == pytest.approx(0.4)

    def test_compositional_hd95(self, rng):
        gt = self._lm(rng.integers(0, 4, (5, 5, 5)))
        pred = self._lm(rng.integers(0, 4, (5, 5, 5)))
        per_label = [
            hd95(one_hot(pred, l), one_hot(gt, l)) for l in gt.label_set
        ]
        assert label_averaged_metric(HD95, pred, gt) == pytest.approx(
            float(np.mean(per_label))
        )

    def test_label_set_mismatch(self):
        a = self._lm(np.zeros((2, 2, 2)), label_set=(1,))
        b = self._lm(np.zeros((2, 2, 2)), label_set=(1, 2))
        with pytest.raises(DimMismatch):
            label_averaged_metric(DICE, a, b)


def test_metric_orientations():
    assert metric_by_name("dice").orientation is Orientation.HIGHER_BETTER
    assert metric_by_name("hd95").orientation is Orientation.LOWER_BETTER
