import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from stflow import optim as op
from stflow.correlation import warp
from stflow.errors import BadExponent, DimensionMismatch, NonFinite

# 10 ** -1.2, i.e. (1e-3) ** 0.4
PSI_ZERO = 0.06309573444801932


class TestSparseLp:
    def test_golden_zero(self):
        assert op.sparse_lp(0.0) == pytest.approx(PSI_ZERO, rel=1e-14)

    @pytest.mark.parametrize("p", [0.2, 0.4, 1.0])
    def test_unit_input(self, p):
        assert op.sparse_lp(1.0, p, 1e-9) == pytest.approx(1.0, abs=1e-12)

    @given(st.floats(-1e3, 1e3, allow_nan=False), st.floats(0.05, 1.0))
    def test_even_and_non_negative(self, x, p):
        assert op.sparse_lp(-x, p) == op.sparse_lp(x, p)
        assert op.sparse_lp(x, p) > 0

    @given(st.floats(0, 100, allow_nan=False), st.floats(0, 100, allow_nan=False))
    def test_monotone_in_magnitude(self, a, b):
        lo, hi = sorted((a, b))
        assert op.sparse_lp(lo) <= op.sparse_lp(hi)

    def test_derivative(self, rng):
        x = rng.normal(size=50)
        h = 1e-6
        num = (op.sparse_lp(x + h) - op.sparse_lp(x - h)) / (2 * h)
        assert_allclose(op.sparse_lp_grad(x), num, rtol=1e-6)
        assert op.sparse_lp_grad(0.0) == 0.0

    @pytest.mark.parametrize("p, eps", [(0.0, 1e-3), (1.5, 1e-3), (0.4, 0.0)])
    def test_bad_exponent(self, p, eps):
        with pytest.raises(BadExponent):
            op.sparse_lp(0.3, p, eps)


class TestPhotometricLoss:
    def test_zero_residual_baseline(self, rng):
        img = rng.random((12, 9))
        assert op.photometric_loss(img, img, np.zeros((12, 9, 2))) == pytest.approx(12 * 9 * PSI_ZERO)

    def test_gt_term_vanishes_at_gt(self, rng):
        i0, i1 = rng.random((8, 8)), rng.random((8, 8))
        flow = rng.normal(size=(8, 8, 2))
        assert op.photometric_loss(i0, i1, flow, gt=flow) == op.photometric_loss(i0, i1, flow)

    def test_gt_term_is_mean_l1(self, rng):
        i0, i1 = rng.random((8, 8)), rng.random((8, 8))
        flow = np.zeros((8, 8, 2))
        gt = np.tile([0.5, -0.25], (8, 8, 1))
        assert op.photometric_loss(i0, i1, flow, gt=gt) == pytest.approx(op.photometric_loss(i0, i1, flow) + 0.75)

    def test_masked_oracle(self, rng):
        i0, i1 = rng.random((10, 11)), rng.random((10, 11))
        flow = rng.uniform(-3, 3, (10, 11, 2))
        warped = warp(i1, flow)
        total = 0.0
        for y in range(10):
            for x in range(11):
                sx, sy = x + flow[y, x, 0], y + flow[y, x, 1]
                if 0 <= sx <= 10 and 0 <= sy <= 9:
                    total += ((i0[y, x] - warped[y, x]) ** 2 + 1e-6) ** 0.2
        assert op.photometric_loss(i0, i1, flow) == pytest.approx(total, rel=1e-12)

    def test_mismatch(self):
        with pytest.raises(DimensionMismatch):
            op.photometric_loss(np.zeros((4, 4)), np.zeros((4, 5)), np.zeros((4, 4, 2)))
        with pytest.raises(DimensionMismatch):
            op.photometric_loss(np.zeros((4, 4)), np.zeros((4, 4)), np.zeros((4, 4, 2)), gt=np.zeros((3, 4, 2)))


class TestPhotometricGrad:
    def test_zero_residual(self, rng):
        img = rng.random((9, 9))
        assert_array_equal(op.photometric_grad(img, img, np.zeros((9, 9, 2))), 0)

    def test_single_pixel_locality(self, rng):
        i1 = rng.random((10, 10))
        flow = np.full((10, 10, 2), 0.4)
        i0 = op._warp_with_grad(i1, flow).value.copy()
        i0[4, 6] += 0.3
        g = op.photometric_grad(i0, i1, flow)
        nz = np.argwhere(np.abs(g).sum(axis=-1) > 0)
        assert_array_equal(nz, [[4, 6]])

    @pytest.mark.parametrize("seed", range(5))
    def test_finite_differences(self, seed):
        assert op.gradcheck(*op.gradcheck_instance(seed, 24)) < 1e-4

    def test_instance_properties(self):
        i0, i1, flow = op.gradcheck_instance(3, 32)
        frac = flow - np.floor(flow)
        assert frac.min() >= 0.05 and frac.max() <= 0.95
        assert i1.max() <= 0.4 + 1e-12 and i0.min() >= 0.6

    def test_direction_reduces_loss(self, rng):
        i0, i1, flow = op.gradcheck_instance(1, 24)
        g = op.photometric_grad(i0, i1, flow)
        assert op.photometric_loss(i0, i1, flow - 1e-4 * g) < op.photometric_loss(i0, i1, flow)


class TestTotalLoss:
    def test_zero(self):
        assert op.total_loss([0.0] * 6).total == 0.0

    def test_weight_zeroing(self):
        assert op.total_loss([1, 5, 5, 5, 5, 5], (0, 0, 0, 0, 0)).total == 1.0

    def test_arithmetic_example(self):
        r = op.total_loss([1] * 6, (0.1, 0.1, 1, 1, 0.5))
        assert r.total == pytest.approx(3.7, abs=1e-12)

    def test_mapping_input(self):
        parts = dict(zip(op.PARTS, [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]))
        assert op.total_loss(parts).total == op.total_loss(list(parts.values())).total

    @given(st.integers(0, 5), st.floats(-50, 50, allow_nan=False), st.floats(-50, 50, allow_nan=False))
    def test_linear_in_each_part(self, i, a, b):
        lambdas = (0.1, 0.2, 0.3, 0.4, 0.5)
        coef = 1.0 if i == 0 else lambdas[i - 1]
        base = [1.0] * 6
        pa, pb = list(base), list(base)
        pa[i], pb[i] = a, b
        diff = op.total_loss(pa, lambdas).total - op.total_loss(pb, lambdas).total
        assert diff == pytest.approx(coef * (a - b), abs=1e-9)

    def test_non_finite(self):
        with pytest.raises(NonFinite):
            op.total_loss([1, np.nan, 0, 0, 0, 0])
        with pytest.raises(NonFinite):
            op.total_loss([1] * 6, (np.inf, 0, 0, 0, 0))

    def test_row(self):
        row = op.total_loss([1] * 6).as_row()
        assert list(row)[:7] == [*op.PARTS, "total"] and row["lambda5"] == 0.5


class TestRefine:
    def test_zero_steps(self, rng):
        flow = rng.normal(size=(8, 8, 2))
        res = op.refine_flow(rng.random((8, 8)), rng.random((8, 8)), flow, steps=0)
        assert_array_equal(res.flow, flow)
        assert len(res.losses) == 1

    @given(st.integers(0, 10_000))
    def test_history_non_increasing(self, seed):
        rng = np.random.default_rng(seed)
        i0, i1 = rng.random((10, 10)), rng.random((10, 10))
        res = op.refine_flow(i0, i1, rng.normal(size=(10, 10, 2)), steps=5, lr=2.0)
        assert np.all(np.diff(res.losses) <= 0)
        assert len(res.losses) == res.accepted + 1

    def test_does_not_mutate_input(self, rng):
        flow = rng.normal(size=(8, 8, 2))
        keep = flow.copy()
        op.refine_flow(rng.random((8, 8)), rng.random((8, 8)), flow, steps=3)
        assert_array_equal(flow, keep)

    def test_rejects(self, rng):
        with pytest.raises(ValueError):
            op.refine_flow(np.zeros((4, 4)), np.zeros((4, 4)), np.zeros((4, 4, 2)), steps=-1)
        with pytest.raises(ValueError):
            op.refine_flow(np.zeros((4, 4)), np.zeros((4, 4)), np.zeros((4, 4, 2)), lr=0.0)
