import colorsys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from stflow.errors import DimensionMismatch, EmptyMask, LengthMismatch
from stflow.evaluation import compose, epe, f1_all, flow_to_color, hsv_to_rgb, metrics, tepe


def hue_of(rgb):
    return colorsys.rgb_to_hsv(*(np.asarray(rgb, dtype=float) / 255.0))[0]


class TestEpe:
    def test_identity_and_offset(self, rng):
        F = rng.normal(size=(6, 7, 2))
        assert epe(F, F) == 0.0
        assert epe(F + [3.0, 4.0], F) == pytest.approx(5.0, abs=1e-12)

    def test_masked_oracle(self, rng):
        a, b = rng.normal(size=(5, 5, 2)), rng.normal(size=(5, 5, 2))
        mask = rng.random((5, 5)) > 0.4
        vals = [np.hypot(*(a[y, x] - b[y, x])) for y in range(5) for x in range(5) if mask[y, x]]
        assert epe(a, b, mask) == pytest.approx(np.mean(vals), rel=1e-12)

    def test_errors(self):
        with pytest.raises(DimensionMismatch):
            epe(np.zeros((3, 3, 2)), np.zeros((3, 4, 2)))
        with pytest.raises(EmptyMask):
            epe(np.zeros((3, 3, 2)), np.zeros((3, 3, 2)), np.zeros((3, 3), bool))


class TestF1:
    def test_examples(self):
        gt = np.tile([1.0, 0.0], (4, 4, 1))
        assert f1_all(gt, gt) == 0.0
        assert f1_all(gt + [10.0, 0.0], gt) == 100.0

    def test_large_flow_needs_relative_error(self):
        gt = np.tile([100.0, 0.0], (2, 2, 1))
        # 4 px exceeds 3 px but not 5% of 100 px
        assert f1_all(gt + [4.0, 0.0], gt) == 0.0

    def test_brute_force(self, rng):
        a, b = rng.normal(scale=5, size=(9, 9, 2)), rng.normal(scale=5, size=(9, 9, 2))
        bad = sum(1 for y in range(9) for x in range(9)
                  if np.hypot(*(a[y, x] - b[y, x])) > max(3.0, 0.05 * np.hypot(*b[y, x])))
        assert f1_all(a, b) == pytest.approx(100.0 * bad / 81)

    @given(st.integers(0, 10_000), st.floats(1.0, 4.0))
    def test_monotone_in_error_magnitude(self, seed, factor):
        rng = np.random.default_rng(seed)
        gt = rng.normal(scale=10, size=(6, 6, 2))
        err = rng.normal(scale=3, size=(6, 6, 2))
        assert f1_all(gt + factor * err, gt) >= f1_all(gt + err, gt)


class TestTepe:
    def test_examples(self, rng):
        tr = [rng.normal(size=(21, 2)) for _ in range(3)]
        assert tepe(tr, tr) == 0.0
        assert tepe([t + [1.0, 0.0] for t in tr], tr) == pytest.approx(1.0)

    def test_oracle(self, rng):
        a = [rng.normal(size=(5, 2)) for _ in range(4)]
        b = [rng.normal(size=(5, 2)) for _ in range(4)]
        expected = np.mean([np.hypot(*(p - q)) for ta, tb in zip(a, b) for p, q in zip(ta, tb)])
        assert tepe(a, b) == pytest.approx(expected, rel=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            tepe([np.zeros((3, 2))], [np.zeros((4, 2))])
        with pytest.raises(LengthMismatch):
            tepe([np.zeros((3, 2))], [])


class TestCompose:
    def test_constant_sum(self):
        total = compose([np.tile([0.5, 0.0], (16, 16, 1))] * 20)
        assert_array_equal(total[1:-1, 1:-1], 10.0 * np.tile([1.0, 0.0], (14, 14, 1)))

    def test_zero_and_single(self, rng):
        assert_array_equal(compose([np.zeros((5, 5, 2))] * 4), 0)
        f = rng.normal(size=(5, 5, 2))
        assert_array_equal(compose([f]), f)

    def test_two_step_oracle(self, rng):
        a = np.tile([1.0, 0.0], (8, 8, 1))
        b = np.zeros((8, 8, 2))
        b[:, :, 1] = np.arange(8.0)[None, :]
        # the second increment is read where the first step lands
        assert_allclose(compose([a, b])[3, 2], [1.0, 3.0])

    def test_mismatch(self):
        with pytest.raises(DimensionMismatch):
            compose([])
        with pytest.raises(DimensionMismatch):
            compose([np.zeros((3, 3, 2)), np.zeros((3, 4, 2))])


class TestColor:
    def test_zero_is_white(self):
        assert_array_equal(flow_to_color(np.zeros((4, 4, 2)), 1.0), 255)

    def test_hue_zero_saturated(self):
        assert_array_equal(flow_to_color(np.array([[[2.0, 0.0]]]), 2.0)[0, 0], [255, 0, 0])

    def test_saturation_clamps(self):
        assert_array_equal(flow_to_color(np.array([[[9.0, 0.0]]]), 2.0), flow_to_color(np.array([[[2.0, 0.0]]]), 2.0))

    @given(st.floats(0, 2 * np.pi), st.floats(0, 2 * np.pi))
    def test_rotation_equivariance(self, phi, theta):
        vec = np.array([[[np.cos(phi), np.sin(phi)], [np.cos(phi + theta), np.sin(phi + theta)]]])
        rgb = flow_to_color(vec, 1.0)[0]
        delta = (hue_of(rgb[1]) - hue_of(rgb[0]) - theta / (2 * np.pi)) % 1.0
        assert min(delta, 1.0 - delta) < 0.01

    def test_hsv_matches_colorsys(self, rng):
        h, s, v = rng.random(20), rng.random(20), rng.random(20)
        expected = np.array([colorsys.hsv_to_rgb(*t) for t in zip(h, s, v)])
        assert_allclose(hsv_to_rgb(h, s, v), expected, atol=1e-12)

    def test_bad_max(self):
        with pytest.raises(ValueError):
            flow_to_color(np.zeros((2, 2, 2)), 0.0)


def test_metrics_report_csv(rng):
    F = rng.normal(size=(4, 4, 2))
    r = metrics(F, F)
    assert r.csv_line() == "0,0,,16"
    assert 0 <= metrics(F + 5, F).f1_all <= 100
