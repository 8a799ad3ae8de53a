import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from numpy.testing import assert_allclose, assert_array_equal
from scipy import ndimage

from stflow import boundary as bd
from stflow.errors import BadProbability, BadThresholds, BinMismatch, EmptyTemplate
from stflow.event_io import EventStream
from stflow.gradient import make_distribution
from stflow.synth import SceneSpec, degrade, gen_scene

probs = st.floats(0.0, 1.0, allow_nan=False)


class TestCanny:
    def test_constant(self):
        assert_array_equal(bd.canny(np.full((20, 20), 0.4)), 0)

    def test_vertical_step(self):
        img = np.zeros((24, 24))
        img[:, 12:] = 1.0
        edges = bd.canny(img)
        inner = edges[4:-4]
        cols = np.nonzero(inner.any(axis=0))[0]
        assert len(cols) == 1 and cols[0] in (11, 12)
        assert inner[:, cols[0]].all()

    def test_disk_ring(self):
        yy, xx = np.mgrid[0:64, 0:64]
        r = 16.0
        img = (np.hypot(xx - 31.5, yy - 31.5) <= r).astype(float)
        edges = bd.canny(img)
        _, n = ndimage.label(edges, structure=np.ones((3, 3)))
        assert n == 1
        # closed: the complement splits into inside and outside
        _, holes = ndimage.label(edges == 0)
        assert holes == 2
        assert abs(edges.sum() - 2 * math.pi * r) <= 0.15 * 2 * math.pi * r

    def test_thresholds(self):
        with pytest.raises(BadThresholds):
            bd.canny(np.zeros((5, 5)), lo=0.3, hi=0.2)
        with pytest.raises(BadThresholds):
            bd.canny(np.zeros((5, 5)), lo=0.0, hi=0.2)


class TestEventBoundary:
    def test_empty(self):
        assert_array_equal(bd.project_events_boundary(EventStream.empty(5, 4)), 0)

    def test_single(self):
        m = bd.project_events_boundary(EventStream(6, 6, [0.1], [3], [4], [1], 0.0, 1.0))
        assert m.sum() == 1 and m[4, 3] == 1

    def test_min_count(self):
        s = EventStream(6, 6, [0.1, 0.2, 0.3], [3, 3, 1], [4, 4, 1], [1, -1, 1], 0.0, 1.0)
        m = bd.project_events_boundary(s, n_min=2)
        assert m.sum() == 1 and m[4, 3] == 1

    def test_overlap_with_frame_edges(self):
        b = gen_scene(SceneSpec(texture="step", flow=(2.0, 0.0)))
        bf = bd.canny(b.frames[0].data)
        be = bd.project_events_boundary(b.events)
        inter = union = 0
        for y in range(bf.shape[0]):
            for x in range(bf.shape[1]):
                inter += bool(bf[y, x]) and bool(be[y, x])
                union += bool(bf[y, x]) or bool(be[y, x])
        iou = inter / union
        assert iou == pytest.approx(((bf > 0) & (be > 0)).sum() / ((bf > 0) | (be > 0)).sum())
        assert iou > 0.2


class TestPatchDistances:
    def test_identical(self, rng):
        m = rng.integers(0, 2, (16, 16))
        assert_array_equal(bd.boundary_patch_distances(m, m, 8, 4), 0)

    def test_full_vs_empty(self):
        assert_allclose(bd.boundary_patch_distances(np.ones((16, 16)), np.zeros((16, 16)), 8, 4), 1.0)

    def test_brute_force(self, rng):
        a, b = rng.integers(0, 2, (12, 12)), rng.integers(0, 2, (12, 12))
        expected = [np.sqrt(np.mean((a[y:y + 4, x:x + 4] - b[y:y + 4, x:x + 4]) ** 2.0))
                    for y in range(0, 9, 4) for x in range(0, 9, 4)]
        assert_allclose(bd.boundary_patch_distances(a, b, 4, 4), expected)


class TestKL:
    def test_identity(self, rng):
        p = rng.random(8)
        assert bd.kl_divergence(p / p.sum(), p / p.sum()) == 0

    def test_log2(self):
        assert bd.kl_divergence([1.0, 0.0], [0.5, 0.5]) == pytest.approx(math.log(2), abs=1e-6)

    def test_direct_sum(self, rng):
        p, q = rng.random(10), rng.random(10)
        ps = (p / p.sum() + 1e-8)
        ps /= ps.sum()
        qs = (q / q.sum() + 1e-8)
        qs /= qs.sum()
        expected = sum(a * math.log(a / b) for a, b in zip(ps, qs))
        assert bd.kl_divergence(p / p.sum(), q / q.sum()) == pytest.approx(expected, rel=1e-12)

    def test_distribution_objects(self):
        a = make_distribution([0.1, 0.2], 4, 0, 1)
        assert bd.kl_divergence(a, a) == 0

    @given(arrays(np.float64, 6, elements=st.floats(0, 1)), arrays(np.float64, 6, elements=st.floats(0, 1)))
    def test_non_negative(self, p, q):
        p, q = p + 1e-3, q + 1e-3
        assert bd.kl_divergence(p / p.sum(), q / q.sum()) >= 0

    def test_bin_mismatch(self):
        with pytest.raises(BinMismatch):
            bd.kl_divergence([0.5, 0.5], [1.0])


class TestClassify:
    @pytest.mark.parametrize("prob, cls", [(1.0, 0), (0.0, 9), (0.55, 4), (0.9, 1), (0.95, 0)])
    def test_examples(self, prob, cls):
        assert bd.classify_boundary(prob, 10) == cls

    @given(probs, probs)
    def test_monotone(self, a, b):
        lo, hi = sorted((a, b))
        assert bd.classify_boundary(hi) <= bd.classify_boundary(lo)

    def test_rejects(self):
        with pytest.raises(BadProbability):
            bd.classify_boundary(1.2)
        with pytest.raises(BadProbability):
            bd.classify_boundary(0.5, K=1)

    def test_degradation_labels(self):
        blur = np.array([0.0, 0.05, 1.0, 50.0])
        assert_array_equal(bd.degradation_labels(blur), bd.classify_boundary(np.exp(-blur)))
        assert bd.degradation_labels(np.zeros(1))[0] == 0


class TestCrossEntropy:
    def test_one_hot(self):
        labels = np.array([[0, 3], [9, 2]])
        assert bd.cross_entropy(np.eye(10)[labels], labels) == 0

    def test_uniform(self):
        assert bd.cross_entropy(np.full((5, 10), 0.1), np.arange(5)) == pytest.approx(math.log(10))

    def test_oracle(self, rng):
        pred = rng.random((6, 4))
        pred /= pred.sum(axis=1, keepdims=True)
        labels = rng.integers(0, 4, 6)
        expected = np.mean([-math.log(max(pred[i, labels[i]], 1e-8)) for i in range(6)])
        assert bd.cross_entropy(pred, labels) == pytest.approx(expected)

    def test_mismatch(self):
        with pytest.raises(BinMismatch):
            bd.cross_entropy(np.full((3, 4), 0.25), np.array([0, 1, 4]))

    def test_one_hot_probs_peak_on_own_class(self):
        prob = np.array([1.0, 0.55, 0.0])
        assert_array_equal(bd.one_hot_probs(prob).argmax(axis=-1), bd.classify_boundary(prob))


class TestTemplate:
    def test_threshold_filter(self):
        bf = np.zeros((4, 4), dtype=np.uint8)
        bf[1, 1] = bf[2, 3] = 1
        prob = np.zeros((4, 4))
        prob[1, 1], prob[2, 3] = 0.9, 0.3
        t = bd.build_template(bf, np.zeros_like(bf), prob, 0.5)
        assert (list(t.xs), list(t.ys)) == ([1], [1])
        assert t.classes[0] == 1

    def test_all_certain(self, rng):
        bf = rng.integers(0, 2, (8, 8))
        t = bd.build_template(bf, np.zeros_like(bf), np.ones((8, 8)), 0.5)
        assert len(t) == bf.sum()

    def test_predicate_oracle(self, rng):
        bf, be = rng.integers(0, 2, (10, 10)), rng.integers(0, 2, (10, 10))
        prob = rng.random((10, 10))
        t = bd.build_template(bf, be, prob, 0.4)
        expected = [(x, y) for y in range(10) for x in range(10) if (bf[y, x] or be[y, x]) and prob[y, x] >= 0.4]
        assert list(zip(t.xs.tolist(), t.ys.tolist())) == expected
        assert np.all(t.probs >= 0.4)

    def test_empty(self):
        with pytest.raises(EmptyTemplate):
            bd.build_template(np.ones((3, 3)), np.zeros((3, 3)), np.zeros((3, 3)), 0.5)

    def test_patch_probability_constant_patches(self):
        prob = bd.patch_probability(np.zeros(9), (32, 32), 16, 8, 0.1)
        assert_allclose(prob, 1.0)
        prob = bd.patch_probability(np.full(9, 0.1), (32, 32), 16, 8, 0.1)
        assert_allclose(prob, math.exp(-1))


class TestConsistencyTrend:
    @pytest.mark.parametrize("seed", [0, 1])
    def test_sharper_frames_agree_better(self, seed):
        b = gen_scene(SceneSpec(noise_sigma=3.0, flow=(3.0, 0.0), seed=seed, preroll=0.5))
        kls = [bd.consistency_kl(degrade(b, L, 1, step=0.1).frames[0].data, b.events, b.slices,
                                 b.gt_flow_total, 0.05) for L in (8, 1)]
        assert kls[1] < kls[0]
