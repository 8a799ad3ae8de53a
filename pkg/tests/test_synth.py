import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from stflow.errors import InvalidSpec
from stflow.evaluation import compose, epe
from stflow.event_io import accumulate_polarity
from stflow.raster import decode_flow_bytes, encode_flow, read_flow, read_scalar, write_flow, write_scalar
from stflow.synth import SceneSpec, blurred_render, degrade, gen_scene, simulate_events


@pytest.fixture(scope="module")
def noise_bundle():
    return gen_scene(SceneSpec(flow=(3.0, 0.0), seed=3))


class TestGenScene:
    def test_flat_texture_is_silent(self):
        b = gen_scene(SceneSpec(texture="flat", flow=(2.0, 1.0)))
        assert sum(len(s) for s in b.slices) == 0

    def test_ramp_crossings(self):
        # I = 0.2 + 0.1 x moved by one pixel: every pixel darkens by exactly 2C
        b = gen_scene(SceneSpec(width=8, height=6, texture="ramp", ramp_slope=0.1, flow=(1.0, 0.0), T=4))
        counts = np.zeros((6, 8), dtype=int)
        np.add.at(counts, (b.events.y, b.events.x), b.events.p)
        assert_array_equal(counts[:, 1:], -2)
        assert np.all(np.abs(b.events.p) == 1)

    def test_dense_time_oracle(self, noise_bundle):
        spec = noise_bundle.spec
        fine = np.linspace(0.0, 1.0, 1001)
        t, x, y, p = simulate_events(lambda j: noise_bundle.render(fine[j]), fine, spec.C)
        dense = np.zeros((spec.height, spec.width), dtype=int)
        np.add.at(dense, (y, x), 1)
        ours = np.zeros_like(dense)
        np.add.at(ours, (noise_bundle.events.y, noise_bundle.events.x), 1)
        assert np.abs(dense - ours).max() <= 1

    def test_polarity_sum_tracks_intensity(self, noise_bundle):
        change = noise_bundle.frames[1].data - noise_bundle.frames[0].data
        acc = accumulate_polarity(noise_bundle.events, noise_bundle.spec.C)
        assert np.abs(acc - change).max() <= noise_bundle.spec.C + 1e-9

    def test_events_sorted_and_in_window(self, noise_bundle):
        t = noise_bundle.events.t
        assert np.all(np.diff(t) >= 0)
        assert t.min() >= 0 and t.max() <= 1.0

    def test_translation_slices_compose_exactly(self, noise_bundle):
        total = compose(list(noise_bundle.gt_flow_slices))
        assert_allclose(total, noise_bundle.gt_flow_total, atol=1e-12)

    def test_rotation_slices_compose(self):
        b = gen_scene(SceneSpec(texture="flat", motion="rotation", angle=0.2))
        gt = b.gt_flow_total
        h, w = gt.shape[:2]
        ys, xs = np.mgrid[0:h, 0:w]
        inside = (xs + gt[..., 0] >= 0) & (xs + gt[..., 0] <= w - 1) & (ys + gt[..., 1] >= 0) & (ys + gt[..., 1] <= h - 1)
        assert epe(compose(list(b.gt_flow_slices)), gt, inside) < 0.1

    def test_two_region_labels(self):
        b = gen_scene(SceneSpec(motion="two_region"))
        assert_array_equal(b.regions[:, :32], 0)
        assert_array_equal(b.regions[:, 32:], 1)
        assert_allclose(b.gt_flow_total[:, 40], [[-3.0, 0.0]] * 64)

    def test_deterministic(self):
        a = gen_scene(SceneSpec(seed=5))
        b = gen_scene(SceneSpec(seed=5))
        assert_array_equal(a.events.t, b.events.t)
        assert_array_equal(a.frames[0].data, b.frames[0].data)

    def test_gt_tracks_translation(self, noise_bundle):
        tr = noise_bundle.gt_tracks(np.array([[10.0, 20.0]]))
        assert tr.shape == (1, 21, 2)
        assert_allclose(tr[0, -1], [13.0, 20.0])

    @pytest.mark.parametrize("field, value", [("T", 0), ("C", 0.0), ("texture", "plaid"), ("motion", "shear"),
                                              ("duration", -1.0), ("width", 2)])
    def test_invalid_spec(self, field, value):
        with pytest.raises(InvalidSpec):
            gen_scene(SceneSpec(**{field: value}))


class TestDegrade:
    def test_identity(self, noise_bundle):
        d = degrade(noise_bundle, 1, 1)
        assert_array_equal(d.frames[0].data, noise_bundle.frames[0].data)
        assert d.events is noise_bundle.events

    def test_decimation(self):
        b = gen_scene(SceneSpec(n_frames=4))
        d = degrade(b, 1, 2)
        assert [f.t for f in d.frames] == [b.frames[0].t, b.frames[2].t]

    def test_blur_is_mean_of_renders(self, noise_bundle):
        d = degrade(noise_bundle, 8, 1)
        step = 1.0 / noise_bundle.T
        offsets = (np.arange(8) - 3.5) * step
        expected = np.mean([noise_bundle.render(o) for o in offsets], axis=0)
        assert_allclose(d.frames[0].data, expected, atol=1e-12)

    def test_custom_step(self, noise_bundle):
        d = degrade(noise_bundle, 4, 1, step=0.1)
        assert_allclose(d.frames[1].data, blurred_render(d, 1.0, 4), atol=1e-12)
        assert d.blur_step == 0.1

    def test_blur_extent(self, noise_bundle):
        d = degrade(noise_bundle, 5, 1, step=0.1)
        assert_allclose(d.blur_extent(), 0.4 * 3.0)

    def test_rejects(self, noise_bundle):
        with pytest.raises(InvalidSpec):
            degrade(noise_bundle, 0, 1)
        with pytest.raises(InvalidSpec):
            degrade(noise_bundle, 2, 1, step=0.0)


class TestRaster:
    def test_layout(self):
        flow = np.zeros((2, 3, 2))
        flow[..., 0] = 1.0
        flow[..., 1] = -2.0
        buf = encode_flow(flow)
        assert buf[:4] == b"STFL"
        assert int.from_bytes(buf[4:8], "little") == 3
        assert int.from_bytes(buf[8:12], "little") == 2
        u = np.frombuffer(buf, "<f4", count=6, offset=12)
        assert_array_equal(u, 1.0)
        assert_array_equal(decode_flow_bytes(buf), flow)

    def test_files(self, tmp_path, rng):
        flow = rng.normal(size=(5, 7, 2)).astype(np.float32).astype(np.float64)
        write_flow(tmp_path / "f.stfl", flow)
        assert_array_equal(read_flow(tmp_path / "f.stfl"), flow)
        write_scalar(tmp_path / "s.stfl", flow[..., 0])
        assert_array_equal(read_scalar(tmp_path / "s.stfl"), flow[..., 0])

    def test_truncated(self):
        with pytest.raises(ValueError):
            decode_flow_bytes(encode_flow(np.zeros((2, 2, 2)))[:-1])
