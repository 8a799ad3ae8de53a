import shutil
import subprocess
import sys

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from stflow.cli import main
from stflow.event_io import load_png
from stflow.raster import read_flow, read_scalar, write_flow

FAST = ["--set", "refine_steps=5", "--set", "track_points=40"]


@pytest.fixture(scope="module")
def bundle(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "bundle"
    assert main(["synth", "--out", str(out), "--set", "flow=2,1"]) == 0
    return out


class TestExitCodes:
    def test_run_smoke(self, tmp_path, capsys):
        assert main(["run", "--out", str(tmp_path / "o"), *FAST]) == 0
        lines = (tmp_path / "o" / "metrics.csv").read_text().splitlines()
        assert lines[0] == "method,epe,f1_all,tepe,n_valid"
        epe = float(lines[1].split(",")[1])
        assert np.isfinite(epe)
        assert "fused," in capsys.readouterr().out

    def test_zero_slices(self, tmp_path, capsys):
        assert main(["run", "--out", str(tmp_path), "--set", "T=0"]) == 2
        assert "T = 0" in capsys.readouterr().err

    def test_unknown_key(self, tmp_path, capsys):
        assert main(["synth", "--out", str(tmp_path), "--set", "lamda1=1"]) == 2
        assert "lamda1" in capsys.readouterr().err

    def test_stage_failure_is_tagged(self, tmp_path, capsys):
        # a flat scene has no edges, so the template stage cannot produce points
        assert main(["run", "--out", str(tmp_path), "--set", "texture=flat", *FAST]) == 1
        assert capsys.readouterr().err.startswith("stflow: [")

    def test_missing_input(self, tmp_path):
        assert main(["fuse", "--input", str(tmp_path / "nope"), "--out", str(tmp_path)]) == 1

    def test_config_file(self, tmp_path):
        cfg = tmp_path / "c.txt"
        cfg.write_text("T = 10\nwidth = 48\nheight = 48\n")
        assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 0
        assert "T = 10" in (tmp_path / "b" / "config.txt").read_text()


class TestSubcommands:
    def test_eval_identical(self, tmp_path, capsys, rng):
        write_flow(tmp_path / "f.stfl", rng.normal(size=(8, 8, 2)))
        assert main(["eval", "--pred", str(tmp_path / "f.stfl"), "--gt", str(tmp_path / "f.stfl")]) == 0
        assert capsys.readouterr().out.strip() == "0,0,,64"

    def test_viz_zero_is_white(self, tmp_path):
        write_flow(tmp_path / "z.stfl", np.zeros((5, 6, 2)))
        assert main(["viz", "--flow", str(tmp_path / "z.stfl"), "--png", str(tmp_path / "z.png")]) == 0
        from PIL import Image

        with Image.open(tmp_path / "z.png") as im:
            assert im.size == (6, 5)
            assert_array_equal(np.asarray(im), 255)

    def test_gradcheck(self, capsys):
        assert main(["gradcheck"]) == 0
        err = float(capsys.readouterr().out.split()[-1])
        assert err < 1e-4

    def test_pipeline_composability(self, bundle, tmp_path, capsys):
        gt = read_flow(bundle / "gt_flow.stfl")
        assert main(["gradients", "--input", str(bundle), "--out", str(tmp_path / "g")]) == 0
        assert read_scalar(tmp_path / "g" / "frame_gradient.stfl").shape == gt.shape[:2]
        assert main(["boundary", "--input", str(bundle), "--out", str(tmp_path / "b"),
                     "--flow", str(bundle / "gt_flow.stfl")]) == 0
        assert load_png(tmp_path / "b" / "boundary_frame.png").data.max() == 1.0
        assert main(["refine", "--input", str(bundle), "--out", str(tmp_path / "r"), "--set", "refine_steps=5",
                     "--flow", str(bundle / "gt_flow.stfl")]) == 0
        refined = tmp_path / "r" / "refined_flow.stfl"
        assert read_flow(refined).shape == gt.shape
        assert main(["fuse", "--input", str(bundle), "--out", str(tmp_path / "f"), *FAST]) == 0
        fused = tmp_path / "f" / "fused_flow.stfl"
        assert len(list((tmp_path / "f" / "slices").glob("*.stfl"))) == 20
        capsys.readouterr()
        assert main(["eval", "--pred", str(fused), "--gt", str(bundle / "gt_flow.stfl")]) == 0
        epe = float(capsys.readouterr().out.split(",")[0])
        assert epe < 2.0
        assert main(["viz", "--flow", str(fused), "--out", str(tmp_path / "v")]) == 0
        assert (tmp_path / "v" / "flow.png").exists()

    def test_gradients_without_gt_needs_flow(self, bundle, tmp_path):
        stripped = tmp_path / "nogt"
        shutil.copytree(bundle, stripped)
        (stripped / "gt_flow.stfl").unlink()
        assert main(["gradients", "--input", str(stripped), "--out", str(tmp_path / "g")]) == 2


def test_deterministic_metrics(tmp_path):
    for name in ("a", "b"):
        assert main(["run", "--seed", "3", "--out", str(tmp_path / name), *FAST]) == 0
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()


def test_console_script(tmp_path):
    exe = shutil.which("stflow")
    cmd = [exe] if exe else [sys.executable, "-m", "stflow.cli"]
    done = subprocess.run([*cmd, "gradcheck", "--instances", "2"], capture_output=True, text=True)
    assert done.returncode == 0 and "max relative error" in done.stdout
