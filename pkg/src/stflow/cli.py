"""``stflow`` command line: the full pipeline plus one subcommand per stage.

Every subcommand accepts ``--config``, ``--seed``, ``--out`` and repeated
``--set key=value`` overrides.  Exit status is 0 on success, 1 when a stage
fails and 2 for configuration errors.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from . import boundary as bd
from . import gradient as gr
from . import optim as op
from .config import PipelineConfig, apply_overrides, dump_config, load_config, thread_limit
from .errors import ConfigError, StflowError
from .evaluation import flow_to_color, metrics
from .event_io import load_png, save_png
from .pipeline import (StageError, _csv, estimate, evaluate, load_scene, run_pipeline, save_rgb,
                       scene_from_config, write_artifacts, write_bundle, write_text)
from .raster import read_flow, write_flow, write_scalar


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    pairs = []
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        pairs.append(tuple(item.split("=", 1)))
    cfg = apply_overrides(cfg, pairs)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = replace(cfg, out=args.out)
    if getattr(args, "input", None):
        cfg = replace(cfg, input=args.input)
    thread_limit()
    return cfg.validate()


def _scene(cfg: PipelineConfig):
    if cfg.input:
        return load_scene(cfg.input, cfg.T)
    return scene_from_config(cfg)


def _prior(scene):
    """Flow over the window: ground truth when the scene has it, otherwise ``--flow``."""
    if scene.gt_flow is not None:
        return scene.gt_flow
    raise ConfigError("input has no ground-truth flow; pass --flow")


def cmd_run(args, cfg):
    _, _, ev = run_pipeline(cfg)
    if ev is not None:
        print("method,epe,f1_all,tepe,n_valid")
        print("fused," + ev.fused.csv_line())
        print("frame_only," + ev.frame_only.csv_line())
    print(f"artifacts written to {cfg.out}")


def cmd_synth(args, cfg):
    scene = scene_from_config(cfg)
    write_bundle(cfg.out, scene)
    write_text(os.path.join(cfg.out, "config.txt"), dump_config(cfg))
    print(f"{len(scene.events)} events, {len(scene.frames)} frames -> {cfg.out}")


def cmd_gradients(args, cfg):
    scene = _scene(cfg)
    flow = read_flow(args.flow) if args.flow else _prior(scene)
    gf = gr.frame_temporal_gradient(scene.i0.data, flow)
    ge = gr.event_temporal_gradient(scene.slices, flow, cfg.C)
    os.makedirs(cfg.out, exist_ok=True)
    write_scalar(os.path.join(cfg.out, "frame_gradient.stfl"), gf)
    write_scalar(os.path.join(cfg.out, "event_gradient.stfl"), ge)
    gdist = gr.gradient_similarity(gf / cfg.C, ge / cfg.C, cfg.win, cfg.stride)
    be = bd.project_events_boundary(scene.events, cfg.event_min_count)
    bf = bd.canny(scene.i0.data, cfg.canny_sigma, cfg.canny_lo, cfg.canny_hi)
    bdist = bd.boundary_patch_distances(bf, be, cfg.win, cfg.stride)
    pg = gr.make_distribution(gdist, cfg.hist_bins, 0.0, cfg.hist_hi)
    pb = gr.make_distribution(bdist, cfg.hist_bins, 0.0, cfg.hist_hi)
    rows = [[i, float(pg.edges[i]), float(pg.edges[i + 1]), float(pg.mass[i]), float(pb.mass[i])]
            for i in range(cfg.hist_bins)]
    write_text(os.path.join(cfg.out, "histograms.csv"), _csv(rows, ["bin", "lo", "hi", "gradient", "boundary"]))
    print(f"kl={bd.kl_divergence(pb, pg):.6g}")


def cmd_boundary(args, cfg):
    scene = _scene(cfg)
    flow = read_flow(args.flow) if args.flow else _prior(scene)
    bf = bd.canny(scene.i0.data, cfg.canny_sigma, cfg.canny_lo, cfg.canny_hi)
    be = bd.project_events_boundary(scene.events, cfg.event_min_count)
    gf = gr.frame_temporal_gradient(scene.i0.data, flow)
    ge = gr.event_temporal_gradient(scene.slices, flow, cfg.C)
    gdist = gr.gradient_similarity(gf, ge, cfg.win, cfg.stride)
    prob = bd.patch_probability(gdist, bf.shape, cfg.win, cfg.stride, cfg.patch_tau)
    tmpl = bd.build_template(bf, be, prob, cfg.template_threshold, cfg.K)
    os.makedirs(cfg.out, exist_ok=True)
    save_png(os.path.join(cfg.out, "boundary_frame.png"), bf.astype(np.float64))
    save_png(os.path.join(cfg.out, "boundary_event.png"), be.astype(np.float64))
    rows = [[int(x), int(y), float(p), int(c)] for x, y, p, c in zip(tmpl.xs, tmpl.ys, tmpl.probs, tmpl.classes)]
    write_text(os.path.join(cfg.out, "template.csv"), _csv(rows, ["x", "y", "prob", "class"]))
    print(f"{len(tmpl)} template points")


def cmd_fuse(args, cfg):
    scene = _scene(cfg)
    result = estimate(scene, cfg)
    write_artifacts(cfg.out, scene, result, evaluate(scene, result), cfg)
    print(f"{len(result.slice_flows)} fused slice flows -> {cfg.out}")


def cmd_refine(args, cfg):
    if args.i0 and args.i1:
        i0, i1 = load_png(args.i0).data, load_png(args.i1).data
    else:
        scene = _scene(cfg)
        i0, i1 = scene.i0.data, scene.i1.data
    flow0 = read_flow(args.flow) if args.flow else np.zeros(i0.shape + (2,))
    ref = op.refine_flow(i0, i1, flow0, cfg.refine_steps, cfg.refine_lr, cfg.p, cfg.eps)
    os.makedirs(cfg.out, exist_ok=True)
    write_flow(os.path.join(cfg.out, "refined_flow.stfl"), ref.flow)
    write_text(os.path.join(cfg.out, "loss_history.csv"),
               _csv([[i, float(v)] for i, v in enumerate(ref.losses)], ["step", "loss"]))
    print(f"loss {ref.losses[0]:.6g} -> {ref.losses[-1]:.6g} in {ref.accepted} accepted steps")


def cmd_gradcheck(args, cfg):
    worst = max(op.gradcheck(*op.gradcheck_instance(cfg.seed + i, args.size), p=cfg.p, eps=cfg.eps)
                for i in range(args.instances))
    print(f"max relative error {worst:.3e}")


def cmd_eval(args, cfg):
    pred = read_flow(args.pred)
    gt = read_flow(args.gt)
    mask = load_png(args.mask).data > 0.5 if args.mask else None
    print(metrics(pred, gt, mask).csv_line())


def cmd_viz(args, cfg):
    flow = read_flow(args.flow)
    mag = args.max_mag
    if mag is None:
        mag = float(np.hypot(flow[..., 0], flow[..., 1]).max()) or 1.0
    target = args.png or os.path.join(cfg.out, "flow.png")
    os.makedirs(os.path.dirname(os.path.abspath(target)), exist_ok=True)
    save_rgb(target, flow_to_color(flow, mag))
    print(target)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")

    parser = argparse.ArgumentParser(prog="stflow", description="Frame and event optical flow fusion.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.set_defaults(func=fn)
        return p

    add("run", cmd_run, "synthesize or load, estimate, evaluate and write every artifact") \
        .add_argument("--input", help="bundle directory instead of a synthetic scene")
    p = add("synth", cmd_synth, "write a synthetic bundle")
    p.add_argument("--spec", dest="config", help="alias of --config")
    for name, fn, help_ in (("gradients", cmd_gradients, "frame and event temporal gradients"),
                            ("boundary", cmd_boundary, "boundary maps and the reference template")):
        p = add(name, fn, help_)
        p.add_argument("--input", help="bundle directory")
        p.add_argument("--flow", help="flow raster used for warping (default: bundle ground truth)")
    add("fuse", cmd_fuse, "fused per-slice flows, tracks and losses").add_argument("--input", help="bundle directory")
    p = add("refine", cmd_refine, "photometric flow refinement")
    p.add_argument("--input", help="bundle directory")
    p.add_argument("--i0", help="first frame PNG")
    p.add_argument("--i1", help="second frame PNG")
    p.add_argument("--flow", help="starting flow raster (default zero)")
    p = add("gradcheck", cmd_gradcheck, "analytic vs finite-difference photometric gradient")
    p.add_argument("--instances", type=int, default=10)
    p.add_argument("--size", type=int, default=32)
    p = add("eval", cmd_eval, "metrics of a predicted flow raster")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--mask", help="PNG, bright pixels are valid")
    p = add("viz", cmd_viz, "color-code a flow raster")
    p.add_argument("--flow", required=True)
    p.add_argument("--png", help="output PNG (default <out>/flow.png)")
    p.add_argument("--max-mag", type=float, dest="max_mag")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args)
        args.func(args, cfg)
    except ConfigError as exc:
        print(f"stflow: config error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"stflow: {exc}", file=sys.stderr)
        return 1
    except (StflowError, OSError) as exc:
        print(f"stflow: [{args.command}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
