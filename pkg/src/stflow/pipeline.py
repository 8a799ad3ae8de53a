"""End-to-end flow estimation from a frame pair and the events between them.

Stages: coarse frame flow and photometric refinement (the motion prior U),
gradient-space and boundary distributions, the reference template, frame
and event correlation volumes, template-guided matching and tracking,
attention fusion, per-slice decoding and composition, losses and metrics.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field

import numpy as np

from . import boundary as bd
from . import correlation as cr
from . import fusion as fu
from . import gradient as gr
from . import optim as op
from .config import PipelineConfig, dump_config
from .errors import DimensionMismatch, StflowError
from .evaluation import MetricsReport, compose, f1_all, epe, flow_to_color, tepe
from .event_io import (EventStream, FrameSequence, Image, read_events, read_manifest,
                       slice_events, write_events, write_manifest)
from .interp import bilinear_sample, pixel_grid
from .raster import read_flow, write_flow, write_scalar
from .synth import SynthBundle, degrade, gen_scene


class StageError(StflowError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class Scene:
    """Inputs for one estimation window, plus ground truth when it is known."""

    frames: FrameSequence
    events: EventStream
    slices: list
    gt_flow: np.ndarray | None = None
    gt_slices: np.ndarray | None = None
    bundle: SynthBundle | None = None

    @property
    def i0(self) -> Image:
        return self.frames[0]

    @property
    def i1(self) -> Image:
        return self.frames[len(self.frames) - 1]

    def gt_tracks(self, points: np.ndarray) -> np.ndarray | None:
        if self.bundle is not None:
            return self.bundle.gt_tracks(points)
        if self.gt_slices is None:
            return None
        return integrate_tracks(self.gt_slices, points)


def integrate_tracks(flows: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Follow points through per-slice Eulerian flows; shape (N, T+1, 2)."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2).copy()
    out = [pts.copy()]
    for f in flows:
        pts = pts + bilinear_sample(f, pts[:, 0], pts[:, 1], outside="clamp")
        out.append(pts.copy())
    return np.stack(out, axis=1)


def scene_from_config(cfg: PipelineConfig) -> Scene:
    """Generate the configured synthetic scene, degraded as requested."""
    bundle = gen_scene(cfg.scene_spec())
    if cfg.blur_len > 1 or cfg.drop > 1:
        bundle = degrade(bundle, cfg.blur_len, cfg.drop, cfg.blur_step)
    return Scene(bundle.frames, bundle.events, bundle.slices, bundle.gt_flow_total,
                 bundle.gt_flow_slices, bundle)


def load_scene(path: str | os.PathLike, T: int) -> Scene:
    """Read a bundle directory written by :func:`write_bundle`."""
    frames = read_manifest(os.path.join(path, "frames.txt"))
    events = read_events(os.path.join(path, "events.txt"))
    t0, t1 = frames[0].t, frames[len(frames) - 1].t
    inside = (events.t >= t0) & (events.t <= t1)
    events = events.select(inside, t0, t1)
    slices = slice_events(events, t0, t1, T)
    gt = gt_s = None
    gpath = os.path.join(path, "gt_flow.stfl")
    if os.path.exists(gpath):
        gt = read_flow(gpath)
    spath = os.path.join(path, "gt_slices")
    if os.path.isdir(spath):
        names = sorted(n for n in os.listdir(spath) if n.endswith(".stfl"))
        if names:
            gt_s = np.stack([read_flow(os.path.join(spath, n)) for n in names])
    return Scene(frames, events, slices, gt, gt_s)


def write_bundle(path: str | os.PathLike, scene: Scene) -> None:
    os.makedirs(path, exist_ok=True)
    write_manifest(os.path.join(path, "frames.txt"), scene.frames)
    write_events(os.path.join(path, "events.txt"), scene.events)
    if scene.gt_flow is not None:
        write_flow(os.path.join(path, "gt_flow.stfl"), scene.gt_flow)
    if scene.gt_slices is not None:
        os.makedirs(os.path.join(path, "gt_slices"), exist_ok=True)
        for k, f in enumerate(scene.gt_slices):
            write_flow(os.path.join(path, "gt_slices", f"slice_{k:03d}.stfl"), f)
    if scene.bundle is not None:
        np.savetxt(os.path.join(path, "regions.csv"), scene.bundle.regions, fmt="%d", delimiter=",")


@dataclass
class FusionResult:
    prior: np.ndarray
    prior_losses: list
    frame_flow: np.ndarray
    gradient_distances: np.ndarray
    boundary_distances: np.ndarray
    kl: float
    entropy: float
    prob_map: np.ndarray
    template: bd.BoundaryTemplate
    tracked: bd.BoundaryTemplate
    cv_frame: cr.CorrelationVolume
    event_volumes: list
    cluster: fu.ClusterResult
    tracks: list
    fused: list
    cumulative: list
    slice_flows: list
    fused_flow: np.ndarray
    event_slice_flows: list
    losses: op.LossReport
    trajectories: np.ndarray = field(repr=False, default=None)


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except Exception as exc:  # noqa: BLE001 - every failure gets a stage tag
        raise StageError(name, exc) from exc


def cumulative_to_slices(cumulative: list) -> list:
    """Turn reference-indexed cumulative displacements into per-slice Eulerian flows.

    ``cumulative[k]`` maps a reference pixel to its displacement at the end
    of slice ``k``.  The flow of slice ``k`` at a position ``y`` (at the
    start of the slice) is the increment of the reference point that sits
    at ``y``, found by a short fixed-point inversion of the previous
    displacement.
    """
    h, w = cumulative[0].shape[:2]
    xs, ys = pixel_grid(h, w)
    out = [cumulative[0].copy()]
    for k in range(1, len(cumulative)):
        prev, cur = cumulative[k - 1], cumulative[k]
        rx, ry = xs.copy(), ys.copy()
        for _ in range(5):
            d = bilinear_sample(prev, rx, ry, outside="clamp")
            rx, ry = xs - d[..., 0], ys - d[..., 1]
        inc = cur - prev
        out.append(bilinear_sample(inc, rx, ry, outside="clamp"))
    return out


def _subsample(tmpl: bd.BoundaryTemplate, n: int, margin: int, shape) -> bd.BoundaryTemplate:
    h, w = shape
    keep = (tmpl.xs >= margin) & (tmpl.xs < w - margin) & (tmpl.ys >= margin) & (tmpl.ys < h - margin)
    idx = np.nonzero(keep)[0]
    if len(idx) == 0:
        idx = np.arange(len(tmpl))
    if len(idx) > n:
        idx = idx[np.linspace(0, len(idx) - 1, n).round().astype(np.int64)]
    return tmpl.subset(idx)


def estimate(scene: Scene, cfg: PipelineConfig) -> FusionResult:
    """Run every estimation stage on one scene."""
    i0, i1 = scene.i0.data, scene.i1.data
    shape = i0.shape
    if len(scene.slices) != cfg.T:
        raise StageError("load", DimensionMismatch(f"{len(scene.slices)} slices, config T={cfg.T}"))
    C = cfg.C

    # motion prior: coarse frame correlation, then photometric refinement
    f0 = _stage("features", cr.extract_features, i0, cfg.levels)
    f1 = _stage("features", cr.extract_features, i1, cfg.levels)
    coarse = _stage("correlation", cr.build_correlation, f0, f1, None, cfg.radius)
    start = _stage("decode", fu.decode_flow, coarse, cfg.temperature)
    ref = _stage("refine", op.refine_flow, i0, i1, start, cfg.refine_steps, cfg.refine_lr, cfg.p, cfg.eps)
    U = ref.flow

    # common gradient space and boundary consistency
    def gradients():
        gf = gr.frame_temporal_gradient(i0, U) / C
        ge = gr.event_temporal_gradient(scene.slices, U, C) / C
        return gr.gradient_similarity(gf, ge, cfg.win, cfg.stride)

    gdist = _stage("gradients", gradients)
    bf = _stage("boundary", bd.canny, i0, cfg.canny_sigma, cfg.canny_lo, cfg.canny_hi)
    be = _stage("boundary", bd.project_events_boundary, scene.events, cfg.event_min_count)
    bdist = _stage("boundary", bd.boundary_patch_distances, bf, be, cfg.win, cfg.stride)
    p_b = gr.make_distribution(bdist, cfg.hist_bins, 0.0, cfg.hist_hi)
    p_g = gr.make_distribution(gdist, cfg.hist_bins, 0.0, cfg.hist_hi)
    kl = bd.kl_divergence(p_b, p_g)
    # boundary quality from the raw (intensity-unit) gradient distances
    prob = bd.patch_probability(gdist * C, shape, cfg.win, cfg.stride, cfg.patch_tau)
    blur = scene.bundle.blur_extent() if scene.bundle is not None else np.zeros(shape)
    labels = bd.degradation_labels(blur, cfg.K)
    entropy = bd.cross_entropy(bd.one_hot_probs(prob, cfg.K), labels)
    tmpl = _stage("template", bd.build_template, bf, be, prob, cfg.template_threshold, cfg.K)
    tracked = _subsample(tmpl, cfg.track_points, cfg.radius, shape)

    # correlation structures
    cv_frame = _stage("correlation", cr.build_correlation, f0, f1, U, cfg.radius)
    frame_flow = fu.decode_flow(cv_frame, cfg.temperature)
    ev = _stage("correlation", cr.event_slice_volumes, scene.slices, U, C, cfg.radius, cfg.levels,
                cfg.support, cfg.aggregate)

    # matching, tracking, fusion
    k = min(cfg.k, len(tracked))
    cluster = _stage("spatial_match", fu.spatial_match, cv_frame, tracked, k, cfg.alpha, cfg.kmeans_tol,
                     cfg.kmeans_max_iter, cfg.seed, None, cfg.temperature)
    tracks = _stage("track", fu.temporal_track, ev, tracked, U, np.diag(cfg.q), np.diag(cfg.r), cfg.c_min)
    fused = _stage("fuse", fu.cross_attention_fuse, cluster, tracks, tracked, ev)

    cumulative = [fu.decode_flow(v, cfg.temperature) for v in fused]
    slice_flows = cumulative_to_slices(cumulative)
    fused_flow = _stage("compose", compose, slice_flows)
    ev_cumulative = [fu.decode_flow(v, cfg.temperature) for v in ev]
    ev_slices = cumulative_to_slices(ev_cumulative)

    # trajectories of the tracked points under the fused per-slice flows
    pts = tracked.points
    traj = np.concatenate([pts[:, None, :],
                           np.stack([pts + c[tracked.ys, tracked.xs] for c in cumulative], axis=1)], axis=1)

    def losses():
        pho = op.photometric_loss(i0, i1, fused_flow, p=cfg.p, eps=cfg.eps)
        spa = fu.corr_spatial_loss(fused[-1], cluster, tracked)
        temp = fu.corr_temporal_loss(fused, tracks)
        inc = np.diff(traj, axis=1).transpose(1, 0, 2)
        ev_traj = np.concatenate([pts[:, None, :],
                                  np.stack([pts + c[tracked.ys, tracked.xs] for c in ev_cumulative], axis=1)],
                                 axis=1)
        ev_inc = np.diff(ev_traj, axis=1).transpose(1, 0, 2)
        consis = fu.flow_consistency_loss(inc, frame_flow[tracked.ys, tracked.xs], ev_inc)
        return op.total_loss({"pho": pho, "kl": kl, "entropy": entropy, "spa": spa, "temp": temp,
                              "consis": consis}, cfg.lambdas)

    report = _stage("losses", losses)
    return FusionResult(U, ref.losses, frame_flow, gdist, bdist, kl, entropy, prob, tmpl, tracked, cv_frame,
                        ev, cluster, tracks, fused, cumulative, slice_flows, fused_flow, ev_slices, report, traj)


@dataclass(frozen=True)
class Evaluation:
    fused: MetricsReport
    frame_only: MetricsReport
    tepe_fused: float | None
    tepe_tracks: float | None


def evaluate(scene: Scene, result: FusionResult) -> Evaluation | None:
    if scene.gt_flow is None:
        return None
    gt = scene.gt_flow
    h, w = gt.shape[:2]
    xs, ys = pixel_grid(h, w)
    ex, ey = xs + gt[..., 0], ys + gt[..., 1]
    mask = (ex >= 0) & (ex <= w - 1) & (ey >= 0) & (ey <= h - 1)
    gt_tr = scene.gt_tracks(result.tracked.points)
    t_fused = t_tracks = None
    if gt_tr is not None:
        t_fused = tepe(list(result.trajectories), list(gt_tr))
        t_tracks = tepe(result.tracks, list(gt_tr))
    fused = MetricsReport(epe(result.fused_flow, gt, mask), f1_all(result.fused_flow, gt, mask), t_fused,
                          int(mask.sum()))
    frame = MetricsReport(epe(result.frame_flow, gt, mask), f1_all(result.frame_flow, gt, mask), None,
                          int(mask.sum()))
    return Evaluation(fused, frame, t_fused, t_tracks)


def _csv(rows, header) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    for row in rows:
        wr.writerow([format(v, ".10g") if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def write_text(path, text: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(text)


def tracks_csv(tracks) -> str:
    rows = []
    for n, trk in enumerate(tracks):
        for k, s in enumerate(trk.history):
            rows.append([n, k, *(float(v) for v in s), int(trk.lost)])
    return _csv(rows, ["track", "step", "x", "y", "u", "v", "c", "lost"])


def losses_csv(report: op.LossReport) -> str:
    row = report.as_row()
    return _csv([[float(v) for v in row.values()]], list(row.keys()))


def write_artifacts(out: str | os.PathLike, scene: Scene, result: FusionResult,
                    ev: Evaluation | None, cfg: PipelineConfig) -> None:
    os.makedirs(out, exist_ok=True)
    j = lambda *p: os.path.join(out, *p)  # noqa: E731
    write_text(j("config.txt"), dump_config(cfg))
    write_flow(j("prior_flow.stfl"), result.prior)
    write_flow(j("frame_flow.stfl"), result.frame_flow)
    write_flow(j("fused_flow.stfl"), result.fused_flow)
    os.makedirs(j("slices"), exist_ok=True)
    for k, f in enumerate(result.slice_flows):
        write_flow(j("slices", f"fused_{k:03d}.stfl"), f)
    write_scalar(j("template_prob.stfl"), result.prob_map)
    write_text(j("distances.csv"), _csv(
        [[i, float(g), float(b)] for i, (g, b) in enumerate(zip(result.gradient_distances,
                                                                result.boundary_distances))],
        ["patch", "gradient", "boundary"]))
    write_text(j("template.csv"), _csv(
        [[int(x), int(y), float(p), int(c)] for x, y, p, c in zip(result.template.xs, result.template.ys,
                                                                   result.template.probs,
                                                                   result.template.classes)],
        ["x", "y", "prob", "class"]))
    write_text(j("clusters.csv"), _csv(
        [[c, int(result.tracked.xs[a]), int(result.tracked.ys[a]), int((result.cluster.assignments == c).sum())]
         for c, a in enumerate(result.cluster.anchors)], ["cluster", "anchor_x", "anchor_y", "members"]))
    write_text(j("tracks.csv"), tracks_csv(result.tracks))
    write_text(j("losses.csv"), losses_csv(result.losses))
    write_text(j("prior_losses.csv"), _csv([[i, float(v)] for i, v in enumerate(result.prior_losses)],
                                           ["step", "loss"]))
    mag = max(float(np.abs(result.fused_flow).max()), 1e-6)
    save_rgb(j("fused_flow.png"), flow_to_color(result.fused_flow, mag))
    if ev is not None:
        rows = [["fused", ev.fused.epe, ev.fused.f1_all, ev.tepe_fused if ev.tepe_fused is not None else "",
                 ev.fused.n_valid],
                ["frame_only", ev.frame_only.epe, ev.frame_only.f1_all, "", ev.frame_only.n_valid],
                ["event_tracks", "", "", ev.tepe_tracks if ev.tepe_tracks is not None else "", ""]]
        write_text(j("metrics.csv"), _csv(rows, ["method", "epe", "f1_all", "tepe", "n_valid"]))


def save_rgb(path, rgb: np.ndarray) -> None:
    from PIL import Image as PILImage

    PILImage.fromarray(np.asarray(rgb, dtype=np.uint8)).save(path)


def run_pipeline(cfg: PipelineConfig) -> tuple[Scene, FusionResult, Evaluation | None]:
    """Load or synthesize the scene, estimate, evaluate and write everything under ``cfg.out``."""
    cfg.validate()
    if cfg.input:
        scene = _stage("load", load_scene, cfg.input, cfg.T)
    else:
        scene = _stage("synth", scene_from_config, cfg)
        _stage("synth", write_bundle, os.path.join(cfg.out, "bundle"), scene)
    result = estimate(scene, cfg)
    ev = _stage("metrics", evaluate, scene, result)
    _stage("write", write_artifacts, cfg.out, scene, result, ev, cfg)
    return scene, result, ev
