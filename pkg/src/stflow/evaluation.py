"""Flow metrics, per-slice flow composition and color visualization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, EmptyMask, LengthMismatch
from .interp import bilinear_sample, pixel_grid


@dataclass(frozen=True)
class MetricsReport:
    epe: float
    f1_all: float
    tepe: float | None
    n_valid: int

    def csv_line(self) -> str:
        tepe = "" if self.tepe is None else _fmt(self.tepe)
        return f"{_fmt(self.epe)},{_fmt(self.f1_all)},{tepe},{self.n_valid}"


def _fmt(x: float) -> str:
    return format(float(x), ".10g")


def _prepare(flow, gt, mask):
    flow = np.asarray(flow, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if flow.shape != gt.shape or flow.ndim != 3 or flow.shape[-1] != 2:
        raise DimensionMismatch(f"flow {flow.shape} vs gt {gt.shape}")
    if mask is None:
        mask = np.ones(flow.shape[:2], dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != flow.shape[:2]:
            raise DimensionMismatch(f"mask {mask.shape} vs flow {flow.shape[:2]}")
    if not mask.any():
        raise EmptyMask("no valid pixel")
    return flow, gt, mask


def epe(flow, gt, mask=None) -> float:
    """Mean endpoint error over valid pixels."""
    flow, gt, mask = _prepare(flow, gt, mask)
    return float(np.linalg.norm(flow - gt, axis=-1)[mask].mean())


def f1_all(flow, gt, mask=None) -> float:
    """Percentage of valid pixels whose error exceeds both 3 px and 5% of the true magnitude."""
    flow, gt, mask = _prepare(flow, gt, mask)
    err = np.linalg.norm(flow - gt, axis=-1)
    mag = np.linalg.norm(gt, axis=-1)
    bad = (err > 3.0) & (err > 0.05 * mag)
    return float(100.0 * bad[mask].mean())


def _positions(track) -> np.ndarray:
    if hasattr(track, "positions"):
        return np.asarray(track.positions, dtype=np.float64)
    return np.asarray(track, dtype=np.float64)


def tepe(tracks, gt_tracks) -> float:
    """Mean positional error over all tracks and all recorded time steps.

    ``tracks`` may hold :class:`MotionTrack` objects or ``(steps, 2)`` arrays.
    """
    pred = [_positions(t) for t in tracks]
    gt = [np.asarray(g, dtype=np.float64) for g in gt_tracks]
    if len(pred) != len(gt) or not pred:
        raise LengthMismatch(f"{len(pred)} tracks vs {len(gt)} ground-truth tracks")
    errs = []
    for a, b in zip(pred, gt):
        if a.shape != b.shape:
            raise LengthMismatch(f"track of shape {a.shape} vs ground truth {b.shape}")
        errs.append(np.linalg.norm(a - b, axis=-1))
    return float(np.mean(np.concatenate(errs)))


def compose(flows) -> np.ndarray:
    """Accumulate per-slice flows: ``acc += flow_k(x + acc)`` sampled bilinearly.

    Samples beyond the raster take the nearest edge value.
    """
    flows = [np.asarray(f, dtype=np.float64) for f in flows]
    if not flows:
        raise DimensionMismatch("need at least one flow field")
    shape = flows[0].shape
    if any(f.shape != shape for f in flows) or len(shape) != 3 or shape[-1] != 2:
        raise DimensionMismatch("flow fields must share one (H, W, 2) shape")
    xs, ys = pixel_grid(*shape[:2])
    acc = flows[0].copy()
    for f in flows[1:]:
        acc = acc + bilinear_sample(f, xs + acc[..., 0], ys + acc[..., 1], outside="clamp")
    return acc


def flow_to_color(flow, max_mag: float) -> np.ndarray:
    """RGB uint8 rendering: hue encodes direction, saturation the magnitude; zero flow is white."""
    if not max_mag > 0:
        raise ValueError("max_mag must be > 0")
    flow = np.asarray(flow, dtype=np.float64)
    u, v = flow[..., 0], flow[..., 1]
    hue = np.mod(np.arctan2(v, u) / (2 * np.pi), 1.0)
    sat = np.minimum(np.hypot(u, v) / max_mag, 1.0)
    rgb = hsv_to_rgb(hue, sat, np.ones_like(hue))
    return np.round(rgb * 255.0).astype(np.uint8)


def hsv_to_rgb(h, s, v) -> np.ndarray:
    """Vectorized HSV to RGB for arrays in [0, 1]; returns (..., 3) floats."""
    h = np.asarray(h, dtype=np.float64)
    i = np.floor(h * 6.0).astype(np.int64) % 6
    f = h * 6.0 - np.floor(h * 6.0)
    p = v * (1 - s)
    q = v * (1 - s * f)
    t = v * (1 - s * (1 - f))
    choices = [
        np.stack([v, t, p], -1), np.stack([q, v, p], -1), np.stack([p, v, t], -1),
        np.stack([p, q, v], -1), np.stack([t, p, v], -1), np.stack([v, p, q], -1),
    ]
    out = np.zeros(h.shape + (3,))
    for k, c in enumerate(choices):
        out = np.where((i == k)[..., None], c, out)
    return out


def metrics(flow, gt, mask=None, tracks=None, gt_tracks=None) -> MetricsReport:
    flow_, gt_, mask_ = _prepare(flow, gt, mask)
    t = None if tracks is None else tepe(tracks, gt_tracks)
    return MetricsReport(epe(flow_, gt_, mask_), f1_all(flow_, gt_, mask_), t, int(mask_.sum()))
