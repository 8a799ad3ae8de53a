"""Common spatiotemporal gradient space for frames and events.

Frames express the temporal brightness change through the linearised
constancy model ``I_t = -grad(I) . U``; events express it directly as the
signed, threshold-scaled event count after warping each event back to the
reference time along the flow.  Both land on the same per-pixel map, which is
what makes the two modalities comparable patch by patch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import BadRange, BadWindow, DimensionMismatch, TooSmall
from .event_io import EventStream
from .interp import bilinear_splat


@dataclass(frozen=True)
class GradientPair:
    ix: np.ndarray
    iy: np.ndarray


@dataclass(frozen=True)
class Distribution:
    edges: np.ndarray
    mass: np.ndarray

    @property
    def bins(self) -> int:
        return len(self.mass)


def spatial_gradient(img: np.ndarray) -> GradientPair:
    """Central differences inside, one-sided differences on the border."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or min(img.shape) < 3:
        raise TooSmall("spatial_gradient needs a 2-D image of at least 3x3")
    iy, ix = np.gradient(img)
    return GradientPair(ix, iy)


def _check_flow(shape, flow: np.ndarray) -> np.ndarray:
    flow = np.asarray(flow, dtype=np.float64)
    if flow.shape != tuple(shape) + (2,):
        raise DimensionMismatch(f"flow shape {flow.shape} does not match image {tuple(shape)}")
    return flow


def frame_temporal_gradient(img: np.ndarray, flow: np.ndarray) -> np.ndarray:
    """``-(ix*u + iy*v)``: brightness change over the window predicted by the flow."""
    img = np.asarray(img, dtype=np.float64)
    flow = _check_flow(img.shape, flow)
    g = spatial_gradient(img)
    return -(g.ix * flow[..., 0] + g.iy * flow[..., 1])


def event_temporal_gradient(slices: Sequence[EventStream], flow: np.ndarray, C: float) -> np.ndarray:
    """Warp every event to the reference time and accumulate ``C * p`` bilinearly.

    An event in slice ``k`` of ``T`` is moved back by ``flow * (k + 0.5) / T``
    (flow sampled at the event pixel).
    """
    T = len(slices)
    if T == 0:
        raise DimensionMismatch("need at least one slice")
    h, w = slices[0].height, slices[0].width
    flow = _check_flow((h, w), flow)
    xs, ys, vals = [], [], []
    for k, s in enumerate(slices):
        if (s.height, s.width) != (h, w):
            raise DimensionMismatch("slices differ in sensor size")
        if len(s) == 0:
            continue
        frac = (k + 0.5) / T
        f = flow[s.y, s.x]
        xs.append(s.x - frac * f[:, 0])
        ys.append(s.y - frac * f[:, 1])
        vals.append(s.p * C)
    if not xs:
        return np.zeros((h, w))
    return bilinear_splat((h, w), np.concatenate(xs), np.concatenate(ys), np.concatenate(vals))


def patch_view(a: np.ndarray, win: int, stride: int) -> np.ndarray:
    """Window patches in row-major order, shape ``(n_patches, win, win)``."""
    v = sliding_window_view(a, (win, win))[::stride, ::stride]
    return v.reshape(-1, win, win)


def patch_origins(shape, win: int, stride: int) -> np.ndarray:
    """Top-left ``(y, x)`` of every window, matching :func:`patch_view` order."""
    h, w = shape
    ys = np.arange(0, h - win + 1, stride)
    xs = np.arange(0, w - win + 1, stride)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return np.stack([yy.ravel(), xx.ravel()], axis=1)


def gradient_similarity(gf: np.ndarray, ge: np.ndarray, win: int = 16, stride: int = 8) -> np.ndarray:
    """RMS difference between corresponding ``win`` x ``win`` patches (smaller = more similar)."""
    gf = np.asarray(gf, dtype=np.float64)
    ge = np.asarray(ge, dtype=np.float64)
    if gf.shape != ge.shape or gf.ndim != 2:
        raise DimensionMismatch("maps must be 2-D with equal shape")
    if win < 1 or stride < 1 or win > min(gf.shape):
        raise BadWindow(f"window {win} (stride {stride}) does not fit {gf.shape}")
    d = patch_view(gf - ge, win, stride)
    return np.sqrt(np.mean(d * d, axis=(1, 2)))


def make_distribution(values, bins: int = 32, lo: float = 0.0, hi: float = 0.5) -> Distribution:
    """Normalized equal-width histogram; out-of-range values land in the edge bins.

    An empty input gives the uniform distribution.
    """
    if bins < 1 or not lo < hi:
        raise BadRange(f"need bins >= 1 and lo < hi, got bins={bins}, [{lo}, {hi}]")
    edges = np.linspace(lo, hi, bins + 1)
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        return Distribution(edges, np.full(bins, 1.0 / bins))
    idx = np.floor((values - lo) / (hi - lo) * bins).astype(np.int64)
    counts = np.bincount(np.clip(idx, 0, bins - 1), minlength=bins).astype(np.float64)
    return Distribution(edges, counts / counts.sum())
