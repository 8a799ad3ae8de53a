"""Hand-crafted features, bilinear warping and local correlation volumes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .boundary import BoundaryTemplate
from .errors import DimensionMismatch, OutOfBounds, TooSmall
from .event_io import Image, accumulate_polarity
from .interp import bilinear_sample, bilinear_splat, pixel_grid

NORM_GUARD = 1e-8


@dataclass(frozen=True)
class FeatureMap:
    """Per-pixel feature vectors, shape (height, width, channels)."""

    data: np.ndarray

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class CorrelationVolume:
    """Correlation of every pixel with a ``(2r+1)^2`` displacement window.

    ``data[y, x, dy + r, dx + r]`` holds the score for displacement ``(dx, dy)``
    measured from ``base[y, x]``, the flow the second feature map was warped
    with before correlating.
    """

    data: np.ndarray
    radius: int
    base: np.ndarray | None = None

    def __post_init__(self):
        if self.base is None:
            object.__setattr__(self, "base", np.zeros(self.data.shape[:2] + (2,)))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def size(self) -> int:
        return 2 * self.radius + 1

    def displacements(self) -> np.ndarray:
        """``(D, D, 2)`` array of ``(dx, dy)`` offsets matching the window layout."""
        r = np.arange(-self.radius, self.radius + 1, dtype=np.float64)
        dy, dx = np.meshgrid(r, r, indexing="ij")
        return np.stack([dx, dy], axis=-1)

    def window(self, x: int, y: int) -> np.ndarray:
        return self.data[y, x]

    def window_at(self, x: float, y: float) -> np.ndarray:
        """Bilinearly interpolated window at a fractional position (clamped to the raster)."""
        flat = self.data.reshape(self.height, self.width, -1)
        w = bilinear_sample(flat, np.array([x]), np.array([y]), outside="clamp")[0]
        return w.reshape(self.size, self.size)

    def base_at(self, x: float, y: float) -> np.ndarray:
        return bilinear_sample(self.base, np.array([x]), np.array([y]), outside="clamp")[0]

    def peak(self) -> np.ndarray:
        return self.data.reshape(self.height, self.width, -1).max(axis=-1)

    def argmax(self) -> np.ndarray:
        """Integer ``(dx, dy)`` of each window's maximum; ties go to the first in row-major order."""
        idx = self.data.reshape(self.height, self.width, -1).argmax(axis=-1)
        dy, dx = np.divmod(idx, self.size)
        return np.stack([dx, dy], axis=-1) - self.radius

    def with_data(self, data: np.ndarray) -> "CorrelationVolume":
        return CorrelationVolume(np.asarray(data, dtype=np.float64), self.radius, self.base)


def _normalize(feat: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(feat, axis=-1, keepdims=True)
    return np.where(norm < NORM_GUARD, 0.0, feat / np.maximum(norm, NORM_GUARD))


def extract_features(img, levels: int = 3) -> FeatureMap:
    """Unit-length per-pixel features with ``1 + 2 * levels`` channels.

    Channel 0 is the intensity minus its local Gaussian mean.  The remaining
    channels are x/y derivatives of Gaussian-smoothed copies at scales
    ``2**l``, multiplied by ``2**l`` so coarse levels are not drowned out.
    Every scale is kept at full resolution.  Vectors with norm below 1e-8 are
    set to zero, so featureless pixels carry no correlation.
    """
    data = img.data if isinstance(img, Image) else np.asarray(img, dtype=np.float64)
    data = np.asarray(data, dtype=np.float64)
    if levels < 1:
        raise ValueError("levels must be >= 1")
    if data.ndim != 2 or min(data.shape) < 3:
        raise TooSmall("features need a 2-D image of at least 3x3")
    chans = [data - ndimage.gaussian_filter(data, 2.0 ** (levels - 1), mode="nearest")]
    for lev in range(levels):
        s = 2.0 ** lev
        sm = ndimage.gaussian_filter(data, s, mode="nearest")
        gy, gx = np.gradient(sm)
        chans += [s * gx, s * gy]
    feat = np.stack(chans, axis=-1)
    # round-off from the filters leaves ~1e-17 residue on constant images
    feat[np.abs(feat) < 1e-12] = 0.0
    return FeatureMap(_normalize(feat))


def warp(src, flow: np.ndarray):
    """Backward warp: ``out(x) = src(x + flow(x))``, zero outside the raster.

    Accepts a :class:`FeatureMap`, an :class:`Image` or a plain array and
    returns the same kind.
    """
    if isinstance(src, FeatureMap):
        arr = src.data
    elif isinstance(src, Image):
        arr = src.data
    else:
        arr = np.asarray(src, dtype=np.float64)
    flow = np.asarray(flow, dtype=np.float64)
    if flow.shape != arr.shape[:2] + (2,):
        raise DimensionMismatch(f"flow {flow.shape} does not match map {arr.shape[:2]}")
    xs, ys = pixel_grid(*arr.shape[:2])
    out = bilinear_sample(arr, xs + flow[..., 0], ys + flow[..., 1], outside="zero")
    if isinstance(src, FeatureMap):
        return FeatureMap(out)
    if isinstance(src, Image):
        return Image(np.clip(out, 0.0, 1.0), src.t)
    return out


def build_correlation(f1: FeatureMap, f2: FeatureMap, flow: np.ndarray | None = None,
                      radius: int = 4) -> CorrelationVolume:
    """Inner products ``<f1(x), warp(f2, flow)(x + d)>`` for ``|dx|, |dy| <= radius``.

    The warped features are re-normalized, so every value is an inner
    product of unit (or zero) vectors.
    """
    if f1.data.shape != f2.data.shape:
        raise DimensionMismatch(f"feature maps differ: {f1.data.shape} vs {f2.data.shape}")
    if radius < 1:
        raise ValueError("radius must be >= 1")
    h, w = f1.height, f1.width
    flow = np.zeros((h, w, 2)) if flow is None else np.asarray(flow, dtype=np.float64)
    # bilinear blending shortens unit vectors unevenly; restore unit length
    warped = _normalize(warp(f2, flow).data)
    padded = np.pad(warped, ((radius, radius), (radius, radius), (0, 0)))
    size = 2 * radius + 1
    data = np.empty((h, w, size, size))
    for j in range(size):
        for i in range(size):
            shifted = padded[j:j + h, i:i + w]
            data[:, :, j, i] = np.einsum("yxc,yxc->yx", f1.data, shifted)
    return CorrelationVolume(data, radius, flow.copy())


def sample_template(cv: CorrelationVolume, tmpl: BoundaryTemplate) -> list:
    """``[(point, window), ...]`` for every template point, in template order."""
    xs = np.asarray(tmpl.xs, dtype=np.int64)
    ys = np.asarray(tmpl.ys, dtype=np.int64)
    if len(xs) and (xs.min() < 0 or ys.min() < 0 or xs.max() >= cv.width or ys.max() >= cv.height):
        raise OutOfBounds("template point outside the correlation volume")
    return [((int(x), int(y)), cv.data[y, x].copy()) for x, y in zip(xs, ys)]


def event_images(slices, flow: np.ndarray, C: float, support: int = 4) -> list:
    """Event images at the ``T + 1`` slice boundaries.

    Image ``k`` sums ``C * p`` over the events of the ``support`` slices on
    each side of boundary ``k``, each moved along ``flow`` (scaled by its
    time offset from the boundary, as a fraction of the window) and splatted
    bilinearly.  This sharpens the sparse per-slice events into an edge map
    of the scene at the boundary time.
    """
    T = len(slices)
    if T == 0:
        raise DimensionMismatch("need at least one slice")
    if support < 1:
        raise ValueError("support must be >= 1")
    flow = np.asarray(flow, dtype=np.float64)
    h, w = slices[0].height, slices[0].width
    t0, t1 = slices[0].t_start, slices[-1].t_end
    span = t1 - t0
    if flow.shape != (h, w, 2):
        raise DimensionMismatch(f"flow {flow.shape} does not match the sensor {(h, w)}")
    images = []
    for k in range(T + 1):
        tk = t0 + span * k / T
        xs, ys, vals = [], [], []
        for j in range(max(0, k - support), min(T, k + support)):
            s = slices[j]
            if len(s) == 0:
                continue
            f = flow[s.y, s.x] * ((tk - s.t) / span)[:, None]
            xs.append(s.x + f[:, 0])
            ys.append(s.y + f[:, 1])
            vals.append(C * s.p)
        if xs:
            images.append(bilinear_splat((h, w), np.concatenate(xs), np.concatenate(ys), np.concatenate(vals)))
        else:
            images.append(np.zeros((h, w)))
    return images


def aggregate(cv: CorrelationVolume, half: int) -> CorrelationVolume:
    """Average every window over the ``(2*half+1)^2`` neighbouring pixels (edge pixels replicated)."""
    if half <= 0:
        return cv
    size = 2 * half + 1
    return cv.with_data(ndimage.uniform_filter(cv.data, size=(size, size, 1, 1), mode="nearest"))


def event_slice_volumes(slices, flow: np.ndarray, C: float, radius: int = 4, levels: int = 3,
                        support: int = 4, half: int = 3) -> list:
    """One volume per slice, anchored at the reference time.

    Volume ``k`` correlates the event image at the window start with the
    event image at the end of slice ``k``, the latter pre-warped by
    ``flow * (k + 1) / T``.  Every volume is indexed by reference pixel, so
    the window at a pixel describes where that pixel has moved by the end of
    the slice and a trajectory is read at one fixed location.  Windows are
    averaged over ``(2*half+1)^2`` pixels because single-pixel event
    correlations are dominated by threshold quantization.
    """
    T = len(slices)
    flow = np.asarray(flow, dtype=np.float64)
    images = event_images(slices, flow, C, support)
    ref = extract_features(images[0], levels)
    return [aggregate(build_correlation(ref, extract_features(images[k + 1], levels), flow * (k + 1) / T,
                                        radius), half)
            for k in range(T)]


def evidence_features(img: np.ndarray, levels: int = 3) -> FeatureMap:
    """Features of a sparse event image, zeroed wherever no event fired.

    Smoothing would otherwise spread a handful of events into dense
    features the sensor never reported.
    """
    img = np.asarray(img, dtype=np.float64)
    feat = extract_features(img, levels).data.copy()
    feat[img == 0] = 0.0
    return FeatureMap(feat)


def slice_pair_volumes(slices, flow: np.ndarray, C: float, radius: int = 4, levels: int = 3) -> list:
    """Volumes between consecutive single-slice polarity images (``T - 1`` of them).

    The second image of each pair is pre-warped by ``flow / T``.  These show
    how little spatial evidence one slice carries on its own.
    """
    T = len(slices)
    flow = np.asarray(flow, dtype=np.float64)
    feats = [evidence_features(accumulate_polarity(s, C), levels) for s in slices]
    return [build_correlation(feats[k], feats[k + 1], flow / T, radius) for k in range(T - 1)]
