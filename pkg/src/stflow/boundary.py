"""Boundary maps, boundary-quality probabilities, and the reference template."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import BadProbability, BadThresholds, BinMismatch, DimensionMismatch, EmptyTemplate
from .event_io import EventStream
from .gradient import (Distribution, event_temporal_gradient, frame_temporal_gradient, gradient_similarity,
                       make_distribution, patch_origins)

EPS = 1e-8

# neighbour offsets (dy, dx) along each quantized gradient axis: 0 deg, 45 deg, 90 deg, 135 deg
_AXES = ((0, 1), (1, 1), (1, 0), (1, -1))


@dataclass(frozen=True)
class BoundaryTemplate:
    """Reference boundary points in row-major order."""

    xs: np.ndarray
    ys: np.ndarray
    probs: np.ndarray
    classes: np.ndarray

    def __len__(self) -> int:
        return len(self.xs)

    @property
    def points(self) -> np.ndarray:
        return np.stack([self.xs, self.ys], axis=1).astype(np.float64)

    @classmethod
    def from_points(cls, points, probs=None, classes=None):
        pts = np.asarray(points, dtype=np.int64).reshape(-1, 2)
        n = len(pts)
        probs = np.ones(n) if probs is None else np.asarray(probs, dtype=np.float64)
        classes = np.zeros(n, dtype=np.int64) if classes is None else np.asarray(classes, dtype=np.int64)
        return cls(pts[:, 0], pts[:, 1], probs, classes)

    def subset(self, idx) -> "BoundaryTemplate":
        return BoundaryTemplate(self.xs[idx], self.ys[idx], self.probs[idx], self.classes[idx])


def canny(img: np.ndarray, sigma: float = 1.4, lo: float = 0.1, hi: float = 0.3) -> np.ndarray:
    """Canny edges as a {0, 1} uint8 map.

    ``lo`` and ``hi`` are fractions of the maximum gradient magnitude.  Along
    each gradient axis a pixel survives non-maximum suppression if it is
    ``>=`` its backward neighbour and ``>`` its forward neighbour, so a
    plateau of two equal responses keeps exactly one pixel.
    """
    if not (0 < lo < hi <= 1):
        raise BadThresholds(f"need 0 < lo < hi <= 1, got lo={lo}, hi={hi}")
    img = np.asarray(img, dtype=np.float64)
    sm = ndimage.gaussian_filter(img, sigma, mode="nearest") if sigma > 0 else img
    gx = ndimage.sobel(sm, axis=1, mode="nearest")
    gy = ndimage.sobel(sm, axis=0, mode="nearest")
    mag = np.hypot(gx, gy)
    top = mag.max()
    if top <= 1e-12:
        return np.zeros(img.shape, dtype=np.uint8)

    ang = np.mod(np.degrees(np.arctan2(gy, gx)), 180.0)
    sector = np.mod(np.rint(ang / 45.0).astype(np.int64), 4)
    padded = np.pad(mag, 1, mode="constant")
    h, w = mag.shape
    keep = np.zeros(mag.shape, dtype=bool)
    for k, (dy, dx) in enumerate(_AXES):
        fwd = padded[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
        bwd = padded[1 - dy:1 - dy + h, 1 - dx:1 - dx + w]
        keep |= (sector == k) & (mag >= bwd) & (mag > fwd)
    thin = np.where(keep, mag, 0.0)

    strong = thin >= hi * top
    weak = thin >= lo * top
    labels, n = ndimage.label(weak, structure=np.ones((3, 3)))
    if n == 0:
        return np.zeros(img.shape, dtype=np.uint8)
    hit = np.zeros(n + 1, dtype=bool)
    hit[np.unique(labels[strong])] = True
    hit[0] = False
    return _thin_corners(hit[labels]).astype(np.uint8)


# 3x3 neighbourhood offsets in clockwise order starting north
_RING = ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1))


def _thin_corners(edges: np.ndarray) -> np.ndarray:
    """Drop staircase corner pixels so boundaries are 8-connected and one pixel thin.

    A pixel is dropped when two of its 4-neighbours that touch each other
    diagonally are set (an L corner) and its remaining neighbours stay one
    8-connected group without it.  Raster order, updated in place.
    """
    e = np.pad(edges.astype(bool), 1)
    for y, x in zip(*np.nonzero(e)):
        nb = [e[y + dy, x + dx] for dy, dx in _RING]
        corner = any(nb[i] and nb[(i + 2) % 8] for i in (0, 2, 4, 6))
        if corner and sum(nb) >= 2 and _groups(nb) == 1:
            e[y, x] = False
    return e[1:-1, 1:-1]


def _groups(nb) -> int:
    """Number of 8-connected groups among the set neighbours of a pixel."""
    n = len(nb)
    seen = [False] * n
    groups = 0
    for i in range(n):
        if not nb[i] or seen[i]:
            continue
        groups += 1
        stack = [i]
        seen[i] = True
        while stack:
            j = stack.pop()
            # ring neighbours touch if adjacent in the ring; edge-midpoints also touch two steps away
            cand = [(j - 1) % n, (j + 1) % n]
            if j % 2 == 0:
                cand += [(j - 2) % n, (j + 2) % n]
            for c in cand:
                if nb[c] and not seen[c]:
                    seen[c] = True
                    stack.append(c)
    return groups


def project_events_boundary(stream: EventStream, n_min: int = 1) -> np.ndarray:
    """Pixels that saw at least ``n_min`` events in the window."""
    counts = np.zeros((stream.height, stream.width), dtype=np.int64)
    np.add.at(counts, (stream.y, stream.x), 1)
    return (counts >= n_min).astype(np.uint8)


def boundary_patch_distances(bf: np.ndarray, be: np.ndarray, win: int = 16, stride: int = 8) -> np.ndarray:
    return gradient_similarity(np.asarray(bf, dtype=np.float64), np.asarray(be, dtype=np.float64), win, stride)


def _smooth(mass: np.ndarray, eps: float) -> np.ndarray:
    m = np.asarray(mass, dtype=np.float64) + eps
    return m / m.sum()


def kl_divergence(p, p0, eps: float = EPS) -> float:
    """``sum p log(p / p0)`` after adding ``eps`` to every bin and renormalizing."""
    p = p.mass if isinstance(p, Distribution) else np.asarray(p, dtype=np.float64)
    p0 = p0.mass if isinstance(p0, Distribution) else np.asarray(p0, dtype=np.float64)
    if p.shape != p0.shape:
        raise BinMismatch(f"{p.shape} vs {p0.shape}")
    ps, qs = _smooth(p, eps), _smooth(p0, eps)
    return float(max(np.sum(ps * np.log(ps / qs)), 0.0))


def classify_boundary(prob, K: int = 10) -> np.ndarray:
    """Class ``min(floor((1 - prob) * K), K - 1)``; class 0 is the normal boundary."""
    prob = np.asarray(prob, dtype=np.float64)
    if K < 2:
        raise BadProbability("K must be >= 2")
    if not np.all((prob >= 0) & (prob <= 1)):
        raise BadProbability("probabilities must lie in [0, 1]")
    # 1e-9 keeps exact bin edges such as prob=0.9 from rounding down a class
    cls = np.floor((1.0 - prob) * K + 1e-9).astype(np.int64)
    return np.minimum(cls, K - 1)


def cross_entropy(pred: np.ndarray, labels: np.ndarray, eps: float = EPS) -> float:
    """Mean of ``-log(pred[label])`` over pixels; ``pred`` has shape (..., K)."""
    pred = np.asarray(pred, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if pred.shape[:-1] != labels.shape:
        raise BinMismatch(f"pred {pred.shape} vs labels {labels.shape}")
    K = pred.shape[-1]
    if labels.size and (labels.min() < 0 or labels.max() >= K):
        raise BinMismatch(f"labels must lie in [0, {K - 1}]")
    picked = np.take_along_axis(pred, labels[..., None], axis=-1)[..., 0]
    return float(np.mean(-np.log(np.maximum(picked, eps))))


def one_hot_probs(prob: np.ndarray, K: int = 10, sharpness: float = 20.0) -> np.ndarray:
    """Per-pixel class distribution: softmax over classes of the distance to the pixel's own bin.

    Class centres sit at ``1 - (k + 0.5) / K`` on the probability axis.
    """
    prob = np.asarray(prob, dtype=np.float64)
    centres = 1.0 - (np.arange(K) + 0.5) / K
    logits = -sharpness * K * np.abs(prob[..., None] - centres)
    logits -= logits.max(axis=-1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=-1, keepdims=True)


def patch_probability(dist: np.ndarray, shape, win: int = 16, stride: int = 8, tau: float = 0.1) -> np.ndarray:
    """Spread per-patch probabilities ``exp(-d / tau)`` to pixels.

    Each pixel takes the mean over the patches covering it; pixels no patch
    covers take the nearest patch's value.
    """
    dist = np.asarray(dist, dtype=np.float64)
    origins = patch_origins(shape, win, stride)
    if len(origins) != len(dist):
        raise DimensionMismatch("distance list does not match the patch grid")
    probs = np.exp(-dist / tau)
    acc = np.zeros(shape)
    cnt = np.zeros(shape)
    for (y, x), pr in zip(origins, probs):
        acc[y:y + win, x:x + win] += pr
        cnt[y:y + win, x:x + win] += 1
    out = np.divide(acc, cnt, out=np.zeros(shape), where=cnt > 0)
    if (cnt == 0).any():
        _, (iy, ix) = ndimage.distance_transform_edt(cnt == 0, return_indices=True)
        out = out[iy, ix]
    return out


def build_template(bf: np.ndarray, be: np.ndarray, prob_map: np.ndarray, threshold: float = 0.5,
                   K: int = 10) -> BoundaryTemplate:
    """Boundary pixels (frame or event) whose probability reaches ``threshold``, row-major."""
    if not 0 < threshold < 1:
        raise BadThresholds("template threshold must lie in (0, 1)")
    bf = np.asarray(bf)
    be = np.asarray(be)
    prob_map = np.asarray(prob_map, dtype=np.float64)
    if not (bf.shape == be.shape == prob_map.shape):
        raise DimensionMismatch("boundary maps and probability map differ in shape")
    keep = ((bf > 0) | (be > 0)) & (prob_map >= threshold)
    ys, xs = np.nonzero(keep)
    if len(xs) == 0:
        raise EmptyTemplate(f"no boundary point has probability >= {threshold}")
    probs = prob_map[ys, xs]
    return BoundaryTemplate(xs.astype(np.int64), ys.astype(np.int64), probs, classify_boundary(probs, K))


def consistency_kl(frame: np.ndarray, stream: EventStream, slices, flow: np.ndarray, C: float,
                   win: int = 16, stride: int = 8, bins: int = 32, hi: float = 2.0,
                   sigma: float = 1.4) -> float:
    """KL divergence between the boundary-patch and gradient-patch distance histograms.

    Both gradient maps are expressed in units of the contrast threshold ``C`` so
    that the two distance lists share the range ``[0, hi]``.  Small values mean
    the frame agrees with the events equally well in both spaces.
    """
    gf = frame_temporal_gradient(frame, flow) / C
    ge = event_temporal_gradient(slices, flow, C) / C
    gd = gradient_similarity(gf, ge, win, stride)
    bd = boundary_patch_distances(canny(frame, sigma), project_events_boundary(stream), win, stride)
    return kl_divergence(make_distribution(bd, bins, 0.0, hi), make_distribution(gd, bins, 0.0, hi))


def degradation_labels(blur: np.ndarray, K: int = 10, scale: float = 1.0) -> np.ndarray:
    """Pre-classified boundary labels from a per-pixel blur length (pixels).

    The blur is mapped to a quality ``exp(-blur / scale)`` and binned like any
    other boundary probability, so sharp pixels get class 0.
    """
    blur = np.asarray(blur, dtype=np.float64)
    if not scale > 0:
        raise BadProbability("scale must be > 0")
    return classify_boundary(np.exp(-np.maximum(blur, 0.0) / scale), K)
