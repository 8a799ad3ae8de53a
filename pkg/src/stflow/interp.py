"""Bilinear sampling and splatting on (height, width[, channels]) rasters."""

from __future__ import annotations

import numpy as np


def bilinear_sample(arr: np.ndarray, xs: np.ndarray, ys: np.ndarray, outside: str = "zero") -> np.ndarray:
    """Sample ``arr`` at fractional ``(xs, ys)``.

    ``outside="zero"`` treats every pixel beyond the raster as 0, so a sample
    half outside gets a partial value.  ``outside="clamp"`` clamps coordinates
    to the raster first.
    """
    arr = np.asarray(arr, dtype=np.float64)
    h, w = arr.shape[:2]
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if outside == "clamp":
        xs = np.clip(xs, 0, w - 1)
        ys = np.clip(ys, 0, h - 1)
    elif outside != "zero":
        raise ValueError(f"unknown outside mode {outside!r}")

    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    fx = xs - x0
    fy = ys - y0
    out = np.zeros(xs.shape + arr.shape[2:])
    for dy, wy in ((0, 1 - fy), (1, fy)):
        for dx, wx in ((0, 1 - fx), (1, fx)):
            xi = x0 + dx
            yi = y0 + dy
            ok = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            wgt = np.where(ok, wx * wy, 0.0)
            vals = arr[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
            if arr.ndim > 2:
                wgt = wgt[..., None]
            out += wgt * vals
    return out


def bilinear_splat(shape: tuple, xs: np.ndarray, ys: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Scatter ``values`` at fractional positions onto a zero raster; mass outside is dropped."""
    h, w = shape
    out = np.zeros((h, w))
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    fx = xs - x0
    fy = ys - y0
    for dy, wy in ((0, 1 - fy), (1, fy)):
        for dx, wx in ((0, 1 - fx), (1, fx)):
            xi = x0 + dx
            yi = y0 + dy
            ok = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            np.add.at(out, (yi[ok], xi[ok]), (wx * wy * values)[ok])
    return out


def pixel_grid(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    """``(xs, ys)`` coordinate arrays of shape ``(h, w)``."""
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    return xs, ys
