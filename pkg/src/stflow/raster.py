"""Binary float raster files.

Layout (little endian): ``b"STFL"``, width and height as uint32, then the
u-plane and the v-plane as float32 in row-major order.  Scalar maps are stored
with an all-zero v-plane.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .errors import StflowError

MAGIC = b"STFL"


def encode_flow(flow: np.ndarray) -> bytes:
    flow = np.asarray(flow)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise StflowError("flow must have shape (height, width, 2)")
    h, w = flow.shape[:2]
    planes = np.ascontiguousarray(np.moveaxis(flow, 2, 0), dtype="<f4")
    return MAGIC + struct.pack("<II", w, h) + planes.tobytes()


def decode_flow_bytes(buf: bytes) -> np.ndarray:
    if len(buf) < 12 or buf[:4] != MAGIC:
        raise StflowError("not an STFL raster")
    w, h = struct.unpack("<II", buf[4:12])
    n = 2 * w * h * 4
    if len(buf) != 12 + n:
        raise StflowError(f"STFL payload is {len(buf) - 12} bytes, expected {n}")
    planes = np.frombuffer(buf, dtype="<f4", offset=12).reshape(2, h, w)
    return np.moveaxis(planes, 0, 2).astype(np.float64)


def write_flow(path: str | os.PathLike, flow: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_flow(flow))


def read_flow(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_flow_bytes(fh.read())


def write_scalar(path: str | os.PathLike, data: np.ndarray) -> None:
    data = np.asarray(data, dtype=np.float64)
    write_flow(path, np.stack([data, np.zeros_like(data)], axis=-1))


def read_scalar(path: str | os.PathLike) -> np.ndarray:
    return read_flow(path)[..., 0]
