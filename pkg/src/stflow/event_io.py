"""Event streams, frame sequences, and polarity accumulation.

Events are held column-wise (parallel numpy arrays) rather than as a list of
objects; ``EventStream`` still iterates as ``Event`` tuples for convenience.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Sequence

import numpy as np
from PIL import Image as PILImage

from .errors import (
    BadPolarity,
    DimensionMismatch,
    EmptyInterval,
    MalformedHeader,
    OutOfBounds,
    StflowError,
    UnsortedTimestamps,
)


class Event(NamedTuple):
    t: float
    x: int
    y: int
    p: int


@dataclass(frozen=True)
class EventStream:
    """Time-ordered polarity events on a ``width`` x ``height`` sensor."""

    width: int
    height: int
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray
    t_start: float = 0.0
    t_end: float = 0.0

    def __post_init__(self):
        t = np.ascontiguousarray(self.t, dtype=np.float64).reshape(-1)
        x = np.ascontiguousarray(self.x, dtype=np.int64).reshape(-1)
        y = np.ascontiguousarray(self.y, dtype=np.int64).reshape(-1)
        p = np.ascontiguousarray(self.p, dtype=np.int64).reshape(-1)
        if not (len(t) == len(x) == len(y) == len(p)):
            raise DimensionMismatch("event columns have different lengths")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "p", p)
        _validate(self)

    @classmethod
    def empty(cls, width: int, height: int, t_start: float = 0.0, t_end: float = 0.0):
        z = np.zeros(0)
        return cls(width, height, z, z, z, z, t_start, t_end)

    @classmethod
    def from_events(cls, events: Sequence[Event], width: int, height: int,
                    t_start: float | None = None, t_end: float | None = None):
        arr = np.array([tuple(e) for e in events], dtype=np.float64).reshape(-1, 4)
        t = arr[:, 0]
        if t_start is None:
            t_start = float(t[0]) if len(t) else 0.0
        if t_end is None:
            t_end = float(t[-1]) if len(t) else 0.0
        return cls(width, height, t, arr[:, 1], arr[:, 2], arr[:, 3], t_start, t_end)

    def __len__(self) -> int:
        return len(self.t)

    def __iter__(self) -> Iterator[Event]:
        for i in range(len(self.t)):
            yield Event(float(self.t[i]), int(self.x[i]), int(self.y[i]), int(self.p[i]))

    def select(self, mask: np.ndarray, t_start: float, t_end: float) -> "EventStream":
        return EventStream(self.width, self.height, self.t[mask], self.x[mask],
                           self.y[mask], self.p[mask], t_start, t_end)


def _validate(s: EventStream) -> None:
    if s.width < 1 or s.height < 1:
        raise MalformedHeader(f"bad sensor size {s.width}x{s.height}")
    if len(s.t) == 0:
        return
    bad = (s.x < 0) | (s.x >= s.width) | (s.y < 0) | (s.y >= s.height)
    if bad.any():
        i = int(np.argmax(bad))
        raise OutOfBounds(f"event {i} at ({s.x[i]},{s.y[i]}) outside {s.width}x{s.height}")
    if not np.isin(s.p, (-1, 1)).all():
        raise BadPolarity("polarity must be +1 or -1")
    if (np.diff(s.t) < 0).any():
        raise UnsortedTimestamps("event timestamps decrease")
    if not np.isfinite(s.t).all() or s.t[0] < 0:
        raise StflowError("event timestamps must be finite and non-negative")
    if s.t[0] < s.t_start or s.t[-1] > s.t_end:
        raise StflowError("events fall outside [t_start, t_end]")


def parse_events(text: str) -> EventStream:
    """Parse the ``# <width> <height>`` header plus ``t x y p`` lines."""
    lines = text.splitlines()
    if not lines or not lines[0].startswith("#"):
        raise MalformedHeader("first line must be '# <width> <height>'")
    head = lines[0][1:].split()
    try:
        width, height = (int(v) for v in head)
    except ValueError:
        raise MalformedHeader(f"bad header {lines[0]!r}") from None
    if width < 1 or height < 1:
        raise MalformedHeader(f"bad sensor size in {lines[0]!r}")

    rows = []
    for n, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 4:
            raise StflowError(f"line {n}: expected 't x y p', got {line!r}")
        t, x, y, p = float(parts[0]), int(parts[1]), int(parts[2]), int(parts[3])
        if not (0 <= x < width and 0 <= y < height):
            raise OutOfBounds(f"line {n}: ({x},{y}) outside {width}x{height}")
        if p not in (-1, 1):
            raise BadPolarity(f"line {n}: polarity {p}")
        if rows and t < rows[-1][0]:
            raise UnsortedTimestamps(f"line {n}: t={t} after t={rows[-1][0]}")
        rows.append((t, x, y, p))
    return EventStream.from_events(rows, width, height)


def serialize_events(stream: EventStream) -> str:
    out = [f"# {stream.width} {stream.height}"]
    out.extend(f"{e.t!r} {e.x} {e.y} {e.p}" for e in stream)
    return "\n".join(out) + "\n"


def read_events(path: str | os.PathLike) -> EventStream:
    with open(path) as fh:
        return parse_events(fh.read())


def write_events(path: str | os.PathLike, stream: EventStream) -> None:
    with open(path, "w") as fh:
        fh.write(serialize_events(stream))


def slice_events(stream: EventStream, t0: float, t1: float, T: int) -> list[EventStream]:
    """Split ``[t0, t1]`` into ``T`` equal slices.

    Slices are half-open ``[a, b)`` except the last, which is closed, so the
    union of all slices is exactly the events inside ``[t0, t1]``.
    """
    if not t0 < t1:
        raise EmptyInterval(f"t0={t0} must be < t1={t1}")
    if T < 1:
        raise StflowError("T must be >= 1")
    edges = [t0 + k * (t1 - t0) / T for k in range(T)] + [t1]
    out = []
    for k in range(T):
        a, b = edges[k], edges[k + 1]
        if k == T - 1:
            mask = (stream.t >= a) & (stream.t <= b)
        else:
            mask = (stream.t >= a) & (stream.t < b)
        out.append(stream.select(mask, a, b))
    return out


def accumulate_polarity(events: EventStream, C: float) -> np.ndarray:
    """Signed event count per pixel times ``C``; shape ``(height, width)``."""
    if not C > 0:
        raise StflowError("C must be positive")
    acc = np.zeros((events.height, events.width))
    np.add.at(acc, (events.y, events.x), events.p.astype(np.float64))
    return acc * C


@dataclass(frozen=True)
class Image:
    """Grayscale raster with intensities in [0, 1] and a timestamp."""

    data: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim != 2:
            raise DimensionMismatch("image data must be 2-D (height, width)")
        if not np.isfinite(d).all() or d.min(initial=0) < 0 or d.max(initial=0) > 1:
            raise StflowError("image intensities must lie in [0, 1]")
        object.__setattr__(self, "data", d)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class FrameSequence:
    frames: tuple = field(default_factory=tuple)

    def __post_init__(self):
        frames = tuple(self.frames)
        object.__setattr__(self, "frames", frames)
        if frames:
            shape = frames[0].data.shape
            if any(f.data.shape != shape for f in frames):
                raise DimensionMismatch("frames differ in size")
            ts = [f.t for f in frames]
            if any(b <= a for a, b in zip(ts, ts[1:])):
                raise StflowError("frame timestamps must strictly increase")

    def __len__(self) -> int:
        return len(self.frames)

    def __getitem__(self, i):
        return self.frames[i]

    def __iter__(self):
        return iter(self.frames)


def load_png(path: str | os.PathLike, t: float = 0.0) -> Image:
    """Read an 8-bit grayscale PNG, mapping 0..255 linearly onto [0, 1]."""
    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
    return Image(arr, t)


def save_png(path: str | os.PathLike, data: np.ndarray) -> None:
    arr = np.clip(np.rint(np.asarray(data) * 255.0), 0, 255).astype(np.uint8)
    PILImage.fromarray(arr).save(path)


def read_manifest(path: str | os.PathLike) -> FrameSequence:
    """Load frames listed as ``<png path> <timestamp>`` lines (paths relative to the manifest)."""
    base = os.path.dirname(os.fspath(path))
    frames = []
    with open(path) as fh:
        for n, line in enumerate(fh, start=1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise StflowError(f"manifest line {n}: expected 'path timestamp'")
            frames.append(load_png(os.path.join(base, parts[0]), float(parts[1])))
    return FrameSequence(frames)


def write_manifest(path: str | os.PathLike, frames: FrameSequence, prefix: str = "frame") -> None:
    base = os.path.dirname(os.fspath(path))
    lines = []
    for i, f in enumerate(frames):
        name = f"{prefix}_{i:03d}.png"
        save_png(os.path.join(base, name), f.data)
        lines.append(f"{name} {f.t!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
