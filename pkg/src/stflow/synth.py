"""Synthetic frame/event/ground-truth scenes for desk-scale verification.

A procedural texture moves under an analytic motion field.  Frames are
bilinear renders of the moved texture; events come from a linear-intensity
threshold model: a pixel fires whenever its intensity has moved a full ``C``
away from the level of its last event, with the timestamp interpolated
linearly inside the sampling substep.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .errors import InvalidSpec
from .event_io import EventStream, FrameSequence, Image, slice_events
from .interp import bilinear_sample, pixel_grid

TEXTURES = ("noise", "blobs", "flat", "ramp", "disk", "step")
MOTIONS = ("translation", "rotation", "two_region")


@dataclass(frozen=True)
class SceneSpec:
    width: int = 64
    height: int = 64
    texture: str = "noise"
    seed: int = 0
    motion: str = "translation"
    # total displacement over [0, duration], pixels
    flow: tuple = (3.0, 0.0)
    # second region (right half) for two_region scenes
    flow_b: tuple = (-3.0, 0.0)
    # total rotation about the image center, radians
    angle: float = 0.0
    T: int = 20
    duration: float = 1.0
    C: float = 0.05
    n_frames: int = 2
    noise_sigma: float = 2.0
    contrast: float = 0.8
    ramp_slope: float = 0.1
    ramp_offset: float = 0.2
    # render substeps per slice for event synthesis; 0 picks from the motion speed
    substeps: int = 0
    # fraction of the window simulated before t0 so reference levels are settled; its events are dropped
    preroll: float = 0.0

    def validate(self) -> None:
        if self.width < 3 or self.height < 3:
            raise InvalidSpec("scene must be at least 3x3")
        if self.T < 1:
            raise InvalidSpec("T must be >= 1")
        if not self.duration > 0:
            raise InvalidSpec("duration must be > 0")
        if not self.C > 0:
            raise InvalidSpec("C must be > 0")
        if self.n_frames < 2:
            raise InvalidSpec("n_frames must be >= 2")
        if self.texture not in TEXTURES:
            raise InvalidSpec(f"unknown texture {self.texture!r}; choose from {TEXTURES}")
        if self.motion not in MOTIONS:
            raise InvalidSpec(f"unknown motion {self.motion!r}; choose from {MOTIONS}")
        if self.substeps < 0:
            raise InvalidSpec("substeps must be >= 0")
        if not self.noise_sigma > 0:
            raise InvalidSpec("noise_sigma must be > 0")
        if self.preroll < 0:
            raise InvalidSpec("preroll must be >= 0")


@dataclass(frozen=True)
class Motion:
    """Analytic motion field; ``s`` is the time fraction of the window (0 at t0, 1 at t1)."""

    kind: str
    flow: tuple
    flow_b: tuple
    angle: float
    width: int
    height: int

    @property
    def center(self) -> tuple[float, float]:
        return (self.width - 1) / 2.0, (self.height - 1) / 2.0

    def region(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        """Region label (0 or 1) of image positions; only two_region scenes use label 1."""
        if self.kind != "two_region":
            return np.zeros(np.shape(xs), dtype=np.int64)
        return (np.asarray(xs) >= self.width / 2.0).astype(np.int64)

    def _region_flow(self, xs, ys):
        lab = self.region(xs, ys)
        u = np.where(lab == 1, self.flow_b[0], self.flow[0])
        v = np.where(lab == 1, self.flow_b[1], self.flow[1])
        return u, v

    def forward(self, xs, ys, s):
        """Position at time ``s`` of the scene point located at ``(xs, ys)`` when s=0."""
        xs = np.asarray(xs, dtype=np.float64)
        ys = np.asarray(ys, dtype=np.float64)
        if self.kind == "rotation":
            cx, cy = self.center
            a = self.angle * s
            dx, dy = xs - cx, ys - cy
            return cx + math.cos(a) * dx - math.sin(a) * dy, cy + math.sin(a) * dx + math.cos(a) * dy
        if self.kind == "two_region":
            u, v = self._region_flow(xs, ys)
            return xs + s * u, ys + s * v
        return xs + s * self.flow[0], ys + s * self.flow[1]

    def backward(self, xs, ys, s):
        """Texture coordinate visible at image position ``(xs, ys)`` at time ``s``."""
        xs = np.asarray(xs, dtype=np.float64)
        ys = np.asarray(ys, dtype=np.float64)
        if self.kind == "rotation":
            cx, cy = self.center
            a = -self.angle * s
            dx, dy = xs - cx, ys - cy
            return cx + math.cos(a) * dx - math.sin(a) * dy, cy + math.sin(a) * dx + math.cos(a) * dy
        if self.kind == "two_region":
            u, v = self._region_flow(xs, ys)
            return xs - s * u, ys - s * v
        return xs - s * self.flow[0], ys - s * self.flow[1]

    def max_speed(self) -> float:
        """Largest displacement magnitude over the whole window, pixels."""
        if self.kind == "rotation":
            r = math.hypot(self.width / 2.0, self.height / 2.0)
            return abs(self.angle) * r
        speeds = [math.hypot(*self.flow)]
        if self.kind == "two_region":
            speeds.append(math.hypot(*self.flow_b))
        return max(speeds)


class Texture:
    """Texture raster padded by ``margin`` pixels on every side, sampled bilinearly."""

    def __init__(self, spec: SceneSpec, margin: int):
        self.margin = margin
        h = spec.height + 2 * margin
        w = spec.width + 2 * margin
        ys, xs = np.mgrid[0:h, 0:w].astype(np.float64) - margin
        if spec.texture == "flat":
            tex = np.full((h, w), 0.5)
        elif spec.texture == "ramp":
            tex = spec.ramp_offset + spec.ramp_slope * xs
        elif spec.texture == "disk":
            cx, cy = (spec.width - 1) / 2.0, (spec.height - 1) / 2.0
            r = min(spec.width, spec.height) / 4.0
            tex = np.where(np.hypot(xs - cx, ys - cy) <= r, 0.9, 0.1)
        elif spec.texture == "step":
            tex = np.where(xs >= spec.width // 2, 0.9, 0.1)
        else:
            rng = np.random.default_rng(spec.seed)
            g = ndimage.gaussian_filter(rng.random((h, w)), spec.noise_sigma, mode="wrap")
            g = (g - g.min()) / (g.max() - g.min())
            if spec.texture == "blobs":
                # two-level texture: sharp boundaries around smooth-noise level sets
                g = (g > np.median(g)).astype(np.float64)
            tex = 0.5 + spec.contrast * (g - 0.5)
        self.data = tex

    def sample(self, xs, ys) -> np.ndarray:
        m = self.margin
        return bilinear_sample(self.data, np.asarray(xs) + m, np.asarray(ys) + m, outside="clamp")


@dataclass
class SynthBundle:
    spec: SceneSpec
    frames: FrameSequence
    events: EventStream
    slices: list
    gt_flow_total: np.ndarray
    gt_flow_slices: np.ndarray
    regions: np.ndarray
    motion: Motion
    texture: Texture = field(repr=False)
    blur_len: int = 1
    drop: int = 1
    # blur render spacing as a fraction of the window
    blur_step: float = 0.05

    @property
    def T(self) -> int:
        return self.spec.T

    def render(self, s: float) -> np.ndarray:
        return render(self.motion, self.texture, self.spec, s)

    def gt_tracks(self, points: np.ndarray) -> np.ndarray:
        """Analytic trajectories of ``(x, y)`` points at the T+1 slice boundaries; shape (N, T+1, 2)."""
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        out = np.empty((len(pts), self.T + 1, 2))
        for k in range(self.T + 1):
            fx, fy = self.motion.forward(pts[:, 0], pts[:, 1], k / self.T)
            out[:, k, 0] = fx
            out[:, k, 1] = fy
        return out

    def blur_extent(self) -> np.ndarray:
        """Per-pixel motion-blur streak length in pixels for the current ``blur_len``."""
        xs, ys = pixel_grid(self.spec.height, self.spec.width)
        span = self.blur_step * (self.blur_len - 1)
        fx, fy = self.motion.forward(xs, ys, span)
        return np.hypot(fx - xs, fy - ys)


def render(motion: Motion, texture: Texture, spec: SceneSpec, s: float) -> np.ndarray:
    xs, ys = pixel_grid(spec.height, spec.width)
    bx, by = motion.backward(xs, ys, s)
    return texture.sample(bx, by)


def _margin(motion: Motion, preroll: float) -> int:
    # renders may be requested a full window before t0 or after t1 (blur, preroll)
    return int(math.ceil((2.0 + preroll) * motion.max_speed())) + 4


def _substeps(spec: SceneSpec, motion: Motion) -> int:
    if spec.substeps:
        return spec.substeps
    per_slice = motion.max_speed() / spec.T
    return max(4, int(math.ceil(4.0 * per_slice)))


def simulate_events(frames_at, times: np.ndarray, C: float, tol: float = 1e-9):
    """Threshold-crossing events from intensity samples ``frames_at(j)`` at ``times[j]``.

    Intensity is treated as linear between consecutive samples.  ``tol``
    (in units of ``C``) absorbs float round-off so that a change of exactly
    ``nC`` yields ``n`` events.  Returns ``(t, x, y, p)`` arrays ordered by
    time, then row, then column.
    """
    ref = np.array(frames_at(0), dtype=np.float64)
    prev = ref.copy()
    ts, xs, ys, ps = [], [], [], []
    for j in range(1, len(times)):
        cur = np.asarray(frames_at(j), dtype=np.float64)
        t_a, t_b = times[j - 1], times[j]
        delta = cur - prev
        for sign in (1, -1):
            n = np.floor(sign * (cur - ref) / C + tol).astype(np.int64)
            n = np.where(sign * delta > 0, np.maximum(n, 0), 0)
            if not n.any():
                continue
            yy, xx = np.nonzero(n)
            counts = n[yy, xx]
            rep_y = np.repeat(yy, counts)
            rep_x = np.repeat(xx, counts)
            # i-th crossing level of each pixel: ref + sign * i * C
            i = np.concatenate([np.arange(1, c + 1) for c in counts])
            level = ref[rep_y, rep_x] + sign * i * C
            a = prev[rep_y, rep_x]
            frac = np.clip((level - a) / (cur[rep_y, rep_x] - a), 0.0, 1.0)
            ts.append(t_a + frac * (t_b - t_a))
            xs.append(rep_x)
            ys.append(rep_y)
            ps.append(np.full(len(rep_x), sign))
            ref[yy, xx] += sign * counts * C
        prev = cur
    if ts:
        t = np.concatenate(ts)
        x = np.concatenate(xs)
        y = np.concatenate(ys)
        p = np.concatenate(ps)
        order = np.lexsort((x, y, t))
        t, x, y, p = t[order], x[order], y[order], p[order]
    else:
        t = x = y = p = np.zeros(0)
    return t, x, y, p


def gen_scene(spec: SceneSpec) -> SynthBundle:
    """Render frames, synthesize events, and compute analytic ground truth."""
    spec.validate()
    motion = Motion(spec.motion, tuple(map(float, spec.flow)), tuple(map(float, spec.flow_b)),
                    float(spec.angle), spec.width, spec.height)
    texture = Texture(spec, _margin(motion, spec.preroll))

    n_sub = _substeps(spec, motion)
    n_steps = spec.T * n_sub
    n_pre = int(math.ceil(spec.preroll * n_steps))
    fracs = np.arange(-n_pre, n_steps + 1) / n_steps
    t, x, y, p = simulate_events(lambda j: render(motion, texture, spec, fracs[j]),
                                 fracs * spec.duration, spec.C)
    keep = t >= 0.0
    events = EventStream(spec.width, spec.height, t[keep], x[keep], y[keep], p[keep], 0.0, spec.duration)
    slices = slice_events(events, 0.0, spec.duration, spec.T)

    frame_fracs = np.linspace(0.0, 1.0, spec.n_frames)
    frames = FrameSequence([Image(render(motion, texture, spec, s), float(s * spec.duration))
                            for s in frame_fracs])

    xs, ys = pixel_grid(spec.height, spec.width)
    fx, fy = motion.forward(xs, ys, 1.0)
    gt_total = np.stack([fx - xs, fy - ys], axis=-1)
    sx, sy = motion.forward(xs, ys, 1.0 / spec.T)
    step = np.stack([sx - xs, sy - ys], axis=-1)
    # every motion here is time-homogeneous, so all slices share one Eulerian field
    gt_slices = np.repeat(step[None], spec.T, axis=0)

    return SynthBundle(spec=spec, frames=frames, events=events, slices=slices,
                       gt_flow_total=gt_total, gt_flow_slices=gt_slices,
                       regions=motion.region(xs, ys), motion=motion, texture=texture,
                       blur_step=1.0 / spec.T)


def blurred_render(bundle: SynthBundle, s: float, blur_len: int, step: float | None = None) -> np.ndarray:
    step = bundle.blur_step if step is None else step
    offsets = (np.arange(blur_len) - (blur_len - 1) / 2.0) * step
    return np.mean([bundle.render(s + o) for o in offsets], axis=0)


def degrade(bundle: SynthBundle, blur_len: int = 8, drop: int = 2, step: float | None = None) -> SynthBundle:
    """Motion-blur every frame over ``blur_len`` renders, then keep every ``drop``-th frame.

    Blurred frames are re-rendered from the scene at each frame timestamp, so
    the blur does not compound when degrading twice.  ``step`` is the spacing
    of the renders as a fraction of the window (default: one slice).  Events
    and ground truth are shared with the input bundle.
    """
    if blur_len < 1 or drop < 1:
        raise InvalidSpec("blur_len and drop must be >= 1")
    if step is not None:
        if not step > 0:
            raise InvalidSpec("blur step must be > 0")
        bundle = replace(bundle, blur_step=float(step))
    dur = bundle.spec.duration
    frames = list(bundle.frames)
    if blur_len > 1:
        frames = [Image(blurred_render(bundle, f.t / dur, blur_len), f.t) for f in frames]
    frames = frames[::drop]
    return replace(bundle, frames=FrameSequence(frames), blur_len=max(blur_len, bundle.blur_len),
                   drop=bundle.drop * drop)
