"""Pipeline configuration: a flat set of documented keys read from ``key = value`` text.

Blank lines and ``#`` comments are ignored.  Tuples are written as
comma-separated numbers (``flow = 3, 0``).  Unknown keys and out-of-range
values raise :class:`~stflow.errors.ConfigError` naming the key.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields, replace

from .errors import ConfigError
from .synth import MOTIONS, TEXTURES, SceneSpec


@dataclass(frozen=True)
class PipelineConfig:
    # event slicing and boundary classes
    T: int = 20
    K: int = 10
    C: float = 0.05
    # correlation
    radius: int = 4
    levels: int = 3
    support: int = 4
    aggregate: int = 3
    temperature: float = 0.1
    # objective weights
    lambda1: float = 0.1
    lambda2: float = 0.1
    lambda3: float = 1.0
    lambda4: float = 1.0
    lambda5: float = 0.5
    # boundary maps and template
    canny_sigma: float = 1.4
    canny_lo: float = 0.1
    canny_hi: float = 0.3
    event_min_count: int = 1
    win: int = 16
    stride: int = 8
    hist_bins: int = 32
    hist_hi: float = 2.0
    patch_tau: float = 0.1
    template_threshold: float = 0.5
    track_points: int = 200
    # K-Means
    k: int = 8
    alpha: float = 0.5
    kmeans_tol: float = 1e-6
    kmeans_max_iter: int = 100
    seed: int = 0
    # Kalman tracking
    q: tuple = (0.1, 0.1, 0.5, 0.5, 0.05)
    r: tuple = (1.0, 1.0, 0.1)
    c_min: float = 0.1
    # flow refinement and the sparse penalty
    refine_steps: int = 50
    refine_lr: float = 0.5
    p: float = 0.4
    eps: float = 1e-3
    # synthetic scene
    width: int = 64
    height: int = 64
    texture: str = "noise"
    motion: str = "translation"
    flow: tuple = (3.0, 0.0)
    flow_b: tuple = (-3.0, 0.0)
    angle: float = 0.0
    n_frames: int = 2
    noise_sigma: float = 2.0
    preroll: float = 0.5
    blur_len: int = 1
    drop: int = 1
    blur_step: float = 0.05
    # paths: an existing bundle directory replaces the synthetic scene
    input: str = ""
    out: str = "stflow_out"

    @property
    def lambdas(self) -> tuple:
        return (self.lambda1, self.lambda2, self.lambda3, self.lambda4, self.lambda5)

    def scene_spec(self) -> SceneSpec:
        return SceneSpec(width=self.width, height=self.height, texture=self.texture, seed=self.seed,
                         motion=self.motion, flow=tuple(self.flow), flow_b=tuple(self.flow_b),
                         angle=self.angle, T=self.T, C=self.C, n_frames=self.n_frames,
                         noise_sigma=self.noise_sigma, preroll=self.preroll)

    def validate(self) -> "PipelineConfig":
        def need(key, ok, what):
            if not ok:
                raise ConfigError(f"{key} = {getattr(self, key)!r}: {what}")

        for key in ("T", "radius", "levels", "support", "kmeans_max_iter", "win", "stride",
                    "hist_bins", "track_points", "k", "event_min_count", "blur_len", "drop", "n_frames"):
            need(key, getattr(self, key) >= 1, "must be >= 1")
        need("n_frames", self.n_frames >= 2, "must be >= 2")
        need("K", self.K >= 2, "must be >= 2")
        need("width", self.width >= self.win, "must be at least the patch window")
        need("height", self.height >= self.win, "must be at least the patch window")
        for key in ("C", "temperature", "canny_sigma", "hist_hi", "patch_tau", "kmeans_tol",
                    "refine_lr", "eps", "noise_sigma", "blur_step"):
            need(key, getattr(self, key) > 0, "must be > 0")
        for key in ("aggregate", "refine_steps", "seed", "c_min", "preroll"):
            need(key, getattr(self, key) >= 0, "must be >= 0")
        for i in range(1, 6):
            need(f"lambda{i}", getattr(self, f"lambda{i}") >= 0, "must be >= 0")
        need("canny_lo", 0 < self.canny_lo < self.canny_hi, "must lie in (0, canny_hi)")
        need("canny_hi", self.canny_hi <= 1, "must be <= 1")
        need("alpha", 0 <= self.alpha <= 1, "must lie in [0, 1]")
        need("template_threshold", 0 < self.template_threshold < 1, "must lie in (0, 1)")
        need("p", 0 < self.p <= 1, "must lie in (0, 1]")
        need("q", len(self.q) == 5 and min(self.q) >= 0, "needs 5 non-negative variances")
        need("r", len(self.r) == 3 and min(self.r) >= 0, "needs 3 non-negative variances")
        need("flow", len(self.flow) == 2, "needs 2 components")
        need("flow_b", len(self.flow_b) == 2, "needs 2 components")
        need("texture", self.texture in TEXTURES, f"choose from {', '.join(TEXTURES)}")
        need("motion", self.motion in MOTIONS, f"choose from {', '.join(MOTIONS)}")
        need("drop", self.drop < self.n_frames, "would leave fewer than two frames")
        return self


_FIELDS = {f.name: f for f in fields(PipelineConfig)}
_DEFAULTS = PipelineConfig()


def _convert(key: str, raw: str):
    default = getattr(_DEFAULTS, key)
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(float(v) for v in raw.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None
    return raw


def apply_overrides(cfg: PipelineConfig, pairs) -> PipelineConfig:
    """Return ``cfg`` with ``(key, raw string)`` pairs applied."""
    updates = {}
    for key, raw in pairs:
        key = key.strip()
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key {key!r}")
        updates[key] = _convert(key, raw)
    return replace(cfg, **updates)


def parse_config(text: str, base: PipelineConfig | None = None) -> PipelineConfig:
    pairs = []
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value'")
        key, raw = line.split("=", 1)
        pairs.append((key, raw))
    return apply_overrides(base or PipelineConfig(), pairs)


def load_config(path: str | os.PathLike) -> PipelineConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def dump_config(cfg: PipelineConfig) -> str:
    lines = []
    for name in _FIELDS:
        value = getattr(cfg, name)
        if isinstance(value, tuple):
            value = ", ".join(repr(float(v)) for v in value)
        lines.append(f"{name} = {value}")
    return "\n".join(lines) + "\n"


def thread_limit() -> int:
    """Parallelism cap from ``STFLOW_THREADS`` (0 or unset means automatic)."""
    raw = os.environ.get("STFLOW_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"STFLOW_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise ConfigError("STFLOW_THREADS must be >= 0")
    return n or (os.cpu_count() or 1)
