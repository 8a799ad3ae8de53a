"""Template-guided matching, tracking and attention fusion of correlation volumes.

Frames give spatially dense but temporally sparse correlation; event slices
give the reverse.  The reference boundary template ties the two together:
K-Means groups frame correlation around template anchors, a Kalman filter
follows the template points through the event slices, and scaled
dot-product attention writes the dense frame-side evidence into the
per-slice event volumes along the tracked trajectories.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .boundary import BoundaryTemplate
from .correlation import CorrelationVolume
from .errors import DegenerateK, DimensionMismatch, EmptyInput, EmptyTemplate, NoTracks

Q_DEFAULT = np.diag([0.1, 0.1, 0.5, 0.5, 0.05])
R_DEFAULT = np.diag([1.0, 1.0, 0.1])

# constant-velocity transition over one slice; state is (x, y, u, v, c)
F_CV = np.array([
    [1.0, 0, 1, 0, 0],
    [0, 1.0, 0, 1, 0],
    [0, 0, 1.0, 0, 0],
    [0, 0, 0, 1.0, 0],
    [0, 0, 0, 0, 1.0],
])
# observation picks (x, y, c)
H_OBS = np.array([
    [1.0, 0, 0, 0, 0],
    [0, 1.0, 0, 0, 0],
    [0, 0, 0, 0, 1.0],
])


# ---------------------------------------------------------------- spatial matching

@dataclass(frozen=True)
class ClusterResult:
    """K-Means partition of the pixels around the template.

    ``assignments`` holds a cluster id per pixel or -1.  ``centers`` rows are
    ``(x, y, descriptor...)`` with positions in pixels.  ``anchors`` indexes
    the template point that represents each cluster, and ``cv_spa`` carries
    that anchor's window at every member pixel (zeros elsewhere).
    """

    assignments: np.ndarray
    centers: np.ndarray
    anchors: np.ndarray
    cv_spa: CorrelationVolume
    objective: np.ndarray
    n_iter: int
    converged: bool

    @property
    def k(self) -> int:
        return len(self.centers)


def _softmax(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _joint(xs, ys, windows, scale, alpha):
    pos = np.stack([xs, ys], axis=1).astype(np.float64) / scale
    return np.concatenate([np.sqrt(alpha) * pos, np.sqrt(1.0 - alpha) * windows], axis=1)


def _sqdist(z, centers):
    return (np.sum(z * z, axis=1)[:, None] - 2.0 * z @ centers.T
            + np.sum(centers * centers, axis=1)[None, :]).clip(min=0.0)


def spatial_match(cv_frame: CorrelationVolume, tmpl: BoundaryTemplate, k: int | None = None,
                  alpha: float = 0.5, tol: float = 1e-6, max_iter: int = 100, seed: int = 0,
                  reach: int | None = None, temperature: float | None = 0.1) -> ClusterResult:
    """Lloyd K-Means over pixels within ``reach`` of the template, in a joint space.

    The squared joint distance is ``alpha * |dp|^2 + (1 - alpha) * |dw|^2``
    where ``dp`` is the position difference divided by the longer image side
    and ``dw`` the difference between window descriptors.  With a
    ``temperature`` the descriptor is the softmax of the window (the match
    distribution the decoder sees), which groups pixels by motion rather than
    by texture; ``None`` uses the raw window.  Centers start at the first
    ``k`` template points.  A cluster that empties is re-seeded at a pixel
    drawn with ``seed``.
    """
    if len(tmpl) == 0:
        raise EmptyTemplate("spatial matching needs a non-empty template")
    k = min(len(tmpl), 8) if k is None else int(k)
    if k <= 0:
        raise DegenerateK("k must be >= 1")
    if k > len(tmpl):
        raise DegenerateK(f"k={k} exceeds the template size {len(tmpl)}")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    reach = cv_frame.radius if reach is None else int(reach)

    h, w = cv_frame.height, cv_frame.width
    scale = float(max(h, w))
    flat = cv_frame.data.reshape(h, w, -1)
    if temperature is not None:
        flat = _softmax(flat / temperature)
    mask = np.zeros((h, w), dtype=bool)
    mask[tmpl.ys, tmpl.xs] = True
    if reach > 0:
        mask = ndimage.binary_dilation(mask, np.ones((2 * reach + 1, 2 * reach + 1), dtype=bool))
    ys, xs = np.nonzero(mask)
    z = _joint(xs, ys, flat[ys, xs], scale, alpha)
    tz = _joint(tmpl.xs, tmpl.ys, flat[tmpl.ys, tmpl.xs], scale, alpha)

    rng = np.random.default_rng(seed)
    centers = tz[:k].copy()
    objective = []
    converged = False
    n_iter = 0
    labels = np.zeros(len(z), dtype=np.int64)
    for n_iter in range(1, max_iter + 1):
        d2 = _sqdist(z, centers)
        labels = d2.argmin(axis=1)
        objective.append(float(d2[np.arange(len(z)), labels].sum()))
        new = centers.copy()
        for c in range(k):
            members = labels == c
            if members.any():
                new[c] = z[members].mean(axis=0)
            else:
                new[c] = z[rng.integers(len(z))]
        shift = float(np.max(np.linalg.norm(new - centers, axis=1)))
        centers = new
        if shift < tol:
            converged = True
            break
    d2 = _sqdist(z, centers)
    labels = d2.argmin(axis=1)
    objective.append(float(d2[np.arange(len(z)), labels].sum()))

    # each cluster is represented by the template point nearest to its center
    tlab = _sqdist(tz, centers).argmin(axis=1)
    td2 = _sqdist(tz, centers)
    anchors = np.empty(k, dtype=np.int64)
    for c in range(k):
        pool = np.nonzero(tlab == c)[0]
        if len(pool) == 0:
            pool = np.arange(len(tz))
        anchors[c] = pool[np.argmin(td2[pool, c])]

    assignments = np.full((h, w), -1, dtype=np.int64)
    assignments[ys, xs] = labels
    spa = np.zeros_like(cv_frame.data)
    anchor_windows = cv_frame.data[tmpl.ys[anchors], tmpl.xs[anchors]]
    spa[ys, xs] = anchor_windows[labels]

    raw = np.empty((k, 2 + flat.shape[-1]))
    raw[:, :2] = centers[:, :2] * scale / np.sqrt(alpha) if alpha > 0 else np.nan
    raw[:, 2:] = centers[:, 2:] / np.sqrt(1.0 - alpha) if alpha < 1 else np.nan
    return ClusterResult(assignments, raw, anchors, cv_frame.with_data(spa), np.array(objective),
                         n_iter, converged)


# ---------------------------------------------------------------- temporal tracking

@dataclass
class MotionTrack:
    """Kalman track of one template point through the event slices.

    ``history`` has one ``(x, y, u, v, c)`` row per slice boundary (T + 1
    rows), ``covariances`` the matching 5x5 matrices, and ``windows`` the
    correlation window read at the tracked position in each slice volume.
    """

    state: np.ndarray
    covariance: np.ndarray
    history: list = field(default_factory=list)
    covariances: list = field(default_factory=list)
    windows: list = field(default_factory=list)
    measurements: list = field(default_factory=list)
    lost: bool = False
    lost_at: int | None = None

    @property
    def positions(self) -> np.ndarray:
        return np.array([s[:2] for s in self.history])


def kalman_predict(x, P, F, Q):
    return F @ x, F @ P @ F.T + Q


def kalman_update(x, P, z, H, R):
    """Standard update with the Joseph covariance form (keeps P symmetric PSD)."""
    S = H @ P @ H.T + R
    K = np.linalg.solve(S.T, (P @ H.T).T).T
    x = x + K @ (z - H @ x)
    A = np.eye(len(x)) - K @ H
    P = A @ P @ A.T + K @ R @ K.T
    return x, 0.5 * (P + P.T)


def _parabolic(lo: float, mid: float, hi: float) -> float:
    den = lo - 2.0 * mid + hi
    if den >= 0:
        return 0.0
    return float(np.clip(0.5 * (lo - hi) / den, -0.5, 0.5))


def measure(cv: CorrelationVolume, x: int, y: int, pred: np.ndarray, search: int):
    """Peak of the window at reference pixel ``(x, y)`` among displacements
    landing within ``search`` pixels (Chebyshev) of the predicted position.

    Returns the measured position, the peak value and the window.  The peak
    is refined to sub-pixel precision with a parabola along each axis.
    """
    win = cv.data[y, x]
    base = cv.base[y, x]
    disp = cv.displacements()
    land = np.stack([x + base[0] + disp[..., 0], y + base[1] + disp[..., 1]], axis=-1)
    ok = np.max(np.abs(land - np.asarray(pred)[None, None, :2]), axis=-1) <= search + 1e-9
    if not ok.any():
        ok[cv.radius, cv.radius] = True
    masked = np.where(ok, win, -np.inf)
    j, i = np.unravel_index(np.argmax(masked), masked.shape)
    r = cv.radius
    sx = _parabolic(win[j, i - 1], win[j, i], win[j, i + 1]) if 0 < i < 2 * r else 0.0
    sy = _parabolic(win[j - 1, i], win[j, i], win[j + 1, i]) if 0 < j < 2 * r else 0.0
    pos = np.array([x + base[0] + (i - r) + sx, y + base[1] + (j - r) + sy])
    return pos, float(win[j, i]), win


def temporal_track(cv_slices, tmpl: BoundaryTemplate, init_flow: np.ndarray, Q=None, R=None,
                   c_min: float = 0.1, patience: int = 3, search: int | None = None,
                   P0=None) -> list:
    """Track every template point through ``T`` reference-anchored slice volumes.

    ``cv_slices[k]`` tells, for each reference pixel, where it has moved by
    the end of slice ``k``.  The state starts at the template point with
    velocity ``init_flow / T`` (sampled at the point) and correlation equal
    to the peak of the first window.  Each slice runs a constant-velocity
    prediction, then a position and peak measurement from the window at the
    template point.  A track whose peak stays below ``c_min`` for
    ``patience`` consecutive slices is flagged lost and coasts on
    predictions from then on.
    """
    T = len(cv_slices)
    if T == 0:
        raise DimensionMismatch("need at least one slice volume")
    Q = Q_DEFAULT if Q is None else np.asarray(Q, dtype=np.float64)
    R = R_DEFAULT if R is None else np.asarray(R, dtype=np.float64)
    P0 = np.eye(5) if P0 is None else np.asarray(P0, dtype=np.float64)
    for name, m, n in (("Q", Q, 5), ("R", R, 3)):
        if m.shape != (n, n) or not np.allclose(m, m.T) or np.linalg.eigvalsh(m).min() < -1e-12:
            raise ValueError(f"{name} must be a symmetric PSD {n}x{n} matrix")
    init_flow = np.asarray(init_flow, dtype=np.float64)
    cv0 = cv_slices[0]
    if init_flow.shape != (cv0.height, cv0.width, 2):
        raise DimensionMismatch("init_flow does not match the volumes")
    search = cv0.radius if search is None else search

    tracks = []
    for px, py in zip(np.asarray(tmpl.xs, dtype=np.int64), np.asarray(tmpl.ys, dtype=np.int64)):
        u, v = init_flow[py, px] / T
        x = np.array([px, py, u, v, float(cv0.data[py, px].max())], dtype=np.float64)
        P = P0.copy()
        trk = MotionTrack(x.copy(), P.copy(), [x.copy()], [P.copy()])
        misses = 0
        for k, cv in enumerate(cv_slices):
            x_pred, P_pred = kalman_predict(x, P, F_CV, Q)
            pos, peak, win = measure(cv, px, py, x_pred, search)
            trk.windows.append(win.copy())
            if not trk.lost:
                misses = misses + 1 if peak < c_min else 0
                if misses >= patience:
                    trk.lost, trk.lost_at = True, k
            if trk.lost:
                x, P = x_pred, P_pred
                trk.measurements.append(None)
            else:
                z = np.array([pos[0], pos[1], peak])
                x, P = kalman_update(x_pred, P_pred, z, H_OBS, R)
                trk.measurements.append(z)
            trk.history.append(x.copy())
            trk.covariances.append(P.copy())
        trk.state, trk.covariance = x, P
        tracks.append(trk)
    return tracks


# ---------------------------------------------------------------- attention fusion

def attention(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Single-head scaled dot-product attention with identity projections.

    Key/value pairs are put in a canonical order first, so permuting them
    leaves the output bit-for-bit unchanged rather than equal up to rounding.
    """
    q = np.atleast_2d(np.asarray(q, dtype=np.float64))
    k = np.atleast_2d(np.asarray(k, dtype=np.float64))
    v = np.atleast_2d(np.asarray(v, dtype=np.float64))
    if len(q) == 0 or len(k) == 0:
        raise EmptyInput("attention needs at least one query and one key")
    if len(k) != len(v):
        raise DimensionMismatch("keys and values differ in count")
    order = np.lexsort(np.concatenate([k, v], axis=1).T[::-1])
    k, v = k[order], v[order]
    weights = attention_weights(q, k)
    return weights @ v


def attention_weights(q: np.ndarray, k: np.ndarray) -> np.ndarray:
    q = np.atleast_2d(np.asarray(q, dtype=np.float64))
    k = np.atleast_2d(np.asarray(k, dtype=np.float64))
    if len(q) == 0 or len(k) == 0:
        raise EmptyInput("attention needs at least one query and one key")
    logits = q @ k.T / np.sqrt(q.shape[1])
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=1, keepdims=True)


def cross_attention_fuse(cluster: ClusterResult, tracks: list, tmpl: BoundaryTemplate,
                         event_slices: list) -> list:
    """Per-slice fused volumes.

    For slice ``t`` and each cluster, the queries are the frame-side
    ``cv_spa`` windows of the cluster's member pixels; keys and values are
    the slice-``t`` windows of the tracks started from the cluster's
    template points.  The event volumes are indexed by reference pixel, so
    each attended window replaces the event window at the member pixel
    itself; the displacement along the track is already part of the window.
    """
    if not tracks or not event_slices:
        raise EmptyInput("fusion needs tracks and event volumes")
    if len(tracks) != len(tmpl):
        raise DimensionMismatch("one track per template point is required")
    size = event_slices[0].size
    tlab = cluster.assignments[tmpl.ys, tmpl.xs]
    fused = []
    for t, ev in enumerate(event_slices):
        data = ev.data.copy()
        for c in range(cluster.k):
            members = np.nonzero(tlab == c)[0]
            members = [n for n in members if not tracks[n].lost]
            if not members:
                continue
            py, px = np.nonzero(cluster.assignments == c)
            q = cluster.cv_spa.data[py, px].reshape(len(px), -1)
            kv = np.stack([tracks[n].windows[t].ravel() for n in members])
            data[py, px] = attention(q, kv, kv).reshape(-1, size, size)
        fused.append(ev.with_data(data))
    return fused


def decode_flow(cv: CorrelationVolume, temperature: float = 0.1) -> np.ndarray:
    """Soft-argmax over each window, added to the volume's base flow.

    With a zero base the result is bounded by the window radius.
    """
    if not temperature > 0:
        raise ValueError("temperature must be > 0")
    h, w = cv.height, cv.width
    p = _softmax(cv.data.reshape(h, w, -1) / temperature)
    disp = cv.displacements().reshape(-1, 2)
    # pair d with -d (mirror in flat order) so symmetric windows cancel exactly
    half = len(disp) // 2
    diff = p[..., :half] - p[..., :half:-1]
    return cv.base + diff @ disp[:half]


# ---------------------------------------------------------------- losses

def corr_spatial_loss(cv_t0: CorrelationVolume, cluster: ClusterResult, tmpl: BoundaryTemplate) -> float:
    """Mean over template points of the L1 distance between ``cv_t0`` and ``cv_spa`` windows."""
    if len(tmpl) == 0:
        raise EmptyTemplate("spatial loss needs a non-empty template")
    if cv_t0.data.shape != cluster.cv_spa.data.shape:
        raise DimensionMismatch("volume and cluster volume differ in shape")
    a = cv_t0.data[tmpl.ys, tmpl.xs]
    b = cluster.cv_spa.data[tmpl.ys, tmpl.xs]
    return float(np.abs(a - b).reshape(len(tmpl), -1).sum(axis=1).mean())


def corr_temporal_loss(cv_slices: list, tracks: list) -> float:
    """Mean over slices and tracks of the L1 distance between the volume window
    at the track's reference pixel and the window recorded during tracking."""
    if not tracks:
        raise NoTracks("temporal loss needs at least one track")
    T = len(cv_slices)
    total = 0.0
    for t, cv in enumerate(cv_slices):
        for trk in tracks:
            x, y = trk.history[0][:2]
            total += np.abs(cv.window_at(x, y) - trk.windows[t]).sum()
    return float(total / (T * len(tracks)))


def flow_consistency_loss(flows_fused, flow_frame, flows_event) -> float:
    """Accumulated-flow agreement with the frame flow plus per-slice agreement with events.

    ``flows_fused`` and ``flows_event`` have shape (T, N, 2) (slice, point,
    component) and ``flow_frame`` has shape (N, 2), all sampled along the
    tracked trajectories.  Both terms are L1 and summed over points.
    """
    ff = np.asarray(flows_fused, dtype=np.float64)
    fe = np.asarray(flows_event, dtype=np.float64)
    fr = np.asarray(flow_frame, dtype=np.float64)
    if ff.ndim != 3 or ff.shape[-1] != 2 or ff.shape != fe.shape or fr.shape != ff.shape[1:]:
        raise DimensionMismatch(f"shapes fused {ff.shape}, event {fe.shape}, frame {fr.shape}")
    accumulated = ff.sum(axis=0)
    return float(np.abs(accumulated - fr).sum() + np.abs(ff - fe).sum())
