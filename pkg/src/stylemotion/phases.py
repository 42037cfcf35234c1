"""Local motion phases from contact-based or contact-free source functions.

Pipeline per bone: build a 1D source series (foot-contact step function, or
the bone's local position projected onto a directed first principal
component), normalize it in a sliding one-second window, low-pass it with a
zero-phase Butterworth filter, fit a sliding sinusoid a*sin(2*pi*f*t - s) + b
by Gauss-Newton, and emit the velocity-scaled 2D feature
(|v_w| * a * sin(phi), |v_w| * a * cos(phi)).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import butter, filtfilt

log = logging.getLogger(__name__)

D_MAX_DEFAULT = 0.01  # m, contact ball radius
V_MAX_DEFAULT = 0.15  # m/s
FREQ_MIN = 0.25  # Hz
FREQ_MAX = 4.0
FIT_WINDOW_S = 2.0
NORM_WINDOW_S = 1.0
STD_FLOOR = 1e-5


class PhaseError(ValueError):
    pass


@dataclass
class ContactTrack:
    values: np.ndarray  # (N,) bool
    d_max: float = D_MAX_DEFAULT
    v_max: float = V_MAX_DEFAULT


@dataclass
class SourceSeries:
    values: np.ndarray  # (N,)
    origin: str = "contact"  # "contact" | "pca"
    bone: int = -1


@dataclass
class PhaseTrack:
    """Per-frame fitted sinusoid parameters and derived 2D phase features."""

    amplitude: np.ndarray  # a >= 0
    frequency: np.ndarray  # Hz
    shift: np.ndarray  # radians
    offset: np.ndarray  # b
    phi: np.ndarray  # radians in [0, 2pi)
    bone: int = -1
    window_velocity: np.ndarray | None = None  # mean speed over 1 s window
    feature: np.ndarray | None = None  # (N, 2)
    feature_update: np.ndarray | None = None  # (N, 2)
    fallback_frames: list[int] = field(default_factory=list)


def detect_contacts(
    positions: np.ndarray,
    velocities: np.ndarray,
    d_max: float = D_MAX_DEFAULT,
    v_max: float = V_MAX_DEFAULT,
) -> ContactTrack:
    """Contact when the bone's ball touches the floor and it is near-still."""
    positions = np.atleast_2d(positions)
    velocities = np.atleast_2d(velocities)
    if positions.shape[0] == 0:
        return ContactTrack(np.zeros(0, dtype=bool), d_max, v_max)
    near = positions[:, 1] - d_max <= 0.0
    still = np.linalg.norm(velocities, axis=1) < v_max
    return ContactTrack(near & still, d_max, v_max)


def contact_source(track: ContactTrack, bone: int = -1) -> SourceSeries:
    if track.values.shape[0] == 0:
        raise PhaseError("empty contact track")
    return SourceSeries(track.values.astype(np.float64), origin="contact", bone=bone)


def pca_source(
    positions_local: np.ndarray,
    forward_axis: np.ndarray,
    bone: int = -1,
    mean_position: np.ndarray | None = None,
) -> SourceSeries:
    """Project local bone positions onto the directed first principal component.

    ``mean_position`` allows centering by the style+gait mean when the series
    is a slice of a larger set; defaults to the mean of the given positions.
    The covariance is not variance-standardized. The component is flipped so
    it points along ``forward_axis``.
    """
    pts = np.asarray(positions_local, dtype=np.float64)
    if pts.shape[0] < 3:
        raise PhaseError("need at least 3 frames for a principal component")
    center = pts.mean(axis=0) if mean_position is None else np.asarray(mean_position)
    centred = pts - center
    cov = centred.T @ centred / pts.shape[0]
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    if evals[0] <= 1e-12:
        return SourceSeries(np.zeros(pts.shape[0]), origin="pca", bone=bone)
    if evals[1] > 1e-12 and evals[0] / evals[1] < 1.05:
        log.warning("near-degenerate principal components for bone %d", bone)
    pc = evecs[:, 0]
    # Deterministic sign before directing: first nonzero entry positive.
    nz = np.nonzero(np.abs(pc) > 1e-12)[0]
    if nz.size and pc[nz[0]] < 0:
        pc = -pc
    if float(pc @ np.asarray(forward_axis, dtype=np.float64)) < 0:
        pc = -pc
    return SourceSeries(centred @ pc, origin="pca", bone=bone)


def condition_source(
    series: SourceSeries,
    fps: float,
    window_s: float = NORM_WINDOW_S,
    order: int = 4,
    cutoff_hz: float = 3.0,
) -> SourceSeries:
    """Sliding-window standardization then zero-phase Butterworth low-pass."""
    n = series.values.shape[0]
    half = int(round(fps * window_s / 2.0))
    if 2 * half + 1 < 3:
        raise PhaseError("normalization window shorter than 3 frames")
    v = series.values.astype(np.float64)
    csum = np.concatenate([[0.0], np.cumsum(v)])
    csum2 = np.concatenate([[0.0], np.cumsum(v * v)])
    idx = np.arange(n)
    lo = np.clip(idx - half, 0, n)
    hi = np.clip(idx + half + 1, 0, n)
    count = hi - lo
    mean = (csum[hi] - csum[lo]) / count
    var = (csum2[hi] - csum2[lo]) / count - mean**2
    std = np.maximum(np.sqrt(np.maximum(var, 0.0)), STD_FLOOR)
    out = (v - mean) / std
    if n > 3 * (order + 1):
        b, a = butter(order, cutoff_hz / (fps / 2.0), btype="low")
        out = filtfilt(b, a, out)
    if not np.all(np.isfinite(out)):
        raise PhaseError("non-finite values after conditioning")
    return SourceSeries(out, origin=series.origin, bone=series.bone)


def _initial_frequency(window: np.ndarray, fps: float) -> float:
    """Dominant non-DC bin of a Hann-windowed FFT, clamped to the fit range."""
    w = window - window.mean()
    w = w * np.hanning(len(w))
    spec = np.abs(np.fft.rfft(w))
    if len(spec) < 2:
        return 1.0
    k = 1 + int(np.argmax(spec[1:]))
    f = k * fps / len(window)
    return float(np.clip(f, FREQ_MIN, FREQ_MAX))


def _linear_sine_fit(t: np.ndarray, y: np.ndarray, f: float):
    """Closed-form LS fit of a*sin(2*pi*f*t - s) + b for fixed frequency."""
    cols = np.stack([np.sin(2 * np.pi * f * t), np.cos(2 * np.pi * f * t), np.ones_like(t)], axis=1)
    coef, *_ = np.linalg.lstsq(cols, y, rcond=None)
    p, q, b = coef
    a = float(np.hypot(p, q))
    # p*sin(x) + q*cos(x) = a*sin(x + atan2(q, p)) = a*sin(x - s), s = -atan2(q, p)
    s = float(-np.arctan2(q, p))
    return a, s, float(b)


def _gauss_newton_sine(t, y, a, f, s, b, max_iter=50, tol=1e-10):
    """Refine (a, f, s, b) for y ~ a*sin(2*pi*f*t - s) + b. Returns params + ok flag."""
    params = np.array([a, f, s, b], dtype=np.float64)
    prev_cost = np.inf
    for _ in range(max_iter):
        a, f, s, b = params
        arg = 2 * np.pi * f * t - s
        sin_a, cos_a = np.sin(arg), np.cos(arg)
        r = a * sin_a + b - y
        cost = float(r @ r)
        jac = np.stack([sin_a, a * cos_a * 2 * np.pi * t, -a * cos_a, np.ones_like(t)], axis=1)
        jtj = jac.T @ jac + 1e-10 * np.eye(4)
        try:
            step = np.linalg.solve(jtj, jac.T @ r)
        except np.linalg.LinAlgError:
            return params, False
        params = params - step
        params[1] = np.clip(params[1], FREQ_MIN, FREQ_MAX)
        if not np.all(np.isfinite(params)):
            return np.array([a, f, s, b]), False
        if np.isfinite(prev_cost) and abs(prev_cost - cost) <= tol * max(prev_cost, 1.0):
            break
        prev_cost = cost
    a, f, s, b = params
    if a < 0:
        a, s = -a, s - np.pi
    return np.array([a, f, s, b]), True


def fit_sinusoid(
    series: SourceSeries,
    fps: float,
    fit_window_s: float = FIT_WINDOW_S,
    stride: int = 10,
) -> PhaseTrack:
    """Sliding-window sinusoid fit; parameters at stride points, interpolated.

    Amplitude, offset and frequency interpolate linearly between fit points;
    the phase angle interpolates linearly after unwrapping.
    """
    y_all = series.values.astype(np.float64)
    n = y_all.shape[0]
    if n < 8:
        raise PhaseError("series too short to fit")
    half = int(round(fit_window_s * fps / 2.0))
    anchors = list(range(0, n, max(1, stride)))
    if anchors[-1] != n - 1:
        anchors.append(n - 1)

    a_k, f_k, s_k, b_k, phi_k = [], [], [], [], []
    fallback = []
    for i in anchors:
        lo, hi = max(0, i - half), min(n, i + half + 1)
        t = np.arange(lo, hi, dtype=np.float64) / fps
        y = y_all[lo:hi]
        f0 = _initial_frequency(y, fps)
        a0, s0, b0 = _linear_sine_fit(t, y, f0)
        (a, f, s, b), ok = _gauss_newton_sine(t, y, a0, f0, s0, b0)
        if not ok:
            a, f, s, b = a0, f0, s0, b0
            fallback.append(i)
        if a < 0:
            a, s = -a, s - np.pi
        a_k.append(a)
        f_k.append(f)
        s_k.append(s)
        b_k.append(b)
        phi_k.append(np.mod(2 * np.pi * f * (i / fps) - s, 2 * np.pi))

    idx = np.arange(n, dtype=np.float64)
    anchors_arr = np.array(anchors, dtype=np.float64)
    amplitude = np.interp(idx, anchors_arr, a_k)
    frequency = np.interp(idx, anchors_arr, f_k)
    offset = np.interp(idx, anchors_arr, b_k)
    phi_unwrapped = np.unwrap(np.array(phi_k))
    phi = np.mod(np.interp(idx, anchors_arr, phi_unwrapped), 2 * np.pi)
    shift = np.mod(2 * np.pi * frequency * (idx / fps) - phi, 2 * np.pi)
    return PhaseTrack(
        amplitude=amplitude,
        frequency=frequency,
        shift=shift,
        offset=offset,
        phi=phi,
        bone=series.bone,
        fallback_frames=fallback,
    )


def phase_features(
    track: PhaseTrack, bone_velocities: np.ndarray, fps: float
) -> PhaseTrack:
    """Scale (sin phi, cos phi) by amplitude and mean bone speed over 1 s."""
    speed = np.linalg.norm(np.atleast_2d(bone_velocities), axis=1)
    n = speed.shape[0]
    half = int(round(fps / 2.0))
    csum = np.concatenate([[0.0], np.cumsum(speed)])
    idx = np.arange(n)
    lo = np.clip(idx - half, 0, n)
    hi = np.clip(idx + half + 1, 0, n)
    wv = (csum[hi] - csum[lo]) / (hi - lo)
    scale = wv * track.amplitude
    feature = np.stack([scale * np.sin(track.phi), scale * np.cos(track.phi)], axis=1)
    update = np.empty_like(feature)
    update[:-1] = feature[1:] - feature[:-1]
    update[-1] = update[-2] if n > 1 else 0.0
    track.window_velocity = wv
    track.feature = feature
    track.feature_update = update
    return track


def extract_clip_phases(clip_feats, stride: int = 10) -> np.ndarray:
    """8-channel phase features for a clip's four end effectors.

    Feet use the contact source when contacts exist, hands (and contact-free
    feet) use the directed-PCA source. Returns (N, 8): 2 channels per end
    effector in skeleton order (lhand, rhand, lfoot, rfoot).
    """
    clip = clip_feats.clip
    skel = clip.skeleton
    fps = clip.fps
    n = clip_feats.num_frames
    out = np.zeros((n, 8))
    forward_local = np.array([0.0, 0.0, 1.0])
    for k, joint in enumerate(skel.end_effectors):
        local_pos = clip_feats.local_pos[:, joint]
        local_vel = clip_feats.local_vel[:, joint]
        if joint in skel.feet:
            world_pos = clip.positions[:, joint].astype(np.float64)
            world_vel = np.empty_like(world_pos)
            world_vel[:-1] = np.diff(world_pos, axis=0) * fps
            world_vel[-1] = world_vel[-2] if n > 1 else 0.0
            track = detect_contacts(world_pos, world_vel)
            if track.values.any():
                source = contact_source(track, bone=joint)
            else:
                source = pca_source(local_pos, forward_local, bone=joint)
        else:
            source = pca_source(local_pos, forward_local, bone=joint)
        conditioned = condition_source(source, fps)
        track_fit = fit_sinusoid(conditioned, fps, stride=stride)
        track_fit = phase_features(track_fit, local_vel, fps)
        out[:, 2 * k : 2 * k + 2] = track_fit.feature
    return out


def clip_contacts(clip) -> np.ndarray:
    """(N, 2) float contact labels for the left/right feet."""
    n = clip.num_frames
    out = np.zeros((n, 2))
    for col, joint in enumerate(clip.skeleton.feet):
        pos = clip.positions[:, joint].astype(np.float64)
        vel = np.empty_like(pos)
        vel[:-1] = np.diff(pos, axis=0) * clip.fps
        vel[-1] = vel[-2] if n > 1 else 0.0
        out[:, col] = detect_contacts(pos, vel).values.astype(np.float64)
    return out
