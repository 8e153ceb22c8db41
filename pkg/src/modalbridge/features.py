"""Feature extraction: raw modality observations to fixed-shape matrices.

Video pose keypoints become a 4x200 wrist-position matrix, WiFi geometry
samples a 3x200 (x, z, r) matrix, and accelerometer traces a 3x600
displacement matrix. Matrices are min-max normalized per channel and
flattened channel-major at the autoencoder boundary.

Body-zone grid used for location tokens (normalized coordinates: nose at
the origin, one unit = the clip's median shoulder width, y grows downward):
columns split at x = -0.5 and x = +0.5 (left / center / right); rows split
at the clip's median eye level, the median shoulder level, and 1.5 units
below the shoulder level (face / upper / torso / lower).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

VIDEO_CANONICAL_FRAMES = 200
WIFI_SAMPLES = 200
ACCEL_SAMPLES = 600
ACCEL_RATE_HZ = 20.0
MAX_GAP_FRAMES = 3
MIN_REFERENCE_PRESENCE = 0.8
MAX_WRIST_MISSING = 0.2

KEYPOINT_NAMES = (
    "nose",
    "left_eye",
    "right_eye",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
)

GRID_COLUMNS = ("left", "center", "right")
GRID_ROWS = ("face", "upper", "torso", "lower")
GRID_COLUMN_SPLIT = 0.5
GRID_TORSO_DEPTH = 1.5


class FeatureError(ValueError):
    """Raised when raw observations violate an extraction precondition."""


class Keypoint(NamedTuple):
    x: float
    y: float
    conf: float


@dataclass
class KeypointFrame:
    """Named body keypoints for one video frame; absent keys mean missing."""

    points: dict[str, Keypoint] = field(default_factory=dict)

    def get(self, name: str) -> Optional[Keypoint]:
        return self.points.get(name)

    def set(self, name: str, x: float, y: float, conf: float = 1.0) -> None:
        if not 0.0 <= conf <= 1.0:
            raise FeatureError(f"confidence {conf} outside [0, 1] for {name}")
        self.points[name] = Keypoint(float(x), float(y), float(conf))


@dataclass(frozen=True)
class WifiObservation:
    r: float
    alpha_z: float
    el: float


@dataclass
class MovementSignature:
    position: np.ndarray  # 4 x N: left wrist x, left wrist y, right wrist x, right wrist y
    velocity: np.ndarray
    acceleration: np.ndarray


@dataclass(frozen=True)
class LocationToken:
    start: tuple[float, float]
    end: tuple[float, float]
    start_region: str
    end_region: str


def wifi_coords(obs: WifiObservation) -> tuple[float, float]:
    """Planar wrist coordinates from (range, azimuth, elevation).

    x = r * tan(alpha_z) (i.e. r / cot(alpha_z)); z = r * tan(el) / cos(alpha_z).
    """
    if not (0.0 < obs.alpha_z < math.pi / 2):
        raise FeatureError(f"azimuth {obs.alpha_z} outside (0, pi/2): cotangent degenerate")
    if not (0.0 <= obs.el < math.pi / 2):
        raise FeatureError(f"elevation {obs.el} outside [0, pi/2)")
    if not (math.isfinite(obs.r) and obs.r >= 0.0):
        raise FeatureError(f"range {obs.r} must be finite and non-negative")
    x = obs.r * math.tan(obs.alpha_z)
    z = obs.r * math.tan(obs.el) / math.cos(obs.alpha_z)
    return x, z


def wifi_coords_array(r, alpha_z, el):
    """Vectorized wifi_coords over equal-shaped arrays."""
    r = np.asarray(r, dtype=float)
    alpha_z = np.asarray(alpha_z, dtype=float)
    el = np.asarray(el, dtype=float)
    if np.any(alpha_z <= 0.0) or np.any(alpha_z >= math.pi / 2):
        raise FeatureError("azimuth outside (0, pi/2)")
    if np.any(el < 0.0) or np.any(el >= math.pi / 2):
        raise FeatureError("elevation outside [0, pi/2)")
    x = r * np.tan(alpha_z)
    z = r * np.tan(el) / np.cos(alpha_z)
    return x, z


def wifi_feature_matrix(per_pair) -> np.ndarray:
    """3x200 (x, z, r) matrix averaged over antenna pairs.

    `per_pair` is an array (P, 200, 3) with columns (r, alpha_z, el) in
    radians, or a nested sequence of WifiObservation of that shape.
    """
    if isinstance(per_pair, np.ndarray):
        obs = np.asarray(per_pair, dtype=float)
        if obs.ndim != 3 or obs.shape[2] != 3:
            raise FeatureError(f"expected (P, {WIFI_SAMPLES}, 3) array, got {obs.shape}")
    else:
        rows = []
        lengths = {len(p) for p in per_pair}
        if len(lengths) > 1:
            raise FeatureError(f"ragged sample counts across pairs: {sorted(lengths)}")
        for pair in per_pair:
            rows.append([(o.r, o.alpha_z, o.el) for o in pair])
        obs = np.asarray(rows, dtype=float)
    if obs.shape[0] < 1:
        raise FeatureError("need at least one antenna pair")
    if obs.shape[1] != WIFI_SAMPLES:
        raise FeatureError(f"expected {WIFI_SAMPLES} samples per pair, got {obs.shape[1]}")
    if not np.isfinite(obs).all():
        raise FeatureError("non-finite WiFi observation")
    x, z = wifi_coords_array(obs[:, :, 0], obs[:, :, 1], obs[:, :, 2])
    return np.stack([x.mean(axis=0), z.mean(axis=0), obs[:, :, 0].mean(axis=0)])


def _clip_arrays(frames: Sequence[KeypointFrame]):
    """Frames -> (xy (n, K, 2) with NaN for missing, conf (n, K))."""
    n = len(frames)
    xy = np.full((n, len(KEYPOINT_NAMES), 2), np.nan)
    conf = np.zeros((n, len(KEYPOINT_NAMES)))
    for i, frame in enumerate(frames):
        for j, name in enumerate(KEYPOINT_NAMES):
            kp = frame.get(name)
            if kp is not None:
                xy[i, j] = (kp.x, kp.y)
                conf[i, j] = kp.conf
    return xy, conf


def _frames_from_arrays(xy, conf) -> list[KeypointFrame]:
    out = []
    for i in range(xy.shape[0]):
        frame = KeypointFrame()
        for j, name in enumerate(KEYPOINT_NAMES):
            if not np.isnan(xy[i, j]).any():
                frame.set(name, xy[i, j, 0], xy[i, j, 1], conf[i, j])
        out.append(frame)
    return out


def _fill_gaps(series: np.ndarray, max_gap: int = MAX_GAP_FRAMES) -> np.ndarray:
    """Linear interpolation over NaN runs of length <= max_gap.

    Boundary runs are held from the nearest valid sample. Longer interior
    runs raise.
    """
    s = series.copy()
    isnan = np.isnan(s)
    if not isnan.any():
        return s
    if isnan.all():
        raise FeatureError("keypoint series entirely missing")
    idx = np.flatnonzero(~isnan)
    runs = []
    start = None
    for i in range(len(s)):
        if isnan[i] and start is None:
            start = i
        elif not isnan[i] and start is not None:
            runs.append((start, i - 1))
            start = None
    if start is not None:
        runs.append((start, len(s) - 1))
    for a, b in runs:
        gap = b - a + 1
        interior = a > 0 and b < len(s) - 1
        if interior and gap > max_gap:
            raise FeatureError(f"keypoint gap of {gap} frames at {a}..{b} exceeds {max_gap}")
        if not interior and gap > max_gap:
            raise FeatureError(f"boundary keypoint gap of {gap} frames at {a}..{b}")
    s[isnan] = np.interp(np.flatnonzero(isnan), idx, s[idx])
    return s


def normalize_pose(frames: Sequence[KeypointFrame]) -> list[KeypointFrame]:
    """Translate by -nose per frame, scale by 1 / median shoulder width.

    The result is invariant to any common translation and uniform scaling
    of the input coordinates.
    """
    if len(frames) < 1:
        raise FeatureError("empty clip")
    xy, conf = _clip_arrays(frames)
    names = list(KEYPOINT_NAMES)
    ref_idx = [names.index(n) for n in ("nose", "left_shoulder", "right_shoulder")]
    missing = np.isnan(xy[:, ref_idx, 0]).any(axis=1)
    if missing.mean() > 1.0 - MIN_REFERENCE_PRESENCE:
        bad = np.flatnonzero(missing).tolist()
        raise FeatureError(
            f"reference keypoints (nose/shoulders) missing in frames {bad}"
        )
    for j in ref_idx:
        for axis in range(2):
            xy[:, j, axis] = _fill_gaps(xy[:, j, axis])
    nose = xy[:, names.index("nose")]
    ls = xy[:, names.index("left_shoulder")]
    rs = xy[:, names.index("right_shoulder")]
    width = float(np.median(np.linalg.norm(ls - rs, axis=1)))
    if width <= 0.0:
        raise FeatureError("degenerate shoulder width")
    out = (xy - nose[:, None, :]) / width
    return _frames_from_arrays(out, conf)


def finite_difference(series, order: int, dt: float) -> np.ndarray:
    """Second-order derivative stencils of equal output length.

    Central differences in the interior; one-sided three-point stencils at
    both boundaries. order=2 is the order-1 operator applied twice.
    """
    s = np.asarray(series, dtype=float)
    if s.ndim != 1 or s.shape[0] < 3:
        raise FeatureError("finite_difference needs a 1-D series of length >= 3")
    if dt <= 0:
        raise FeatureError("dt must be positive")
    if order == 1:
        d = np.empty_like(s)
        d[1:-1] = (s[2:] - s[:-2]) / (2.0 * dt)
        d[0] = (-3.0 * s[0] + 4.0 * s[1] - s[2]) / (2.0 * dt)
        d[-1] = (3.0 * s[-1] - 4.0 * s[-2] + s[-3]) / (2.0 * dt)
        return d
    if order == 2:
        return finite_difference(finite_difference(s, 1, dt), 1, dt)
    raise FeatureError(f"order must be 1 or 2, got {order}")


def resample(series, target_len: int) -> np.ndarray:
    """Cubic-spline resampling on a uniform [0, 1] parameterization.

    Not-a-knot boundary conditions, so cubic polynomials are reproduced
    exactly; endpoints are knot evaluations and survive unchanged.
    """
    s = np.asarray(series, dtype=float)
    if s.ndim != 1 or s.shape[0] < 4:
        raise FeatureError("resample needs a 1-D series of length >= 4")
    if target_len < 2:
        raise FeatureError("target_len must be >= 2")
    u_in = np.linspace(0.0, 1.0, s.shape[0])
    u_out = np.linspace(0.0, 1.0, target_len)
    return CubicSpline(u_in, s)(u_out)


def _wrist_series(frames: Sequence[KeypointFrame]):
    xy, _ = _clip_arrays(frames)
    names = list(KEYPOINT_NAMES)
    out = {}
    for side in ("left", "right"):
        j = names.index(f"{side}_wrist")
        sx = xy[:, j, 0]
        missing = np.isnan(sx).mean()
        if missing > MAX_WRIST_MISSING:
            raise FeatureError(
                f"{side} wrist missing in {missing:.0%} of frames (limit {MAX_WRIST_MISSING:.0%})"
            )
        out[side] = np.stack(
            [_fill_gaps(xy[:, j, 0]), _fill_gaps(xy[:, j, 1])], axis=1
        )
    return out["left"], out["right"]


def movement_signature(
    frames: Sequence[KeypointFrame], canonical_n: int = VIDEO_CANONICAL_FRAMES
) -> MovementSignature:
    """Wrist position/velocity/acceleration matrices on the canonical grid.

    Channel order is (left wrist x, left wrist y, right wrist x, right
    wrist y); derivatives use unit sample spacing. flatten_features gives
    the channel-major export order; the autoencoder boundary interleaves
    time-major (see interleave_features for why).
    """
    if len(frames) < 4:
        raise FeatureError("movement signature needs at least 4 frames")
    left, right = _wrist_series(frames)
    channels = [left[:, 0], left[:, 1], right[:, 0], right[:, 1]]
    if len(frames) == canonical_n:
        pos = np.stack(channels)
    else:
        pos = np.stack([resample(c, canonical_n) for c in channels])
    vel = np.stack([finite_difference(c, 1, 1.0) for c in pos])
    acc = np.stack([finite_difference(c, 1, 1.0) for c in vel])
    return MovementSignature(pos, vel, acc)


def _region_label(x: float, y: float, eye_y: float, shoulder_y: float) -> str:
    if x < -GRID_COLUMN_SPLIT:
        col = "left"
    elif x <= GRID_COLUMN_SPLIT:
        col = "center"
    else:
        col = "right"
    if y < eye_y:
        row = "face"
    elif y < shoulder_y:
        row = "upper"
    elif y < shoulder_y + GRID_TORSO_DEPTH:
        row = "torso"
    else:
        row = "lower"
    return f"{row}-{col}"


def location_tokens(frames: Sequence[KeypointFrame]) -> LocationToken:
    """Start/end dominant-palm positions with body-zone grid labels.

    Expects normalized frames. The dominant hand is the wrist with the
    greater total path length; start/end are 3-frame means.
    """
    if len(frames) < 3:
        raise FeatureError("location tokens need at least 3 frames")
    xy, _ = _clip_arrays(frames)
    names = list(KEYPOINT_NAMES)
    for side in ("left", "right"):
        j = names.index(f"{side}_wrist")
        for window in (range(3), range(len(frames) - 3, len(frames))):
            if any(np.isnan(xy[i, j]).any() for i in window):
                raise FeatureError(f"{side} wrist missing in boundary frames")
    left, right = _wrist_series(frames)
    path = lambda w: float(np.sum(np.linalg.norm(np.diff(w, axis=0), axis=1)))
    dominant = left if path(left) >= path(right) else right
    start = dominant[:3].mean(axis=0)
    end = dominant[-3:].mean(axis=0)
    eyes = [names.index("left_eye"), names.index("right_eye")]
    shoulders = [names.index("left_shoulder"), names.index("right_shoulder")]
    eye_y = float(np.nanmedian(xy[:, eyes, 1]))
    shoulder_y = float(np.nanmedian(xy[:, shoulders, 1]))
    return LocationToken(
        (float(start[0]), float(start[1])),
        (float(end[0]), float(end[1])),
        _region_label(start[0], start[1], eye_y, shoulder_y),
        _region_label(end[0], end[1], eye_y, shoulder_y),
    )


def accel_displacement(
    accel,
    sample_rate: float = ACCEL_RATE_HZ,
    out_len: int = ACCEL_SAMPLES,
    remove_mean: bool = True,
    remove_drift: bool = True,
) -> np.ndarray:
    """3-axis displacement from raw acceleration.

    Per-channel mean subtraction (gravity/bias), double trapezoidal
    integration, per-channel linear detrend, then spline upsampling to
    `out_len` samples.
    """
    from scipy.integrate import cumulative_trapezoid

    a = np.asarray(accel, dtype=float)
    if a.ndim != 2 or a.shape[0] != 3:
        raise FeatureError(f"expected a 3xM acceleration matrix, got {a.shape}")
    if a.shape[1] < 4:
        raise FeatureError("need at least 4 acceleration samples")
    if not np.isfinite(a).all():
        raise FeatureError("non-finite acceleration input")
    if not a.any():
        raise FeatureError("all-zero acceleration input")
    dt = 1.0 / sample_rate
    if remove_mean:
        a = a - a.mean(axis=1, keepdims=True)
    vel = cumulative_trapezoid(a, dx=dt, axis=1, initial=0.0)
    disp = cumulative_trapezoid(vel, dx=dt, axis=1, initial=0.0)
    if remove_drift:
        t = np.arange(disp.shape[1]) * dt
        for ch in range(3):
            coef = np.polyfit(t, disp[ch], 1)
            disp[ch] -= np.polyval(coef, t)
    return np.stack([resample(disp[ch], out_len) for ch in range(3)])


def minmax_channels(mat: np.ndarray, guard: float = 1e-12) -> np.ndarray:
    """Min-max normalize each channel (row) of a feature matrix to [0, 1].

    Channels with a range below `guard` become the constant 0.5.
    """
    mat = np.asarray(mat, dtype=float)
    lo = mat.min(axis=1, keepdims=True)
    hi = mat.max(axis=1, keepdims=True)
    span = hi - lo
    flat = (span < guard).reshape(-1)
    out = np.empty_like(mat)
    out[flat] = 0.5
    live = ~flat
    out[live] = (mat[live] - lo[live]) / span[live]
    return out


def flatten_features(mat: np.ndarray) -> np.ndarray:
    """Channel-major flattening: all of channel 1, then channel 2, ...

    This is the export/serialization order. The autoencoder boundary uses
    interleave_features instead: with time-major interleaving, latent node
    i of every encoder covers the same time fraction of the gesture
    regardless of channel count, which is what makes latents comparable
    across technologies. (With channel-major layout, an 800-input encoder
    taps channel content at a different rate than a 600-input one, and no
    amount of alignment can re-time the taps.)
    """
    return np.ascontiguousarray(np.asarray(mat, dtype=float).reshape(-1))


def unflatten_features(vec: np.ndarray, n_channels: int) -> np.ndarray:
    vec = np.asarray(vec, dtype=float)
    if vec.shape[0] % n_channels:
        raise FeatureError(f"length {vec.shape[0]} not divisible by {n_channels} channels")
    return vec.reshape(n_channels, -1)


def interleave_features(mat: np.ndarray) -> np.ndarray:
    """Time-major flattening: all channels at t0, all channels at t1, ..."""
    return np.ascontiguousarray(np.asarray(mat, dtype=float).T.reshape(-1))


def deinterleave_features(vec: np.ndarray, n_channels: int) -> np.ndarray:
    vec = np.asarray(vec, dtype=float)
    if vec.shape[0] % n_channels:
        raise FeatureError(f"length {vec.shape[0]} not divisible by {n_channels} channels")
    return vec.reshape(-1, n_channels).T


def video_feature_vector(frames: Sequence[KeypointFrame]) -> np.ndarray:
    """Normalized pose -> 4x200 positions -> [0,1] -> 800-vector."""
    sig = movement_signature(normalize_pose(frames))
    return interleave_features(minmax_channels(sig.position))


def wifi_feature_vector(per_pair) -> np.ndarray:
    """Antenna-pair observations -> 3x200 (x,z,r) -> [0,1] -> 600-vector."""
    return interleave_features(minmax_channels(wifi_feature_matrix(per_pair)))


def accel_feature_vector(accel, sample_rate: float = ACCEL_RATE_HZ) -> np.ndarray:
    """Raw 3xM acceleration -> 3x600 displacement -> [0,1] -> 1800-vector."""
    return interleave_features(minmax_channels(accel_displacement(accel, sample_rate)))


FEATURE_EXTRACTORS = {
    "video": video_feature_vector,
    "wifi": wifi_feature_vector,
    "accel": accel_feature_vector,
}

FEATURE_LENGTHS = {"video": 800, "wifi": 600, "accel": 1800}


def extract_feature_vector(modality: str, raw) -> np.ndarray:
    try:
        fn = FEATURE_EXTRACTORS[modality]
    except KeyError:
        raise FeatureError(f"unknown modality {modality!r}") from None
    vec = fn(raw)
    want = FEATURE_LENGTHS[modality]
    if vec.shape[0] != want:
        raise FeatureError(f"{modality} features have length {vec.shape[0]}, expected {want}")
    return vec
