"""Synthetic paired multi-modality gesture data.

A gesture class is a parametric 2D wrist trajectory in normalized body
coordinates (one unit = shoulder width, y grows downward, confined to
[-2, 2]^2). The same ground-truth path is rendered as video pose
keypoints, WiFi (range, azimuth, elevation) observations, and a wrist
accelerometer trace, so the transfer pipeline can be tested end-to-end
with known cross-modal correspondence.

World geometry (documented for reproducibility): one normalized unit is
0.2 m; the WiFi sensor sits at the origin with the user 2 m away along
the boresight, gestures centered 1 m off-axis and 1 m above the sensor
plane; the video skeleton places the nose at pixel (320, 200) with an
80 px shoulder width.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from . import features as ft

PATH_RATE_HZ = 100.0
VIDEO_FPS = 33.0
ACCEL_DECIMATION = 5  # 100 Hz path -> 20 Hz accelerometer

WORLD_SCALE_M = 0.2
WIFI_X_OFFSET_M = 1.0
WIFI_Z_OFFSET_M = 1.0
WIFI_DEPTH_M = 2.0
GRAVITY_MS2 = 9.81

NOSE_PX = (320.0, 200.0)
SHOULDER_WIDTH_PX = 80.0
SKELETON_PX = {
    "left_eye": (-15.0, -15.0),
    "right_eye": (15.0, -15.0),
    "left_shoulder": (-40.0, 40.0),
    "right_shoulder": (40.0, 40.0),
    "left_elbow": (-55.0, 110.0),
    "right_elbow": (55.0, 110.0),
}
OFF_WRIST_PX = (60.0, 170.0)

DEFAULT_VIDEO_NOISE = 0.02
DEFAULT_WIFI_NOISE = 0.02
DEFAULT_ACCEL_NOISE = 0.05


class SpecError(ValueError):
    """Raised for invalid trajectory specifications."""


@dataclass(frozen=True)
class Primitive:
    kind: str  # line | arc | circle | zigzag | figure_eight
    params: dict

    def point(self, u):
        u = np.asarray(u, dtype=float)
        p = self.params
        if self.kind == "line":
            a = np.asarray(p["start"], dtype=float)
            b = np.asarray(p["end"], dtype=float)
            return a + u[..., None] * (b - a)
        if self.kind in ("arc", "circle"):
            c = np.asarray(p["center"], dtype=float)
            rho = p["radius"]
            t0, t1 = self._angles()
            theta = t0 + u * (t1 - t0)
            return c + rho * np.stack([np.cos(theta), np.sin(theta)], axis=-1)
        if self.kind == "zigzag":
            a = np.asarray(p["start"], dtype=float)
            b = np.asarray(p["end"], dtype=float)
            d = b - a
            n = np.array([-d[1], d[0]]) / max(np.linalg.norm(d), 1e-12)
            wave = p["amplitude"] * np.sin(2.0 * math.pi * p["cycles"] * u)
            return a + u[..., None] * d + wave[..., None] * n
        if self.kind == "figure_eight":
            c = np.asarray(p["center"], dtype=float)
            theta = 2.0 * math.pi * u
            x = p["a"] * np.sin(theta)
            y = p["b"] * np.sin(theta) * np.cos(theta)
            rot = p.get("rot", 0.0)
            cr, sr = math.cos(rot), math.sin(rot)
            return c + np.stack([cr * x - sr * y, sr * x + cr * y], axis=-1)
        raise SpecError(f"unknown primitive kind {self.kind!r}")

    def velocity(self, u):
        # derivative w.r.t. the primitive's own parameter, via a tight stencil
        h = 1e-6
        u = float(u)
        lo, hi = max(0.0, u - h), min(1.0, u + h)
        return (self.point(hi) - self.point(lo)) / (hi - lo)

    def _angles(self):
        p = self.params
        if self.kind == "circle":
            t0 = p.get("theta0", 0.0)
            return t0, t0 + p.get("direction", 1.0) * 2.0 * math.pi
        return p["theta0"], p["theta1"]


@dataclass(frozen=True)
class TrajectorySpec:
    class_id: str
    primitives: tuple[Primitive, ...]
    duration: float = 3.0

    def validate(self) -> None:
        if not self.primitives:
            raise SpecError(f"{self.class_id}: empty primitive sequence")
        if self.duration < 1.0:
            raise SpecError(f"{self.class_id}: duration must be >= 1 s")
        for a, b in zip(self.primitives, self.primitives[1:]):
            pa, pb = a.point(1.0), b.point(0.0)
            if np.linalg.norm(pa - pb) > 1e-9:
                raise SpecError(
                    f"{self.class_id}: primitives disconnected at {pa} vs {pb}"
                )
            va, vb = a.velocity(1.0), b.velocity(0.0)
            scale = max(np.linalg.norm(va), np.linalg.norm(vb), 1e-9)
            if np.linalg.norm(va - vb) / scale > 1e-5:
                raise SpecError(f"{self.class_id}: tangent break between primitives")
        pts = self.evaluate(np.linspace(0.0, 1.0, 257))
        if np.abs(pts).max() > 2.0:
            raise SpecError(f"{self.class_id}: trajectory leaves the [-2, 2]^2 box")

    def evaluate(self, u) -> np.ndarray:
        """Path points for parameter values in [0, 1], equal share per primitive."""
        u = np.atleast_1d(np.asarray(u, dtype=float))
        k = len(self.primitives)
        seg = np.minimum((u * k).astype(int), k - 1)
        local = u * k - seg
        out = np.empty((u.shape[0], 2))
        for i, prim in enumerate(self.primitives):
            mask = seg == i
            if mask.any():
                out[mask] = prim.point(local[mask])
        return out


@dataclass(frozen=True)
class UserProfile:
    user_id: int
    scale: float = 1.0
    offset: tuple[float, float] = (0.0, 0.0)
    speed: float = 1.0
    noise: float = 0.0

    def __post_init__(self):
        if not 0.7 <= self.scale <= 1.3:
            raise SpecError(f"user scale {self.scale} outside [0.7, 1.3]")
        if not 0.8 <= self.speed <= 1.25:
            raise SpecError(f"user speed {self.speed} outside [0.8, 1.25]")
        if self.noise < 0:
            raise SpecError("noise must be >= 0")


def default_user(user_id: int, noise: float = DEFAULT_VIDEO_NOISE) -> UserProfile:
    """Deterministic per-user style: scale/offset/speed derived from the id."""
    rng = np.random.default_rng(instance_seed(0xC0FFEE, f"user-{user_id}"))
    return UserProfile(
        user_id=user_id,
        scale=float(rng.uniform(0.85, 1.15)),
        offset=(float(rng.uniform(-0.15, 0.15)), float(rng.uniform(-0.15, 0.15))),
        speed=float(rng.uniform(0.9, 1.1)),
        noise=noise,
    )


@dataclass
class Path:
    """A 2D wrist path sampled at 100 Hz in normalized body coordinates."""

    times: np.ndarray
    xy: np.ndarray  # (n, 2)

    @property
    def duration(self) -> float:
        return self.xy.shape[0] / PATH_RATE_HZ


def instance_seed(master_seed: int, tag: str) -> int:
    """Stable per-instance RNG seed (independent of Python's hash salt)."""
    digest = hashlib.sha256(f"{master_seed}:{tag}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def gen_trajectory(spec: TrajectorySpec, user: UserProfile, seed: int) -> Path:
    """Sample the class trajectory with the user's style and jitter applied."""
    spec.validate()
    n = round(PATH_RATE_HZ * spec.duration / user.speed)
    u = np.linspace(0.0, 1.0, n)
    pts = spec.evaluate(u)
    pts = user.scale * pts + np.asarray(user.offset)
    if user.noise > 0:
        rng = np.random.default_rng(seed)
        pts = pts + rng.normal(0.0, user.noise, pts.shape)
    return Path(np.arange(n) / PATH_RATE_HZ, pts)


def _resample_path(path: Path, n_out: int) -> np.ndarray:
    return np.stack(
        [ft.resample(path.xy[:, 0], n_out), ft.resample(path.xy[:, 1], n_out)], axis=1
    )


def render_video_modality(
    path: Path,
    noise: float = DEFAULT_VIDEO_NOISE,
    seed: int = 0,
    fps: float = VIDEO_FPS,
    dominant: str = "left_wrist",
):
    """Keypoint frames: dominant wrist rides the path, off hand at rest.

    Nose, eyes, shoulders and elbows get Gaussian jitter of `noise`
    shoulder-widths; confidences are drawn uniformly from [0.8, 1.0].
    """
    if path.duration < 1.0:
        raise SpecError("video rendering needs a path of >= 1 s")
    n_frames = round(fps * path.duration)
    track = _resample_path(path, n_frames)
    rng = np.random.default_rng(seed)
    sigma_px = noise * SHOULDER_WIDTH_PX
    off = "right_wrist" if dominant == "left_wrist" else "left_wrist"
    frames = []
    for i in range(n_frames):
        frame = ft.KeypointFrame()
        conf = dict(zip(ft.KEYPOINT_NAMES, rng.uniform(0.8, 1.0, len(ft.KEYPOINT_NAMES))))
        if noise > 0:
            jitter = rng.normal(0.0, sigma_px, (len(SKELETON_PX) + 1, 2))
        else:
            jitter = np.zeros((len(SKELETON_PX) + 1, 2))
        frame.set("nose", NOSE_PX[0] + jitter[0, 0], NOSE_PX[1] + jitter[0, 1], conf["nose"])
        for j, (name, (dx, dy)) in enumerate(SKELETON_PX.items(), start=1):
            frame.set(name, NOSE_PX[0] + dx + jitter[j, 0], NOSE_PX[1] + dy + jitter[j, 1], conf[name])
        frame.set(
            dominant,
            NOSE_PX[0] + SHOULDER_WIDTH_PX * track[i, 0],
            NOSE_PX[1] + SHOULDER_WIDTH_PX * track[i, 1],
            conf[dominant],
        )
        frame.set(off, NOSE_PX[0] + OFF_WRIST_PX[0], NOSE_PX[1] + OFF_WRIST_PX[1], conf[off])
        frames.append(frame)
    return frames


def path_to_world(xy: np.ndarray):
    """Normalized path -> lateral/vertical meters in the sensor frame."""
    x_m = WIFI_X_OFFSET_M + WORLD_SCALE_M * xy[:, 0]
    z_m = WIFI_Z_OFFSET_M - WORLD_SCALE_M * xy[:, 1]
    return x_m, z_m


def world_to_path(x_m, z_m) -> np.ndarray:
    return np.stack(
        [
            (np.asarray(x_m) - WIFI_X_OFFSET_M) / WORLD_SCALE_M,
            (WIFI_Z_OFFSET_M - np.asarray(z_m)) / WORLD_SCALE_M,
        ],
        axis=1,
    )


def render_wifi_modality(
    path: Path,
    pairs: int = 90,
    noise: float = DEFAULT_WIFI_NOISE,
    seed: int = 0,
    depth: float = WIFI_DEPTH_M,
) -> np.ndarray:
    """(pairs, 200, 3) observations (r, azimuth, elevation) in radians.

    Angles invert the planar-coordinate formula exactly, so wifi_coords on
    a noiseless observation returns the path point; each pair sees
    multiplicative range noise (1 + eta), eta ~ N(0, noise).
    """
    track = _resample_path(path, ft.WIFI_SAMPLES)
    x_m, z_m = path_to_world(track)
    if np.any(x_m <= 0.0) or np.any(z_m < 0.0):
        raise SpecError("path leaves the sensor's angular cone")
    r_clean = np.sqrt(x_m**2 + z_m**2 + depth**2)
    alpha = np.arctan(x_m / r_clean)
    el = np.arctan(z_m * np.cos(alpha) / r_clean)
    rng = np.random.default_rng(seed)
    obs = np.empty((pairs, ft.WIFI_SAMPLES, 3))
    for p in range(pairs):
        eta = rng.normal(0.0, noise, ft.WIFI_SAMPLES) if noise > 0 else 0.0
        obs[p, :, 0] = r_clean * (1.0 + eta)
        obs[p, :, 1] = alpha
        obs[p, :, 2] = el
    return obs


def render_accel_modality(
    path: Path,
    noise: float = DEFAULT_ACCEL_NOISE,
    seed: int = 0,
    gravity: float = GRAVITY_MS2,
):
    """3xM wrist acceleration at 20 Hz: (lateral, gravity axis, vertical).

    The planar second derivative of the path (in meters) lands on the X
    and Z rows; the Y row carries the gravity constant. Returns
    (times, accel).
    """
    if path.duration < 1.0:
        raise SpecError("accel rendering needs a path of >= 1 s")
    dt = 1.0 / PATH_RATE_HZ
    x_m = WORLD_SCALE_M * path.xy[:, 0]
    z_m = -WORLD_SCALE_M * path.xy[:, 1]
    ax = ft.finite_difference(x_m, 2, dt)
    az = ft.finite_difference(z_m, 2, dt)
    m = path.xy.shape[0] // ACCEL_DECIMATION
    sub = slice(0, m * ACCEL_DECIMATION, ACCEL_DECIMATION)
    accel = np.stack([ax[sub], np.full(m, gravity), az[sub]])
    if noise > 0:
        rng = np.random.default_rng(seed)
        accel = accel + rng.normal(0.0, noise, accel.shape)
    return path.times[sub].copy(), accel


def _line(v, angle, cx=0.0, cy=0.9, half=0.8):
    dx, dy = half * math.cos(angle), half * math.sin(angle)
    return Primitive("line", {"start": (cx - dx, cy - dy), "end": (cx + dx, cy + dy)})


def default_class_library(n_classes: int) -> list[TrajectorySpec]:
    """Deterministic catalog of mutually distinct gesture trajectories.

    Classes cycle through primitive families; each revisit of a family
    shifts its parameters far enough that any two classes stay separated
    by a discrete Frechet distance above 0.2 normalized units.
    """
    if n_classes > 30:
        raise SpecError("library defines at most 30 distinct classes")
    specs = []
    for k in range(n_classes):
        v = k // 6
        kind = k % 6
        cid = f"g{k:02d}"
        if kind == 0:
            prim = _line(v, angle=0.35 + 1.25 * v, cy=0.9 - 0.1 * v)
            prims = (prim,)
        elif kind == 1:
            span = math.pi * (0.7 + 0.12 * v)
            t0 = 0.5 + 1.1 * v
            prims = (
                Primitive(
                    "arc",
                    {
                        "center": (0.3 - 0.25 * v, 0.6 + 0.08 * v),
                        "radius": 0.55 + 0.12 * v,
                        "theta0": t0,
                        "theta1": t0 + span,
                    },
                ),
            )
        elif kind == 2:
            prims = (
                Primitive(
                    "circle",
                    {
                        "center": (0.25 * (v - 1), 0.5 + 0.07 * v),
                        "radius": 0.38 + 0.2 * v,
                        "theta0": 0.8 * v,
                        "direction": 1.0 if v % 2 == 0 else -1.0,
                    },
                ),
            )
        elif kind == 3:
            ang = -0.4 + 0.75 * v
            dx, dy = 0.85 * math.cos(ang), 0.85 * math.sin(ang)
            prims = (
                Primitive(
                    "zigzag",
                    {
                        "start": (-dx, 0.9 - dy),
                        "end": (dx, 0.9 + dy),
                        "cycles": 2 + v,
                        "amplitude": 0.32,
                    },
                ),
            )
        elif kind == 4:
            prims = (
                Primitive(
                    "figure_eight",
                    {
                        "center": (0.1 * v, 0.75),
                        "a": 0.55 + 0.14 * v,
                        "b": 1.05 - 0.16 * v,
                        "rot": 0.55 * v,
                    },
                ),
            )
        else:
            # S-curve: two arcs joined with matching tangents
            rho = 0.38 + 0.1 * v
            cx = 0.15 * (v - 1)
            prims = (
                Primitive(
                    "arc",
                    {
                        "center": (cx, 1.1),
                        "radius": rho,
                        "theta0": math.pi / 2,
                        "theta1": -math.pi / 2,
                    },
                ),
                Primitive(
                    "arc",
                    {
                        "center": (cx, 1.1 - 2 * rho),
                        "radius": rho,
                        "theta0": math.pi / 2,
                        "theta1": 3 * math.pi / 2,
                    },
                ),
            )
        spec = TrajectorySpec(cid, prims)
        spec.validate()
        specs.append(spec)
    return specs
