"""Shared domain types, frames, pinhole camera and rigid transforms.

Conventions used throughout the package:

* Camera frame: z forward, x right, y down.
* Body frame: x forward, y left, z up.
* World frame: fixed; coincides with the body frame at stream start unless a
  body-to-world offset is configured.
* ``T_AB`` maps coordinates from frame B into frame A (``p_A = R p_B + t``).
* Timestamps are stored as unsigned 64-bit nanoseconds.  Math is done in
  float seconds relative to a local origin (usually the buffer start) so the
  float64 mantissa is not wasted on the epoch.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

GRAVITY = np.array([0.0, 0.0, -9.81])
NS_PER_S = 1_000_000_000

# Packed event record as kept in memory and on disk (minus the pad byte).
EVENT_DTYPE = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1")])


class GeometryError(ValueError):
    pass


class NonPositiveDepth(GeometryError):
    pass


class FrameMismatch(GeometryError):
    pass


class Frame(str, Enum):
    CAMERA = "Camera"
    BODY = "Body"
    WORLD = "World"


def ns_to_s(t_ns, origin_ns: int = 0):
    """Convert nanosecond timestamps to float seconds relative to ``origin_ns``."""
    if isinstance(t_ns, np.ndarray):
        return (t_ns.astype(np.int64) - np.int64(origin_ns)) * 1e-9
    return (int(t_ns) - int(origin_ns)) * 1e-9


def s_to_ns(t_s: float) -> int:
    return int(round(t_s * NS_PER_S))


@dataclass(frozen=True)
class Event:
    t: int
    x: int
    y: int
    polarity: int

    def __post_init__(self):
        if self.t < 0:
            raise ValueError("event time must be non-negative")
        if self.polarity not in (-1, 1):
            raise ValueError(f"polarity must be -1 or +1, got {self.polarity}")


def make_events(t, x, y, p) -> np.ndarray:
    """Pack parallel arrays into a structured event array."""
    ev = np.empty(len(t), dtype=EVENT_DTYPE)
    ev["t"] = t
    ev["x"] = x
    ev["y"] = y
    ev["p"] = p
    return ev


@dataclass(frozen=True)
class EventBuffer:
    """Events falling in ``[t0, t0 + window]`` (nanoseconds), time-sorted."""

    events: np.ndarray
    t0: int
    window: int

    def __post_init__(self):
        if self.events.dtype != EVENT_DTYPE:
            raise TypeError("events must use EVENT_DTYPE")
        t = self.events["t"]
        if len(t):
            if np.any(np.diff(t.astype(np.int64)) < 0):
                raise ValueError("events must be sorted by time")
            if t[0] < self.t0 or t[-1] > self.t0 + self.window:
                raise ValueError("events outside buffer window")

    def __len__(self) -> int:
        return len(self.events)

    @property
    def t1(self) -> int:
        return self.t0 + self.window

    @property
    def window_s(self) -> float:
        return self.window * 1e-9

    def relative_times(self) -> np.ndarray:
        """Event times in seconds since ``t0``."""
        return ns_to_s(self.events["t"], self.t0)

    @classmethod
    def slice(cls, events: np.ndarray, t0: int, window: int) -> "EventBuffer":
        """Cut the buffer for ``[t0, t0 + window)`` out of a sorted stream."""
        t = events["t"]
        lo = np.searchsorted(t, np.uint64(t0), side="left")
        hi = np.searchsorted(t, np.uint64(t0 + window), side="left")
        return cls(events[lo:hi], t0, window)


@dataclass(frozen=True)
class ImuSample:
    t: int
    omega: np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.omega)):
            raise ValueError("IMU sample must be finite")


@dataclass(frozen=True)
class ImuStream:
    """Gyro samples: ``t`` (N,) uint64 ns and ``omega`` (N, 3) rad/s in body frame."""

    t: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        if self.omega.shape != (len(self.t), 3):
            raise ValueError("omega must have shape (N, 3)")
        if np.any(np.diff(self.t.astype(np.int64)) < 0):
            raise ValueError("IMU samples must be time-sorted")
        if not np.all(np.isfinite(self.omega)):
            raise ValueError("IMU samples must be finite")

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, i: int) -> ImuSample:
        return ImuSample(int(self.t[i]), self.omega[i].copy())


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the sensor")

    @classmethod
    def from_fov(cls, width: int, height: int, hfov_deg: float) -> "CameraIntrinsics":
        f = 0.5 * width / np.tan(np.deg2rad(hfov_deg) / 2)
        return cls(f, f, width / 2, height / 2, width, height)

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def K_inv(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )

    def contains(self, u, v):
        """Whether continuous pixel coordinates fall on the sensor."""
        return (u > -0.5) & (u < self.width - 0.5) & (v > -0.5) & (v < self.height - 0.5)


def project(intrinsics: CameraIntrinsics, p_camera) -> np.ndarray:
    """Pinhole projection of one point (3,) or many (N, 3) to pixels."""
    p = np.asarray(p_camera, dtype=np.float64)
    z = p[..., 2]
    if np.any(z <= 0):
        raise NonPositiveDepth("point at or behind the camera plane")
    u = intrinsics.fx * p[..., 0] / z + intrinsics.cx
    v = intrinsics.fy * p[..., 1] / z + intrinsics.cy
    return np.stack([u, v], axis=-1)


def back_project(intrinsics: CameraIntrinsics, pixel, depth) -> np.ndarray:
    """Point at ``depth`` (camera z) along the ray through ``pixel``."""
    px = np.asarray(pixel, dtype=np.float64)
    z = np.asarray(depth, dtype=np.float64)
    if np.any(z <= 0):
        raise NonPositiveDepth("depth must be positive")
    x = (px[..., 0] - intrinsics.cx) / intrinsics.fx * z
    y = (px[..., 1] - intrinsics.cy) / intrinsics.fy * z
    return np.stack([x, y, np.broadcast_to(z, x.shape)], axis=-1)


def skew(w) -> np.ndarray:
    """Cross-product matrix: ``skew(w) @ v == np.cross(w, v)``."""
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


def rotation_from_rotvec(rotvec) -> np.ndarray:
    """Rodrigues formula; exact to float precision for any angle."""
    r = np.asarray(rotvec, dtype=np.float64)
    theta = np.linalg.norm(r)
    if theta < 1e-12:
        return np.eye(3) + skew(r)
    k = skew(r / theta)
    return np.eye(3) + np.sin(theta) * k + (1 - np.cos(theta)) * (k @ k)


def orthonormalize(R: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(R)
    out = u @ vt
    if np.linalg.det(out) < 0:
        u[:, -1] *= -1
        out = u @ vt
    return out


def _orthonormality_error(R: np.ndarray) -> float:
    return float(np.linalg.norm(R.T @ R - np.eye(3)))


@dataclass(frozen=True)
class RigidTransform:
    """``T_to_from``: maps points expressed in ``from_frame`` into ``to_frame``."""

    rotation: np.ndarray
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    from_frame: Frame = Frame.CAMERA
    to_frame: Frame = Frame.WORLD

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if R.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        if _orthonormality_error(R) > 1e-6 or np.linalg.det(R) <= 0:
            raise ValueError("rotation must be a proper orthonormal matrix")
        if _orthonormality_error(R) > 1e-9:
            R = orthonormalize(R)
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "from_frame", Frame(self.from_frame))
        object.__setattr__(self, "to_frame", Frame(self.to_frame))

    @classmethod
    def identity(cls, from_frame: Frame, to_frame: Frame) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3), from_frame, to_frame)

    def apply(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def rotate(self, v) -> np.ndarray:
        """Rotate free vectors (velocities, gravity); no translation."""
        return np.asarray(v, dtype=np.float64) @ self.rotation.T

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation, self.to_frame, self.from_frame)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self ∘ other``: first apply ``other``, then ``self``."""
        if self.from_frame != other.to_frame:
            raise FrameMismatch(
                f"cannot compose T[{self.to_frame.value}<-{self.from_frame.value}] with "
                f"T[{other.to_frame.value}<-{other.from_frame.value}]"
            )
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
            other.from_frame,
            self.to_frame,
        )

    __matmul__ = compose

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    return a.compose(b)


def invert(a: RigidTransform) -> RigidTransform:
    return a.inverse()


# Forward-looking camera on the body: camera z -> body x, camera x -> body -y,
# camera y -> body -z.
R_BODY_CAMERA_FORWARD = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])


def rotvec_from_rotation(R: np.ndarray) -> np.ndarray:
    from scipy.spatial.transform import Rotation

    return Rotation.from_matrix(R).as_rotvec()


class NoOdometry(LookupError):
    pass


@dataclass(frozen=True)
class OdometryStream:
    """Body pose samples ``T_WB``: ``t`` (N,) ns, ``rotation`` (N, 3, 3), ``translation`` (N, 3)."""

    t: np.ndarray
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        n = len(self.t)
        if self.rotation.shape != (n, 3, 3) or self.translation.shape != (n, 3):
            raise ValueError("odometry arrays have inconsistent shapes")
        if np.any(np.diff(self.t.astype(np.int64)) < 0):
            raise ValueError("odometry samples must be time-sorted")

    def __len__(self) -> int:
        return len(self.t)

    def at(self, t_ns: int) -> RigidTransform:
        """Interpolated ``T_WB`` (slerp on rotation, linear on translation)."""
        t = self.t
        if len(t) == 0 or t_ns < t[0] or t_ns > t[-1]:
            raise NoOdometry(f"no odometry covering t={t_ns} ns")
        i = int(np.searchsorted(t, np.uint64(t_ns), side="right")) - 1
        if i >= len(t) - 1 or t[i] == t_ns:
            return RigidTransform(self.rotation[i], self.translation[i], Frame.BODY, Frame.WORLD)
        a = (int(t_ns) - int(t[i])) / (int(t[i + 1]) - int(t[i]))
        R0, R1 = self.rotation[i], self.rotation[i + 1]
        R = R0 @ rotation_from_rotvec(a * rotvec_from_rotation(R0.T @ R1))
        p = (1 - a) * self.translation[i] + a * self.translation[i + 1]
        return RigidTransform(R, p, Frame.BODY, Frame.WORLD)
