"""Motion-compensated mean timestamp image and moving-pixel segmentation."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit

from .core import CameraIntrinsics, EventBuffer, ImuStream


class NoImuCoverage(LookupError):
    pass


class EmptyImage(ValueError):
    pass


@dataclass(frozen=True)
class SegmentationConfig:
    theta0: float = 0.05
    theta1: float = 0.5  # s/rad
    window: float = 0.010  # s

    def __post_init__(self):
        if self.theta0 <= 0 or self.theta1 < 0 or self.window <= 0:
            raise ValueError("need theta0 > 0, theta1 >= 0, window > 0")


@dataclass(frozen=True)
class TimestampImage:
    """Per-pixel mean of ``t_i - t0`` (seconds); NaN where no event landed."""

    mean_ts: np.ndarray  # (H, W) float64
    count: np.ndarray  # (H, W) int32
    t0: int  # ns
    window: float  # s
    touched: np.ndarray | None = None  # ascending flat indices of non-empty pixels

    @property
    def valid(self) -> np.ndarray:
        return self.count > 0

    def flat_valid(self) -> np.ndarray:
        if self.touched is not None:
            return self.touched
        return np.flatnonzero(self.count)


@dataclass(frozen=True)
class NormalizedImage:
    rho: np.ndarray  # (H, W), NaN where empty
    mean_ts_mean: float
    window: float
    touched: np.ndarray | None = None


@dataclass(frozen=True)
class BinaryMap:
    mask: np.ndarray  # (H, W) bool
    threshold_used: float
    flat: np.ndarray | None = None  # ascending flat indices of the true pixels

    def pixels(self) -> np.ndarray:
        """(n, 2) ``(x, y)`` of the true pixels in row-major order."""
        flat = self.flat if self.flat is not None else np.flatnonzero(self.mask)
        w = self.mask.shape[1]
        return np.stack([flat % w, flat // w], axis=1)


@dataclass(frozen=True)
class WarpedEvents:
    """Compensated event coordinates; ``inside`` flags those still on the sensor."""

    x: np.ndarray
    y: np.ndarray
    inside: np.ndarray


def mean_angular_rate(imu: ImuStream, t0: int, t1: int) -> np.ndarray:
    """Time-weighted mean gyro rate over ``[t0, t1]`` (ns).

    Each sample holds its value until the next one (the last sample holds
    indefinitely).  Only the part of the window covered by samples counts.
    """
    if t1 < t0:
        raise ValueError("t1 must not precede t0")
    t = imu.t.astype(np.int64)
    if len(t) == 0 or t[0] > t1:
        raise NoImuCoverage(f"no IMU samples before t={t1}")
    if t1 == t0:
        i = int(np.searchsorted(t, t0, side="right")) - 1
        if i < 0:
            raise NoImuCoverage(f"no IMU samples at t={t0}")
        return imu.omega[i].astype(float)
    i_lo = max(int(np.searchsorted(t, t0, side="right")) - 1, 0)
    i_hi = int(np.searchsorted(t, t1, side="left"))
    starts = t[i_lo:i_hi]
    ends = np.append(t[i_lo + 1 : i_hi], t1)
    w = (np.minimum(ends, t1) - np.maximum(starts, t0)).astype(float)
    w = np.clip(w, 0.0, None)
    total = w.sum()
    if total <= 0:
        raise NoImuCoverage(f"IMU samples do not overlap [{t0}, {t1}]")
    return (w[:, None] * imu.omega[i_lo:i_hi]).sum(axis=0) / total


def compensation_rate(omega_body: np.ndarray, R_camera_body: np.ndarray) -> np.ndarray:
    """Rate to feed :func:`motion_compensate` from a mean body-frame gyro reading.

    A static point seen by a camera turning at ``w`` (camera frame) drifts as
    ``dp/dt = -w x p``.  The warp ``x' = K [I - [w]x dt] K^-1 x`` undoes that
    drift when it is given the negated camera-frame rate.
    """
    return -(np.asarray(R_camera_body) @ np.asarray(omega_body, dtype=float))


def warp_points(x, y, dt, omega_bar, intrinsics: CameraIntrinsics):
    """``x' = K[I - [w]x dt] K^-1 x`` on float pixel coordinates; returns ``(x', y', c')``.

    ``c'`` is the third homogeneous coordinate; the warp is only meaningful where it is positive.
    """
    w = np.asarray(omega_bar, dtype=np.float64)
    fx, fy, cx, cy = intrinsics.fx, intrinsics.fy, intrinsics.cx, intrinsics.cy
    a = (x - cx) / fx
    b = (y - cy) / fy
    # (a', b', c') = (I - [w]x dt) (a, b, 1)
    a2 = a - dt * (w[1] - w[2] * b)
    b2 = b - dt * (w[2] * a - w[0])
    c2 = 1.0 - dt * (w[0] * b - w[1] * a)
    # Add the displacement rather than re-projecting so dt == 0 stays bit-exact.
    return x + fx * (a2 / c2 - a), y + fy * (b2 / c2 - b), c2


def motion_compensate(buffer: EventBuffer, omega_bar, intrinsics: CameraIntrinsics) -> WarpedEvents:
    """Warp every event back to the buffer start with :func:`warp_points`."""
    ev = buffer.events
    x = ev["x"].astype(np.float64)
    y = ev["y"].astype(np.float64)
    if not np.any(omega_bar) or len(ev) == 0:
        return WarpedEvents(x, y, _inside(intrinsics, x, y))
    xw, yw, c2 = warp_points(x, y, buffer.relative_times(), omega_bar, intrinsics)
    return WarpedEvents(xw, yw, _inside(intrinsics, xw, yw) & (c2 > 0))


def _inside(intrinsics: CameraIntrinsics, x, y) -> np.ndarray:
    return (x > -0.5) & (x < intrinsics.width - 0.5) & (y > -0.5) & (y < intrinsics.height - 0.5)


def rasterize(warped: WarpedEvents, width: int) -> np.ndarray:
    """Linear pixel index (row-major) of each kept event; round to nearest."""
    xi = np.floor(warped.x[warped.inside] + 0.5).astype(np.int64)
    yi = np.floor(warped.y[warped.inside] + 0.5).astype(np.int64)
    return yi * width + xi


@njit(cache=True)
def _accumulate(idx, rel, n_pix):
    # Event order summation, the same as np.bincount with weights.
    count = np.zeros(n_pix, np.int32)
    total = np.zeros(n_pix, np.float64)
    touched = np.empty(len(idx), np.int64)
    k = 0
    for e in range(len(idx)):
        i = idx[e]
        if count[i] == 0:
            touched[k] = i
            k += 1
        count[i] += 1
        total[i] += rel[e]
    return count, total, np.sort(touched[:k])


def build_timestamp_image(buffer: EventBuffer, warped: WarpedEvents,
                          intrinsics: CameraIntrinsics) -> TimestampImage:
    if len(warped.x) != len(buffer):
        raise ValueError("warped coordinates do not belong to this buffer")
    W, H = intrinsics.width, intrinsics.height
    idx = rasterize(warped, W)
    rel = buffer.relative_times()[warped.inside]
    count, total, touched = _accumulate(idx, rel.astype(np.float64), W * H)
    mean = np.full(W * H, np.nan)
    mean[touched] = total[touched] / count[touched]
    return TimestampImage(mean.reshape(H, W), count.reshape(H, W), buffer.t0, buffer.window_s, touched)


def normalize(ts_image: TimestampImage) -> NormalizedImage:
    """``rho = (T - mean(T)) / window`` with the mean over non-empty pixels."""
    touched = ts_image.flat_valid()
    if len(touched) == 0:
        raise EmptyImage("timestamp image has no events")
    vals = ts_image.mean_ts.ravel()[touched]
    t_bar = float(vals.mean())
    rho = np.full(ts_image.mean_ts.size, np.nan)
    rho[touched] = (vals - t_bar) / ts_image.window
    return NormalizedImage(rho.reshape(ts_image.mean_ts.shape), t_bar, ts_image.window, touched)


def threshold(norm: NormalizedImage, omega_bar, config: SegmentationConfig) -> BinaryMap:
    thr = config.theta0 + config.theta1 * float(np.linalg.norm(omega_bar))
    flat = norm.touched if norm.touched is not None else np.flatnonzero(np.isfinite(norm.rho))
    hit = flat[norm.rho.ravel()[flat] > thr]
    mask = np.zeros(norm.rho.shape, bool)
    mask.ravel()[hit] = True
    return BinaryMap(mask, thr, hit)


def segment(buffer: EventBuffer, omega_bar, intrinsics: CameraIntrinsics,
            config: SegmentationConfig):
    """Run the whole frontend on one buffer; returns ``(ts_image, norm, binary)``.

    ``norm`` and ``binary`` are ``None`` for an empty buffer.
    """
    warped = motion_compensate(buffer, omega_bar, intrinsics)
    ts_image = build_timestamp_image(buffer, warped, intrinsics)
    if len(ts_image.flat_valid()) == 0:
        return ts_image, None, None
    norm = normalize(ts_image)
    return ts_image, norm, threshold(norm, omega_bar, config)


def write_pgm(path, image: np.ndarray, lo: float | None = None, hi: float | None = None) -> None:
    """Binary 8-bit portable graymap; NaNs map to black."""
    img = np.asarray(image, dtype=np.float64)
    finite = np.isfinite(img)
    if lo is None:
        lo = float(img[finite].min()) if finite.any() else 0.0
    if hi is None:
        hi = float(img[finite].max()) if finite.any() else 1.0
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    out = np.zeros(img.shape, np.uint8)
    out[finite] = np.clip((img[finite] - lo) * scale, 0, 255).astype(np.uint8)
    h, w = out.shape
    with open(Path(path), "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(out.tobytes())


def dump_debug(prefix, ts_image: TimestampImage, norm: NormalizedImage | None,
               binary: BinaryMap | None) -> None:
    prefix = Path(prefix)
    write_pgm(f"{prefix}_T.pgm", ts_image.mean_ts, 0.0, ts_image.window)
    if norm is not None:
        write_pgm(f"{prefix}_rho.pgm", norm.rho, -0.5, 0.5)
    if binary is not None:
        write_pgm(f"{prefix}_B.pgm", binary.mask.astype(float), 0.0, 1.0)
