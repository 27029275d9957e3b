"""Synthetic event/IMU/odometry generator for a ball thrown at a rotating camera.

Event model: every scene object is a flat-shaded disc in the image (the ball
with radius ``fx * R / Z``, background features with a fixed pixel radius).
The scene is sampled at ``sim_rate_hz``; whenever a pixel centre enters or
leaves a disc between two samples, the pixel fires
``floor(|log contrast| / contrast_threshold)`` events of the corresponding
polarity.  Spurious noise events are Poisson in time and uniform over pixels.

The camera never translates relative to the body unless the extrinsics say so;
the body only rotates about its origin following a piecewise-constant angular
rate profile, after which it stays still.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .core import (
    EVENT_DTYPE,
    GRAVITY,
    NS_PER_S,
    R_BODY_CAMERA_FORWARD,
    CameraIntrinsics,
    Frame,
    ImuStream,
    OdometryStream,
    RigidTransform,
    rotation_from_rotvec,
)

LABEL_BACKGROUND = 0
LABEL_BALL = 1
LABEL_NOISE = 2
LABEL_NAMES = {LABEL_BACKGROUND: "background", LABEL_BALL: "ball", LABEL_NOISE: "noise"}

_CHUNK = 256  # simulation substeps per kernel call


class NeverVisible(RuntimeError):
    pass


class EmptyStream(ValueError):
    pass


@dataclass(frozen=True)
class NoiseConfig:
    rate_hz: float = 0.1  # spurious events per pixel per second
    t_jitter_us: float = 30.0
    px_jitter: float = 0.0
    imu_sigma: float = 0.0  # rad/s, white noise on gyro samples

    def __post_init__(self):
        if min(self.rate_hz, self.t_jitter_us, self.px_jitter, self.imu_sigma) < 0:
            raise ValueError("noise parameters must be non-negative")


NOISELESS = NoiseConfig(rate_hz=0.0, t_jitter_us=0.0, px_jitter=0.0, imu_sigma=0.0)


@dataclass(frozen=True)
class BackgroundConfig:
    n_points: int = 500
    depth_range: tuple[float, float] = (3.0, 10.0)
    radius_px: tuple[float, float] = (1.5, 3.0)
    contrast: tuple[float, float] = (0.3, 0.9)  # |log intensity step|, random sign
    margin_px: float = 120.0  # features seeded outside the FoV to fill it under rotation


@dataclass(frozen=True)
class ThrowSpec:
    p0_world: np.ndarray
    v0_world: np.ndarray
    ball_diameter: float = 0.1
    launch_time: float = 0.0  # seconds since scene start

    def __post_init__(self):
        if self.ball_diameter <= 0:
            raise ValueError("ball diameter must be positive")
        object.__setattr__(self, "p0_world", np.asarray(self.p0_world, dtype=float).reshape(3))
        object.__setattr__(self, "v0_world", np.asarray(self.v0_world, dtype=float).reshape(3))

    @property
    def speed(self) -> float:
        return float(np.linalg.norm(self.v0_world))

    def position(self, t_s) -> np.ndarray:
        dt = np.asarray(t_s, dtype=float)[..., None] - self.launch_time
        return self.p0_world + self.v0_world * dt + 0.5 * GRAVITY * dt**2


CAMERA_HEIGHT = 0.5  # m above the body origin, level with the net center


def default_extrinsics(height: float = CAMERA_HEIGHT) -> RigidTransform:
    """Forward-looking camera ``height`` m above the body origin (``T_BC``)."""
    return RigidTransform(R_BODY_CAMERA_FORWARD, np.array([0.0, 0.0, height]), Frame.CAMERA, Frame.BODY)


def vga_intrinsics() -> CameraIntrinsics:
    return CameraIntrinsics.from_fov(640, 480, 90.0)


@dataclass(frozen=True)
class SceneConfig:
    intrinsics: CameraIntrinsics = field(default_factory=vga_intrinsics)
    camera_to_body: RigidTransform = field(default_factory=default_extrinsics)
    body_to_world_translation: tuple[float, float, float] = (0.0, 0.0, 0.0)
    # (duration_s, (wx, wy, wz)) segments of body angular rate; zero afterwards.
    rotation_profile: tuple = ()
    background: BackgroundConfig | None = field(default_factory=BackgroundConfig)
    contrast_threshold: float = 0.25
    ball_contrast: float = 0.8
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    duration: float = 1.0
    seed: int = 0
    sim_rate_hz: float = 10_000.0
    imu_rate_hz: float = 1000.0
    odom_rate_hz: float = 1000.0
    epoch_ns: int = 0

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if min(self.sim_rate_hz, self.imu_rate_hz, self.odom_rate_hz) <= 0:
            raise ValueError("rates must be positive")
        if self.contrast_threshold <= 0:
            raise ValueError("contrast threshold must be positive")


@dataclass(frozen=True)
class GroundTruth:
    t: np.ndarray  # (N,) ns, sampled at the IMU rate
    ball_world: np.ndarray  # (N, 3)
    ball_body: np.ndarray  # (N, 3)
    throw: ThrowSpec
    # Parabola in world frame, referenced to the launch time.
    p0_world: np.ndarray
    v0_world: np.ndarray
    t_ref: float
    # Catch plane crossing in the body frame of the settled robot pose.
    t_impact: float  # absolute seconds since epoch
    p_impact_body: np.ndarray
    n_impact_body: np.ndarray
    T_world_body_final: RigidTransform
    labels: np.ndarray  # (num_events,) uint8, aligned with the event stream


@dataclass(frozen=True)
class SceneData:
    events: np.ndarray
    imu: ImuStream
    odometry: OdometryStream
    truth: GroundTruth
    config: SceneConfig


# -- rotation profile ---------------------------------------------------------


def _segments(profile) -> list[tuple[float, float, np.ndarray]]:
    """(start, end, omega) triples; the tail after the profile is at rest."""
    out = []
    t = 0.0
    for duration, omega in profile:
        if duration < 0:
            raise ValueError("rotation segment durations must be non-negative")
        out.append((t, t + duration, np.asarray(omega, dtype=float)))
        t += duration
    out.append((t, math.inf, np.zeros(3)))
    return out


def body_rate(profile, t_s: np.ndarray) -> np.ndarray:
    t_s = np.asarray(t_s, dtype=float)
    out = np.zeros(t_s.shape + (3,))
    for start, end, omega in _segments(profile):
        sel = (t_s >= start) & (t_s < end)
        out[sel] = omega
    return out


def body_rotations(profile, t_s: np.ndarray) -> np.ndarray:
    """Exact ``R_WB(t)`` for a piecewise-constant body rate, ``R_WB(0) = I``."""
    t_s = np.asarray(t_s, dtype=float)
    out = np.empty(t_s.shape + (3, 3))
    R_start = np.eye(3)
    for start, end, omega in _segments(profile):
        sel = (t_s >= start) & (t_s < end)
        if t_s.size and start <= 0 and end > 0:
            sel |= t_s < 0
        if np.any(sel):
            dt = t_s[sel] - start
            out[sel] = R_start @ _rodrigues_batch(omega[None, :] * dt[:, None])
        if math.isfinite(end):
            R_start = R_start @ rotation_from_rotvec(omega * (end - start))
    return out


def _rodrigues_batch(rotvecs: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(rotvecs, axis=1)
    out = np.tile(np.eye(3), (len(rotvecs), 1, 1))
    nz = theta > 0
    if not np.any(nz):
        return out
    k = rotvecs[nz] / theta[nz, None]
    K = np.zeros((len(k), 3, 3))
    K[:, 0, 1], K[:, 0, 2] = -k[:, 2], k[:, 1]
    K[:, 1, 0], K[:, 1, 2] = k[:, 2], -k[:, 0]
    K[:, 2, 0], K[:, 2, 1] = -k[:, 1], k[:, 0]
    s = np.sin(theta[nz])[:, None, None]
    c = (1 - np.cos(theta[nz]))[:, None, None]
    out[nz] = np.eye(3) + s * K + c * (K @ K)
    return out


def final_body_pose(scene: SceneConfig) -> RigidTransform:
    end = sum(d for d, _ in scene.rotation_profile)
    R = body_rotations(scene.rotation_profile, np.array([end]))[0]
    return RigidTransform(R, np.asarray(scene.body_to_world_translation, float), Frame.BODY, Frame.WORLD)


# -- event kernels ------------------------------------------------------------


@njit(cache=True)
def _disc_transitions(cu, cv, rad, valid, t_ns, prev_u, prev_v, prev_r, prev_ok,
                      n_rep, pol, obj_id, width, height,
                      out_t, out_x, out_y, out_p, out_o, count):
    """Emit events for pixels whose inside/outside status flips between samples.

    ``prev_*`` carry the state of the previous sample and are updated in place
    so consecutive chunks join seamlessly.  Writes stop at the buffer capacity
    but ``count`` keeps growing so the caller can retry with more room.
    """
    S, N = cu.shape
    cap = out_t.shape[0]
    for s in range(S):
        for n in range(N):
            ok = valid[s, n]
            if ok and prev_ok[n] and n_rep[n] > 0:
                pu, pv, pr = prev_u[n], prev_v[n], prev_r[n]
                u, v, r = cu[s, n], cv[s, n], rad[s, n]
                if pu != u or pv != v or pr != r:
                    x_lo = max(0, int(math.floor(min(pu - pr, u - r))))
                    x_hi = min(width - 1, int(math.ceil(max(pu + pr, u + r))))
                    y_lo = max(0, int(math.floor(min(pv - pr, v - r))))
                    y_hi = min(height - 1, int(math.ceil(max(pv + pr, v + r))))
                    pr2 = pr * pr
                    r2 = r * r
                    for y in range(y_lo, y_hi + 1):
                        dyp = (y - pv) * (y - pv)
                        dyc = (y - v) * (y - v)
                        for x in range(x_lo, x_hi + 1):
                            was_in = (x - pu) * (x - pu) + dyp <= pr2
                            now_in = (x - u) * (x - u) + dyc <= r2
                            if was_in != now_in:
                                p = pol[n] if now_in else -pol[n]
                                for _ in range(n_rep[n]):
                                    if count < cap:
                                        out_t[count] = t_ns[s]
                                        out_x[count] = x
                                        out_y[count] = y
                                        out_p[count] = p
                                        out_o[count] = obj_id[n]
                                    count += 1
            prev_ok[n] = ok
            if ok:
                prev_u[n] = cu[s, n]
                prev_v[n] = cv[s, n]
                prev_r[n] = rad[s, n]
    return count


class _EventSink:
    def __init__(self, capacity: int = 1 << 16):
        self._alloc(capacity)
        self.count = 0

    def _alloc(self, cap):
        self.t = np.empty(cap, np.int64)
        self.x = np.empty(cap, np.int32)
        self.y = np.empty(cap, np.int32)
        self.p = np.empty(cap, np.int8)
        self.o = np.empty(cap, np.int32)

    def grow(self, needed: int):
        cap = max(needed, 2 * len(self.t))
        old = (self.t, self.x, self.y, self.p, self.o)
        self._alloc(cap)
        for new, arr in zip((self.t, self.x, self.y, self.p, self.o), old):
            new[: self.count] = arr[: self.count]

    def run(self, cu, cv, rad, valid, t_ns, state, n_rep, pol, obj_id, width, height):
        prev = [a.copy() for a in state]
        while True:
            count = _disc_transitions(cu, cv, rad, valid, t_ns, *state, n_rep, pol, obj_id,
                                      width, height, self.t, self.x, self.y, self.p, self.o,
                                      self.count)
            if count <= len(self.t):
                self.count = count
                return
            self.grow(count)
            for dst, src in zip(state, prev):
                dst[:] = src

    def arrays(self):
        n = self.count
        return self.t[:n], self.x[:n], self.y[:n], self.p[:n], self.o[:n]


def _n_rep(contrast: np.ndarray, threshold: float) -> np.ndarray:
    return np.floor(np.abs(contrast) / threshold + 1e-12).astype(np.int64)


# -- scene generation ---------------------------------------------------------


def _camera_poses(scene: SceneConfig, t_s: np.ndarray):
    """``R_CW`` (S, 3, 3) and camera centre in world (S, 3)."""
    R_WB = body_rotations(scene.rotation_profile, t_s)
    T_BC = scene.camera_to_body
    R_WC = R_WB @ T_BC.rotation
    c_W = R_WB @ T_BC.translation + np.asarray(scene.body_to_world_translation, float)
    return np.transpose(R_WC, (0, 2, 1)), c_W


def _project_batch(intr: CameraIntrinsics, p_cam: np.ndarray, radius_m=None, radius_px=None):
    z = p_cam[..., 2]
    ok = z > 0.05
    zs = np.where(ok, z, 1.0)
    u = intr.fx * p_cam[..., 0] / zs + intr.cx
    v = intr.fy * p_cam[..., 1] / zs + intr.cy
    r = intr.fx * radius_m / zs if radius_m is not None else np.broadcast_to(radius_px, u.shape)
    # Discs far outside the sensor cannot fire; dropping them keeps loops short.
    ok &= (u + r > -1) & (u - r < intr.width) & (v + r > -1) & (v - r < intr.height)
    return u, v, np.ascontiguousarray(r, dtype=np.float64), ok


def _background_points(scene: SceneConfig, rng: np.random.Generator):
    bg = scene.background
    intr = scene.intrinsics
    n = bg.n_points
    u = rng.uniform(-bg.margin_px, intr.width + bg.margin_px, n)
    v = rng.uniform(-bg.margin_px, intr.height + bg.margin_px, n)
    depth = rng.uniform(*bg.depth_range, n)
    p_cam = np.stack([(u - intr.cx) / intr.fx * depth, (v - intr.cy) / intr.fy * depth, depth], axis=1)
    R_CW0, c0 = _camera_poses(scene, np.array([0.0]))
    p_world = p_cam @ R_CW0[0] + c0[0]
    radius = rng.uniform(*bg.radius_px, n)
    contrast = rng.uniform(*bg.contrast, n) * rng.choice([-1.0, 1.0], n)
    return p_world, radius, contrast


def _render(scene: SceneConfig, throw: ThrowSpec | None, rng: np.random.Generator):
    intr = scene.intrinsics
    dt = 1.0 / scene.sim_rate_hz
    n_steps = int(math.floor(scene.duration * scene.sim_rate_hz)) + 1
    times = np.arange(n_steps) * dt
    t_ns_all = np.int64(scene.epoch_ns) + np.round(times * NS_PER_S).astype(np.int64)

    sink = _EventSink()
    ball_seen = False

    bg_pts = None
    if scene.background is not None and scene.background.n_points > 0:
        bg_pts, bg_rad, bg_con = _background_points(scene, rng)
        bg_rep = _n_rep(bg_con, scene.contrast_threshold)
        bg_pol = np.sign(bg_con).astype(np.int8)
        bg_ids = np.full(len(bg_pts), LABEL_BACKGROUND, np.int32)
        n_bg = len(bg_pts)
        bg_state = [np.zeros(n_bg), np.zeros(n_bg), np.zeros(n_bg), np.zeros(n_bg, np.bool_)]

    ball_state = [np.zeros(1), np.zeros(1), np.zeros(1), np.zeros(1, np.bool_)]
    ball_rep = _n_rep(np.array([scene.ball_contrast]), scene.contrast_threshold)
    ball_pol = np.array([1 if scene.ball_contrast >= 0 else -1], np.int8)
    ball_ids = np.array([LABEL_BALL], np.int32)

    rotating_until = max(
        (end for _, end, w in _segments(scene.rotation_profile)[:-1] if np.any(w != 0)), default=-1.0
    )

    for lo in range(0, n_steps, _CHUNK):
        hi = min(n_steps, lo + _CHUNK)
        ts = times[lo:hi]
        tn = t_ns_all[lo:hi]
        R_CW, c_W = _camera_poses(scene, ts)

        # Background only changes while the camera rotates; include one sample
        # past the end of rotation so the final transition is emitted.
        if bg_pts is not None and ts[0] <= rotating_until + dt:
            p_cam = np.einsum("sij,snj->sni", R_CW, bg_pts[None, :, :] - c_W[:, None, :])
            u, v, r, ok = _project_batch(intr, p_cam, radius_px=bg_rad[None, :])
            sink.run(u, v, r, ok, tn, bg_state, bg_rep, bg_pol, bg_ids, intr.width, intr.height)

        if throw is not None and ts[-1] >= throw.launch_time:
            p_w = throw.position(ts)
            p_cam = np.einsum("sij,sj->si", R_CW, p_w - c_W)[:, None, :]
            u, v, r, ok = _project_batch(intr, p_cam, radius_m=throw.ball_diameter / 2)
            ok &= (ts >= throw.launch_time)[:, None]
            ball_seen |= bool(np.any(ok & (u >= 0) & (u < intr.width) & (v >= 0) & (v < intr.height)))
            sink.run(u, v, r, ok, tn, ball_state, ball_rep, ball_pol, ball_ids, intr.width, intr.height)

    return sink.arrays(), ball_seen


def _noise_events(scene: SceneConfig, rng: np.random.Generator):
    intr = scene.intrinsics
    lam = scene.noise.rate_hz * intr.width * intr.height * scene.duration
    n = rng.poisson(lam) if lam > 0 else 0
    t = np.int64(scene.epoch_ns) + rng.integers(0, int(scene.duration * NS_PER_S), n, dtype=np.int64)
    x = rng.integers(0, intr.width, n).astype(np.int32)
    y = rng.integers(0, intr.height, n).astype(np.int32)
    p = rng.choice(np.array([-1, 1], np.int8), n)
    return t, x, y, p, np.full(n, LABEL_NOISE, np.int32)


def _imu_and_odometry(scene: SceneConfig, rng: np.random.Generator):
    n_imu = int(math.floor(scene.duration * scene.imu_rate_hz)) + 1
    t_imu = np.arange(n_imu) / scene.imu_rate_hz
    omega = body_rate(scene.rotation_profile, t_imu)
    if scene.noise.imu_sigma > 0:
        omega = omega + rng.normal(0.0, scene.noise.imu_sigma, omega.shape)
    imu = ImuStream(
        (np.uint64(scene.epoch_ns) + np.round(t_imu * NS_PER_S).astype(np.uint64)), omega
    )
    n_od = int(math.floor(scene.duration * scene.odom_rate_hz)) + 1
    t_od = np.arange(n_od) / scene.odom_rate_hz
    R = body_rotations(scene.rotation_profile, t_od)
    trans = np.tile(np.asarray(scene.body_to_world_translation, float), (n_od, 1))
    odom = OdometryStream(
        np.uint64(scene.epoch_ns) + np.round(t_od * NS_PER_S).astype(np.uint64), R, trans
    )
    return imu, odom


def plane_crossing(p0, v0, g, n, t_min: float = 0.0) -> float:
    """First root ``t >= t_min`` of ``n · (p0 + v0 t + g t²/2) = 0`` (general quadratic)."""
    a = 0.5 * float(np.dot(n, g))
    b = float(np.dot(n, v0))
    c = float(np.dot(n, p0))
    if abs(a) < 1e-15 * max(1.0, abs(b), abs(c)):
        if b == 0:
            return math.nan
        roots = [-c / b]
    else:
        disc = b * b - 4 * a * c
        if disc < 0:
            return math.nan
        sq = math.sqrt(disc)
        q = -0.5 * (b + math.copysign(sq, b))
        roots = [q / a] + ([c / q] if q != 0 else [])
    roots = sorted(r for r in roots if r >= t_min)
    return roots[0] if roots else math.nan


def ground_truth_impact(throw: ThrowSpec, T_WB: RigidTransform, epoch_s: float = 0.0):
    """Impact of the true trajectory on the catch plane of body pose ``T_WB``.

    Returns ``(t_impact_abs, p_impact_body, n_body)``.
    """
    T_BW = T_WB.inverse()
    p0_b = T_BW.apply(throw.p0_world)
    v0_b = T_BW.rotate(throw.v0_world)
    g_b = T_BW.rotate(GRAVITY)
    n = np.cross(np.array([0.0, 1.0, 0.0]), g_b)
    t_rel = plane_crossing(p0_b, v0_b, g_b, n)
    if math.isnan(t_rel):
        return math.nan, np.full(3, np.nan), n
    p = p0_b + v0_b * t_rel + 0.5 * g_b * t_rel**2
    # Remove the rounding residual along the normal so the point is on the plane.
    p = p - n * (np.dot(n, p) / np.dot(n, n))
    return epoch_s + throw.launch_time + t_rel, p, n


def generate(scene: SceneConfig, throw: ThrowSpec | None) -> SceneData:
    """Simulate one scene; fully determined by ``(scene, throw)`` incl. ``scene.seed``."""
    rng = np.random.default_rng(scene.seed)
    (t, x, y, p, o), ball_seen = _render(scene, throw, rng)
    if throw is not None and not ball_seen:
        raise NeverVisible("ball never enters the field of view")

    nt, nx, ny, np_, no = _noise_events(scene, rng)
    t = np.concatenate([t, nt])
    x = np.concatenate([x, nx])
    y = np.concatenate([y, ny])
    p = np.concatenate([p, np_])
    labels = np.concatenate([o, no]).astype(np.uint8)

    noise = scene.noise
    signal = labels != LABEL_NOISE
    if noise.t_jitter_us > 0:
        jit = rng.normal(0.0, noise.t_jitter_us * 1e3, int(signal.sum()))
        t = t.copy()
        t[signal] = t[signal] + np.round(jit).astype(np.int64)
    if noise.px_jitter > 0:
        k = int(signal.sum())
        x = x.copy()
        y = y.copy()
        x[signal] += np.round(rng.normal(0.0, noise.px_jitter, k)).astype(np.int32)
        y[signal] += np.round(rng.normal(0.0, noise.px_jitter, k)).astype(np.int32)
    t0 = scene.epoch_ns
    t1 = scene.epoch_ns + int(round(scene.duration * NS_PER_S))
    intr = scene.intrinsics
    keep = (t >= t0) & (t <= t1) & (x >= 0) & (x < intr.width) & (y >= 0) & (y < intr.height)
    t, x, y, p, labels = t[keep], x[keep], y[keep], p[keep], labels[keep]

    order = np.argsort(t, kind="stable")
    events = np.empty(len(order), dtype=EVENT_DTYPE)
    events["t"] = t[order]
    events["x"] = x[order]
    events["y"] = y[order]
    events["p"] = p[order]
    labels = labels[order]

    imu, odom = _imu_and_odometry(scene, rng)
    truth = _ground_truth(scene, throw, imu.t, labels)
    return SceneData(events, imu, odom, truth, scene)


def _ground_truth(scene: SceneConfig, throw: ThrowSpec | None, t_ns: np.ndarray, labels):
    t_s = (t_ns.astype(np.int64) - scene.epoch_ns) * 1e-9
    T_final = final_body_pose(scene)
    epoch_s = scene.epoch_ns * 1e-9
    if throw is None:
        nan3 = np.full(3, np.nan)
        empty = np.full((len(t_s), 3), np.nan)
        return GroundTruth(t_ns, empty, empty, throw, nan3, nan3, math.nan, math.nan, nan3,
                           nan3, T_final, labels)
    ball_w = throw.position(t_s)
    R_WB = body_rotations(scene.rotation_profile, t_s)
    trans = np.asarray(scene.body_to_world_translation, float)
    ball_b = np.einsum("sji,sj->si", R_WB, ball_w - trans)
    t_imp, p_imp, n = ground_truth_impact(throw, T_final, epoch_s)
    return GroundTruth(
        t_ns, ball_w, ball_b, throw, throw.p0_world.copy(), throw.v0_world.copy(),
        epoch_s + throw.launch_time, t_imp, p_imp, n, T_final, labels,
    )


@dataclass(frozen=True)
class EventRateStats:
    duration_s: float
    total: int
    counts: dict
    rates: dict


def event_rate_stats(events: np.ndarray, labels: np.ndarray, duration_s: float | None = None) -> EventRateStats:
    """Event counts and rates (events/s) per ground-truth label."""
    if len(events) == 0:
        raise EmptyStream("no events")
    if duration_s is None:
        duration_s = (int(events["t"][-1]) - int(events["t"][0])) * 1e-9
    if duration_s <= 0:
        raise ValueError("duration must be positive")
    counts = {name: int(np.count_nonzero(labels == lab)) for lab, name in LABEL_NAMES.items()}
    rates = {name: c / duration_s for name, c in counts.items()}
    return EventRateStats(duration_s, len(events), counts, rates)


# -- throw construction -------------------------------------------------------


def aim_throw(start_world, target_world, speed: float, launch_time: float = 0.0,
              ball_diameter: float = 0.1) -> ThrowSpec:
    """Low-arc launch velocity of magnitude ``speed`` from ``start`` through ``target``.

    Solves ``|(D - g T²/2) / T| = speed`` for the flight time ``T``; the
    equation is quadratic in ``T²``.
    """
    s = np.asarray(start_world, float)
    d = np.asarray(target_world, float) - s
    g2 = float(GRAVITY @ GRAVITY)
    b = float(d @ GRAVITY) + speed**2
    disc = b * b - g2 * float(d @ d)
    if disc < 0:
        raise ValueError(f"target unreachable at {speed} m/s")
    u = (b - math.sqrt(disc)) / (0.5 * g2)
    T = math.sqrt(u)
    v0 = (d - 0.5 * GRAVITY * T**2) / T
    return ThrowSpec(s, v0, ball_diameter, launch_time)


def throw_distance(speed: float) -> float:
    """Thrower distance used by the sweeps: slow throws are lobbed from closer."""
    return float(np.clip(0.4 * speed, 2.0, 4.0))
