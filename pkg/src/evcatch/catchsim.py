"""Kinematic net controller and throw-sweep evaluation harness."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import simgen
from .core import NS_PER_S, EventBuffer
from .pipeline import CycleResult, PipelineConfig, run_stream
from .segment import compensation_rate, mean_angular_rate, motion_compensate, rasterize, segment

NET_CENTER = np.array([0.0, 0.0, 0.5])
NET_RADIUS = 0.15

# Table I analog buckets (m/s, [lo, hi)) and Table II cumulative limits.
SPEED_BINS = ((5.0, 8.0), (8.0, 10.0), (10.0, 12.0), (12.0, 15.0 + 1e-9))
SPEED_LIMITS = (9.0, 15.0 + 1e-9)
DEVIATION_LIMITS = (0.4, 0.6)


@dataclass(frozen=True)
class NetState:
    position: np.ndarray = field(default_factory=lambda: NET_CENTER.copy())
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    radius: float = NET_RADIUS
    max_speed: float = 2.0
    max_accel: float = 25.0

    def __post_init__(self):
        if self.radius <= 0 or self.max_speed <= 0 or self.max_accel <= 0:
            raise ValueError("radius and limits must be positive")


DEADBAND = 0.01  # m


def commanded_accel(net: NetState, target, dt: float) -> np.ndarray:
    """Acceleration of the stopping-distance tracker, before clipping to ``max_accel``.

    The desired velocity points at the target with the largest speed from
    which the net can still brake to rest over the remaining distance.
    """
    err = np.asarray(target, float) - net.position
    dist = float(np.linalg.norm(err))
    if dist <= DEADBAND:
        v_des = np.zeros(3)
    else:
        v_des = err / dist * min(net.max_speed, math.sqrt(2.0 * net.max_accel * dist))
    return (v_des - net.velocity) / dt


def step_controller(net: NetState, target, dt: float) -> NetState:
    """One explicit step of the point-mass net toward ``target``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if target is None:
        target = net.position
    acc = commanded_accel(net, target, dt)
    if np.linalg.norm(net.position - np.asarray(target, float)) <= DEADBAND and not np.any(net.velocity):
        acc = np.zeros(3)
    a_norm = float(np.linalg.norm(acc))
    if a_norm > net.max_accel:
        acc = acc * (net.max_accel / a_norm)
    vel = net.velocity + acc * dt
    v_norm = float(np.linalg.norm(vel))
    if v_norm > net.max_speed:
        vel = vel * (net.max_speed / v_norm)
    pos = net.position + 0.5 * (net.velocity + vel) * dt
    return replace(net, position=pos, velocity=vel)


# -- throw scenarios -----------------------------------------------------------


@dataclass(frozen=True)
class ThrowScenario:
    index: int
    seed: int
    speed: float
    deviation: float  # m, distance of the aimed plane point from the net center
    throw: simgen.ThrowSpec
    scene: simgen.SceneConfig


@dataclass(frozen=True)
class SweepConfig:
    n_throws: int = 200
    speed_range: tuple[float, float] = (5.0, 15.0)
    deviation_range: tuple[float, float] = (0.0, 0.6)
    seed: int = 0
    launch_time: float = 0.1  # s
    sway_duration: float = 0.15  # s of body rotation at the start of each scene
    max_sway_rate: float = 0.05  # rad/s
    noise: simgen.NoiseConfig = field(default_factory=simgen.NoiseConfig)
    background: simgen.BackgroundConfig | None = field(default_factory=simgen.BackgroundConfig)
    latency: float = 0.01  # s from cycle end until its estimate reaches the controller
    control_dt: float = 0.005
    working_range: float = 0.6  # m from the net home; farther targets are ignored
    net: NetState = field(default_factory=NetState)


def make_scenarios(sweep: SweepConfig) -> list[ThrowScenario]:
    """Seeded throws aimed at points around the net center in the catch plane."""
    rng = np.random.default_rng(sweep.seed)
    out = []
    for i in range(sweep.n_throws):
        speed = float(rng.uniform(*sweep.speed_range))
        lo, hi = sweep.deviation_range
        dev = float(math.sqrt(rng.uniform(lo * lo, hi * hi)))  # uniform over the annulus area
        phi = float(rng.uniform(0.0, 2.0 * math.pi))
        y0 = float(rng.uniform(-0.3, 0.3))
        z0 = float(rng.uniform(0.8, 1.4))
        w = rng.normal(size=3)
        w = w / np.linalg.norm(w) * rng.uniform(0.0, sweep.max_sway_rate)
        scene_seed = int(rng.integers(0, 2**63 - 1))
        target = NET_CENTER + dev * np.array([0.0, math.cos(phi), math.sin(phi)])
        start = np.array([simgen.throw_distance(speed), y0, z0])
        throw = simgen.aim_throw(start, target, speed, sweep.launch_time)
        flight = simgen.plane_crossing(throw.p0_world, throw.v0_world, simgen.GRAVITY, np.array([-1.0, 0, 0]))
        scene = simgen.SceneConfig(
            rotation_profile=((sweep.sway_duration, tuple(float(c) for c in w)),),
            background=sweep.background,
            noise=sweep.noise,
            duration=sweep.launch_time + flight + 0.03,
            seed=scene_seed,
        )
        out.append(ThrowScenario(i, scene_seed, speed, dev, throw, scene))
    return out


# -- evaluation ----------------------------------------------------------------


@dataclass(frozen=True)
class ThrowOutcome:
    index: int
    speed: float
    deviation: float
    t_impact: float
    p_impact: np.ndarray  # ground truth, body frame
    estimate: np.ndarray | None  # delivered (committed or last) impact point
    vision_error: float  # inf when no estimate was produced
    miss_distance: float
    n_estimates: int
    committed: bool

    @property
    def vision_success(self) -> bool:
        return self.vision_error <= NET_RADIUS

    @property
    def success(self) -> bool:
        return self.miss_distance <= NET_RADIUS


def delivered_estimates(cycles: list[CycleResult], latency: float, home=NET_CENTER,
                        working_range: float = math.inf):
    """(delivery time s, filtered impact point, committed) for usable cycle estimates.

    Targets outside ``working_range`` of ``home`` cannot be reached and are
    dropped, so the net holds its previous target instead of chasing them.
    """
    out = []
    for c in cycles:
        if c.filtered is not None and np.linalg.norm(c.filtered.p_imp - home) <= working_range:
            out.append((c.t1 / NS_PER_S + latency, c.filtered.p_imp.copy(), c.committed))
    return out


def simulate_catch(net: NetState, deliveries, t_end: float, dt: float) -> NetState:
    """Run the controller from t = 0 to ``t_end`` chasing the latest delivered target."""
    target = None
    k = 0
    n_steps = int(math.ceil(t_end / dt))
    for s in range(n_steps):
        t = s * dt
        step = min(dt, t_end - t)
        if step <= 0:
            break
        while k < len(deliveries) and deliveries[k][0] <= t:
            target = deliveries[k][1]
            k += 1
        net = step_controller(net, target, step)
    return net


def evaluate_throw(scenario: ThrowScenario, config: PipelineConfig, sweep: SweepConfig) -> ThrowOutcome:
    data = simgen.generate(scenario.scene, scenario.throw)
    scene = scenario.scene
    t_end_ns = int(round(scene.duration * NS_PER_S))
    cycles = run_stream(config, scene.intrinsics, scene.camera_to_body, data.events, data.imu,
                        data.odometry, 0, t_end_ns)
    truth = data.truth
    before = [c for c in cycles if c.t1 / NS_PER_S + sweep.latency <= truth.t_impact]
    final = next((c for c in reversed(before) if c.filtered is not None), None)
    est = None if final is None else final.filtered.p_imp
    err = math.inf if est is None else float(np.linalg.norm(est - truth.p_impact_body))
    deliveries = delivered_estimates(before, sweep.latency, sweep.net.position, sweep.working_range)
    net = simulate_catch(sweep.net, deliveries, truth.t_impact, sweep.control_dt)
    miss = float(np.linalg.norm(net.position - truth.p_impact_body))
    return ThrowOutcome(scenario.index, scenario.speed, scenario.deviation, truth.t_impact,
                        truth.p_impact_body, est, err, miss, len(deliveries),
                        bool(final is not None and final.committed))


def evaluate_throws(sweep: SweepConfig, config: PipelineConfig, progress=None) -> list[ThrowOutcome]:
    out = []
    for sc in make_scenarios(sweep):
        out.append(evaluate_throw(sc, config, sweep))
        if progress is not None:
            progress(out[-1])
    return out


# -- tables --------------------------------------------------------------------


def _rate(flags) -> float:
    flags = list(flags)
    return 100.0 * sum(flags) / len(flags) if flags else math.nan


def catch_table(outcomes, bins=SPEED_BINS) -> list[dict]:
    """End-to-end catch success by speed bucket (Table I layout)."""
    rows = []
    for lo, hi in bins:
        sel = [o for o in outcomes if lo <= o.speed < hi]
        rows.append({"speed_lo": lo, "speed_hi": min(hi, 15.0), "throws": len(sel),
                     "success_pct": _rate(o.success for o in sel)})
    return rows


def vision_table(outcomes, dev_limits=DEVIATION_LIMITS, speed_limits=SPEED_LIMITS) -> list[dict]:
    """Impact error within the net radius, cumulative in deviation and speed (Table II layout)."""
    rows = []
    for d in dev_limits:
        for s in speed_limits:
            sel = [o for o in outcomes if o.deviation < d and o.speed < s]
            rows.append({"deviation_lt": d, "speed_lt": min(s, 15.0), "throws": len(sel),
                         "success_pct": _rate(o.vision_success for o in sel)})
    return rows


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else ("inf" if math.isinf(v) else f"{v:.6f}")
    return str(v)


def write_csv(path, rows: list[dict]) -> None:
    with open(Path(path), "w", newline="") as fh:
        if not rows:
            return
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(v) for k, v in r.items()})


def outcome_rows(outcomes) -> list[dict]:
    """Per-throw plot data: success versus speed and deviation."""
    rows = []
    for o in outcomes:
        rows.append({
            "index": o.index, "speed": o.speed, "deviation": o.deviation,
            "vision_error": o.vision_error, "miss_distance": o.miss_distance,
            "vision_success": int(o.vision_success), "catch_success": int(o.success),
            "n_estimates": o.n_estimates, "committed": int(o.committed),
        })
    return rows


# -- segmentation separation -----------------------------------------------------


@dataclass(frozen=True)
class SeparationScore:
    ball_pixels: int
    background_pixels: int
    ball_hits: int
    background_hits: int

    @property
    def recall(self) -> float:
        return self.ball_hits / self.ball_pixels if self.ball_pixels else math.nan

    @property
    def false_positive_rate(self) -> float:
        return self.background_hits / self.background_pixels if self.background_pixels else math.nan


def window_separation(data: simgen.SceneData, t0: int, config: PipelineConfig) -> SeparationScore:
    """Score the binary map of one window against per-pixel ground-truth labels.

    A pixel is a ball pixel when most of its kept events come from the ball;
    every other non-empty pixel counts as background.
    """
    scene = data.config
    intr = scene.intrinsics
    window = int(round(config.segmentation.window * NS_PER_S))
    lo = int(np.searchsorted(data.events["t"], np.uint64(t0)))
    buf = EventBuffer.slice(data.events, t0, window)
    labels = data.truth.labels[lo:lo + len(buf)]
    w_body = mean_angular_rate(data.imu, t0, t0 + window)
    w_cam = compensation_rate(w_body, scene.camera_to_body.rotation.T)
    ts, _, binary = segment(buf, w_cam, intr, config.segmentation)
    if binary is None:
        return SeparationScore(0, 0, 0, 0)
    warped = motion_compensate(buf, w_cam, intr)
    idx = rasterize(warped, intr.width)
    ball = np.bincount(idx, weights=labels[warped.inside] == simgen.LABEL_BALL, minlength=intr.width * intr.height)
    count = ts.count.ravel()
    is_ball = (count > 0) & (ball > 0.5 * count)
    is_bg = (count > 0) & ~is_ball
    hit = binary.mask.ravel()
    return SeparationScore(int(is_ball.sum()), int(is_bg.sum()), int((hit & is_ball).sum()),
                           int((hit & is_bg).sum()))


def separation_scenes(n: int, seed: int = 0, max_rate: float = 1.0, speed_range=(5.0, 15.0)):
    """Noiseless ball-vs-rotating-background scenes with random rotation axes."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        rate = float(rng.uniform(0.0, max_rate))
        speed = float(rng.uniform(*speed_range))
        start = np.array([simgen.throw_distance(speed), rng.uniform(-0.3, 0.3), rng.uniform(0.8, 1.4)])
        target = NET_CENTER + np.array([0.0, rng.uniform(-0.4, 0.4), rng.uniform(-0.3, 0.3)])
        throw = simgen.aim_throw(start, target, speed, 0.02)
        flight = simgen.plane_crossing(throw.p0_world, throw.v0_world, simgen.GRAVITY, np.array([-1.0, 0, 0]))
        scene = simgen.SceneConfig(rotation_profile=((1.0, tuple(axis * rate)),), noise=simgen.NOISELESS,
                                   duration=0.02 + flight, seed=int(rng.integers(0, 2**63 - 1)))
        out.append((scene, throw))
    return out


def segmentation_separation(n_scenes: int, config: PipelineConfig, seed: int = 0,
                            max_rate: float = 1.0, min_ball_events: int = 20) -> SeparationScore:
    """Pooled ball recall and background false-positive rate over simulated scenes."""
    totals = np.zeros(4, np.int64)
    window = int(round(config.segmentation.window * NS_PER_S))
    for scene, throw in separation_scenes(n_scenes, seed, max_rate):
        data = simgen.generate(scene, throw)
        n_win = int(scene.duration * NS_PER_S) // window
        for k in range(1, n_win):
            t0 = scene.epoch_ns + k * window
            lo, hi = np.searchsorted(data.events["t"], [np.uint64(t0), np.uint64(t0 + window)])
            if np.count_nonzero(data.truth.labels[lo:hi] == simgen.LABEL_BALL) < min_ball_events:
                continue
            s = window_separation(data, t0, config)
            totals += (s.ball_pixels, s.background_pixels, s.ball_hits, s.background_hits)
    return SeparationScore(*(int(v) for v in totals))
