"""Per-cycle detection pipeline: segment, cluster, lift, fit, intersect, filter."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .cluster import ClusterConfig, FlowField, candidate_pixels, dbscan, grouped_flow
from .core import (
    NS_PER_S,
    CameraIntrinsics,
    EventBuffer,
    ImuStream,
    NoOdometry,
    OdometryStream,
    RigidTransform,
)
from .impact import CatchPlane, ImpactEstimate, ImpactTracker, ParallelTrajectory, PastImpact, intersect, to_body
from .segment import (
    NoImuCoverage,
    SegmentationConfig,
    compensation_rate,
    dump_debug,
    mean_angular_rate,
    segment,
)
from .trajectory import Detection3D, FitResult, NoConsensus, RansacConfig, TooFewDetections, lift, ransac_fit

STAGES = ("segment", "cluster", "fit", "impact")


@dataclass(frozen=True)
class PipelineConfig:
    segmentation: SegmentationConfig = field(default_factory=SegmentationConfig)
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    ransac: RansacConfig = field(default_factory=RansacConfig)
    filter_window: int = 5
    commit_horizon: float = 0.05  # s
    object_width: float = 0.1  # m
    throw_timeout: float = 0.2  # s without detections before the throw resets
    min_depth: float = 0.2  # m, closer lifts are discarded
    max_depth: float = 6.0
    max_mask_pixels: int = 2500  # skip clustering above this (object fills the view)
    plane_axis: tuple[float, float, float] = (0.0, 1.0, 0.0)  # body axis spanning the catch plane with g
    max_objects: int = 1  # clusters lifted per cycle, largest first
    min_fit_span: float = 0.05  # s of inlier time span before an impact is emitted
    seed: int = 0

    def __post_init__(self):
        if self.filter_window < 1 or self.filter_window % 2 == 0:
            raise ValueError("filter_window must be a positive odd number")
        if self.commit_horizon < 0 or self.object_width <= 0 or self.throw_timeout <= 0:
            raise ValueError("invalid impact/trajectory settings")
        if self.max_objects < 1 or self.min_fit_span < 0:
            raise ValueError("need max_objects >= 1 and min_fit_span >= 0")
        if not 0 < self.min_depth < self.max_depth:
            raise ValueError("need 0 < min_depth < max_depth")


@dataclass
class CycleResult:
    index: int
    t0: int  # ns
    t1: int
    n_events: int
    omega: np.ndarray
    threshold: float
    n_mask: int
    detections: list[Detection3D]
    fit: FitResult | None
    estimate: ImpactEstimate | None  # raw intersection this cycle
    filtered: ImpactEstimate | None  # tracker output after this cycle
    committed: bool
    status: str
    timings: dict  # stage -> seconds
    cycle_time: float


class Pipeline:
    """Owns the rolling state (previous timestamp image, throw detections, filter)."""

    def __init__(self, config: PipelineConfig, intrinsics: CameraIntrinsics,
                 camera_to_body: RigidTransform, epoch_ns: int = 0, debug_dir=None):
        self.config = config
        self.intrinsics = intrinsics
        self.T_BC = camera_to_body
        self.R_CB = camera_to_body.rotation.T
        self.epoch_ns = int(epoch_ns)
        self.debug_dir = debug_dir
        self.window_ns = int(round(config.segmentation.window * NS_PER_S))
        self.tracker = ImpactTracker(config.filter_window, config.commit_horizon)
        self.detections: list[Detection3D] = []
        self.last_detection_t: float | None = None
        self.prev_ts = None
        self.cycle = 0

    def _time(self, t_ns: int) -> float:
        return (int(t_ns) - self.epoch_ns) / NS_PER_S

    def reset_throw(self) -> None:
        self.detections = []
        self.last_detection_t = None
        self.tracker.reset()

    def process(self, buffer: EventBuffer, imu: ImuStream, odometry: OdometryStream) -> CycleResult:
        cfg = self.config
        timings = dict.fromkeys(STAGES, 0.0)
        start = time.perf_counter()
        now = self._time(buffer.t1)

        # segment
        s = time.perf_counter()
        try:
            omega = mean_angular_rate(imu, buffer.t0, buffer.t1)
        except NoImuCoverage:
            omega = np.zeros(3)
        w_cam = compensation_rate(omega, self.R_CB)
        ts, norm, binary = segment(buffer, w_cam, self.intrinsics, cfg.segmentation)
        if self.debug_dir is not None:
            dump_debug(f"{self.debug_dir}/cycle{self.cycle:05d}", ts, norm, binary)
        timings["segment"] = time.perf_counter() - s

        # cluster + lift
        s = time.perf_counter()
        clusters = []
        n_mask = 0
        if binary is not None:
            on = binary.pixels()
            n_mask = len(on)
            pixels = candidate_pixels(binary.mask, cfg.cluster, on) if n_mask <= cfg.max_mask_pixels else []
            if len(pixels) >= cfg.cluster.min_pts:
                flow = self._flow(ts, pixels)
                clusters = dbscan(binary.mask, flow, norm, cfg.cluster, buffer.t1, pixels=pixels)
        self.prev_ts = ts
        new = []
        if clusters:
            try:
                T_WC = odometry.at(buffer.t1).compose(self.T_BC)
            except NoOdometry:
                T_WC = None
            if T_WC is not None:
                clusters = sorted(clusters, key=lambda c: -len(c.members))[: cfg.max_objects]
                for c in clusters:
                    d = lift(c, self.intrinsics, T_WC, cfg.object_width, now)
                    if cfg.min_depth <= d.p_camera[2] <= cfg.max_depth:
                        new.append(d)
        timings["cluster"] = time.perf_counter() - s

        # fit
        s = time.perf_counter()
        if new:
            if self.last_detection_t is not None and now - self.last_detection_t > cfg.throw_timeout:
                self.reset_throw()
            self.detections.extend(new)
            self.last_detection_t = now
        elif self.last_detection_t is not None and now - self.last_detection_t > cfg.throw_timeout:
            self.reset_throw()
        fit = None
        status = "idle"
        if new and self.detections:
            try:
                fit = ransac_fit(self.detections, cfg.ransac, seed=cfg.seed + self.cycle)
                status = "fit"
            except (TooFewDetections, NoConsensus) as exc:
                status = type(exc).__name__
        timings["fit"] = time.perf_counter() - s

        # impact
        s = time.perf_counter()
        estimate = None
        if fit is not None and _span(self.detections, fit.inliers) < cfg.min_fit_span:
            status = "short"
        elif fit is not None:
            try:
                T_WB = odometry.at(buffer.t1)
                body = to_body(fit.parabola, T_WB.inverse()).rereference(now)
                estimate = intersect(body, CatchPlane.for_pose(T_WB, self.config.plane_axis), fit.rms)
                self.tracker.push(estimate, now)
                status = "estimate"
            except PastImpact as exc:
                estimate = exc.estimate
                status = "PastImpact"
            except (ParallelTrajectory, NoOdometry) as exc:
                status = type(exc).__name__
        timings["impact"] = time.perf_counter() - s

        cycle_time = time.perf_counter() - start
        result = CycleResult(
            self.cycle, buffer.t0, buffer.t1, len(buffer), omega,
            binary.threshold_used if binary is not None else float("nan"), n_mask, new, fit,
            estimate, self.tracker.current, self.tracker.frozen, status, timings, cycle_time,
        )
        self.cycle += 1
        return result

    def _flow(self, ts, pixels):
        if self.prev_ts is None or self.prev_ts.t0 >= ts.t0:
            return FlowField.empty(ts.mean_ts.shape)
        return grouped_flow(self.prev_ts, ts, pixels)


def _span(detections, idx) -> float:
    t = [detections[i].t for i in idx]
    return max(t) - min(t)


def iter_buffers(events: np.ndarray, t_start: int, t_end: int, window_ns: int):
    """Consecutive non-overlapping windows ``[t0, t0 + window)`` covering ``[t_start, t_end)``."""
    t = events["t"]
    t0 = int(t_start)
    lo = int(np.searchsorted(t, np.uint64(t0), side="left"))
    while t0 + window_ns <= t_end:
        hi = int(np.searchsorted(t, np.uint64(t0 + window_ns), side="left"))
        yield EventBuffer(events[lo:hi], t0, window_ns)
        lo = hi
        t0 += window_ns


def run_stream(config: PipelineConfig, intrinsics: CameraIntrinsics, camera_to_body: RigidTransform,
               events: np.ndarray, imu: ImuStream, odometry: OdometryStream, t_start: int,
               t_end: int, debug_dir=None, on_cycle=None) -> list[CycleResult]:
    pipe = Pipeline(config, intrinsics, camera_to_body, 0, debug_dir)
    out = []
    for buf in iter_buffers(events, t_start, t_end, pipe.window_ns):
        res = pipe.process(buf, imu, odometry)
        out.append(res)
        if on_cycle is not None:
            on_cycle(res)
    return out
