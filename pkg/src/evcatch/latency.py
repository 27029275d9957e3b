"""Worst-case perceptual latency closed forms and pipeline timing reports."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .pipeline import STAGES

BASELINE_SCHEMA = 1


class Mode(str, Enum):
    FRAME_TWO_SHOT = "frame_two_shot"
    EVENT_TWO_SHOT = "event_two_shot"
    EVENT_ONE_SHOT = "event_one_shot"


@dataclass(frozen=True)
class LatencyParams:
    dt_c: float  # s, compute time per detection
    dt_fps: float = 0.0  # s between frames; unused by event modes
    mode: Mode = Mode.FRAME_TWO_SHOT
    detections: int = 2  # detections needed by a two-shot estimator

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if not self.dt_c > 0 or self.dt_fps < 0:
            raise ValueError("need dt_c > 0 and dt_fps >= 0")
        if self.mode == Mode.FRAME_TWO_SHOT and not self.dt_fps > 0:
            raise ValueError("frame mode needs dt_fps > 0")
        if self.detections < 2:
            raise ValueError("two-shot estimators need at least two detections")

    @classmethod
    def from_fps(cls, fps: float, dt_c: float, **kw) -> "LatencyParams":
        if fps <= 0:
            raise ValueError("fps must be positive")
        return cls(dt_c, 1.0 / fps, **kw)


@dataclass(frozen=True)
class LatencyReport:
    mode: Mode
    worst_case: float  # s
    waiting: float  # s spent before the first usable measurement completes
    detection_terms: tuple[float, ...]
    branch: str


def worst_case_latency(params: LatencyParams) -> LatencyReport:
    """Longest wait from object appearance until a trajectory estimate exists.

    Frame two-shot: one compute slot of waiting, then one slot of
    ``max(dt_c, dt_fps)`` per detection.  Event two-shot: ``(N + 1) dt_c``.
    Event one-shot: ``2 dt_c``.  With ``N = 2`` these are the textbook
    ``2 dt_fps + dt_c`` / ``3 dt_c`` pair and ``3 dt_c``.
    """
    c, f, n = params.dt_c, params.dt_fps, params.detections
    if params.mode == Mode.FRAME_TWO_SHOT:
        if c < f:
            return LatencyReport(params.mode, n * f + c, c, (f,) * n, "dt_c < dt_fps")
        return LatencyReport(params.mode, (n + 1) * c, c, (c,) * n, "dt_c >= dt_fps")
    if params.mode == Mode.EVENT_TWO_SHOT:
        return LatencyReport(params.mode, (n + 1) * c, c, (c,) * n, "event two-shot")
    return LatencyReport(params.mode, 2 * c, c, (c,), "event one-shot")


def event_advantage(dt_c_event: float, dt_fps: float, dt_c_image: float) -> tuple[bool, bool]:
    """``(two_shot, one_shot)``: does the event pipeline beat a frame pipeline?"""
    if min(dt_c_event, dt_fps, dt_c_image) <= 0:
        raise ValueError("all times must be positive")
    return dt_c_event < dt_fps, dt_c_event < dt_fps + 0.5 * dt_c_image


# -- measured timings ----------------------------------------------------------

PERCENTILES = (50, 90, 99)


@dataclass(frozen=True)
class TimingReport:
    cycles: int
    window: float  # s
    busy: float  # s of summed cycle time
    cycle_rate: float  # cycles/s, capped at the window rate
    cycle_ms: dict  # percentile -> ms
    stage_ms: dict  # stage -> percentile -> ms
    stage_total: float  # s summed over stages and cycles

    def to_dict(self) -> dict:
        return asdict(self)


def _pct(values) -> dict:
    if len(values) == 0:
        return {f"p{p}": 0.0 for p in PERCENTILES}
    v = np.asarray(values, float) * 1e3
    return {f"p{p}": float(np.percentile(v, p)) for p in PERCENTILES}


def measure_pipeline(cycle_results, window: float) -> TimingReport:
    """Stage and cycle percentiles from instrumented pipeline cycles.

    Offline processing is never faster than real time in a deployment, so
    the achieved rate is ``min(1 / window, cycles / busy)``.
    """
    if window <= 0:
        raise ValueError("window must be positive")
    cycle = [r.cycle_time for r in cycle_results]
    busy = float(sum(cycle))
    n = len(cycle)
    rate = 1.0 / window if busy == 0 else min(1.0 / window, n / busy)
    stages = {s: _pct([r.timings.get(s, 0.0) for r in cycle_results]) for s in STAGES}
    total = float(sum(sum(r.timings.get(s, 0.0) for s in STAGES) for r in cycle_results))
    return TimingReport(n, window, busy, rate, _pct(cycle), stages, total)


# -- baseline file ------------------------------------------------------------


@dataclass(frozen=True)
class Baseline:
    cycle_rate: float
    p99_ms: float
    tolerance: float = 0.2
    schema: int = BASELINE_SCHEMA
    note: str = ""
    extra: dict = field(default_factory=dict)


def write_baseline(path, report: TimingReport, tolerance: float = 0.2, note: str = "") -> Baseline:
    b = Baseline(report.cycle_rate, report.cycle_ms["p99"], tolerance, BASELINE_SCHEMA, note)
    Path(path).write_text(json.dumps(asdict(b), indent=2, sort_keys=True) + "\n")
    return b


def read_baseline(path) -> Baseline:
    data = json.loads(Path(path).read_text())
    if data.get("schema") != BASELINE_SCHEMA:
        raise ValueError(f"unsupported baseline schema {data.get('schema')!r}")
    return Baseline(**data)


def regression(report: TimingReport, baseline: Baseline) -> list[str]:
    """Violations of the ``±tolerance`` band (empty when within it)."""
    out = []
    tol = baseline.tolerance
    if report.cycle_rate < baseline.cycle_rate * (1 - tol):
        out.append(f"cycle rate {report.cycle_rate:.1f}/s below {baseline.cycle_rate:.1f}/s -{tol:.0%}")
    if report.cycle_ms["p99"] > baseline.p99_ms * (1 + tol):
        out.append(f"p99 {report.cycle_ms['p99']:.2f} ms above {baseline.p99_ms:.2f} ms +{tol:.0%}")
    return out


def format_report(report: LatencyReport) -> str:
    terms = " + ".join(f"{t * 1e3:.4g}" for t in report.detection_terms)
    return (f"mode={report.mode.value} worst_case_ms={report.worst_case * 1e3:.4f} "
            f"branch={report.branch!r} waiting_ms={report.waiting * 1e3:.4g} detections_ms=[{terms}]")
