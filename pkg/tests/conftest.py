from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from evcatch.core import CameraIntrinsics, make_events

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def vga() -> CameraIntrinsics:
    return CameraIntrinsics.from_fov(640, 480, 90.0)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


def random_events(rng: np.random.Generator, n: int, width: int, height: int, t0: int = 0,
                  span_ns: int = 10_000_000) -> np.ndarray:
    t = np.sort(rng.integers(t0, t0 + span_ns, n))
    return make_events(t, rng.integers(0, width, n), rng.integers(0, height, n),
                       rng.choice([-1, 1], n))


def contaminated_track(rng: np.random.Generator, n: int = 20, inlier_frac: float = 0.7,
                       noise: float = 0.01, max_depth: float = 6.0):
    """Detections of a simulated throw with uniform clutter in the camera frustum.

    Inliers are ballistic samples with gaussian noise ``noise`` (m per axis).
    Outliers are uniform in the volume seen by the forward camera between
    0.2 m and ``max_depth``.  Returns ``(truth, detections, outlier_index)``.
    """
    from evcatch import simgen
    from evcatch.trajectory import Detection3D, Parabola

    intr = simgen.vga_intrinsics()
    T_BC = simgen.default_extrinsics()
    speed = rng.uniform(5.0, 15.0)
    start = np.array([simgen.throw_distance(speed), rng.uniform(-0.3, 0.3), rng.uniform(0.8, 1.4)])
    target = np.array([0.0, rng.uniform(-0.4, 0.4), 0.5 + rng.uniform(-0.4, 0.4)])
    throw = simgen.aim_throw(start, target, speed)
    flight = simgen.plane_crossing(throw.p0_world, throw.v0_world, simgen.GRAVITY, np.array([-1.0, 0, 0]))
    t = np.sort(rng.uniform(0.0, 0.8 * flight, n))
    p = throw.position(t) + rng.normal(0.0, noise, (n, 3))
    k = int(round(n * (1 - inlier_frac)))
    out = rng.choice(n, k, replace=False)
    u = rng.uniform(0, intr.width, k)
    v = rng.uniform(0, intr.height, k)
    z = rng.uniform(0.2**3, max_depth**3, k) ** (1 / 3)  # uniform in volume
    p[out] = T_BC.apply(np.stack([(u - intr.cx) / intr.fx * z, (v - intr.cy) / intr.fy * z, z], axis=1))
    T_CB = T_BC.inverse()
    dets = [Detection3D(float(ti), pi, T_CB.apply(pi), 10.0, T_BC.rotation) for ti, pi in zip(t, p)]
    return Parabola(throw.p0_world, throw.v0_world, 0.0), dets, out


ACCEPTANCE: dict[int, str] = {}


def record_acceptance(number: int, name: str, ok: bool, detail: str) -> None:
    line = f"C{number} {'PASS' if ok else 'FAIL'} {name}: {detail}"
    ACCEPTANCE[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
