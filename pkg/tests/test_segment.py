"""Motion compensation, mean timestamp image, normalization and thresholding."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_events
from evcatch import simgen
from evcatch.catchsim import window_separation
from evcatch.core import EVENT_DTYPE, CameraIntrinsics, EventBuffer, ImuStream, make_events, project
from evcatch.pipeline import PipelineConfig
from evcatch.segment import (
    NoImuCoverage,
    NormalizedImage,
    SegmentationConfig,
    TimestampImage,
    build_timestamp_image,
    compensation_rate,
    mean_angular_rate,
    motion_compensate,
    normalize,
    segment,
    threshold,
    warp_points,
)


def brute_force_timestamp_image(buffer: EventBuffer, warped, intr: CameraIntrinsics):
    """Per-pixel Python accumulation in event order."""
    total = {}
    count = {}
    rel = buffer.relative_times()
    for k in range(len(buffer)):
        if not warped.inside[k]:
            continue
        key = (int(np.floor(warped.y[k] + 0.5)), int(np.floor(warped.x[k] + 0.5)))
        total[key] = total.get(key, 0.0) + float(rel[k])
        count[key] = count.get(key, 0) + 1
    img = np.full((intr.height, intr.width), np.nan)
    for key, s in total.items():
        img[key] = s / count[key]
    return img


def _small() -> CameraIntrinsics:
    return CameraIntrinsics(40.0, 40.0, 16.0, 12.0, 32, 24)


class TestTimestampImage:
    @pytest.mark.parametrize("seed", range(5))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        intr = _small()
        buf = EventBuffer(random_events(rng, 400, 32, 24), 0, 10_000_000)
        w = rng.normal(size=3)
        warped = motion_compensate(buf, w, intr)
        ts = build_timestamp_image(buf, warped, intr)
        np.testing.assert_array_equal(ts.mean_ts, brute_force_timestamp_image(buf, warped, intr))

    def test_touched_lists_non_empty_pixels(self, rng):
        intr = _small()
        buf = EventBuffer(random_events(rng, 50, 32, 24), 0, 10_000_000)
        ts = build_timestamp_image(buf, motion_compensate(buf, np.zeros(3), intr), intr)
        np.testing.assert_array_equal(ts.flat_valid(), np.flatnonzero(ts.count))

    def test_values_within_window(self, rng):
        intr = _small()
        buf = EventBuffer(random_events(rng, 300, 32, 24), 0, 10_000_000)
        ts = build_timestamp_image(buf, motion_compensate(buf, np.zeros(3), intr), intr)
        v = ts.mean_ts[ts.valid]
        assert v.min() >= 0 and v.max() < 0.01


class TestMotionCompensation:
    def test_zero_rate_is_identity(self, rng):
        intr = _small()
        buf = EventBuffer(random_events(rng, 100, 32, 24), 0, 10_000_000)
        warped = motion_compensate(buf, np.zeros(3), intr)
        np.testing.assert_array_equal(warped.x, buf.events["x"].astype(float))

    def test_first_instant_unchanged(self, vga):
        ev = make_events([0], [100], [50], [1])
        warped = motion_compensate(EventBuffer(ev, 0, 10_000_000), [0.3, -0.2, 0.5], vga)
        assert (warped.x[0], warped.y[0]) == (100.0, 50.0)

    @given(w=st.tuples(*[st.floats(-1.0, 1.0)] * 3), dt_ms=st.floats(0.0, 10.0),
           u=st.integers(100, 540), v=st.integers(80, 400))
    def test_returns_static_point_to_window_start(self, w, dt_ms, u, v):
        # A static point drifts as dp/dt = -w x p; compensation must map it back.
        intr = CameraIntrinsics.from_fov(640, 480, 90.0)
        w_cam = np.array(w)
        dt = dt_ms * 1e-3
        p = np.array([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0]) * 4.0
        p0 = p + np.cross(w_cam, p) * dt  # first order in dt
        ev = make_events([int(round(dt * 1e9))], [u], [v], [1])
        warped = motion_compensate(EventBuffer(ev, 0, 10_000_000), -w_cam, intr)
        expect = intr.K @ p0
        assert warped.x[0] == pytest.approx(expect[0] / expect[2], abs=0.05)
        assert warped.y[0] == pytest.approx(expect[1] / expect[2], abs=0.05)

    def test_compensation_rate_sign(self):
        R_CB = np.eye(3)
        np.testing.assert_array_equal(compensation_rate([0.1, 0.2, 0.3], R_CB), [-0.1, -0.2, -0.3])


class TestMeanAngularRate:
    def _imu(self):
        return ImuStream(np.array([0, 4, 8], np.uint64), np.array([[1.0, 0, 0], [3.0, 0, 0], [5.0, 0, 0]]))

    def test_time_weighted(self):
        # [2, 6]: 2 ns at 1, 2 ns at 3.
        np.testing.assert_allclose(mean_angular_rate(self._imu(), 2, 6), [2.0, 0, 0])

    def test_last_sample_holds(self):
        np.testing.assert_allclose(mean_angular_rate(self._imu(), 8, 20), [5.0, 0, 0])

    def test_no_coverage(self):
        imu = ImuStream(np.array([100], np.uint64), np.zeros((1, 3)))
        with pytest.raises(NoImuCoverage):
            mean_angular_rate(imu, 0, 50)


class TestNormalizeThreshold:
    def test_rho_zero_mean(self, rng):
        intr = _small()
        buf = EventBuffer(random_events(rng, 200, 32, 24), 0, 10_000_000)
        norm = normalize(build_timestamp_image(buf, motion_compensate(buf, np.zeros(3), intr), intr))
        assert np.nanmean(norm.rho) == pytest.approx(0.0, abs=1e-12)

    def test_threshold_grows_with_rate(self, rng):
        cfg = SegmentationConfig()
        intr = _small()
        buf = EventBuffer(random_events(rng, 200, 32, 24), 0, 10_000_000)
        norm = normalize(build_timestamp_image(buf, motion_compensate(buf, np.zeros(3), intr), intr))
        slow = threshold(norm, np.zeros(3), cfg)
        fast = threshold(norm, np.array([0.0, 0.0, 1.0]), cfg)
        assert fast.threshold_used == pytest.approx(cfg.theta0 + cfg.theta1)
        assert fast.mask.sum() <= slow.mask.sum()
        np.testing.assert_array_equal(slow.mask, np.nan_to_num(norm.rho, nan=-1) > cfg.theta0)

    def test_pixels_row_major(self, rng):
        intr = _small()
        buf = EventBuffer(random_events(rng, 200, 32, 24), 0, 10_000_000)
        _, _, binary = segment(buf, np.zeros(3), intr, SegmentationConfig())
        ys, xs = np.nonzero(binary.mask)
        np.testing.assert_array_equal(binary.pixels(), np.stack([xs, ys], axis=1))

    def test_empty_buffer(self):
        intr = _small()
        ts, norm, binary = segment(EventBuffer(np.zeros(0, EVENT_DTYPE), 0, 10), np.zeros(3), intr,
                                   SegmentationConfig())
        assert norm is None and binary is None and not ts.valid.any()

    def test_late_blob_is_segmented(self):
        # Background spread over the window, a blob active only in its last 2 ms.
        intr = _small()
        rng = np.random.default_rng(0)
        bg = random_events(rng, 300, 32, 24)
        t = np.full(9, 9_000_000)
        xs, ys = np.meshgrid([20, 21, 22], [5, 6, 7])
        blob = make_events(t, xs.ravel(), ys.ravel(), np.ones(9))
        ev = np.sort(np.concatenate([bg[(bg["x"] < 18)], blob]), order="t")
        _, _, binary = segment(EventBuffer(ev, 0, 10_000_000), np.zeros(3), intr, SegmentationConfig())
        assert binary.mask[5:8, 20:23].all()


def _ts_image(values: dict, shape=(4, 4), window=0.01) -> TimestampImage:
    mean = np.full(shape, np.nan)
    count = np.zeros(shape, np.int32)
    for (r, c), v in values.items():
        mean[r, c] = v
        count[r, c] = 1
    return TimestampImage(mean, count, 0, window)


def _rho(values: dict, shape=(4, 4)) -> NormalizedImage:
    rho = np.full(shape, np.nan)
    for key, v in values.items():
        rho[key] = v
    return NormalizedImage(rho, 0.0, 0.01)


class TestExamples:
    def test_two_events_on_one_pixel(self):
        intr = _small()
        ev = make_events([1_000_000, 3_000_000], [5, 5], [7, 7], [1, -1])
        buf = EventBuffer(ev, 0, 10_000_000)
        ts = build_timestamp_image(buf, motion_compensate(buf, np.zeros(3), intr), intr)
        assert ts.mean_ts[7, 5] == pytest.approx(0.002, abs=1e-15) and ts.count[7, 5] == 2
        assert ts.valid.sum() == 1 and np.isnan(ts.mean_ts[0, 0])

    def test_normalize_extremes(self):
        norm = normalize(_ts_image({(0, 0): 0.01, (1, 1): 0.0}))
        assert norm.rho[0, 0] == pytest.approx(0.5) and norm.rho[1, 1] == pytest.approx(-0.5)

    def test_uniform_timestamps_give_zero_rho(self):
        norm = normalize(_ts_image({(0, 0): 0.004, (2, 3): 0.004, (3, 1): 0.004}))
        assert np.all(norm.rho[np.isfinite(norm.rho)] == 0.0)

    def test_threshold_examples(self):
        zero = _rho({(r, c): 0.0 for r in range(4) for c in range(4)})
        assert not threshold(zero, np.zeros(3), SegmentationConfig(theta0=0.1)).mask.any()
        one = threshold(_rho({(2, 1): 0.5}), np.ones(3), SegmentationConfig(theta0=0.1, theta1=0.0))
        assert one.mask[2, 1] and one.mask.sum() == 1

    @given(t_lo=st.floats(0.001, 0.5), dt=st.floats(0.0, 0.5), seed=st.integers(0, 2**31))
    def test_raising_theta0_never_adds_pixels(self, t_lo, dt, seed):
        rho = np.random.default_rng(seed).uniform(-0.5, 0.5, (6, 6))
        norm = NormalizedImage(rho, 0.0, 0.01)
        w = np.array([0.0, 0.0, 0.3])
        lo = threshold(norm, w, SegmentationConfig(theta0=t_lo)).mask
        hi = threshold(norm, w, SegmentationConfig(theta0=t_lo + dt)).mask
        assert not np.any(hi & ~lo)


class TestPureRotation:
    @pytest.mark.parametrize("seed", range(5))
    def test_warped_background_collapses(self, seed):
        # Zero lever arm: the camera only rotates, so every point has one image at t0.
        rng = np.random.default_rng(seed)
        intr = simgen.vga_intrinsics()
        T_BC = simgen.default_extrinsics(0.0)
        axis = rng.normal(size=3)
        omega = axis / np.linalg.norm(axis) * rng.uniform(0.2, 1.0)
        profile = ((1.0, tuple(omega)),)
        t0, window = 0.3, 0.01
        t = t0 + np.linspace(0.0, window, 21)
        R_CW = np.transpose(simgen.body_rotations(profile, t) @ T_BC.rotation, (0, 2, 1))
        depth = rng.uniform(3.0, 10.0, 50)
        pix0 = rng.uniform([40, 40], [600, 440], (50, 2))
        p_cam0 = np.stack([(pix0[:, 0] - intr.cx) / intr.fx * depth,
                           (pix0[:, 1] - intr.cy) / intr.fy * depth, depth], axis=1)
        P = p_cam0 @ R_CW[0]  # world points, camera at the origin
        w_cam = compensation_rate(omega, T_BC.rotation.T)
        worst = 0.0
        for k in range(len(t)):
            uv = project(intr, P @ R_CW[k].T)
            xw, yw, _ = warp_points(uv[:, 0], uv[:, 1], t[k] - t0, w_cam, intr)
            worst = max(worst, float(np.hypot(xw - pix0[:, 0], yw - pix0[:, 1]).max()))
        assert worst < 0.5

    @pytest.mark.xfail(strict=True, reason="single-event pixels spread rho over [-0.5, 0.5]; see the ledger")
    def test_noiseless_false_positive_rate(self):
        cfg = PipelineConfig()
        rng = np.random.default_rng(7)
        bg = hits = 0
        for k in range(3):
            axis = rng.normal(size=3)
            rate = tuple(axis / np.linalg.norm(axis) * rng.uniform(0.2, 1.0))
            scene = simgen.SceneConfig(rotation_profile=((0.1, rate),), noise=simgen.NOISELESS,
                                       duration=0.1, seed=k)
            data = simgen.generate(scene, None)
            for w in range(1, 9):
                s = window_separation(data, w * 10_000_000, cfg)
                bg += s.background_pixels
                hits += s.background_hits
        assert hits / bg < 0.01
