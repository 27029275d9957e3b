"""Depth from size, lifting, parabola solves, inlier counting and RANSAC."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import contaminated_track
from evcatch import simgen
from evcatch.cluster import Cluster, circumscribe
from evcatch.core import GRAVITY, CameraIntrinsics, Frame, NonPositiveDepth, RigidTransform, rotation_from_rotvec
from evcatch.trajectory import (
    DegenerateTimes,
    Detection3D,
    NoConsensus,
    Parabola,
    RankDeficient,
    RansacConfig,
    TooFewDetections,
    ZeroWidth,
    count_inliers,
    depth_from_size,
    information_matrices,
    lambda_norms,
    lift,
    minimal_solve,
    ransac_fit,
    refine,
)


def _det(t, p, R=None) -> Detection3D:
    p = np.asarray(p, float)
    return Detection3D(float(t), p, np.array([0.0, 0.0, 1.0]), 10.0, np.eye(3) if R is None else R)


def make_track(rng, n=20, inlier_frac=0.7, noise=0.0, v0=None):
    """Ballistic samples plus uniform outliers in a 4 m box."""
    p0 = rng.uniform([2.0, -0.5, 0.8], [4.0, 0.5, 1.4])
    v0 = rng.uniform([-12, -1, 0], [-5, 1, 3]) if v0 is None else np.asarray(v0, float)
    para = Parabola(p0, v0, 0.0)
    t = np.sort(rng.uniform(0.0, 0.3, n))
    p = para.position(t) + rng.normal(0, noise, (n, 3))
    n_out = int(round(n * (1 - inlier_frac)))
    out = rng.choice(n, n_out, replace=False)
    p[out] = rng.uniform([0, -2, -1], [4, 2, 3], (n_out, 3))
    return para, [_det(ti, pi) for ti, pi in zip(t, p)], out


class TestDepthAndLift:
    def test_depth_from_size(self):
        intr = CameraIntrinsics(400.0, 400.0, 320.0, 240.0, 640, 480)
        assert depth_from_size(intr, 20.0, 0.1) == pytest.approx(2.0)

    def test_zero_width(self):
        with pytest.raises(ZeroWidth):
            depth_from_size(CameraIntrinsics.from_fov(640, 480, 90), 0.0, 0.1)

    def test_lift_centers_box_at_implied_depth(self, vga):
        members = np.array([[300, 200], [319, 219]])
        c = Cluster(members, (300, 200, 319, 219), np.zeros(2), 0.5, 1_000_000_000)
        T = RigidTransform(rotation_from_rotvec([0, 0.3, 0]), [1.0, 2.0, 3.0], Frame.CAMERA, Frame.WORLD)
        d = lift(c, vga, T, 0.1)
        assert d.p_camera[2] == pytest.approx(vga.fx * 0.1 / 20)
        np.testing.assert_allclose(d.p_world, T.apply(d.p_camera))
        assert d.t == pytest.approx(1.0)

    def test_detection_behind_camera(self):
        with pytest.raises(NonPositiveDepth):
            Detection3D(0.0, np.zeros(3), np.array([0.0, 0.0, -1.0]), 5.0)


class TestParabola:
    @given(t=st.floats(-1, 1), t_ref=st.floats(-1, 1))
    def test_rereference_preserves_trajectory(self, t, t_ref):
        para = Parabola(np.array([1.0, 2.0, 3.0]), np.array([-4.0, 0.5, 2.0]), 0.2)
        np.testing.assert_allclose(para.rereference(t_ref).position(t), para.position(t), atol=1e-12)

    def test_minimal_solve_interpolates(self, rng):
        for _ in range(100):
            a = _det(rng.uniform(0, 1), rng.normal(size=3))
            b = _det(a.t + rng.uniform(0.01, 0.5), rng.normal(size=3))
            para = minimal_solve(a, b)
            np.testing.assert_allclose(para.position(b.t), b.p_world, atol=1e-9)
            np.testing.assert_allclose(para.position(a.t), a.p_world, atol=1e-12)

    def test_minimal_solve_degenerate(self):
        with pytest.raises(DegenerateTimes):
            minimal_solve(_det(0.1, np.zeros(3)), _det(0.1, np.ones(3)))

    def test_refine_exact_on_clean_data(self, rng):
        para, dets, _ = make_track(rng, inlier_frac=1.0)
        fit = refine(dets, t_ref=0.0)
        np.testing.assert_allclose(fit.v0, para.v0, atol=1e-9)
        np.testing.assert_allclose(fit.p0, para.p0, atol=1e-9)

    def test_weighted_refine_exact_on_clean_data(self, rng):
        para, dets, _ = make_track(rng, inlier_frac=1.0)
        info = np.repeat(np.diag([1.0, 1.0, 0.2])[None], len(dets), axis=0)
        fit = refine(dets, t_ref=0.0, info=info)
        np.testing.assert_allclose(fit.v0, para.v0, atol=1e-8)

    def test_refine_single_time(self):
        with pytest.raises(RankDeficient):
            refine([_det(0.1, np.zeros(3)), _det(0.1, np.ones(3))])

    def test_gravity_points_down(self):
        assert GRAVITY[2] < 0 and Parabola(np.zeros(3), np.zeros(3)).position(1.0)[2] == pytest.approx(-4.905)


def oracle_inliers(para: Parabola, dets, cfg: RansacConfig) -> list[int]:
    """Per-detection Lambda-norm recomputation with an explicit loop."""
    out = []
    for i, d in enumerate(dets):
        dt = d.t - para.t_ref
        pred = para.p0 + para.v0 * dt + 0.5 * para.g * dt * dt
        e = d.p_world - pred
        L = d.R_world_camera @ np.diag([1 / cfg.sigma_xy2, 1 / cfg.sigma_xy2, 1 / cfg.sigma_z2]) \
            @ d.R_world_camera.T
        if np.sqrt(e @ L @ e) <= cfg.inlier_threshold:
            out.append(i)
    return out


class TestInliers:
    @pytest.mark.parametrize("seed", range(10))
    def test_count_matches_per_point(self, seed):
        rng = np.random.default_rng(seed)
        para, dets, _ = make_track(rng, noise=0.05)
        R = rotation_from_rotvec(rng.normal(size=3))
        dets = [_det(d.t, d.p_world, R) for d in dets]
        cfg = RansacConfig()
        assert count_inliers(para, dets, cfg).tolist() == oracle_inliers(para, dets, cfg)

    def test_depth_axis_is_down_weighted(self):
        cfg = RansacConfig(inlier_threshold=0.3)
        para = Parabola(np.zeros(3), np.zeros(3), 0.0, np.zeros(3))
        along = _det(0.0, [0.0, 0.0, 0.5])  # camera z equals world z here
        across = _det(0.0, [0.5, 0.0, 0.0])
        assert count_inliers(para, [along, across], cfg).tolist() == [0]


class TestRansac:
    def test_recovers_velocity_with_outliers(self, rng):
        hits = 0
        for seed in range(30):
            r = np.random.default_rng(seed)
            para, dets, _ = make_track(r, noise=0.01)
            fit = ransac_fit(dets, seed=seed)
            hits += np.linalg.norm(fit.parabola.velocity(0.0) - para.v0) <= 0.05 * np.linalg.norm(para.v0)
        assert hits == 30

    def test_excludes_outliers(self, rng):
        para, dets, out = make_track(rng, noise=0.0)
        fit = ransac_fit(dets)
        assert not set(out.tolist()) & set(fit.inliers.tolist())

    def test_deterministic_for_seed(self, rng):
        _, dets, _ = make_track(rng, noise=0.02)
        a, b = ransac_fit(dets, seed=5), ransac_fit(dets, seed=5)
        np.testing.assert_array_equal(a.parabola.v0, b.parabola.v0)

    def test_too_few(self):
        with pytest.raises(TooFewDetections):
            ransac_fit([_det(0.0, np.zeros(3))])

    def test_no_consensus(self, rng):
        dets = [_det(t, rng.uniform(-50, 50, 3)) for t in np.linspace(0, 0.3, 12)]
        with pytest.raises(NoConsensus):
            ransac_fit(dets)


class TestExamples:
    def test_depth_plug_in_and_inverse_proportionality(self):
        intr = CameraIntrinsics(320.0, 320.0, 320.0, 240.0, 640, 480)
        assert depth_from_size(intr, 32.0, 0.1) == pytest.approx(1.0, rel=1e-12)
        assert depth_from_size(intr, 16.0, 0.1) == pytest.approx(2.0, rel=1e-12)

    def test_lift_principal_box(self):
        intr = CameraIntrinsics(320.0, 320.0, 320.0, 240.0, 640, 480)
        c = Cluster(np.array([[312, 232], [328, 248]]), (312, 232, 328, 248), np.zeros(2), 0.5, 0)
        width_m = 2.0 * 17 / 320  # 17 px box at 2 m
        ident = RigidTransform.identity(Frame.CAMERA, Frame.WORLD)
        np.testing.assert_allclose(lift(c, intr, ident, width_m).p_world, [0, 0, 2.0], atol=1e-12)
        yaw = RigidTransform(rotation_from_rotvec([0, 0, np.pi / 2]), np.zeros(3), Frame.CAMERA, Frame.WORLD)
        np.testing.assert_allclose(lift(c, intr, yaw, width_m).p_world, [0, 0, 2.0], atol=1e-12)
        c2 = Cluster(c.members + [64, 0], (376, 232, 392, 248), np.zeros(2), 0.5, 0)
        p_cam = lift(c2, intr, ident, width_m).p_world
        np.testing.assert_allclose(lift(c2, intr, yaw, width_m).p_world, [-p_cam[1], p_cam[0], p_cam[2]],
                                   atol=1e-12)

    def test_minimal_solve_example(self):
        truth = Parabola(np.array([0.0, 0.0, 1.0]), np.array([5.0, 0.0, 5.0]))
        para = minimal_solve(_det(0.0, truth.position(0.0)), _det(0.5, truth.position(0.5)))
        np.testing.assert_allclose(para.p0, [0, 0, 1], atol=1e-12)
        np.testing.assert_allclose(para.v0, [5, 0, 5], atol=1e-12)
        np.testing.assert_allclose(para.position(1.0), [5.0, 0.0, 1.095], atol=1e-12)

    @given(r=st.floats(0.0, 3.0), theta=st.floats(0.01, 2.0))
    def test_camera_z_residual_is_scaled(self, r, theta):
        para = Parabola(np.zeros(3), np.zeros(3), 0.0, np.zeros(3))
        cfg = RansacConfig(inlier_threshold=theta)
        d = _det(0.0, [0.0, 0.0, r])  # camera z equals world z here
        norm = lambda_norms(para, np.zeros(1), d.p_world[None], information_matrices([d], cfg))[0]
        assert norm == pytest.approx(r / np.sqrt(5.0), rel=1e-12, abs=1e-15)
        assert (count_inliers(para, [d], cfg).tolist() == [0]) == (norm <= theta)

    @given(seed=st.integers(0, 2**31), t_lo=st.floats(0.01, 1.0), dt=st.floats(0.0, 1.0))
    def test_inliers_grow_with_threshold(self, seed, t_lo, dt):
        para, dets, _ = make_track(np.random.default_rng(seed), noise=0.2)
        lo = set(count_inliers(para, dets, RansacConfig(inlier_threshold=t_lo)).tolist())
        hi = set(count_inliers(para, dets, RansacConfig(inlier_threshold=t_lo + dt)).tolist())
        assert lo <= hi


class TestRefineProperties:
    def test_two_points_equal_minimal_solve(self, rng):
        a, b = _det(0.1, rng.normal(size=3)), _det(0.4, rng.normal(size=3))
        m, r = minimal_solve(a, b), refine([a, b], t_ref=a.t)
        np.testing.assert_allclose(r.p0, m.p0, atol=1e-12)
        np.testing.assert_allclose(r.v0, m.v0, atol=1e-12)

    def test_noisy_velocity_within_standard_error(self):
        # Per-axis slope standard error is sigma / sqrt(sum (t - mean t)^2).
        sigma, hits = 0.01, 0
        for seed in range(200):
            rng = np.random.default_rng(seed)
            para, dets, _ = make_track(rng, n=50, inlier_frac=1.0, noise=sigma)
            t = np.array([d.t for d in dets])
            se = sigma / np.sqrt(np.sum((t - t.mean()) ** 2))
            fit = refine(dets, t_ref=0.0)
            hits += bool(np.all(np.abs(fit.v0 - para.v0) <= 3 * se))
        assert hits >= 190  # 3-sigma on three axes: about 99.2% expected

    def test_gradient_vanishes_at_solution(self, rng):
        _, dets, _ = make_track(rng, n=30, inlier_frac=1.0, noise=0.05)
        fit = refine(dets, t_ref=0.0)
        t = np.array([d.t for d in dets])
        p = np.array([d.p_world for d in dets])
        r = p - fit.position(t)
        # d/dp0 and d/dv0 of sum |r|^2 (up to a factor -2).
        np.testing.assert_allclose(r.sum(axis=0), 0.0, atol=1e-9)
        np.testing.assert_allclose((r * t[:, None]).sum(axis=0), 0.0, atol=1e-9)

    @given(shift=st.floats(-100.0, 100.0), seed=st.integers(0, 2**31))
    def test_time_origin_shift(self, shift, seed):
        _, dets, _ = make_track(np.random.default_rng(seed), inlier_frac=1.0, noise=0.05)
        moved = [_det(d.t + shift, d.p_world) for d in dets]
        a = refine(dets, t_ref=0.1)
        b = refine(moved, t_ref=0.1 + shift)
        t = np.linspace(0.0, 0.3, 7)
        np.testing.assert_allclose(b.position(t + shift), a.position(t), atol=1e-9)

    def test_all_inlier_noiseless_ransac(self, rng):
        para, dets, _ = make_track(rng, inlier_frac=1.0)
        fit = ransac_fit(dets, seed=1)
        assert len(fit.inliers) == len(dets)
        np.testing.assert_allclose(fit.parabola.velocity(0.0), para.v0, atol=1e-9)
        np.testing.assert_allclose(fit.parabola.position(0.0), para.p0, atol=1e-9)


class TestContaminationBenchmark:
    def test_most_seeds_recover_velocity(self):
        hits = 0
        for seed in range(100):
            truth, dets, _ = contaminated_track(np.random.default_rng(seed))
            v = ransac_fit(dets, RansacConfig(iterations=200), seed=seed).parabola.velocity(0.0)
            hits += np.linalg.norm(v - truth.v0) < 0.05 * np.linalg.norm(truth.v0)
        assert hits >= 97


class TestLiftOnSimulator:
    def test_world_error_from_ball_boxes(self):
        # Boxes from ground-truth ball events per 10 ms window, default noise.
        th = simgen.aim_throw([simgen.throw_distance(8.0), 0.1, 1.1], [0.0, -0.1, 0.55], 8.0, 0.1)
        errs = []
        for seed in range(3):
            scene = simgen.SceneConfig(duration=0.55, seed=seed)
            data = simgen.generate(scene, th)
            window = 10_000_000
            for k in range(11, 50):
                t0, t1 = k * window, (k + 1) * window
                lo, hi = np.searchsorted(data.events["t"], [np.uint64(t0), np.uint64(t1)])
                ball = data.events[lo:hi][data.truth.labels[lo:hi] == simgen.LABEL_BALL]
                if len(ball) < 5:
                    continue
                pix = np.stack([ball["x"], ball["y"]], axis=1).astype(np.int64)
                T_WC = data.odometry.at(t1).compose(scene.camera_to_body)
                truth = th.position(t1 * 1e-9)
                if not 0.3 <= T_WC.inverse().apply(truth)[2] <= 4.0:
                    continue
                det = lift(Cluster(pix, circumscribe(pix)[0], np.zeros(2), 0.0, t1), scene.intrinsics, T_WC, 0.1)
                errs.append(np.linalg.norm(det.p_world - truth))
        assert len(errs) >= 50
        assert max(errs) < 0.25
