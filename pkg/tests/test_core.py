"""Camera geometry, rigid transforms, event containers and odometry lookup."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.spatial.transform import Rotation

from evcatch.core import (
    EVENT_DTYPE,
    CameraIntrinsics,
    Event,
    EventBuffer,
    Frame,
    FrameMismatch,
    NonPositiveDepth,
    NoOdometry,
    OdometryStream,
    RigidTransform,
    back_project,
    make_events,
    ns_to_s,
    project,
    rotation_from_rotvec,
    skew,
)

finite = st.floats(-5.0, 5.0, allow_nan=False)
vec3 = arrays(np.float64, 3, elements=finite)


def _transform(rotvec, t, a=Frame.CAMERA, b=Frame.WORLD) -> RigidTransform:
    return RigidTransform(rotation_from_rotvec(rotvec), t, a, b)


class TestIntrinsics:
    def test_from_fov_vga(self):
        intr = CameraIntrinsics.from_fov(640, 480, 90.0)
        assert intr.fx == pytest.approx(320.0)
        assert (intr.cx, intr.cy) == (320.0, 240.0)

    def test_k_inverse(self, vga):
        np.testing.assert_allclose(vga.K @ vga.K_inv, np.eye(3), atol=1e-15)

    @pytest.mark.parametrize("kw", [{"fx": 0.0}, {"fy": -1.0}, {"cx": 700.0}, {"cy": -1.0}])
    def test_rejects_bad_parameters(self, kw):
        base = dict(fx=300.0, fy=300.0, cx=320.0, cy=240.0, width=640, height=480)
        with pytest.raises(ValueError):
            CameraIntrinsics(**{**base, **kw})


class TestProjection:
    @given(px=arrays(np.float64, 2, elements=st.floats(0.0, 639.0)), depth=st.floats(0.05, 50.0))
    def test_back_project_then_project(self, px, depth):
        intr = CameraIntrinsics.from_fov(640, 480, 90.0)
        np.testing.assert_allclose(project(intr, back_project(intr, px, depth)), px, atol=1e-9, rtol=0)

    def test_matches_homogeneous_oracle(self, vga, rng):
        p = rng.uniform([-2, -2, 0.5], [2, 2, 9], (100, 3))
        h = p @ vga.K.T
        np.testing.assert_allclose(project(vga, p), h[:, :2] / h[:, 2:], rtol=1e-13)

    def test_behind_camera(self, vga):
        with pytest.raises(NonPositiveDepth):
            project(vga, [0.0, 0.0, 0.0])
        with pytest.raises(NonPositiveDepth):
            back_project(vga, [1.0, 1.0], -1.0)


class TestRigidTransform:
    @given(r=vec3, t=vec3, p=vec3)
    def test_inverse_round_trip(self, r, t, p):
        T = _transform(r, t)
        np.testing.assert_allclose(T.inverse().apply(T.apply(p)), p, atol=1e-12)

    @given(r1=vec3, t1=vec3, r2=vec3, t2=vec3, p=vec3)
    def test_compose_is_sequential_application(self, r1, t1, r2, t2, p):
        A = _transform(r1, t1, Frame.BODY, Frame.WORLD)
        B = _transform(r2, t2, Frame.CAMERA, Frame.BODY)
        np.testing.assert_allclose((A @ B).apply(p), A.apply(B.apply(p)), atol=1e-11)

    def test_matrix_matches_homogeneous(self, rng):
        T = _transform(rng.normal(size=3), rng.normal(size=3))
        p = rng.normal(size=3)
        np.testing.assert_allclose((T.matrix() @ np.append(p, 1.0))[:3], T.apply(p), atol=1e-14)

    def test_frame_mismatch(self):
        a = RigidTransform.identity(Frame.BODY, Frame.WORLD)
        with pytest.raises(FrameMismatch):
            a.compose(RigidTransform.identity(Frame.BODY, Frame.WORLD))

    def test_rejects_reflection(self):
        with pytest.raises(ValueError):
            RigidTransform(np.diag([1.0, 1.0, -1.0]))

    def test_nearly_orthonormal_is_repaired(self):
        R = rotation_from_rotvec([0.1, 0.2, 0.3]) + 1e-8
        T = RigidTransform(R)
        assert np.abs(T.rotation.T @ T.rotation - np.eye(3)).max() < 1e-14


class TestRotations:
    @given(r=vec3)
    def test_rodrigues_matches_scipy(self, r):
        np.testing.assert_allclose(rotation_from_rotvec(r), Rotation.from_rotvec(r).as_matrix(), atol=1e-12)

    @given(w=vec3, v=vec3)
    def test_skew_is_cross_product(self, w, v):
        np.testing.assert_allclose(skew(w) @ v, np.cross(w, v), atol=1e-12)


class TestEvents:
    def test_event_validation(self):
        with pytest.raises(ValueError):
            Event(0, 1, 1, 0)
        with pytest.raises(ValueError):
            Event(-1, 1, 1, 1)

    def test_buffer_slice_half_open(self):
        ev = make_events([0, 5, 10, 15], [0] * 4, [0] * 4, [1] * 4)
        buf = EventBuffer.slice(ev, 5, 10)
        assert buf.events["t"].tolist() == [5, 10]
        assert buf.t1 == 15

    def test_buffer_rejects_unsorted(self):
        with pytest.raises(ValueError):
            EventBuffer(make_events([3, 1], [0, 0], [0, 0], [1, 1]), 0, 10)

    def test_relative_times(self):
        buf = EventBuffer(make_events([1_000_000_000, 1_005_000_000], [0, 0], [0, 0], [1, 1]),
                          1_000_000_000, 10_000_000)
        np.testing.assert_allclose(buf.relative_times(), [0.0, 0.005], atol=1e-15)

    def test_ns_to_s_large_epoch_keeps_resolution(self):
        t = np.array([2**62, 2**62 + 1], dtype=np.uint64)
        assert ns_to_s(t, 2**62).tolist() == [0.0, 1e-9]

    def test_empty_buffer(self):
        assert len(EventBuffer(np.zeros(0, EVENT_DTYPE), 0, 10)) == 0


class TestOdometry:
    def _stream(self):
        R = np.stack([np.eye(3), rotation_from_rotvec([0.0, 0.0, 0.2])])
        return OdometryStream(np.array([0, 1000], np.uint64), R, np.array([[0.0, 0, 0], [1.0, 0, 0]]))

    def test_interpolates_midpoint(self):
        T = self._stream().at(500)
        np.testing.assert_allclose(T.translation, [0.5, 0, 0])
        np.testing.assert_allclose(T.rotation, rotation_from_rotvec([0, 0, 0.1]), atol=1e-12)

    def test_endpoints_exact(self):
        s = self._stream()
        np.testing.assert_array_equal(s.at(1000).rotation, s.rotation[1])

    def test_outside_range(self):
        with pytest.raises(NoOdometry):
            self._stream().at(1001)
