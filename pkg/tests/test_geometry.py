"""Unit tests for the camera model, distortion, and triangulation."""

from __future__ import annotations

import numpy as np
import pytest

from stereofish.errors import DataError, DegenerateDepth, NonConvergence, ParallelRays
from stereofish.geometry import (
    CameraModel,
    DistortionCoefficients,
    Intrinsics,
    PixelPoint,
    RigidTransform,
    StereoRig,
    WorldPoint,
    distort_normalized,
    epipolar_gate,
    project,
    project_many,
    rig_from_dict,
    rig_to_dict,
    rodrigues_from_rotation,
    rotation_from_rodrigues,
    triangulate,
    undistort_point,
)


def _rectified_rig(fx=1000.0, cx=960.0, cy=540.0, baseline=0.8) -> StereoRig:
    intr = Intrinsics(fx, fx, cx, cy)
    left = CameraModel(intr)
    relative = RigidTransform(np.eye(3), [-baseline, 0.0, 0.0])
    right = CameraModel(intr, DistortionCoefficients(), relative)
    return StereoRig(left, right, relative)


def _random_rig(rng) -> StereoRig:
    intr_l = Intrinsics(1400.0, 1390.0, 955.0, 545.0, 0.1)
    intr_r = Intrinsics(1410.0, 1405.0, 965.0, 535.0, -0.1)
    rvec = rng.normal(0.0, 0.03, 3)
    r = rotation_from_rodrigues(rvec)
    center = np.array([0.8, rng.normal(0, 0.01), rng.normal(0, 0.01)])
    relative = RigidTransform(r, -r @ center)
    return StereoRig(
        CameraModel(intr_l),
        CameraModel(intr_r, DistortionCoefficients(), relative),
        relative,
    )


class TestProject:
    def test_optical_axis_maps_to_principal_point(self):
        cam = CameraModel(Intrinsics(1.0, 1.0, 0.0, 0.0))
        p = project(WorldPoint(0.0, 0.0, 1.0), cam)
        assert p == PixelPoint(0.0, 0.0)

    def test_closed_form_pixel(self):
        cam = CameraModel(Intrinsics(1000.0, 1000.0, 960.0, 540.0))
        p = project(WorldPoint(0.1, 0.0, 2.0), cam)
        assert p.u == pytest.approx(1010.0)
        assert p.v == pytest.approx(540.0)

    def test_zero_depth_raises(self):
        cam = CameraModel(Intrinsics(1000.0, 1000.0, 960.0, 540.0))
        with pytest.raises(DegenerateDepth):
            project(WorldPoint(0.1, 0.2, 0.0), cam)

    def test_pinhole_formula_random_points(self):
        """Zero distortion, identity pose: u = fx x/z + s y/z + cx exactly."""
        intr = Intrinsics(1432.0, 1417.0, 961.5, 539.25, 0.7)
        cam = CameraModel(intr)
        rng = np.random.default_rng(11)
        pts = rng.uniform([-2, -2, 0.5], [2, 2, 10], (1000, 3))
        uv = project_many(pts, cam)
        u = intr.fx * pts[:, 0] / pts[:, 2] + intr.s * pts[:, 1] / pts[:, 2] + intr.cx
        v = intr.fy * pts[:, 1] / pts[:, 2] + intr.cy
        np.testing.assert_allclose(uv[:, 0], u, rtol=0, atol=1e-9)
        np.testing.assert_allclose(uv[:, 1], v, rtol=0, atol=1e-9)

    def test_projection_matrix_structure(self):
        """The 3x4 projection matrix equals K [R | t] entrywise."""
        rng = np.random.default_rng(3)
        pose = RigidTransform.from_rodrigues(rng.normal(0, 0.5, 3), rng.normal(0, 1, 3))
        intr = Intrinsics(1400.0, 1380.0, 960.0, 540.0, 0.3)
        cam = CameraModel(intr, DistortionCoefficients(), pose)
        k = intr.matrix()
        rt = np.hstack([pose.rotation, pose.translation.reshape(3, 1)])
        np.testing.assert_array_equal(cam.projection_matrix(), k @ rt)
        assert np.linalg.matrix_rank(cam.projection_matrix()) == 3


class TestUndistort:
    def test_zero_coefficients_identity(self):
        intr = Intrinsics(1400.0, 1400.0, 960.0, 540.0)
        p = PixelPoint(123.4, 987.6)
        q = undistort_point(p, intr, DistortionCoefficients())
        assert q.u == pytest.approx(p.u, abs=1e-9)
        assert q.v == pytest.approx(p.v, abs=1e-9)

    def test_round_trip_random_coefficients(self):
        """undistort(distort(q)) = q within 1e-6 px across the working range."""
        intr = Intrinsics(1400.0, 1400.0, 960.0, 540.0)
        rng = np.random.default_rng(7)
        for _ in range(200):
            d = DistortionCoefficients(
                k1=rng.uniform(-0.3, 0.3),
                k2=rng.uniform(-0.3, 0.3),
                p1=rng.uniform(-0.01, 0.01),
                p2=rng.uniform(-0.01, 0.01),
            )
            xn = rng.uniform(-0.4, 0.4, 2)
            distorted_px = intr.pixel_from_normalized(distort_normalized(xn, d))
            q = undistort_point(PixelPoint(*distorted_px), intr, d)
            expected = intr.pixel_from_normalized(xn)
            assert abs(q.u - expected[0]) < 1e-6
            assert abs(q.v - expected[1]) < 1e-6

    def test_extreme_distortion_raises(self):
        intr = Intrinsics(1400.0, 1400.0, 960.0, 540.0)
        d = DistortionCoefficients(k1=10.0)
        with pytest.raises(NonConvergence):
            undistort_point(PixelPoint(1919.0, 1079.0), intr, d)


class TestTriangulate:
    def test_project_triangulate_round_trip(self):
        rig = _rectified_rig(fx=1000.0)
        point = WorldPoint(0.2, -0.1, 2.0)
        pl = project(point, rig.left)
        pr = project(point, rig.right)
        rec = triangulate(pl, pr, rig.left, rig.right)
        np.testing.assert_allclose(rec.as_array(), point.as_array(), atol=1e-9)

    def test_closed_form_disparity_depth(self):
        """In rectified geometry z = fx * B / d."""
        rig = _rectified_rig(fx=1000.0, baseline=0.8)
        rec = triangulate(
            PixelPoint(1160.0, 540.0), PixelPoint(760.0, 540.0), rig.left, rig.right
        )
        assert rec.z == pytest.approx(2.0, abs=1e-9)

    def test_coincident_rays_raise(self):
        cam = CameraModel(Intrinsics(1000.0, 1000.0, 960.0, 540.0))
        p = PixelPoint(1000.0, 500.0)
        with pytest.raises(ParallelRays):
            triangulate(p, p, cam, cam)

    def test_random_rigs_round_trip(self):
        rng = np.random.default_rng(23)
        for _ in range(10):
            rig = _random_rig(rng)
            for _ in range(50):
                point = WorldPoint(
                    rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0.5, 10)
                )
                pl = project(point, rig.left)
                pr = project(point, rig.right)
                rec = triangulate(pl, pr, rig.left, rig.right)
                assert np.abs(rec.as_array() - point.as_array()).max() < 1e-9


class TestEpipolarGate:
    def test_equal_rows(self):
        assert epipolar_gate(PixelPoint(100, 200), PixelPoint(400, 200), 5)

    def test_band_exceeded(self):
        assert not epipolar_gate(PixelPoint(100, 200), PixelPoint(400, 206), 5)

    def test_boundary_inclusive(self):
        assert epipolar_gate(PixelPoint(100, 200), PixelPoint(400, 205), 5)


class TestRigidTransform:
    def test_compose_inverse_identity(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            t = RigidTransform.from_rodrigues(rng.normal(0, 1, 3), rng.normal(0, 2, 3))
            ident = t.compose(t.inverse())
            assert np.abs(ident.rotation - np.eye(3)).max() < 1e-12
            assert np.abs(ident.translation).max() < 1e-12

    def test_rejects_non_orthonormal(self):
        with pytest.raises(DataError):
            RigidTransform(np.eye(3) * 1.001, np.zeros(3))

    def test_rejects_reflection(self):
        with pytest.raises(DataError):
            RigidTransform(np.diag([1.0, 1.0, -1.0]), np.zeros(3))

    def test_rodrigues_round_trip(self):
        rng = np.random.default_rng(9)
        for _ in range(100):
            rvec = rng.normal(0, 1.2, 3)
            r = rotation_from_rodrigues(rvec)
            back = rodrigues_from_rotation(r)
            # the log map canonicalizes to angle <= pi; compare as rotations
            np.testing.assert_allclose(rotation_from_rodrigues(back), r, atol=1e-9)
            assert np.linalg.norm(back) <= np.pi + 1e-12

    def test_intrinsics_validation(self):
        with pytest.raises(DataError):
            Intrinsics(-1.0, 1.0, 0.0, 0.0)
        k = Intrinsics(100.0, 120.0, 5.0, 6.0, 0.5).matrix()
        assert k[1, 0] == 0.0 and k[2, 0] == 0.0 and k[2, 1] == 0.0


class TestRigSerialization:
    def test_json_round_trip(self):
        rng = np.random.default_rng(2)
        rig = _random_rig(rng)
        data = rig_to_dict(rig)
        assert set(data) == {"left", "right", "relative"}
        assert set(data["left"]) == {
            "fx", "fy", "cx", "cy", "skew", "dist", "rotation", "translation",
        }
        assert len(data["left"]["dist"]) == 5
        back = rig_from_dict(data)
        np.testing.assert_allclose(
            back.relative.rotation, rig.relative.rotation, atol=1e-15
        )
        assert back.left.intrinsics == rig.left.intrinsics

    def test_inconsistent_rig_rejected(self):
        intr = Intrinsics(1000.0, 1000.0, 960.0, 540.0)
        left = CameraModel(intr)
        relative = RigidTransform(np.eye(3), [-0.8, 0.0, 0.0])
        wrong = CameraModel(intr, DistortionCoefficients(),
                            RigidTransform(np.eye(3), [-0.7, 0.0, 0.0]))
        with pytest.raises(DataError):
            StereoRig(left, wrong, relative)
