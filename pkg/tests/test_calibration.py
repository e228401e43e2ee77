"""Unit tests for planar calibration and rectification."""

from __future__ import annotations

import numpy as np
import pytest

from stereofish.calibration import (
    CornerObservationSet,
    RectificationPair,
    calibrate,
    compute_rectification,
    derectify_point,
    estimate_homography,
    extrinsics_from_homography,
    intrinsics_from_homographies,
    rectified_cameras,
    rectified_relative,
    rectify_point,
    refine_calibration,
)
from stereofish.errors import (
    DegenerateConfiguration,
    IllConditioned,
    InsufficientViews,
    ZeroBaseline,
)
from stereofish.geometry import (
    CameraModel,
    DistortionCoefficients,
    Intrinsics,
    PixelPoint,
    RigidTransform,
    StereoRig,
    project_many,
    rotation_from_rodrigues,
)
from stereofish.synthetic import (
    ScenarioConfig,
    board_grid,
    generate_checkerboard_observations,
    make_rig,
)


def _apply_h(h: np.ndarray, pts: np.ndarray) -> np.ndarray:
    hom = np.column_stack([pts[:, :2], np.ones(len(pts))]) @ h.T
    return hom[:, :2] / hom[:, 2:3]


def _board_pose_homography(intr: Intrinsics, pose: RigidTransform) -> np.ndarray:
    r, t = pose.rotation, pose.translation
    h = intr.matrix() @ np.column_stack([r[:, 0], r[:, 1], t])
    return h / h[2, 2]


def _random_board_pose(rng) -> RigidTransform:
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    return RigidTransform(
        rotation_from_rodrigues(axis * rng.uniform(0.15, 0.5)),
        [rng.uniform(-0.3, 0.3), rng.uniform(-0.2, 0.2), rng.uniform(1.2, 2.5)],
    )


class TestHomography:
    def test_identity_square(self):
        pts = np.array([[0.0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]])
        h = estimate_homography(pts, pts[:, :2])
        np.testing.assert_allclose(h, np.eye(3), atol=1e-12)

    def test_recovers_synthetic_homography(self):
        rng = np.random.default_rng(17)
        grid = board_grid(ScenarioConfig())
        for _ in range(20):
            h_true = np.eye(3) + rng.normal(0, 0.1, (3, 3))
            h_true[2, 2] = 1.0
            image = _apply_h(h_true, grid)
            h = estimate_homography(grid, image)
            np.testing.assert_allclose(h, h_true / h_true[2, 2], rtol=1e-8, atol=1e-10)

    def test_collinear_points_rejected(self):
        board = np.array([[0.0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]])
        image = board[:, :2] * 2.0
        with pytest.raises(DegenerateConfiguration):
            estimate_homography(board, image)


class TestIntrinsicsFromHomographies:
    def test_recovers_known_intrinsics(self):
        intr = Intrinsics(1400.0, 1400.0, 960.0, 540.0, 0.0)
        rng = np.random.default_rng(31)
        hs = [_board_pose_homography(intr, _random_board_pose(rng)) for _ in range(5)]
        est = intrinsics_from_homographies(hs)
        assert est.fx == pytest.approx(intr.fx, rel=1e-6)
        assert est.fy == pytest.approx(intr.fy, rel=1e-6)
        assert est.cx == pytest.approx(intr.cx, rel=1e-6)
        assert est.cy == pytest.approx(intr.cy, rel=1e-6)
        assert abs(est.s) < 1e-4

    def test_too_few_views(self):
        intr = Intrinsics(1400.0, 1400.0, 960.0, 540.0)
        rng = np.random.default_rng(3)
        hs = [_board_pose_homography(intr, _random_board_pose(rng)) for _ in range(2)]
        with pytest.raises(InsufficientViews):
            intrinsics_from_homographies(hs)

    def test_identical_orientations_ill_conditioned(self):
        intr = Intrinsics(1400.0, 1400.0, 960.0, 540.0)
        poses = [
            RigidTransform(np.eye(3), [0.1 * i, 0.05 * i, 2.0 + 0.3 * i])
            for i in range(4)
        ]
        hs = [_board_pose_homography(intr, p) for p in poses]
        with pytest.raises(IllConditioned):
            intrinsics_from_homographies(hs)


class TestExtrinsicsFromHomography:
    def test_round_trip_pose(self):
        intr = Intrinsics(1400.0, 1395.0, 958.0, 542.0)
        rng = np.random.default_rng(41)
        for _ in range(20):
            pose = _random_board_pose(rng)
            h = _board_pose_homography(intr, pose)
            est = extrinsics_from_homography(h, intr)
            np.testing.assert_allclose(est.rotation, pose.rotation, atol=1e-6)
            np.testing.assert_allclose(est.translation, pose.translation, atol=1e-6)

    def test_identity_homography(self):
        est = extrinsics_from_homography(np.eye(3), Intrinsics(1.0, 1.0, 0.0, 0.0))
        np.testing.assert_allclose(est.rotation, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(est.translation, [0.0, 0.0, 1.0], atol=1e-12)

    def test_orthonormality_after_noise(self):
        intr = Intrinsics(1400.0, 1395.0, 958.0, 542.0)
        rng = np.random.default_rng(43)
        for _ in range(20):
            h = _board_pose_homography(intr, _random_board_pose(rng))
            h += rng.normal(0, 1e-4, (3, 3))
            est = extrinsics_from_homography(h, intr)
            defect = np.abs(est.rotation.T @ est.rotation - np.eye(3)).max()
            assert defect < 1e-9


class TestCalibrationLoop:
    def test_noiseless_recovery(self):
        cfg = ScenarioConfig(seed=13, n_boards=12)
        obs, rig_gt = generate_checkerboard_observations(cfg)
        result = calibrate(obs)
        assert result.rms_reprojection_error < 1e-8
        for est, true in (
            (result.rig.left.intrinsics, rig_gt.left.intrinsics),
            (result.rig.right.intrinsics, rig_gt.right.intrinsics),
        ):
            assert est.fx == pytest.approx(true.fx, rel=1e-5)
            assert est.fy == pytest.approx(true.fy, rel=1e-5)
            assert est.cx == pytest.approx(true.cx, rel=1e-5)
            assert est.cy == pytest.approx(true.cy, rel=1e-5)
        np.testing.assert_allclose(
            result.rig.relative.rotation, rig_gt.relative.rotation, atol=1e-6
        )
        np.testing.assert_allclose(
            result.rig.relative.translation, rig_gt.relative.translation, atol=1e-6
        )

    def test_refinement_monotone_and_stationary(self):
        cfg = ScenarioConfig(seed=19, n_boards=8, corner_noise_px=0.3)
        obs, _ = generate_checkerboard_observations(cfg)
        first = calibrate(obs)
        again = refine_calibration(first, obs)
        # already at the optimum: rms unchanged within 1e-12, params unchanged
        assert again.rms_reprojection_error <= first.rms_reprojection_error + 1e-15
        assert again.rms_reprojection_error == pytest.approx(
            first.rms_reprojection_error, rel=1e-9
        )
        assert again.rig.left.intrinsics.fx == pytest.approx(
            first.rig.left.intrinsics.fx, rel=1e-9
        )

    def test_board_pose_recovery_invariant_to_global_board_motion(self):
        """Re-framing the board plane leaves the recovered rig unchanged."""
        cfg = ScenarioConfig(seed=29, n_boards=10)
        obs, _ = generate_checkerboard_observations(cfg)
        angle = 0.7
        rot = np.array(
            [
                [np.cos(angle), -np.sin(angle), 0.0],
                [np.sin(angle), np.cos(angle), 0.0],
                [0.0, 0.0, 1.0],
            ]
        )
        shift = np.array([0.04, -0.03, 0.0])
        moved = [
            CornerObservationSet(
                frame_id=o.frame_id,
                board_points=o.board_points @ rot.T + shift,
                image_points_left=o.image_points_left,
                image_points_right=o.image_points_right,
            )
            for o in obs
        ]
        a = calibrate(obs)
        b = calibrate(moved)
        assert b.rig.left.intrinsics.fx == pytest.approx(
            a.rig.left.intrinsics.fx, rel=1e-7
        )
        np.testing.assert_allclose(
            b.rig.relative.translation, a.rig.relative.translation, atol=1e-7
        )


class TestRectification:
    def test_already_rectified_rig_is_fixed_point(self):
        intr = Intrinsics(1000.0, 1000.0, 960.0, 540.0)
        relative = RigidTransform(np.eye(3), [-0.8, 0.0, 0.0])
        rig = StereoRig(
            CameraModel(intr),
            CameraModel(intr, DistortionCoefficients(), relative),
            relative,
        )
        rect = compute_rectification(rig)
        np.testing.assert_allclose(rect.rot_left.rotation, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(rect.rot_right.rotation, np.eye(3), atol=1e-12)

    def test_yawed_rig_shares_rows(self):
        rig = make_rig(ScenarioConfig(relative_yaw_deg=5.0))
        rect = compute_rectification(rig)
        rel = rectified_relative(rig, rect)
        np.testing.assert_allclose(rel.rotation, np.eye(3), atol=1e-9)
        assert abs(rel.translation[1]) < 1e-9
        assert abs(rel.translation[2]) < 1e-9
        rng = np.random.default_rng(53)
        pts = rng.uniform([-0.5, -0.3, 1.0], [0.5, 0.3, 4.0], (100, 3))
        px_l = project_many(pts, rig.left)
        px_r = project_many(pts, rig.right)
        for (ul, vl), (ur, vr) in zip(px_l, px_r):
            a = rectify_point(PixelPoint(ul, vl), rig.left, rect, "left")
            b = rectify_point(PixelPoint(ur, vr), rig.right, rect, "right")
            assert abs(a.v - b.v) < 1e-9

    def test_zero_baseline_rejected(self):
        intr = Intrinsics(1000.0, 1000.0, 960.0, 540.0)
        relative = RigidTransform(np.eye(3), [-1e-15, 0.0, 0.0])
        rig = StereoRig(
            CameraModel(intr),
            CameraModel(intr, DistortionCoefficients(), relative),
            relative,
        )
        with pytest.raises(ZeroBaseline):
            compute_rectification(rig)

    def test_identity_rectification_preserves_points(self):
        intr = Intrinsics(1000.0, 1000.0, 960.0, 540.0)
        rect = RectificationPair(
            rot_left=RigidTransform.identity(),
            rot_right=RigidTransform.identity(),
            new_intrinsics=intr,
        )
        cam = CameraModel(intr)
        p = PixelPoint(312.5, 876.25)
        q = rectify_point(p, cam, rect, "left")
        assert q.u == pytest.approx(p.u, abs=1e-9)
        assert q.v == pytest.approx(p.v, abs=1e-9)

    def test_rectify_derectify_round_trip(self):
        rig = make_rig(ScenarioConfig(relative_yaw_deg=4.0))
        rect = compute_rectification(rig)
        rng = np.random.default_rng(59)
        for _ in range(50):
            p = PixelPoint(rng.uniform(0, 1920), rng.uniform(0, 1080))
            for side, cam in (("left", rig.left), ("right", rig.right)):
                q = rectify_point(p, cam, rect, side)
                back = derectify_point(q, cam, rect, side)
                assert abs(back.u - p.u) < 1e-9
                assert abs(back.v - p.v) < 1e-9

    def test_rectified_cameras_match_point_rectification(self):
        rig = make_rig(ScenarioConfig(relative_yaw_deg=3.0))
        rect = compute_rectification(rig)
        cam_l, _ = rectified_cameras(rig, rect)
        pts = np.array([[0.1, -0.05, 2.0], [-0.2, 0.1, 1.5]])
        direct = project_many(pts, cam_l)
        via_points = [
            rectify_point(PixelPoint(u, v), rig.left, rect, "left")
            for u, v in project_many(pts, rig.left)
        ]
        for (u, v), q in zip(direct, via_points):
            assert u == pytest.approx(q.u, abs=1e-9)
            assert v == pytest.approx(q.v, abs=1e-9)
