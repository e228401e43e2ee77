"""Stereo calibration from checkerboard corner lists, and rectification.

Corner detection is out of scope: each frame arrives as ordered lists of
planar board points (z = 0) with their observed pixels in both cameras. The
estimation pipeline is planar-homography closed form per camera, closed-form
board poses, quaternion-averaged relative pose, then joint Levenberg-
Marquardt over intrinsics, distortion, board poses and the relative pose.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    DataError,
    DegenerateConfiguration,
    DegenerateDepth,
    IllConditioned,
    InsufficientViews,
    ZeroBaseline,
)
from .geometry import (
    CameraModel,
    DistortionCoefficients,
    Intrinsics,
    PixelPoint,
    RigidTransform,
    StereoRig,
    distort_normalized,
    mean_rotation,
    rotations_from_rodrigues,
)

LM_INITIAL_DAMPING = 1e-3
LM_MAX_ITERATIONS = 200
LM_RMS_RELATIVE_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class CornerObservationSet:
    """Checkerboard corners of one stereo frame.

    ``board_points`` are planar (z = 0) metric coordinates; the two image
    lists share its length and ordering.
    """

    frame_id: int
    board_points: np.ndarray
    image_points_left: np.ndarray
    image_points_right: np.ndarray

    def __post_init__(self) -> None:
        board = np.array(self.board_points, dtype=float).reshape(-1, 3)
        left = np.array(self.image_points_left, dtype=float).reshape(-1, 2)
        right = np.array(self.image_points_right, dtype=float).reshape(-1, 2)
        if len(board) < 4:
            raise DataError(f"frame {self.frame_id}: need at least 4 corners")
        if not (len(board) == len(left) == len(right)):
            raise DataError(f"frame {self.frame_id}: corner list lengths differ")
        if np.any(board[:, 2] != 0.0):
            raise DataError(f"frame {self.frame_id}: board points must have z = 0")
        for arr in (board, left, right):
            if not np.isfinite(arr).all():
                raise DataError(f"frame {self.frame_id}: non-finite corner data")
            arr.setflags(write=False)
        object.__setattr__(self, "board_points", board)
        object.__setattr__(self, "image_points_left", left)
        object.__setattr__(self, "image_points_right", right)


@dataclass(frozen=True, eq=False)
class CalibrationResult:
    """Estimated rig, per-frame board poses (board to left camera), and rms."""

    rig: StereoRig
    per_frame_board_poses: tuple[RigidTransform, ...]
    rms_reprojection_error: float
    refinement_converged: bool = True


@dataclass(frozen=True, eq=False)
class RectificationPair:
    """Rotations taking each camera frame to the common rectified frame."""

    rot_left: RigidTransform
    rot_right: RigidTransform
    new_intrinsics: Intrinsics


# ---------------------------------------------------------------------------
# Closed-form stage
# ---------------------------------------------------------------------------


def _normalization_transform(pts: np.ndarray) -> np.ndarray:
    """Similarity transform sending points to mean 0, mean distance sqrt(2)."""
    centroid = pts.mean(axis=0)
    dist = np.linalg.norm(pts - centroid, axis=1).mean()
    scale = np.sqrt(2.0) / dist if dist > 0 else 1.0
    return np.array(
        [
            [scale, 0.0, -scale * centroid[0]],
            [0.0, scale, -scale * centroid[1]],
            [0.0, 0.0, 1.0],
        ]
    )


def estimate_homography(board_points: np.ndarray, image_points: np.ndarray) -> np.ndarray:
    """Normalized-DLT homography from planar board points to image points.

    Raises:
        DegenerateConfiguration: If the correspondences do not determine a
            unique homography (collinear points).
    """
    board = np.array(board_points, dtype=float)
    board = board[:, :2] if board.shape[1] >= 2 else board
    image = np.array(image_points, dtype=float).reshape(-1, 2)
    if len(board) < 4 or len(board) != len(image):
        raise DataError("need at least 4 board/image correspondences of equal length")

    tb = _normalization_transform(board)
    ti = _normalization_transform(image)
    bh = np.column_stack([board, np.ones(len(board))]) @ tb.T
    ih = np.column_stack([image, np.ones(len(image))]) @ ti.T

    a = np.zeros((2 * len(board), 9))
    x, y = bh[:, 0], bh[:, 1]
    u, v = ih[:, 0], ih[:, 1]
    a[0::2, 0] = x
    a[0::2, 1] = y
    a[0::2, 2] = 1.0
    a[0::2, 6] = -u * x
    a[0::2, 7] = -u * y
    a[0::2, 8] = -u
    a[1::2, 3] = x
    a[1::2, 4] = y
    a[1::2, 5] = 1.0
    a[1::2, 6] = -v * x
    a[1::2, 7] = -v * y
    a[1::2, 8] = -v

    _, s, vt = np.linalg.svd(a)
    # the system must have rank 8 for a unique (up to scale) solution
    if len(s) < 8 or s[7] / s[0] < 1e-10:
        raise DegenerateConfiguration("correspondences are (near-)collinear")
    h = np.linalg.inv(ti) @ vt[-1].reshape(3, 3) @ tb
    if abs(h[2, 2]) < 1e-15:
        raise DegenerateConfiguration("homography has vanishing scale entry")
    return h / h[2, 2]


def _conic_constraint(h: np.ndarray, i: int, j: int) -> np.ndarray:
    hi, hj = h[:, i], h[:, j]
    return np.array(
        [
            hi[0] * hj[0],
            hi[0] * hj[1] + hi[1] * hj[0],
            hi[1] * hj[1],
            hi[2] * hj[0] + hi[0] * hj[2],
            hi[2] * hj[1] + hi[1] * hj[2],
            hi[2] * hj[2],
        ]
    )


def intrinsics_from_homographies(homographies) -> Intrinsics:
    """Closed-form intrinsics from the image of the absolute conic.

    Raises:
        InsufficientViews: Fewer than 3 homographies.
        IllConditioned: The conic solution is not positive-definite (e.g.
            identical board orientations).
    """
    hs = list(homographies)
    if len(hs) < 3:
        raise InsufficientViews(f"need at least 3 views, got {len(hs)}")
    rows = []
    for h in hs:
        rows.append(_conic_constraint(h, 0, 1))
        rows.append(_conic_constraint(h, 0, 0) - _conic_constraint(h, 1, 1))
    _, _, vt = np.linalg.svd(np.array(rows))
    b = vt[-1]
    if b[0] < 0:
        b = -b
    b11, b12, b22, b13, b23, b33 = b
    denom = b11 * b22 - b12 * b12
    if b11 <= 0 or denom <= 0:
        raise IllConditioned("absolute-conic solution is not positive-definite")
    v0 = (b12 * b13 - b11 * b23) / denom
    lam = b33 - (b13 * b13 + v0 * (b12 * b13 - b11 * b23)) / b11
    if lam <= 0:
        raise IllConditioned("absolute-conic solution is not positive-definite")
    alpha = float(np.sqrt(lam / b11))
    beta = float(np.sqrt(lam * b11 / denom))
    gamma = float(-b12 * alpha * alpha * beta / lam)
    u0 = float(gamma * v0 / beta - b13 * alpha * alpha / lam)
    return Intrinsics(fx=alpha, fy=beta, cx=u0, cy=float(v0), s=gamma)


def extrinsics_from_homography(h: np.ndarray, intr: Intrinsics) -> RigidTransform:
    """Board pose (board to camera) from a homography and known intrinsics.

    The rotation is the nearest orthonormal matrix in Frobenius norm; the
    translation is scaled by the mean of the first two column norms. The
    sign is chosen so the board sits in front of the camera.
    """
    kinv = intr.inverse_matrix()
    a1 = kinv @ h[:, 0]
    a2 = kinv @ h[:, 1]
    a3 = kinv @ h[:, 2]
    n1, n2 = np.linalg.norm(a1), np.linalg.norm(a2)
    if n1 < 1e-15 or n2 < 1e-15:
        raise DegenerateConfiguration("homography columns vanish under K^-1")
    scale = 2.0 / (n1 + n2)
    r1, r2, t = scale * a1, scale * a2, scale * a3
    if t[2] < 0:
        r1, r2, t = -r1, -r2, -t
    q = np.column_stack([r1, r2, np.cross(r1, r2)])
    u, _, vt = np.linalg.svd(q)
    r = u @ np.diag([1.0, 1.0, np.linalg.det(u @ vt)]) @ vt
    return RigidTransform(r, t)


# ---------------------------------------------------------------------------
# Joint refinement
# ---------------------------------------------------------------------------

_N_SHARED = 26  # 2x(5 intrinsics + 5 distortion) + 6 relative-pose parameters


def _pack(result: CalibrationResult) -> np.ndarray:
    rig = result.rig
    parts = []
    for cam in (rig.left, rig.right):
        i = cam.intrinsics
        parts.append([i.fx, i.fy, i.cx, i.cy, i.s])
        parts.append(cam.distortion.as_array())
    parts.append(result.rig.relative.rodrigues())
    parts.append(rig.relative.translation)
    for pose in result.per_frame_board_poses:
        parts.append(pose.rodrigues())
        parts.append(pose.translation)
    return np.concatenate([np.asarray(p, dtype=float).ravel() for p in parts])


def _unpack(p: np.ndarray, n_frames: int) -> CalibrationResult | None:
    try:
        intr_l = Intrinsics(*p[0:5])
        dist_l = DistortionCoefficients.from_array(p[5:10])
        intr_r = Intrinsics(*p[10:15])
        dist_r = DistortionCoefficients.from_array(p[15:20])
        relative = RigidTransform.from_rodrigues(p[20:23], p[23:26])
    except DataError:
        return None
    left = CameraModel(intr_l, dist_l, RigidTransform.identity())
    right = CameraModel(intr_r, dist_r, relative)
    poses = tuple(
        RigidTransform.from_rodrigues(
            p[_N_SHARED + 6 * i : _N_SHARED + 6 * i + 3],
            p[_N_SHARED + 6 * i + 3 : _N_SHARED + 6 * i + 6],
        )
        for i in range(n_frames)
    )
    return CalibrationResult(StereoRig(left, right, relative), poses, float("nan"))


class _Residuals:
    """Vectorized stereo reprojection residuals for the LM stage."""

    def __init__(self, observations) -> None:
        obs = list(observations)
        if not obs:
            raise DataError("no observation frames")
        counts = {len(o.board_points) for o in obs}
        self.uniform = len(counts) == 1
        self.frames = obs
        if self.uniform:
            self.board = np.stack([o.board_points for o in obs])
            self.obs_l = np.stack([o.image_points_left for o in obs])
            self.obs_r = np.stack([o.image_points_right for o in obs])
        self.n_points = sum(len(o.board_points) for o in obs) * 2

    def __call__(self, p: np.ndarray) -> np.ndarray | None:
        n_frames = len(self.frames)
        fx_l, fy_l = p[0], p[1]
        fx_r, fy_r = p[10], p[11]
        if fx_l <= 0 or fy_l <= 0 or fx_r <= 0 or fy_r <= 0:
            return None
        dist_l = DistortionCoefficients.from_array(p[5:10])
        dist_r = DistortionCoefficients.from_array(p[15:20])
        r_rel = rotations_from_rodrigues(p[20:23])[0]
        t_rel = p[23:26]
        board_params = p[_N_SHARED:].reshape(n_frames, 6)
        r_boards = rotations_from_rodrigues(board_params[:, :3])
        t_boards = board_params[:, 3:]

        if self.uniform:
            xl = np.einsum("fab,fnb->fna", r_boards, self.board) + t_boards[:, None, :]
            xr = xl @ r_rel.T + t_rel
            res_l = self._cam_residual(xl, self.obs_l, p[0:5], dist_l)
            res_r = self._cam_residual(xr, self.obs_r, p[10:15], dist_r)
            if res_l is None or res_r is None:
                return None
            return np.concatenate([res_l.ravel(), res_r.ravel()])

        chunks = []
        for i, frame in enumerate(self.frames):
            xl = frame.board_points @ r_boards[i].T + t_boards[i]
            xr = xl @ r_rel.T + t_rel
            res_l = self._cam_residual(xl, frame.image_points_left, p[0:5], dist_l)
            res_r = self._cam_residual(xr, frame.image_points_right, p[10:15], dist_r)
            if res_l is None or res_r is None:
                return None
            chunks.append(res_l.ravel())
            chunks.append(res_r.ravel())
        return np.concatenate(chunks)

    @staticmethod
    def _cam_residual(x, obs, intr5, dist) -> np.ndarray | None:
        z = x[..., 2]
        if np.any(z < 1e-6):
            return None
        xn = x[..., :2] / z[..., None]
        xd = distort_normalized(xn, dist)
        fx, fy, cx, cy, s = intr5
        u = fx * xd[..., 0] + s * xd[..., 1] + cx
        v = fy * xd[..., 1] + cy
        res = np.stack([u, v], axis=-1) - obs
        if not np.isfinite(res).all():
            return None
        return res

    def rms(self, residual: np.ndarray) -> float:
        return float(np.sqrt(np.square(residual).sum() / self.n_points))


def _finite_difference_jacobian(fn, p: np.ndarray, r0: np.ndarray) -> np.ndarray:
    jac = np.empty((len(r0), len(p)))
    for j in range(len(p)):
        h = 1e-6 * max(1e-3, abs(p[j]))
        plus = p.copy()
        plus[j] += h
        minus = p.copy()
        minus[j] -= h
        rp = fn(plus)
        rm = fn(minus)
        if rp is not None and rm is not None:
            jac[:, j] = (rp - rm) / (2.0 * h)
        elif rp is not None:  # one-sided at the edge of the valid region
            jac[:, j] = (rp - r0) / h
        elif rm is not None:
            jac[:, j] = (r0 - rm) / h
        else:
            jac[:, j] = 0.0
    return jac


def refine_calibration(
    initial: CalibrationResult,
    observations,
    max_iterations: int = LM_MAX_ITERATIONS,
    initial_damping: float = LM_INITIAL_DAMPING,
) -> CalibrationResult:
    """Levenberg-Marquardt refinement of the full calibration.

    Minimizes total squared reprojection error over both cameras' intrinsics
    and distortion, per-frame board poses, and the relative pose. Damping
    starts at 1e-3, x10 on reject, /10 on accept; stops after 200 iterations
    or when the relative rms change drops below 1e-12. The accepted rms never
    increases; on iteration exhaustion the best iterate is returned flagged.
    """
    obs = list(observations)
    fn = _Residuals(obs)
    p = _pack(initial)
    r = fn(p)
    if r is None:
        raise DataError("initial calibration does not project all corners")
    rms = fn.rms(r)

    damping = initial_damping
    jac = None
    converged = False
    for _ in range(max_iterations):
        if jac is None:
            jac = _finite_difference_jacobian(fn, p, r)
            jtj = jac.T @ jac
            g = jac.T @ r
            d = np.clip(np.diag(jtj), 1e-12, None)
        try:
            step = np.linalg.solve(jtj + damping * np.diag(d), -g)
        except np.linalg.LinAlgError:
            damping *= 10.0
            continue
        p_try = p + step
        r_try = fn(p_try)
        if r_try is None:
            damping *= 10.0
            continue
        rms_try = fn.rms(r_try)
        rel_change = abs(rms - rms_try) / max(rms, 1e-300)
        if rms_try < rms:
            p, r, rms = p_try, r_try, rms_try
            damping = max(damping / 10.0, 1e-15)
            jac = None
        else:
            damping *= 10.0
        if rel_change < LM_RMS_RELATIVE_TOL or damping > 1e14:
            converged = True
            break

    result = _unpack(p, len(obs))
    if result is None:  # pragma: no cover - accepted iterates always unpack
        raise DataError("refined parameters failed validation")
    return replace(
        result,
        rms_reprojection_error=rms,
        refinement_converged=converged,
    )


def calibrate(observations, refine: bool = True) -> CalibrationResult:
    """Full calibration: closed-form initialization plus joint refinement."""
    obs = list(observations)
    if len(obs) < 3:
        raise InsufficientViews(f"need at least 3 frames, got {len(obs)}")
    homs_l = [estimate_homography(o.board_points, o.image_points_left) for o in obs]
    homs_r = [estimate_homography(o.board_points, o.image_points_right) for o in obs]
    intr_l = intrinsics_from_homographies(homs_l)
    intr_r = intrinsics_from_homographies(homs_r)
    poses_l = [extrinsics_from_homography(h, intr_l) for h in homs_l]
    poses_r = [extrinsics_from_homography(h, intr_r) for h in homs_r]

    rels = [pr.compose(pl.inverse()) for pl, pr in zip(poses_l, poses_r)]
    relative = RigidTransform(
        mean_rotation([rel.rotation for rel in rels]),
        np.mean([rel.translation for rel in rels], axis=0),
    )
    left = CameraModel(intr_l, DistortionCoefficients(), RigidTransform.identity())
    right = CameraModel(intr_r, DistortionCoefficients(), relative)
    rig = StereoRig(left, right, relative)

    fn = _Residuals(obs)
    initial = CalibrationResult(rig, tuple(poses_l), float("nan"))
    r0 = fn(_pack(initial))
    initial = replace(
        initial,
        rms_reprojection_error=fn.rms(r0) if r0 is not None else float("inf"),
    )
    if not refine:
        return initial
    return refine_calibration(initial, obs)


def reprojection_rms(result: CalibrationResult, observations) -> float:
    """Root-mean-square reprojection distance in pixels over all corners."""
    obs = list(observations)
    fn = _Residuals(obs)
    r = fn(_pack(result))
    if r is None:
        raise DataError("calibration does not project all corners")
    return fn.rms(r)


# ---------------------------------------------------------------------------
# Rectification
# ---------------------------------------------------------------------------


def compute_rectification(rig: StereoRig) -> RectificationPair:
    """Rotations aligning both cameras' x-axes with the baseline.

    After rectification the relative rotation is the identity and the
    relative translation lies along the x-axis, so epipolar lines coincide
    with image rows.
    """
    baseline = -rig.relative.rotation.T @ rig.relative.translation
    norm = np.linalg.norm(baseline)
    if norm < 1e-12:
        raise ZeroBaseline("camera centres coincide")
    r1 = baseline / norm
    r2 = np.cross([0.0, 0.0, 1.0], r1)
    if np.linalg.norm(r2) < 1e-9:
        r2 = np.cross([0.0, 1.0, 0.0], r1)
    r2 /= np.linalg.norm(r2)
    r3 = np.cross(r1, r2)
    rot_left = np.array([r1, r2, r3])
    rot_right = rot_left @ rig.relative.rotation.T

    il, ir = rig.left.intrinsics, rig.right.intrinsics
    new_intr = Intrinsics(
        fx=(il.fx + ir.fx) / 2.0,
        fy=(il.fy + ir.fy) / 2.0,
        cx=(il.cx + ir.cx) / 2.0,
        cy=(il.cy + ir.cy) / 2.0,
        s=0.0,
    )
    return RectificationPair(
        rot_left=RigidTransform(rot_left, np.zeros(3)),
        rot_right=RigidTransform(rot_right, np.zeros(3)),
        new_intrinsics=new_intr,
    )


def _rect_rotation(rect: RectificationPair, side: str) -> np.ndarray:
    if side == "left":
        return rect.rot_left.rotation
    if side == "right":
        return rect.rot_right.rotation
    raise DataError(f"side must be 'left' or 'right', got {side!r}")


def rectify_point(
    p: PixelPoint,
    cam: CameraModel,
    rect: RectificationPair,
    side: str,
) -> PixelPoint:
    """Map an undistorted pixel into the rectified view of its camera."""
    xn = cam.intrinsics.normalized_from_pixel(p.as_array())
    ray = _rect_rotation(rect, side) @ np.array([xn[0], xn[1], 1.0])
    if abs(ray[2]) < 1e-12:
        raise DegenerateDepth("rectified ray parallel to the image plane")
    uv = rect.new_intrinsics.pixel_from_normalized(ray[:2] / ray[2])
    return PixelPoint(float(uv[0]), float(uv[1]))


def derectify_point(
    p: PixelPoint,
    cam: CameraModel,
    rect: RectificationPair,
    side: str,
) -> PixelPoint:
    """Inverse of rectify_point (rectified pixel back to the camera view)."""
    xn = rect.new_intrinsics.normalized_from_pixel(p.as_array())
    ray = _rect_rotation(rect, side).T @ np.array([xn[0], xn[1], 1.0])
    if abs(ray[2]) < 1e-12:
        raise DegenerateDepth("de-rectified ray parallel to the image plane")
    uv = cam.intrinsics.pixel_from_normalized(ray[:2] / ray[2])
    return PixelPoint(float(uv[0]), float(uv[1]))


def rectified_relative(rig: StereoRig, rect: RectificationPair) -> RigidTransform:
    """The rig's relative transform expressed between the rectified frames."""
    r = rect.rot_right.rotation @ rig.relative.rotation @ rect.rot_left.rotation.T
    t = rect.rot_right.rotation @ rig.relative.translation
    return RigidTransform(r, t)


def rectified_cameras(rig: StereoRig, rect: RectificationPair) -> tuple[CameraModel, CameraModel]:
    """Distortion-free camera models of the two rectified virtual views."""
    zero = DistortionCoefficients()
    cams = []
    for cam, rot in ((rig.left, rect.rot_left), (rig.right, rect.rot_right)):
        pose = RigidTransform(
            rot.rotation @ cam.pose.rotation,
            rot.rotation @ cam.pose.translation,
        )
        cams.append(CameraModel(rect.new_intrinsics, zero, pose))
    return cams[0], cams[1]
