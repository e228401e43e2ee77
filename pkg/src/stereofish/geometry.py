"""Pinhole camera model, lens distortion, projection, epipolar gate, triangulation.

All types are immutable values and all operations are pure functions, so
everything here is safe to use concurrently without synchronization.

Conventions:
    * Pixel coordinates: u horizontal, v vertical, origin at the top-left.
    * World and camera coordinates in meters; camera looks along +z.
    * Poses are world-to-camera rigid transforms.
    * The intrinsic matrix is upper-triangular with the skew coefficient in
      the (0, 1) entry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DegenerateDepth, NonConvergence, ParallelRays

ORTHONORMALITY_TOL = 1e-9
RIG_CONSISTENCY_TOL = 1e-6
DEPTH_EPS = 1e-12
UNDISTORT_MAX_ITER = 50
# step tolerance in normalized units; tight enough that the re-distortion
# residual lands below UNDISTORT_RESIDUAL_PX even for slowly contracting
# (strong-distortion) cases
UNDISTORT_TOL = 1e-14
UNDISTORT_RESIDUAL_PX = 1e-8


def _require_finite(name: str, *values: float) -> None:
    for value in values:
        if not math.isfinite(value):
            raise DataError(f"{name} must be finite, got {value!r}")


@dataclass(frozen=True)
class PixelPoint:
    """A 2D image point in pixels. May fall outside the sensor."""

    u: float
    v: float

    def __post_init__(self) -> None:
        _require_finite("PixelPoint", self.u, self.v)

    def as_array(self) -> np.ndarray:
        return np.array([self.u, self.v], dtype=float)


@dataclass(frozen=True)
class WorldPoint:
    """A 3D point in world coordinates (meters)."""

    x: float
    y: float
    z: float

    def __post_init__(self) -> None:
        _require_finite("WorldPoint", self.x, self.y, self.z)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)


@dataclass(frozen=True)
class Intrinsics:
    """Camera-internal parameters, all stored in pixels.

    Attributes:
        fx, fy: Focal lengths in pixels.
        cx, cy: Optical centre in pixels.
        s: Skew coefficient (angle between the pixel axes); 0 for square
            sensors.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    s: float = 0.0

    def __post_init__(self) -> None:
        _require_finite("Intrinsics", self.fx, self.fy, self.cx, self.cy, self.s)
        if self.fx <= 0 or self.fy <= 0:
            raise DataError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    def matrix(self) -> np.ndarray:
        """Upper-triangular 3x3 intrinsic matrix."""
        return np.array(
            [
                [self.fx, self.s, self.cx],
                [0.0, self.fy, self.cy],
                [0.0, 0.0, 1.0],
            ]
        )

    def inverse_matrix(self) -> np.ndarray:
        """Closed-form inverse of the intrinsic matrix."""
        fx, fy, cx, cy, s = self.fx, self.fy, self.cx, self.cy, self.s
        return np.array(
            [
                [1.0 / fx, -s / (fx * fy), (s * cy - cx * fy) / (fx * fy)],
                [0.0, 1.0 / fy, -cy / fy],
                [0.0, 0.0, 1.0],
            ]
        )

    def pixel_from_normalized(self, xy: np.ndarray) -> np.ndarray:
        """Map normalized camera coordinates (..., 2) to pixels."""
        xy = np.asarray(xy, dtype=float)
        u = self.fx * xy[..., 0] + self.s * xy[..., 1] + self.cx
        v = self.fy * xy[..., 1] + self.cy
        return np.stack([u, v], axis=-1)

    def normalized_from_pixel(self, uv: np.ndarray) -> np.ndarray:
        """Map pixels (..., 2) to normalized camera coordinates."""
        uv = np.asarray(uv, dtype=float)
        y = (uv[..., 1] - self.cy) / self.fy
        x = (uv[..., 0] - self.cx - self.s * y) / self.fx
        return np.stack([x, y], axis=-1)


@dataclass(frozen=True)
class DistortionCoefficients:
    """Brown-Conrady lens distortion: radial k1..k3, tangential p1, p2."""

    k1: float = 0.0
    k2: float = 0.0
    p1: float = 0.0
    p2: float = 0.0
    k3: float = 0.0

    def __post_init__(self) -> None:
        _require_finite("DistortionCoefficients", self.k1, self.k2, self.p1, self.p2, self.k3)

    def is_zero(self) -> bool:
        return self.k1 == self.k2 == self.p1 == self.p2 == self.k3 == 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.k1, self.k2, self.p1, self.p2, self.k3], dtype=float)

    @classmethod
    def from_array(cls, d) -> "DistortionCoefficients":
        k1, k2, p1, p2, k3 = (float(x) for x in d)
        return cls(k1, k2, p1, p2, k3)


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Rigid motion x -> R x + t with an orthonormal, right-handed R."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        r = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        if not (np.isfinite(r).all() and np.isfinite(t).all()):
            raise DataError("RigidTransform entries must be finite")
        defect = np.abs(r.T @ r - np.eye(3)).max()
        if defect > ORTHONORMALITY_TOL:
            raise DataError(f"rotation not orthonormal (defect {defect:.3e})")
        det = np.linalg.det(r)
        if abs(det - 1.0) > ORTHONORMALITY_TOL:
            raise DataError(f"rotation determinant {det!r} != +1")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_rodrigues(cls, rvec, translation=(0.0, 0.0, 0.0)) -> "RigidTransform":
        return cls(rotation_from_rodrigues(np.asarray(rvec, dtype=float)), translation)

    def rodrigues(self) -> np.ndarray:
        return rodrigues_from_rotation(self.rotation)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Transform equivalent to applying ``other`` first, then ``self``."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.rotation.T, -self.rotation.T @ self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Apply to one point (3,) or a batch (..., 3)."""
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation.T + self.translation


@dataclass(frozen=True, eq=False)
class CameraModel:
    """A full camera: intrinsics, lens distortion, and world-to-camera pose."""

    intrinsics: Intrinsics
    distortion: DistortionCoefficients = field(default_factory=DistortionCoefficients)
    pose: RigidTransform = field(default_factory=RigidTransform.identity)

    def projection_matrix(self) -> np.ndarray:
        """The 3x4 matrix K [R | t] mapping homogeneous world points to pixels."""
        rt = np.hstack([self.pose.rotation, self.pose.translation.reshape(3, 1)])
        return self.intrinsics.matrix() @ rt


@dataclass(frozen=True, eq=False)
class StereoRig:
    """Two cameras plus their left-to-right relative transform.

    ``relative`` maps left-camera coordinates to right-camera coordinates and
    must be consistent with the two world poses.
    """

    left: CameraModel
    right: CameraModel
    relative: RigidTransform

    def __post_init__(self) -> None:
        composed = self.relative.compose(self.left.pose)
        rot_defect = np.abs(composed.rotation - self.right.pose.rotation).max()
        t_defect = np.abs(composed.translation - self.right.pose.translation).max()
        if max(rot_defect, t_defect) > RIG_CONSISTENCY_TOL:
            raise DataError(
                "relative transform inconsistent with camera poses "
                f"(defect {max(rot_defect, t_defect):.3e})"
            )
        if self.baseline_m() <= 0.0:
            raise DataError("stereo rig has zero baseline")

    def baseline_m(self) -> float:
        return float(np.linalg.norm(self.relative.translation))


# ---------------------------------------------------------------------------
# Rotation helpers
# ---------------------------------------------------------------------------


def skew(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def rotation_from_rodrigues(rvec: np.ndarray) -> np.ndarray:
    """Axis-angle (3,) to rotation matrix via the exponential map."""
    rvec = np.asarray(rvec, dtype=float).reshape(3)
    theta = np.linalg.norm(rvec)
    k = skew(rvec)
    if theta < 1e-12:
        # second-order Taylor expansion, exact to O(theta^3)
        return np.eye(3) + k + 0.5 * (k @ k)
    k /= theta
    return np.eye(3) + math.sin(theta) * k + (1.0 - math.cos(theta)) * (k @ k)


def rotations_from_rodrigues(rvecs: np.ndarray) -> np.ndarray:
    """Vectorized exponential map: (N, 3) axis-angle to (N, 3, 3) rotations."""
    rvecs = np.asarray(rvecs, dtype=float).reshape(-1, 3)
    thetas = np.linalg.norm(rvecs, axis=1)
    out = np.empty((len(rvecs), 3, 3))
    eye = np.eye(3)
    small = thetas < 1e-12
    zeros = np.zeros(len(rvecs))
    kx, ky, kz = rvecs[:, 0], rvecs[:, 1], rvecs[:, 2]
    k = np.stack(
        [
            np.stack([zeros, -kz, ky], axis=1),
            np.stack([kz, zeros, -kx], axis=1),
            np.stack([-ky, kx, zeros], axis=1),
        ],
        axis=1,
    )
    kk = k @ k
    safe = np.where(small, 1.0, thetas)
    a = np.where(small, 1.0, np.sin(safe) / safe)[:, None, None]
    b = np.where(small, 0.5, (1.0 - np.cos(safe)) / safe**2)[:, None, None]
    out[:] = eye + a * k + b * kk
    return out


def rodrigues_from_rotation(r: np.ndarray) -> np.ndarray:
    """Rotation matrix to axis-angle (3,) via the logarithmic map."""
    r = np.asarray(r, dtype=float)
    cos_theta = max(-1.0, min(1.0, (np.trace(r) - 1.0) / 2.0))
    theta = math.acos(cos_theta)
    vee = 0.5 * np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    if theta < 1e-9:
        return vee  # vee = sin(theta) * axis ~= theta * axis
    if theta > math.pi - 1e-6:
        # near pi the skew part vanishes; recover the axis from R + I
        m = (r + np.eye(3)) / 2.0
        i = int(np.argmax(np.diag(m)))
        axis = m[:, i] / math.sqrt(max(m[i, i], 1e-18))
        axis /= np.linalg.norm(axis)
        if np.dot(axis, vee) < 0:
            axis = -axis
        return theta * axis
    return (theta / math.sin(theta)) * vee


def quaternion_from_rotation(r: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) from a rotation matrix."""
    r = np.asarray(r, dtype=float)
    tr = np.trace(r)
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2.0
        w = 0.25 * s
        x = (r[2, 1] - r[1, 2]) / s
        y = (r[0, 2] - r[2, 0]) / s
        z = (r[1, 0] - r[0, 1]) / s
    else:
        i = int(np.argmax(np.diag(r)))
        if i == 0:
            s = math.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2.0
            w = (r[2, 1] - r[1, 2]) / s
            x = 0.25 * s
            y = (r[0, 1] + r[1, 0]) / s
            z = (r[0, 2] + r[2, 0]) / s
        elif i == 1:
            s = math.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2.0
            w = (r[0, 2] - r[2, 0]) / s
            x = (r[0, 1] + r[1, 0]) / s
            y = 0.25 * s
            z = (r[1, 2] + r[2, 1]) / s
        else:
            s = math.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2.0
            w = (r[1, 0] - r[0, 1]) / s
            x = (r[0, 2] + r[2, 0]) / s
            y = (r[1, 2] + r[2, 1]) / s
            z = 0.25 * s
    q = np.array([w, x, y, z])
    return q / np.linalg.norm(q)


def rotation_from_quaternion(q: np.ndarray) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def mean_rotation(rotations) -> np.ndarray:
    """Average of nearby rotations via sign-aligned quaternion mean."""
    quats = [quaternion_from_rotation(r) for r in rotations]
    acc = quats[0].copy()
    for q in quats[1:]:
        acc += q if np.dot(q, quats[0]) >= 0 else -q
    return rotation_from_quaternion(acc / np.linalg.norm(acc))


# ---------------------------------------------------------------------------
# Distortion and projection
# ---------------------------------------------------------------------------


def distort_normalized(xy: np.ndarray, d: DistortionCoefficients) -> np.ndarray:
    """Apply forward Brown-Conrady distortion to normalized coordinates (..., 2)."""
    xy = np.asarray(xy, dtype=float)
    x, y = xy[..., 0], xy[..., 1]
    r2 = x * x + y * y
    radial = 1.0 + r2 * (d.k1 + r2 * (d.k2 + r2 * d.k3))
    xd = x * radial + 2.0 * d.p1 * x * y + d.p2 * (r2 + 2.0 * x * x)
    yd = y * radial + d.p1 * (r2 + 2.0 * y * y) + 2.0 * d.p2 * x * y
    return np.stack([xd, yd], axis=-1)


def project(p: WorldPoint, cam: CameraModel) -> PixelPoint:
    """Project a world point through a camera.

    Raises:
        DegenerateDepth: If the point lies on the camera's principal plane
            (projective depth below 1e-12).
    """
    xc = cam.pose.apply(p.as_array())
    w = xc[2]
    if abs(w) < DEPTH_EPS:
        raise DegenerateDepth(f"projective depth {w!r} below {DEPTH_EPS}")
    xn = xc[:2] / w
    xd = distort_normalized(xn, cam.distortion)
    uv = cam.intrinsics.pixel_from_normalized(xd)
    return PixelPoint(float(uv[0]), float(uv[1]))


def project_many(points: np.ndarray, cam: CameraModel) -> np.ndarray:
    """Vectorized projection of (N, 3) world points to (N, 2) pixels."""
    xc = cam.pose.apply(np.asarray(points, dtype=float))
    w = xc[..., 2]
    if np.any(np.abs(w) < DEPTH_EPS):
        raise DegenerateDepth("at least one point has vanishing projective depth")
    xn = xc[..., :2] / w[..., None]
    return cam.intrinsics.pixel_from_normalized(distort_normalized(xn, cam.distortion))


def undistort_point(
    p: PixelPoint,
    intr: Intrinsics,
    d: DistortionCoefficients,
    max_iter: int = UNDISTORT_MAX_ITER,
) -> PixelPoint:
    """Invert the distortion model by fixed-point iteration.

    Returns the pixel whose distortion-forward image is ``p``. The result is
    verified by re-distorting; a residual of 1e-8 px or more raises
    NonConvergence (extreme coefficients or far off-axis points).
    """
    target = intr.normalized_from_pixel(p.as_array())
    x = target.copy()
    if not d.is_zero():
        converged = False
        for _ in range(max_iter):
            xs, ys = x[0], x[1]
            r2 = xs * xs + ys * ys
            radial = 1.0 + r2 * (d.k1 + r2 * (d.k2 + r2 * d.k3))
            tx = 2.0 * d.p1 * xs * ys + d.p2 * (r2 + 2.0 * xs * xs)
            ty = d.p1 * (r2 + 2.0 * ys * ys) + 2.0 * d.p2 * xs * ys
            if abs(radial) < 1e-12 or not np.isfinite(radial):
                raise NonConvergence("distortion iteration diverged")
            x_new = np.array([(target[0] - tx) / radial, (target[1] - ty) / radial])
            if not np.isfinite(x_new).all():
                raise NonConvergence("distortion iteration diverged")
            step = np.abs(x_new - x).max()
            x = x_new
            if step < UNDISTORT_TOL:
                converged = True
                break
        if not converged:
            raise NonConvergence(f"undistortion did not converge in {max_iter} iterations")
    check = intr.pixel_from_normalized(distort_normalized(x, d))
    residual = float(np.abs(check - p.as_array()).max())
    if residual >= UNDISTORT_RESIDUAL_PX:
        raise NonConvergence(f"undistortion residual {residual:.3e} px")
    uv = intr.pixel_from_normalized(x)
    return PixelPoint(float(uv[0]), float(uv[1]))


def triangulate(
    pL: PixelPoint,
    pR: PixelPoint,
    camL: CameraModel,
    camR: CameraModel,
) -> WorldPoint:
    """Linear (DLT) triangulation from undistorted pixel correspondences.

    The 4x4 homogeneous system is built in normalized camera coordinates for
    conditioning and solved by SVD.

    Raises:
        ParallelRays: If the two smallest singular values coincide within
            1e-12 relative to the largest (coincident or parallel rays).
    """
    rows = []
    for point, cam in ((pL, camL), (pR, camR)):
        xn = cam.intrinsics.normalized_from_pixel(point.as_array())
        rt = np.hstack([cam.pose.rotation, cam.pose.translation.reshape(3, 1)])
        rows.append(xn[0] * rt[2] - rt[0])
        rows.append(xn[1] * rt[2] - rt[1])
    a = np.array(rows)
    _, s, vt = np.linalg.svd(a)
    if s[0] <= 0 or (s[2] - s[3]) / s[0] < 1e-12:
        raise ParallelRays("triangulation system is rank-deficient")
    x = vt[-1]
    if abs(x[3]) < 1e-15 * np.linalg.norm(x[:3]):
        raise ParallelRays("triangulated point at infinity")
    x = x[:3] / x[3]
    return WorldPoint(float(x[0]), float(x[1]), float(x[2]))


def epipolar_gate(pL: PixelPoint, pR: PixelPoint, delta: float) -> bool:
    """True iff two rectified points lie within ``delta`` pixels vertically."""
    return abs(pL.v - pR.v) <= delta


# ---------------------------------------------------------------------------
# JSON serialization
# ---------------------------------------------------------------------------


def camera_to_dict(cam: CameraModel) -> dict:
    return {
        "fx": cam.intrinsics.fx,
        "fy": cam.intrinsics.fy,
        "cx": cam.intrinsics.cx,
        "cy": cam.intrinsics.cy,
        "skew": cam.intrinsics.s,
        "dist": [float(x) for x in cam.distortion.as_array()],
        "rotation": [float(x) for x in cam.pose.rotation.reshape(-1)],
        "translation": [float(x) for x in cam.pose.translation],
    }


def camera_from_dict(data: dict) -> CameraModel:
    try:
        intr = Intrinsics(
            fx=float(data["fx"]),
            fy=float(data["fy"]),
            cx=float(data["cx"]),
            cy=float(data["cy"]),
            s=float(data.get("skew", 0.0)),
        )
        dist = DistortionCoefficients.from_array(data.get("dist", [0.0] * 5))
        pose = RigidTransform(
            np.array(data["rotation"], dtype=float).reshape(3, 3),
            np.array(data["translation"], dtype=float),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise DataError(f"bad camera record: {exc}") from exc
    return CameraModel(intr, dist, pose)


def rig_to_dict(rig: StereoRig) -> dict:
    return {
        "left": camera_to_dict(rig.left),
        "right": camera_to_dict(rig.right),
        "relative": {
            "rotation": [float(x) for x in rig.relative.rotation.reshape(-1)],
            "translation": [float(x) for x in rig.relative.translation],
        },
    }


def rig_from_dict(data: dict) -> StereoRig:
    try:
        left = camera_from_dict(data["left"])
        right = camera_from_dict(data["right"])
        rel = RigidTransform(
            np.array(data["relative"]["rotation"], dtype=float).reshape(3, 3),
            np.array(data["relative"]["translation"], dtype=float),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise DataError(f"bad rig record: {exc}") from exc
    return StereoRig(left, right, rel)
