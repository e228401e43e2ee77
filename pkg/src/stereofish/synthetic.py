"""Synthetic ground truth: rigs, checkerboards, ellipsoid fish, and oracles.

Every generator is a pure function of its configuration and seed (numpy
PCG64 via ``default_rng``). Fish bodies are 3D ellipsoids with semi-axes
(length/2, height/2, height/4); their silhouettes project to closed-form
conics, so detections, masks, and expected measurements are all analytic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy import ndimage

from .assignment import Matching, WeightMatrix
from .calibration import (
    CornerObservationSet,
    RectificationPair,
    compute_rectification,
    rectified_cameras,
)
from .errors import DataError, TooLarge
from .geometry import (
    CameraModel,
    DistortionCoefficients,
    Intrinsics,
    PixelPoint,
    RigidTransform,
    StereoRig,
    project_many,
    rotation_from_rodrigues,
)
from .measurement import BinaryMask
from .pairing import BoundingBox, DetectionRecord


@dataclass(frozen=True)
class ScenarioConfig:
    """Knobs of one synthetic stereo scenario.

    ``feature_noise`` is the RMS norm of the Gaussian perturbation added to
    identity features before renormalization. Detection drops never hit the
    first ``drop_protected_frames`` frames so track confirmation windows
    stay well-posed.
    """

    baseline_m: float = 0.8
    image_width: int = 1920
    image_height: int = 1080
    focal_px: float = 1400.0
    cx: float = 960.0
    cy: float = 540.0
    relative_yaw_deg: float = 0.0
    n_fish: int = 3
    n_frames: int = 100
    fork_length_range: tuple[float, float] = (0.3, 0.3)
    height_range: tuple[float, float] = (0.1, 0.1)
    depth_range: tuple[float, float] = (1.0, 3.0)
    placement_radius_m: float = 0.35
    max_tilt_deg: float = 55.0
    corner_noise_px: float = 0.0
    mask_dilation_px: int = 0
    feature_noise: float = 0.0
    detection_drop_probability: float = 0.0
    drop_protected_frames: int = 6
    feature_dim: int = 32
    class_id_base: int = 100
    with_masks: bool = True
    seed: int = 0
    n_boards: int = 25
    board_rows: int = 5
    board_cols: int = 8
    board_pitch_m: float = 0.05

    def __post_init__(self) -> None:
        if not 0.0 <= self.detection_drop_probability <= 1.0:
            raise DataError("detection_drop_probability must be in [0, 1]")
        if self.feature_dim < self.n_fish:
            raise DataError("feature_dim must be >= n_fish for orthogonal identities")
        if self.n_fish < 0 or self.n_frames < 1:
            raise DataError("n_fish must be >= 0 and n_frames >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise DataError(f"unknown scenario config keys: {sorted(unknown)}")
        data = dict(data)
        for key in ("fork_length_range", "height_range", "depth_range"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)


@dataclass(frozen=True, eq=False)
class SyntheticFish:
    """One simulated fish: an oriented ellipsoid on a constant-velocity path."""

    identity: int
    fork_length_m: float
    height_m: float
    start: np.ndarray
    velocity: np.ndarray
    identity_feature: np.ndarray

    def center_at(self, frame: int) -> np.ndarray:
        return self.start + self.velocity * frame

    def axis(self) -> np.ndarray:
        """Unit body axis; along the swim direction, in the image plane."""
        v = self.velocity.copy()
        v[2] = 0.0
        n = np.linalg.norm(v)
        return v / n if n > 1e-12 else np.array([1.0, 0.0, 0.0])

    def semi_axes(self) -> tuple[float, float, float]:
        return self.fork_length_m / 2.0, self.height_m / 2.0, self.height_m / 4.0


@dataclass(frozen=True, eq=False)
class FrameTruth:
    """Rendered detections, masks, and ground-truth tables for one frame."""

    frame: int
    left_detections: tuple[DetectionRecord, ...]
    right_detections: tuple[DetectionRecord, ...]
    left_masks: dict
    right_masks: dict
    left_identity_of_det: dict
    right_identity_of_det: dict
    gt_pairs: tuple[tuple[int, int, int], ...]  # (left id, right id, identity)


@dataclass(frozen=True, eq=False)
class ScenarioData:
    """A complete generated scenario."""

    config: ScenarioConfig
    rig: StereoRig
    rect: RectificationPair
    fish: tuple[SyntheticFish, ...]
    frames: tuple[FrameTruth, ...]

    def class_of_identity(self, identity: int) -> int:
        return self.config.class_id_base + identity


def fish_class_id(cfg: ScenarioConfig, identity: int) -> int:
    return cfg.class_id_base + identity


def make_rig(cfg: ScenarioConfig) -> StereoRig:
    """Zero-distortion rig with the configured baseline and optional yaw."""
    intr = Intrinsics(cfg.focal_px, cfg.focal_px, cfg.cx, cfg.cy, 0.0)
    zero = DistortionCoefficients()
    left = CameraModel(intr, zero, RigidTransform.identity())
    yaw = math.radians(cfg.relative_yaw_deg)
    r_rel = rotation_from_rodrigues(np.array([0.0, yaw, 0.0]))
    center = np.array([cfg.baseline_m, 0.0, 0.0])
    relative = RigidTransform(r_rel, -r_rel @ center)
    right = CameraModel(intr, zero, relative)
    return StereoRig(left, right, relative)


# ---------------------------------------------------------------------------
# Ellipsoid projection
# ---------------------------------------------------------------------------


def _ellipsoid_quadric(fish: SyntheticFish, frame: int) -> np.ndarray:
    """Homogeneous 4x4 quadric of the fish body at one frame."""
    a1, a2, a3 = fish.semi_axes()
    e1 = fish.axis()
    e2 = np.array([-e1[1], e1[0], 0.0])  # in-plane normal: the height axis
    e3 = np.cross(e1, e2)
    shape = (
        np.outer(e1, e1) / a1**2
        + np.outer(e2, e2) / a2**2
        + np.outer(e3, e3) / a3**2
    )
    c = fish.center_at(frame)
    q = np.empty((4, 4))
    q[:3, :3] = shape
    q[:3, 3] = -shape @ c
    q[3, :3] = -shape @ c
    q[3, 3] = c @ shape @ c - 1.0
    return q


def ellipsoid_outline(
    fish: SyntheticFish, frame: int, cam: CameraModel
) -> tuple[np.ndarray, tuple[float, float, float, float]] | None:
    """Silhouette conic and its axis-aligned pixel bounds in one camera.

    Returns (conic, (umin, vmin, umax, vmax)) with the 3x3 point conic
    normalized so the interior is negative, or None when the fish is behind
    the camera or its outline is degenerate. Requires a distortion-free
    camera (conics do not survive lens distortion).
    """
    if not cam.distortion.is_zero():
        raise DataError("ellipsoid outlines require a distortion-free camera")
    center_cam = cam.pose.apply(fish.center_at(frame))
    if center_cam[2] <= max(fish.semi_axes()):
        return None
    p = cam.projection_matrix()
    dual = p @ np.linalg.inv(_ellipsoid_quadric(fish, frame)) @ p.T
    du = dual[0, 2] ** 2 - dual[0, 0] * dual[2, 2]
    dv = dual[1, 2] ** 2 - dual[1, 1] * dual[2, 2]
    if du <= 0 or dv <= 0 or abs(dual[2, 2]) < 1e-15:
        return None
    umin = (dual[0, 2] + math.sqrt(du)) / dual[2, 2]
    umax = (dual[0, 2] - math.sqrt(du)) / dual[2, 2]
    vmin = (dual[1, 2] + math.sqrt(dv)) / dual[2, 2]
    vmax = (dual[1, 2] - math.sqrt(dv)) / dual[2, 2]
    umin, umax = min(umin, umax), max(umin, umax)
    vmin, vmax = min(vmin, vmax), max(vmin, vmax)
    conic = np.linalg.inv(dual)
    conic /= np.linalg.norm(conic)
    center_px = p @ np.append(fish.center_at(frame), 1.0)
    center_px /= center_px[2]
    if center_px @ conic @ center_px > 0:
        conic = -conic
    return conic, (umin, vmin, umax, vmax)


def rasterize_outline(
    conic: np.ndarray,
    bounds: tuple[float, float, float, float],
    image_size: tuple[int, int],
    dilation_px: int = 0,
) -> BinaryMask | None:
    """Rasterize a silhouette conic to a mask on the integer pixel grid.

    A pixel is foreground when the conic form at its integer coordinates is
    non-positive. ``image_size`` is (width, height); pixels outside the
    image are clipped. Optional binary dilation models sloppy segmentation.
    """
    width, height = image_size
    umin, vmin, umax, vmax = bounds
    pad = 1 + dilation_px
    u0 = max(int(math.floor(umin)) - pad, 0)
    v0 = max(int(math.floor(vmin)) - pad, 0)
    u1 = min(int(math.ceil(umax)) + pad, width - 1)
    v1 = min(int(math.ceil(vmax)) + pad, height - 1)
    if u0 > u1 or v0 > v1:
        return None
    uu, vv = np.meshgrid(np.arange(u0, u1 + 1), np.arange(v0, v1 + 1))
    vals = (
        conic[0, 0] * uu * uu
        + 2.0 * conic[0, 1] * uu * vv
        + conic[1, 1] * vv * vv
        + 2.0 * conic[0, 2] * uu
        + 2.0 * conic[1, 2] * vv
        + conic[2, 2]
    )
    bits = vals <= 0.0
    if dilation_px > 0:
        bits = ndimage.binary_dilation(bits, iterations=dilation_px)
    if not bits.any():
        return None
    rows = np.flatnonzero(bits.any(axis=1))
    cols = np.flatnonzero(bits.any(axis=0))
    bits = bits[rows[0] : rows[-1] + 1, cols[0] : cols[-1] + 1]
    return BinaryMask(bits, PixelPoint(float(u0 + cols[0]), float(v0 + rows[0])))


# ---------------------------------------------------------------------------
# Fish scenarios
# ---------------------------------------------------------------------------


def _identity_features(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    """Mutually orthogonal unit feature vectors, one per identity."""
    basis, _ = np.linalg.qr(rng.standard_normal((dim, max(n, 1))))
    return basis.T[:n]


def _visible_center_bounds(
    cfg: ScenarioConfig, z: float, half_u: float, half_v: float
) -> tuple[float, float, float, float] | None:
    """World x/y bounds keeping a fish inside both images and the survey volume.

    The working volume is additionally capped at ``placement_radius_m``
    lateral offset, mirroring a transect-style recording setup.
    """
    f = cfg.focal_px
    margin = 4.0
    disparity = f * cfg.baseline_m / z
    u_lo = disparity + half_u + margin
    u_hi = cfg.image_width - 1 - half_u - margin
    v_lo = half_v + margin
    v_hi = cfg.image_height - 1 - half_v - margin
    if u_lo >= u_hi or v_lo >= v_hi:
        return None
    radius = cfg.placement_radius_m
    x_lo = max((u_lo - cfg.cx) * z / f, -radius)
    x_hi = min((u_hi - cfg.cx) * z / f, radius)
    y_lo = max((v_lo - cfg.cy) * z / f, -radius)
    y_hi = min((v_hi - cfg.cy) * z / f, radius)
    if x_lo >= x_hi or y_lo >= y_hi:
        return None
    return x_lo, x_hi, y_lo, y_hi


def sample_fish(cfg: ScenarioConfig, rng: np.random.Generator) -> tuple[SyntheticFish, ...]:
    """Sample fish with in-frustum constant-velocity paths and orthogonal ids.

    Start and end points are drawn at a common per-fish depth inside the
    stereo-visible working volume, so the whole linear path is visible to
    both cameras. Bodies swim in the image plane, tilted at most
    ``max_tilt_deg`` from horizontal (fish hold a roughly level posture).
    """
    features = _identity_features(rng, cfg.n_fish, cfg.feature_dim)
    fish = []
    for identity in range(cfg.n_fish):
        fork = float(rng.uniform(*cfg.fork_length_range))
        height = float(rng.uniform(*cfg.height_range))
        for _ in range(500):
            z = float(rng.uniform(*cfg.depth_range))
            half_u = cfg.focal_px * fork / z * 0.55
            half_v = cfg.focal_px * max(height, fork * 0.4) / z * 0.55
            bounds = _visible_center_bounds(cfg, z, half_u, half_v)
            if bounds is None:
                continue
            x_lo, x_hi, y_lo, y_hi = bounds
            start = np.array([rng.uniform(x_lo, x_hi), rng.uniform(y_lo, y_hi), z])
            end = np.array([rng.uniform(x_lo, x_hi), rng.uniform(y_lo, y_hi), z])
            swim = end[:2] - start[:2]
            if np.linalg.norm(swim) <= fork * 0.5:
                continue
            tilt = math.degrees(math.atan2(abs(swim[1]), abs(swim[0])))
            if tilt <= cfg.max_tilt_deg:
                break
        else:
            raise DataError("could not place a visible fish path")
        velocity = (end - start) / max(cfg.n_frames - 1, 1)
        fish.append(
            SyntheticFish(
                identity=identity,
                fork_length_m=fork,
                height_m=height,
                start=start,
                velocity=velocity,
                identity_feature=features[identity],
            )
        )
    return tuple(fish)


def _noisy_feature(
    identity_feature: np.ndarray, rng: np.random.Generator, noise: float
) -> np.ndarray:
    if noise <= 0:
        return identity_feature.copy()
    dim = identity_feature.size
    perturbed = identity_feature + rng.normal(0.0, noise / math.sqrt(dim), dim)
    norm = np.linalg.norm(perturbed)
    return perturbed / norm if norm > 0 else identity_feature.copy()


def _top5_for(cfg: ScenarioConfig, identity: int, rng: np.random.Generator):
    true_class = fish_class_id(cfg, identity)
    score = float(rng.uniform(0.55, 0.95))
    entries = [(true_class, score)]
    distractors = rng.choice(np.arange(5000, 6000), size=4, replace=False)
    for d in distractors:
        score *= float(rng.uniform(0.3, 0.8))
        entries.append((int(d), score))
    return tuple(entries)


def render_fish_frame(
    fish_list,
    frame: int,
    rig: StereoRig,
    rect: RectificationPair | None = None,
    rng: np.random.Generator | None = None,
    cfg: ScenarioConfig | None = None,
) -> FrameTruth:
    """Render one frame: detections through the actual cameras, masks through
    the rectified views, plus ground-truth identity/pairing tables.

    Detection order (hence ids) is shuffled per camera so pairing cannot rely
    on index alignment. Drops, feature noise, and score noise consume ``rng``.
    """
    cfg = cfg if cfg is not None else ScenarioConfig()
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    rect = rect if rect is not None else compute_rectification(rig)
    cam_rect_l, cam_rect_r = rectified_cameras(rig, rect)
    image_size = (cfg.image_width, cfg.image_height)

    sides = {
        "left": (rig.left, cam_rect_l),
        "right": (rig.right, cam_rect_r),
    }
    dets = {"left": [], "right": []}
    masks = {"left": {}, "right": {}}
    identity_of = {"left": {}, "right": {}}
    seen = {"left": {}, "right": {}}

    for fish in fish_list:
        for side, (cam, cam_rect) in sides.items():
            outline = ellipsoid_outline(fish, frame, cam)
            if outline is None:
                continue
            conic, (umin, vmin, umax, vmax) = outline
            if (
                umin < 0
                or vmin < 0
                or umax > cfg.image_width - 1
                or vmax > cfg.image_height - 1
            ):
                continue  # partially outside: treat as undetected
            dropped = (
                cfg.detection_drop_probability > 0
                and frame >= cfg.drop_protected_frames
                and rng.uniform() < cfg.detection_drop_probability
            )
            if dropped:
                continue
            feature = _noisy_feature(fish.identity_feature, rng, cfg.feature_noise)
            box = BoundingBox(umin, vmin, umax - umin, vmax - vmin)
            confidence = float(rng.uniform(0.7, 0.99))
            top5 = _top5_for(cfg, fish.identity, rng)
            mask = None
            if cfg.with_masks:
                rect_outline = ellipsoid_outline(fish, frame, cam_rect)
                if rect_outline is not None:
                    mask = rasterize_outline(
                        rect_outline[0],
                        rect_outline[1],
                        image_size,
                        cfg.mask_dilation_px,
                    )
            seen[side][fish.identity] = (box, confidence, feature, top5, mask)

    for side in ("left", "right"):
        identities = sorted(seen[side])
        order = rng.permutation(len(identities)) if identities else []
        for det_id, slot in enumerate(order):
            identity = identities[int(slot)]
            box, confidence, feature, top5, mask = seen[side][identity]
            dets[side].append(
                DetectionRecord(
                    id=det_id,
                    box=box,
                    confidence=confidence,
                    feature=feature,
                    top5=top5,
                )
            )
            identity_of[side][det_id] = identity
            if mask is not None:
                masks[side][det_id] = mask

    left_of_identity = {v: k for k, v in identity_of["left"].items()}
    right_of_identity = {v: k for k, v in identity_of["right"].items()}
    gt_pairs = tuple(
        (left_of_identity[i], right_of_identity[i], i)
        for i in sorted(set(left_of_identity) & set(right_of_identity))
    )
    return FrameTruth(
        frame=frame,
        left_detections=tuple(dets["left"]),
        right_detections=tuple(dets["right"]),
        left_masks=masks["left"],
        right_masks=masks["right"],
        left_identity_of_det=identity_of["left"],
        right_identity_of_det=identity_of["right"],
        gt_pairs=gt_pairs,
    )


def generate_scenario(cfg: ScenarioConfig) -> ScenarioData:
    """Generate a full multi-frame scenario from a config and its seed."""
    rng = np.random.default_rng(cfg.seed)
    rig = make_rig(cfg)
    rect = compute_rectification(rig)
    fish = sample_fish(cfg, rng)
    frames = tuple(
        render_fish_frame(fish, frame, rig, rect, rng, cfg)
        for frame in range(cfg.n_frames)
    )
    return ScenarioData(config=cfg, rig=rig, rect=rect, fish=fish, frames=frames)


# ---------------------------------------------------------------------------
# Checkerboard calibration scenarios
# ---------------------------------------------------------------------------


def _calibration_rig(cfg: ScenarioConfig) -> StereoRig:
    """A deliberately asymmetric ground-truth rig for calibration tests."""
    intr_l = Intrinsics(cfg.focal_px, cfg.focal_px * 0.995, cfg.cx - 5.0, cfg.cy + 6.0, 0.0)
    intr_r = Intrinsics(cfg.focal_px * 1.006, cfg.focal_px * 1.002, cfg.cx + 3.0, cfg.cy - 6.0, 0.0)
    dist_l = DistortionCoefficients(k1=-0.06, k2=0.015, p1=0.0005, p2=-0.0004)
    dist_r = DistortionCoefficients(k1=-0.05, k2=0.01, p1=-0.0003, p2=0.0005)
    r_rel = rotation_from_rodrigues(np.radians([0.5, 2.5, 0.3]))
    center = np.array([cfg.baseline_m, 0.0, 0.0])
    relative = RigidTransform(r_rel, -r_rel @ center)
    left = CameraModel(intr_l, dist_l, RigidTransform.identity())
    right = CameraModel(intr_r, dist_r, relative)
    return StereoRig(left, right, relative)


def board_grid(cfg: ScenarioConfig) -> np.ndarray:
    """(rows*cols, 3) planar inner-corner coordinates, z = 0, centred."""
    jj, ii = np.meshgrid(np.arange(cfg.board_cols), np.arange(cfg.board_rows))
    pts = np.column_stack(
        [
            jj.ravel() * cfg.board_pitch_m,
            ii.ravel() * cfg.board_pitch_m,
            np.zeros(cfg.board_rows * cfg.board_cols),
        ]
    )
    pts[:, :2] -= pts[:, :2].mean(axis=0)
    return pts


def generate_checkerboard_observations(
    cfg: ScenarioConfig,
    degenerate: bool = False,
) -> tuple[list[CornerObservationSet], StereoRig]:
    """Checkerboard corner observations through a ground-truth rig.

    Board poses are sampled in the 1-3 m working volume with varied
    orientation; corners are projected through both (distorted) cameras and
    perturbed by ``cfg.corner_noise_px`` Gaussian noise. With ``degenerate``
    all boards share one orientation and depth, which leaves the closed-form
    intrinsics stage ill-conditioned.
    """
    rng = np.random.default_rng(cfg.seed)
    rig = _calibration_rig(cfg)
    grid = board_grid(cfg)
    margin = 20.0
    observations = []
    frame_id = 0
    while len(observations) < cfg.n_boards:
        for _ in range(300):
            if degenerate:
                rotation = np.eye(3)
                z = 2.0
            else:
                axis = rng.standard_normal(3)
                axis /= np.linalg.norm(axis)
                rotation = rotation_from_rodrigues(axis * rng.uniform(0.12, 0.55))
                z = rng.uniform(1.0, 3.0)
            u = rng.uniform(0.3 * cfg.image_width, 0.7 * cfg.image_width)
            v = rng.uniform(0.3 * cfg.image_height, 0.7 * cfg.image_height)
            center = np.array(
                [
                    (u - cfg.cx) * z / cfg.focal_px,
                    (v - cfg.cy) * z / cfg.focal_px,
                    z,
                ]
            )
            world = grid @ rotation.T + center
            try:
                px_l = project_many(world, rig.left)
                px_r = project_many(world, rig.right)
            except Exception:
                continue
            ok = True
            for px in (px_l, px_r):
                if (
                    px[:, 0].min() < margin
                    or px[:, 0].max() > cfg.image_width - margin
                    or px[:, 1].min() < margin
                    or px[:, 1].max() > cfg.image_height - margin
                ):
                    ok = False
                    break
            if not ok:
                continue
            if cfg.corner_noise_px > 0:
                px_l = px_l + rng.normal(0.0, cfg.corner_noise_px, px_l.shape)
                px_r = px_r + rng.normal(0.0, cfg.corner_noise_px, px_r.shape)
            observations.append(
                CornerObservationSet(
                    frame_id=frame_id,
                    board_points=grid,
                    image_points_left=px_l,
                    image_points_right=px_r,
                )
            )
            frame_id += 1
            break
        else:
            raise DataError("could not place a visible checkerboard")
    return observations, rig


# ---------------------------------------------------------------------------
# Assignment oracle
# ---------------------------------------------------------------------------

BRUTE_FORCE_LIMIT = 8


def brute_force_assignment(m: WeightMatrix) -> Matching:
    """Exhaustive optimum over all row-to-column injections.

    Independent oracle for the assignment solver: maximizes cardinality,
    then weight, then picks the lexicographically smallest pair list, by
    enumerating subsets with memoization.

    Raises:
        TooLarge: More than 8 rows or columns.
    """
    if max(m.rows, m.cols) > BRUTE_FORCE_LIMIT:
        raise TooLarge(f"brute force limited to {BRUTE_FORCE_LIMIT}, got {m.rows}x{m.cols}")
    if m.rows == 0 or m.cols == 0:
        return Matching((), 0.0)

    allowed = ~m.forbidden
    memo: dict[tuple[int, int], tuple[int, float]] = {}

    def value(row: int, used: int) -> tuple[int, float]:
        """Best (cardinality, weight) achievable from this row downward."""
        if row == m.rows:
            return (0, 0.0)
        key = (row, used)
        if key in memo:
            return memo[key]
        best = value(row + 1, used)
        for col in range(m.cols):
            bit = 1 << col
            if used & bit or not allowed[row, col]:
                continue
            card, weight = value(row + 1, used | bit)
            cand = (card + 1, m.weights[row, col] + weight)
            if cand > best:
                best = cand
        memo[key] = best
        return best

    pairs: list[tuple[int, int]] = []
    used = 0
    total = value(0, 0)
    for row in range(m.rows):
        # compare candidate tuples against the memoized optimum of this state;
        # both sides are the exact floats the DP maximized over
        cur = value(row, used)
        for col in range(m.cols):
            bit = 1 << col
            if used & bit or not allowed[row, col]:
                continue
            card, weight = value(row + 1, used | bit)
            if (card + 1, m.weights[row, col] + weight) == cur:
                pairs.append((row, col))
                used |= bit
                break
    return Matching(tuple(pairs), float(total[1]))
