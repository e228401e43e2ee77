"""Frame-level pairing of left and right detections.

Candidates must satisfy the epipolar gate on rectified box centres (default
five pixels) and have non-negative disparity; the one-to-one matching then
maximizes summed feature cosine similarity.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .assignment import Matching, WeightMatrix, solve_max_weight
from .calibration import RectificationPair, rectify_point
from .errors import DataError, DimensionMismatch, ZeroVector
from .geometry import PixelPoint, StereoRig

logger = logging.getLogger(__name__)

DEFAULT_EPIPOLAR_DELTA_PX = 5.0
DEFAULT_FEATURE_DIM = 2316


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box: top-left corner (x, y) and size (w, h), pixels."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self) -> None:
        if not (self.w > 0 and self.h > 0):
            raise DataError(f"box size must be positive, got w={self.w}, h={self.h}")

    def center(self) -> PixelPoint:
        return PixelPoint(self.x + self.w / 2.0, self.y + self.h / 2.0)

    def as_list(self) -> list[float]:
        return [self.x, self.y, self.w, self.h]


@dataclass(frozen=True, eq=False)
class DetectionRecord:
    """One detected fish: box, confidence, appearance feature, top-5 scores.

    This is the contract with the upstream detection/classification models;
    the feature vector defaults to the classifier's pooled embedding
    (dimension 2316 unless configured otherwise).
    """

    id: int
    box: BoundingBox
    confidence: float
    feature: np.ndarray
    top5: tuple[tuple[int, float], ...] = ()

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise DataError(f"confidence must be in [0, 1], got {self.confidence}")
        feat = np.array(self.feature, dtype=float).reshape(-1)
        if feat.size < 1 or not np.isfinite(feat).all():
            raise DataError("feature must be a non-empty finite vector")
        feat.setflags(write=False)
        object.__setattr__(self, "feature", feat)
        top5 = tuple((int(c), float(s)) for c, s in self.top5)
        if len(top5) > 5:
            raise DataError("top5 may hold at most five entries")
        scores = [s for _, s in top5]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise DataError("top5 scores must be non-increasing")
        object.__setattr__(self, "top5", top5)


@dataclass(frozen=True, eq=False)
class PairedDetection:
    """A matched left/right detection with its feature cosine similarity."""

    left: DetectionRecord
    right: DetectionRecord
    similarity: float


@dataclass(frozen=True, eq=False)
class FramePairing:
    """Per-frame pairing output: matches plus leftover detection ids."""

    pairs: tuple[PairedDetection, ...]
    unpaired_left_ids: tuple[int, ...]
    unpaired_right_ids: tuple[int, ...]
    zero_feature_left_ids: tuple[int, ...] = ()
    zero_feature_right_ids: tuple[int, ...] = ()


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of the angle between two nonzero vectors, clipped to [-1, 1]."""
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    if a.shape != b.shape:
        raise DimensionMismatch(f"dimensions {a.shape[0]} and {b.shape[0]} differ")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cosine similarity undefined for zero vectors")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def _split_zero_features(dets) -> tuple[list, list[int]]:
    usable, degenerate = [], []
    for det in dets:
        if np.linalg.norm(det.feature) == 0.0:
            degenerate.append(det.id)
        else:
            usable.append(det)
    return usable, degenerate


def pair_frame(
    lefts,
    rights,
    rig: StereoRig,
    rect: RectificationPair,
    delta: float = DEFAULT_EPIPOLAR_DELTA_PX,
    require_nonnegative_disparity: bool = True,
) -> FramePairing:
    """Pair one synchronized frame's detections across the two cameras.

    Rectified box centres must lie within ``delta`` pixels vertically (and,
    by default, at non-negative disparity); allowed candidate pairs are
    weighted by feature cosine similarity and resolved by max-weight
    assignment. Detections with zero-norm features are reported unpaired
    rather than failing the frame.
    """
    lefts = list(lefts)
    rights = list(rights)
    use_l, zero_l = _split_zero_features(lefts)
    use_r, zero_r = _split_zero_features(rights)
    if zero_l or zero_r:
        logger.warning(
            "frame pairing: %d left / %d right detections with zero features",
            len(zero_l),
            len(zero_r),
        )

    centers_l = [rectify_point(d.box.center(), rig.left, rect, "left") for d in use_l]
    centers_r = [rectify_point(d.box.center(), rig.right, rect, "right") for d in use_r]

    weights = np.zeros((len(use_l), len(use_r)))
    forbidden = np.ones((len(use_l), len(use_r)), dtype=bool)
    for i, (dl, cl) in enumerate(zip(use_l, centers_l)):
        for j, (dr, cr) in enumerate(zip(use_r, centers_r)):
            if abs(cl.v - cr.v) > delta:
                continue
            if require_nonnegative_disparity and cl.u < cr.u:
                continue
            try:
                weights[i, j] = cosine_similarity(dl.feature, dr.feature)
            except DimensionMismatch:
                continue
            forbidden[i, j] = False

    matching: Matching = solve_max_weight(
        WeightMatrix(len(use_l), len(use_r), weights, forbidden)
    )
    pairs = tuple(
        PairedDetection(use_l[i], use_r[j], float(weights[i, j]))
        for i, j in matching.pairs
    )
    matched_l = {use_l[i].id for i, _ in matching.pairs}
    matched_r = {use_r[j].id for _, j in matching.pairs}
    return FramePairing(
        pairs=pairs,
        unpaired_left_ids=tuple(d.id for d in lefts if d.id not in matched_l),
        unpaired_right_ids=tuple(d.id for d in rights if d.id not in matched_r),
        zero_feature_left_ids=tuple(zero_l),
        zero_feature_right_ids=tuple(zero_r),
    )
