"""Per-camera multi-object tracking.

Constant-velocity Kalman filtering on (center-u, center-v, aspect, height),
Mahalanobis gating, an appearance gallery scored by cosine distance, a
recency-ordered matching cascade, and a tentative/confirmed/deleted track
lifecycle. One tracker instance is a sequential state machine per camera;
instances are independent and may run concurrently.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .assignment import WeightMatrix, solve_max_weight
from .errors import DataError, OutOfOrderFrame, SingularInnovation
from .pairing import BoundingBox, DetectionRecord

# 0.95 chi-square quantile at 4 degrees of freedom (measurement dimension).
CHI2_GATE_095_4DOF = 9.4877

TENTATIVE = "tentative"
CONFIRMED = "confirmed"
DELETED = "deleted"


@dataclass(frozen=True)
class TrackerConfig:
    """Tracker tunables. The confirmation span of 3 consecutive matched
    frames reproduces the three inter-frame overlap checks of the lifecycle
    rule; the remaining defaults are conventional operating points."""

    iou_confirm_threshold: float = 0.3
    confirm_frames: int = 3
    mahalanobis_gate: float = CHI2_GATE_095_4DOF
    motion_lambda: float = 0.0
    max_age: int = 30
    appearance_gate: float = 0.4
    gallery_size: int = 100
    std_weight_position: float = 1.0 / 20.0
    std_weight_velocity: float = 1.0 / 160.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.iou_confirm_threshold <= 1.0:
            raise DataError("iou_confirm_threshold must be in [0, 1]")
        if not 0.0 <= self.motion_lambda <= 1.0:
            raise DataError("motion_lambda must be in [0, 1]")
        if self.confirm_frames < 1 or self.max_age < 1 or self.gallery_size < 1:
            raise DataError("confirm_frames, max_age, gallery_size must be >= 1")
        if self.mahalanobis_gate <= 0 or self.appearance_gate < 0:
            raise DataError("gates must be positive")

    def to_dict(self) -> dict:
        return {
            "iou_confirm_threshold": self.iou_confirm_threshold,
            "confirm_frames": self.confirm_frames,
            "mahalanobis_gate": self.mahalanobis_gate,
            "motion_lambda": self.motion_lambda,
            "max_age": self.max_age,
            "appearance_gate": self.appearance_gate,
            "gallery_size": self.gallery_size,
            "std_weight_position": self.std_weight_position,
            "std_weight_velocity": self.std_weight_velocity,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrackerConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise DataError(f"unknown tracker config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True, eq=False)
class KalmanState:
    """8-dim state (u, v, aspect, h, and velocities) with its covariance."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self) -> None:
        mean = np.array(self.mean, dtype=float).reshape(8)
        cov = np.array(self.covariance, dtype=float).reshape(8, 8)
        if np.abs(cov - cov.T).max() > 1e-9:
            raise DataError("covariance must be symmetric")
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    def box(self) -> BoundingBox:
        u, v, aspect, h = self.mean[:4]
        w = max(aspect * h, 1e-9)
        h = max(h, 1e-9)
        return BoundingBox(u - w / 2.0, v - h / 2.0, w, h)


def observation_from_box(box: BoundingBox) -> np.ndarray:
    """(center-u, center-v, aspect w/h, height) measurement vector."""
    return np.array(
        [box.x + box.w / 2.0, box.y + box.h / 2.0, box.w / box.h, box.h]
    )


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection-over-union of two boxes, in [0, 1]."""
    ix = max(0.0, min(a.x + a.w, b.x + b.w) - max(a.x, b.x))
    iy = max(0.0, min(a.y + a.h, b.y + b.h) - max(a.y, b.y))
    inter = ix * iy
    union = a.w * a.h + b.w * b.h - inter
    return inter / union if union > 0 else 0.0


# ---------------------------------------------------------------------------
# Kalman filter
# ---------------------------------------------------------------------------

# relative noise scales for the aspect-ratio component (dimensionless)
_ASPECT_PROCESS_STD = 1e-2
_ASPECT_OBSERVATION_STD = 1e-1


def _process_std(h: float, cfg: TrackerConfig) -> np.ndarray:
    swp, swv = cfg.std_weight_position, cfg.std_weight_velocity
    return np.array(
        [
            swp * h,
            swp * h,
            _ASPECT_PROCESS_STD,
            swp * h,
            swv * h,
            swv * h,
            1e-5,
            swv * h,
        ]
    )


def _observation_std(h: float, cfg: TrackerConfig) -> np.ndarray:
    swp = cfg.std_weight_position
    return np.array([swp * h, swp * h, _ASPECT_OBSERVATION_STD, swp * h])


def kalman_initiate(obs: np.ndarray, cfg: TrackerConfig = TrackerConfig()) -> KalmanState:
    """New track state from an unmatched observation, zero velocity prior."""
    obs = np.asarray(obs, dtype=float).reshape(4)
    if obs[3] <= 0:
        raise DataError("observation height must be positive")
    mean = np.concatenate([obs, np.zeros(4)])
    std = _process_std(obs[3], cfg)
    std = np.concatenate([2.0 * std[:4], 10.0 * std[4:]])
    return KalmanState(mean, np.diag(std**2))


def kalman_predict(
    state: KalmanState,
    dt: float = 1.0,
    cfg: TrackerConfig = TrackerConfig(),
) -> KalmanState:
    """Constant-velocity prediction: mean -> F mean, covariance -> FPF' + Q."""
    f = np.eye(8)
    f[:4, 4:] = dt * np.eye(4)
    std = _process_std(max(state.mean[3], 1e-9), cfg)
    q = np.diag(std**2)
    mean = f @ state.mean
    cov = f @ state.covariance @ f.T + q
    return KalmanState(mean, (cov + cov.T) / 2.0)


def _project(state: KalmanState, cfg: TrackerConfig) -> tuple[np.ndarray, np.ndarray]:
    """State projected into measurement space: (mean4, innovation cov 4x4)."""
    std = _observation_std(max(state.mean[3], 1e-9), cfg)
    s = state.covariance[:4, :4] + np.diag(std**2)
    return state.mean[:4].copy(), s


def kalman_update(
    state: KalmanState,
    obs: np.ndarray,
    cfg: TrackerConfig = TrackerConfig(),
) -> KalmanState:
    """Standard Kalman measurement update with direct (u, v, aspect, h) obs.

    Raises:
        SingularInnovation: The innovation covariance is not invertible.
    """
    obs = np.asarray(obs, dtype=float).reshape(4)
    if obs[3] <= 0:
        raise DataError("observation height must be positive")
    projected_mean, s = _project(state, cfg)
    try:
        chol = np.linalg.cholesky(s)
    except np.linalg.LinAlgError as exc:
        raise SingularInnovation("innovation covariance not positive-definite") from exc
    # gain K = P H' S^-1 with H = [I4 | 0]
    pht = state.covariance[:, :4]
    gain = np.linalg.solve(
        chol.T, np.linalg.solve(chol, pht.T)
    ).T
    mean = state.mean + gain @ (obs - projected_mean)
    cov = state.covariance - gain @ pht.T
    cov = (cov + cov.T) / 2.0
    mean = mean.copy()
    mean[3] = max(mean[3], 1e-9)  # keep height positive after update
    mean[2] = max(mean[2], 1e-9)
    return KalmanState(mean, cov)


def squared_mahalanobis(
    state: KalmanState,
    observations: np.ndarray,
    cfg: TrackerConfig = TrackerConfig(),
) -> np.ndarray:
    """Squared Mahalanobis distance of each (N, 4) observation to the state."""
    observations = np.atleast_2d(np.asarray(observations, dtype=float))
    projected_mean, s = _project(state, cfg)
    try:
        chol = np.linalg.cholesky(s)
    except np.linalg.LinAlgError as exc:
        raise SingularInnovation("innovation covariance not positive-definite") from exc
    diff = observations - projected_mean
    z = np.linalg.solve(chol, diff.T)
    return np.sum(z * z, axis=0)


# ---------------------------------------------------------------------------
# Tracks
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TrackFrameRecord:
    """One track's public record for one frame."""

    frame: int
    track_id: int
    stage: str
    box: BoundingBox
    top5: tuple[tuple[int, float], ...] | None
    time_since_update: int
    det_id: int | None


@dataclass(eq=False)
class TrackHypothesis:
    """Mutable per-track state owned by a Tracker instance."""

    track_id: int
    state: KalmanState
    stage: str = TENTATIVE
    hits: int = 1
    time_since_update: int = 0
    consecutive_matches: int = 0
    gallery: deque = field(default_factory=deque)
    last_box: BoundingBox | None = None
    history: list[TrackFrameRecord] = field(default_factory=list)

    def appearance_distance(self, feature: np.ndarray) -> float:
        """Smallest cosine distance between the feature and the gallery."""
        norm = np.linalg.norm(feature)
        if norm == 0.0 or not self.gallery:
            return float("inf")
        f = feature / norm
        best = min(float(1.0 - g @ f) for g in self.gallery)
        return max(best, 0.0)


def gating_and_costs(
    tracks,
    detections,
    cfg: TrackerConfig = TrackerConfig(),
) -> WeightMatrix:
    """Combined cost matrix with gate-forbidden cells.

    cost = lambda * d_mahalanobis^2 + (1 - lambda) * d_appearance, where the
    appearance distance is the minimum cosine distance over the track's
    gallery. Cells beyond the chi-square motion gate or the appearance gate
    are forbidden.
    """
    tracks = list(tracks)
    detections = list(detections)
    costs = np.zeros((len(tracks), len(detections)))
    forbidden = np.zeros((len(tracks), len(detections)), dtype=bool)
    if not tracks or not detections:
        return WeightMatrix(len(tracks), len(detections), costs, forbidden)
    obs = np.stack([observation_from_box(d.box) for d in detections])
    for i, track in enumerate(tracks):
        d2 = squared_mahalanobis(track.state, obs, cfg)
        d_app = np.array([track.appearance_distance(d.feature) for d in detections])
        gated = (d2 > cfg.mahalanobis_gate) | (d_app > cfg.appearance_gate)
        d_app_safe = np.where(np.isfinite(d_app), d_app, 0.0)
        cost = cfg.motion_lambda * d2 + (1.0 - cfg.motion_lambda) * d_app_safe
        costs[i] = np.where(gated, 0.0, cost)
        forbidden[i] = gated
    return WeightMatrix(len(tracks), len(detections), costs, forbidden)


def matching_cascade(
    tracks,
    detections,
    cfg: TrackerConfig = TrackerConfig(),
) -> tuple[list[tuple[int, int]], list[int], list[int]]:
    """Two-stage association: recency cascade, then IoU for the rest.

    Confirmed tracks are matched age group by age group (most recently
    updated first) by minimum combined cost; all still-unmatched tracks then
    compete for leftover detections by IoU at the confirmation threshold.

    Returns (matches, unmatched_track_indices, unmatched_detection_indices),
    matches as (track_index, detection_index).
    """
    tracks = list(tracks)
    detections = list(detections)
    matches: list[tuple[int, int]] = []
    free_dets = list(range(len(detections)))

    confirmed = [i for i, t in enumerate(tracks) if t.stage == CONFIRMED]
    for age in range(cfg.max_age + 1):
        if not free_dets:
            break
        group = [i for i in confirmed if tracks[i].time_since_update == age]
        if not group:
            continue
        cost = gating_and_costs(
            [tracks[i] for i in group], [detections[j] for j in free_dets], cfg
        )
        matching = solve_max_weight(
            WeightMatrix(cost.rows, cost.cols, -cost.weights, cost.forbidden)
        )
        claimed = []
        for gi, dj in matching.pairs:
            matches.append((group[gi], free_dets[dj]))
            claimed.append(free_dets[dj])
        for j in claimed:
            free_dets.remove(j)

    matched_tracks = {i for i, _ in matches}
    remaining = [i for i in range(len(tracks)) if i not in matched_tracks]
    if remaining and free_dets:
        weights = np.zeros((len(remaining), len(free_dets)))
        forbidden = np.zeros_like(weights, dtype=bool)
        for a, ti in enumerate(remaining):
            box = tracks[ti].state.box()
            for b, dj in enumerate(free_dets):
                overlap = iou(box, detections[dj].box)
                weights[a, b] = overlap
                forbidden[a, b] = overlap < cfg.iou_confirm_threshold
        matching = solve_max_weight(
            WeightMatrix(len(remaining), len(free_dets), weights, forbidden)
        )
        claimed = []
        for a, b in matching.pairs:
            matches.append((remaining[a], free_dets[b]))
            claimed.append(free_dets[b])
        for j in claimed:
            free_dets.remove(j)

    matched_tracks = {i for i, _ in matches}
    unmatched_tracks = [i for i in range(len(tracks)) if i not in matched_tracks]
    return matches, unmatched_tracks, free_dets


@dataclass(frozen=True, eq=False)
class StepResult:
    """Outcome of one tracker step."""

    frame: int
    records: tuple[TrackFrameRecord, ...]
    assignments: dict  # det_id -> track_id


class Tracker:
    """Sequential multi-object tracker for one camera.

    ``step`` must be called with strictly increasing frame indices by one
    thread at a time; all emitted records are immutable values.
    """

    def __init__(self, cfg: TrackerConfig = TrackerConfig()) -> None:
        self.cfg = cfg
        self.tracks: list[TrackHypothesis] = []
        self.finished: list[TrackHypothesis] = []
        self._next_id = 1
        self._last_frame: int | None = None

    def step(self, frame: int, detections) -> StepResult:
        """Advance the tracker by one frame of detections.

        Raises:
            OutOfOrderFrame: ``frame`` does not exceed the previous one.
        """
        detections = list(detections)
        if self._last_frame is not None and frame <= self._last_frame:
            raise OutOfOrderFrame(f"frame {frame} after frame {self._last_frame}")
        gap = 1 if self._last_frame is None else frame - self._last_frame
        for track in self.tracks:
            for _ in range(gap):
                track.state = kalman_predict(track.state, 1.0, self.cfg)

        matches, unmatched_tracks, unmatched_dets = matching_cascade(
            self.tracks, detections, self.cfg
        )

        assignments: dict[int, int] = {}
        for ti, dj in matches:
            track = self.tracks[ti]
            det = detections[dj]
            track.state = kalman_update(
                track.state, observation_from_box(det.box), self.cfg
            )
            norm = np.linalg.norm(det.feature)
            if norm > 0.0:
                track.gallery.append(det.feature / norm)
                while len(track.gallery) > self.cfg.gallery_size:
                    track.gallery.popleft()
            track.hits += 1
            track.time_since_update = 0
            track.consecutive_matches += 1
            track.last_box = det.box
            if (
                track.stage == TENTATIVE
                and track.consecutive_matches >= self.cfg.confirm_frames
            ):
                track.stage = CONFIRMED
            track.history.append(
                TrackFrameRecord(
                    frame=frame,
                    track_id=track.track_id,
                    stage=track.stage,
                    box=det.box,
                    top5=det.top5,
                    time_since_update=0,
                    det_id=det.id,
                )
            )
            assignments[det.id] = track.track_id

        for ti in unmatched_tracks:
            track = self.tracks[ti]
            if track.stage == TENTATIVE:
                track.stage = DELETED
                continue
            track.time_since_update += 1
            track.consecutive_matches = 0
            if track.time_since_update > self.cfg.max_age:
                track.stage = DELETED
                continue
            track.history.append(
                TrackFrameRecord(
                    frame=frame,
                    track_id=track.track_id,
                    stage=track.stage,
                    box=track.state.box(),
                    top5=None,
                    time_since_update=track.time_since_update,
                    det_id=None,
                )
            )

        for dj in unmatched_dets:
            det = detections[dj]
            track = TrackHypothesis(
                track_id=self._next_id,
                state=kalman_initiate(observation_from_box(det.box), self.cfg),
                last_box=det.box,
            )
            self._next_id += 1
            norm = np.linalg.norm(det.feature)
            if norm > 0.0:
                track.gallery.append(det.feature / norm)
            track.history.append(
                TrackFrameRecord(
                    frame=frame,
                    track_id=track.track_id,
                    stage=track.stage,
                    box=det.box,
                    top5=det.top5,
                    time_since_update=0,
                    det_id=det.id,
                )
            )
            assignments[det.id] = track.track_id
            self.tracks.append(track)

        self.finished.extend(t for t in self.tracks if t.stage == DELETED)
        self.tracks = [t for t in self.tracks if t.stage != DELETED]
        self._last_frame = frame

        records = tuple(
            t.history[-1]
            for t in sorted(self.tracks, key=lambda t: t.track_id)
            if t.history and t.history[-1].frame == frame
        )
        return StepResult(frame=frame, records=records, assignments=assignments)

    def all_tracks(self) -> list[TrackHypothesis]:
        """Live and deleted tracks, by creation order."""
        return sorted(self.tracks + self.finished, key=lambda t: t.track_id)
