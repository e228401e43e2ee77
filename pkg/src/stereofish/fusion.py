"""Cross-camera track association, species belief, and measurement smoothing.

A left track and a right track belong to the same fish when their detections
were stereo-paired in the same frames; co-pairing frequency is the
association weight. Species scores accumulate over both cameras' histories
and measurements are smoothed by the median.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field

import numpy as np

from .assignment import WeightMatrix, solve_max_weight
from .errors import DataError
from .measurement import FishMeasurement
from .geometry import WorldPoint


class NoMeasurements(DataError):
    """finalize() called on a stereo track without measurements."""


@dataclass(eq=False)
class SpeciesBelief:
    """Accumulated per-class scores over a track's life."""

    scores: dict[int, float] = field(default_factory=dict)
    observations: int = 0

    def add_top5(self, top5) -> None:
        if not top5:
            return
        for class_id, score in top5:
            if score < 0:
                raise DataError(f"class score must be non-negative, got {score}")
            self.scores[int(class_id)] = self.scores.get(int(class_id), 0.0) + float(score)
        self.observations += 1

    def argmax(self) -> tuple[int, float] | None:
        """(class_id, accumulated score) of the belief maximum, or None.

        Ties resolve to the lowest class id.
        """
        if not self.scores:
            return None
        best = min(self.scores, key=lambda c: (-self.scores[c], c))
        return best, self.scores[best]


@dataclass(eq=False)
class StereoTrack:
    """An associated left/right track pair with its accumulated evidence."""

    left_track_id: int
    right_track_id: int
    co_pairing_count: int
    belief: SpeciesBelief = field(default_factory=SpeciesBelief)
    measurements: list[tuple[int, FishMeasurement]] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.co_pairing_count < 1:
            raise DataError("stereo tracks require at least one co-paired frame")


@dataclass(frozen=True, eq=False)
class FusedFishRecord:
    """Final per-fish output: species belief argmax and median measurements."""

    species: int
    species_score: float
    fork_length_m: float
    height_m: float
    trajectory: tuple[tuple[int, WorldPoint], ...]


@dataclass(frozen=True)
class TrackAssociation:
    """One accepted left/right association with its supporting frame count."""

    left_track_id: int
    right_track_id: int
    co_pairing_count: int


def associate_tracks(
    left_histories: dict,
    right_histories: dict,
    per_frame_pairs,
) -> tuple[list[TrackAssociation], list[int], list[int]]:
    """Associate left and right tracks by co-pairing frequency.

    Args:
        left_histories: left track id -> iterable of (frame, detection id).
        right_histories: right track id -> same for the right camera.
        per_frame_pairs: iterable of (frame, left detection id, right
            detection id) stereo pairings.

    Returns:
        (associations, mono_left_ids, mono_right_ids). Tracks without any
        co-pairing stay mono-camera; zero-count associations are never
        emitted.
    """
    left_ids = sorted(left_histories)
    right_ids = sorted(right_histories)
    left_by_det = {
        (frame, det): tid
        for tid in left_ids
        for frame, det in left_histories[tid]
    }
    right_by_det = {
        (frame, det): tid
        for tid in right_ids
        for frame, det in right_histories[tid]
    }

    counts: dict[tuple[int, int], int] = {}
    for frame, l_det, r_det in per_frame_pairs:
        lt = left_by_det.get((frame, l_det))
        rt = right_by_det.get((frame, r_det))
        if lt is None or rt is None:
            continue
        counts[(lt, rt)] = counts.get((lt, rt), 0) + 1

    l_index = {tid: i for i, tid in enumerate(left_ids)}
    r_index = {tid: i for i, tid in enumerate(right_ids)}
    weights = np.zeros((len(left_ids), len(right_ids)))
    for (lt, rt), n in counts.items():
        weights[l_index[lt], r_index[rt]] = float(n)
    forbidden = weights == 0.0

    matching = solve_max_weight(
        WeightMatrix(len(left_ids), len(right_ids), weights, forbidden)
    )
    associations = [
        TrackAssociation(left_ids[i], right_ids[j], int(weights[i, j]))
        for i, j in matching.pairs
    ]
    matched_l = {a.left_track_id for a in associations}
    matched_r = {a.right_track_id for a in associations}
    mono_left = [tid for tid in left_ids if tid not in matched_l]
    mono_right = [tid for tid in right_ids if tid not in matched_r]
    return associations, mono_left, mono_right


def accumulate_belief(track_history) -> SpeciesBelief:
    """Sum per-class top-5 scores over history entries.

    Args:
        track_history: iterable of top-5 lists (class, score); None entries
            (frames without an observation) are skipped. Both cameras'
            histories may be chained into one call.
    """
    belief = SpeciesBelief()
    for top5 in track_history:
        if top5:
            belief.add_top5(top5)
    return belief


def finalize(track: StereoTrack) -> FusedFishRecord:
    """Reduce a stereo track to its fused record.

    Lengths and heights are medians (even counts average the two central
    order statistics); the species is the belief argmax with ties to the
    lowest class id; the trajectory copies the per-frame centroids.

    Raises:
        NoMeasurements: The track has no measurements to fuse.
    """
    if not track.measurements:
        raise NoMeasurements(
            f"stereo track ({track.left_track_id}, {track.right_track_id}) "
            "has no measurements"
        )
    top = track.belief.argmax()
    species, score = top if top is not None else (-1, 0.0)
    ordered = sorted(track.measurements, key=lambda fm: fm[0])
    return FusedFishRecord(
        species=species,
        species_score=score,
        fork_length_m=float(statistics.median(m.fork_length_m for _, m in ordered)),
        height_m=float(statistics.median(m.height_m for _, m in ordered)),
        trajectory=tuple((frame, m.centroid) for frame, m in ordered),
    )
