"""Pipeline orchestration: pair -> measure -> track (both cameras) -> fuse.

Every stage reads and writes files so stages stay independently testable
and resumable; outputs embed the config hash and seed. Re-running with
identical inputs produces byte-identical artifacts.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

from . import io as sfio
from .calibration import compute_rectification, rectified_cameras
from .errors import ConfigError, DataError, StereoFishError
from .fusion import SpeciesBelief, StereoTrack, associate_tracks, finalize
from .geometry import WorldPoint
from .measurement import DirectionalMeasurements, FishMeasurement, measure_pair
from .pairing import pair_frame
from .synthetic import ScenarioConfig, generate_scenario
from .tracking import Tracker, TrackerConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineConfig:
    """Paths and parameters of one end-to-end pipeline run."""

    rig_path: str
    detections_left: str
    detections_right: str
    masks_left: str
    masks_right: str
    out_dir: str
    epipolar_delta_pair: float = 5.0
    epipolar_band_measure: float = 3.0
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    log_level: str = "INFO"
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.epipolar_delta_pair <= 0 or self.epipolar_band_measure <= 0:
            raise ConfigError("epipolar deltas must be positive")

    def to_dict(self) -> dict:
        return {
            "rig_path": self.rig_path,
            "detections_left": self.detections_left,
            "detections_right": self.detections_right,
            "masks_left": self.masks_left,
            "masks_right": self.masks_right,
            "out_dir": self.out_dir,
            "epipolar_delta_pair": self.epipolar_delta_pair,
            "epipolar_band_measure": self.epipolar_band_measure,
            "tracker": self.tracker.to_dict(),
            "log_level": self.log_level,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict, base_dir: str | Path = ".") -> "PipelineConfig":
        base = Path(base_dir)
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown pipeline config keys: {sorted(unknown)}")
        required = (
            "rig_path",
            "detections_left",
            "detections_right",
            "masks_left",
            "masks_right",
            "out_dir",
        )
        missing = [k for k in required if k not in data]
        if missing:
            raise ConfigError(f"pipeline config missing keys: {missing}")
        kwargs = dict(data)
        for key in required:
            kwargs[key] = str(base / data[key])
        if "tracker" in kwargs and isinstance(kwargs["tracker"], dict):
            try:
                kwargs["tracker"] = TrackerConfig.from_dict(kwargs["tracker"])
            except DataError as exc:
                raise ConfigError(str(exc)) from exc
        return cls(**kwargs)

    def validate_paths(self) -> None:
        for name in (
            "rig_path",
            "detections_left",
            "detections_right",
            "masks_left",
            "masks_right",
        ):
            path = Path(getattr(self, name))
            if not path.exists():
                raise ConfigError(f"{name}: no such file: {path}")


@dataclass(frozen=True)
class PipelineSummary:
    """Per-stage record counts of one pipeline run."""

    frames: int
    detections_left: int
    detections_right: int
    pairs: int
    measurements: int
    measurement_failures: int
    tracks_left: int
    tracks_right: int
    stereo_fish: int
    mono_tracks: int

    def to_dict(self) -> dict:
        return {
            "frames": self.frames,
            "detections_left": self.detections_left,
            "detections_right": self.detections_right,
            "pairs": self.pairs,
            "measurements": self.measurements,
            "measurement_failures": self.measurement_failures,
            "tracks_left": self.tracks_left,
            "tracks_right": self.tracks_right,
            "stereo_fish": self.stereo_fish,
            "mono_tracks": self.mono_tracks,
        }


def _frame_range(dets_l: dict, dets_r: dict) -> list[int]:
    frames = set(dets_l) | set(dets_r)
    if not frames:
        return []
    return list(range(min(frames), max(frames) + 1))


def _track_camera(frames, dets, cfg: TrackerConfig):
    tracker = Tracker(cfg)
    records = []
    for frame in frames:
        result = tracker.step(frame, dets.get(frame, []))
        records.extend(result.records)
    return tracker, records


def run_pipeline(cfg: PipelineConfig) -> PipelineSummary:
    """Execute pair -> measure -> track -> fuse over file-based inputs.

    All artifacts are written under ``cfg.out_dir``:
    pairs.jsonl, measurements.csv, tracks_left.jsonl, tracks_right.jsonl,
    fish.csv, and summary.json.
    """
    cfg.validate_paths()
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    meta = {"config_hash": sfio.config_hash(cfg.to_dict()), "seed": cfg.seed}

    rig, _ = sfio.read_rig(cfg.rig_path)
    rect = compute_rectification(rig)
    cam_l, cam_r = rectified_cameras(rig, rect)
    dets_l, _ = sfio.read_detections(cfg.detections_left)
    dets_r, _ = sfio.read_detections(cfg.detections_right)
    frames = _frame_range(dets_l, dets_r)

    # stage: stereo pairing
    pairings = {}
    for frame in frames:
        lefts = dets_l.get(frame, [])
        rights = dets_r.get(frame, [])
        if not lefts and not rights:
            continue
        pairings[frame] = pair_frame(
            lefts, rights, rig, rect, delta=cfg.epipolar_delta_pair
        )
    sfio.write_pairs(out_dir / "pairs.jsonl", pairings, meta)
    n_pairs = sum(len(p.pairs) for p in pairings.values())
    logger.info("pairing: %d pairs over %d frames", n_pairs, len(pairings))

    # stage: measurement
    masks_l, _ = sfio.read_masks(cfg.masks_left)
    masks_r, _ = sfio.read_masks(cfg.masks_right)
    rows = []
    failures = 0
    for frame in sorted(pairings):
        for pair in pairings[frame].pairs:
            mask_l = masks_l.get((frame, pair.left.id))
            mask_r = masks_r.get((frame, pair.right.id))
            if mask_l is None or mask_r is None:
                failures += 1
                continue
            try:
                m = measure_pair(
                    mask_l, mask_r, cam_l, cam_r, band=cfg.epipolar_band_measure
                )
            except StereoFishError as exc:
                logger.warning(
                    "measurement failed at frame %d pair (%d, %d): %s",
                    frame,
                    pair.left.id,
                    pair.right.id,
                    exc,
                )
                failures += 1
                continue
            rows.append((frame, pair.left.id, pair.right.id, m))
    sfio.write_measurements(out_dir / "measurements.csv", rows, meta)
    logger.info("measurement: %d rows, %d failures", len(rows), failures)

    # stage: tracking (independent per camera)
    tracker_l, records_l = _track_camera(frames, dets_l, cfg.tracker)
    tracker_r, records_r = _track_camera(frames, dets_r, cfg.tracker)
    sfio.write_tracks(out_dir / "tracks_left.jsonl", records_l, meta)
    sfio.write_tracks(out_dir / "tracks_right.jsonl", records_r, meta)

    # stage: fusion
    pair_triples = [
        (frame, l, r)
        for frame in sorted(pairings)
        for (l, r) in ((p.left.id, p.right.id) for p in pairings[frame].pairs)
    ]
    measurement_rows = [
        {
            "frame": frame,
            "left_id": left_id,
            "right_id": right_id,
            "fork_length_m": m.fork_length_m,
            "height_m": m.height_m,
            "centroid": (m.centroid.x, m.centroid.y, m.centroid.z),
        }
        for frame, left_id, right_id, m in rows
    ]
    fish_rows, n_stereo, n_mono = fuse_tracks(
        records_l, records_r, pair_triples, measurement_rows
    )
    sfio.write_fish(out_dir / "fish.csv", fish_rows, meta)

    summary = PipelineSummary(
        frames=len(frames),
        detections_left=sum(len(v) for v in dets_l.values()),
        detections_right=sum(len(v) for v in dets_r.values()),
        pairs=n_pairs,
        measurements=len(rows),
        measurement_failures=failures,
        tracks_left=len(tracker_l.all_tracks()),
        tracks_right=len(tracker_r.all_tracks()),
        stereo_fish=n_stereo,
        mono_tracks=n_mono,
    )
    sfio.write_json(out_dir / "summary.json", {"_meta": meta, **summary.to_dict()})
    return summary


def fuse_tracks(records_l, records_r, pair_triples, measurement_rows):
    """Fuse track records, pairings, and measurements into per-fish rows.

    Returns (csv_rows, n_stereo, n_mono). Mono-camera tracks keep their
    belief but have empty length columns.
    """
    def histories(records):
        hist: dict[int, list] = {}
        top5s: dict[int, list] = {}
        frames: dict[int, list] = {}
        for rec in records:
            frames.setdefault(rec.track_id, []).append(rec.frame)
            if rec.det_id is not None:
                hist.setdefault(rec.track_id, []).append((rec.frame, rec.det_id))
                top5s.setdefault(rec.track_id, []).append(rec.top5)
        return hist, top5s, frames

    hist_l, top5_l, frames_l = histories(records_l)
    hist_r, top5_r, frames_r = histories(records_r)

    associations, mono_l, mono_r = associate_tracks(hist_l, hist_r, pair_triples)

    measurements = {
        (row["frame"], row["left_id"], row["right_id"]): row
        for row in measurement_rows
    }
    left_det_index = {
        (frame, det): tid for tid, entries in hist_l.items() for frame, det in entries
    }
    right_det_index = {
        (frame, det): tid for tid, entries in hist_r.items() for frame, det in entries
    }

    fish_rows = []
    fish_id = 0
    for assoc in sorted(associations, key=lambda a: a.left_track_id):
        belief = SpeciesBelief()
        for top5 in top5_l.get(assoc.left_track_id, []):
            belief.add_top5(top5 or ())
        for top5 in top5_r.get(assoc.right_track_id, []):
            belief.add_top5(top5 or ())
        stereo = StereoTrack(
            left_track_id=assoc.left_track_id,
            right_track_id=assoc.right_track_id,
            co_pairing_count=assoc.co_pairing_count,
            belief=belief,
        )
        for (frame, l_det, r_det), row in sorted(measurements.items()):
            if (
                left_det_index.get((frame, l_det)) == assoc.left_track_id
                and right_det_index.get((frame, r_det)) == assoc.right_track_id
            ):
                stereo.measurements.append(
                    (
                        frame,
                        FishMeasurement(
                            fork_length_m=row["fork_length_m"],
                            height_m=row["height_m"],
                            centroid=WorldPoint(*row["centroid"]),
                            per_direction=DirectionalMeasurements(
                                None, None, None, None
                            ),
                        ),
                    )
                )
        fish_id += 1
        span = sorted(
            frames_l.get(assoc.left_track_id, [])
            + frames_r.get(assoc.right_track_id, [])
        )
        if stereo.measurements:
            record = finalize(stereo)
            fish_rows.append(
                [
                    fish_id,
                    record.species,
                    repr(record.species_score),
                    belief.observations,
                    repr(record.fork_length_m),
                    repr(record.height_m),
                    span[0],
                    span[-1],
                ]
            )
        else:
            top = belief.argmax()
            species, score = top if top else (-1, 0.0)
            fish_rows.append(
                [fish_id, species, repr(score), belief.observations, "", "", span[0], span[-1]]
            )

    n_stereo = fish_id
    for side, mono_ids, top5s, frames_map in (
        ("left", mono_l, top5_l, frames_l),
        ("right", mono_r, top5_r, frames_r),
    ):
        for tid in mono_ids:
            belief = SpeciesBelief()
            for top5 in top5s.get(tid, []):
                belief.add_top5(top5 or ())
            top = belief.argmax()
            species, score = top if top else (-1, 0.0)
            span = sorted(frames_map.get(tid, [0]))
            fish_id += 1
            fish_rows.append(
                [fish_id, species, repr(score), belief.observations, "", "", span[0], span[-1]]
            )
    return fish_rows, n_stereo, fish_id - n_stereo


def simulate_to_files(
    cfg: ScenarioConfig,
    out_dir,
    mask_format: str = "rle",
    feature_sidecar: bool = False,
) -> dict:
    """Generate a scenario and write the pipeline's input files plus truth.

    Emits rig.json, detections_{left,right}.jsonl, masks_{left,right}.jsonl,
    and truth.json under ``out_dir``; returns the path map.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scenario = generate_scenario(cfg)
    meta = {
        "config": cfg.to_dict(),
        "config_hash": sfio.config_hash(cfg.to_dict()),
        "seed": cfg.seed,
        "rng": "numpy default_rng (PCG64)",
    }

    sfio.write_rig(out / "rig.json", scenario.rig, extra={"_meta": meta})
    dets_l = {ft.frame: list(ft.left_detections) for ft in scenario.frames}
    dets_r = {ft.frame: list(ft.right_detections) for ft in scenario.frames}
    sfio.write_detections(
        out / "detections_left.jsonl", dets_l, meta, feature_sidecar=feature_sidecar
    )
    sfio.write_detections(
        out / "detections_right.jsonl", dets_r, meta, feature_sidecar=feature_sidecar
    )
    masks_l = {
        (ft.frame, det_id): mask
        for ft in scenario.frames
        for det_id, mask in ft.left_masks.items()
    }
    masks_r = {
        (ft.frame, det_id): mask
        for ft in scenario.frames
        for det_id, mask in ft.right_masks.items()
    }
    sfio.write_masks(out / "masks_left.jsonl", masks_l, meta, fmt=mask_format)
    sfio.write_masks(out / "masks_right.jsonl", masks_r, meta, fmt=mask_format)

    truth = {
        "_meta": meta,
        "fish": [
            {
                "identity": f.identity,
                "class_id": scenario.class_of_identity(f.identity),
                "fork_length_m": f.fork_length_m,
                "height_m": f.height_m,
                "start": [float(x) for x in f.start],
                "velocity": [float(x) for x in f.velocity],
            }
            for f in scenario.fish
        ],
        "frames": [
            {
                "frame": ft.frame,
                "left": {str(k): v for k, v in sorted(ft.left_identity_of_det.items())},
                "right": {str(k): v for k, v in sorted(ft.right_identity_of_det.items())},
                "pairs": [list(p) for p in ft.gt_pairs],
            }
            for ft in scenario.frames
        ],
    }
    sfio.write_json(out / "truth.json", truth)
    return {
        "rig": out / "rig.json",
        "detections_left": out / "detections_left.jsonl",
        "detections_right": out / "detections_right.jsonl",
        "masks_left": out / "masks_left.jsonl",
        "masks_right": out / "masks_right.jsonl",
        "truth": out / "truth.json",
    }
