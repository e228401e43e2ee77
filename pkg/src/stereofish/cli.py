"""Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure.
"""

from __future__ import annotations

import logging
import sys
from pathlib import Path

import click
import numpy as np

from . import io as sfio
from .calibration import CornerObservationSet, calibrate, compute_rectification
from .errors import (
    EXIT_CONFIG,
    EXIT_DATA,
    EXIT_NUMERIC,
    ConfigError,
    DataError,
    NumericError,
    StereoFishError,
)
from .measurement import measure_pair
from .pairing import pair_frame
from .pipeline import PipelineConfig, run_pipeline, simulate_to_files
from .synthetic import ScenarioConfig
from .tracking import Tracker, TrackerConfig
from .calibration import rectified_cameras

logger = logging.getLogger(__name__)


@click.group()
@click.option("--seed", type=int, default=None, help="Default seed for subcommands.")
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="Default config file for subcommands.")
@click.option("--out-dir", type=click.Path(), default=None,
              help="Default output directory for subcommands.")
@click.option("--log-level", default="INFO", show_default=True)
@click.pass_context
def cli(ctx, seed, config_path, out_dir, log_level):
    """Stereo-video fish measurement pipeline."""
    logging.basicConfig(level=getattr(logging, log_level.upper(), logging.INFO))
    ctx.obj = {"seed": seed, "config": config_path, "out_dir": out_dir}


def _default(ctx, key, value):
    return value if value is not None else ctx.obj.get(key)


@cli.command("calibrate")
@click.option("--corners", "corners_path", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--no-refine", is_flag=True, help="Skip the joint LM refinement.")
def calibrate_cmd(corners_path, out_path, no_refine):
    """Estimate a stereo rig from checkerboard corner correspondences."""
    data = sfio.read_json(corners_path)
    if not isinstance(data, list):
        raise DataError(f"{corners_path}: expected a JSON array of frames")
    observations = [
        CornerObservationSet(
            frame_id=i,
            board_points=frame["board"],
            image_points_left=frame["left"],
            image_points_right=frame["right"],
        )
        for i, frame in enumerate(data)
    ]
    result = calibrate(observations, refine=not no_refine)
    sfio.write_rig(
        out_path,
        result.rig,
        extra={
            "rms_px": result.rms_reprojection_error,
            "refinement_converged": result.refinement_converged,
        },
    )
    click.echo(
        f"calibrated {len(observations)} frames, "
        f"rms {result.rms_reprojection_error:.6f} px -> {out_path}"
    )


@cli.command("rectify")
@click.option("--rig", "rig_path", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
def rectify_cmd(rig_path, out_path):
    """Compute the rectifying rotations and shared intrinsics for a rig."""
    rig, _ = sfio.read_rig(rig_path)
    rect = compute_rectification(rig)
    sfio.write_json(
        out_path,
        {
            "rot_left": [float(x) for x in rect.rot_left.rotation.reshape(-1)],
            "rot_right": [float(x) for x in rect.rot_right.rotation.reshape(-1)],
            "new_intrinsics": {
                "fx": rect.new_intrinsics.fx,
                "fy": rect.new_intrinsics.fy,
                "cx": rect.new_intrinsics.cx,
                "cy": rect.new_intrinsics.cy,
                "skew": rect.new_intrinsics.s,
            },
        },
    )
    click.echo(f"rectification -> {out_path}")


@cli.command("pair")
@click.option("--rig", "rig_path", required=True, type=click.Path())
@click.option("--left", "left_path", required=True, type=click.Path())
@click.option("--right", "right_path", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--delta", type=float, default=5.0, show_default=True,
              help="Epipolar gate in pixels.")
def pair_cmd(rig_path, left_path, right_path, out_path, delta):
    """Pair left and right detections frame by frame."""
    rig, _ = sfio.read_rig(rig_path)
    rect = compute_rectification(rig)
    dets_l, meta_l = sfio.read_detections(left_path)
    dets_r, _ = sfio.read_detections(right_path)
    meta = {"config_hash": meta_l.get("config_hash"), "delta_px": delta}
    pairings = {}
    for frame in sorted(set(dets_l) | set(dets_r)):
        pairings[frame] = pair_frame(
            dets_l.get(frame, []), dets_r.get(frame, []), rig, rect, delta=delta
        )
    sfio.write_pairs(out_path, pairings, meta)
    n = sum(len(p.pairs) for p in pairings.values())
    click.echo(f"paired {n} detections over {len(pairings)} frames -> {out_path}")


@cli.command("measure")
@click.option("--rig", "rig_path", required=True, type=click.Path())
@click.option("--pairs", "pairs_path", required=True, type=click.Path())
@click.option("--masks-left", required=True, type=click.Path())
@click.option("--masks-right", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--band", type=float, default=3.0, show_default=True,
              help="Epipolar band for extreme-point transfer, pixels.")
def measure_cmd(rig_path, pairs_path, masks_left, masks_right, out_path, band):
    """Triangulate fork length, height, and centroid for each paired mask."""
    rig, _ = sfio.read_rig(rig_path)
    rect = compute_rectification(rig)
    cam_l, cam_r = rectified_cameras(rig, rect)
    pairs, meta = sfio.read_pairs(pairs_path)
    m_l, _ = sfio.read_masks(masks_left)
    m_r, _ = sfio.read_masks(masks_right)
    rows = []
    failures = 0
    for frame in sorted(pairs):
        for l_id, r_id, _sim in pairs[frame]["pairs"]:
            mask_l = m_l.get((frame, l_id))
            mask_r = m_r.get((frame, r_id))
            if mask_l is None or mask_r is None:
                failures += 1
                continue
            try:
                rows.append(
                    (frame, l_id, r_id, measure_pair(mask_l, mask_r, cam_l, cam_r, band))
                )
            except StereoFishError as exc:
                logger.warning("frame %d pair (%d, %d): %s", frame, l_id, r_id, exc)
                failures += 1
    sfio.write_measurements(out_path, rows, meta)
    click.echo(f"measured {len(rows)} pairs ({failures} failures) -> {out_path}")


@cli.command("track")
@click.option("--dets", "dets_path", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="Tracker config JSON.")
@click.option("--out", "out_path", required=True, type=click.Path())
def track_cmd(dets_path, config_path, out_path):
    """Run the multi-object tracker over one camera's detections."""
    cfg = TrackerConfig()
    if config_path:
        cfg = TrackerConfig.from_dict(sfio.read_json(config_path))
    dets, meta = sfio.read_detections(dets_path)
    tracker = Tracker(cfg)
    records = []
    frames = sorted(dets)
    if frames:
        for frame in range(frames[0], frames[-1] + 1):
            records.extend(tracker.step(frame, dets.get(frame, [])).records)
    sfio.write_tracks(
        out_path, records, {"config_hash": meta.get("config_hash"), "tracker": cfg.to_dict()}
    )
    click.echo(f"tracked {len(tracker.all_tracks())} tracks -> {out_path}")


@cli.command("fuse")
@click.option("--tracks-left", required=True, type=click.Path())
@click.option("--tracks-right", required=True, type=click.Path())
@click.option("--pairs", "pairs_path", required=True, type=click.Path())
@click.option("--measurements", "meas_path", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
def fuse_cmd(tracks_left, tracks_right, pairs_path, meas_path, out_path):
    """Associate left/right tracks and fuse species and measurements."""
    from .pipeline import fuse_tracks

    records_l, meta = sfio.read_tracks(tracks_left)
    records_r, _ = sfio.read_tracks(tracks_right)
    pairs, _ = sfio.read_pairs(pairs_path)
    meas_rows, _ = sfio.read_measurements(meas_path)
    triples = [
        (frame, l, r)
        for frame in sorted(pairs)
        for l, r, _sim in pairs[frame]["pairs"]
    ]
    fish_rows, n_stereo, n_mono = fuse_tracks(records_l, records_r, triples, meas_rows)
    sfio.write_fish(out_path, fish_rows, {"config_hash": meta.get("config_hash")})
    click.echo(f"fused {n_stereo} stereo fish, {n_mono} mono tracks -> {out_path}")


@cli.command("simulate")
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="Scenario config JSONable (defaults applied otherwise).")
@click.option("--out-dir", "out_dir", type=click.Path(), default=None)
@click.option("--seed", type=int, default=None, help="Override the scenario seed.")
@click.option("--mask-format", type=click.Choice(["rle", "png"]), default="rle",
              show_default=True)
@click.option("--feature-sidecar", is_flag=True,
              help="Store features in a binary sidecar instead of inline JSON.")
@click.pass_context
def simulate_cmd(ctx, config_path, out_dir, seed, mask_format, feature_sidecar):
    """Generate a synthetic scenario in the pipeline's interchange formats."""
    config_path = _default(ctx, "config", config_path)
    out_dir = _default(ctx, "out_dir", out_dir)
    seed = _default(ctx, "seed", seed)
    if out_dir is None:
        raise ConfigError("simulate requires --out-dir")
    data = sfio.read_json(config_path) if config_path else {}
    if seed is not None:
        data["seed"] = seed
    cfg = ScenarioConfig.from_dict(data)
    paths = simulate_to_files(
        cfg, out_dir, mask_format=mask_format, feature_sidecar=feature_sidecar
    )
    click.echo(f"scenario (seed {cfg.seed}) -> {paths['rig'].parent}")


@cli.command("run")
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="Pipeline config JSON.")
@click.option("--out-dir", "out_dir", type=click.Path(), default=None,
              help="Override the configured output directory.")
@click.pass_context
def run_cmd(ctx, config_path, out_dir):
    """Run the full pipeline: pair, measure, track both cameras, fuse."""
    config_path = _default(ctx, "config", config_path)
    out_dir = _default(ctx, "out_dir", out_dir)
    if config_path is None:
        raise ConfigError("run requires --config")
    data = sfio.read_json(config_path)
    if out_dir is not None:
        data["out_dir"] = out_dir
    cfg = PipelineConfig.from_dict(data, base_dir=Path(config_path).parent)
    summary = run_pipeline(cfg)
    for key, value in summary.to_dict().items():
        click.echo(f"{key}: {value}")


def main(argv=None) -> int:
    """Entry point with spec'd exit codes."""
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.UsageError as exc:
        exc.show()
        sys.exit(EXIT_CONFIG)
    except click.ClickException as exc:
        exc.show()
        sys.exit(exc.exit_code)
    except click.Abort:
        sys.exit(1)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except (NumericError, np.linalg.LinAlgError) as exc:
        click.echo(f"numeric failure: {exc}", err=True)
        sys.exit(EXIT_NUMERIC)
    except (DataError, OSError) as exc:
        click.echo(f"data error: {exc}", err=True)
        sys.exit(EXIT_DATA)
    except StereoFishError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(exc.exit_code)
    return 0


if __name__ == "__main__":
    sys.exit(main())
