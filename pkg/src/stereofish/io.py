"""Interchange formats: rig JSON, detection/mask/pair/track JSONL, CSV tables.

Per-frame records are JSONL (one object per line, first line an embedded
``_meta`` header with the config hash and seed), final tables are CSV with a
``#`` meta comment line. Masks travel as inline run-length encodings or PNG
files; detection features may live inline or in a little-endian float32
sidecar addressed by per-line offsets.
"""

from __future__ import annotations

import csv
import hashlib
import io as _io
import json
from pathlib import Path

import numpy as np

from .errors import DataError
from .geometry import PixelPoint, StereoRig, rig_from_dict, rig_to_dict
from .measurement import BinaryMask, FishMeasurement
from .pairing import BoundingBox, DetectionRecord
from .tracking import TrackFrameRecord


def config_hash(obj) -> str:
    """sha256 of the canonical JSON form of a config mapping."""
    canonical = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def _dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"))


def write_json(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_json(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing file: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON: {exc}") from exc


# ---------------------------------------------------------------------------
# Rig
# ---------------------------------------------------------------------------


def write_rig(path, rig: StereoRig, extra: dict | None = None) -> None:
    payload = rig_to_dict(rig)
    if extra:
        payload.update(extra)
    write_json(path, payload)


def read_rig(path) -> tuple[StereoRig, dict]:
    data = read_json(path)
    return rig_from_dict(data), data


# ---------------------------------------------------------------------------
# JSONL helpers
# ---------------------------------------------------------------------------


def _write_jsonl(path, lines, meta: dict | None) -> None:
    with open(path, "w") as fh:
        if meta is not None:
            fh.write(_dumps({"_meta": meta}) + "\n")
        for line in lines:
            fh.write(_dumps(line) + "\n")


def _read_jsonl(path) -> tuple[list[dict], dict]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing file: {path}")
    records: list[dict] = []
    meta: dict = {}
    with open(path) as fh:
        for n, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{n}: invalid JSON: {exc}") from exc
            if "_meta" in obj:
                meta = obj["_meta"]
            else:
                records.append(obj)
    return records, meta


# ---------------------------------------------------------------------------
# Detections
# ---------------------------------------------------------------------------


def write_detections(
    path,
    per_frame: dict,
    meta: dict | None = None,
    feature_sidecar: bool = False,
) -> None:
    """Write per-frame detection lists.

    With ``feature_sidecar`` the feature vectors go to ``<path>.feat`` as raw
    little-endian float32 and each line carries its element offset instead
    of an inline feature array.
    """
    path = Path(path)
    meta = dict(meta or {})
    sidecar_values: list[np.ndarray] = []
    offset = 0
    lines = []
    for frame in sorted(per_frame):
        for det in sorted(per_frame[frame], key=lambda d: d.id):
            line = {
                "frame": int(frame),
                "id": int(det.id),
                "box": [float(x) for x in det.box.as_list()],
                "conf": float(det.confidence),
                "top5": [[int(c), float(s)] for c, s in det.top5],
            }
            if feature_sidecar:
                line["feature_off"] = offset
                line["feature_dim"] = int(det.feature.size)
                sidecar_values.append(det.feature.astype("<f4"))
                offset += det.feature.size
            else:
                line["feature"] = [float(x) for x in det.feature]
            lines.append(line)
    if feature_sidecar:
        sidecar_name = path.name + ".feat"
        meta["feature_sidecar"] = sidecar_name
        blob = (
            np.concatenate(sidecar_values)
            if sidecar_values
            else np.empty(0, dtype="<f4")
        )
        (path.parent / sidecar_name).write_bytes(blob.tobytes())
    _write_jsonl(path, lines, meta)


def read_detections(path) -> tuple[dict, dict]:
    """Read detections into {frame: [DetectionRecord, ...]} plus the meta."""
    path = Path(path)
    records, meta = _read_jsonl(path)
    features = None
    if meta.get("feature_sidecar"):
        sidecar = path.parent / meta["feature_sidecar"]
        if not sidecar.exists():
            raise DataError(f"missing feature sidecar: {sidecar}")
        features = np.frombuffer(sidecar.read_bytes(), dtype="<f4")
    per_frame: dict[int, list[DetectionRecord]] = {}
    for obj in records:
        try:
            if "feature" in obj:
                feat = np.array(obj["feature"], dtype=float)
            else:
                if features is None:
                    raise DataError("feature offsets present but no sidecar declared")
                off, dim = int(obj["feature_off"]), int(obj["feature_dim"])
                feat = features[off : off + dim].astype(float)
                if feat.size != dim:
                    raise DataError("feature offset outside the sidecar")
            det = DetectionRecord(
                id=int(obj["id"]),
                box=BoundingBox(*(float(x) for x in obj["box"])),
                confidence=float(obj["conf"]),
                feature=feat,
                top5=tuple((int(c), float(s)) for c, s in obj.get("top5", [])),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}: bad detection record {obj}: {exc}") from exc
        per_frame.setdefault(int(obj["frame"]), []).append(det)
    return per_frame, meta


# ---------------------------------------------------------------------------
# Masks
# ---------------------------------------------------------------------------


def write_masks(
    path,
    masks: dict,
    meta: dict | None = None,
    fmt: str = "rle",
) -> None:
    """Write masks keyed by (frame, detection id).

    ``fmt="rle"`` inlines run-length rows; ``fmt="png"`` writes 8-bit PNGs
    (nonzero = foreground) named ``{frame}_{id}.png`` beside the index.
    """
    path = Path(path)
    if fmt not in ("rle", "png"):
        raise DataError(f"mask format must be 'rle' or 'png', got {fmt!r}")
    lines = []
    for frame, det_id in sorted(masks):
        mask = masks[(frame, det_id)]
        line = {
            "frame": int(frame),
            "id": int(det_id),
            "width": mask.width,
            "height": mask.height,
            "origin": [float(mask.origin.u), float(mask.origin.v)],
        }
        if fmt == "rle":
            line["rle"] = mask.to_rle()
        else:
            from PIL import Image

            name = f"{frame}_{det_id}.png"
            img = Image.fromarray(mask.bits.astype(np.uint8) * 255, mode="L")
            img.save(path.parent / name)
            line["png"] = name
        lines.append(line)
    _write_jsonl(path, lines, meta)


def read_masks(path) -> tuple[dict, dict]:
    """Read a mask index into {(frame, id): BinaryMask} plus the meta."""
    path = Path(path)
    records, meta = _read_jsonl(path)
    masks: dict[tuple[int, int], BinaryMask] = {}
    for obj in records:
        try:
            origin = PixelPoint(float(obj["origin"][0]), float(obj["origin"][1]))
            if "rle" in obj:
                mask = BinaryMask.from_rle(
                    int(obj["width"]), int(obj["height"]), origin, obj["rle"]
                )
            elif "png" in obj:
                from PIL import Image

                img = Image.open(path.parent / obj["png"]).convert("L")
                mask = BinaryMask(np.array(img) > 0, origin)
            else:
                raise DataError("mask record holds neither 'rle' nor 'png'")
        except (KeyError, TypeError, ValueError, OSError) as exc:
            raise DataError(f"{path}: bad mask record: {exc}") from exc
        masks[(int(obj["frame"]), int(obj["id"]))] = mask
    return masks, meta


# ---------------------------------------------------------------------------
# Pairs
# ---------------------------------------------------------------------------


def write_pairs(path, frame_pairings: dict, meta: dict | None = None) -> None:
    """Write per-frame pairing results ({frame: FramePairing})."""
    lines = []
    for frame in sorted(frame_pairings):
        fp = frame_pairings[frame]
        lines.append(
            {
                "frame": int(frame),
                "pairs": [
                    [int(p.left.id), int(p.right.id), float(p.similarity)]
                    for p in fp.pairs
                ],
                "unpaired_left": [int(i) for i in fp.unpaired_left_ids],
                "unpaired_right": [int(i) for i in fp.unpaired_right_ids],
            }
        )
    _write_jsonl(path, lines, meta)


def read_pairs(path) -> tuple[dict, dict]:
    """Read pairings into {frame: {"pairs": [(l, r, sim)], ...}} plus meta."""
    records, meta = _read_jsonl(path)
    out: dict[int, dict] = {}
    for obj in records:
        try:
            out[int(obj["frame"])] = {
                "pairs": [(int(l), int(r), float(s)) for l, r, s in obj["pairs"]],
                "unpaired_left": [int(i) for i in obj.get("unpaired_left", [])],
                "unpaired_right": [int(i) for i in obj.get("unpaired_right", [])],
            }
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}: bad pair record: {exc}") from exc
    return out, meta


# ---------------------------------------------------------------------------
# Measurements CSV
# ---------------------------------------------------------------------------

MEASUREMENT_FIELDS = (
    "frame",
    "left_id",
    "right_id",
    "fork_length_m",
    "height_m",
    "cx",
    "cy",
    "cz",
    "flags",
)


def _measurement_flags(m: FishMeasurement) -> str:
    flags = []
    if m.single_direction_length:
        flags.append("single_direction_length")
    if m.single_direction_height:
        flags.append("single_direction_height")
    return ";".join(flags)


def write_measurements(path, rows, meta: dict | None = None) -> None:
    """Write (frame, left_id, right_id, FishMeasurement) rows as CSV."""
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MEASUREMENT_FIELDS)
    for frame, left_id, right_id, m in sorted(rows, key=lambda r: (r[0], r[1], r[2])):
        writer.writerow(
            [
                frame,
                left_id,
                right_id,
                repr(m.fork_length_m),
                repr(m.height_m),
                repr(m.centroid.x),
                repr(m.centroid.y),
                repr(m.centroid.z),
                _measurement_flags(m),
            ]
        )
    header = f"# _meta {_dumps(meta or {})}\n"
    Path(path).write_text(header + buf.getvalue())


def read_measurements(path) -> tuple[list[dict], dict]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing file: {path}")
    meta: dict = {}
    rows: list[dict] = []
    with open(path) as fh:
        lines = []
        for raw in fh:
            if raw.startswith("# _meta "):
                meta = json.loads(raw[len("# _meta ") :])
            elif raw.strip():
                lines.append(raw)
    reader = csv.DictReader(lines)
    for rec in reader:
        try:
            rows.append(
                {
                    "frame": int(rec["frame"]),
                    "left_id": int(rec["left_id"]),
                    "right_id": int(rec["right_id"]),
                    "fork_length_m": float(rec["fork_length_m"]),
                    "height_m": float(rec["height_m"]),
                    "centroid": (float(rec["cx"]), float(rec["cy"]), float(rec["cz"])),
                    "flags": rec["flags"].split(";") if rec["flags"] else [],
                }
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}: bad measurement row {rec}: {exc}") from exc
    return rows, meta


# ---------------------------------------------------------------------------
# Tracks
# ---------------------------------------------------------------------------


def write_tracks(path, records, meta: dict | None = None) -> None:
    """Write TrackFrameRecord streams as JSONL, ordered by frame then id."""
    lines = []
    for rec in sorted(records, key=lambda r: (r.frame, r.track_id)):
        lines.append(
            {
                "frame": rec.frame,
                "track_id": rec.track_id,
                "stage": rec.stage,
                "box": [float(x) for x in rec.box.as_list()],
                "top5": None
                if rec.top5 is None
                else [[int(c), float(s)] for c, s in rec.top5],
                "time_since_update": rec.time_since_update,
                "det_id": rec.det_id,
            }
        )
    _write_jsonl(path, lines, meta)


def read_tracks(path) -> tuple[list[TrackFrameRecord], dict]:
    records, meta = _read_jsonl(path)
    out = []
    for obj in records:
        try:
            out.append(
                TrackFrameRecord(
                    frame=int(obj["frame"]),
                    track_id=int(obj["track_id"]),
                    stage=str(obj["stage"]),
                    box=BoundingBox(*(float(x) for x in obj["box"])),
                    top5=None
                    if obj.get("top5") is None
                    else tuple((int(c), float(s)) for c, s in obj["top5"]),
                    time_since_update=int(obj["time_since_update"]),
                    det_id=None if obj.get("det_id") is None else int(obj["det_id"]),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}: bad track record: {exc}") from exc
    return out, meta


# ---------------------------------------------------------------------------
# Fused fish CSV
# ---------------------------------------------------------------------------

FISH_FIELDS = (
    "fish_id",
    "species",
    "species_score",
    "n_obs",
    "fork_length_m",
    "height_m",
    "first_frame",
    "last_frame",
)


def write_fish(path, rows, meta: dict | None = None) -> None:
    """Write fused per-fish rows (sequences matching FISH_FIELDS)."""
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(FISH_FIELDS)
    for row in rows:
        writer.writerow(row)
    header = f"# _meta {_dumps(meta or {})}\n"
    Path(path).write_text(header + buf.getvalue())
