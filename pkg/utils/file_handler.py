import io
import json
import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
import uuid
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from utils.camera import CameraRig
from utils.datagen import ImageTrack, config_hash
from utils.errors import ConfigError, SchemaError
from utils.harness import AnnotationMapping, ingest_annotations
from utils.polysnap import COEFFICIENT_CONVENTION
from utils.seqmodel import CODING, MdnModel

logger = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1
METADATA_KEY = "__metadata__"


def _dumps(record):
    return json.dumps(record, separators=(",", ":"))


def track_to_record(track, config, seed=None):
    """
    JSON-ready record of one generated track

    Args:
        track: ImageTrack
        config: GenConfig the track was generated with

    Returns:
        Dict with the persisted fields
    """
    record = {
        "id": track.track_id,
        "fps": track.fps,
        "camera": track.camera.to_dict(),
        "points_px": track.truth_px.tolist(),
        "points_world": None if track.points_world is None else track.points_world.tolist(),
        "seed": config.seed if seed is None else seed,
        "config_hash": config_hash(config),
        "run_index": track.run_index,
        "speed": track.speed,
        "waypoints": None if track.waypoints is None else track.waypoints.tolist(),
        "knots": None if track.knots is None else track.knots.tolist(),
        "t_start": track.t_start,
        "coefficient_convention": COEFFICIENT_CONVENTION,
    }
    if track.clean_px is not None:
        record["points_px_noisy"] = track.points_px.tolist()
    return record


def track_from_record(record, path="<record>", line=None):
    """Inverse of track_to_record"""
    for key in ("id", "fps", "camera", "points_px"):
        if key not in record:
            raise SchemaError(path, "missing field", line=line, field=key)

    def optional_array(key):
        value = record.get(key)
        return None if value is None else np.asarray(value, dtype=float)

    clean = np.asarray(record["points_px"], dtype=float)
    noisy = optional_array("points_px_noisy")
    try:
        return ImageTrack(
            track_id=str(record["id"]),
            fps=float(record["fps"]),
            camera=CameraRig.from_dict(record["camera"]),
            points_px=clean if noisy is None else noisy,
            clean_px=None if noisy is None else clean,
            points_world=optional_array("points_world"),
            waypoints=optional_array("waypoints"),
            knots=optional_array("knots"),
            speed=record.get("speed"),
            run_index=record.get("run_index"),
            t_start=float(record.get("t_start", 0.0)),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise SchemaError(path, str(e), line=line) from e


def write_dataset(dataset, path):
    """
    Write one JSON record per line, in acceptance order

    Args:
        dataset: Dataset from generate_dataset
        path: Output .jsonl path

    Returns:
        Path of the written file
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for track in dataset.tracks:
            f.write(_dumps(track_to_record(track, dataset.config)) + "\n")
    logger.info("Wrote %d tracks to %s", len(dataset.tracks), path)
    return path


def read_dataset(path):
    """
    Load tracks from a JSONL dataset

    Returns:
        List of ImageTrack
    """
    path = Path(path)
    tracks = []
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise SchemaError(path, e.msg, line=line_number) from e
            tracks.append(track_from_record(record, path, line_number))
    return tracks


def write_rejections(dataset, path):
    """Rejection histogram and acceptance statistics as JSON"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    summary = {
        "attempts": dataset.attempts,
        "accepted": len(dataset.tracks),
        "acceptance_rate": dataset.acceptance_rate,
        "rejections": dataset.rejections,
    }
    path.write_text(json.dumps(summary, indent=2), encoding="utf-8")
    return path


def load_mapping(path):
    """
    Read an AnnotationMapping from a flat TOML file

    Returns:
        AnnotationMapping with defaults for missing keys
    """
    if path is None:
        return AnnotationMapping()
    with open(path, "rb") as f:
        data = tomllib.load(f)
    known = {field.name for field in fields(AnnotationMapping)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"Unknown mapping key(s): {', '.join(unknown)}")
    try:
        return AnnotationMapping(**data)
    except ValueError as e:
        raise ConfigError(f"Invalid annotation mapping {path}: {e}") from e


def load_sequences(path, mapping=None):
    """
    Load evaluation tracks from a path

    A .jsonl file is a generated dataset; a .json file or a directory of
    .json files holds annotation sequences.

    Returns:
        List of ImageTrack or AnnotationSequence
    """
    path = Path(path)
    mapping = mapping or AnnotationMapping()
    if path.is_dir():
        files = sorted(path.rglob("*.json"))
        if not files:
            raise SchemaError(path, "no .json annotation files found")
        return [ingest_annotations(file, mapping) for file in files]
    if path.suffix == ".jsonl":
        return read_dataset(path)
    if path.suffix == ".json":
        return [ingest_annotations(path, mapping)]
    raise SchemaError(path, f"unsupported dataset format '{path.suffix}'")


def save_model(model, path, config=None, losses=None):
    """
    Store parameters and metadata in one .npz archive

    Args:
        model: MdnModel
        path: Output path
        config: TrainConfig echoed into the metadata
        losses: Per-epoch training losses
    """
    metadata = {
        "format_version": MODEL_FORMAT_VERSION,
        "embedding_dim": model.embedding_dim,
        "hidden_dim": model.hidden_dim,
        "horizon": model.horizon,
        "obs_len": model.obs_len,
        "coord_scale": model.coord_scale,
        "coding": CODING,
        "train_config": None if config is None else asdict(config),
        "losses": [] if losses is None else [float(loss) for loss in losses],
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buffer = io.BytesIO()
    np.savez(buffer, **model.params, **{METADATA_KEY: np.array(json.dumps(metadata))})
    path.write_bytes(buffer.getvalue())
    logger.info("Saved model to %s", path)
    return path


def load_model(path):
    """
    Load a model written by save_model

    Returns:
        (MdnModel, metadata dict)
    """
    path = Path(path)
    with np.load(path, allow_pickle=False) as archive:
        if METADATA_KEY not in archive.files:
            raise SchemaError(path, "not a model archive", field=METADATA_KEY)
        metadata = json.loads(str(archive[METADATA_KEY]))
        params = {name: archive[name] for name in archive.files if name != METADATA_KEY}
    if metadata.get("format_version") != MODEL_FORMAT_VERSION:
        raise SchemaError(path, f"unsupported format version {metadata.get('format_version')}")
    try:
        model = MdnModel(params=params, obs_len=metadata["obs_len"], coord_scale=metadata["coord_scale"])
    except ValueError as e:
        raise SchemaError(path, str(e)) from e
    return model, metadata


def write_predictions(rows, path):
    """JSON lines of forecasts; each row is a dict with array values"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for row in rows:
            f.write(_dumps(row) + "\n")
    return path


def save_uploaded_files(uploaded_files, upload_dir="data/uploads"):
    """
    Save uploaded files under upload_dir, keeping their names

    Args:
        uploaded_files: List of uploaded file objects from Streamlit
        upload_dir: Target directory; a fresh subdirectory per call

    Returns:
        Path of the directory holding the saved files
    """
    target = Path(upload_dir) / uuid.uuid4().hex
    target.mkdir(parents=True, exist_ok=True)
    for uploaded_file in uploaded_files:
        file_path = target / Path(uploaded_file.name).name
        with open(file_path, "wb") as f:
            f.write(uploaded_file.getbuffer())
    return target


def upload_key(uploaded_file):
    """Identity of an upload across reruns; None when nothing is uploaded"""
    if uploaded_file is None:
        return None
    file_id = getattr(uploaded_file, "file_id", None)
    if file_id is not None:
        return file_id
    return (uploaded_file.name, len(uploaded_file.getbuffer()))
