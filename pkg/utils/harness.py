"""
Evaluation harness: annotation ingest, window extraction and FDE reports.

Tracks from the synthetic generator and real annotation sequences share a
small duck-typed surface (track_id, split, observed_px, truth_px, valid),
so every function here works on both.
"""

import json
import logging
import math
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from utils.errors import EmptyEvaluation, SchemaError

logger = logging.getLogger(__name__)

DEFAULT_HORIZONS = (8, 10, 12)
REPORT_COLUMNS = ["split", "method", "horizon", "fde_mean_px", "fde_std_px", "windows"]
IMAGE_SIZES = {"IR": (640, 512), "EO": (1920, 1080)}
MODALITY_TOKENS = {"ir": "IR", "infrared": "IR", "rgb": "EO", "visible": "EO", "eo": "EO"}


@dataclass(frozen=True)
class AnnotationMapping:
    """Field names of a per-sequence annotation file, plus optional overrides"""
    exist_key: str = "exist"
    rect_key: str = "gt_rect"
    modality: Optional[str] = None
    image_width: Optional[int] = None
    image_height: Optional[int] = None

    def __post_init__(self):
        if self.modality is not None and self.modality not in IMAGE_SIZES:
            raise ValueError(f"Modality must be one of {sorted(IMAGE_SIZES)}, got {self.modality}")


@dataclass(frozen=True, eq=False)
class AnnotationSequence:
    sequence_id: str
    modality: str
    image_size: tuple
    boxes: np.ndarray
    exists: np.ndarray

    def __len__(self):
        return self.boxes.shape[0]

    @property
    def track_id(self):
        return self.sequence_id

    @property
    def split(self):
        return self.modality

    @property
    def centers(self):
        centers = self.boxes[:, :2] + 0.5 * self.boxes[:, 2:]
        centers[~self.exists] = np.nan
        return centers

    @property
    def observed_px(self):
        return self.centers

    @property
    def truth_px(self):
        return self.centers

    @property
    def valid(self):
        return self.exists.copy()


@dataclass(frozen=True, eq=False)
class Window:
    sequence_id: str
    start: int
    observed: np.ndarray
    future: np.ndarray


@dataclass(frozen=True)
class ReportCell:
    split: str
    method: str
    horizon: int
    fde_mean_px: float
    fde_std_px: float
    windows: int


@dataclass
class EvalReport:
    cells: list
    metadata: dict = field(default_factory=dict)

    def to_frame(self):
        return pd.DataFrame([asdict(cell) for cell in self.cells], columns=REPORT_COLUMNS)

    def cell(self, method, horizon, split=None):
        for candidate in self.cells:
            if candidate.method == method and candidate.horizon == horizon:
                if split is None or candidate.split == split:
                    return candidate
        raise KeyError(f"No report cell for {method} at horizon {horizon}")

    def table(self):
        """Methods as rows, (split, obs/horizon, FDE | sigma_FDE) as columns"""
        obs_len = self.metadata.get("obs_len", 8)
        columns, values = [], {}
        for cell in self.cells:
            setting = f"{obs_len}/{cell.horizon}"
            for metric, value in (("FDE", cell.fde_mean_px), ("sigma_FDE", cell.fde_std_px)):
                key = (cell.split, setting, metric)
                if key not in columns:
                    columns.append(key)
                values.setdefault(cell.method, {})[key] = value
        methods = list(values)
        return pd.DataFrame(
            [[values[method].get(key, np.nan) for key in columns] for method in methods],
            index=pd.Index(methods, name="method"),
            columns=pd.MultiIndex.from_tuples(columns, names=["split", "setting", "metric"]),
        )


def infer_modality(path):
    """EO or IR from file name tokens such as IR_label.json or visible.json"""
    tokens = re.split(r"[^A-Za-z]+", Path(path).stem)
    for token in tokens:
        modality = MODALITY_TOKENS.get(token.lower())
        if modality:
            return modality
    return None


def ingest_annotations(path, mapping=AnnotationMapping()):
    """
    Load one annotation file into an AnnotationSequence

    The file holds one JSON object with a per-frame existence list and a
    per-frame [x, y, w, h] rectangle list. Frames flagged absent may carry
    an empty rectangle.

    Raises:
        SchemaError: with the offending line or field
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(path, exc.msg, line=exc.lineno) from exc
    if not isinstance(data, dict):
        raise SchemaError(path, "top level must be a JSON object")

    for key in (mapping.exist_key, mapping.rect_key):
        if key not in data:
            raise SchemaError(path, "missing field", field=key)
    flags, rects = data[mapping.exist_key], data[mapping.rect_key]
    if not isinstance(flags, list) or not isinstance(rects, list):
        raise SchemaError(path, "must be a list", field=mapping.exist_key)
    if len(flags) != len(rects):
        raise SchemaError(
            path, f"{len(flags)} existence flags for {len(rects)} rectangles", field=mapping.rect_key
        )

    boxes = np.full((len(rects), 4), np.nan)
    exists = np.zeros(len(rects), dtype=bool)
    for index, (flag, rect) in enumerate(zip(flags, rects)):
        if flag not in (0, 1, True, False):
            raise SchemaError(path, f"flag must be 0 or 1, got {flag!r}", field=f"{mapping.exist_key}[{index}]")
        if not flag:
            continue
        location = f"{mapping.rect_key}[{index}]"
        if not isinstance(rect, list) or len(rect) != 4:
            raise SchemaError(path, f"expected [x, y, w, h], got {rect!r}", field=location)
        try:
            box = np.array(rect, dtype=float)
        except (TypeError, ValueError) as exc:
            raise SchemaError(path, f"non-numeric rectangle {rect!r}", field=location) from exc
        if not np.all(np.isfinite(box)) or box[2] <= 0 or box[3] <= 0:
            raise SchemaError(path, f"rectangle needs finite values and w, h > 0, got {rect!r}", field=location)
        boxes[index] = box
        exists[index] = True

    modality = mapping.modality or infer_modality(path)
    if modality is None:
        raise SchemaError(path, "cannot infer EO/IR modality from the file name; set it in the mapping")
    width, height = IMAGE_SIZES[modality]
    image_size = (mapping.image_width or width, mapping.image_height or height)

    sequence_id = f"{path.parent.name}/{path.stem}" if path.parent.name else path.stem
    return AnnotationSequence(
        sequence_id=sequence_id,
        modality=modality,
        image_size=image_size,
        boxes=boxes,
        exists=exists,
    )


def export_annotations(sequence, path, mapping=AnnotationMapping()):
    """Write a sequence back in the layout ingest_annotations reads"""
    rects = [box.tolist() if flag else [] for box, flag in zip(sequence.boxes, sequence.exists)]
    data = {
        mapping.exist_key: [int(flag) for flag in sequence.exists],
        mapping.rect_key: rects,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data), encoding="utf-8")
    return path


def extract_windows(track, obs_len=8, horizon=12, stride=1, noisy_targets=False):
    """
    Slide a window of obs_len + horizon consecutive valid frames over a track

    Observed positions come from the observed (possibly noisy) points,
    future positions from the ground truth unless noisy_targets is set.
    """
    if obs_len < 1 or horizon < 1 or stride < 1:
        raise ValueError(f"obs_len, horizon and stride must be positive, got {obs_len}, {horizon}, {stride}")
    observed = np.asarray(track.observed_px, dtype=float)
    truth = observed if noisy_targets else np.asarray(track.truth_px, dtype=float)
    invalid = np.concatenate([[0], np.cumsum(~np.asarray(track.valid, dtype=bool))])
    span = obs_len + horizon

    windows = []
    for start in range(0, observed.shape[0] - span + 1, stride):
        if invalid[start + span] != invalid[start]:
            continue
        windows.append(Window(
            sequence_id=track.track_id,
            start=start,
            observed=observed[start:start + obs_len].copy(),
            future=truth[start + obs_len:start + span].copy(),
        ))
    return windows


def fde(predicted_final, ground_truth_final):
    """Euclidean distance between two pixel positions"""
    predicted_final = np.asarray(predicted_final, dtype=float)
    ground_truth_final = np.asarray(ground_truth_final, dtype=float)
    return float(math.hypot(*(predicted_final - ground_truth_final)))


def aggregate_fde(errors):
    """Mean and population standard deviation, exactly rounded sums"""
    errors = [float(error) for error in errors]
    if not errors:
        raise EmptyEvaluation("No displacement errors to aggregate")
    mean = math.fsum(errors) / len(errors)
    variance = math.fsum((error - mean) ** 2 for error in errors) / len(errors)
    return mean, math.sqrt(variance)


def evaluate(methods, tracks, horizons=DEFAULT_HORIZONS, obs_len=8, stride=1, metadata=None, progress=None):
    """
    FDE of every method at every horizon, per split

    Each method predicts once per window at the largest horizon; shorter
    horizons read the prefix of that forecast, so all cells of a split
    share the same windows.

    Args:
        methods: Objects with a name and predict(observed, horizon) -> (horizon, 2)
        tracks: Synthetic tracks or annotation sequences
        horizons: Forecast lengths to report
        obs_len: Observed frames per window
        progress: Optional callable(done, total) over tracks

    Returns:
        EvalReport
    """
    horizons = sorted(set(int(h) for h in horizons))
    if not horizons or horizons[0] < 1:
        raise ValueError(f"Horizons must be positive, got {horizons}")
    longest = horizons[-1]
    tracks = list(tracks)

    windows_by_split = {}
    for done, track in enumerate(tracks, start=1):
        windows = extract_windows(track, obs_len, longest, stride)
        windows_by_split.setdefault(track.split, []).extend(windows)
        if progress is not None:
            progress(done, len(tracks))

    total = sum(len(windows) for windows in windows_by_split.values())
    if total == 0:
        raise EmptyEvaluation(f"No window of {obs_len + longest} valid frames in the dataset")

    cells = []
    for split in sorted(windows_by_split):
        windows = windows_by_split[split]
        if not windows:
            continue
        for method in methods:
            errors = {horizon: [] for horizon in horizons}
            for window in windows:
                forecast = np.asarray(method.predict(window.observed, longest))
                for horizon in horizons:
                    errors[horizon].append(fde(forecast[horizon - 1], window.future[horizon - 1]))
            for horizon in horizons:
                mean, std = aggregate_fde(errors[horizon])
                cells.append(ReportCell(split, method.name, horizon, mean, std, len(windows)))
            logger.info("%s on %s: %d windows", method.name, split, len(windows))

    report_metadata = {"obs_len": obs_len, "horizons": horizons, "stride": stride}
    report_metadata.update(metadata or {})
    return EvalReport(cells=cells, metadata=report_metadata)
