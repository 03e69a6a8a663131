"""
Synthetic image-space UAV track generation.

One run samples a camera, waypoints inside its viewing frustum, a speed
and a frame rate, solves the minimum-snap trajectory through the
waypoints and projects it to pixels at the frame interval. Runs failing a
sanity check are rejected and the next run index is tried until the
requested number of tracks is accepted.
"""

import hashlib
import json
import logging
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Optional

import numpy as np

from utils.camera import (
    CameraRig, Extrinsics, Intrinsics, contains, contains_many, in_image, make_frustum, project_many,
)
from utils.errors import BehindCamera, Rejected, RejectionBudgetExceeded, SingularKkt
from utils.polysnap import SnapConfig, Waypoint, allocate_times, sample, solve_min_snap

logger = logging.getLogger(__name__)

GENERATION_STREAM = 0
NOISE_STREAM = 1
CHUNK_SIZE = 64
HASH_EXCLUDED = ("workers",)


class RejectReason(Enum):
    OUT_OF_BOUNDS = "out-of-bounds"
    OUT_OF_FRUSTUM = "out-of-frustum"
    BEHIND_CAMERA = "behind-camera"
    STEP_TOO_SMALL = "step-too-small"
    STEP_TOO_LARGE = "step-too-large"
    SOLVER_FAILURE = "solver-failure"
    TOO_SHORT = "too-short"


@dataclass(frozen=True)
class GenConfig:
    height_min: float = 1.0
    height_max: float = 2.0
    inclination_min_deg: float = 10.0
    inclination_max_deg: float = 20.0
    d_near: float = 10.0
    d_far: float = 30.0
    waypoints_min: int = 3
    waypoints_max: int = 7
    speed_min: float = 1.0
    speed_max: float = 8.0
    fps_min: float = 10.0
    fps_max: float = 20.0
    count: int = 1000
    noise_sigma: float = 1.5
    min_step_px: float = 0.5
    max_step_px: float = 60.0
    min_track_frames: int = 20
    min_waypoint_spacing: float = 0.5
    max_waypoint_draws: int = 100_000
    min_acceptance: float = 0.001
    focal_px: float = 1240.0
    principal_x: float = 579.0
    principal_y: float = 212.0
    image_width: int = 1176
    image_height: int = 640
    polynomial_order: int = 7
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        ranges = {
            "height": (self.height_min, self.height_max),
            "inclination": (self.inclination_min_deg, self.inclination_max_deg),
            "waypoints": (self.waypoints_min, self.waypoints_max),
            "speed": (self.speed_min, self.speed_max),
            "fps": (self.fps_min, self.fps_max),
            "step": (self.min_step_px, self.max_step_px),
        }
        for name, (low, high) in ranges.items():
            if low > high:
                raise ValueError(f"{name} range is empty: [{low}, {high}]")
        if self.height_min <= 0 or self.speed_min <= 0 or self.fps_min <= 0:
            raise ValueError("Height, speed and frame rate must be positive")
        if self.waypoints_min < 2:
            raise ValueError("A trajectory needs at least two waypoints")
        if self.count < 1 or self.workers < 1 or self.min_track_frames < 2:
            raise ValueError("count, workers and min_track_frames must be positive")
        if self.noise_sigma < 0 or self.min_step_px < 0:
            raise ValueError("noise_sigma and min_step_px must be non-negative")
        if not 0 < self.min_acceptance <= 1:
            raise ValueError(f"min_acceptance must lie in (0, 1], got {self.min_acceptance}")

    @property
    def intrinsics(self):
        return Intrinsics(
            focal=self.focal_px,
            principal_x=self.principal_x,
            principal_y=self.principal_y,
            width=self.image_width,
            height=self.image_height,
        )

    @property
    def snap_config(self):
        return SnapConfig(order=self.polynomial_order)


def config_hash(config):
    """SHA-256 over the generation-relevant fields of the config"""
    values = {key: value for key, value in asdict(config).items() if key not in HASH_EXCLUDED}
    canonical = json.dumps(values, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def run_rng(seed, index, stream=GENERATION_STREAM):
    """Independent generator for one run index"""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index), int(stream)]))


@dataclass(frozen=True)
class SceneSample:
    rig: CameraRig
    fps: float
    speed: float
    waypoint_count: int


@dataclass(frozen=True, eq=False)
class ImageTrack:
    """
    One projected trajectory.

    points_px holds the observed positions. When observation noise has
    been injected, clean_px keeps the noiseless projection used as ground
    truth.
    """
    track_id: str
    fps: float
    camera: CameraRig
    points_px: np.ndarray
    points_world: Optional[np.ndarray] = None
    clean_px: Optional[np.ndarray] = None
    waypoints: Optional[np.ndarray] = None
    knots: Optional[np.ndarray] = None
    speed: Optional[float] = None
    run_index: Optional[int] = None
    t_start: float = 0.0

    def __post_init__(self):
        points = np.asarray(self.points_px, dtype=float)
        if points.ndim != 2 or points.shape[1] != 2 or points.shape[0] < 2:
            raise ValueError(f"A track needs at least two 2D points, got shape {points.shape}")
        if not np.all(np.isfinite(points)):
            raise ValueError(f"Track {self.track_id} contains non-finite pixel positions")
        object.__setattr__(self, "points_px", points)

    def __len__(self):
        return self.points_px.shape[0]

    @property
    def observed_px(self):
        return self.points_px

    @property
    def truth_px(self):
        return self.points_px if self.clean_px is None else self.clean_px

    @property
    def valid(self):
        return np.ones(len(self), dtype=bool)

    @property
    def split(self):
        return "synthetic"


@dataclass
class Dataset:
    tracks: list
    config: GenConfig
    attempts: int = 0
    rejections: dict = field(default_factory=dict)

    @property
    def acceptance_rate(self):
        return len(self.tracks) / self.attempts if self.attempts else 0.0


def sample_scene(rng, config):
    """Draw camera extrinsics, frame rate, speed and waypoint count for one run"""
    height = rng.uniform(config.height_min, config.height_max)
    inclination = np.deg2rad(rng.uniform(config.inclination_min_deg, config.inclination_max_deg))
    waypoint_count = int(rng.integers(config.waypoints_min, config.waypoints_max, endpoint=True))
    speed = rng.uniform(config.speed_min, config.speed_max)
    fps = rng.uniform(config.fps_min, config.fps_max)
    rig = CameraRig(config.intrinsics, Extrinsics(height=float(height), inclination=float(inclination)))
    return SceneSample(rig=rig, fps=float(fps), speed=float(speed), waypoint_count=waypoint_count)


def sample_waypoints(rng, frustum, count, min_spacing=0.5, max_draws=100_000):
    """
    Uniform waypoints inside the frustum by rejection from its bounding box

    Consecutive waypoints are at least min_spacing meters apart.
    """
    if count < 2:
        raise ValueError(f"At least two waypoints are required, got {count}")
    low, high = frustum.bounding_box
    points = []
    draws = 0
    while len(points) < count:
        if draws >= max_draws:
            raise RejectionBudgetExceeded(
                f"Only {len(points)} of {count} waypoints found after {draws} draws; check the frustum"
            )
        candidate = rng.uniform(low, high)
        draws += 1
        if not contains(frustum, candidate):
            continue
        if points and np.linalg.norm(candidate - points[-1]) < min_spacing:
            continue
        points.append(candidate)
    return [Waypoint(point) for point in points]


def sample_times(traj, fps):
    """Frame times t_0 + k / fps that fall inside the trajectory's timeline"""
    span = traj.timeline.end - traj.timeline.start
    frames = int(math.floor(span * fps + 1e-9)) + 1
    return np.minimum(traj.timeline.start + np.arange(frames) / fps, traj.timeline.end)


def _moving_span(pixels, min_step):
    """First and last point index of the track once quasi-stationary ends are trimmed"""
    steps = np.linalg.norm(np.diff(pixels, axis=0), axis=1)
    moving = steps >= min_step
    if not np.any(moving):
        return None
    first = int(np.argmax(moving))
    last = len(steps) - 1 - int(np.argmax(moving[::-1]))
    return first, last + 1


def track_from_trajectory(traj, rig, frustum, fps, config, track_id="", **metadata):
    """
    Sample, project and sanity-check a solved trajectory

    Raises:
        Rejected: with the first violated RejectReason
    """
    times = sample_times(traj, fps)
    world = sample(traj, times)[:, :3]
    try:
        pixels, _ = project_many(rig, world)
    except BehindCamera as exc:
        raise Rejected(RejectReason.BEHIND_CAMERA, str(exc)) from exc

    outside = ~in_image(rig, pixels)
    if np.any(outside):
        raise Rejected(RejectReason.OUT_OF_BOUNDS, f"{int(outside.sum())} of {len(pixels)} samples")
    if not np.all(contains_many(frustum, world)):
        raise Rejected(RejectReason.OUT_OF_FRUSTUM)

    span = _moving_span(pixels, config.min_step_px)
    if span is None:
        raise Rejected(RejectReason.STEP_TOO_SMALL, "no step reaches the minimum")
    first, last = span
    pixels, world, times = pixels[first:last + 1], world[first:last + 1], times[first:last + 1]

    steps = np.linalg.norm(np.diff(pixels, axis=0), axis=1)
    if np.any(steps > config.max_step_px):
        raise Rejected(RejectReason.STEP_TOO_LARGE, f"max step {steps.max():.2f} px")
    if np.any(steps < config.min_step_px):
        raise Rejected(RejectReason.STEP_TOO_SMALL, f"min step {steps.min():.3f} px")
    if len(pixels) < config.min_track_frames:
        raise Rejected(RejectReason.TOO_SHORT, f"{len(pixels)} frames")

    return ImageTrack(
        track_id=track_id,
        fps=float(fps),
        camera=rig,
        points_px=pixels,
        points_world=world,
        t_start=float(times[0]),
        **metadata,
    )


def generate_track(rng, config, track_id="", run_index=None):
    """
    Run the full pipeline once

    Raises:
        Rejected: the caller resamples with the next run index
    """
    scene = sample_scene(rng, config)
    frustum = make_frustum(scene.rig, config.d_near, config.d_far)
    waypoints = sample_waypoints(
        rng, frustum, scene.waypoint_count, config.min_waypoint_spacing, config.max_waypoint_draws
    )
    timeline = allocate_times(waypoints, scene.speed)
    try:
        traj = solve_min_snap(waypoints, timeline, config.snap_config)
    except SingularKkt as exc:
        raise Rejected(RejectReason.SOLVER_FAILURE, str(exc)) from exc

    return track_from_trajectory(
        traj, scene.rig, frustum, scene.fps, config,
        track_id=track_id,
        waypoints=np.array([w.as_flat_output() for w in waypoints]),
        knots=timeline.knots,
        speed=scene.speed,
        run_index=run_index,
    )


def add_observation_noise(track, sigma, rng):
    """Add i.i.d. N(0, sigma^2) to u and v of every point, keeping the clean positions"""
    if sigma < 0:
        raise ValueError(f"Noise sigma must be non-negative, got {sigma}")
    if sigma == 0:
        return track
    clean = track.truth_px
    noisy = clean + rng.normal(0.0, sigma, size=clean.shape)
    return replace(track, points_px=noisy, clean_px=clean)


def _attempt(config, index):
    try:
        track = generate_track(run_rng(config.seed, index), config, run_index=index)
    except Rejected as exc:
        logger.debug("Run %d rejected: %s", index, exc)
        return exc.reason
    if config.noise_sigma > 0:
        track = add_observation_noise(track, config.noise_sigma, run_rng(config.seed, index, NOISE_STREAM))
    return track


def generate_dataset(config, progress=None):
    """
    Generate exactly config.count accepted tracks

    Args:
        config: GenConfig
        progress: Optional callable(accepted, total) invoked after every accepted track

    Returns:
        Dataset
    """
    budget = math.ceil(config.count / config.min_acceptance)
    accepted = []
    rejections = Counter()
    attempts = 0

    executor = ThreadPoolExecutor(max_workers=config.workers) if config.workers > 1 else None
    try:
        while len(accepted) < config.count:
            if attempts >= budget:
                raise RejectionBudgetExceeded(
                    f"Accepted {len(accepted)} of {config.count} tracks after {attempts} runs "
                    f"(acceptance below {config.min_acceptance:.2%})"
                )
            indices = range(attempts, min(attempts + CHUNK_SIZE, budget))
            if executor is None:
                outcomes = (_attempt(config, index) for index in indices)
            else:
                outcomes = executor.map(lambda index: _attempt(config, index), indices)

            for index, outcome in zip(indices, outcomes):
                attempts += 1
                if isinstance(outcome, RejectReason):
                    rejections[outcome.value] += 1
                    continue
                accepted.append(replace(outcome, track_id=f"{len(accepted):06d}"))
                if progress is not None:
                    progress(len(accepted), config.count)
                if len(accepted) == config.count:
                    break
    finally:
        if executor is not None:
            executor.shutdown(wait=True, cancel_futures=True)

    dataset = Dataset(tracks=accepted, config=config, attempts=attempts, rejections=dict(sorted(rejections.items())))
    logger.info(
        "Generated %d tracks from %d runs (acceptance %.1f%%)",
        len(accepted), attempts, 100.0 * dataset.acceptance_rate,
    )
    for reason, count in dataset.rejections.items():
        logger.info("  rejected %-15s %d", reason, count)
    return dataset


def validate_track(track, config):
    """Re-check a (noiseless) track against every rejection rule; returns the violated reasons"""
    violations = []
    pixels = track.truth_px
    if track.points_world is not None:
        try:
            reprojected, _ = project_many(track.camera, track.points_world)
        except BehindCamera:
            violations.append(RejectReason.BEHIND_CAMERA)
            reprojected = None
        if reprojected is not None and np.max(np.abs(reprojected - pixels)) > 1e-6:
            violations.append(RejectReason.OUT_OF_BOUNDS)
        frustum = make_frustum(track.camera, config.d_near, config.d_far)
        if not np.all(contains_many(frustum, track.points_world)):
            violations.append(RejectReason.OUT_OF_FRUSTUM)
    if not np.all(in_image(track.camera, pixels)) and RejectReason.OUT_OF_BOUNDS not in violations:
        violations.append(RejectReason.OUT_OF_BOUNDS)

    steps = np.linalg.norm(np.diff(pixels, axis=0), axis=1)
    if np.any(steps > config.max_step_px):
        violations.append(RejectReason.STEP_TOO_LARGE)
    if np.any(steps < config.min_step_px):
        violations.append(RejectReason.STEP_TOO_SMALL)
    if len(track) < config.min_track_frames:
        violations.append(RejectReason.TOO_SHORT)
    return violations


def summarize(tracks):
    """Dataset statistics for logs and the dashboard"""
    if not tracks:
        return {"tracks": 0}
    lengths = np.array([len(track) for track in tracks])
    steps = np.concatenate([np.linalg.norm(np.diff(track.truth_px, axis=0), axis=1) for track in tracks])
    return {
        "tracks": len(tracks),
        "mean_length": float(lengths.mean()),
        "min_length": int(lengths.min()),
        "max_length": int(lengths.max()),
        "mean_step_px": float(steps.mean()),
        "max_step_px": float(steps.max()),
        "mean_fps": float(np.mean([track.fps for track in tracks])),
        "mean_duration_s": float(np.mean([(len(track) - 1) / track.fps for track in tracks])),
    }
