"""
Minimum-snap trajectory generation through timed waypoints.

The flat outputs (x, y, z, yaw) of a quadrotor are represented as one
polynomial of order n per segment and channel, expressed over the
segment-normalized time tau in [0, 1]. The snap (position) and yaw
acceleration integrals are minimized subject to waypoint, continuity and
rest-to-rest boundary equalities by solving the KKT system of the
equality-constrained quadratic program.
"""

import logging
import warnings
from dataclasses import dataclass
from functools import lru_cache
from math import factorial
from pathlib import Path

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy.linalg import LinAlgWarning, lu_factor, lu_solve
from scipy.linalg.lapack import dgecon

from utils.errors import InsufficientOrder, OutOfDomain, SingularKkt, ZeroLengthSegment

logger = logging.getLogger(__name__)

N_CHANNELS = 4
YAW_CHANNEL = 3
COEFFICIENT_CONVENTION = "4(n+1)m"
MIN_SEGMENT_LENGTH = 1e-9


@dataclass(frozen=True, eq=False)
class Waypoint:
    """A world-frame position (meters, z-up) and a yaw angle (radians)"""
    position: np.ndarray
    yaw: float = 0.0

    def __post_init__(self):
        position = np.asarray(self.position, dtype=float).reshape(3)
        if not np.all(np.isfinite(position)):
            raise ValueError(f"Waypoint position must be finite, got {position}")
        if not -np.pi <= float(self.yaw) <= np.pi:
            raise ValueError(f"Waypoint yaw must lie in [-pi, pi], got {self.yaw}")
        object.__setattr__(self, "position", position)
        object.__setattr__(self, "yaw", float(self.yaw))

    def as_flat_output(self):
        return np.append(self.position, self.yaw)


def waypoints_from_array(array):
    """Build waypoints from a k x 3 (positions) or k x 4 (positions + yaw) array"""
    array = np.asarray(array, dtype=float)
    if array.ndim != 2 or array.shape[1] not in (3, 4):
        raise ValueError(f"Expected a k x 3 or k x 4 array, got shape {array.shape}")
    if array.shape[1] == 3:
        return [Waypoint(row) for row in array]
    return [Waypoint(row[:3], row[3]) for row in array]


@dataclass(frozen=True, eq=False)
class SegmentedTimeline:
    knots: np.ndarray

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float).ravel()
        if knots.size < 2:
            raise ValueError("A timeline needs at least two knots")
        if not np.all(np.isfinite(knots)) or np.any(np.diff(knots) <= 0):
            raise ValueError(f"Timeline knots must be finite and strictly increasing, got {knots}")
        object.__setattr__(self, "knots", knots)

    @property
    def durations(self):
        return np.diff(self.knots)

    @property
    def segment_count(self):
        return self.knots.size - 1

    @property
    def start(self):
        return float(self.knots[0])

    @property
    def end(self):
        return float(self.knots[-1])


@dataclass(frozen=True)
class SnapConfig:
    """Polynomial order, cost derivative orders and weights of the snap objective"""
    order: int = 7
    k_r: int = 4
    k_psi: int = 2
    c_r: float = 1.0
    c_psi: float = 1.0
    condition_limit: float = 1e14

    def __post_init__(self):
        if self.k_r < 1 or self.k_psi < 1:
            raise ValueError("Derivative orders k_r and k_psi must be positive")
        if self.c_r < 0 or self.c_psi < 0:
            raise ValueError("Cost weights c_r and c_psi must be non-negative")


@dataclass(frozen=True, eq=False)
class PiecewiseTrajectory:
    """
    Solved flat-output trajectory.

    coefficients[j, c, i] is the coefficient of tau**i of channel c
    (x, y, z, yaw) on segment j, with tau = (t - t_j) / (t_{j+1} - t_j).
    """
    timeline: SegmentedTimeline
    coefficients: np.ndarray
    order: int

    def __post_init__(self):
        coefficients = np.asarray(self.coefficients, dtype=float)
        expected = (self.timeline.segment_count, N_CHANNELS, self.order + 1)
        if coefficients.shape != expected:
            raise ValueError(f"Coefficient array has shape {coefficients.shape}, expected {expected}")
        object.__setattr__(self, "coefficients", coefficients)

    @property
    def decision_vector(self):
        return self.coefficients.ravel()


@dataclass(frozen=True, eq=False)
class QpSystem:
    """Cost c'Qc subject to Ac = b, with c laid out as (segment, channel, power)"""
    Q: np.ndarray
    A: np.ndarray
    b: np.ndarray
    order: int
    segment_count: int
    convention: str = COEFFICIENT_CONVENTION

    @property
    def dimension(self):
        return self.Q.shape[0]


def allocate_times(waypoints, speed):
    """
    Straight-line time allocation at a constant speed

    Args:
        waypoints: Sequence of Waypoint
        speed: UAV speed in m/s

    Returns:
        SegmentedTimeline starting at 0 whose segment durations are distance / speed
    """
    if len(waypoints) < 2:
        raise ValueError("Time allocation needs at least two waypoints")
    if speed <= 0:
        raise ValueError(f"Speed must be positive, got {speed}")

    positions = np.array([w.position for w in waypoints])
    distances = np.linalg.norm(np.diff(positions, axis=0), axis=1)
    for index, distance in enumerate(distances):
        if distance < MIN_SEGMENT_LENGTH:
            raise ZeroLengthSegment(index, float(distance))

    knots = np.concatenate([[0.0], np.cumsum(distances / speed)])
    return SegmentedTimeline(knots)


def _index(segment, channel, power, n_coeff):
    return (segment * N_CHANNELS + channel) * n_coeff + power


def _basis_row(tau, derivative, n_coeff):
    """Coefficient weights of the derivative-th tau-derivative of sum a_i tau**i"""
    row = np.zeros(n_coeff)
    for power in range(derivative, n_coeff):
        row[power] = factorial(power) / factorial(power - derivative) * tau ** (power - derivative)
    return row


@lru_cache(maxsize=None)
def _gram_block(derivative, n_coeff):
    """Integral over [0, 1] of the products of derivative-th tau-derivatives of the monomials"""
    block = np.zeros((n_coeff, n_coeff))
    for i in range(derivative, n_coeff):
        for j in range(derivative, n_coeff):
            weight_i = factorial(i) / factorial(i - derivative)
            weight_j = factorial(j) / factorial(j - derivative)
            block[i, j] = weight_i * weight_j / (i + j - 2 * derivative + 1)
    block.setflags(write=False)
    return block


def _channel_cost(channel, config):
    if channel == YAW_CHANNEL:
        return config.k_psi, config.c_psi
    return config.k_r, config.c_r


def cost_matrix(timeline, config=SnapConfig()):
    """
    Quadratic form of the objective in normalized-time coefficients.

    On a segment of duration T, d^k/dt^k = T**-k d^k/dtau^k and dt = T dtau,
    so every block is the unit Gram matrix scaled by T**(1 - 2k).
    """
    n_coeff = config.order + 1
    dimension = N_CHANNELS * n_coeff * timeline.segment_count
    Q = np.zeros((dimension, dimension))
    for segment, duration in enumerate(timeline.durations):
        for channel in range(N_CHANNELS):
            derivative, weight = _channel_cost(channel, config)
            start = _index(segment, channel, 0, n_coeff)
            Q[start:start + n_coeff, start:start + n_coeff] = (
                weight * _gram_block(derivative, n_coeff) * duration ** (1 - 2 * derivative)
            )
    return Q


def build_qp(waypoints, timeline, config=SnapConfig()):
    """
    Assemble the equality-constrained quadratic program

    Constraints per channel: the waypoint value at both ends of every
    segment, continuity of derivatives 1..k-1 at interior knots, and zero
    derivatives 1..k-1 at t_0 and t_m. The rows are structurally distinct,
    so A has full row rank without a deduplication pass.

    Args:
        waypoints: Sequence of m + 1 Waypoint
        timeline: SegmentedTimeline with m segments
        config: SnapConfig

    Returns:
        QpSystem
    """
    m = timeline.segment_count
    if len(waypoints) != m + 1:
        raise ValueError(f"{len(waypoints)} waypoints do not match a timeline with {m} segments")
    n_coeff = config.order + 1
    for derivative in (config.k_r, config.k_psi):
        if n_coeff < 2 * derivative:
            raise InsufficientOrder(
                f"Order {config.order} cannot satisfy {2 * derivative} boundary conditions per segment "
                f"for derivative order {derivative}; need order >= {2 * derivative - 1}"
            )

    dimension = N_CHANNELS * n_coeff * m
    durations = timeline.durations
    targets = np.array([w.as_flat_output() for w in waypoints])
    rows = []
    rhs = []

    def add_row(terms, value):
        row = np.zeros(dimension)
        for segment, channel, weights in terms:
            start = _index(segment, channel, 0, n_coeff)
            row[start:start + n_coeff] += weights
        rows.append(row)
        rhs.append(value)

    for channel in range(N_CHANNELS):
        derivative_order, _ = _channel_cost(channel, config)

        for segment in range(m):
            add_row([(segment, channel, _basis_row(0.0, 0, n_coeff))], targets[segment, channel])
            add_row([(segment, channel, _basis_row(1.0, 0, n_coeff))], targets[segment + 1, channel])

        for segment in range(m - 1):
            for derivative in range(1, derivative_order):
                left = _basis_row(1.0, derivative, n_coeff) / durations[segment] ** derivative
                right = _basis_row(0.0, derivative, n_coeff) / durations[segment + 1] ** derivative
                add_row([(segment, channel, left), (segment + 1, channel, -right)], 0.0)

        for derivative in range(1, derivative_order):
            add_row([(0, channel, _basis_row(0.0, derivative, n_coeff) / durations[0] ** derivative)], 0.0)
            add_row([(m - 1, channel, _basis_row(1.0, derivative, n_coeff) / durations[-1] ** derivative)], 0.0)

    return QpSystem(
        Q=cost_matrix(timeline, config),
        A=np.array(rows),
        b=np.array(rhs, dtype=float),
        order=config.order,
        segment_count=m,
    )


def _ruiz_scaling(matrix, iterations=10):
    """Symmetric diagonal scaling that drives every row's max-abs entry towards 1"""
    scale = np.ones(matrix.shape[0])
    magnitude = np.abs(matrix)
    for _ in range(iterations):
        row_max = np.max(magnitude * scale[:, None] * scale[None, :], axis=1)
        row_max[row_max == 0] = 1.0
        scale /= np.sqrt(row_max)
    return scale


def solve_qp(system, condition_limit=1e14):
    """
    Solve [[2Q, A'], [A, 0]] [c; lambda] = [0; b] for the decision vector c

    Raises:
        SingularKkt: if the condition estimate of the equilibrated KKT matrix exceeds the limit
    """
    d = system.dimension
    e = system.A.shape[0]
    kkt = np.zeros((d + e, d + e))
    kkt[:d, :d] = 2.0 * system.Q
    kkt[:d, d:] = system.A.T
    kkt[d:, :d] = system.A
    rhs = np.concatenate([np.zeros(d), system.b])

    scale = _ruiz_scaling(kkt)
    scaled = kkt * scale[:, None] * scale[None, :]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", LinAlgWarning)
        lu, pivots = lu_factor(scaled, check_finite=False)
    rcond, info = dgecon(lu, np.linalg.norm(scaled, 1), norm="1")
    condition = np.inf if info != 0 or rcond <= 0 else 1.0 / rcond
    if not np.isfinite(condition) or condition > condition_limit:
        raise SingularKkt(condition)

    solution = lu_solve((lu, pivots), rhs * scale, check_finite=False) * scale
    logger.debug("Solved KKT system of size %d (condition estimate %.3e)", d + e, condition)
    return solution[:d]


def solve_min_snap(waypoints, timeline, config=SnapConfig()):
    """
    Minimum-snap trajectory through the waypoints at the given knot times

    Args:
        waypoints: Sequence of Waypoint
        timeline: SegmentedTimeline
        config: SnapConfig

    Returns:
        PiecewiseTrajectory
    """
    system = build_qp(waypoints, timeline, config)
    solution = solve_qp(system, config.condition_limit)
    coefficients = solution.reshape(timeline.segment_count, N_CHANNELS, config.order + 1)
    return PiecewiseTrajectory(timeline=timeline, coefficients=coefficients, order=config.order)


def sample(traj, times, derivative_order=0):
    """
    Evaluate the trajectory on an array of times

    At an interior knot the left segment owns the point; t_0 belongs to the
    first segment.

    Returns:
        k x 4 array of (x, y, z, yaw) derivative values
    """
    if derivative_order < 0:
        raise ValueError("Derivative order must be non-negative")
    times = np.atleast_1d(np.asarray(times, dtype=float))
    knots = traj.timeline.knots
    slack = 1e-12 * max(1.0, abs(knots[-1]))
    if np.any(~np.isfinite(times)) or np.any(times < knots[0] - slack) or np.any(times > knots[-1] + slack):
        raise OutOfDomain(f"Times must lie within [{knots[0]}, {knots[-1]}]")
    times = np.clip(times, knots[0], knots[-1])

    m = traj.timeline.segment_count
    durations = traj.timeline.durations
    segments = np.clip(np.searchsorted(knots, times, side="left") - 1, 0, m - 1)
    tau = (times - knots[segments]) / durations[segments]

    values = np.empty((times.size, N_CHANNELS))
    for segment in np.unique(segments):
        mask = segments == segment
        coefficients = traj.coefficients[segment]
        if derivative_order:
            coefficients = npoly.polyder(coefficients, m=derivative_order, axis=1)
        values[mask] = npoly.polyval(tau[mask], coefficients.T).T / durations[segment] ** derivative_order
    return values


def evaluate(traj, t, derivative_order=0):
    """Value of the derivative_order-th time derivative of every channel at time t"""
    return sample(traj, [t], derivative_order)[0]


def snap_cost(traj, c_r=1.0, c_psi=1.0, config=None):
    """c'Qc of the trajectory's coefficients for the given weights"""
    base = config or SnapConfig(order=traj.order)
    weights = SnapConfig(
        order=traj.order, k_r=base.k_r, k_psi=base.k_psi, c_r=c_r, c_psi=c_psi,
        condition_limit=base.condition_limit,
    )
    c = traj.decision_vector
    return max(0.0, float(c @ cost_matrix(traj.timeline, weights) @ c))


def dump_qp(system, directory, prefix="qp"):
    """Write Q, A and b as plain-text matrices for inspection"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name, matrix in (("Q", system.Q), ("A", system.A), ("b", system.b)):
        path = directory / f"{prefix}_{name}.txt"
        np.savetxt(path, np.atleast_2d(matrix) if name != "b" else matrix, fmt="%.17g")
        paths[name] = path
    return paths
