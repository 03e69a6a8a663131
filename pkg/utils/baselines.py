"""
Reference predictors: a constant-velocity Kalman filter and linear extrapolation.

All quantities are per frame: positions in px, velocities in px/frame.
"""

import logging
from dataclasses import dataclass

import numpy as np

from utils.errors import NonFiniteInput, TooFewObservations

logger = logging.getLogger(__name__)

STATE_DIM = 4
POSITION = np.array([0, 1])


@dataclass(frozen=True)
class KalmanParams:
    process_noise: float = 0.5
    obs_sigma: float = 1.5
    init_velocity_var: float = 100.0

    def __post_init__(self):
        if self.process_noise < 0:
            raise ValueError(f"Process noise must be non-negative, got {self.process_noise}")
        if self.obs_sigma <= 0:
            raise ValueError(f"Observation sigma must be positive, got {self.obs_sigma}")
        if self.init_velocity_var <= 0:
            raise ValueError(f"Initial velocity variance must be positive, got {self.init_velocity_var}")

    @property
    def transition(self):
        F = np.eye(STATE_DIM)
        F[0, 2] = F[1, 3] = 1.0
        return F

    @property
    def observation(self):
        return np.eye(2, STATE_DIM)

    @property
    def process_covariance(self):
        """Discrete white-noise-acceleration model, one frame step, per axis"""
        Q = np.zeros((STATE_DIM, STATE_DIM))
        block = self.process_noise * np.array([[0.25, 0.5], [0.5, 1.0]])
        for axis in (0, 1):
            index = np.ix_([axis, axis + 2], [axis, axis + 2])
            Q[index] = block
        return Q

    @property
    def observation_covariance(self):
        return self.obs_sigma ** 2 * np.eye(2)


@dataclass(frozen=True, eq=False)
class CvKalmanState:
    mean: np.ndarray
    covariance: np.ndarray
    params: KalmanParams = KalmanParams()

    @property
    def position(self):
        return self.mean[:2]

    @property
    def velocity(self):
        return self.mean[2:]


@dataclass(frozen=True, eq=False)
class KalmanForecast:
    means: np.ndarray
    covariances: np.ndarray

    def __len__(self):
        return self.means.shape[0]


def _as_observations(observations, minimum):
    observations = np.asarray(observations, dtype=float)
    if observations.ndim != 2 or observations.shape[1] != 2:
        raise ValueError(f"Expected an (n, 2) pixel sequence, got shape {observations.shape}")
    if observations.shape[0] < minimum:
        raise TooFewObservations(f"Need at least {minimum} observations, got {observations.shape[0]}")
    if not np.all(np.isfinite(observations)):
        raise NonFiniteInput("Observations contain NaN or infinite values")
    return observations


def initial_state(observation, params=KalmanParams()):
    """First observation as position, zero velocity, variance R on position"""
    mean = np.array([observation[0], observation[1], 0.0, 0.0])
    r = params.obs_sigma ** 2
    covariance = np.diag([r, r, params.init_velocity_var, params.init_velocity_var])
    return CvKalmanState(mean=mean, covariance=covariance, params=params)


def predict_step(state):
    F = state.params.transition
    mean = F @ state.mean
    covariance = F @ state.covariance @ F.T + state.params.process_covariance
    return CvKalmanState(mean=mean, covariance=covariance, params=state.params)


def update_step(state, observation):
    """Measurement update in Joseph form"""
    H = state.params.observation
    R = state.params.observation_covariance
    P = state.covariance
    innovation = observation - H @ state.mean
    S = H @ P @ H.T + R
    K = np.linalg.solve(S, H @ P).T
    mean = state.mean + K @ innovation
    I_KH = np.eye(STATE_DIM) - K @ H
    covariance = I_KH @ P @ I_KH.T + K @ R @ K.T
    covariance = 0.5 * (covariance + covariance.T)
    return CvKalmanState(mean=mean, covariance=covariance, params=state.params)


def kalman_filter(observations, params=KalmanParams()):
    """
    Filter a pixel sequence with the CV model

    Args:
        observations: (n, 2) pixel positions, n >= 1
        params: KalmanParams

    Returns:
        Posterior CvKalmanState after the last observation
    """
    observations = _as_observations(observations, 1)
    state = initial_state(observations[0], params)
    for observation in observations[1:]:
        state = update_step(predict_step(state), observation)
    return state


def kalman_forecast(state, n):
    """n prediction steps without updates"""
    if n < 1:
        raise ValueError(f"Forecast length must be positive, got {n}")
    means = np.empty((n, 2))
    covariances = np.empty((n, 2, 2))
    for step in range(n):
        state = predict_step(state)
        means[step] = state.position
        covariances[step] = state.covariance[np.ix_(POSITION, POSITION)]
    return KalmanForecast(means=means, covariances=covariances)


def linear_forecast(observations, n, fit="lstsq"):
    """
    Constant-velocity extrapolation from the last observation

    fit="lstsq" takes the least-squares slope over the whole window,
    fit="endpoint" the mean step between the first and last observation.
    """
    observations = _as_observations(observations, 2)
    if n < 1:
        raise ValueError(f"Forecast length must be positive, got {n}")
    if fit == "lstsq":
        frames = np.arange(observations.shape[0], dtype=float)
        slope = np.polyfit(frames, observations, 1)[0]
    elif fit == "endpoint":
        slope = (observations[-1] - observations[0]) / (observations.shape[0] - 1)
    else:
        raise ValueError(f"Unknown linear fit '{fit}'")
    steps = np.arange(1, n + 1, dtype=float)[:, None]
    return observations[-1] + steps * slope


class KalmanPredictor:
    name = "kalman"

    def __init__(self, params=KalmanParams()):
        self.params = params

    def forecast(self, observed, horizon):
        return kalman_forecast(kalman_filter(observed, self.params), horizon)

    def predict(self, observed, horizon):
        return self.forecast(observed, horizon).means


class LinearPredictor:
    name = "linear"

    def __init__(self, fit="lstsq"):
        if fit not in ("lstsq", "endpoint"):
            raise ValueError(f"Unknown linear fit '{fit}'")
        self.fit = fit

    def predict(self, observed, horizon):
        return linear_forecast(observed, horizon, fit=self.fit)
