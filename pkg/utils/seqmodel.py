"""
LSTM encoder with a single-Gaussian mixture density head, in numpy.

Each observed window is translated so its last position is the origin and
divided by coord_scale. An affine+ReLU embedding feeds an LSTM whose
final hidden state is mapped by one affine head to (mu_u, mu_v, s_u, s_v, r)
for every future step. Means are offsets in units of coord_scale, standard
deviations are exp(s) pixels and the correlation is tanh(r) clipped to
+-RHO_LIMIT. Gradients are computed analytically by backpropagation
through time.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from utils.baselines import KalmanPredictor, LinearPredictor
from utils.datagen import NOISE_STREAM, add_observation_noise, run_rng
from utils.errors import ConfigError, DivergedTraining, EmptyEvaluation, HorizonTooLarge, NonFiniteActivation
from utils.harness import extract_windows

logger = logging.getLogger(__name__)

RHO_LIMIT = 0.999
LOG_2PI = math.log(2.0 * math.pi)
PARAMETER_NAMES = ("W_emb", "b_emb", "W_x", "W_h", "b", "W_head", "b_head")
HEAD_OUTPUTS = 5
FORGET_BIAS = 1.0
CODING = "offset-from-last-observation"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 2000
    learning_rate: float = 0.01
    decay_rate: float = 0.95
    decay_fraction: float = 0.1
    batch_size: int = 64
    obs_len: int = 8
    horizon: int = 12
    embedding_dim: int = 64
    hidden_dim: int = 64
    coord_scale: float = 20.0
    noise_sigma: float = 1.5
    supervise_noisy: bool = False
    stride: int = 1
    seed: int = 0

    def __post_init__(self):
        for name in ("epochs", "batch_size", "obs_len", "horizon", "embedding_dim", "hidden_dim", "stride"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.learning_rate < 0 or self.noise_sigma < 0:
            raise ValueError("learning_rate and noise_sigma must be non-negative")
        if not 0 < self.decay_rate <= 1 or not 0 < self.decay_fraction <= 1:
            raise ValueError("decay_rate and decay_fraction must lie in (0, 1]")
        if self.coord_scale <= 0:
            raise ValueError(f"coord_scale must be positive, got {self.coord_scale}")


@dataclass(eq=False)
class MdnModel:
    params: dict
    obs_len: int = 8
    coord_scale: float = 20.0

    def __post_init__(self):
        missing = set(PARAMETER_NAMES) - set(self.params)
        if missing:
            raise ValueError(f"Missing parameters: {sorted(missing)}")
        self.params = {name: np.asarray(self.params[name], dtype=np.float64) for name in PARAMETER_NAMES}
        E, H = self.embedding_dim, self.hidden_dim
        expected = {
            "W_emb": (2, E), "b_emb": (E,),
            "W_x": (E, 4 * H), "W_h": (H, 4 * H), "b": (4 * H,),
            "W_head": (H, self.params["W_head"].shape[1]), "b_head": (self.params["W_head"].shape[1],),
        }
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise ValueError(f"Parameter {name} has shape {self.params[name].shape}, expected {shape}")
        if self.params["W_head"].shape[1] % HEAD_OUTPUTS:
            raise ValueError("Head width must be a multiple of 5")

    @property
    def embedding_dim(self):
        return self.params["W_emb"].shape[1]

    @property
    def hidden_dim(self):
        return self.params["W_h"].shape[0]

    @property
    def horizon(self):
        return self.params["W_head"].shape[1] // HEAD_OUTPUTS

    @classmethod
    def initialize(cls, config, rng):
        """Xavier-uniform weights, zero biases except the forget gate"""
        E, H, N = config.embedding_dim, config.hidden_dim, config.horizon

        def xavier(fan_in, fan_out):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-limit, limit, size=(fan_in, fan_out))

        b = np.zeros(4 * H)
        b[H:2 * H] = FORGET_BIAS
        params = {
            "W_emb": xavier(2, E), "b_emb": np.zeros(E),
            "W_x": xavier(E, 4 * H), "W_h": xavier(H, 4 * H), "b": b,
            "W_head": xavier(H, HEAD_OUTPUTS * N), "b_head": np.zeros(HEAD_OUTPUTS * N),
        }
        return cls(params=params, obs_len=config.obs_len, coord_scale=config.coord_scale)

    @classmethod
    def zeros(cls, embedding_dim, hidden_dim, horizon, obs_len=8, coord_scale=20.0):
        E, H = embedding_dim, hidden_dim
        params = {
            "W_emb": np.zeros((2, E)), "b_emb": np.zeros(E),
            "W_x": np.zeros((E, 4 * H)), "W_h": np.zeros((H, 4 * H)), "b": np.zeros(4 * H),
            "W_head": np.zeros((H, HEAD_OUTPUTS * horizon)), "b_head": np.zeros(HEAD_OUTPUTS * horizon),
        }
        return cls(params=params, obs_len=obs_len, coord_scale=coord_scale)

    def copy(self, params=None):
        params = params if params is not None else {name: value.copy() for name, value in self.params.items()}
        return MdnModel(params=params, obs_len=self.obs_len, coord_scale=self.coord_scale)


@dataclass(frozen=True, eq=False)
class GaussianForecast:
    means: np.ndarray
    sigmas: np.ndarray
    rho: np.ndarray

    def __len__(self):
        return self.means.shape[0]

    @property
    def covariances(self):
        su, sv = self.sigmas[:, 0], self.sigmas[:, 1]
        off = self.rho * su * sv
        return np.stack([np.stack([su ** 2, off], axis=-1), np.stack([off, sv ** 2], axis=-1)], axis=-2)

    def truncate(self, horizon):
        return GaussianForecast(self.means[:horizon], self.sigmas[:horizon], self.rho[:horizon])


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_model(cls, model):
        return cls(
            m={name: np.zeros_like(value) for name, value in model.params.items()},
            v={name: np.zeros_like(value) for name, value in model.params.items()},
        )


@dataclass
class TrainResult:
    model: MdnModel
    losses: list = field(default_factory=list)
    windows: int = 0


def encode_windows(observed, coord_scale):
    """Observed windows (B, T, 2) in px -> model inputs relative to the last observation"""
    observed = np.asarray(observed, dtype=float)
    return (observed - observed[:, -1:, :]) / coord_scale


def _forward_batch(params, inputs):
    """Raw head outputs (B, N, 5) and the activations needed for backpropagation"""
    B, T, _ = inputs.shape
    H = params["W_h"].shape[0]
    pre_embedding = inputs @ params["W_emb"] + params["b_emb"]
    embedding = np.maximum(pre_embedding, 0.0)

    h = np.zeros((B, H))
    c = np.zeros((B, H))
    steps = []
    for t in range(T):
        a = embedding[:, t] @ params["W_x"] + h @ params["W_h"] + params["b"]
        i = expit(a[:, :H])
        f = expit(a[:, H:2 * H])
        o = expit(a[:, 2 * H:3 * H])
        g = np.tanh(a[:, 3 * H:])
        c_prev, h_prev = c, h
        c = f * c_prev + i * g
        tanh_c = np.tanh(c)
        h = o * tanh_c
        steps.append((h_prev, c_prev, i, f, o, g, tanh_c))

    head = h @ params["W_head"] + params["b_head"]
    if not np.all(np.isfinite(head)):
        raise NonFiniteActivation("Head output is not finite")
    cache = {"inputs": inputs, "pre_embedding": pre_embedding, "embedding": embedding, "steps": steps, "h": h}
    return head.reshape(B, -1, HEAD_OUTPUTS), cache


def _decode(head, coord_scale):
    """Head outputs -> (mean offsets px, log sigmas, sigmas, raw tanh, clipped rho)"""
    offsets = coord_scale * head[..., 0:2]
    log_sigmas = head[..., 2:4]
    raw_rho = np.tanh(head[..., 4])
    return offsets, log_sigmas, np.exp(log_sigmas), raw_rho, np.clip(raw_rho, -RHO_LIMIT, RHO_LIMIT)


def _step_nll(residual, log_sigmas, sigmas, rho):
    """Bivariate Gaussian negative log-density per step, residual = target - mean"""
    a = residual[..., 0] / sigmas[..., 0]
    b = residual[..., 1] / sigmas[..., 1]
    q = 1.0 - rho ** 2
    z = a ** 2 - 2.0 * rho * a * b + b ** 2
    return LOG_2PI + log_sigmas[..., 0] + log_sigmas[..., 1] + 0.5 * np.log(q) + z / (2.0 * q)


def forward(model, window):
    """
    Forecast distribution for one observed window of obs_len pixel positions
    """
    window = np.asarray(window, dtype=float)
    if window.shape != (model.obs_len, 2):
        raise ValueError(f"Expected a ({model.obs_len}, 2) window, got {window.shape}")
    head, _ = _forward_batch(model.params, encode_windows(window[None], model.coord_scale))
    offsets, _, sigmas, _, rho = _decode(head[0], model.coord_scale)
    return GaussianForecast(means=window[-1] + offsets, sigmas=sigmas, rho=rho)


def nll_loss(forecast, targets):
    """Summed negative log-likelihood of the targets under the forecast"""
    targets = np.asarray(targets, dtype=float)
    if targets.shape != forecast.means.shape:
        raise ValueError(f"Targets shape {targets.shape} does not match forecast {forecast.means.shape}")
    residual = targets - forecast.means
    return float(np.sum(_step_nll(residual, np.log(forecast.sigmas), forecast.sigmas, forecast.rho)))


def batch_loss_and_gradients(model, inputs, target_offsets):
    """
    Mean per-window NLL over a batch and its gradient for every parameter

    Args:
        model: MdnModel
        inputs: (B, obs_len, 2) encoded windows
        target_offsets: (B, N, 2) future positions minus the last observation, in px

    Returns:
        (loss, dict of gradients keyed like model.params)
    """
    params = model.params
    B = inputs.shape[0]
    head, cache = _forward_batch(params, inputs)
    offsets, log_sigmas, sigmas, raw_rho, rho = _decode(head, model.coord_scale)

    residual = target_offsets - offsets
    loss = float(np.sum(_step_nll(residual, log_sigmas, sigmas, rho))) / B

    a = residual[..., 0] / sigmas[..., 0]
    b = residual[..., 1] / sigmas[..., 1]
    q = 1.0 - rho ** 2
    z = a ** 2 - 2.0 * rho * a * b + b ** 2
    d_head = np.empty_like(head)
    d_head[..., 0] = -model.coord_scale * (a - rho * b) / (q * sigmas[..., 0])
    d_head[..., 1] = -model.coord_scale * (b - rho * a) / (q * sigmas[..., 1])
    d_head[..., 2] = 1.0 - a * (a - rho * b) / q
    d_head[..., 3] = 1.0 - b * (b - rho * a) / q
    d_rho = -rho / q - a * b / q + rho * z / q ** 2
    unclipped = np.abs(raw_rho) < RHO_LIMIT
    d_head[..., 4] = d_rho * (1.0 - raw_rho ** 2) * unclipped
    d_head = d_head.reshape(B, -1) / B

    grads = {name: np.zeros_like(value) for name, value in params.items()}
    grads["W_head"] = cache["h"].T @ d_head
    grads["b_head"] = d_head.sum(axis=0)
    dh = d_head @ params["W_head"].T
    dc = np.zeros_like(dh)
    d_embedding = np.zeros_like(cache["embedding"])

    for t in reversed(range(inputs.shape[1])):
        h_prev, c_prev, i, f, o, g, tanh_c = cache["steps"][t]
        do = dh * tanh_c
        dc = dc + dh * o * (1.0 - tanh_c ** 2)
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        dc = dc * f
        da = np.concatenate([
            di * i * (1.0 - i),
            df * f * (1.0 - f),
            do * o * (1.0 - o),
            dg * (1.0 - g ** 2),
        ], axis=1)
        grads["W_x"] += cache["embedding"][:, t].T @ da
        grads["W_h"] += h_prev.T @ da
        grads["b"] += da.sum(axis=0)
        d_embedding[:, t] = da @ params["W_x"].T
        dh = da @ params["W_h"].T

    d_pre = d_embedding * (cache["pre_embedding"] > 0)
    grads["W_emb"] = np.einsum("btk,bte->ke", cache["inputs"], d_pre)
    grads["b_emb"] = d_pre.sum(axis=(0, 1))
    return loss, grads


def gradients(model, window, targets):
    """Analytic gradients of nll_loss(forward(model, window), targets)"""
    window = np.asarray(window, dtype=float)
    targets = np.asarray(targets, dtype=float)
    inputs = encode_windows(window[None], model.coord_scale)
    _, grads = batch_loss_and_gradients(model, inputs, (targets - window[-1])[None])
    return grads


def adam_step(model, grads, state, learning_rate):
    """One bias-corrected ADAM update; returns the new model and optimizer state"""
    step = state.step + 1
    m, v, params = {}, {}, {}
    for name, value in model.params.items():
        g = grads[name]
        m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        m_hat = m[name] / (1.0 - state.beta1 ** step)
        v_hat = v[name] / (1.0 - state.beta2 ** step)
        params[name] = value - learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    new_state = AdamState(m=m, v=v, step=step, beta1=state.beta1, beta2=state.beta2, eps=state.eps)
    return model.copy(params), new_state


def learning_rate(config, epoch):
    """Step decay: multiply by decay_rate after every block of epochs * decay_fraction epochs"""
    block = max(1, round(config.epochs * config.decay_fraction))
    return config.learning_rate * config.decay_rate ** (epoch // block)


def training_windows(tracks, config):
    """Encoded inputs and target offsets from every window of every track"""
    tracks = list(tracks)
    has_noise = any(getattr(track, "clean_px", None) is not None for track in tracks)
    if not has_noise and config.noise_sigma > 0:
        # 2**31 keeps the stream disjoint from the generator's run indices
        tracks = [
            add_observation_noise(track, config.noise_sigma, run_rng(config.seed, 2 ** 31 + index, NOISE_STREAM))
            for index, track in enumerate(tracks)
        ]
    windows = []
    for track in tracks:
        windows.extend(extract_windows(
            track, config.obs_len, config.horizon, config.stride, noisy_targets=config.supervise_noisy
        ))
    if not windows:
        raise EmptyEvaluation(f"No training window of {config.obs_len + config.horizon} frames")
    observed = np.stack([window.observed for window in windows])
    future = np.stack([window.future for window in windows])
    return encode_windows(observed, config.coord_scale), future - observed[:, -1:, :]


def train(tracks, config=TrainConfig(), progress=None):
    """
    Minibatch ADAM over all sliding windows

    Args:
        tracks: Training tracks
        config: TrainConfig
        progress: Optional callable(epoch, epochs, loss)

    Returns:
        TrainResult with the model and the per-epoch mean window NLL
    """
    inputs, targets = training_windows(tracks, config)
    count = inputs.shape[0]
    rng = np.random.default_rng(config.seed)
    model = MdnModel.initialize(config, rng)
    state = AdamState.for_model(model)
    logger.info("Training on %d windows for %d epochs", count, config.epochs)

    losses = []
    previous_rate = None
    for epoch in range(config.epochs):
        rate = learning_rate(config, epoch)
        if rate != previous_rate:
            logger.info("Epoch %d: learning rate %.6g", epoch + 1, rate)
            previous_rate = rate
        order = rng.permutation(count)
        total = 0.0
        for start in range(0, count, config.batch_size):
            batch = order[start:start + config.batch_size]
            try:
                loss, grads = batch_loss_and_gradients(model, inputs[batch], targets[batch])
            except NonFiniteActivation as exc:
                raise DivergedTraining(epoch + 1, float("nan")) from exc
            if not math.isfinite(loss):
                raise DivergedTraining(epoch + 1, loss)
            total += loss * len(batch)
            model, state = adam_step(model, grads, state, rate)
        epoch_loss = total / count
        losses.append(epoch_loss)
        logger.debug("Epoch %d: mean NLL %.5f", epoch + 1, epoch_loss)
        if progress is not None:
            progress(epoch + 1, config.epochs, epoch_loss)
    return TrainResult(model=model, losses=losses, windows=count)


def predict(model, observed, horizon):
    """Forecast truncated to the first horizon steps"""
    if not 1 <= horizon <= model.horizon:
        raise HorizonTooLarge(f"Horizon {horizon} outside 1..{model.horizon}")
    return forward(model, observed).truncate(horizon)


class MdnPredictor:
    name = "mdn"

    def __init__(self, model):
        self.model = model

    def forecast(self, observed, horizon):
        return predict(self.model, observed, horizon)

    def predict(self, observed, horizon):
        return self.forecast(observed, horizon).means


METHODS = ("mdn", "kalman", "linear")


def build_predictors(names, model=None):
    """
    Predictors for the named methods, in the given order

    Raises:
        ConfigError: unknown name, or 'mdn' without a model
    """
    predictors = []
    for name in names:
        if name == "kalman":
            predictors.append(KalmanPredictor())
        elif name == "linear":
            predictors.append(LinearPredictor())
        elif name == "mdn":
            if model is None:
                raise ConfigError("Method 'mdn' needs a trained model")
            predictors.append(MdnPredictor(model))
        else:
            raise ConfigError(f"Unknown method '{name}', expected one of {', '.join(METHODS)}")
    return predictors
