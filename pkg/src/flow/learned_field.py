"""A small trainable velocity network and its conditional flow-matching trainer.

Architecture: input [x; 8 Fourier time features; one-hot condition] ->
tanh(64) -> tanh(64) -> linear(d). Parameters live in one flat float64 vector
ordered W1, b1, W2, b2, W3, b3 (weights row-major, shape (out, in)); the same
order is used by the checkpoint file. Gradients are hand-written backprop for
this fixed architecture.
"""

from pathlib import Path

import numpy as np
from loguru import logger
from numpy.typing import NDArray
from pydantic import BaseModel, ConfigDict, Field, model_validator
from tqdm import tqdm

from src.config.models import TrainConfig
from src.core.domain_models import Condition, EditTask, FloatArray, Latent, check_dim
from src.core.errors import ConfigError, NumericFailureError, TrainingDivergedError
from src.core.file_manager import write_bytes_atomic
from src.core.rng import RngStream
from src.flow.fields import combine_guidance
from src.flow.gmm_oracle import sample_from_keys

N_FREQUENCIES = 4
N_TIME_FEATURES = 2 * N_FREQUENCIES
CONDITIONS: tuple[Condition, ...] = (Condition.SRC, Condition.TAR, Condition.UNCOND)
N_CONDITIONS = len(CONDITIONS)

CHECKPOINT_MAGIC = b"AFBMLP\x00\x00"
CHECKPOINT_VERSION = 1
_HEADER_WORDS = 4  # version, d, hidden 1, hidden 2

Layer = tuple[NDArray[np.float64], NDArray[np.float64]]


def _layer_shapes(dim: int, hidden: tuple[int, int]) -> list[tuple[int, int]]:
    n_in = dim + N_TIME_FEATURES + N_CONDITIONS
    return [(hidden[0], n_in), (hidden[1], hidden[0]), (dim, hidden[1])]


def parameter_count(dim: int, hidden: tuple[int, int]) -> int:
    return sum(n_out * n_in + n_out for n_out, n_in in _layer_shapes(dim, hidden))


class MlpField(BaseModel):
    """Parameters of the velocity MLP."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    dim: int = Field(..., ge=1)
    hidden: tuple[int, int] = (64, 64)
    params: FloatArray

    @model_validator(mode="after")
    def validate_size(self) -> "MlpField":
        expected = parameter_count(self.dim, self.hidden)
        if self.params.shape != (expected,):
            raise ValueError(f"expected {expected} parameters, got shape {self.params.shape}")
        return self

    @property
    def layers(self) -> list[Layer]:
        """(W, b) views into the flat parameter vector."""
        out: list[Layer] = []
        offset = 0
        for n_out, n_in in _layer_shapes(self.dim, self.hidden):
            w = self.params[offset : offset + n_out * n_in].reshape(n_out, n_in)
            offset += n_out * n_in
            b = self.params[offset : offset + n_out]
            offset += n_out
            out.append((w, b))
        return out

    def with_params(self, params: NDArray[np.float64]) -> "MlpField":
        return MlpField(dim=self.dim, hidden=self.hidden, params=params)


class TrainingBatch(BaseModel):
    """Pairs (x0, x1) with times and condition indices into ``CONDITIONS``."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    x0: FloatArray
    x1: FloatArray
    t: FloatArray
    cond: tuple[int, ...]

    @model_validator(mode="after")
    def validate_batch(self) -> "TrainingBatch":
        n = self.x0.shape[0]
        if n == 0:
            raise ValueError("batch must not be empty")
        if self.x1.shape != self.x0.shape or self.t.shape != (n,) or len(self.cond) != n:
            raise ValueError("batch arrays disagree in length")
        return self

    @property
    def x_t(self) -> NDArray[np.float64]:
        out: NDArray[np.float64] = (1.0 - self.t)[:, None] * self.x0 + self.t[:, None] * self.x1
        return out

    @property
    def target(self) -> NDArray[np.float64]:
        out: NDArray[np.float64] = self.x1 - self.x0
        return out


# --- Forward pass ---


def time_features(t: NDArray[np.float64]) -> NDArray[np.float64]:
    """sin and cos of 2^j * pi * t for j = 0..3, shape (n, 8)."""
    freqs = (2.0 ** np.arange(N_FREQUENCIES)) * np.pi
    arg = np.asarray(t, dtype=np.float64)[:, None] * freqs[None, :]
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=1)


def _network_inputs(
    x: NDArray[np.float64], t: NDArray[np.float64], cond_idx: NDArray[np.int64]
) -> NDArray[np.float64]:
    one_hot = np.eye(N_CONDITIONS)[cond_idx]
    return np.concatenate([x, time_features(t), one_hot], axis=1)


def _forward(
    field: MlpField, z: NDArray[np.float64]
) -> tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.float64]]:
    (w1, b1), (w2, b2), (w3, b3) = field.layers
    h1 = np.tanh(z @ w1.T + b1)
    h2 = np.tanh(h1 @ w2.T + b2)
    return h2 @ w3.T + b3, h1, h2


def eval_mlp(field: MlpField, x: Latent, t: float, cond: Condition) -> Latent:
    """Velocity prediction for one latent (d,) or a batch (n, d) at a shared t."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    if not np.all(np.isfinite(field.params)):
        raise NumericFailureError("non-finite network parameters")
    arr = np.asarray(x, dtype=np.float64)
    check_dim(arr, field.dim)
    batch = arr[None, :] if arr.ndim == 1 else arr
    n = batch.shape[0]
    z = _network_inputs(
        batch, np.full(n, t), np.full(n, CONDITIONS.index(Condition(cond)), dtype=np.int64)
    )
    out, _, _ = _forward(field, z)
    return out[0] if arr.ndim == 1 else out


# --- Loss and gradients ---


def cfm_loss(field: MlpField, batch: TrainingBatch) -> float:
    """Mean squared error of the prediction at x_t against x1 - x0."""
    return loss_and_gradient(field, batch, with_gradient=False)[0]


def loss_and_gradient(
    field: MlpField, batch: TrainingBatch, with_gradient: bool = True
) -> tuple[float, NDArray[np.float64]]:
    """Loss and its gradient with respect to the flat parameter vector."""
    z = _network_inputs(batch.x_t, batch.t, np.asarray(batch.cond, dtype=np.int64))
    out, h1, h2 = _forward(field, z)
    resid = out - batch.target
    n = resid.shape[0]
    loss = float(np.sum(resid**2) / n)
    if not with_gradient:
        return loss, np.zeros(0)

    (_, _), (w2, _), (w3, _) = field.layers
    g_out = 2.0 * resid / n
    g_w3 = g_out.T @ h2
    g_b3 = g_out.sum(axis=0)
    g_a2 = (g_out @ w3) * (1.0 - h2**2)
    g_w2 = g_a2.T @ h1
    g_b2 = g_a2.sum(axis=0)
    g_a1 = (g_a2 @ w2) * (1.0 - h1**2)
    g_w1 = g_a1.T @ z
    g_b1 = g_a1.sum(axis=0)
    grad = np.concatenate(
        [g.ravel() for g in (g_w1, g_b1, g_w2, g_b2, g_w3, g_b3)]
    )
    return loss, grad


def numeric_grad_check(
    field: MlpField, batch: TrainingBatch, eps: float = 1e-5, n_params: int = 50, seed: int = 0
) -> float:
    """Max relative error between backprop and central differences.

    Compares ``n_params`` parameters picked at random (all of them if the
    network is smaller). Relative error is |a - n| / max(|a|, |n|, 1e-5).
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    _, analytic = loss_and_gradient(field, batch)
    total = field.params.size
    order = np.argsort(RngStream(seed=seed).uniforms(total), kind="stable")
    picked = np.sort(order[: min(n_params, total)])

    worst = 0.0
    base = np.array(field.params, copy=True)
    for idx in picked:
        plus = base.copy()
        plus[idx] += eps
        minus = base.copy()
        minus[idx] -= eps
        numeric = (
            cfm_loss(field.with_params(plus), batch) - cfm_loss(field.with_params(minus), batch)
        ) / (2.0 * eps)
        a = float(analytic[idx])
        rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-5)
        worst = max(worst, rel)
    logger.debug(f"gradient check over {picked.size} parameters: max rel err {worst:.2e}")
    return worst


# --- Training ---


def init_mlp(dim: int, seed: int, hidden_width: int = 64) -> MlpField:
    """Seeded init: weights N(0, 1/fan_in), zero biases."""
    hidden = (hidden_width, hidden_width)
    stream = RngStream(seed=seed).child(0)
    chunks = []
    for layer_idx, (n_out, n_in) in enumerate(_layer_shapes(dim, hidden)):
        w = stream.child(layer_idx).normals(n_out * n_in) / np.sqrt(n_in)
        chunks.extend([w, np.zeros(n_out)])
    return MlpField(dim=dim, hidden=hidden, params=np.concatenate(chunks))


def zero_mlp(dim: int, hidden_width: int = 64) -> MlpField:
    hidden = (hidden_width, hidden_width)
    return MlpField(dim=dim, hidden=hidden, params=np.zeros(parameter_count(dim, hidden)))


def sample_training_batch(task: EditTask, size: int, stream: RngStream) -> TrainingBatch:
    """Conditions uniform over SRC/TAR/UNCOND, x0 from that mixture, x1 ~ N(0, I), t ~ U(0, 1)."""
    cond = np.minimum((stream.child(0).uniforms(size) * N_CONDITIONS).astype(np.int64), 2)
    keys = stream.child(1).child_keys(size)
    x0 = np.empty((size, task.dim))
    for c_idx, c in enumerate(CONDITIONS):
        rows = cond == c_idx
        if np.any(rows):
            x0[rows] = sample_from_keys(task.mixture(c), keys[rows])
    x1 = stream.child(2).batch_normals(size, task.dim)
    t = stream.child(3).uniforms(size)
    return TrainingBatch(x0=x0, x1=x1, t=t, cond=tuple(int(c) for c in cond))


def train_field(
    task: EditTask,
    cfg: TrainConfig,
    loss_trace: list[float] | None = None,
    progress: bool = False,
) -> MlpField:
    """SGD with momentum on the flow-matching loss.

    Batch ``step`` is drawn from stream (seed, 1, step), so a fixed seed gives
    bit-identical parameters. Per-step losses are appended to ``loss_trace``.
    """
    field = init_mlp(task.dim, cfg.seed, cfg.hidden_width)
    params = np.array(field.params, copy=True)
    velocity = np.zeros_like(params)
    data_stream = RngStream(seed=cfg.seed).child(1)
    logger.info(f"Training MLP field on '{task.name}' for {cfg.steps} steps")

    bar = tqdm(range(cfg.steps), desc="train", disable=not progress)
    for step in bar:
        batch = sample_training_batch(task, cfg.batch_size, data_stream.child(step))
        loss, grad = loss_and_gradient(field.with_params(params), batch)
        if not np.isfinite(loss) or loss > cfg.divergence_threshold:
            raise TrainingDivergedError(f"loss {loss:.3e} exceeded threshold", step_index=step)
        velocity = cfg.momentum * velocity + grad
        params = params - cfg.learning_rate * velocity
        if loss_trace is not None:
            loss_trace.append(loss)
        if step % 1000 == 0:
            bar.set_postfix(loss=f"{loss:.4f}")
            logger.debug(f"step {step}: loss {loss:.5f}")

    logger.success(f"Training finished after {cfg.steps} steps")
    return field.with_params(params)


class MlpVelocityField:
    """Guided velocity field backed by a trained MLP; UNCOND is the third one-hot."""

    def __init__(self, mlp: MlpField) -> None:
        self.mlp = mlp

    @property
    def dim(self) -> int:
        return self.mlp.dim

    def __call__(self, x: Latent, t: float, cond: Condition, scale: float) -> Latent:
        v_u = eval_mlp(self.mlp, x, t, Condition.UNCOND)
        if cond == Condition.UNCOND or scale == 0.0:
            return v_u
        return combine_guidance(v_u, eval_mlp(self.mlp, x, t, cond), scale)


# --- Checkpoints ---


def save_checkpoint(field: MlpField, path: Path) -> None:
    """Write magic, header words and little-endian float64 parameters atomically."""
    header = np.array([CHECKPOINT_VERSION, field.dim, *field.hidden], dtype="<u4")
    payload = CHECKPOINT_MAGIC + header.tobytes() + field.params.astype("<f8").tobytes()
    write_bytes_atomic(Path(path), payload)
    logger.info(f"Saved checkpoint ({field.params.size} parameters) to {path}")


def load_checkpoint(path: Path) -> MlpField:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    payload = path.read_bytes()
    n_magic = len(CHECKPOINT_MAGIC)
    header_end = n_magic + 4 * _HEADER_WORDS
    if payload[:n_magic] != CHECKPOINT_MAGIC or len(payload) < header_end:
        raise ConfigError(f"{path} is not a field checkpoint", key="field")
    version, dim, h1, h2 = (int(v) for v in np.frombuffer(payload[n_magic:header_end], "<u4"))
    if version != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {version}", key="field")
    body = payload[header_end:]
    if len(body) % 8:
        raise ConfigError(f"{path} is truncated", key="field")
    params = np.frombuffer(body, dtype="<f8").astype(np.float64)
    if params.size != parameter_count(dim, (h1, h2)):
        raise ConfigError(f"{path} holds {params.size} parameters, header disagrees", key="field")
    return MlpField(dim=dim, hidden=(h1, h2), params=params)
