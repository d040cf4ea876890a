"""Per-modality MLP encoders mapping feature vectors to real-valued code outputs.

Data flows column-wise: a batch is (input_dim, m), layer outputs are
(width, m), and the final layer (identity activation) has code_length rows.
Backward propagates the gradient of <upstream, outputs> to every weight and
bias exactly, so gradient checks against finite differences are meaningful.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .linalg import ShapeError

CHECKPOINT_MAGIC = b"TDHv1"
ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class EncoderConfig:
    input_dim: int
    hidden_dims: tuple[int, ...]
    code_length: int
    activation: str = "relu"

    def __post_init__(self):
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be >= 1, got {self.input_dim}")
        if self.code_length < 1:
            raise ValueError(f"code_length must be >= 1, got {self.code_length}")
        if any(d < 1 for d in self.hidden_dims):
            raise ValueError(f"hidden dims must be >= 1, got {self.hidden_dims}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(
                f"activation must be one of {ACTIVATIONS}, got {self.activation!r}"
            )
        object.__setattr__(self, "hidden_dims", tuple(self.hidden_dims))

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_dims, self.code_length)


@dataclass
class EncoderParams:
    """Weights (dims[i+1], dims[i]) and biases (dims[i+1],) per layer."""

    config: EncoderConfig
    weights: list[np.ndarray] = field(repr=False)
    biases: list[np.ndarray] = field(repr=False)

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            self.config,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
        )


@dataclass
class ActivationTape:
    """Intermediates from one forward pass, consumed by backward."""

    config: EncoderConfig
    batch: np.ndarray
    pre_activations: list[np.ndarray]
    hidden_outputs: list[np.ndarray]


def init_params(config: EncoderConfig, seed: int) -> EncoderParams:
    """Seeded normal weights with stddev 0.01*sqrt(2/fan_in); zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    dims = config.dims
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        stddev = 0.01 * np.sqrt(2.0 / fan_in)
        weights.append(rng.normal(0.0, stddev, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return EncoderParams(config, weights, biases)


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _activate_grad(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return (z > 0.0).astype(np.float64)
    t = np.tanh(z)
    return 1.0 - t * t


def forward(params: EncoderParams, batch: np.ndarray) -> tuple[np.ndarray, ActivationTape]:
    """Run the MLP on a (input_dim, m) batch; returns outputs and the tape."""
    batch = np.ascontiguousarray(batch, dtype=np.float64)
    if batch.ndim != 2:
        raise ValueError(f"batch must be 2-D, got ndim={batch.ndim}")
    cfg = params.config
    if batch.shape[0] != cfg.input_dim:
        raise ShapeError(
            "batch rows do not match encoder input_dim",
            (cfg.input_dim, -1),
            batch.shape,
        )
    if batch.shape[1] < 1:
        raise ValueError("batch must contain at least one column")

    pre, hidden = [], []
    a = batch
    n_layers = len(params.weights)
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = w @ a + b[:, None]
        pre.append(z)
        # hash layer is linear; hidden layers use the configured activation
        a = z if i == n_layers - 1 else _activate(z, cfg.activation)
        hidden.append(a)
    tape = ActivationTape(cfg, batch, pre, hidden)
    return a, tape


def backward(
    params: EncoderParams, tape: ActivationTape, upstream_grad: np.ndarray
) -> tuple[EncoderParams, np.ndarray]:
    """Gradients of <upstream_grad, outputs> w.r.t. params and the batch."""
    if tape.config != params.config or len(tape.pre_activations) != len(params.weights):
        raise ValueError("tape does not match encoder params")
    upstream_grad = np.ascontiguousarray(upstream_grad, dtype=np.float64)
    out_shape = tape.hidden_outputs[-1].shape
    if upstream_grad.shape != out_shape:
        raise ShapeError("upstream grad shape mismatch", out_shape, upstream_grad.shape)

    n_layers = len(params.weights)
    w_grads: list[np.ndarray | None] = [None] * n_layers
    b_grads: list[np.ndarray | None] = [None] * n_layers
    delta = upstream_grad
    for i in range(n_layers - 1, -1, -1):
        prev = tape.batch if i == 0 else tape.hidden_outputs[i - 1]
        w_grads[i] = delta @ prev.T
        b_grads[i] = delta.sum(axis=1)
        delta = params.weights[i].T @ delta
        if i > 0:
            delta = delta * _activate_grad(tape.pre_activations[i - 1], tape.config.activation)
    grads = EncoderParams(params.config, w_grads, b_grads)  # type: ignore[arg-type]
    return grads, delta


def sgd_step(params: EncoderParams, grads: EncoderParams, learning_rate: float) -> EncoderParams:
    """One gradient-descent step; returns new params, inputs untouched."""
    if learning_rate <= 0:
        raise ValueError(f"learning_rate must be positive, got {learning_rate}")
    if params.config != grads.config:
        raise ValueError("grads do not match encoder params")
    for w, gw in zip(params.weights, grads.weights):
        if w.shape != gw.shape:
            raise ShapeError("weight grad shape mismatch", w.shape, gw.shape)
    weights = [w - learning_rate * gw for w, gw in zip(params.weights, grads.weights)]
    biases = [b - learning_rate * gb for b, gb in zip(params.biases, grads.biases)]
    return EncoderParams(params.config, weights, biases)


def save_params(params: EncoderParams, path, modality: str) -> None:
    """Write the binary checkpoint format (see docs/formats.md)."""
    cfg = params.config
    tag = modality.encode("utf-8")
    act = cfg.activation.encode("utf-8")
    dims = cfg.dims
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<B", len(tag)))
        fh.write(tag)
        fh.write(struct.pack("<B", len(act)))
        fh.write(act)
        fh.write(struct.pack("<I", len(dims)))
        fh.write(struct.pack(f"<{len(dims)}I", *dims))
        for w, b in zip(params.weights, params.biases):
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_params(path) -> tuple[EncoderParams, str]:
    """Read a checkpoint; returns (params, modality tag)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
        (tag_len,) = struct.unpack("<B", fh.read(1))
        modality = fh.read(tag_len).decode("utf-8")
        (act_len,) = struct.unpack("<B", fh.read(1))
        activation = fh.read(act_len).decode("utf-8")
        (n_dims,) = struct.unpack("<I", fh.read(4))
        dims = struct.unpack(f"<{n_dims}I", fh.read(4 * n_dims))
        cfg = EncoderConfig(dims[0], tuple(dims[1:-1]), dims[-1], activation)
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            w = np.frombuffer(fh.read(8 * fan_out * fan_in), dtype="<f8")
            if w.size != fan_out * fan_in:
                raise ValueError(f"{path}: truncated weight block")
            weights.append(w.reshape(fan_out, fan_in).copy())
            b = np.frombuffer(fh.read(8 * fan_out), dtype="<f8")
            if b.size != fan_out:
                raise ValueError(f"{path}: truncated bias block")
            biases.append(b.copy())
        if fh.read(1):
            raise ValueError(f"{path}: trailing bytes after parameter blocks")
    return EncoderParams(cfg, weights, biases), modality
