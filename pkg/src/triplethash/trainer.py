"""Alternating optimization: closed-form code refresh, then modality-wise SGD.

Every epoch t draws its randomness from a stream derived from
(seed, t), so a run resumed from a checkpoint replays the exact batches
and triplets of an uninterrupted run; checkpoints need no RNG state.

Checkpoint directory layout: params_x.tdh (text encoder), params_y.tdh
(image encoder), codes.tdhbin, history.csv (epoch,j_inter,j_intra,j_re,total).
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .codes import (
    SimilarityGraph,
    build_graph,
    code_update_factor,
    load_codes,
    save_codes,
    update_codes,
)
from .dataio import BimodalDataset
from .encoder import (
    EncoderConfig,
    EncoderParams,
    backward,
    forward,
    init_params,
    load_params,
    save_params,
    sgd_step,
)
from .linalg import CholeskyFactor
from .loss import HyperParams, LossBreakdown, TripletLabel, grad_image, grad_text, total_loss

logger = logging.getLogger(__name__)

# spawn keys for the per-purpose RNG streams derived from one seed
_TEXT_INIT_STREAM = 0
_IMAGE_INIT_STREAM = 1
_EPOCH_STREAM_BASE = 2

PARAMS_X_FILE = "params_x.tdh"
PARAMS_Y_FILE = "params_y.tdh"
CODES_FILE = "codes.tdhbin"
HISTORY_FILE = "history.csv"


class TrainingDivergedError(RuntimeError):
    """The objective became non-finite; message names the offending terms."""


def _stream(seed: int, key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(key,)))


@dataclass(frozen=True)
class TrainConfig:
    code_length: int = 16
    hidden_dims: tuple[int, ...] = (256,)
    activation: str = "relu"
    batch_size: int = 128
    outer_iterations: int = 500
    learning_rate: float = 1e-2
    lr_decay: float = 0.5
    lr_decay_every: int = 100
    anchors_per_batch: int | None = None  # None: every batch instance anchors
    positives_per_anchor: int = 1
    negatives_per_anchor: int = 1
    seed: int = 0
    alpha: float | None = None  # None: code_length / 2
    gamma: float = 100.0
    eta: float = 50.0
    beta: float = 1.0
    anchor_only_gradients: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.outer_iterations < 0:
            raise ValueError(
                f"outer_iterations must be >= 0, got {self.outer_iterations}"
            )
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.lr_decay <= 0:
            raise ValueError(f"lr_decay must be > 0, got {self.lr_decay}")
        if self.lr_decay_every < 1:
            raise ValueError(f"lr_decay_every must be >= 1, got {self.lr_decay_every}")
        if self.positives_per_anchor < 1 or self.negatives_per_anchor < 1:
            raise ValueError("positives/negatives per anchor must be >= 1")
        if self.anchors_per_batch is not None and self.anchors_per_batch < 1:
            raise ValueError(
                f"anchors_per_batch must be >= 1, got {self.anchors_per_batch}"
            )
        object.__setattr__(self, "hidden_dims", tuple(self.hidden_dims))

    @property
    def hp(self) -> HyperParams:
        return HyperParams(
            self.code_length, self.alpha, self.gamma, self.eta, self.beta
        )

    def encoder_config(self, input_dim: int) -> EncoderConfig:
        return EncoderConfig(
            input_dim, self.hidden_dims, self.code_length, self.activation
        )


@dataclass
class TrainState:
    text_params: EncoderParams
    image_params: EncoderParams
    codes: np.ndarray = field(repr=False)  # unified binary codes, (k, N_train)
    image_out: np.ndarray = field(repr=False)
    text_out: np.ndarray = field(repr=False)
    iteration: int = 0
    loss_history: list[LossBreakdown] = field(default_factory=list)


def learning_rate_at(config: TrainConfig, iteration: int) -> float:
    return config.learning_rate * config.lr_decay ** (iteration // config.lr_decay_every)


def sample_triplets(
    labels: Sequence[frozenset],
    anchor_indices: Sequence[int],
    m1: int,
    m2: int,
    rng: np.random.Generator,
) -> list[TripletLabel]:
    """m1 x m2 triplets per anchor: positives share a label, negatives share none.

    The anchor itself is never its own positive. Anchors lacking either
    candidate pool are skipped with a logged warning; if every anchor is
    skipped the dataset cannot supply triplets and this raises.
    """
    label_sets = [frozenset(ls) for ls in labels]
    vocab = {lab: j for j, lab in enumerate(sorted({l for ls in label_sets for l in ls}, key=repr))}
    member = np.zeros((len(label_sets), len(vocab)))
    for i, ls in enumerate(label_sets):
        for lab in ls:
            member[i, vocab[lab]] = 1.0

    triplets: list[TripletLabel] = []
    skipped = 0
    all_idx = np.arange(len(label_sets))
    for a in anchor_indices:
        shares = member @ member[a] > 0
        pos = all_idx[shares & (all_idx != a)]
        neg = all_idx[~shares]
        if pos.size == 0 or neg.size == 0:
            skipped += 1
            continue
        ps = rng.choice(pos, size=m1, replace=pos.size < m1)
        for p in ps:
            ns = rng.choice(neg, size=m2, replace=neg.size < m2)
            for nn in ns:
                triplets.append(TripletLabel(int(a), int(p), int(nn)))
    if skipped:
        logger.warning(
            "sample_triplets: skipped %d/%d anchors lacking positive or negative candidates",
            skipped,
            len(anchor_indices),
        )
    if not triplets and len(anchor_indices) > 0:
        raise ValueError("no anchor had both a positive and a negative candidate")
    return triplets


def _train_view(dataset: BimodalDataset):
    idx = np.asarray(dataset.split.train)
    text = dataset.text_features[:, idx]
    image = dataset.image_features[:, idx]
    labels = [dataset.labels[i] for i in idx]
    return text, image, labels


def _modality_step(
    params: EncoderParams,
    features: np.ndarray,
    state: TrainState,
    labels: Sequence[frozenset],
    batch: np.ndarray,
    config: TrainConfig,
    lr: float,
    rng: np.random.Generator,
    modality: str,
) -> EncoderParams:
    """One mini-batch SGD step on one encoder; refreshes its output columns."""
    out, tape = forward(params, features[:, batch])
    own_out = state.text_out if modality == "text" else state.image_out
    own_out[:, batch] = out
    anchors = batch
    if config.anchors_per_batch is not None and config.anchors_per_batch < batch.size:
        anchors = rng.choice(batch, size=config.anchors_per_batch, replace=False)
    triplets = sample_triplets(
        labels, anchors, config.positives_per_anchor, config.negatives_per_anchor, rng
    )
    grad_fn = grad_text if modality == "text" else grad_image
    full_grad = grad_fn(
        state.image_out,
        state.text_out,
        state.codes,
        triplets,
        config.hp,
        anchor_only=config.anchor_only_gradients,
    )
    grads, _ = backward(params, tape, full_grad[:, batch])
    if lr == 0.0:
        return params
    return sgd_step(params, grads, lr)


def _check_finite(breakdown: LossBreakdown, iteration: int) -> None:
    bad = [
        name
        for name in ("j_inter", "j_intra", "j_re")
        if not math.isfinite(getattr(breakdown, name))
    ]
    if bad:
        raise TrainingDivergedError(
            f"non-finite loss at epoch {iteration}: {', '.join(bad)}"
        )


def init_state(
    dataset: BimodalDataset,
    config: TrainConfig,
    graph: SimilarityGraph | None = None,
    factor: CholeskyFactor | None = None,
) -> TrainState:
    text, image, labels = _train_view(dataset)
    text_params = init_params(
        config.encoder_config(text.shape[0]), _stream(config.seed, _TEXT_INIT_STREAM)
    )
    image_params = init_params(
        config.encoder_config(image.shape[0]), _stream(config.seed, _IMAGE_INIT_STREAM)
    )
    if graph is None:
        graph = build_graph(labels)
    if factor is None:
        factor = code_update_factor(graph, config.gamma, config.beta)
    text_out, _ = forward(text_params, text)
    image_out, _ = forward(image_params, image)
    codes = update_codes(image_out, text_out, graph, config.gamma, config.beta, factor)
    return TrainState(text_params, image_params, codes, image_out, text_out)


def train_epoch(
    state: TrainState,
    config: TrainConfig,
    dataset: BimodalDataset,
    graph: SimilarityGraph | None = None,
    factor: CholeskyFactor | None = None,
) -> TrainState:
    """One outer iteration: refresh codes, then text and image inner loops."""
    text, image, labels = _train_view(dataset)
    n = text.shape[1]
    if graph is None:
        graph = build_graph(labels)
    if factor is None:
        factor = code_update_factor(graph, config.gamma, config.beta)
    rng = _stream(config.seed, _EPOCH_STREAM_BASE + state.iteration)
    lr = learning_rate_at(config, state.iteration)

    state.text_out, _ = forward(state.text_params, text)
    state.image_out, _ = forward(state.image_params, image)
    state.codes = update_codes(
        state.image_out, state.text_out, graph, config.gamma, config.beta, factor
    )

    steps = math.ceil(n / config.batch_size)
    bs = min(config.batch_size, n)
    for _ in range(steps):
        batch = rng.choice(n, size=bs, replace=False)
        state.text_params = _modality_step(
            state.text_params, text, state, labels, batch, config, lr, rng, "text"
        )
    for _ in range(steps):
        batch = rng.choice(n, size=bs, replace=False)
        state.image_params = _modality_step(
            state.image_params, image, state, labels, batch, config, lr, rng, "image"
        )

    state.text_out, _ = forward(state.text_params, text)
    state.image_out, _ = forward(state.image_params, image)
    eval_triplets = sample_triplets(labels, np.arange(n), 1, 1, rng)
    breakdown = total_loss(
        state.image_out,
        state.text_out,
        state.codes,
        graph.laplacian,
        eval_triplets,
        config.hp,
    )
    _check_finite(breakdown, state.iteration)
    state.loss_history.append(breakdown)
    state.iteration += 1
    return state


def save_checkpoint(state: TrainState, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_params(state.text_params, out / PARAMS_X_FILE, "text")
    save_params(state.image_params, out / PARAMS_Y_FILE, "image")
    save_codes(out / CODES_FILE, state.codes)
    with open(out / HISTORY_FILE, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "j_inter", "j_intra", "j_re", "total"])
        for t, row in enumerate(state.loss_history, start=1):
            writer.writerow(
                [t, repr(row.j_inter), repr(row.j_intra), repr(row.j_re), repr(row.total)]
            )


def _load_history(path) -> list[LossBreakdown]:
    history = []
    with open(path, "r", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["epoch", "j_inter", "j_intra", "j_re", "total"]:
            raise ValueError(f"{path}: unexpected history header {header}")
        for row in reader:
            history.append(LossBreakdown(*(float(v) for v in row[1:5])))
    return history


def load_checkpoint(ckpt_dir, dataset: BimodalDataset) -> TrainState:
    """Rebuild a TrainState from a checkpoint directory; outputs are refreshed."""
    out = Path(ckpt_dir)
    text_params, tag_x = load_params(out / PARAMS_X_FILE)
    image_params, tag_y = load_params(out / PARAMS_Y_FILE)
    if (tag_x, tag_y) != ("text", "image"):
        raise ValueError(
            f"checkpoint modality tags ({tag_x!r}, {tag_y!r}) != ('text', 'image')"
        )
    codes = load_codes(out / CODES_FILE)
    history = _load_history(out / HISTORY_FILE)
    text, image, _ = _train_view(dataset)
    if codes.shape[1] != text.shape[1]:
        raise ValueError(
            f"checkpoint holds {codes.shape[1]} codes but the training split has "
            f"{text.shape[1]} instances"
        )
    text_out, _ = forward(text_params, text)
    image_out, _ = forward(image_params, image)
    return TrainState(
        text_params, image_params, codes, image_out, text_out, len(history), history
    )


def train(
    dataset: BimodalDataset,
    config: TrainConfig,
    out_dir=None,
    resume: bool = False,
) -> tuple[EncoderParams, EncoderParams, np.ndarray, list[LossBreakdown]]:
    """Run the outer loop to config.outer_iterations, checkpointing at the end."""
    _, _, labels = _train_view(dataset)
    graph = build_graph(labels)
    factor = code_update_factor(graph, config.gamma, config.beta)
    if resume:
        if out_dir is None:
            raise ValueError("resume requires out_dir")
        state = load_checkpoint(out_dir, dataset)
        if state.iteration > config.outer_iterations:
            raise ValueError(
                f"checkpoint already has {state.iteration} epochs, config asks for "
                f"{config.outer_iterations}"
            )
    else:
        state = init_state(dataset, config, graph, factor)
    while state.iteration < config.outer_iterations:
        train_epoch(state, config, dataset, graph, factor)
        if state.iteration % 25 == 0 or state.iteration == config.outer_iterations:
            logger.info(
                "epoch %d/%d total loss %.6g",
                state.iteration,
                config.outer_iterations,
                state.loss_history[-1].total,
            )
    if out_dir is not None:
        save_checkpoint(state, out_dir)
    return state.text_params, state.image_params, state.codes, state.loss_history


# --- config files: flat key=value text, `#` comments ---

def _parse_bool(v: str) -> bool:
    low = v.lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValueError(f"expected a boolean, got {v!r}")


def _parse_dims(v: str) -> tuple[int, ...]:
    return tuple(int(p) for p in v.split(",") if p.strip())


_CONFIG_PARSERS = {
    "code_length": int,
    "hidden_dims": _parse_dims,
    "activation": str,
    "batch_size": int,
    "outer_iterations": int,
    "learning_rate": float,
    "lr_decay": float,
    "lr_decay_every": int,
    "anchors_per_batch": int,
    "positives_per_anchor": int,
    "negatives_per_anchor": int,
    "seed": int,
    "alpha": float,
    "gamma": float,
    "eta": float,
    "beta": float,
    "anchor_only_gradients": _parse_bool,
}


def parse_config(text: str, source: str = "<config>") -> TrainConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ValueError(f"{source}:{lineno}: expected key=value, got {raw!r}")
        if key not in _CONFIG_PARSERS:
            raise ValueError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ValueError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            values[key] = _CONFIG_PARSERS[key](value)
        except ValueError as exc:
            raise ValueError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    return TrainConfig(**values)


def load_config(path) -> TrainConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read(), source=str(path))


def with_overrides(config: TrainConfig, **overrides) -> TrainConfig:
    return replace(config, **{k: v for k, v in overrides.items() if v is not None})
