"""Bimodal dataset generation, CSV loading/saving, and train/query/retrieval splits.

File formats (see docs/formats.md):
  - features_x.csv / features_y.csv: one instance per line, decimal values,
    comma-separated; column i of the in-memory (dim, N) matrix is line i+1.
  - labels.csv: one instance per line, `id,label1;label2;...`.
Modality x is text, modality y is image, throughout the package.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

LATENT_DIM = 16


class DataFormatError(ValueError):
    """A data file failed to parse; message carries file and line."""


@dataclass(frozen=True)
class SplitSpec:
    """Recipe for a deterministic split: query fraction, optional train subsample."""

    query_fraction: float = 0.1
    train_size: int | None = None
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.query_fraction < 1.0:
            raise ValueError(
                f"query_fraction must be in (0, 1), got {self.query_fraction}"
            )


@dataclass(frozen=True)
class Split:
    train: np.ndarray
    query: np.ndarray
    retrieval: np.ndarray


@dataclass
class BimodalDataset:
    """Aligned text/image features with multi-label annotations.

    text_features is (d_x, N), image_features is (d_y, N); column i of each
    describes the same instance, identified by ids[i].
    """

    text_features: np.ndarray = field(repr=False)
    image_features: np.ndarray = field(repr=False)
    labels: list[frozenset]
    ids: list[str]
    split: Split

    @property
    def n(self) -> int:
        return self.text_features.shape[1]


def make_split(n: int, spec: SplitSpec) -> Split:
    """Disjoint query/retrieval split; training drawn from the retrieval set."""
    rng = np.random.default_rng(spec.seed)
    order = rng.permutation(n)
    n_query = max(1, int(round(n * spec.query_fraction)))
    if n_query >= n:
        raise ValueError(f"query_fraction {spec.query_fraction} leaves no retrieval set")
    query = np.sort(order[:n_query])
    retrieval = np.sort(order[n_query:])
    if spec.train_size is None:
        train = retrieval.copy()
    else:
        if not 1 <= spec.train_size <= retrieval.size:
            raise ValueError(
                f"train_size must be in 1..{retrieval.size}, got {spec.train_size}"
            )
        train = np.sort(rng.choice(retrieval, size=spec.train_size, replace=False))
    return Split(train=train, query=query, retrieval=retrieval)


def generate_synthetic(
    num_classes: int,
    per_class: int,
    text_dim: int,
    image_dim: int,
    noise_sigma: float,
    multilabel_rate: float = 0.0,
    seed: int = 0,
    split_spec: SplitSpec | None = None,
) -> BimodalDataset:
    """Synthetic aligned bimodal corpus with class structure in both modalities.

    Each class gets a latent prototype; per-modality features are a fixed
    linear map of the instance's prototype plus N(0, noise_sigma^2) noise.
    A multilabel_rate fraction of instances picks up a second class label
    and the average of the two prototypes.
    """
    if num_classes < 2:
        raise ValueError(f"num_classes must be >= 2, got {num_classes}")
    if per_class < 2:
        raise ValueError(f"per_class must be >= 2, got {per_class}")
    if text_dim < 1 or image_dim < 1:
        raise ValueError("feature dimensions must be >= 1")
    if noise_sigma < 0:
        raise ValueError(f"noise_sigma must be >= 0, got {noise_sigma}")
    if not 0.0 <= multilabel_rate <= 1.0:
        raise ValueError(f"multilabel_rate must be in [0, 1], got {multilabel_rate}")

    rng = np.random.default_rng(seed)
    n = num_classes * per_class
    prototypes = rng.normal(0.0, 1.0, size=(num_classes, LATENT_DIM))
    text_map = rng.normal(0.0, 1.0 / np.sqrt(LATENT_DIM), size=(text_dim, LATENT_DIM))
    image_map = rng.normal(0.0, 1.0 / np.sqrt(LATENT_DIM), size=(image_dim, LATENT_DIM))

    latents = np.zeros((LATENT_DIM, n))
    labels: list[frozenset] = []
    for i in range(n):
        primary = i // per_class
        label_set = {f"c{primary}"}
        latent = prototypes[primary]
        if multilabel_rate > 0 and rng.random() < multilabel_rate:
            extra = int(rng.integers(num_classes - 1))
            extra = extra + 1 if extra >= primary else extra
            label_set.add(f"c{extra}")
            latent = 0.5 * (prototypes[primary] + prototypes[extra])
        latents[:, i] = latent
        labels.append(frozenset(label_set))

    text = text_map @ latents + noise_sigma * rng.normal(size=(text_dim, n))
    image = image_map @ latents + noise_sigma * rng.normal(size=(image_dim, n))
    width = max(4, len(str(n - 1)))
    ids = [f"{i:0{width}d}" for i in range(n)]
    spec = split_spec or SplitSpec(seed=seed)
    return BimodalDataset(text, image, labels, ids, make_split(n, spec))


def _write_features(path, features: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for col in features.T:
            fh.write(",".join(repr(float(v)) for v in col) + "\n")


def read_features(path) -> np.ndarray:
    rows: list[list[float]] = []
    width = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                values = [float(v) for v in line.split(",")]
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from None
            if width is None:
                width = len(values)
            elif len(values) != width:
                raise DataFormatError(
                    f"{path}:{lineno}: expected {width} values, got {len(values)}"
                )
            rows.append(values)
    if not rows:
        raise DataFormatError(f"{path}: no feature rows")
    return np.asarray(rows, dtype=np.float64).T


def _write_labels(path, ids, labels) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for item_id, ls in zip(ids, labels):
            fh.write(f"{item_id},{';'.join(sorted(ls))}\n")


def read_labels(path) -> tuple[list[str], list[frozenset]]:
    ids: list[str] = []
    labels: list[frozenset] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            first, _, rest = line.partition(",")
            if not first:
                raise DataFormatError(f"{path}:{lineno}: empty identifier")
            label_set = frozenset(l for l in rest.split(";") if l)
            if not label_set:
                raise DataFormatError(f"{path}:{lineno}: instance has no labels")
            ids.append(first)
            labels.append(label_set)
    if not ids:
        raise DataFormatError(f"{path}: no label rows")
    if len(set(ids)) != len(ids):
        raise DataFormatError(f"{path}: duplicate identifiers")
    return ids, labels


def save_dataset(dataset: BimodalDataset, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_features(out / "features_x.csv", dataset.text_features)
    _write_features(out / "features_y.csv", dataset.image_features)
    _write_labels(out / "labels.csv", dataset.ids, dataset.labels)


def load_dataset(
    features_x_path,
    features_y_path,
    labels_path,
    split_spec: SplitSpec | Split | None = None,
) -> BimodalDataset:
    """Load a dataset from its three CSV files and derive (or adopt) a split."""
    text = read_features(features_x_path)
    image = read_features(features_y_path)
    ids, labels = read_labels(labels_path)
    counts = {
        str(features_x_path): text.shape[1],
        str(features_y_path): image.shape[1],
        str(labels_path): len(ids),
    }
    if len(set(counts.values())) != 1:
        per_file = ", ".join(f"{p}={c}" for p, c in counts.items())
        raise DataFormatError(f"instance counts disagree across files: {per_file}")
    if isinstance(split_spec, Split):
        split = split_spec
    else:
        split = make_split(len(ids), split_spec or SplitSpec())
    return BimodalDataset(text, image, labels, ids, split)


def load_dataset_dir(data_dir, split_spec: SplitSpec | Split | None = None) -> BimodalDataset:
    d = Path(data_dir)
    return load_dataset(
        d / "features_x.csv", d / "features_y.csv", d / "labels.csv", split_spec
    )
