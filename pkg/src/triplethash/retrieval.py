"""Out-of-sample hashing and Hamming-distance ranking over a code database.

The index keeps codes packed (one bit per code entry) and scans linearly
with XOR + popcount. Ranking order is (distance, identifier) ascending,
identifiers compared as strings, so results are bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import codes as codes_mod
from .encoder import EncoderParams, forward
from .linalg import ShapeError


@dataclass
class RetrievalIndex:
    packed: np.ndarray = field(repr=False)  # (N_db, ceil(k/8)) uint8
    ids: list[str]
    labels: list[frozenset] | None
    code_length: int

    def __len__(self) -> int:
        return self.packed.shape[0]


def build_index(
    code_matrix: np.ndarray,
    ids: Sequence[str],
    labels: Sequence[Iterable] | None = None,
) -> RetrievalIndex:
    """Pack a (k, N) +-1 code matrix into a queryable index."""
    k, n = code_matrix.shape
    ids = [str(i) for i in ids]
    if len(ids) != n:
        raise ValueError(f"got {len(ids)} ids for {n} codes")
    if len(set(ids)) != n:
        raise ValueError("identifiers must be unique")
    label_sets = None
    if labels is not None:
        if len(labels) != n:
            raise ValueError(f"got {len(labels)} label sets for {n} codes")
        label_sets = [frozenset(ls) for ls in labels]
    return RetrievalIndex(codes_mod.pack_code_matrix(code_matrix), ids, label_sets, k)


def encode_out_of_sample(params: EncoderParams, item: np.ndarray) -> np.ndarray:
    """Hash unseen features: sign of the encoder output.

    Accepts a single feature vector (returns a k-vector) or a
    (input_dim, m) batch (returns k x m).
    """
    arr = np.asarray(item, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr[:, None]
    out, _ = forward(params, arr)
    code = codes_mod.sign_matrix(out)
    return code[:, 0] if single else code


def hamming_distance(a: np.ndarray, b: np.ndarray) -> int:
    """Differing-bit count between two +-1 code vectors."""
    a = np.asarray(a).ravel()
    b = np.asarray(b).ravel()
    if a.shape != b.shape:
        raise ShapeError("code length mismatch", a.shape, b.shape)
    return int(np.count_nonzero(a != b))


def _pack_query(query_code: np.ndarray, code_length: int) -> np.ndarray:
    q = np.asarray(query_code, dtype=np.float64).ravel()
    if q.size != code_length:
        raise ShapeError("query code length mismatch", (code_length,), q.shape)
    return codes_mod.pack_code_matrix(q[:, None])[0]


def query_distances(index: RetrievalIndex, query_code: np.ndarray) -> np.ndarray:
    """Hamming distance from the query to every indexed item."""
    packed_q = _pack_query(query_code, index.code_length)
    return np.bitwise_count(index.packed ^ packed_q).sum(axis=1).astype(np.int64)


def rank(
    index: RetrievalIndex, query_code: np.ndarray, top_n: int | None = None
) -> list[tuple[str, int]]:
    """Items ordered by (distance, identifier) ascending, truncated to top_n."""
    if len(index) == 0:
        raise ValueError("index is empty")
    dists = query_distances(index, query_code)
    ids = np.asarray(index.ids)
    order = np.lexsort((ids, dists))
    if top_n is not None:
        if top_n < 1:
            raise ValueError(f"top_n must be >= 1, got {top_n}")
        order = order[:top_n]
    return [(index.ids[i], int(dists[i])) for i in order]


def save_manifest(path, ids: Sequence[str], labels: Sequence[Iterable] | None) -> None:
    """Sidecar CSV: one line per item, `id,label,label,...`."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i, item_id in enumerate(ids):
            labs = sorted(labels[i]) if labels is not None else []
            fh.write(",".join([str(item_id), *map(str, labs)]) + "\n")


def load_manifest(path) -> tuple[list[str], list[frozenset]]:
    ids: list[str] = []
    labels: list[frozenset] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if not parts[0]:
                raise ValueError(f"{path}:{lineno}: empty identifier")
            ids.append(parts[0])
            labels.append(frozenset(p for p in parts[1:] if p))
    return ids, labels


def save_index(index: RetrievalIndex, codes_path, manifest_path) -> None:
    codes_mod.save_codes(
        codes_path, codes_mod.unpack_code_matrix(index.packed, index.code_length)
    )
    save_manifest(manifest_path, index.ids, index.labels)


def load_index(codes_path, manifest_path) -> RetrievalIndex:
    code_matrix = codes_mod.load_codes(codes_path)
    ids, labels = load_manifest(manifest_path)
    if len(ids) != code_matrix.shape[1]:
        raise ValueError(
            f"{manifest_path} lists {len(ids)} items but {codes_path} holds "
            f"{code_matrix.shape[1]} codes"
        )
    return build_index(code_matrix, ids, labels)
