"""Label-similarity graph, sign quantization, and the closed-form code update.

Binary codes live in {-1, +1} as float64 matrices of shape (k, N). The
packed on-disk format (magic TDHBIN1) stores one bit per entry,
instance-major, little-endian bit order, k bits rounded up to whole bytes
per instance; bit 1 means +1. See docs/formats.md.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .linalg import CholeskyFactor, ShapeError, cholesky_spd

CODES_MAGIC = b"TDHBIN1"


@dataclass(frozen=True)
class SimilarityGraph:
    """Similarity matrix S, its degree diagonal, and laplacian L = diag(degrees) - S."""

    similarity: np.ndarray
    degrees: np.ndarray
    laplacian: np.ndarray

    @property
    def n(self) -> int:
        return self.similarity.shape[0]


def build_graph(
    labels: Sequence[Iterable], exact_match: bool = False
) -> SimilarityGraph:
    """Similarity graph over instances from their label sets.

    Default rule: instances are similar iff their label sets intersect.
    exact_match=True requires identical label sets instead.
    """
    label_sets = [frozenset(ls) for ls in labels]
    for i, ls in enumerate(label_sets):
        if not ls:
            raise ValueError(f"instance {i} has an empty label set")
    n = len(label_sets)
    if exact_match:
        sim = np.array(
            [[a == b for b in label_sets] for a in label_sets], dtype=np.float64
        )
    else:
        vocab = {lab: j for j, lab in enumerate(sorted({l for ls in label_sets for l in ls}, key=repr))}
        member = np.zeros((n, len(vocab)))
        for i, ls in enumerate(label_sets):
            for lab in ls:
                member[i, vocab[lab]] = 1.0
        sim = (member @ member.T > 0).astype(np.float64)
    degrees = sim.sum(axis=1)
    laplacian = np.diag(degrees) - sim
    return SimilarityGraph(sim, degrees, laplacian)


def sign_matrix(m: np.ndarray) -> np.ndarray:
    """Entrywise sign with sign(0) = +1."""
    m = np.asarray(m, dtype=np.float64)
    if not np.all(np.isfinite(m)):
        raise ValueError("sign_matrix requires finite entries")
    return np.where(m >= 0.0, 1.0, -1.0)


def code_update_factor(
    graph: SimilarityGraph, gamma: float, beta: float
) -> CholeskyFactor:
    """Factor of (2I + (beta/gamma) L); cache it while the graph is fixed."""
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    if beta < 0:
        raise ValueError(f"beta must be >= 0, got {beta}")
    n = graph.n
    a = 2.0 * np.eye(n) + (beta / gamma) * graph.laplacian
    return cholesky_spd(a)


def update_codes(
    image_out: np.ndarray,
    text_out: np.ndarray,
    graph: SimilarityGraph,
    gamma: float,
    beta: float,
    factor: CholeskyFactor | None = None,
) -> np.ndarray:
    """Closed-form code refresh: sign((image_out + text_out) @ (2I + (beta/gamma) L)^-1)."""
    f = np.asarray(image_out, dtype=np.float64)
    g = np.asarray(text_out, dtype=np.float64)
    if f.shape != g.shape:
        raise ShapeError("modality outputs must share one shape", f.shape, g.shape)
    if f.shape[1] != graph.n:
        raise ShapeError("outputs do not match graph size", f.shape, (graph.n, graph.n))
    if factor is None:
        factor = code_update_factor(graph, gamma, beta)
    elif gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    relaxed = factor.solve((f + g).T).T
    return sign_matrix(relaxed)


def code_update_objective(
    codes: np.ndarray,
    image_out: np.ndarray,
    text_out: np.ndarray,
    graph: SimilarityGraph,
    gamma: float,
    beta: float,
) -> float:
    """Value the code refresh tries to reduce; descent is monitored, not guaranteed."""
    b = np.asarray(codes, dtype=np.float64)
    f = np.asarray(image_out, dtype=np.float64)
    g = np.asarray(text_out, dtype=np.float64)
    quad = np.einsum("ki,ki->", b, b - f - g)
    spectral = float(np.einsum("ki,ij,kj->", b, graph.laplacian, b))
    return gamma * float(quad) + beta * spectral


def pack_code_matrix(codes: np.ndarray) -> np.ndarray:
    """(k, N) +-1 matrix -> (N, ceil(k/8)) uint8, bit 1 == +1."""
    b = np.asarray(codes, dtype=np.float64)
    if b.ndim != 2:
        raise ValueError(f"codes must be 2-D, got ndim={b.ndim}")
    if not np.all(np.abs(b) == 1.0):
        raise ValueError("codes must contain only -1 and +1")
    return np.packbits(b.T > 0, axis=1, bitorder="little")


def unpack_code_matrix(packed: np.ndarray, code_length: int) -> np.ndarray:
    """Inverse of pack_code_matrix."""
    bits = np.unpackbits(packed, axis=1, count=code_length, bitorder="little")
    return np.where(bits.T > 0, 1.0, -1.0)


def save_codes(path, codes: np.ndarray) -> None:
    packed = pack_code_matrix(codes)
    k, n = codes.shape
    with open(path, "wb") as fh:
        fh.write(CODES_MAGIC)
        fh.write(struct.pack("<II", k, n))
        fh.write(packed.tobytes())


def load_codes(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(len(CODES_MAGIC))
        if magic != CODES_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, expected {CODES_MAGIC!r}")
        k, n = struct.unpack("<II", fh.read(8))
        row_bytes = (k + 7) // 8
        payload = fh.read(n * row_bytes)
        if len(payload) != n * row_bytes:
            raise ValueError(f"{path}: truncated code payload")
        if fh.read(1):
            raise ValueError(f"{path}: trailing bytes after code payload")
    packed = np.frombuffer(payload, dtype=np.uint8).reshape(n, row_bytes)
    return unpack_code_matrix(packed, k)
