"""Triplet-likelihood objective and its exact gradients.

Both encoders emit k x N real matrices: image_out for the image modality,
text_out for the text modality. A triplet (q, p, n) says instance q is more
similar to p than to n. Each loss term scores a triplet by the agreement gap

    gap = half_dot(anchor[:, q], cand[:, p]) - half_dot(anchor[:, q], cand[:, n]) - alpha

and charges -log sigmoid(gap). Four pairings make up the objective:
inter-modal (image anchors vs text candidates and vice versa) and
intra-modal (each modality against itself), plus a regularizer that pulls
both outputs toward the shared binary codes, balances bits per row, and
penalizes code disagreement across the label-similarity graph.

Gradients are the exact derivatives of that objective, covering anchor,
positive, and negative roles of every index. anchor_only=True drops the
positive/negative-role terms, leaving only the per-anchor sums.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import expit

from .linalg import ShapeError


class TripletLabel(NamedTuple):
    """Indices (q, p, n): q is more similar to p than to n."""

    q: int
    p: int
    n: int


@dataclass(frozen=True)
class HyperParams:
    code_length: int
    alpha: float | None = None  # margin; defaults to code_length / 2
    gamma: float = 100.0
    eta: float = 50.0
    beta: float = 1.0

    def __post_init__(self):
        if self.code_length < 1:
            raise ValueError(f"code_length must be >= 1, got {self.code_length}")
        if self.alpha is None:
            object.__setattr__(self, "alpha", self.code_length / 2.0)
        for name in ("gamma", "eta", "beta"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")


@dataclass(frozen=True)
class LossBreakdown:
    j_inter: float
    j_intra: float
    j_re: float
    total: float


def sigmoid(x: float) -> float:
    """Numerically stable logistic function."""
    return float(expit(x))


def half_dot(u: np.ndarray, v: np.ndarray) -> float:
    """Half the inner product; the pairwise agreement score."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise ShapeError("half_dot length mismatch", u.shape, v.shape)
    return 0.5 * float(u @ v)


def _triplet_arrays(
    triplets: Sequence[TripletLabel] | np.ndarray, n: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split triplets into validated q/p/n index arrays over 0..n-1."""
    arr = np.asarray(triplets, dtype=np.int64)
    if arr.size == 0:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty, empty
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"triplets must be (M, 3) index triples, got shape {arr.shape}")
    bad = np.nonzero((arr < 0) | (arr >= n))[0]
    if bad.size:
        m = int(bad[0])
        raise IndexError(
            f"triplet {m} = {tuple(arr[m])} has an index outside 0..{n - 1}"
        )
    dup = np.nonzero(arr[:, 1] == arr[:, 2])[0]
    if dup.size:
        m = int(dup[0])
        raise ValueError(f"triplet {m} = {tuple(arr[m])} has identical p and n")
    return arr[:, 0], arr[:, 1], arr[:, 2]


def _gaps(
    anchor: np.ndarray,
    cand: np.ndarray,
    q: np.ndarray,
    p: np.ndarray,
    n: np.ndarray,
    alpha: float,
) -> np.ndarray:
    """Agreement gaps, one per triplet, in listed order."""
    a = anchor[:, q]
    return 0.5 * np.einsum("km,km->m", a, cand[:, p] - cand[:, n]) - alpha


def triplet_nll(
    anchor_codes: np.ndarray,
    pos_codes: np.ndarray,
    neg_codes: np.ndarray,
    triplets: Sequence[TripletLabel] | np.ndarray,
    alpha: float,
) -> float:
    """Negative log-likelihood -sum_m log sigmoid(gap_m), log1p-stable."""
    anchor_codes = np.asarray(anchor_codes, dtype=np.float64)
    pos_codes = np.asarray(pos_codes, dtype=np.float64)
    neg_codes = np.asarray(neg_codes, dtype=np.float64)
    if anchor_codes.shape != pos_codes.shape or pos_codes.shape != neg_codes.shape:
        raise ShapeError(
            "code matrices must share one shape", anchor_codes.shape, neg_codes.shape
        )
    q, p, n = _triplet_arrays(triplets, anchor_codes.shape[1])
    if q.size == 0:
        return 0.0
    a = anchor_codes[:, q]
    gaps = (
        0.5 * np.einsum("km,km->m", a, pos_codes[:, p])
        - 0.5 * np.einsum("km,km->m", a, neg_codes[:, n])
        - alpha
    )
    # -log sigmoid(x) == log(1 + exp(-x))
    return float(np.logaddexp(0.0, -gaps).sum())


def inter_modal_loss(
    image_out: np.ndarray,
    text_out: np.ndarray,
    triplets: Sequence[TripletLabel] | np.ndarray,
    alpha: float,
) -> float:
    """Cross-modality term: image anchors vs text candidates plus the reverse."""
    return triplet_nll(image_out, text_out, text_out, triplets, alpha) + triplet_nll(
        text_out, image_out, image_out, triplets, alpha
    )


def intra_modal_loss(
    image_out: np.ndarray,
    text_out: np.ndarray,
    triplets: Sequence[TripletLabel] | np.ndarray,
    alpha: float,
) -> float:
    """Within-modality term: each modality anchored against itself."""
    return triplet_nll(image_out, image_out, image_out, triplets, alpha) + triplet_nll(
        text_out, text_out, text_out, triplets, alpha
    )


def graph_reg_loss(
    image_out: np.ndarray,
    text_out: np.ndarray,
    binary_codes: np.ndarray,
    laplacian: np.ndarray,
    gamma: float,
    eta: float,
    beta: float,
) -> float:
    """Quantization pull, bit-balance penalty, and spectral graph term."""
    f = np.asarray(image_out, dtype=np.float64)
    g = np.asarray(text_out, dtype=np.float64)
    b = np.asarray(binary_codes, dtype=np.float64)
    lap = np.asarray(laplacian, dtype=np.float64)
    if f.shape != g.shape or f.shape != b.shape:
        raise ShapeError("image/text/code matrices must share one shape", f.shape, b.shape)
    n = f.shape[1]
    if lap.shape != (n, n):
        raise ShapeError("laplacian shape mismatch", (n, n), lap.shape)
    quant = np.sum((b - f) ** 2) + np.sum((b - g) ** 2)
    balance = np.sum(f.sum(axis=1) ** 2) + np.sum(g.sum(axis=1) ** 2)
    spectral = float(np.einsum("ki,ij,kj->", b, lap, b))
    return gamma * quant + eta * balance + beta * spectral


def total_loss(
    image_out: np.ndarray,
    text_out: np.ndarray,
    binary_codes: np.ndarray,
    laplacian: np.ndarray,
    triplets: Sequence[TripletLabel] | np.ndarray,
    hp: HyperParams,
) -> LossBreakdown:
    j_inter = inter_modal_loss(image_out, text_out, triplets, hp.alpha)
    j_intra = intra_modal_loss(image_out, text_out, triplets, hp.alpha)
    j_re = graph_reg_loss(
        image_out, text_out, binary_codes, laplacian, hp.gamma, hp.eta, hp.beta
    )
    return LossBreakdown(j_inter, j_intra, j_re, j_inter + j_intra + j_re)


def _accumulate_triplet_grad(
    anchor: np.ndarray,
    cand: np.ndarray,
    q: np.ndarray,
    p: np.ndarray,
    n: np.ndarray,
    alpha: float,
    grad_anchor: np.ndarray | None,
    grad_cand: np.ndarray | None,
) -> None:
    """Add one pairing's triplet gradients into the given accumulators.

    grad_anchor receives the anchor-role terms, grad_cand the
    positive/negative-role terms; pass None to skip either side.
    np.add.at applies contributions in ascending triplet order, keeping
    results bitwise reproducible.
    """
    if q.size == 0:
        return
    w = 0.5 * (1.0 - expit(_gaps(anchor, cand, q, p, n, alpha)))
    if grad_anchor is not None:
        np.add.at(grad_anchor.T, q, (-w * (cand[:, p] - cand[:, n])).T)
    if grad_cand is not None:
        wa = w * anchor[:, q]
        np.add.at(grad_cand.T, p, -wa.T)
        np.add.at(grad_cand.T, n, wa.T)


def grad_text(
    image_out: np.ndarray,
    text_out: np.ndarray,
    binary_codes: np.ndarray,
    triplets: Sequence[TripletLabel] | np.ndarray,
    hp: HyperParams,
    anchor_only: bool = False,
) -> np.ndarray:
    """d(total)/d(text_out), all triplet roles unless anchor_only."""
    f = np.asarray(image_out, dtype=np.float64)
    g = np.asarray(text_out, dtype=np.float64)
    b = np.asarray(binary_codes, dtype=np.float64)
    if f.shape != g.shape or f.shape != b.shape:
        raise ShapeError("image/text/code matrices must share one shape", f.shape, b.shape)
    q, p, n = _triplet_arrays(triplets, g.shape[1])

    grad = 2.0 * hp.gamma * (g - b)
    grad += 2.0 * hp.eta * g.sum(axis=1, keepdims=True)
    # text anchors vs image candidates: anchor-role terms land on text
    _accumulate_triplet_grad(g, f, q, p, n, hp.alpha, grad, None)
    # image anchors vs text candidates: candidate-role terms land on text
    if not anchor_only:
        _accumulate_triplet_grad(f, g, q, p, n, hp.alpha, None, grad)
    # text against itself
    _accumulate_triplet_grad(g, g, q, p, n, hp.alpha, grad, None if anchor_only else grad)
    return grad


def grad_image(
    image_out: np.ndarray,
    text_out: np.ndarray,
    binary_codes: np.ndarray,
    triplets: Sequence[TripletLabel] | np.ndarray,
    hp: HyperParams,
    anchor_only: bool = False,
) -> np.ndarray:
    """d(total)/d(image_out); mirror of grad_text."""
    f = np.asarray(image_out, dtype=np.float64)
    g = np.asarray(text_out, dtype=np.float64)
    b = np.asarray(binary_codes, dtype=np.float64)
    if f.shape != g.shape or f.shape != b.shape:
        raise ShapeError("image/text/code matrices must share one shape", f.shape, b.shape)
    q, p, n = _triplet_arrays(triplets, f.shape[1])

    grad = 2.0 * hp.gamma * (f - b)
    grad += 2.0 * hp.eta * f.sum(axis=1, keepdims=True)
    _accumulate_triplet_grad(f, g, q, p, n, hp.alpha, grad, None)
    if not anchor_only:
        _accumulate_triplet_grad(g, f, q, p, n, hp.alpha, None, grad)
    _accumulate_triplet_grad(f, f, q, p, n, hp.alpha, grad, None if anchor_only else grad)
    return grad
