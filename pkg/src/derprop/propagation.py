"""Pixel-similarity matrices and similarity-based logit rectification.

Similarities come in two conventions: the classic L2 cosine, and the
dot-product form used on L1-normalized feature columns (the training
path).  Rectification mixes a logit map through the sum of the feature
similarity matrix and the similarity matrix of first-order channel
differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import LabelMap, is_one_hot
from .derivative import apply_operator_columns, build_operator_matrix

ZERO_VECTOR_TOL = 1e-12


def cosine(u, v, convention: str = "l2") -> float:
    """Similarity of two vectors.

    ``l2`` is the usual cosine (result in [-1, 1]); ``l1_dot`` divides the
    dot product by the L1 norms, which reduces to a plain dot product when
    both inputs are already L1-normalized.
    """
    a = np.asarray(u, dtype=np.float64)
    b = np.asarray(v, dtype=np.float64)
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise ValueError(f"expected two equal-length vectors, got {a.shape} and {b.shape}")
    if convention == "l2":
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
    elif convention == "l1_dot":
        na, nb = np.abs(a).sum(), np.abs(b).sum()
    else:
        raise ValueError(f"unknown cosine convention {convention!r}")
    for name, n in (("first", na), ("second", nb)):
        if n < ZERO_VECTOR_TOL:
            raise ValueError(f"{name} argument has zero norm under the {convention} convention")
    value = float(a @ b / (na * nb))
    if convention == "l2":
        value = min(1.0, max(-1.0, value))
    return value


def fast_gram(a: np.ndarray) -> np.ndarray:
    """a^T a with a C-contiguous left operand (much faster BLAS path)."""
    return np.ascontiguousarray(a.T) @ a


def _gram(a: np.ndarray) -> np.ndarray:
    """a^T a, made exactly symmetric (averaging with the transpose is
    bitwise symmetric because addition commutes entrywise)."""
    g = fast_gram(a)
    g += g.T.copy()
    g *= 0.5
    return g


def similarity_matrix(values) -> np.ndarray:
    """(M, M) Gram matrix of feature columns (expects L1-normalized input)."""
    a = np.asarray(values, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"feature map must be 2-D, got shape {a.shape}")
    return _gram(a)


def derivative_similarity(values, q: int, variant: str = "forward") -> np.ndarray:
    """Gram matrix of the order-q channel derivatives of the columns."""
    a = np.asarray(values, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"feature map must be 2-D, got shape {a.shape}")
    if q == 0:
        return similarity_matrix(a)
    op = build_operator_matrix(q, a.shape[0], variant)
    return _gram(apply_operator_columns(op, a))


def gt_similarity_from_labels(labels) -> np.ndarray:
    """Binary (M, M) matrix: 1 where two pixels share a class.

    Accepts a :class:`LabelMap` or a one-hot (C, M) matrix; anything that
    is not exactly one-hot is rejected.
    """
    if isinstance(labels, LabelMap):
        cls = labels.flat()
    else:
        y = np.asarray(labels, dtype=np.float64)
        if not is_one_hot(y):
            raise ValueError("ground-truth labels must be one-hot columns")
        cls = y.argmax(axis=0)
    return (cls[:, None] == cls[None, :]).astype(np.float64)


def propagate(logits, sim) -> np.ndarray:
    """Mix a (C, M) logit map through an (M, M) similarity matrix: L @ S."""
    l = np.asarray(logits, dtype=np.float64)
    s = np.asarray(sim, dtype=np.float64)
    if l.ndim != 2 or s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError(f"expected (C, M) logits and square similarity, got {l.shape}, {s.shape}")
    if l.shape[1] != s.shape[0]:
        raise ValueError(f"pixel counts differ: logits have {l.shape[1]}, similarity {s.shape[0]}")
    return l @ s


def derivative_propagate(logits, values, variant: str = "forward") -> np.ndarray:
    """Rectify logits through the combined similarity L @ (S + dS).

    S is the feature Gram matrix and dS the Gram matrix of first-order
    channel differences; the two are summed unweighted.
    """
    a = np.asarray(values, dtype=np.float64)
    l = np.asarray(logits, dtype=np.float64)
    if l.ndim != 2 or a.ndim != 2 or l.shape[1] != a.shape[1]:
        raise ValueError(
            f"logits and features must share the pixel axis, got {l.shape} and {a.shape}"
        )
    s = similarity_matrix(a) + derivative_similarity(a, 1, variant)
    return propagate(l, s)


@dataclass(frozen=True)
class BlendSchedule:
    """Linear ramp ep/total used to mix plain and rectified pseudo-labels."""

    ep: int
    total: int

    def __post_init__(self):
        if self.total < 1:
            raise ValueError(f"total epochs must be >= 1, got {self.total}")
        if not 0 <= self.ep <= self.total:
            raise ValueError(f"epoch {self.ep} outside [0, {self.total}]")

    @property
    def eta(self) -> float:
        return self.ep / self.total


def blend_pseudo_labels(p_plain, p_rectified, sched: BlendSchedule) -> np.ndarray:
    """Convex combination (1 - eta) * plain + eta * rectified."""
    a = np.asarray(p_plain, dtype=np.float64)
    b = np.asarray(p_rectified, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"probability maps differ in shape: {a.shape} vs {b.shape}")
    eta = sched.eta
    return (1.0 - eta) * a + eta * b


def confidence_mask(p, tau: float) -> np.ndarray:
    """Boolean per-pixel mask: max class probability >= tau."""
    a = np.asarray(p, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"probability map must be 2-D, got shape {a.shape}")
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {tau}")
    return a.max(axis=0) >= tau
