"""Float64 map primitives: column normalization, softmax, entrywise L1.

Every map in this package is a dense C-contiguous float64 array with one
column per pixel: feature maps are (D, M), logit and probability maps are
(C, M), similarity matrices are (M, M).  Label maps carry integer class
indices and expand to one-hot columns on demand.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Columns with less L1 mass than this cannot be normalized meaningfully.
ZERO_COLUMN_TOL = 1e-12


class DegenerateColumnError(ValueError):
    """A column's L1 mass is too small to normalize."""


def check_finite(t: np.ndarray, name: str = "tensor") -> np.ndarray:
    if not np.isfinite(t).all():
        raise ValueError(f"{name} contains non-finite entries")
    return t


def _as_matrix(t, name: str) -> np.ndarray:
    a = np.asarray(t, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def l1_normalize_columns(t, zero_policy: str = "error") -> np.ndarray:
    """Scale each column to unit L1 mass.

    ``zero_policy`` controls degenerate (all-zero) columns: ``"error"``
    raises :class:`DegenerateColumnError` naming the first offending
    column, ``"uniform_fallback"`` replaces the column with the constant
    vector 1/D.  Signs of nonzero columns are preserved.
    """
    if zero_policy not in ("error", "uniform_fallback"):
        raise ValueError(f"unknown zero_policy {zero_policy!r}")
    a = _as_matrix(t, "input")
    d = a.shape[0]
    norms = np.abs(a).sum(axis=0)
    dead = norms < ZERO_COLUMN_TOL
    if dead.any():
        if zero_policy == "error":
            idx = int(np.flatnonzero(dead)[0])
            raise DegenerateColumnError(
                f"column {idx} has L1 norm {norms[idx]:.3e} below {ZERO_COLUMN_TOL:.0e}"
            )
        a = a.copy()
        a[:, dead] = 1.0 / d
        norms = np.where(dead, 1.0, norms)
    return a / norms[None, :]


def softmax_columns(logits) -> np.ndarray:
    """Column-wise softmax over the class axis of a (C, M) logit map.

    Subtracts the per-column max before exponentiating, so arbitrarily
    large logits cannot overflow.
    """
    a = _as_matrix(logits, "logits")
    if a.shape[0] < 1:
        raise ValueError("logit map needs at least one class row")
    z = a - a.max(axis=0, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=0, keepdims=True)


def entrywise_l1(t) -> float:
    """Sum of absolute values over all entries (zero iff t is all zeros)."""
    return float(np.abs(np.asarray(t, dtype=np.float64)).sum())


@dataclass(frozen=True)
class LabelMap:
    """Integer class index per pixel plus the class count.

    ``classes`` may have any shape (flat or (H, W)); :meth:`one_hot`
    flattens it to a (C, M) column-per-pixel matrix.
    """

    classes: np.ndarray
    num_classes: int

    def __post_init__(self):
        cls = np.asarray(self.classes)
        if not np.issubdtype(cls.dtype, np.integer):
            raise ValueError("label classes must be an integer array")
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        if cls.size and (cls.min() < 0 or cls.max() >= self.num_classes):
            raise ValueError(
                f"class indices must lie in [0, {self.num_classes}), "
                f"got range [{cls.min()}, {cls.max()}]"
            )
        object.__setattr__(self, "classes", cls)

    @property
    def m(self) -> int:
        return int(self.classes.size)

    def flat(self) -> np.ndarray:
        return self.classes.reshape(-1)

    def one_hot(self) -> np.ndarray:
        """(C, M) matrix with exactly one 1 per column."""
        flat = self.flat()
        out = np.zeros((self.num_classes, flat.size), dtype=np.float64)
        out[flat, np.arange(flat.size)] = 1.0
        return out


def is_one_hot(y: np.ndarray) -> bool:
    """True when every column of a (C, M) matrix is exactly one-hot."""
    a = np.asarray(y, dtype=np.float64)
    if a.ndim != 2:
        return False
    binary = (a == 0.0) | (a == 1.0)
    return bool(binary.all() and (a.sum(axis=0) == 1.0).all())
