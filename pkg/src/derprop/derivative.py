"""Discrete derivative operators along the channel dimension.

Four differencing rules are supported, identified by variant tag:

* ``forward``         dv(i) = v(i+1) - v(i)
* ``central``         dv(i) = (v(i+2) - v(i)) / 2
* ``summation``       dv(i) = v(i+1) + v(i)
* ``second_central``  dv(i) = v(i+1) + v(i-1) - 2 v(i)

Order-q application is the q-fold recursion of the single step.  The
recursion is the canonical definition; :func:`build_operator_matrix`
produces the equivalent banded matrix (signed binomial coefficients for
the forward rule) and is cross-checked against the recursion by the test
suite.  Matrices are assembled in exact integer arithmetic and converted
to float64 at the boundary, so e.g. column sums of |entries| are exact.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import comb

import numpy as np

VARIANTS = ("forward", "central", "summation", "second_central")

# Channel-count reduction per single application.
_STEP_REDUCTION = {"forward": 1, "central": 2, "summation": 1, "second_central": 2}


class DimensionUnderflowError(ValueError):
    """Differencing would leave fewer than one output channel."""


def _check_variant(variant: str) -> None:
    if variant not in VARIANTS:
        raise ValueError(f"unknown derivative variant {variant!r}; expected one of {VARIANTS}")


def output_dim(d_in: int, q: int, variant: str = "forward") -> int:
    """Output channel count of an order-q application (may be <= 0)."""
    _check_variant(variant)
    return d_in - q * _STEP_REDUCTION[variant]


def _require_dims(q: int, d_in: int, variant: str) -> int:
    if q < 0:
        raise ValueError(f"derivative order must be >= 0, got {q}")
    if d_in < 1:
        raise ValueError(f"input dimension must be >= 1, got {d_in}")
    d_out = output_dim(d_in, q, variant)
    if d_out < 1:
        raise DimensionUnderflowError(
            f"order-{q} {variant} differencing of a {d_in}-channel input "
            f"would leave {d_out} channels"
        )
    return d_out


def _step(v: np.ndarray, variant: str) -> np.ndarray:
    if variant == "forward":
        return v[1:] - v[:-1]
    if variant == "central":
        return (v[2:] - v[:-2]) / 2.0
    if variant == "summation":
        return v[1:] + v[:-1]
    return v[2:] + v[:-2] - 2.0 * v[1:-1]


def diff(v, q: int, variant: str = "forward") -> np.ndarray:
    """Apply the order-q channel derivative to a vector (q = 0 is identity)."""
    a = np.asarray(v, dtype=np.float64)
    if a.ndim != 1:
        raise ValueError(f"diff expects a vector, got shape {a.shape}")
    _require_dims(q, a.shape[0], variant)
    out = a.copy()
    for _ in range(q):
        out = _step(out, variant)
    return out


@dataclass(frozen=True)
class DerivativeOperator:
    """Banded matrix form of an order-q channel derivative."""

    q: int
    d_in: int
    variant: str
    matrix: np.ndarray  # (d_out, d_in) float64, read-only

    @property
    def d_out(self) -> int:
        return self.matrix.shape[0]


def _single_step_int(d_in: int, variant: str) -> np.ndarray:
    """One application of the variant as an exact integer matrix.

    The central rule's 1/2 factor is deferred to the caller so the
    composition stays integral.
    """
    d_out = d_in - _STEP_REDUCTION[variant]
    m = np.zeros((d_out, d_in), dtype=np.int64)
    rows = np.arange(d_out)
    if variant == "forward":
        m[rows, rows] = -1
        m[rows, rows + 1] = 1
    elif variant == "summation":
        m[rows, rows] = 1
        m[rows, rows + 1] = 1
    elif variant == "central":
        m[rows, rows] = -1
        m[rows, rows + 2] = 1
    else:  # second_central, output row i reads input positions i, i+1, i+2
        m[rows, rows] = 1
        m[rows, rows + 1] = -2
        m[rows, rows + 2] = 1
    return m


@lru_cache(maxsize=None)
def build_operator_matrix(q: int, d_in: int, variant: str = "forward") -> DerivativeOperator:
    """Exact matrix form of the order-q derivative on d_in channels.

    The forward variant is filled directly with signed binomial
    coefficients: entry (i, i+p) = (-1)^(q-p) * C(q, p) for 0 <= p <= q.
    Other variants compose q integer single steps.  Operators are
    immutable (read-only matrix), so instances are cached and shared.
    """
    if q < 1:
        raise ValueError(f"operator order must be >= 1, got {q}")
    d_out = _require_dims(q, d_in, variant)
    if variant == "forward":
        m_int = np.zeros((d_out, d_in), dtype=np.int64)
        rows = np.arange(d_out)
        for p in range(q + 1):
            m_int[rows, rows + p] = (-1) ** (q - p) * comb(q, p)
        matrix = m_int.astype(np.float64)
    else:
        acc = np.eye(d_in, dtype=np.int64)
        d = d_in
        for _ in range(q):
            acc = _single_step_int(d, variant) @ acc
            d -= _STEP_REDUCTION[variant]
        matrix = acc.astype(np.float64)
        if variant == "central":
            matrix *= 0.5**q  # exact power of two
    matrix.setflags(write=False)
    return DerivativeOperator(q=q, d_in=d_in, variant=variant, matrix=matrix)


def apply_operator_columns(op: DerivativeOperator, values) -> np.ndarray:
    """Apply the operator to every column of a (d_in, M) matrix."""
    a = np.asarray(values, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D column stack, got shape {a.shape}")
    if a.shape[0] != op.d_in:
        raise ValueError(
            f"operator expects {op.d_in} input channels, feature map has {a.shape[0]}"
        )
    return op.matrix @ a


def induced_one_norm(a) -> float:
    """Max row absolute sum: the L1 mass of the differencing stencil.

    Every row of a banded derivative operator carries the complete
    coefficient stencil, so for the forward variant this equals the L1
    amplification constant 2^q at every valid dimension.  (Column sums
    are clipped at the matrix boundary and fall below 2^q when the
    matrix is narrow, which is why the row form is used here.)
    """
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {m.shape}")
    if m.size == 0:
        return 0.0
    return float(np.abs(m).sum(axis=1).max())


def numerical_rank(a, tol: float = 1e-10) -> int:
    """Count singular values above ``tol`` times the largest one."""
    if tol <= 0:
        raise ValueError(f"tolerance must be positive, got {tol}")
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {m.shape}")
    if m.size == 0:
        return 0
    s = np.linalg.svd(m, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int((s > tol * s[0]).sum())
