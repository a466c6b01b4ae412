"""Loss stack: similarity-regularization terms, masked CE/KL, analytic
gradients, and a finite-difference validation harness.

Gradient conventions used throughout: |x| has subgradient 0 at x == 0;
the probability clamp at 1e-12 contributes zero slope where active; and
every target map (pseudo-labels, similarity targets) is a constant with
respect to differentiation, mirroring stop-gradient on the teacher path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import LabelMap, entrywise_l1, softmax_columns
from .derivative import build_operator_matrix, output_dim
from .propagation import (
    derivative_similarity,
    fast_gram,
    gt_similarity_from_labels,
)

PROB_EPS = 1e-12

_REDUCTIONS = ("sum", "mean")


@dataclass(frozen=True)
class LossWeights:
    """Balancing weights of the combined loss plus the sparsity weight."""

    lambda_ce: float = 0.5
    lambda_kl: float = 0.25
    lambda_der: float = 0.5
    eta: float = 0.5

    def __post_init__(self):
        for name in ("lambda_ce", "lambda_kl", "lambda_der", "eta"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass(frozen=True)
class DerLossSpec:
    """Configuration of the similarity-regularization loss.

    ``order_budget`` is the highest derivative order Q whose similarity
    matrix is supervised directly; the sparsity term penalizes the L1 mass
    of the order Q+1 derivative features.  ``labeled_high_order_target``
    selects the target for orders q >= 1 on labeled data: ``"ygram"``
    keeps the label Gram matrix, ``"zero"`` uses the all-zero matrix.
    """

    order_budget: int = 1
    eta: float = 0.5
    variant: str = "forward"
    sparsity_enabled: bool = True
    labeled_high_order_target: str = "ygram"

    def __post_init__(self):
        if self.order_budget < 0:
            raise ValueError(f"order budget must be >= 0, got {self.order_budget}")
        if self.eta < 0:
            raise ValueError("sparsity weight eta must be >= 0")
        if self.labeled_high_order_target not in ("ygram", "zero"):
            raise ValueError(
                f"unknown labeled_high_order_target {self.labeled_high_order_target!r}"
            )


def similarity_stack(values, order_budget: int, variant: str = "forward") -> list[np.ndarray]:
    """Similarity matrices of derivative orders 0..order_budget."""
    return [derivative_similarity(values, q, variant) for q in range(order_budget + 1)]


def labeled_target_stack(labels, order_budget: int, mode: str = "ygram") -> list[np.ndarray]:
    """Per-order targets for labeled data built from the label Gram matrix."""
    s_gt = gt_similarity_from_labels(labels)
    if mode == "ygram":
        return [s_gt] * (order_budget + 1)
    if mode == "zero":
        return [s_gt] + [np.zeros_like(s_gt)] * order_budget
    raise ValueError(f"unknown labeled target mode {mode!r}")


def derivative_loss(s_pred_stack, s_gt_stack, values, spec: DerLossSpec) -> float:
    """Sum over orders of ||S_pred_q - S_gt_q||_1 plus the sparsity term.

    The stacks hold similarity matrices for orders 0..Q; the sparsity term
    is eta times the entrywise L1 mass of the order Q+1 derivative of the
    feature columns.
    """
    if len(s_pred_stack) != len(s_gt_stack):
        raise ValueError(
            f"similarity stacks differ in length: {len(s_pred_stack)} vs {len(s_gt_stack)}"
        )
    if len(s_pred_stack) != spec.order_budget + 1:
        raise ValueError(
            f"expected {spec.order_budget + 1} stacked orders, got {len(s_pred_stack)}"
        )
    total = 0.0
    for q, (sp, sg) in enumerate(zip(s_pred_stack, s_gt_stack)):
        sp = np.asarray(sp, dtype=np.float64)
        sg = np.asarray(sg, dtype=np.float64)
        if sp.shape != sg.shape:
            raise ValueError(f"order-{q} similarity shapes differ: {sp.shape} vs {sg.shape}")
        total += entrywise_l1(sp - sg)
    if spec.sparsity_enabled:
        v = np.asarray(values, dtype=np.float64)
        op = build_operator_matrix(spec.order_budget + 1, v.shape[0], spec.variant)
        total += spec.eta * entrywise_l1(op.matrix @ v)
    return total


def derivative_loss_from_features(values, s_gt_stack, spec: DerLossSpec) -> float:
    """Build the prediction stack from the features, then apply the loss."""
    v = np.asarray(values, dtype=np.float64)
    return derivative_loss(
        similarity_stack(v, spec.order_budget, spec.variant), s_gt_stack, v, spec
    )


def derivative_loss_grad_features(values, s_gt_stack, spec: DerLossSpec) -> np.ndarray:
    """Gradient of :func:`derivative_loss_from_features` w.r.t. the features."""
    v = np.asarray(values, dtype=np.float64)
    if len(s_gt_stack) != spec.order_budget + 1:
        raise ValueError(
            f"expected {spec.order_budget + 1} stacked orders, got {len(s_gt_stack)}"
        )
    grad = np.zeros_like(v)
    for q, sg in enumerate(s_gt_stack):
        if q == 0:
            u = v
            sign = np.sign(u.T @ u - sg)
            grad += u @ (sign + sign.T)
        else:
            op = build_operator_matrix(q, v.shape[0], spec.variant)
            u = op.matrix @ v
            sign = np.sign(u.T @ u - sg)
            grad += op.matrix.T @ (u @ (sign + sign.T))
    if spec.sparsity_enabled:
        op = build_operator_matrix(spec.order_budget + 1, v.shape[0], spec.variant)
        grad += spec.eta * (op.matrix.T @ np.sign(op.matrix @ v))
    return grad


def _target_matrix(target, like: np.ndarray) -> np.ndarray:
    t = target.one_hot() if isinstance(target, LabelMap) else np.asarray(target, np.float64)
    if t.shape != like.shape:
        raise ValueError(f"target shape {t.shape} does not match map shape {like.shape}")
    return t


def _mask_weights(mask, m: int) -> np.ndarray:
    """Per-pixel averaging weights: 1/|mask| inside the mask, 0 outside."""
    w = np.asarray(mask, dtype=np.float64).reshape(-1)
    if w.shape[0] != m:
        raise ValueError(f"mask covers {w.shape[0]} pixels, maps have {m}")
    n = w.sum()
    if n == 0:
        return np.zeros(m)
    return w / n


def cross_entropy_masked(p, target, mask) -> float:
    """Mean over masked pixels of -sum_c target * log(max(p, 1e-12))."""
    pm = np.asarray(p, dtype=np.float64)
    t = _target_matrix(target, pm)
    w = _mask_weights(mask, pm.shape[1])
    logs = np.log(np.maximum(pm, PROB_EPS))
    return float(-((t * logs).sum(axis=0) @ w))


def kl_masked(p, target, mask) -> float:
    """Mean over masked pixels of sum_c target * log(target / p).

    The target distribution is the reference; both maps are clamped at
    1e-12 inside the logs.
    """
    pm = np.asarray(p, dtype=np.float64)
    t = np.maximum(_target_matrix(target, pm), PROB_EPS)
    w = _mask_weights(mask, pm.shape[1])
    logs = np.log(t) - np.log(np.maximum(pm, PROB_EPS))
    return float((t * logs).sum(axis=0) @ w)


def total_loss(ce: float, kl: float, der: float, weights: LossWeights) -> float:
    """Weighted combination of the three loss parts."""
    return weights.lambda_ce * ce + weights.lambda_kl * kl + weights.lambda_der * der


# -- gradients ---------------------------------------------------------------


def softmax_backward(p: np.ndarray, grad_p: np.ndarray) -> np.ndarray:
    """Pull a gradient on softmax outputs back to the logits, column-wise."""
    dot = (grad_p * p).sum(axis=0, keepdims=True)
    return p * (grad_p - dot)


def _ce_grad_p(p: np.ndarray, t: np.ndarray, w: np.ndarray) -> np.ndarray:
    active = p >= PROB_EPS
    return -(t / np.maximum(p, PROB_EPS)) * active * w[None, :]


def _kl_grad_p(p: np.ndarray, t_clamped: np.ndarray, w: np.ndarray) -> np.ndarray:
    active = p >= PROB_EPS
    return -(t_clamped / np.maximum(p, PROB_EPS)) * active * w[None, :]


def ce_softmax_grad_logits(logits, target, mask) -> np.ndarray:
    """Gradient of cross_entropy_masked(softmax(logits), target, mask) w.r.t. logits."""
    l = np.asarray(logits, dtype=np.float64)
    p = softmax_columns(l)
    t = _target_matrix(target, p)
    w = _mask_weights(mask, p.shape[1])
    return softmax_backward(p, _ce_grad_p(p, t, w))


def kl_softmax_grad_logits(logits, target, mask) -> np.ndarray:
    """Gradient of kl_masked(softmax(logits), target, mask) w.r.t. logits."""
    l = np.asarray(logits, dtype=np.float64)
    p = softmax_columns(l)
    t = np.maximum(_target_matrix(target, p), PROB_EPS)
    w = _mask_weights(mask, p.shape[1])
    return softmax_backward(p, _kl_grad_p(p, t, w))


@dataclass
class LossInputs:
    """One image's student-side inputs to the combined loss.

    ``features`` and ``logits`` are the differentiated quantities; every
    target (``ce_target``, ``sim_targets``) is a constant.  ``unlabeled``
    adds the KL term and averages the two CE terms; ``rectified_ce`` adds
    the CE term on similarity-rectified logits; ``sim_targets=None``
    disables the derivative loss for this image.  ``der_reduction="mean"``
    averages each derivative-loss norm over its entry count instead of
    summing (the trainer's scale-free mode); the default ``"sum"`` is the
    plain entrywise form.
    """

    features: np.ndarray
    logits: np.ndarray
    ce_target: np.ndarray
    mask: np.ndarray
    sim_targets: tuple | list | None = None
    unlabeled: bool = True
    rectified_ce: bool = True
    der_reduction: str = "sum"


@dataclass
class LossBreakdown:
    """Loss parts, the weighted total, and gradients w.r.t. V and L."""

    ce: float
    kl: float
    der: float
    total: float
    grad_features: np.ndarray
    grad_logits: np.ndarray


def _der_scales(inputs: LossInputs, spec: DerLossSpec, d: int, m: int):
    """Per-term scale factors: 1.0 for "sum", 1/entries for "mean"."""
    if inputs.der_reduction not in _REDUCTIONS:
        raise ValueError(f"unknown der_reduction {inputs.der_reduction!r}")
    if inputs.der_reduction == "sum":
        return 1.0, 1.0
    sim_scale = 1.0 / (m * m)
    d_out = output_dim(d, spec.order_budget + 1, spec.variant)
    sparse_scale = 1.0 / (max(d_out, 1) * m)
    return sim_scale, sparse_scale


def loss_gradients(inputs: LossInputs, spec: DerLossSpec, weights: LossWeights) -> LossBreakdown:
    """Evaluate the combined loss for one image and its analytic gradients.

    The CE path covers both the plain softmax prediction and (when
    ``rectified_ce`` is set) the prediction rectified through the
    similarity sum S + dS built from the same features, so gradients flow
    into the features through the rectification as well.
    """
    v = np.asarray(inputs.features, dtype=np.float64)
    l = np.asarray(inputs.logits, dtype=np.float64)
    if v.ndim != 2 or l.ndim != 2 or v.shape[1] != l.shape[1]:
        raise ValueError(f"feature/logit pixel counts differ: {v.shape} vs {l.shape}")
    m = l.shape[1]
    p = softmax_columns(l)
    t = _target_matrix(inputs.ce_target, p)
    w = _mask_weights(inputs.mask, m)

    grad_v = np.zeros_like(v)
    grad_l = np.zeros_like(l)

    # Per-order derivative features are shared between the rectified-CE
    # path (orders 0..1) and the derivative loss (orders 0..Q).  Gram
    # matrices are materialized only for the derivative loss; the
    # rectification L (S + dS) factors through the feature rank as
    # (L V^T) V + (L dV^T) dV, which avoids every MxM product.
    der_on = inputs.sim_targets is not None
    max_order = 0
    if inputs.rectified_ce:
        max_order = 1
    if der_on:
        max_order = max(max_order, spec.order_budget)
    deriv = {0: v}
    for q in range(1, max_order + 1):
        deriv[q] = build_operator_matrix(q, v.shape[0], spec.variant).matrix @ v

    # CE on the plain prediction; the pair of CE terms is averaged for
    # unlabeled images and summed for labeled ones.
    pair = 0.5 if (inputs.unlabeled and inputs.rectified_ce) else 1.0
    ce = cross_entropy_masked(p, t, inputs.mask)
    grad_l += (weights.lambda_ce * pair) * softmax_backward(p, _ce_grad_p(p, t, w))

    if inputs.rectified_ce:
        d1 = deriv[1]
        vt = np.ascontiguousarray(v.T)
        d1t = np.ascontiguousarray(d1.T)
        lt = np.ascontiguousarray(l.T)
        l_rect = (l @ vt) @ v + (l @ d1t) @ d1
        p_rect = softmax_columns(l_rect)
        ce = pair * (ce + cross_entropy_masked(p_rect, t, inputs.mask))
        g_rect = (weights.lambda_ce * pair) * softmax_backward(
            p_rect, _ce_grad_p(p_rect, t, w)
        )
        grad_l += (g_rect @ vt) @ v + (g_rect @ d1t) @ d1
        # With W = L^T G_rect, the similarity-sum gradient is
        # V (W + W^T) + A1^T [dV (W + W^T)], expanded through the low
        # feature/class rank so no MxM matrix is formed.
        gt_ = np.ascontiguousarray(g_rect.T)
        grad_v += (v @ lt) @ g_rect + (v @ gt_) @ l
        op1 = build_operator_matrix(1, v.shape[0], spec.variant)
        grad_v += op1.matrix.T @ ((d1 @ lt) @ g_rect + (d1 @ gt_) @ l)

    kl = 0.0
    if inputs.unlabeled:
        t_cl = np.maximum(t, PROB_EPS)
        kl = kl_masked(p, t, inputs.mask)
        grad_l += weights.lambda_kl * softmax_backward(p, _kl_grad_p(p, t_cl, w))

    der = 0.0
    if der_on:
        sim_scale, sparse_scale = _der_scales(inputs, spec, v.shape[0], m)
        targets = [np.asarray(sg, dtype=np.float64) for sg in inputs.sim_targets]
        if len(targets) != spec.order_budget + 1:
            raise ValueError(
                f"expected {spec.order_budget + 1} similarity targets, got {len(targets)}"
            )
        for q, sg in enumerate(targets):
            e = fast_gram(deriv[q]) - sg
            der += sim_scale * float(np.abs(e).sum())
            # E is symmetric away from kinks (the target is symmetric and
            # the Gram symmetric up to roundoff), so 2 sign(E) is a valid
            # subgradient selection for sign(E) + sign(E)^T.
            g_u = (2.0 * weights.lambda_der * sim_scale) * (deriv[q] @ np.sign(e))
            if q == 0:
                grad_v += g_u
            else:
                grad_v += build_operator_matrix(q, v.shape[0], spec.variant).matrix.T @ g_u
        if spec.sparsity_enabled:
            op = build_operator_matrix(spec.order_budget + 1, v.shape[0], spec.variant)
            du = op.matrix @ v
            der += spec.eta * sparse_scale * float(np.abs(du).sum())
            grad_v += (weights.lambda_der * spec.eta * sparse_scale) * (
                op.matrix.T @ np.sign(du)
            )

    return LossBreakdown(
        ce=ce,
        kl=kl,
        der=der,
        total=total_loss(ce, kl, der, weights),
        grad_features=grad_v,
        grad_logits=grad_l,
    )


def finite_difference_check(f, x, grad, eps: float = 1e-5) -> float:
    """Max relative error between central differences of f and a gradient.

    Perturbs every coordinate of x by +-eps; the relative error uses the
    denominator max(|numeric|, |analytic|, 1e-8).  Non-finite function
    values are reported with the offending coordinate index.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    x = np.asarray(x, dtype=np.float64)
    g = np.asarray(grad, dtype=np.float64)
    if g.shape != x.shape:
        raise ValueError(f"gradient shape {g.shape} does not match input shape {x.shape}")
    worst = 0.0
    flat = x.reshape(-1)
    for i in range(flat.size):
        xp = flat.copy()
        xp[i] += eps
        fp = f(xp.reshape(x.shape))
        xm = flat.copy()
        xm[i] -= eps
        fm = f(xm.reshape(x.shape))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError(f"non-finite loss value when perturbing coordinate {i}")
        numeric = (fp - fm) / (2.0 * eps)
        analytic = g.reshape(-1)[i]
        denom = max(abs(numeric), abs(analytic), 1e-8)
        worst = max(worst, float(abs(numeric - analytic) / denom))
    return worst
