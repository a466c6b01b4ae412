"""Seeded finite-difference validation of every analytic gradient.

Instances are drawn so that no |x| kink lies within 1e-3 of zero (the
sign pattern must not flip under the +-1e-5 probe steps); instances that
land inside a kink neighborhood are re-sampled.
"""

from __future__ import annotations

import numpy as np

from .derivative import build_operator_matrix, output_dim
from .losses import (
    DerLossSpec,
    LossInputs,
    LossWeights,
    ce_softmax_grad_logits,
    cross_entropy_masked,
    derivative_loss_from_features,
    derivative_loss_grad_features,
    finite_difference_check,
    kl_masked,
    kl_softmax_grad_logits,
    loss_gradients,
    similarity_stack,
)
from .core import softmax_columns
from .seeding import make_rng

KINK_MARGIN = 1e-3
FD_EPS = 1e-5
THRESHOLD = 1e-4


def _kink_free(v: np.ndarray, targets, spec: DerLossSpec) -> bool:
    """No derivative-loss absolute value sits within the kink margin."""
    for q, t in enumerate(targets):
        if q == 0:
            u = v
        else:
            u = build_operator_matrix(q, v.shape[0], spec.variant).matrix @ v
        if np.abs(u.T @ u - t).min() < KINK_MARGIN:
            return False
    if spec.sparsity_enabled:
        op = build_operator_matrix(spec.order_budget + 1, v.shape[0], spec.variant)
        if np.abs(op.matrix @ v).min() < KINK_MARGIN:
            return False
    return True


def _sample_der_instance(rng, order_budget: int, sparsity: bool):
    spec = DerLossSpec(order_budget=order_budget, eta=0.5, variant="forward",
                       sparsity_enabled=sparsity)
    d = order_budget + 3 + int(rng.integers(0, 2))
    m = int(rng.integers(3, 6))
    for _ in range(500):
        v = rng.normal(scale=0.6, size=(d, m))
        v_weak = rng.normal(scale=0.6, size=(d, m))
        targets = similarity_stack(v_weak, order_budget, spec.variant)
        if _kink_free(v, targets, spec):
            return v, targets, spec
    raise RuntimeError("could not sample a kink-free derivative-loss instance")


def check_derivative_loss(trials: int, seed: int) -> float:
    """Max relative FD error over the (Q, sparsity) grid."""
    rng = make_rng(seed, "gradcheck-der")
    worst = 0.0
    grid = [(q, sp) for q in (0, 1, 2, 3) for sp in (True, False)]
    for k in range(trials):
        order_budget, sparsity = grid[k % len(grid)]
        v, targets, spec = _sample_der_instance(rng, order_budget, sparsity)
        grad = derivative_loss_grad_features(v, targets, spec)
        err = finite_difference_check(
            lambda x: derivative_loss_from_features(x, targets, spec), v, grad, FD_EPS
        )
        worst = max(worst, err)
    return worst


def _sample_logit_instance(rng):
    c = int(rng.integers(3, 6))
    m = int(rng.integers(4, 9))
    logits = rng.normal(size=(c, m))
    target = softmax_columns(rng.normal(size=(c, m)))
    mask = (rng.random(m) < 0.7).astype(np.float64)
    if mask.sum() == 0:
        mask[0] = 1.0
    return logits, target, mask


def check_cross_entropy(trials: int, seed: int) -> float:
    rng = make_rng(seed, "gradcheck-ce")
    worst = 0.0
    for _ in range(trials):
        logits, target, mask = _sample_logit_instance(rng)
        grad = ce_softmax_grad_logits(logits, target, mask)
        err = finite_difference_check(
            lambda x: cross_entropy_masked(softmax_columns(x), target, mask),
            logits, grad, FD_EPS,
        )
        worst = max(worst, err)
    return worst


def check_kl(trials: int, seed: int) -> float:
    rng = make_rng(seed, "gradcheck-kl")
    worst = 0.0
    for _ in range(trials):
        logits, target, mask = _sample_logit_instance(rng)
        grad = kl_softmax_grad_logits(logits, target, mask)
        err = finite_difference_check(
            lambda x: kl_masked(softmax_columns(x), target, mask), logits, grad, FD_EPS
        )
        worst = max(worst, err)
    return worst


def check_total(trials: int, seed: int) -> float:
    """Joint FD check of loss_gradients over (features, logits)."""
    rng = make_rng(seed, "gradcheck-total")
    weights = LossWeights()
    worst = 0.0
    for k in range(trials):
        unlabeled = k % 2 == 0
        v, targets, spec = _sample_der_instance(rng, 1, True)
        d, m = v.shape
        c = int(rng.integers(3, 5))
        logits = rng.normal(size=(c, m))
        target = softmax_columns(rng.normal(size=(c, m)))
        mask = (rng.random(m) < 0.8).astype(np.float64)
        if mask.sum() == 0:
            mask[0] = 1.0

        def split(x):
            return x[: d * m].reshape(d, m), x[d * m :].reshape(c, m)

        def f(x):
            fv, fl = split(x)
            inputs = LossInputs(
                features=fv, logits=fl, ce_target=target, mask=mask,
                sim_targets=targets, unlabeled=unlabeled, rectified_ce=True,
            )
            return loss_gradients(inputs, spec, weights).total

        inputs = LossInputs(
            features=v, logits=logits, ce_target=target, mask=mask,
            sim_targets=targets, unlabeled=unlabeled, rectified_ce=True,
        )
        br = loss_gradients(inputs, spec, weights)
        grad = np.concatenate([br.grad_features.reshape(-1), br.grad_logits.reshape(-1)])
        x0 = np.concatenate([v.reshape(-1), logits.reshape(-1)])
        worst = max(worst, finite_difference_check(f, x0, grad, FD_EPS))
    return worst


def run_gradcheck_suite(trials: int = 100, seed: int = 0) -> dict:
    """All four families; each entry reports its max relative error."""
    checks = {
        "derivative_loss": check_derivative_loss,
        "cross_entropy": check_cross_entropy,
        "kl": check_kl,
        "total": check_total,
    }
    results = {}
    for name, fn in checks.items():
        err = fn(trials, seed)
        results[name] = {
            "trials": trials,
            "max_rel_err": float(err),
            "threshold": THRESHOLD,
            "passed": bool(err < THRESHOLD),
        }
    return results
