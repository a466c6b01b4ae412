import math

import numpy as np
import pytest

from derprop.core import LabelMap, entrywise_l1, softmax_columns
from derprop.derivative import DimensionUnderflowError, build_operator_matrix
from derprop.losses import (
    DerLossSpec,
    LossInputs,
    LossWeights,
    cross_entropy_masked,
    derivative_loss,
    derivative_loss_from_features,
    finite_difference_check,
    kl_masked,
    labeled_target_stack,
    loss_gradients,
    similarity_stack,
    total_loss,
)


class TestDerivativeLoss:
    def test_zero_when_matched(self):
        rng = np.random.default_rng(0)
        # Affine columns have zero second difference, so the sparsity term
        # vanishes when the prediction stack equals the target stack.
        idx = np.arange(4.0)[:, None]
        v = 0.3 + 0.1 * idx * rng.normal(size=(1, 3))
        spec = DerLossSpec(order_budget=1, eta=0.5)
        stack = similarity_stack(v, 1)
        assert derivative_loss(stack, stack, v, spec) <= 1e-12

    def test_single_pixel_hand_arithmetic(self):
        v = np.array([[0.5], [0.3], [0.2]])
        spec = DerLossSpec(order_budget=1, eta=0.5, sparsity_enabled=True)
        targets = [np.array([[1.0]]), np.array([[1.0]])]
        # scalar oracle, assembled term by term
        s0 = 0.5 * 0.5 + 0.3 * 0.3 + 0.2 * 0.2
        d1 = np.array([0.3 - 0.5, 0.2 - 0.3])
        s1 = float(d1 @ d1)
        d2 = (0.2 - 0.3) - (0.3 - 0.5)
        expected = abs(s0 - 1.0) + abs(s1 - 1.0) + 0.5 * abs(d2)
        got = derivative_loss_from_features(v, targets, spec)
        assert abs(got - expected) <= 1e-12

    def test_stack_length_mismatch(self):
        v = np.ones((3, 2))
        spec = DerLossSpec(order_budget=1)
        with pytest.raises(ValueError, match="stacks differ"):
            derivative_loss([np.eye(2)], [np.eye(2), np.eye(2)], v, spec)
        with pytest.raises(ValueError, match="stacked orders"):
            derivative_loss([np.eye(2)], [np.eye(2)], v, spec)

    def test_order_budget_exceeding_dimension(self):
        v = np.ones((3, 2))
        spec = DerLossSpec(order_budget=2, sparsity_enabled=True)
        stack = [np.zeros((2, 2))] * 3
        with pytest.raises(DimensionUnderflowError):
            derivative_loss(stack, stack, v, spec)

    def test_nonnegative_and_zero_iff(self):
        rng = np.random.default_rng(1)
        spec = DerLossSpec(order_budget=1, eta=0.5)
        for _ in range(20):
            v = rng.normal(size=(5, 3))
            targets = similarity_stack(rng.normal(size=(5, 3)), 1)
            val = derivative_loss_from_features(v, targets, spec)
            assert val >= 0.0

    def test_sparsity_off_never_increases(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            v = rng.normal(size=(6, 4))
            targets = similarity_stack(rng.normal(size=(6, 4)), 1)
            with_sp = derivative_loss_from_features(
                v, targets, DerLossSpec(order_budget=1, eta=0.5, sparsity_enabled=True)
            )
            without = derivative_loss_from_features(
                v, targets, DerLossSpec(order_budget=1, sparsity_enabled=False)
            )
            assert without <= with_sp

    def test_labeled_target_stack_modes(self):
        labels = LabelMap(np.array([0, 0, 1]), 2)
        ygram = labeled_target_stack(labels, 2, "ygram")
        assert len(ygram) == 3
        for t in ygram:
            np.testing.assert_array_equal(t, ygram[0])
        zero = labeled_target_stack(labels, 2, "zero")
        np.testing.assert_array_equal(zero[0], ygram[0])
        assert not zero[1].any() and not zero[2].any()


class TestGeneralFormMatchesFixedForm:
    def test_q1_equals_directly_coded_expression(self):
        # The Q-general loss with Q=1 must reproduce the fixed three-term
        # expression bitwise on shared stacks.
        rng = np.random.default_rng(3)
        for _ in range(20):
            d, m = int(rng.integers(4, 8)), int(rng.integers(2, 6))
            v = rng.normal(size=(d, m))
            pred = similarity_stack(v, 1)
            gt = similarity_stack(rng.normal(size=(d, m)), 1)
            spec = DerLossSpec(order_budget=1, eta=0.5, sparsity_enabled=True)
            general = derivative_loss(pred, gt, v, spec)
            a2 = build_operator_matrix(2, d).matrix
            direct = (
                np.abs(pred[0] - gt[0]).sum()
                + np.abs(pred[1] - gt[1]).sum()
                + 0.5 * np.abs(a2 @ v).sum()
            )
            assert general == direct  # bitwise


class TestCrossEntropy:
    def test_one_hot_match_is_zero(self):
        y = LabelMap(np.array([0, 1, 2]), 3)
        p = y.one_hot()
        assert cross_entropy_masked(p, y, np.ones(3)) <= 1e-10

    def test_uniform_two_class(self):
        p = np.full((2, 4), 0.5)
        y = LabelMap(np.zeros(4, dtype=np.int64), 2)
        assert abs(cross_entropy_masked(p, y, np.ones(4)) - math.log(2.0)) <= 1e-12

    def test_empty_mask(self):
        p = np.full((2, 3), 0.5)
        y = LabelMap(np.zeros(3, dtype=np.int64), 2)
        assert cross_entropy_masked(p, y, np.zeros(3)) == 0.0

    def test_masked_out_pixels_ignored(self):
        rng = np.random.default_rng(4)
        p1 = softmax_columns(rng.normal(size=(3, 6)))
        p2 = p1.copy()
        p2[:, 4] = [0.1, 0.1, 0.8]  # unmasked pixel changes
        t = softmax_columns(rng.normal(size=(3, 6)))
        mask = np.array([1, 1, 1, 1, 0, 0], dtype=float)
        assert cross_entropy_masked(p1, t, mask) == cross_entropy_masked(p2, t, mask)


class TestKl:
    def test_zero_when_equal(self):
        rng = np.random.default_rng(5)
        p = softmax_columns(rng.normal(size=(3, 5)))
        assert abs(kl_masked(p, p, np.ones(5))) <= 1e-10

    def test_one_hot_target_closed_form(self):
        p = np.array([[0.5], [0.5]])
        t = np.array([[1.0], [0.0]])
        assert abs(kl_masked(p, t, np.ones(1)) - math.log(2.0)) <= 1e-9

    def test_empty_mask(self):
        assert kl_masked(np.full((2, 2), 0.5), np.full((2, 2), 0.5), np.zeros(2)) == 0.0

    def test_masked_out_pixels_ignored(self):
        rng = np.random.default_rng(6)
        p1 = softmax_columns(rng.normal(size=(4, 5)))
        p2 = p1.copy()
        p2[:, 0] = [0.7, 0.1, 0.1, 0.1]
        t = softmax_columns(rng.normal(size=(4, 5)))
        mask = np.array([0, 1, 1, 0, 1], dtype=float)
        assert kl_masked(p1, t, mask) == kl_masked(p2, t, mask)


class TestTotalLoss:
    def test_paper_weights(self):
        assert total_loss(1.0, 1.0, 1.0, LossWeights()) == 1.25

    def test_zero(self):
        assert total_loss(0.0, 0.0, 0.0, LossWeights()) == 0.0

    def test_doubling_weights_doubles_total(self):
        w = LossWeights(lambda_ce=0.3, lambda_kl=0.2, lambda_der=0.7)
        w2 = LossWeights(lambda_ce=0.6, lambda_kl=0.4, lambda_der=1.4)
        assert abs(total_loss(0.5, 1.5, 2.5, w2) - 2 * total_loss(0.5, 1.5, 2.5, w)) <= 1e-12

    def test_affine_in_each_part(self):
        w = LossWeights()
        base = total_loss(1.0, 2.0, 3.0, w)
        assert abs(total_loss(2.0, 2.0, 3.0, w) - base - w.lambda_ce) <= 1e-12
        assert abs(total_loss(1.0, 3.0, 3.0, w) - base - w.lambda_kl) <= 1e-12
        assert abs(total_loss(1.0, 2.0, 4.0, w) - base - w.lambda_der) <= 1e-12

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            LossWeights(lambda_ce=-0.1)


class TestFiniteDifferenceCheck:
    def test_quadratic_exact(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(4, 3))
        err = finite_difference_check(lambda t: float((t**2).sum()), x, 2.0 * x)
        assert err < 1e-9

    def test_l1_away_from_zeros(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=10)
        x = np.where(np.abs(x) < 0.1, 0.5, x)  # keep away from the kink
        err = finite_difference_check(lambda t: entrywise_l1(t), x, np.sign(x))
        assert err < 1e-6

    def test_planted_fault_detected(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=6) + 3.0
        err = finite_difference_check(lambda t: float((t**2).sum()), x, 4.0 * x)
        assert abs(err - 0.5) < 1e-6

    def test_nonfinite_reports_coordinate(self):
        # log goes non-finite only when coordinate 1 is pushed negative
        x = np.array([1.0, 1e-6])

        def f(t):
            with np.errstate(invalid="ignore"):
                return float(np.log(t[1]))

        with pytest.raises(ValueError, match="coordinate 1"):
            finite_difference_check(f, x, np.array([0.0, 1e6]), eps=1e-5)


class TestLossGradientsBundle:
    def _bundle(self, rng, unlabeled=True, rectified=True, reduction="sum"):
        d, m, c = 5, 4, 3
        v = rng.normal(scale=0.6, size=(d, m))
        logits = rng.normal(size=(c, m))
        target = softmax_columns(rng.normal(size=(c, m)))
        mask = np.ones(m)
        targets = similarity_stack(rng.normal(scale=0.6, size=(d, m)), 1)
        inputs = LossInputs(
            features=v, logits=logits, ce_target=target, mask=mask,
            sim_targets=targets, unlabeled=unlabeled, rectified_ce=rectified,
            der_reduction=reduction,
        )
        return inputs

    def test_gradient_shapes(self):
        rng = np.random.default_rng(10)
        inputs = self._bundle(rng)
        br = loss_gradients(inputs, DerLossSpec(order_budget=1), LossWeights())
        assert br.grad_features.shape == inputs.features.shape
        assert br.grad_logits.shape == inputs.logits.shape
        assert br.total == total_loss(br.ce, br.kl, br.der, LossWeights())

    def test_labeled_drops_kl(self):
        rng = np.random.default_rng(11)
        inputs = self._bundle(rng, unlabeled=False)
        br = loss_gradients(inputs, DerLossSpec(order_budget=1), LossWeights())
        assert br.kl == 0.0

    def test_teacher_targets_are_constants(self):
        # Same student tensors, different unrelated teacher inputs but the
        # identical target maps -> identical gradients (stop-gradient).
        rng = np.random.default_rng(12)
        inputs = self._bundle(rng)
        spec = DerLossSpec(order_budget=1)
        br1 = loss_gradients(inputs, spec, LossWeights())
        br2 = loss_gradients(inputs, spec, LossWeights())
        assert br1.grad_features.tobytes() == br2.grad_features.tobytes()
        assert br1.grad_logits.tobytes() == br2.grad_logits.tobytes()

    def test_mean_reduction_scales_der_part(self):
        rng = np.random.default_rng(13)
        inputs_sum = self._bundle(rng, reduction="sum")
        inputs_mean = LossInputs(
            features=inputs_sum.features, logits=inputs_sum.logits,
            ce_target=inputs_sum.ce_target, mask=inputs_sum.mask,
            sim_targets=inputs_sum.sim_targets, unlabeled=True,
            rectified_ce=True, der_reduction="mean",
        )
        spec = DerLossSpec(order_budget=1, sparsity_enabled=False)
        br_sum = loss_gradients(inputs_sum, spec, LossWeights())
        br_mean = loss_gradients(inputs_mean, spec, LossWeights())
        m = inputs_sum.features.shape[1]
        assert abs(br_mean.der - br_sum.der / (m * m)) <= 1e-12

    def test_mean_reduction_gradients_match_fd(self):
        rng = np.random.default_rng(14)
        inputs = self._bundle(rng, reduction="mean")
        spec = DerLossSpec(order_budget=1)
        weights = LossWeights()
        br = loss_gradients(inputs, spec, weights)

        def f_v(x):
            probe = LossInputs(
                features=x, logits=inputs.logits, ce_target=inputs.ce_target,
                mask=inputs.mask, sim_targets=inputs.sim_targets, unlabeled=True,
                rectified_ce=True, der_reduction="mean",
            )
            return loss_gradients(probe, spec, weights).total

        err = finite_difference_check(f_v, inputs.features, br.grad_features)
        assert err < 1e-4
