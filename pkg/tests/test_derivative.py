import numpy as np
import pytest
import sympy

from derprop.derivative import (
    VARIANTS,
    DimensionUnderflowError,
    apply_operator_columns,
    build_operator_matrix,
    diff,
    induced_one_norm,
    numerical_rank,
    output_dim,
)


class TestDiff:
    def test_forward_first_order(self):
        np.testing.assert_array_equal(diff([1.0, 2.0, 4.0], 1), [1.0, 2.0])

    def test_forward_second_order(self):
        np.testing.assert_array_equal(diff([1.0, 2.0, 4.0], 2), [1.0])

    def test_constants_annihilated(self):
        np.testing.assert_array_equal(diff([3.5, 3.5, 3.5], 1), [0.0, 0.0])

    def test_order_zero_identity(self):
        v = np.array([2.0, -1.0, 0.5])
        for variant in VARIANTS:
            np.testing.assert_array_equal(diff(v, 0, variant), v)

    def test_central_single_step(self):
        np.testing.assert_array_equal(diff([1.0, 5.0, 3.0, 9.0], 1, "central"), [1.0, 2.0])

    def test_summation_single_step(self):
        np.testing.assert_array_equal(diff([1.0, 2.0, 4.0], 1, "summation"), [3.0, 6.0])

    def test_second_central_single_step(self):
        # v(i+1) + v(i-1) - 2 v(i) over the interior positions
        np.testing.assert_array_equal(
            diff([1.0, 2.0, 4.0, 8.0], 1, "second_central"), [1.0, 2.0]
        )

    def test_underflow_reports_context(self):
        with pytest.raises(DimensionUnderflowError, match="order-3.*forward.*3-channel"):
            diff([1.0, 2.0, 3.0], 3)

    def test_underflow_central(self):
        with pytest.raises(DimensionUnderflowError):
            diff([1.0, 2.0, 3.0, 4.0], 2, "central")

    def test_output_lengths(self):
        v = np.arange(10.0)
        assert diff(v, 3).shape == (7,)
        assert diff(v, 3, "summation").shape == (7,)
        assert diff(v, 3, "central").shape == (4,)
        assert diff(v, 3, "second_central").shape == (4,)

    def test_linearity_all_variants(self):
        rng = np.random.default_rng(0)
        for variant in VARIANTS:
            for _ in range(10):
                u = rng.normal(size=9)
                v = rng.normal(size=9)
                a, b = rng.normal(size=2)
                q = int(rng.integers(1, 4 if variant in ("central", "second_central") else 7))
                lhs = diff(a * u + b * v, q, variant)
                rhs = a * diff(u, q, variant) + b * diff(v, q, variant)
                np.testing.assert_allclose(lhs, rhs, atol=1e-10)

    def test_repeated_first_order_equals_second(self):
        rng = np.random.default_rng(1)
        v = rng.normal(size=8)
        np.testing.assert_allclose(diff(diff(v, 1), 1), diff(v, 2), atol=1e-12)

    def test_affine_vectors_vanish_at_order_two_and_beyond(self):
        v = 1.5 + 0.25 * np.arange(9.0)
        assert np.abs(diff(v, 2)).max() <= 1e-12
        for q in range(2, 9):
            assert np.abs(diff(v, q)).max() <= 1e-12


class TestBuildOperatorMatrix:
    def test_forward_q1_rows(self):
        op = build_operator_matrix(1, 3)
        np.testing.assert_array_equal(op.matrix, [[-1.0, 1.0, 0.0], [0.0, -1.0, 1.0]])

    def test_forward_q2_rows(self):
        op = build_operator_matrix(2, 4)
        np.testing.assert_array_equal(
            op.matrix, [[1.0, -2.0, 1.0, 0.0], [0.0, 1.0, -2.0, 1.0]]
        )

    def test_summation_q1_rows(self):
        op = build_operator_matrix(1, 3, "summation")
        np.testing.assert_array_equal(op.matrix, [[1.0, 1.0, 0.0], [0.0, 1.0, 1.0]])

    def test_matrix_matches_recursion_all_variants(self):
        rng = np.random.default_rng(2)
        for variant in VARIANTS:
            for d in range(3, 10):
                max_q = (d - 1) // 2 if variant in ("central", "second_central") else d - 1
                for q in range(1, max_q + 1):
                    op = build_operator_matrix(q, d, variant)
                    for _ in range(3):
                        v = rng.normal(size=d)
                        np.testing.assert_allclose(
                            op.matrix @ v, diff(v, q, variant), atol=1e-12
                        )

    def test_forward_composition_exact_integers(self):
        for d in range(3, 12):
            a1_outer = build_operator_matrix(1, d - 1).matrix
            a1_inner = build_operator_matrix(1, d).matrix
            a2 = build_operator_matrix(2, d).matrix
            np.testing.assert_array_equal(a1_outer @ a1_inner, a2)

    def test_forward_row_sums_zero(self):
        for q in range(1, 7):
            for d in range(q + 1, 13):
                rows = build_operator_matrix(q, d).matrix.sum(axis=1)
                np.testing.assert_array_equal(rows, np.zeros(d - q))

    def test_underflow(self):
        with pytest.raises(DimensionUnderflowError):
            build_operator_matrix(4, 4)

    def test_matrix_read_only(self):
        op = build_operator_matrix(1, 4)
        with pytest.raises(ValueError):
            op.matrix[0, 0] = 5.0


class TestApplyOperatorColumns:
    def test_constant_columns_vanish(self):
        op = build_operator_matrix(1, 4)
        v = np.ones((4, 2)) * np.array([3.0, -2.0])
        np.testing.assert_array_equal(apply_operator_columns(op, v), np.zeros((3, 2)))

    def test_affine_columns_vanish_second_order(self):
        op = build_operator_matrix(2, 5)
        idx = np.arange(5.0)[:, None]
        v = 2.0 + 0.5 * idx * np.array([1.0, -3.0, 2.0])
        assert np.abs(apply_operator_columns(op, v)).max() <= 1e-12

    def test_matches_columnwise_diff_oracle(self):
        rng = np.random.default_rng(3)
        v = rng.normal(size=(4, 3))
        op = build_operator_matrix(1, 4)
        out = apply_operator_columns(op, v)
        for j in range(3):
            np.testing.assert_allclose(out[:, j], diff(v[:, j], 1), atol=1e-12)

    def test_shape_mismatch(self):
        op = build_operator_matrix(1, 4)
        with pytest.raises(ValueError, match="channels"):
            apply_operator_columns(op, np.ones((5, 2)))


class TestInducedOneNorm:
    def test_forward_q1(self):
        assert induced_one_norm(build_operator_matrix(1, 4).matrix) == 2.0

    def test_forward_q3(self):
        assert induced_one_norm(build_operator_matrix(3, 8).matrix) == 8.0

    def test_identity(self):
        assert induced_one_norm(np.eye(5)) == 1.0

    def test_exact_power_of_two_grid(self):
        for q in range(1, 7):
            for d in range(q + 1, 13):
                norm = induced_one_norm(build_operator_matrix(q, d).matrix)
                assert norm == 2.0**q  # exact, integer construction


class TestNumericalRank:
    def test_forward_rank_drop(self):
        assert numerical_rank(build_operator_matrix(1, 5).matrix) == 4

    def test_identity(self):
        assert numerical_rank(np.eye(6)) == 6

    def test_duplicated_row_vs_symbolic_oracle(self):
        m = np.array([[1.0, 2.0, 3.0], [1.0, 2.0, 3.0], [0.0, 1.0, 4.0]])
        expected = int(sympy.Matrix(m).rank())
        assert numerical_rank(m) == expected == 2

    def test_rank_grid(self):
        for d in range(3, 17):
            for q in range(1, d):
                assert numerical_rank(build_operator_matrix(q, d).matrix, 1e-10) == d - q

    def test_tol_must_be_positive(self):
        with pytest.raises(ValueError, match="positive"):
            numerical_rank(np.eye(2), 0.0)


def test_output_dim_rules():
    assert output_dim(10, 3, "forward") == 7
    assert output_dim(10, 3, "summation") == 7
    assert output_dim(10, 3, "central") == 4
    assert output_dim(10, 3, "second_central") == 4
    with pytest.raises(ValueError, match="variant"):
        output_dim(10, 1, "sideways")
