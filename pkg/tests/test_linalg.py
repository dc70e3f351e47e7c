import numpy as np
import numpy.testing as npt
import pytest

from pclab.linalg import (
    ShapeError,
    affine,
    apply_act,
    apply_act_deriv,
    augment_ones,
    feedback,
    matmul_counter,
    mse,
    outer_accum,
    softmax,
)


class TestAffine:
    def test_identity_block_zero_bias(self):
        W = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        npt.assert_array_equal(affine(W, [[2.0, 3.0]]), [[2.0, 3.0]])

    def test_bias_only_column(self):
        W = np.array([[0.0, 0.0, 5.0]])
        npt.assert_array_equal(affine(W, [[7.0, 9.0]]), [[5.0]])

    def test_hand_dot_product(self):
        # [1, 1] . [2, 3] + 1 = 6
        W = np.array([[1.0, 1.0, 1.0]])
        npt.assert_allclose(affine(W, [[2.0, 3.0]]), [[6.0]])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            affine(np.ones((2, 3)), np.ones((1, 3)))

    def test_linear_in_activations_when_bias_zero(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            W = rng.normal(size=(3, 5))
            W[:, -1] = 0.0
            a = rng.normal(size=(4, 4))
            b = rng.normal(size=(4, 4))
            ca, cb = rng.normal(size=2)
            lhs = affine(W, ca * a + cb * b)
            rhs = ca * affine(W, a) + cb * affine(W, b)
            npt.assert_allclose(lhs, rhs, atol=1e-12)

    def test_batched_rows_independent(self):
        # rows may differ from single-sample calls only by summation order
        rng = np.random.default_rng(1)
        W = rng.normal(size=(3, 4))
        a = rng.normal(size=(5, 3))
        full = affine(W, a)
        for i in range(5):
            npt.assert_allclose(full[i], affine(W, a[i : i + 1])[0], rtol=1e-13, atol=1e-15)


class TestFeedbackAndOuter:
    def test_feedback_drops_bias_column(self):
        W = np.array([[1.0, 2.0, 99.0], [3.0, 4.0, 99.0]])
        e = np.array([[1.0, 1.0]])
        npt.assert_allclose(feedback(W, e), [[4.0, 6.0]])

    def test_outer_accum_single_sample(self):
        got = outer_accum([[1.0, 0.0]], [[2.0, 3.0]])
        npt.assert_array_equal(got, [[2.0, 3.0, 1.0], [0.0, 0.0, 0.0]])

    def test_outer_accum_zero_errors(self):
        got = outer_accum(np.zeros((3, 2)), np.ones((3, 4)))
        npt.assert_array_equal(got, np.zeros((2, 5)))

    def test_outer_accum_sums_samples(self):
        # e rows [1], [1]; a rows [1], [2] -> [[1*1 + 1*2, 1 + 1]] = [[3, 2]]
        got = outer_accum([[1.0], [1.0]], [[1.0], [2.0]])
        npt.assert_array_equal(got, [[3.0, 2.0]])

    def test_outer_accum_sample_mismatch(self):
        with pytest.raises(ShapeError):
            outer_accum(np.ones((2, 1)), np.ones((3, 1)))

    def test_affine_outer_adjoint(self):
        # <affine(W, a), e> == <W, outer_accum(e, a)> when the bias pairs with 1
        rng = np.random.default_rng(2)
        W = rng.normal(size=(3, 5))
        a = rng.normal(size=(6, 4))
        e = rng.normal(size=(6, 3))
        lhs = float(np.sum(affine(W, a) * e))
        rhs = float(np.sum(W * outer_accum(e, a)))
        npt.assert_allclose(lhs, rhs, rtol=1e-12)


class TestActivations:
    def test_relu_and_derivative(self):
        npt.assert_array_equal(apply_act("relu", [[-1.0, 2.0]]), [[0.0, 2.0]])
        npt.assert_array_equal(apply_act_deriv("relu", [[-1.0, 2.0]]), [[0.0, 1.0]])

    def test_relu_derivative_at_kink_is_zero(self):
        assert apply_act_deriv("relu", np.array([[0.0]]))[0, 0] == 0.0

    def test_identity_derivative_ones(self):
        npt.assert_array_equal(apply_act_deriv("identity", np.zeros((2, 3))), np.ones((2, 3)))

    def test_sigmoid_symmetry_point(self):
        assert apply_act("sigmoid", np.array([[0.0]]))[0, 0] == 0.5
        assert apply_act_deriv("sigmoid", np.array([[0.0]]))[0, 0] == 0.25

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            apply_act("softplus", np.zeros((1, 1)))

    @pytest.mark.parametrize("kind", ["relu", "tanh", "identity", "sigmoid"])
    def test_derivative_matches_finite_differences(self, kind):
        rng = np.random.default_rng(3)
        x = rng.uniform(-3, 3, size=(4, 7))
        if kind == "relu":
            x = x[np.abs(x) > 1e-3].reshape(1, -1)  # stay away from the kink
        h = 1e-6
        fd = (apply_act(kind, x + h) - apply_act(kind, x - h)) / (2 * h)
        npt.assert_allclose(apply_act_deriv(kind, x), fd, rtol=1e-6, atol=1e-9)


class TestSoftmax:
    def test_uniform(self):
        npt.assert_allclose(softmax([[0.0, 0.0]]), [[0.5, 0.5]])

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(4)
        s = softmax(rng.normal(size=(10, 6)) * 10)
        npt.assert_allclose(s.sum(axis=1), np.ones(10), atol=1e-12)

    def test_shift_invariance(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(5, 4))
        npt.assert_allclose(softmax(x + 13.7), softmax(x), atol=1e-12)

    def test_no_overflow_for_huge_logits(self):
        s = softmax([[1000.0, 0.0]])
        assert np.all(np.isfinite(s))
        npt.assert_allclose(s[0, 0], 1.0)
        assert s[0, 1] < 1e-300


class TestMse:
    def test_zero_when_equal(self):
        y = np.ones((3, 2))
        assert mse(y, y) == 0.0

    def test_single_unit_error(self):
        assert mse([[1.0, 0.0]], [[0.0, 0.0]]) == 0.5

    def test_hand_value(self):
        # 0.5 * (4 + 1) = 2.5
        assert mse([[2.0, 2.0]], [[0.0, 1.0]]) == 2.5

    def test_mean_over_samples(self):
        y = np.array([[1.0], [3.0]])
        p = np.array([[0.0], [0.0]])
        assert mse(y, p) == 0.5 * (1.0 + 9.0) / 2

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            mse(np.ones((2, 2)), np.ones((2, 3)))


class TestCounter:
    def test_counts_products(self):
        matmul_counter.reset()
        W = np.ones((2, 3))
        a = np.ones((4, 2))
        affine(W, a)
        feedback(W, np.ones((4, 2)))
        outer_accum(np.ones((4, 2)), a)
        softmax(a)  # elementwise work is not counted
        assert matmul_counter.count == 3
        matmul_counter.reset()

    def test_finite_outputs(self):
        rng = np.random.default_rng(6)
        W = rng.normal(size=(3, 4))
        a = rng.normal(size=(5, 3))
        for arr in (affine(W, a), feedback(W, rng.normal(size=(5, 3))), augment_ones(a)):
            assert np.all(np.isfinite(arr))
