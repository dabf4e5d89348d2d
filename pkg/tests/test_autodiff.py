"""Tensor op forwards, backward pass, and gradient checks vs finite differences."""

import math

import numpy as np
import pytest

from connectobench import (
    ConfigError,
    ContractError,
    ShapeError,
    Tape,
    Tensor,
    backward,
    cross_entropy,
    dropout,
    matmul,
    mean_pool_rows,
    softmax_segments,
    sparse_aggregate,
    sum_all,
)
from connectobench.autodiff import (
    add,
    concat_cols,
    concat_rows,
    expand_col_blocks,
    gather_rows,
    layer_norm,
    mul,
    relu,
    scale,
    segment_sum_rows,
    sum_col_blocks,
)
from connectobench.optim import AdamState, adam_step

from helpers import max_rel_err, numerical_grad


def check_op_gradient(build, tensors, tol=1e-6, seed=0):
    """Gradient-check an op via a fixed random projection of its output."""
    rng = np.random.default_rng(seed)
    proj = Tensor(rng.standard_normal(build().shape))

    def loss_fn(tape=None):
        return sum_all(mul(build(tape), proj, tape), tape)

    tape = Tape()
    loss = loss_fn(tape)
    backward(tape, loss)
    analytic = [t.grad for t in tensors]
    numeric = numerical_grad(lambda: loss_fn().item(), tensors)
    for a, n in zip(analytic, numeric):
        assert a is not None
        assert max_rel_err(a, n) < tol


class TestMatmul:
    def test_identity(self):
        a = Tensor(np.eye(2))
        b = Tensor([[1.0, 2.0], [3.0, 4.0]])
        assert np.array_equal(matmul(a, b).data, b.data)

    def test_hand_product(self):
        out = matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        assert np.array_equal(out.data, [[11.0]])

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_gradient(self):
        rng = np.random.default_rng(42)
        a = Tensor(rng.standard_normal((5, 4)), requires_grad=True)
        b = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
        check_op_gradient(lambda tape=None: matmul(a, b, tape), [a, b])


class TestSparseAggregate:
    def test_empty_edges_is_zero(self):
        h = Tensor(np.ones((3, 2)))
        out = sparse_aggregate(np.zeros((0, 2), dtype=int), [], h)
        assert np.array_equal(out.data, np.zeros((3, 2)))

    def test_single_edge(self):
        h = Tensor([[5.0], [7.0]])
        out = sparse_aggregate([[0, 1]], [1.0], h)
        assert np.array_equal(out.data, [[0.0], [5.0]])

    def test_endpoint_out_of_range(self):
        with pytest.raises(IndexError):
            sparse_aggregate([[0, 3]], [1.0], Tensor(np.ones((2, 1))))

    def test_gradient_on_cycle(self):
        edges = np.array([[0, 1], [1, 2], [2, 3], [3, 0]])
        rng = np.random.default_rng(7)
        h = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
        check_op_gradient(
            lambda tape=None: sparse_aggregate(edges, np.ones(4), h, tape), [h])

    def test_full_dense_ones_matches_matmul(self):
        rng = np.random.default_rng(3)
        n, d = 6, 4
        h = Tensor(rng.standard_normal((n, d)))
        edges = np.array([(u, v) for u in range(n) for v in range(n)])
        out = sparse_aggregate(edges, np.ones(len(edges)), h)
        expected = np.ones((n, n)) @ h.data
        assert np.max(np.abs(out.data - expected)) < 1e-10

    def test_input_order_irrelevant(self):
        rng = np.random.default_rng(9)
        edges = np.array([[2, 0], [0, 1], [1, 0], [3, 0]])
        w = rng.standard_normal(4)
        h = Tensor(rng.standard_normal((4, 2)))
        shuffled = np.array([3, 0, 2, 1])
        a = sparse_aggregate(edges, w, h).data
        b = sparse_aggregate(edges[shuffled], w[shuffled], h).data
        assert np.array_equal(a, b)


class TestSoftmaxSegments:
    def test_uniform(self):
        out = softmax_segments(Tensor([[0.0], [0.0]]), [0, 0])
        assert np.allclose(out.data, [[0.5], [0.5]], atol=1e-15)

    def test_analytic(self):
        out = softmax_segments(Tensor([[math.log(2.0)], [0.0]]), [0, 0])
        assert np.allclose(out.data, [[2 / 3], [1 / 3]], atol=1e-12)

    def test_random_segments_sum_to_one(self):
        rng = np.random.default_rng(1)
        seg = np.repeat([0, 1, 2], [4, 2, 5])
        seg = rng.permutation(seg)
        scores = Tensor(rng.standard_normal((seg.size, 3)))
        out = softmax_segments(scores, seg)
        for s in range(3):
            sums = out.data[seg == s].sum(axis=0)
            assert np.max(np.abs(sums - 1.0)) < 1e-12

    def test_shift_invariance(self):
        rng = np.random.default_rng(2)
        seg = np.array([0, 0, 1, 1, 1])
        scores = rng.standard_normal((5, 2))
        base = softmax_segments(Tensor(scores), seg).data
        shifted = scores.copy()
        shifted[seg == 0] += 7.5
        shifted[seg == 1] -= 3.25
        out = softmax_segments(Tensor(shifted), seg).data
        assert np.max(np.abs(out - base)) < 1e-12

    def test_empty_returns_empty(self):
        out = softmax_segments(Tensor(np.zeros((0, 2))), [])
        assert out.shape == (0, 2)

    def test_gradient(self):
        rng = np.random.default_rng(5)
        seg = np.array([0, 0, 1, 1, 1, 2])
        scores = Tensor(rng.standard_normal((6, 2)), requires_grad=True)
        check_op_gradient(lambda tape=None: softmax_segments(scores, seg, tape),
                          [scores])


class TestElementwiseAndShape:
    def test_mean_pool_rows(self):
        out = mean_pool_rows(Tensor([[2.0, 4.0], [4.0, 8.0]]))
        assert np.array_equal(out.data, [[3.0, 6.0]])

    def test_relu(self):
        out = relu(Tensor([[1.0, -1.0, 0.0]]))
        assert np.array_equal(out.data, [[1.0, 0.0, 0.0]])

    def test_concat_cols_layout(self):
        a, b = Tensor([[1.0], [2.0]]), Tensor([[3.0, 4.0], [5.0, 6.0]])
        assert np.array_equal(concat_cols([a, b]).data,
                              [[1.0, 3.0, 4.0], [2.0, 5.0, 6.0]])

    def test_block_ops_roundtrip(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal((3, 4))
        expanded = expand_col_blocks(Tensor(a), 2)
        assert expanded.shape == (3, 8)
        summed = sum_col_blocks(expanded, 4)
        assert np.allclose(summed.data, 2 * a)

    @pytest.mark.parametrize("op,shapes", [
        ("add_same", [(3, 4), (3, 4)]),
        ("add_bias", [(3, 4), (1, 4)]),
        ("mul", [(3, 4), (3, 4)]),
    ])
    def test_binary_gradients(self, op, shapes):
        rng = np.random.default_rng(11)
        a = Tensor(rng.standard_normal(shapes[0]), requires_grad=True)
        b = Tensor(rng.standard_normal(shapes[1]), requires_grad=True)
        fn = add if op.startswith("add") else mul
        check_op_gradient(lambda tape=None: fn(a, b, tape), [a, b])

    @pytest.mark.parametrize("name", [
        "relu", "scale", "concat_cols", "concat_rows", "gather_rows",
        "mean_pool_rows", "sum_col_blocks", "expand_col_blocks",
        "segment_sum_rows",
    ])
    def test_unary_gradients(self, name):
        rng = np.random.default_rng(13)
        # keep entries away from the ReLU kink so finite differences are clean
        a = Tensor(np.sign(rng.standard_normal((4, 6))) *
                   (0.2 + np.abs(rng.standard_normal((4, 6)))),
                   requires_grad=True)
        b = Tensor(rng.standard_normal((4, 6)), requires_grad=True)
        idx = np.array([0, 2, 2, 3, 1])
        seg = np.array([1, 0, 0, 2])
        builders = {
            "relu": lambda tape=None: relu(a, tape),
            "scale": lambda tape=None: scale(a, -1.75, tape),
            "concat_cols": lambda tape=None: concat_cols([a, b], tape),
            "concat_rows": lambda tape=None: concat_rows([a, b], tape),
            "gather_rows": lambda tape=None: gather_rows(a, idx, tape),
            "mean_pool_rows": lambda tape=None: mean_pool_rows(a, tape),
            "sum_col_blocks": lambda tape=None: sum_col_blocks(a, 3, tape),
            "expand_col_blocks": lambda tape=None: expand_col_blocks(a, 2, tape),
            "segment_sum_rows": lambda tape=None: segment_sum_rows(a, seg, 3, tape),
        }
        tensors = [a, b] if name.startswith("concat") else [a]
        check_op_gradient(builders[name], tensors)

    def test_layer_norm_gradient(self):
        rng = np.random.default_rng(17)
        a = Tensor(rng.standard_normal((3, 6)), requires_grad=True)
        gain = Tensor(1.0 + 0.1 * rng.standard_normal((1, 6)), requires_grad=True)
        bias = Tensor(0.1 * rng.standard_normal((1, 6)), requires_grad=True)
        check_op_gradient(lambda tape=None: layer_norm(a, gain, bias, tape),
                          [a, gain, bias], tol=1e-5)


class TestDropout:
    def test_eval_is_identity(self):
        h = Tensor(np.arange(6.0).reshape(2, 3))
        out = dropout(h, 0.3, "eval", seed=123)
        assert out is h

    def test_rate_one_rejected(self):
        with pytest.raises(ConfigError):
            dropout(Tensor([[1.0]]), 1.0, "train")
        with pytest.raises(ConfigError):
            dropout(Tensor([[1.0]]), -0.1, "train")

    def test_bad_mode_rejected(self):
        with pytest.raises(ConfigError):
            dropout(Tensor([[1.0]]), 0.5, "predict")

    def test_train_survivor_count_and_scaling(self):
        h = Tensor(np.ones((1, 100_000)))
        out = dropout(h, 0.5, "train", seed=99)
        survivors = out.data[out.data != 0.0]
        # binomial oracle: 3 sigma around n*p with sigma = sqrt(n*p*(1-p))
        assert abs(survivors.size - 50_000) <= 3 * math.sqrt(100_000 * 0.25)
        assert np.all(survivors == 2.0)

    def test_same_seed_reproducible(self):
        h = Tensor(np.ones((4, 8)))
        a = dropout(h, 0.4, "train", seed=7).data
        b = dropout(h, 0.4, "train", seed=7).data
        assert np.array_equal(a, b)

    def test_gradient_with_fixed_seed(self):
        rng = np.random.default_rng(23)
        a = Tensor(rng.standard_normal((3, 5)), requires_grad=True)
        check_op_gradient(lambda tape=None: dropout(a, 0.4, "train", 55, tape), [a])


class TestCrossEntropy:
    def test_saturated_correct_class(self):
        loss = cross_entropy(Tensor([[1000.0, 0.0]]), [0])
        assert 0.0 <= loss.item() <= 1e-6

    def test_uniform_is_ln2(self):
        loss = cross_entropy(Tensor([[0.0, 0.0]]), [1])
        assert abs(loss.item() - math.log(2.0)) < 1e-12

    def test_label_out_of_range(self):
        with pytest.raises(IndexError):
            cross_entropy(Tensor([[0.0, 0.0]]), [2])

    def test_gradient(self):
        rng = np.random.default_rng(31)
        logits = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
        labels = [0, 2, 1, 1]

        def loss_fn(tape=None):
            return cross_entropy(logits, labels, tape)

        tape = Tape()
        loss = loss_fn(tape)
        backward(tape, loss)
        numeric = numerical_grad(lambda: loss_fn().item(), [logits])
        assert max_rel_err(logits.grad, numeric[0]) < 1e-6


class TestBackward:
    def test_sum_gives_ones(self):
        w = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        tape = Tape()
        loss = sum_all(w, tape)
        backward(tape, loss)
        assert np.array_equal(w.grad, np.ones((2, 3)))

    def test_accumulation_doubles(self):
        rng = np.random.default_rng(1)
        a = Tensor(rng.standard_normal((3, 3)), requires_grad=True)
        b = Tensor(rng.standard_normal((3, 3)), requires_grad=True)
        tape = Tape()
        loss = sum_all(matmul(a, b, tape), tape)
        backward(tape, loss)
        first = a.grad.copy()
        backward(tape, loss)
        assert np.array_equal(a.grad, 2.0 * first)

    def test_non_scalar_rejected(self):
        t = Tensor(np.ones((2, 2)), requires_grad=True)
        with pytest.raises(ContractError):
            backward(Tape(), t)

    def test_reused_tensor_accumulates_both_paths(self):
        a = Tensor([[2.0]], requires_grad=True)
        tape = Tape()
        out = add(mul(a, a, tape), a, tape)  # a^2 + a, d/da = 2a + 1
        backward(tape, sum_all(out, tape))
        assert np.allclose(a.grad, [[5.0]])

    def test_forward_outputs_stay_finite(self):
        rng = np.random.default_rng(77)
        for _ in range(20):
            h = Tensor(rng.standard_normal((4, 4)) * 100.0, requires_grad=True)
            w = Tensor(rng.standard_normal((4, 4)) * 100.0, requires_grad=True)
            tape = Tape()
            z = relu(matmul(h, w, tape), tape)
            z = softmax_segments(z, [0, 0, 1, 1], tape)
            loss = cross_entropy(mean_pool_rows(z, tape), [1], tape)
            assert np.isfinite(z.data).all()
            assert math.isfinite(loss.item())


class TestAdam:
    def test_zero_lr_is_identity(self):
        p = Tensor(np.ones((2, 2)), requires_grad=True)
        p.grad = np.full((2, 2), 3.0)
        before = p.data.copy()
        adam_step({"p": p}, 0.0, AdamState())
        assert np.array_equal(p.data, before)

    def test_step_magnitude_bounded_by_lr(self):
        p = Tensor(np.zeros((1, 3)), requires_grad=True)
        p.grad = np.array([[10.0, -4.0, 0.5]])
        adam_step({"p": p}, 0.01, AdamState())
        # first Adam step moves each coordinate by ~lr against the grad sign
        assert np.allclose(p.data, [[-0.01, 0.01, -0.01]], atol=1e-6)

    def test_deterministic_given_state(self):
        def run():
            rng = np.random.default_rng(5)
            p = Tensor(rng.standard_normal((3, 3)), requires_grad=True)
            state = AdamState()
            for step in range(5):
                p.grad = np.full((3, 3), float(step + 1))
                adam_step({"p": p}, 0.05, state)
            return p.data

        assert np.array_equal(run(), run())
