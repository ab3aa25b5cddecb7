import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gazeintent.errors import ShapeError
from gazeintent.numerics import (
    AdamState,
    Tape,
    Tensor,
    adam_step,
    backward,
    conv1d,
    finite_difference_check,
    layer_norm,
    mse_loss,
    scaled_dot_attention,
    softmax_lastaxis,
    weighted_cross_entropy,
)


def t64(a, requires_grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=requires_grad)


class TestMatmul:
    def test_identity(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        out = Tensor(np.eye(2, dtype=np.float32)) @ a
        np.testing.assert_allclose(out.data, a.data)

    def test_hand_case(self):
        out = Tensor([[1.0, 2.0], [3.0, 4.0]]) @ Tensor([[5.0], [6.0]])
        np.testing.assert_allclose(out.data, [[17.0], [39.0]])

    def test_against_triple_loop(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=(7, 5))
        b = rng.normal(size=(5, 3))
        expected = np.zeros((7, 3))
        for i in range(7):
            for j in range(3):
                for k in range(5):
                    expected[i, j] += a[i, k] * b[k, j]
        out = t64(a) @ t64(b)
        np.testing.assert_allclose(out.data, expected, atol=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            Tensor(np.zeros((2, 3))) @ Tensor(np.zeros((2, 3)))


class TestConv1d:
    def test_identity_kernel(self):
        x = Tensor([[1.0, 2.0, 3.0, 4.0]])
        k = Tensor(np.array([[[0.0, 1.0, 0.0]]], dtype=np.float32))
        out = conv1d(x, k, Tensor([0.0]))
        np.testing.assert_allclose(out.data, x.data)

    def test_box_kernel_zero_pad(self):
        x = Tensor([[1.0, 2.0, 3.0]])
        k = Tensor(np.ones((1, 1, 3), dtype=np.float32))
        out = conv1d(x, k, Tensor([0.0]))
        np.testing.assert_allclose(out.data, [[3.0, 6.0, 5.0]])

    def test_against_sliding_window_oracle(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(2, 24))
        w = rng.normal(size=(3, 2, 3))
        b = rng.normal(size=3)
        xp = np.pad(x, ((0, 0), (1, 1)))
        expected = np.zeros((3, 24))
        for o in range(3):
            for t in range(24):
                expected[o, t] = (w[o] * xp[:, t:t + 3]).sum() + b[o]
        out = conv1d(t64(x), t64(w), t64(b))
        np.testing.assert_allclose(out.data, expected, atol=1e-6)

    def test_preserves_length(self):
        for T in (1, 5, 24):
            out = conv1d(Tensor(np.zeros((2, T))), Tensor(np.zeros((4, 2, 3))),
                         Tensor(np.zeros(4)))
            assert out.shape == (4, T)

    def test_empty_input_rejected(self):
        with pytest.raises(ShapeError):
            conv1d(Tensor(np.zeros((2, 0))), Tensor(np.zeros((4, 2, 3))),
                   Tensor(np.zeros(4)))


class TestSoftmax:
    def test_uniform(self):
        out = softmax_lastaxis(Tensor([0.0, 0.0, 0.0]))
        np.testing.assert_allclose(out.data, [1 / 3] * 3, atol=1e-7)

    def test_closed_form(self):
        out = softmax_lastaxis(t64([0.0, math.log(2.0)]))
        np.testing.assert_allclose(out.data, [1 / 3, 2 / 3], atol=1e-9)

    @given(st.lists(st.floats(-30, 30), min_size=1, max_size=8),
           st.floats(-50, 50))
    @settings(max_examples=50, deadline=None)
    def test_shift_invariance(self, xs, c):
        x = t64(xs)
        np.testing.assert_allclose(softmax_lastaxis(x + c).data,
                                   softmax_lastaxis(x).data, atol=1e-6)

    @given(st.lists(st.floats(-100, 100), min_size=1, max_size=10))
    @settings(max_examples=50, deadline=None)
    def test_row_stochastic(self, xs):
        out = softmax_lastaxis(t64(xs)).data
        assert (out >= 0).all()
        assert abs(out.sum() - 1.0) < 1e-6


class TestLayerNorm:
    def test_constant_slice(self):
        out = layer_norm(t64([5.0, 5.0, 5.0]), t64([1, 1, 1]), t64([0, 0, 0]))
        np.testing.assert_allclose(out.data, 0.0, atol=1e-6)

    def test_two_point_closed_form(self):
        out = layer_norm(t64([1.0, 3.0]), t64([1.0, 1.0]), t64([0.0, 0.0]))
        np.testing.assert_allclose(out.data, [-1.0, 1.0], atol=1e-4)

    def test_standardizes(self):
        rng = np.random.default_rng(2)
        x = t64(rng.normal(size=(5, 16)))
        out = layer_norm(x, t64(np.ones(16)), t64(np.zeros(16))).data
        np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-4)
        np.testing.assert_allclose(out.var(axis=-1), 1.0, atol=1e-4)

    def test_gradient(self):
        rng = np.random.default_rng(3)
        x = t64(rng.normal(size=(3, 8)), requires_grad=True)
        g = t64(rng.normal(size=8), requires_grad=True)
        b = t64(rng.normal(size=8), requires_grad=True)
        weights = t64(rng.normal(size=(3, 8)))
        err = finite_difference_check(
            lambda: (layer_norm(x, g, b) * weights).sum(), [x, g, b])
        assert err <= 1e-4


class TestAttention:
    def test_identical_keys_average_values(self):
        rng = np.random.default_rng(4)
        q = t64(rng.normal(size=(3, 4)))
        k = t64(np.tile(rng.normal(size=(1, 4)), (5, 1)))
        v = t64(rng.normal(size=(5, 4)))
        out = scaled_dot_attention(q, k, v).data
        np.testing.assert_allclose(out, np.tile(v.data.mean(axis=0), (3, 1)), atol=1e-6)

    def test_saturated_softmax_selects_key(self):
        d = 4
        q = t64(np.ones((1, d)) * 50.0)
        k = np.zeros((3, d))
        k[1] = 1.0  # dot product 200 vs 0
        v = t64(np.arange(12.0).reshape(3, 4))
        out = scaled_dot_attention(q, t64(k), v).data
        np.testing.assert_allclose(out[0], v.data[1], atol=1e-4)

    def test_against_two_step_oracle(self):
        rng = np.random.default_rng(5)
        q = rng.normal(size=(3, 4))
        k = rng.normal(size=(3, 4))
        v = rng.normal(size=(3, 4))
        scores = q @ k.T / math.sqrt(4)
        e = np.exp(scores - scores.max(axis=-1, keepdims=True))
        expected = (e / e.sum(axis=-1, keepdims=True)) @ v
        out = scaled_dot_attention(t64(q), t64(k), t64(v)).data
        np.testing.assert_allclose(out, expected, atol=1e-6)

    def test_rows_in_convex_hull(self):
        rng = np.random.default_rng(6)
        v = rng.normal(size=(4, 2))
        out = scaled_dot_attention(t64(rng.normal(size=(6, 3))),
                                   t64(rng.normal(size=(4, 3))), t64(v)).data
        assert (out.min(axis=0) >= v.min(axis=0) - 1e-9).all()
        assert (out.max(axis=0) <= v.max(axis=0) + 1e-9).all()

    def test_zero_dim_rejected(self):
        with pytest.raises(ShapeError):
            scaled_dot_attention(Tensor(np.zeros((2, 0))), Tensor(np.zeros((2, 0))),
                                 Tensor(np.zeros((2, 0))))


class TestLosses:
    def test_mse_zero_on_equal(self):
        x = t64([1.0, 2.0, 3.0])
        assert mse_loss(x, x).item() == 0.0

    def test_mse_hand_case(self):
        assert mse_loss(t64([1.0, 2.0]), t64([0.0, 0.0])).item() == pytest.approx(2.5)

    def test_mse_shape_mismatch(self):
        with pytest.raises(ShapeError):
            mse_loss(t64([1.0]), t64([1.0, 2.0]))

    def test_mse_gradient(self):
        rng = np.random.default_rng(7)
        pred = t64(rng.normal(size=6), requires_grad=True)
        target = t64(rng.normal(size=6))
        err = finite_difference_check(lambda: mse_loss(pred, target), [pred])
        assert err <= 1e-4
        # analytic form 2(pred - target)/n
        pred.grad = None
        with Tape() as tape:
            loss = mse_loss(pred, target)
        backward(loss, tape)
        np.testing.assert_allclose(pred.grad, 2 * (pred.data - target.data) / 6, atol=1e-9)

    def test_wce_equal_weights_is_mean_ce(self):
        rng = np.random.default_rng(8)
        logits = t64(rng.normal(size=(5, 2)))
        labels = np.array([0, 1, 0, 1, 1])
        loss = weighted_cross_entropy(logits, labels, t64([1.0, 1.0])).item()
        p = np.exp(logits.data)
        p /= p.sum(axis=-1, keepdims=True)
        expected = -np.log(p[np.arange(5), labels]).mean()
        assert loss == pytest.approx(expected, rel=1e-9)

    def test_wce_near_perfect(self):
        logits = t64([[25.0, 0.0], [0.0, 25.0]])
        loss = weighted_cross_entropy(logits, np.array([0, 1]), t64([1.0, 3.0])).item()
        assert loss < 1e-6

    def test_wce_closed_form(self):
        # uniform logits, weights (0.625, 2.5): loss reduces to ln 2
        logits = t64(np.zeros((2, 2)))
        loss = weighted_cross_entropy(logits, np.array([0, 1]), t64([0.625, 2.5])).item()
        assert loss == pytest.approx(math.log(2.0), rel=1e-9)

    def test_wce_bad_label(self):
        with pytest.raises(ValueError):
            weighted_cross_entropy(t64(np.zeros((1, 2))), np.array([2]), t64([1.0, 1.0]))


class TestBackward:
    def test_sum_gives_ones(self):
        p = t64(np.arange(6.0).reshape(2, 3), requires_grad=True)
        with Tape() as tape:
            loss = p.sum()
        backward(loss, tape)
        np.testing.assert_array_equal(p.grad, np.ones((2, 3)))

    def test_quadratic(self):
        p = t64([1.0, -2.0], requires_grad=True)
        with Tape() as tape:
            loss = (p * p).sum()
        backward(loss, tape)
        np.testing.assert_allclose(p.grad, [2.0, -4.0])

    def test_unreachable_param_gets_zero(self):
        p = t64([1.0], requires_grad=True)
        q = t64([2.0], requires_grad=True)
        with Tape() as tape:
            loss = p.sum()
        backward(loss, tape, params=[p, q])
        np.testing.assert_array_equal(q.grad, [0.0])

    def test_non_scalar_loss_rejected(self):
        p = t64([1.0, 2.0], requires_grad=True)
        with Tape() as tape:
            loss = p * 2.0
        with pytest.raises(ShapeError):
            tape.backward(loss)

    def test_reused_tape_rejected(self):
        p = t64([1.0], requires_grad=True)
        with Tape() as tape:
            loss = p.sum()
        tape.backward(loss)
        with pytest.raises(RuntimeError):
            tape.backward(loss)


class TestAdam:
    def test_decay_only_step(self):
        p = {"p": Tensor(np.array([1.0], dtype=np.float32), requires_grad=True)}
        state = AdamState.for_params(p)
        adam_step(p, {"p": np.zeros(1, dtype=np.float32)}, state)
        assert p["p"].data[0] == pytest.approx(1.0 - 3e-4 * 0.01, rel=1e-6)

    def test_first_step_magnitude(self):
        p = {"p": Tensor(np.zeros(4), dtype=np.float64, requires_grad=True)}
        state = AdamState.for_params(p)
        adam_step(p, {"p": np.ones(4)}, state, weight_decay=0.0)
        np.testing.assert_allclose(-p["p"].data, 3e-4, rtol=1e-4)

    def test_identity_without_decay_or_grad(self):
        p = {"p": Tensor(np.array([2.5, -1.0]), dtype=np.float64, requires_grad=True)}
        state = AdamState.for_params(p)
        adam_step(p, {"p": np.zeros(2)}, state, weight_decay=0.0)
        np.testing.assert_array_equal(p["p"].data, [2.5, -1.0])

    def test_step_counter_increments(self):
        p = {"p": Tensor(np.zeros(1), dtype=np.float64, requires_grad=True)}
        state = AdamState.for_params(p)
        for expected in (1, 2, 3):
            adam_step(p, {"p": np.ones(1)}, state)
            assert state.t == expected

    def test_trajectory_matches_scalar_oracle(self):
        # independent scalar AdamW on f(p) = sum(p^2)
        lr, b1, b2, eps, wd = 3e-4, 0.9, 0.999, 1e-8, 0.01
        ref = np.array([1.0, -0.5, 2.0])
        m = np.zeros(3)
        v = np.zeros(3)
        for t in range(1, 101):
            g = 2 * ref
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            mh = m / (1 - b1 ** t)
            vh = v / (1 - b2 ** t)
            ref = ref - lr * (mh / (np.sqrt(vh) + eps) + wd * ref)

        p = {"p": Tensor(np.array([1.0, -0.5, 2.0]), dtype=np.float64,
                         requires_grad=True)}
        state = AdamState.for_params(p)
        for _ in range(100):
            adam_step(p, {"p": 2 * p["p"].data}, state)
        np.testing.assert_allclose(p["p"].data, ref, atol=1e-6)


class TestReproducibility:
    def test_forward_backward_bit_identical(self):
        def run():
            rng = np.random.default_rng(42)
            p = Tensor(rng.normal(size=(4, 4)).astype(np.float32), requires_grad=True)
            x = Tensor(rng.normal(size=(2, 4)).astype(np.float32))
            with Tape() as tape:
                loss = mse_loss(softmax_lastaxis(x @ p), Tensor(np.full((2, 4), 0.25,
                                                                        dtype=np.float32)))
            backward(loss, tape)
            return loss.item(), p.grad.copy()

        l1, g1 = run()
        l2, g2 = run()
        assert l1 == l2
        np.testing.assert_array_equal(g1, g2)
