import math
from collections import OrderedDict

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chexhistory.errors import DataError, NumericalError, ShapeError
from chexhistory.ndcore import checkpoint
from chexhistory.ndcore.functional import bce_with_logits, sigmoid
from chexhistory.ndcore.gradcheck import grad_check, relative_error
from chexhistory.ndcore.gru import GRU, BiGRULayer, GruParams, GRUStack, bigru_forward, gru_cell_forward
from chexhistory.ndcore.layers import AvgPool2, Conv2d, Linear, Module, linear_forward
from chexhistory.ndcore.optim import Adam, adam_step
from chexhistory.ndcore.rng import Rng
from chexhistory.ndcore.tensor import Parameter

from oracles import conv2d_loops, gru_step_scalar


def random_gru_params(rng, d, h, scale=0.5):
    kw = {}
    for g in "zrh":
        kw[f"W_{g}"] = rng.normal(0, scale, (h, d))
        kw[f"U_{g}"] = rng.normal(0, scale, (h, h))
        kw[f"b_{g}"] = rng.normal(0, scale, h)
    return GruParams(**kw)


def as_dicts(p: GruParams):
    W = {g: getattr(p, f"W_{g}").tolist() for g in "zrh"}
    U = {g: getattr(p, f"U_{g}").tolist() for g in "zrh"}
    b = {g: getattr(p, f"b_{g}").tolist() for g in "zrh"}
    return W, U, b


class TestRng:
    def test_same_seed_same_stream(self):
        assert np.array_equal(Rng(7).normal(size=5), Rng(7).normal(size=5))

    def test_child_independent_of_call_order(self):
        a = Rng(3)
        a.child(0)
        x = a.child(5).random(4)
        y = Rng(3).child(5).random(4)
        assert np.array_equal(x, y)

    def test_children_differ(self):
        r = Rng(0)
        assert not np.array_equal(r.child(0).random(4), r.child(1).random(4))

    def test_split(self):
        a, b = Rng(1).split(2)
        assert not np.array_equal(a.random(3), b.random(3))

    def test_negative_seed_rejected(self):
        with pytest.raises(ValueError):
            Rng(-1)


class TestLinear:
    def test_identity(self):
        x = np.arange(6.0).reshape(2, 3)
        assert np.array_equal(linear_forward(x, np.eye(3), np.zeros(3)), x)

    def test_hand_sum(self):
        y = linear_forward(np.array([[1.0, 2.0]]), np.array([[3.0, 4.0]]), np.array([0.5]))
        assert y.tolist() == [[11.5]]

    def test_loop_oracle(self):
        r = Rng(0)
        x, W, b = r.normal(size=(3, 4)), r.normal(size=(5, 4)), r.normal(size=5)
        ref = [[sum(W[j, k] * x[i, k] for k in range(4)) + b[j] for j in range(5)] for i in range(3)]
        np.testing.assert_allclose(linear_forward(x, W, b), ref, rtol=0, atol=1e-12)

    def test_shape_error_names_shapes(self):
        with pytest.raises(ShapeError, match=r"x\(2, 3\)"):
            linear_forward(np.zeros((2, 3)), np.zeros((4, 2)), np.zeros(4))

    def test_backward_before_forward(self):
        with pytest.raises(RuntimeError):
            Linear(2, 2, Rng(0)).backward(np.zeros((1, 2)))

    def test_backward_accumulates(self):
        lin = Linear(3, 2, Rng(0))
        x = Rng(1).normal(size=(4, 3))
        dy = np.ones((4, 2))
        lin.forward(x)
        lin.backward(dy)
        once = lin.W.grad.copy()
        lin.forward(x)
        lin.backward(dy)
        np.testing.assert_allclose(lin.W.grad, 2 * once)


class TestFunctional:
    @pytest.mark.parametrize("z,expected", [(0.0, 0.5), (50.0, 1.0), (-800.0, 0.0)])
    def test_sigmoid_values(self, z, expected):
        assert sigmoid(np.array(z)) == pytest.approx(expected, abs=1e-15)

    @given(st.floats(-700, 700))
    def test_sigmoid_symmetry(self, z):
        s = sigmoid(np.array([z, -z]))
        assert s[0] + s[1] == pytest.approx(1.0, abs=1e-12)

    def test_bce_at_zero_is_ln2(self):
        loss, _ = bce_with_logits(np.zeros((2, 5)), np.ones((2, 5)))
        assert loss == pytest.approx(math.log(2), abs=1e-15)

    def test_bce_confident_correct(self):
        loss, _ = bce_with_logits(np.array([[50.0]]), np.array([[1.0]]))
        assert 0 <= loss < 1e-20

    def test_bce_large_logits_finite(self):
        loss, g = bce_with_logits(np.array([[1000.0, -1000.0]]), np.array([[0.0, 1.0]]))
        assert loss == pytest.approx(1000.0)
        assert np.all(np.isfinite(g))

    def test_bce_gradient_matches_finite_differences(self):
        r = Rng(2)
        z = r.normal(size=(3, 5)) * 3
        y = (r.random((3, 5)) < 0.5).astype(float)
        _, g = bce_with_logits(z, y)
        h = 1e-6
        num = np.empty_like(z)
        for idx in np.ndindex(z.shape):
            zp, zm = z.copy(), z.copy()
            zp[idx] += h
            zm[idx] -= h
            num[idx] = (bce_with_logits(zp, y)[0] - bce_with_logits(zm, y)[0]) / (2 * h)
        assert np.max(np.abs(num - g)) < 1e-8


class TestGRU:
    def test_zero_weights_is_fixed_point(self):
        p = GruParams(**{f"{k}_{g}": np.zeros(s) for g in "zrh" for k, s in
                         (("W", (3, 2)), ("U", (3, 3)), ("b", (3,)))})
        h = gru_cell_forward(np.ones(2), np.zeros(3), p)
        assert np.array_equal(h, np.zeros(3))

    @given(st.integers(0, 10_000))
    @settings(max_examples=30, deadline=None)
    def test_state_stays_bounded(self, seed):
        r = Rng(seed)
        p = random_gru_params(r, 3, 4, scale=3.0)
        h = np.zeros(4)
        for _ in range(10):
            h = gru_cell_forward(r.normal(0, 10, 3), h, p)
            assert np.all(np.abs(h) <= 1)

    def test_cell_matches_scalar_oracle(self):
        r = Rng(4)
        p = random_gru_params(r, 3, 4)
        x, h = r.normal(size=3), np.tanh(r.normal(size=4))
        ref = gru_step_scalar(x.tolist(), h.tolist(), *as_dicts(p))
        np.testing.assert_allclose(gru_cell_forward(x, h, p), ref, rtol=0, atol=1e-12)

    def test_sequence_module_matches_scalar_oracle(self):
        r = Rng(5)
        gru = GRU(3, 4, r)
        xs = r.normal(size=(2, 5, 3))
        out = gru.forward(xs)
        W, U, b = as_dicts(gru.raw())
        for n in range(2):
            h = [0.0] * 4
            for t in range(5):
                h = gru_step_scalar(xs[n, t].tolist(), h, W, U, b)
                np.testing.assert_allclose(out[n, t], h, rtol=0, atol=1e-12)

    def test_bad_shapes_rejected(self):
        with pytest.raises(ShapeError):
            GruParams(np.zeros((3, 2)), np.zeros((3, 3)), np.zeros(3), np.zeros((3, 2)), np.zeros((2, 2)),
                      np.zeros(3), np.zeros((3, 2)), np.zeros((3, 3)), np.zeros(3))
        with pytest.raises(ShapeError):
            GRU(3, 4, Rng(0)).forward(np.zeros((1, 2, 5)))

    def test_backward_before_forward(self):
        with pytest.raises(RuntimeError):
            GRU(2, 2, Rng(0)).backward(np.zeros((1, 1, 2)))


class TestBiGRU:
    def test_length_one_is_both_directions_on_same_input(self):
        r = Rng(6)
        pf, pb = random_gru_params(r, 3, 2), random_gru_params(r, 3, 2)
        x = r.normal(size=3)
        out = bigru_forward([x], pf, pb)
        expected = np.concatenate([gru_cell_forward(x, np.zeros(2), pf), gru_cell_forward(x, np.zeros(2), pb)])
        np.testing.assert_allclose(out, expected, atol=1e-15)

    def test_zero_backward_direction_is_ablation(self):
        r = Rng(7)
        pf = random_gru_params(r, 3, 2)
        zero = GruParams(**{k: np.zeros_like(v) for k, v in vars(pf).items()})
        xs = [r.normal(size=3) for _ in range(4)]
        out = bigru_forward(xs, pf, zero)
        h = np.zeros(2)
        for x in xs:
            h = gru_cell_forward(x, h, pf)
        np.testing.assert_allclose(out[:2], h, atol=1e-15)
        assert np.array_equal(out[2:], np.zeros(2))

    def test_stack_last_step_matches_functional(self):
        r = Rng(8)
        stack = GRUStack(3, 4, rng=r)
        xs = r.normal(size=(1, 5, 3))
        layer = stack.layers[0]
        expected = bigru_forward(list(xs[0]), layer.fwd.raw(), layer.bwd.raw())
        np.testing.assert_allclose(stack.forward(xs)[0], expected, atol=1e-12)

    def test_final_states_readout(self):
        r = Rng(9)
        stack = GRUStack(2, 3, readout="final_states", rng=r)
        xs = r.normal(size=(1, 4, 2))
        layer = stack.layers[0]
        hb = np.zeros(3)
        for x in xs[0, ::-1]:
            hb = gru_cell_forward(x, hb, layer.bwd.raw())
        np.testing.assert_allclose(stack.forward(xs)[0, 3:], hb, atol=1e-12)

    @pytest.mark.parametrize("num_layers,readout,bidirectional", [
        (1, "last_step", True), (2, "last_step", True), (1, "final_states", True), (2, "final_states", False),
    ])
    def test_gradients_match_finite_differences(self, num_layers, readout, bidirectional):
        r = Rng(10)
        stack = GRUStack(3, 4, num_layers, bidirectional, readout, rng=r)
        xs = r.normal(size=(2, 3, 3))
        w = r.normal(size=(2, stack.output_dim))

        def loss():
            return float((stack.forward(xs) * w).sum())

        def grads():
            stack.forward(xs)
            stack.backward(w)

        report = grad_check(loss, grads, stack.parameters())
        assert report.passed, report.failures()

    def test_input_gradient(self):
        r = Rng(11)
        layer = BiGRULayer(2, 3, r)
        xs = r.normal(size=(1, 3, 2))
        w = r.normal(size=(1, 3, 6))
        layer.forward(xs)
        dx = layer.backward(w)
        h = 1e-6
        for idx in np.ndindex(xs.shape):
            xp, xm = xs.copy(), xs.copy()
            xp[idx] += h
            xm[idx] -= h
            num = ((layer.forward(xp) * w).sum() - (layer.forward(xm) * w).sum()) / (2 * h)
            assert dx[idx] == pytest.approx(num, abs=1e-8)


class TestConv:
    def test_forward_matches_loop_oracle(self):
        r = Rng(12)
        conv = Conv2d(2, 3, 3, r)
        conv.b.value[:] = r.normal(size=3)
        x = r.normal(size=(2, 2, 5, 4))
        np.testing.assert_allclose(conv.forward(x), conv2d_loops(x, conv.W.value, conv.b.value), atol=1e-12)

    def test_conv_pool_gradients(self):
        r = Rng(13)
        conv, pool = Conv2d(2, 3, 3, r), AvgPool2()
        x = r.normal(size=(2, 2, 6, 6))
        w = r.normal(size=(2, 3, 3, 3))
        params = conv.parameters()

        def loss():
            return float((pool.forward(conv.forward(x)) * w).sum())

        def grads():
            loss()
            conv.backward(pool.backward(w))

        report = grad_check(loss, grads, params)
        assert report.passed, report.failures()

    def test_avgpool_hand_example(self):
        x = np.arange(16.0).reshape(1, 1, 4, 4)
        assert AvgPool2().forward(x)[0, 0].tolist() == [[2.5, 4.5], [10.5, 12.5]]


class TestAdam:
    def test_first_step_moves_by_lr(self):
        p = Parameter(np.array([1.0, -2.0]))
        p.grad[:] = [0.3, -5.0]
        adam_step([p], 1e-3)
        np.testing.assert_allclose(p.value, [1.0 - 1e-3, -2.0 + 1e-3], atol=1e-10)

    def test_zero_gradient_is_fixed_point(self):
        p = Parameter(np.array([0.7]))
        for _ in range(5):
            adam_step([p], 1e-2)
        assert p.value[0] == 0.7

    def test_grad_zeroed_after_step(self):
        p = Parameter(np.ones(3))
        p.grad[:] = 1.0
        Adam([p]).step()
        assert np.array_equal(p.grad, np.zeros(3))

    def test_minimizes_quadratic(self):
        p = Parameter(np.array([3.0]))
        opt = Adam([p], lr=0.1)
        for _ in range(200):
            p.grad[:] = 2 * p.value
            opt.step()
        assert abs(p.value[0]) < 0.5

    def test_rejects_bad_lr(self):
        with pytest.raises(ValueError):
            Adam([], lr=0)


class _Quadratic(Module):
    def __init__(self):
        super().__init__()
        self.w = self.add_param("w", np.array([1.0, -2.0, 0.5]))

    def loss(self):
        return float((self.w.value ** 2).sum())


class TestGradCheck:
    def test_passes_on_correct_gradient(self):
        m = _Quadratic()

        def grads():
            m.w.grad += 2 * m.w.value

        assert grad_check(m.loss, grads, m.parameters()).passed

    def test_detects_corrupted_gradient(self):
        m = _Quadratic()

        def grads():
            m.w.grad += 2 * m.w.value * 1.01

        report = grad_check(m.loss, grads, m.parameters())
        assert not report.passed
        assert "w" in report.failures()

    def test_zero_param_model(self):
        report = grad_check(lambda: 0.0, lambda: None, OrderedDict())
        assert report.passed and report.max_rel_err == {}

    def test_non_finite_gradient_names_parameter(self):
        m = _Quadratic()

        def grads():
            m.w.grad[:] = np.nan

        with pytest.raises(NumericalError, match="'w'"):
            grad_check(m.loss, grads, m.parameters())

    def test_rejects_float32(self):
        p = Parameter(np.zeros(2))
        p.value = p.value.astype(np.float32)
        with pytest.raises(TypeError):
            grad_check(lambda: 0.0, lambda: None, {"p": p})

    def test_relative_error_floor(self):
        assert relative_error(np.array([1e-12]), np.array([0.0]))[0] == pytest.approx(1e-7)
        assert relative_error(np.array([2.0]), np.array([1.0]))[0] == pytest.approx(0.5)


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        r = Rng(14)
        params = OrderedDict([("a.W", r.normal(size=(3, 4))), ("a.b", r.normal(size=3)),
                              ("s", np.array(np.pi).reshape(()))])
        path = tmp_path / "m.bin"
        checkpoint.save(path, "rnn-label", {"x": [1, 2]}, params)
        variant, cfg, loaded = checkpoint.load(path)
        assert variant == "rnn-label" and cfg == {"x": [1, 2]}
        assert list(loaded) == list(params)
        for k in params:
            assert loaded[k].tobytes() == params[k].tobytes()
        assert checkpoint.dumps(variant, cfg, loaded) == path.read_bytes()

    def test_bad_magic(self):
        with pytest.raises(DataError):
            checkpoint.loads(b"NOTACKPT" + bytes(20))
