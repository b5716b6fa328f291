import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from deeperbind import autodiff as ad
from deeperbind.autodiff import ShapeError, Tape, Variable, backward
from deeperbind.encoding import one_hot
from deeperbind.layers import (ConvLayer, DenseLayer, DropoutSpec, LstmLayer, LstmStack, conv_forward,
                               dense_forward, dropout, global_max_pool, lstm_forward, lstm_step, parse_arch, rect)


def v(x, trainable=False):
    return Variable(np.asarray(x, dtype=float), trainable=trainable)


def conv_with(kernels, biases):
    return ConvLayer(v(kernels, True), v(biases, True))


def zero_lstm(D, H, bf=0.0):
    layer = LstmLayer.init(D, H, np.random.default_rng(0))
    for p in layer.parameters():
        p.value[...] = 0.0
    layer.biases["f"].value[...] = bf
    return layer


def test_conv_examples():
    ac = conv_with(one_hot("AC")[None], [0.0])
    assert conv_forward(one_hot("ACA"), ac).value.tolist() == [[2.0, 0.0]]
    flat = conv_with(np.zeros((1, 4, 2)), [0.7])
    assert conv_forward(one_hot("ACGTA"), flat).value.tolist() == [[0.7] * 4]
    rnd = ConvLayer.init(5, 11, np.random.default_rng(0))
    assert conv_forward(one_hot("A" * 36), rnd).shape == (5, 26)
    assert conv_forward(one_hot("A" * 36), rnd, "same").shape == (5, 36)
    with pytest.raises(ShapeError):
        conv_forward(one_hot("ACGT"), rnd)


def test_conv_same_padding_offsets():
    # width 3: one zero column on each side
    k = np.zeros((1, 4, 3))
    k[0, 0, 1] = 1.0  # scores an A at the window centre
    out = conv_forward(one_hot("AGA"), conv_with(k, [0.0]), "same").value
    assert out.tolist() == [[1.0, 0.0, 1.0]]


@given(st.integers(1, 40), st.integers(1, 12))
def test_conv_shape_property(L, m):
    if L < m:
        return
    layer = ConvLayer.init(3, m, np.random.default_rng(L))
    x = one_hot("".join("ACGT"[i % 4] for i in range(L)))
    assert conv_forward(x, layer).shape == (3, L - m + 1)


def test_conv_matches_direct_sum():
    rng = np.random.default_rng(4)
    layer = ConvLayer.init(2, 5, rng)
    x = one_hot("".join(rng.choice(list("ACGT"), 12)))
    out = conv_forward(x, layer).value
    for k in range(2):
        for t in range(8):
            ref = layer.biases.value[k] + np.sum(layer.kernels.value[k] * x[:, t:t + 5])
            assert out[k, t] == pytest.approx(ref, abs=1e-12)


def test_rect_and_pool_examples():
    assert rect([[2.0, 0.0]], [0.0]).value.tolist() == [[2, 0]]
    assert rect([[2.0, 0.0]], [1.0]).value.tolist() == [[1, 0]]
    assert rect([[-3.0]], [-5.0]).value.tolist() == [[2]]
    assert global_max_pool([[2.0, 0.0], [1.0, 5.0]]).value.tolist() == [2, 5]
    assert global_max_pool([[3.0], [-1.0]]).value.tolist() == [3, -1]
    x = v([[4.0, 4.0]], True)
    with Tape() as tape:
        y = ad.sum(global_max_pool(x))
    backward(tape, y)
    assert y.item() == 4 and x.grad.tolist() == [[1, 0]]


def test_lstm_step_examples():
    layer = zero_lstm(3, 2)
    h, c = lstm_step(np.ones(3), np.zeros(2), np.zeros(2), layer)
    assert h.value.tolist() == [0, 0] and c.value.tolist() == [0, 0]
    h, c = lstm_step(np.ones(3), np.zeros(2), np.ones(2), layer)
    want_h, want_c = oracles.LSTM_ZERO_WEIGHTS_C1
    assert c.value == pytest.approx([want_c] * 2, abs=1e-15)
    assert h.value == pytest.approx([want_h] * 2, abs=1e-15)
    assert want_h == pytest.approx(0.23105, abs=1e-5)
    layer = zero_lstm(3, 2, bf=10.0)
    c0 = np.array([0.4, -1.3])
    _, c = lstm_step(np.ones(3), np.zeros(2), c0, layer)
    assert np.max(np.abs(c.value - c0)) < 1e-4
    with pytest.raises(ShapeError):
        lstm_step(np.ones(4), np.zeros(2), np.zeros(2), layer)


def test_lstm_step_matches_scalar_equations():
    rng = np.random.default_rng(8)
    layer = LstmLayer.init(1, 1, rng)
    for g in "figo":
        layer.biases[g].value[...] = rng.normal()
    x, h, c = 0.7, -0.3, 0.5
    h1, c1 = lstm_step([x], [h], [c], layer)
    w = {g: tuple(layer.weights[g].value[0]) for g in "figo"}
    b = {g: float(layer.biases[g].value[0]) for g in "figo"}
    rh, rc = oracles.lstm_step_scalar(x, h, c, w["f"], w["i"], w["g"], w["o"], b["f"], b["i"], b["g"], b["o"])
    assert h1.value[0] == pytest.approx(rh, abs=1e-14) and c1.value[0] == pytest.approx(rc, abs=1e-14)


def test_lstm_forward_examples():
    rng = np.random.default_rng(1)
    stack = LstmStack.from_arch("10:20", 5, rng)
    seq = rng.normal(size=(26, 5))
    assert lstm_forward(seq, stack).shape == (20,)
    one = LstmStack.from_arch("4", 3, rng)
    x = rng.normal(size=(1, 3))
    h, _ = lstm_step(x[0], np.zeros(4), np.zeros(4), one.layers[0])
    assert np.allclose(lstm_forward(x, one).value, h.value, atol=1e-15)
    zero = LstmStack([zero_lstm(5, 10), zero_lstm(10, 10)])
    assert not lstm_forward(seq, zero).value.any()
    with pytest.raises(ShapeError):
        lstm_forward([], one)


def test_lstm_forward_matches_stepwise_loop():
    rng = np.random.default_rng(2)
    stack = LstmStack.from_arch("3:2", 4, rng)
    seq = rng.normal(size=(6, 4))
    inputs = list(seq)
    for layer in stack.layers:
        h = np.zeros(layer.hidden_size)
        c = np.zeros(layer.hidden_size)
        outs = []
        for x in inputs:
            hv, cv = lstm_step(x, h, c, layer)
            h, c = hv.value, cv.value
            outs.append(h)
        inputs = outs
    assert np.allclose(lstm_forward(seq, stack).value, h, atol=1e-14)
    # list input is accepted too
    assert np.allclose(lstm_forward([v(s) for s in seq], stack).value, h, atol=1e-14)


def test_lstm_hidden_bounded_under_fuzzing():
    rng = np.random.default_rng(3)
    for _ in range(50):
        stack = LstmStack.from_arch("6", 3, rng)
        for p in stack.parameters():
            p.value[...] = rng.normal(0, 5, size=p.shape)
        h = lstm_forward(rng.normal(0, 10, size=(15, 3)), stack).value
        assert np.all(np.abs(h) < 1) and np.all(np.isfinite(h))


def test_lstm_batch_boundary_invariance():
    rng = np.random.default_rng(5)
    stack = LstmStack.from_arch("10:10", 5, rng)
    batch = rng.normal(size=(7, 12, 5))
    full = lstm_forward(batch, stack).value
    singles = np.stack([lstm_forward(batch[i:i + 1], stack).value[0] for i in range(7)])
    parts = np.concatenate([lstm_forward(batch[:3], stack).value, lstm_forward(batch[3:], stack).value])
    assert np.array_equal(full, singles) and np.array_equal(full, parts)


def test_lstm_shared_weights_gradient_is_sum_over_steps():
    rng = np.random.default_rng(6)
    stack = LstmStack.from_arch("3", 2, rng)
    seq = rng.normal(size=(5, 2))
    params = stack.parameters()
    err = ad.grad_check(lambda: ad.sum(lstm_forward(seq, stack)), params, 1e-5)
    assert err < 1e-4
    # a longer sequence touches the same weights more often and changes their gradient
    ad.zero_grads(params)
    with Tape() as tape:
        loss = ad.sum(lstm_forward(seq[:1], stack))
    backward(tape, loss)
    short = stack.layers[0].weights["i"].grad.copy()
    ad.zero_grads(params)
    with Tape() as tape:
        loss = ad.sum(lstm_forward(seq, stack))
    backward(tape, loss)
    assert not np.allclose(short, stack.layers[0].weights["i"].grad)


def test_parse_arch():
    assert parse_arch("30:20") == [30, 20]
    for bad in ("", "a", "1:2:3", "0"):
        with pytest.raises(ValueError):
            parse_arch(bad)


def test_dense_examples():
    rng = np.random.default_rng(0)
    d = DenseLayer(v(np.eye(3), True), v(np.zeros(3), True))
    assert dense_forward([1.0, -2.0, 3.0], d).value.tolist() == [1, -2, 3]
    d = DenseLayer(v([[1.0, 1.0]], True), v([-1.0], True), "relu")
    assert dense_forward([0.3, 0.2], d).value.tolist() == [0]
    d = DenseLayer(v([[2.0]], True), v([1.0], True))
    assert dense_forward([3.0], d).value.tolist() == [7]
    with pytest.raises(ShapeError):
        dense_forward([1.0, 2.0], DenseLayer.init(3, 1, rng))


def test_dropout_semantics():
    x = np.ones(10000)
    rng = np.random.default_rng(0)
    assert dropout(x, DropoutSpec(0.0, "train"), rng).value is not None
    assert np.array_equal(dropout(x, DropoutSpec(0.0, "train"), rng).value, x)
    assert np.array_equal(dropout(x, DropoutSpec(0.5, "eval")).value, x)
    y = dropout(x, DropoutSpec(0.5, "train"), rng).value
    assert 0.97 <= y.mean() <= 1.03
    assert set(np.unique(y)) <= {0.0, 2.0}
    with pytest.raises(ValueError):
        DropoutSpec(1.0)
    with pytest.raises(ValueError):
        dropout(x, DropoutSpec(0.5, "train"), None)


# Gradient checks on every layer over 20 random parameterizations.

def layer_cases():
    def conv(rng):
        layer = ConvLayer.init(3, 4, rng)
        x = one_hot("".join(rng.choice(list("ACGT"), 9)))
        w = rng.normal(size=(3, 6))
        return layer.parameters(), lambda: ad.sum(ad.mul(conv_forward(x, layer), w))

    def rect_case(rng):
        fm = v(rng.normal(size=(3, 5)), True)
        th = v(rng.normal(size=3), True)
        w = rng.normal(size=(3, 5))
        return [fm, th], lambda: ad.sum(ad.mul(rect(fm, th), w))

    def pool(rng):
        fm = v(rng.normal(size=(3, 5)), True)
        w = rng.normal(size=3)
        return [fm], lambda: ad.sum(ad.mul(global_max_pool(fm), w))

    def step(rng):
        layer = LstmLayer.init(3, 2, rng)
        x, h, c = (v(rng.normal(size=n), True) for n in (3, 2, 2))
        w = rng.normal(size=2)
        return layer.parameters() + [x, h, c], lambda: ad.sum(ad.mul(
            ad.add(*lstm_step(x, h, c, layer)), w))

    def stack(rng):
        s = LstmStack.from_arch("3:2", 2, rng)
        seq = rng.normal(size=(4, 2))
        return s.parameters(), lambda: ad.sum(lstm_forward(seq, s))

    def dense(rng):
        d = DenseLayer.init(4, 3, rng, "relu")
        x = v(rng.normal(size=4), True)
        w = rng.normal(size=3)
        return d.parameters() + [x], lambda: ad.sum(ad.mul(dense_forward(x, d), w))

    return {"conv": conv, "rect": rect_case, "pool": pool, "lstm_step": step, "lstm_stack": stack,
            "dense": dense}


@pytest.mark.parametrize("name", sorted(layer_cases()))
def test_layer_grad_check(name):
    build = layer_cases()[name]
    rng = np.random.default_rng(len(name))
    for _ in range(20):
        params, fn = build(rng)
        assert ad.grad_check(fn, params, 1e-5) < 1e-4


def test_init_conventions():
    rng = np.random.default_rng(0)
    layer = LstmLayer.init(5, 30, rng)
    assert np.all(layer.biases["f"].value == 1.0)
    for g in "igo":
        assert np.all(layer.biases[g].value == 0.0)
    s = 1 / math.sqrt(35)
    assert np.all(np.abs(layer.weights["g"].value) <= s)
    assert {p.shape for p in layer.parameters()[:4]} == {(30, 35)}
