import math

import numpy as np
import pytest

from bwim_lab.errors import NumericalError
from bwim_lab.neural import ParameterStore, Tensor, adam_step, bce_loss, conv1d_causal, conv1d_pointwise, dense_sigmoid
from bwim_lab.neural.tensor import causal_unfold, linear, mean, relu, sigmoid, take_last, take_suffix

RNG = np.random.default_rng(1234)


def numeric_grad(f, arr, h=1e-5):
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = arr[i]
        arr[i] = old + h
        up = f()
        arr[i] = old - h
        down = f()
        arr[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def rel_err(a, b):
    return np.max(np.abs(a - b) / np.maximum(1e-8, np.abs(a) + np.abs(b)))


def check(build, leaves):
    """Compare autograd against central differences for every leaf."""
    def value():
        return float(build().data)

    out = build()
    for t in leaves:
        t.grad = None
    out.backward()
    worst = 0.0
    for t in leaves:
        worst = max(worst, rel_err(t.grad, numeric_grad(value, t.data)))
    return worst


# --- naive oracles ----------------------------------------------------------

def naive_pointwise(X, F, b):
    B, l, n = X.shape
    out = np.zeros((B, l, F.shape[0]))
    for bi in range(B):
        for t in range(l):
            for m in range(F.shape[0]):
                out[bi, t, m] = max(0.0, sum(F[m, j] * X[bi, t, j] for j in range(n)) + b[m])
    return out


def naive_causal(X, F, b, s):
    B, l, k = X.shape
    out = np.zeros((B, l, F.shape[0]))
    for bi in range(B):
        for t in range(l):
            for m in range(F.shape[0]):
                acc = b[m]
                for j in range(s):
                    src = t - (s - 1) + j
                    if src >= 0:
                        acc += F[m, j * k:(j + 1) * k] @ X[bi, src]
                out[bi, t, m] = max(0.0, acc)
    return out


def test_pointwise_matches_loops():
    X, F, b = RNG.normal(size=(3, 8, 4)), RNG.normal(size=(5, 4)), RNG.normal(size=5)
    got = conv1d_pointwise(X, Tensor(F), Tensor(b)).data
    np.testing.assert_allclose(got, naive_pointwise(X, F, b), rtol=1e-12, atol=1e-12)


def test_pointwise_identity_filters():
    X = np.abs(RNG.normal(size=(2, 6, 3)))
    got = conv1d_pointwise(X, Tensor(np.eye(3)), Tensor(np.zeros(3))).data
    np.testing.assert_array_equal(got, X)


def test_pointwise_relu_clips_negative():
    got = conv1d_pointwise(np.array([[[1.0]]]), Tensor([[-2.0]]), Tensor([0.5])).data
    assert got[0, 0, 0] == 0.0


def test_causal_matches_loops():
    X, F, b = RNG.normal(size=(2, 8, 4)), RNG.normal(size=(4, 12)), RNG.normal(size=4)
    got = conv1d_causal(X, Tensor(F), Tensor(b)).data
    np.testing.assert_allclose(got, naive_causal(X, F, b, 3), rtol=1e-12, atol=1e-12)


def test_causal_keeps_shape():
    X = RNG.normal(size=(5, 8, 6))
    assert conv1d_causal(X, Tensor(RNG.normal(size=(6, 18))), Tensor(np.zeros(6))).shape == (5, 8, 6)


def test_causal_keep_is_a_suffix():
    X, F, b = RNG.normal(size=(2, 8, 4)), RNG.normal(size=(4, 12)), RNG.normal(size=4)
    full = conv1d_causal(X, Tensor(F), Tensor(b)).data
    part = conv1d_causal(X, Tensor(F), Tensor(b), keep=3).data
    np.testing.assert_array_equal(part, full[:, -3:])


def test_suffix_perturbation_leaves_prefix_bitwise():
    F, b = Tensor(RNG.normal(size=(4, 12))), Tensor(RNG.normal(size=4))
    X = RNG.normal(size=(8, 4))
    base = conv1d_causal(X[None], F, b).data[0]
    for j in range(8):
        Y = X.copy()
        Y[j:] += RNG.normal(size=Y[j:].shape)
        out = conv1d_causal(Y[None], F, b).data[0]
        assert np.array_equal(out[:j], base[:j])


def test_dense_sigmoid_values():
    y = np.ones((1, 4))
    assert dense_sigmoid(y, Tensor(np.zeros(4)), Tensor(np.zeros(1))).data[0] == 0.5
    hi = dense_sigmoid(y, Tensor(np.zeros(4)), Tensor([10.0])).data[0]
    lo = dense_sigmoid(y, Tensor(np.zeros(4)), Tensor([5.0])).data[0]
    assert 1.0 > hi > lo > 0.5


def test_bce_at_half_is_ln2():
    for target in (0.0, 1.0):
        p = Tensor([0.5])
        loss = bce_loss(p, np.array([target]))
        assert float(loss.data) == pytest.approx(math.log(2), abs=1e-12)


def test_bce_gradient_wrt_logit():
    z = Tensor([0.0])
    loss = bce_loss(sigmoid(z), np.array([1.0]))
    loss.backward()
    assert z.grad[0] == pytest.approx(-0.5, abs=1e-12)


def test_bce_saturated_is_near_zero_and_blocks_gradient():
    p = Tensor([1.0])
    loss = bce_loss(p, np.array([1.0]))
    assert float(loss.data) <= 1e-11
    loss.backward()
    assert p.grad[0] == 0.0


def test_adam_first_step_moves_by_lr():
    w = Tensor([3.0], name="w")
    store = ParameterStore({"w": w})
    adam_step(store, {"w": np.array([1.0])}, lr=0.01)
    assert w.data[0] == pytest.approx(3.0 - 0.01, rel=1e-6)


def test_adam_zero_gradient_is_a_no_op():
    w = Tensor([3.0], name="w")
    store = ParameterStore({"w": w})
    adam_step(store, {"w": np.array([0.0])}, lr=0.01)
    assert w.data[0] == 3.0


def test_adam_runs_are_identical():
    def run():
        w = Tensor(np.linspace(-1, 1, 5), name="w")
        store = ParameterStore({"w": w})
        for i in range(20):
            adam_step(store, {"w": np.sin(w.data * (i + 1))}, lr=0.05)
        return w.data

    np.testing.assert_array_equal(run(), run())


def test_nan_raises():
    with pytest.raises(NumericalError):
        Tensor([np.nan])
    x = Tensor([1e308], name="x")
    with np.errstate(over="ignore"), pytest.raises(NumericalError):
        linear(x, Tensor([[1e10]]))


def test_nonfinite_gradient_names_parameter():
    w = Tensor([1.0], name="head.w")

    def backward(g):
        w._accumulate(np.array([np.inf]))

    out = Tensor(np.array(1.0), (w,), backward)
    with pytest.raises(NumericalError, match="head.w"):
        out.backward()


# --- finite differences on small shapes (l=8, n=4, k=8) ----------------------

def test_grad_pointwise():
    X = Tensor(RNG.normal(size=(3, 8, 4)))
    F = Tensor(RNG.normal(size=(8, 4)))
    b = Tensor(RNG.normal(size=8))
    w = RNG.normal(size=(3, 8, 8))
    assert check(lambda: mean(_dot(conv1d_pointwise(X, F, b), w)), [X, F, b]) < 1e-4


def test_grad_causal():
    X = Tensor(RNG.normal(size=(3, 8, 8)))
    F = Tensor(RNG.normal(size=(8, 24)) * 0.3)
    b = Tensor(RNG.normal(size=8))
    w = RNG.normal(size=(3, 8, 8))
    assert check(lambda: mean(_dot(conv1d_causal(X, F, b), w)), [X, F, b]) < 1e-4


def test_grad_causal_keep_and_suffix():
    X = Tensor(RNG.normal(size=(2, 8, 8)))
    F = Tensor(RNG.normal(size=(8, 24)) * 0.3)
    b = Tensor(RNG.normal(size=8))
    w = RNG.normal(size=(2, 3, 8))
    assert check(lambda: mean(_dot(conv1d_causal(X, F, b, keep=3), w)), [X, F, b]) < 1e-4
    w2 = RNG.normal(size=(2, 2, 8))
    assert check(lambda: mean(_dot(take_suffix(X, 2), w2)), [X]) < 1e-4


def test_grad_unfold_and_last():
    X = Tensor(RNG.normal(size=(2, 8, 3)))
    w = RNG.normal(size=(2, 8, 9))
    assert check(lambda: mean(_dot(causal_unfold(X, 3), w)), [X]) < 1e-4
    w2 = RNG.normal(size=(2, 3))
    assert check(lambda: mean(_dot(take_last(X), w2)), [X]) < 1e-4


def test_grad_dense_and_bce():
    y = Tensor(RNG.normal(size=(6, 8)))
    w = Tensor(RNG.normal(size=8) * 0.5)
    b = Tensor(RNG.normal(size=1))
    t = (RNG.random(6) < 0.5).astype(float)
    assert check(lambda: bce_loss(dense_sigmoid(y, w, b), t), [y, w, b]) < 1e-4


def test_grad_relu_sigmoid_linear():
    x = Tensor(RNG.normal(size=(4, 5)) + 0.05)
    W = Tensor(RNG.normal(size=(3, 5)))
    b = Tensor(RNG.normal(size=3))
    w = RNG.normal(size=(4, 3))
    assert check(lambda: mean(_dot(sigmoid(relu(linear(x, W, b))), w)), [x, W, b]) < 1e-4


def test_grad_full_model():
    from bwim_lab.models import DoviConfig, DoviModel

    model = DoviModel(4, DoviConfig(l=8, k=8, c=3, s=3, seed=5))
    X = RNG.normal(size=(6, 8, 4))
    t = (RNG.random(6) < 0.5).astype(float)
    leaves = list(model.store.values())
    assert check(lambda: bce_loss(model.forward(X), t), leaves) < 1e-4
    assert check(lambda: bce_loss(model.forward(X, full=True), t), leaves) < 1e-4


def _dot(t: Tensor, w: np.ndarray) -> Tensor:
    """``t * w`` elementwise as a graph node, so a scalar loss has varied weights."""
    def backward(g):
        t._accumulate(g * w)

    return Tensor(t.data * w, (t,), backward)
