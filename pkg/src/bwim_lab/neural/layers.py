"""Layer ops used by the overload classifier and the baselines."""

from __future__ import annotations

import numpy as np

from .tensor import ACTIVATIONS, Tensor, as_tensor, causal_unfold, linear, relu, sigmoid, take_suffix

EPS = 1e-12


def conv1d_pointwise(X, filters: Tensor, biases: Tensor) -> Tensor:
    """Width-1 convolution + ReLU: (..., l, n) -> (..., l, k).

    ``filters`` is (k, n); feature ``m`` at every instant is
    ``relu(filters[m] . x_t + biases[m])``.
    """
    X = as_tensor(X)
    if X.shape[-1] != filters.shape[1]:
        raise ValueError(f"pointwise conv: {X.shape[-1]} channels in, filters expect {filters.shape[1]}")
    return relu(linear(X, filters, biases))


def conv1d_causal(X, filters: Tensor, biases: Tensor, activation: str = "relu",
                  keep: int | None = None) -> Tensor:
    """Causal temporal convolution with left zero padding: (..., l, k) -> (..., l, k_out).

    ``filters`` is (k_out, s*k) acting on ``x[t-s+1] ++ ... ++ x[t]``, so
    output ``t`` never sees inputs after ``t``. With ``keep`` only the last
    ``keep`` output steps are computed.
    """
    X = as_tensor(X)
    k = X.shape[-1]
    if filters.shape[1] % k:
        raise ValueError(f"causal conv: filter width {filters.shape[1]} is not a multiple of {k}")
    s = filters.shape[1] // k
    cols = causal_unfold(X, s)
    if keep is not None:
        cols = take_suffix(cols, keep)
    return ACTIVATIONS[activation](linear(cols, filters, biases))


def dense_sigmoid(y, w: Tensor, b: Tensor) -> Tensor:
    """``sigmoid(w . y + b)`` over the last axis; ``w`` is (k,), ``b`` is (1,)."""
    y = as_tensor(y)
    if y.shape[-1] != w.shape[0]:
        raise ValueError(f"dense: input width {y.shape[-1]} does not match weight {w.shape}")
    W = _as_row(w)
    z = linear(y, W, b)
    return sigmoid(_squeeze_last(z))


def _as_row(w: Tensor) -> Tensor:
    def backward(g: np.ndarray) -> None:
        w._accumulate(g.reshape(w.shape))

    return Tensor(w.data.reshape(1, -1), (w,), backward)


def _squeeze_last(z: Tensor) -> Tensor:
    def backward(g: np.ndarray) -> None:
        z._accumulate(g[..., None])

    return Tensor(z.data[..., 0], (z,), backward)


def bce_loss(p: Tensor, target) -> Tensor:
    """Mean binary cross entropy with ``p`` clamped to ``[EPS, 1 - EPS]``.

    No gradient flows through clamped entries.
    """
    y = np.asarray(target, dtype=np.float64)
    if y.shape != p.shape:
        raise ValueError(f"bce: predictions {p.shape} vs targets {y.shape}")
    pc = np.clip(p.data, EPS, 1.0 - EPS)
    inside = (p.data >= EPS) & (p.data <= 1.0 - EPS)
    n = max(pc.size, 1)
    loss = -np.mean(y * np.log(pc) + (1.0 - y) * np.log1p(-pc))

    def backward(g: np.ndarray) -> None:
        dp = -(y / pc - (1.0 - y) / (1.0 - pc)) / n
        p._accumulate(float(g) * dp * inside)

    return Tensor(loss, (p,), backward)
