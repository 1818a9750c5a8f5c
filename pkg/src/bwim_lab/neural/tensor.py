"""A small reverse-mode differentiation engine over float64 numpy arrays.

Each :class:`Tensor` remembers its parents and a closure that pushes its
gradient back to them. ``backward`` walks the graph in reverse topological
order. Every op checks its output for NaN/Inf.
"""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from ..errors import NumericalError


class Tensor:
    __slots__ = ("data", "grad", "name", "_parents", "_backward")

    def __init__(self, data, parents: tuple["Tensor", ...] = (),
                 backward: Callable[[np.ndarray], None] | None = None, name: str | None = None):
        arr = np.require(data, dtype=np.float64, requirements="C")
        if not np.all(np.isfinite(arr)):
            raise NumericalError(f"non-finite value produced{' in ' + name if name else ''}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents = parents
        self._backward = backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape})"

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            # Fresh arrays are adopted; views are copied so no two nodes share storage.
            self.grad = g if g.flags.owndata and g.dtype == np.float64 else np.array(g, dtype=np.float64)
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Reverse-mode sweep from this scalar; leaves get ``.grad`` filled in."""
        if self.data.size != 1:
            raise ValueError("backward() needs a scalar output")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        for node in order:
            if not node._parents and node.grad is not None and not np.all(np.isfinite(node.grad)):
                what = node.name or repr(node)
                raise NumericalError(f"non-finite gradient for {what}")


def parameter(data, name: str) -> Tensor:
    return Tensor(data, name=name)


def _sum_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to ``shape``."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def linear(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map over the last axis: ``x @ W.T + b`` with ``W`` of shape (out, in)."""
    if x.shape[-1] != W.shape[1]:
        raise ValueError(f"linear: input width {x.shape[-1]} does not match weight {W.shape}")
    out = x.data @ W.data.T
    if b is not None:
        if b.shape != (W.shape[0],):
            raise ValueError(f"linear: bias shape {b.shape} does not match weight {W.shape}")
        out = out + b.data
    parents = (x, W) if b is None else (x, W, b)

    def backward(g: np.ndarray) -> None:
        x._accumulate(g @ W.data)
        g2 = g.reshape(-1, g.shape[-1])
        W._accumulate(g2.T @ x.data.reshape(-1, x.shape[-1]))
        if b is not None:
            b._accumulate(g2.sum(axis=0))

    return Tensor(out, parents, backward)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0.0)

    def backward(g: np.ndarray) -> None:
        x._accumulate(g * (out > 0))

    return Tensor(out, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    z = x.data
    # Split by sign so exp never overflows.
    e = np.exp(-np.abs(z))
    out = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    def backward(g: np.ndarray) -> None:
        x._accumulate(g * out * (1.0 - out))

    return Tensor(out, (x,), backward)


def identity(x: Tensor) -> Tensor:
    return x


ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "relu": relu,
    "sigmoid": sigmoid,
    "linear": identity,
}


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = x.shape

    def backward(g: np.ndarray) -> None:
        x._accumulate(g.reshape(old))

    return Tensor(x.data.reshape(shape), (x,), backward)


def take_last(x: Tensor) -> Tensor:
    """Select the final position along the second-to-last (time) axis."""
    def backward(g: np.ndarray) -> None:
        full = np.zeros_like(x.data)
        full[..., -1, :] = g
        x._accumulate(full)

    return Tensor(x.data[..., -1, :], (x,), backward)


def take_suffix(x: Tensor, n: int) -> Tensor:
    """The last ``n`` positions along the time axis (second to last)."""
    m = x.shape[-2]
    if not 1 <= n <= m:
        raise ValueError(f"cannot keep {n} of {m} time steps")
    if n == m:
        return x

    def backward(g: np.ndarray) -> None:
        full = np.zeros_like(x.data)
        full[..., m - n:, :] = g
        x._accumulate(full)

    return Tensor(x.data[..., m - n:, :], (x,), backward)


def causal_unfold(x: Tensor, s: int) -> Tensor:
    """Stack each time step with its ``s - 1`` predecessors.

    Input (..., l, k) becomes (..., l, s*k); row ``t`` is
    ``x[t-s+1] ++ ... ++ x[t]`` with zeros standing in before the start.
    """
    if s < 1:
        raise ValueError("filter size must be >= 1")
    *lead, l, k = x.shape
    cols = np.empty((*lead, l, s * k))
    for j in range(s):
        # Block j holds x[t - shift]; the first `shift` rows are padding.
        shift = s - 1 - j
        block = cols[..., j * k:(j + 1) * k]
        block[..., :shift, :] = 0.0
        block[..., shift:, :] = x.data[..., :l - shift, :]

    def backward(g: np.ndarray) -> None:
        gx = g[..., (s - 1) * k:].copy()
        for j in range(s - 1):
            shift = s - 1 - j
            gx[..., :l - shift, :] += g[..., shift:, j * k:(j + 1) * k]
        x._accumulate(gx)

    return Tensor(cols, (x,), backward)


def mean(x: Tensor) -> Tensor:
    n = x.data.size

    def backward(g: np.ndarray) -> None:
        x._accumulate(np.full_like(x.data, float(g) / n))

    return Tensor(x.data.mean(), (x,), backward)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
