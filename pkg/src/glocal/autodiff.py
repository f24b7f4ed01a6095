"""Minimal reverse-mode autodiff over dense numpy arrays.

Covers exactly the operation set the contrastive losses and toy encoders
need: elementwise arithmetic, batched matmul, reductions, stable
softmax/logsumexp, gather/scatter, 3x3 strided convolution, and detach.
float64 is the default dtype; float32 is allowed at runtime.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

EPS_NORM = 1e-12

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class NumericError(ArithmeticError):
    """Raised on numeric-domain violations (zero norms, non-finite values)."""


class Tensor:
    """Dense array node in a reverse-mode graph.

    ``data`` is a numpy array; after ``backward()`` on a scalar result,
    every reachable tensor with ``requires_grad`` holds its gradient in
    ``grad`` (same shape as ``data``).
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad) and _grad_enabled
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], tuple] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        """Same values, no gradient flow (stop-gradient)."""
        return Tensor(self.data)

    def backward(self) -> None:
        """Reverse-accumulate gradients from this scalar."""
        if self.data.size != 1:
            raise ShapeError(f"backward() requires a scalar, got shape {self.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                # leaf: parameters and explicit-grad inputs
                if node.requires_grad:
                    node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """Named trainable tensor."""

    __slots__ = ("name",)

    def __init__(self, data, name: str, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter({self.name}, shape={self.shape})"


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward pass."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}")
    return _make(data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError:
        raise ShapeError(f"sub: incompatible shapes {a.shape} and {b.shape}")
    return _make(data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}")
    return _make(
        data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data / b.data
    except ValueError:
        raise ShapeError(f"div: incompatible shapes {a.shape} and {b.shape}")
    return _make(
        data,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
    )


def matmul(a, b) -> Tensor:
    """Matrix product; leading axes broadcast like numpy's ``@``."""
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data @ b.data
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def bwd(g):
        G = np.asarray(g)
        a1, b1 = a.data.ndim == 1, b.data.ndim == 1
        A2 = a.data[None, :] if a1 else a.data
        B2 = b.data[:, None] if b1 else b.data
        if a1 and b1:
            G2 = G.reshape((1, 1))
        elif a1:
            G2 = np.expand_dims(G, -2)
        elif b1:
            G2 = np.expand_dims(G, -1)
        else:
            G2 = G
        ga = G2 @ np.swapaxes(B2, -1, -2)
        gb = np.swapaxes(A2, -1, -2) @ G2
        if a1:
            ga = ga[..., 0, :]
        if b1:
            gb = gb[..., :, 0]
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(data, (a, b), bwd)


def exp(x) -> Tensor:
    x = as_tensor(x)
    data = np.exp(x.data)
    return _make(data, (x,), lambda g: (g * data,))


def log(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise NumericError("log: non-positive input")
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,))


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    data = np.sqrt(x.data)
    return _make(data, (x,), lambda g: (g * 0.5 / data,))


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _make(x.data * mask, (x,), lambda g: (g * mask,))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    data = np.tanh(x.data)
    return _make(data, (x,), lambda g: (g * (1.0 - data * data),))


def sum_(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        g2 = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g2, x.shape).copy(),)

    return _make(data, (x,), bwd)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    if axis is None:
        n = x.data.size
    else:
        n = x.data.shape[axis] if isinstance(axis, int) else int(np.prod([x.data.shape[a] for a in axis]))
    return mul(sum_(x, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def swapaxes(x, a1: int, a2: int) -> Tensor:
    x = as_tensor(x)
    return _make(np.swapaxes(x.data, a1, a2), (x,), lambda g: (np.swapaxes(g, a1, a2),))


def transpose(x) -> Tensor:
    """2-D transpose."""
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {x.shape}")
    return swapaxes(x, 0, 1)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(data, tuple(tensors), bwd)


def slice_rows(x, start: int, stop: int) -> Tensor:
    """Contiguous row slice along axis 0."""
    x = as_tensor(x)
    data = x.data[start:stop]

    def bwd(g):
        full = np.zeros_like(x.data)
        full[start:stop] = g
        return (full,)

    return _make(data, (x,), bwd)


def gather_rows(x, index: np.ndarray) -> Tensor:
    """Index rows along axis 0 with an integer array; output shape index.shape + x.shape[1:]."""
    x = as_tensor(x)
    idx = np.asarray(index)
    data = x.data[idx]

    def bwd(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g)
        return (full,)

    return _make(data, (x,), bwd)


def logsumexp(x, axis: int = -1) -> Tensor:
    """Stable log-sum-exp along ``axis``; -inf entries act as excluded slots."""
    x = as_tensor(x)
    m = np.max(x.data, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(x.data - m)
    s = e.sum(axis=axis, keepdims=True)
    data = np.squeeze(m + np.log(s), axis=axis)

    def bwd(g):
        soft = e / s
        return (np.expand_dims(g, axis) * soft,)

    return _make(data, (x,), bwd)


def softmax(x, axis: int = -1) -> Tensor:
    """Row-stable softmax along ``axis``; -inf entries get exactly zero weight."""
    x = as_tensor(x)
    m = np.max(x.data, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(x.data - m)
    data = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        return (data * (g - dot),)

    return _make(data, (x,), bwd)


def softmax_rows(x) -> Tensor:
    """Softmax over the last axis of a matrix (one distribution per row)."""
    return softmax(x, axis=-1)


def normalize_rows(x) -> Tensor:
    """Scale vectors along the last axis to unit L2 norm.

    Norms at or below ``EPS_NORM`` are a numeric-domain error rather than a
    silent clamp.
    """
    x = as_tensor(x)
    norms = np.linalg.norm(x.data, axis=-1, keepdims=True)
    if np.any(norms <= EPS_NORM):
        raise NumericError("normalize_rows: zero-norm vector")
    data = x.data / norms

    def bwd(g):
        dot = (g * data).sum(axis=-1, keepdims=True)
        return ((g - dot * data) / norms,)

    return _make(data, (x,), bwd)


def cosine_similarity(a, b) -> Tensor:
    """Cosine of the angle between two vectors, in [-1, 1]."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 1 or b.data.ndim != 1 or a.shape != b.shape:
        raise ShapeError(f"cosine_similarity expects equal-length vectors, got {a.shape} and {b.shape}")
    an = normalize_rows(a)
    bn = normalize_rows(b)
    return sum_(mul(an, bn))


def cosine_matrix(a, b) -> Tensor:
    """Pairwise cosine similarities between rows of ``a`` (N,d) and rows of ``b`` (M,d)."""
    return matmul(normalize_rows(a), transpose(normalize_rows(b)))


def cosine_rows(a, b) -> Tensor:
    """Row-wise cosine similarity between two (N,d) matrices, result (N,)."""
    return sum_(mul(normalize_rows(a), normalize_rows(b)), axis=-1)


def detach(x) -> Tensor:
    return as_tensor(x).detach()


def conv2d(x, w, b, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D convolution, NCHW layout, square kernel.

    x: (B, C, H, W), w: (F, C, k, k), b: (F,).
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    B, C, H, W = x.shape
    F, Cw, k, _ = w.shape
    if Cw != C:
        raise ShapeError(f"conv2d: input channels {C} vs kernel channels {Cw}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    Hp, Wp = xp.shape[2], xp.shape[3]
    Ho = (Hp - k) // stride + 1
    Wo = (Wp - k) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # (B, C, Ho, Wo, k, k)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, C * k * k)
    wmat = w.data.reshape(F, C * k * k)
    out = cols @ wmat.T + b.data
    data = out.reshape(B, Ho, Wo, F).transpose(0, 3, 1, 2)

    def bwd(g):
        gout = g.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, F)
        gw = (gout.T @ cols).reshape(F, C, k, k)
        gb = gout.sum(axis=0)
        gcols = gout @ wmat  # (B*Ho*Wo, C*k*k)
        gcols = gcols.reshape(B, Ho, Wo, C, k, k)
        gx = np.zeros((B, C, Hp, Wp), dtype=g.dtype)
        for i in range(k):
            for j in range(k):
                gx[:, :, i : i + Ho * stride : stride, j : j + Wo * stride : stride] += gcols[
                    :, :, :, :, i, j
                ].transpose(0, 3, 1, 2)
        if padding:
            gx = gx[:, :, padding : Hp - padding, padding : Wp - padding]
        return gx, gw, gb

    return _make(data, (x, w, b), bwd)


def global_avg_pool(x) -> Tensor:
    """(B, C, H, W) -> (B, C) spatial mean."""
    x = as_tensor(x)
    B, C, H, W = x.shape
    data = x.data.mean(axis=(2, 3))

    def bwd(g):
        return (np.broadcast_to(g[:, :, None, None] / (H * W), x.shape).copy(),)

    return _make(data, (x,), bwd)


def check_gradient(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must map ``x`` to a scalar Tensor. Error per coordinate is
    |analytic - numeric| / max(1, |numeric|).
    """
    x = as_tensor(x)
    probe = Tensor(x.data.copy(), requires_grad=True)
    out = f(probe)
    if out.data.size != 1:
        raise ShapeError("check_gradient: f must return a scalar")
    out.backward()
    analytic = probe.grad if probe.grad is not None else np.zeros_like(probe.data)
    if not np.all(np.isfinite(analytic)):
        raise NumericError("check_gradient: non-finite analytic gradient")

    flat = x.data.ravel()
    numeric = np.zeros_like(flat)
    for i in range(flat.size):
        bumped = flat.copy()
        bumped[i] = flat[i] + h
        fp = f(Tensor(bumped.reshape(x.shape))).item()
        bumped[i] = flat[i] - h
        fm = f(Tensor(bumped.reshape(x.shape))).item()
        numeric[i] = (fp - fm) / (2.0 * h)
    if not np.all(np.isfinite(numeric)):
        raise NumericError("check_gradient: non-finite numeric gradient")
    err = np.abs(analytic.ravel() - numeric) / np.maximum(1.0, np.abs(numeric))
    return float(err.max()) if err.size else 0.0
