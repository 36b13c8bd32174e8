"""Dense float64 tensors with a reverse-mode gradient tape.

Every operation is a plain function that computes its result with numpy and,
when any input requires a gradient, records a closure mapping the upstream
gradient to one gradient per input. ``backward`` replays those closures in
reverse topological order.

Only same-shape elementwise arithmetic and tensor-with-scalar arithmetic are
supported; the handful of broadcasting patterns the networks need (bias rows,
per-channel biases, row normalisation, pairwise distances) are separate
primitives with their own backward rules.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, DegenerateInputError, DimensionError, DomainError, NonFiniteError

_NORM_FLOOR = 1e-12


class Tensor:
    """An n-dimensional array of float64 values, optionally tracked for gradients.

    Leaf tensors created with ``requires_grad=True`` own a zero-initialised
    ``grad`` accumulator. Interior nodes receive ``grad`` when ``backward``
    visits them.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NonFiniteError("tensor data contains NaN or Inf")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _scalar_error(self)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag}, op={self._op})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise DimensionError("division is only defined by a scalar")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> Tensor:
        return transpose(self)


class Parameter(Tensor):
    """A named trainable leaf."""

    __slots__ = ("name",)

    def __init__(self, data, name: str):
        super().__init__(data, requires_grad=True)
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def _scalar_error(t: Tensor):
    raise ContractError(f"expected a single-element tensor, got shape {t.shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    if not np.isfinite(data).all():
        raise NonFiniteError(f"{op} produced a non-finite value")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# elementwise arithmetic -----------------------------------------------------


def add(a, b) -> Tensor:
    a = as_tensor(a)
    if isinstance(b, Tensor):
        _same_shape(a, b, "add")
        return _make(a.data + b.data, (a, b), lambda g: (g, g), "add")
    c = float(b)
    return _make(a.data + c, (a,), lambda g: (g,), "add_scalar")


def sub(a, b) -> Tensor:
    a = as_tensor(a)
    if isinstance(b, Tensor):
        _same_shape(a, b, "sub")
        return _make(a.data - b.data, (a, b), lambda g: (g, -g), "sub")
    return add(a, -float(b))


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    if isinstance(b, Tensor):
        _same_shape(a, b, "mul")
        ad, bd = a.data, b.data
        return _make(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")
    c = float(b)
    return _make(a.data * c, (a,), lambda g: (g * c,), "mul_scalar")


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):  # overflow is reported by _make
        out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    if (x.data <= 0).any():
        raise DomainError("log of a non-positive value")
    xd = x.data
    return _make(np.log(xd), (x,), lambda g: (g / xd,), "log")


def power(x: Tensor, p: float) -> Tensor:
    """Elementwise ``x ** p`` for strictly positive ``x``."""
    if (x.data <= 0).any():
        raise DomainError("power requires strictly positive input")
    xd = x.data
    out = xd**p
    return _make(out, (x,), lambda g: (g * p * out / xd,), "power")


def square(x: Tensor) -> Tensor:
    xd = x.data
    return _make(xd * xd, (x,), lambda g: (2.0 * g * xd,), "square")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


# reductions and shape ---------------------------------------------------------


def sum(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = x.shape
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(out, dtype=np.float64), (x,), backward, "sum")


def mean(x: Tensor, axis: int | None = None) -> Tensor:
    n = x.data.size if axis is None else x.shape[axis]
    return mul(sum(x, axis=axis), 1.0 / n)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {old} to {tuple(shape)}") from exc
    return _make(out, (x,), lambda g: (g.reshape(old),), "reshape")


def flatten(x: Tensor) -> Tensor:
    """Collapse every axis after the first."""
    return reshape(x, (x.shape[0], -1))


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {x.shape}")
    return _make(x.data.T.copy(), (x,), lambda g: (g.T,), "transpose")


# linear algebra -----------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        ga = g @ bd.T if a.requires_grad else None
        gb = ad.T @ g if b.requires_grad else None
        return ga, gb

    with np.errstate(over="ignore", invalid="ignore"):
        out = ad @ bd
    return _make(out, (a, b), backward, "matmul")


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a length-D vector to every row of an N×D matrix."""
    if x.ndim != 2 or b.shape != (x.shape[1],):
        raise DimensionError(f"add_bias: bias {b.shape} does not fit {x.shape}")
    return _make(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=0)), "add_bias")


def add_channel_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add one scalar per channel to an N×C×H×W tensor."""
    if x.ndim != 4 or b.shape != (x.shape[1],):
        raise DimensionError(f"add_channel_bias: bias {b.shape} does not fit {x.shape}")
    out = x.data + b.data[None, :, None, None]
    return _make(out, (x, b), lambda g: (g, g.sum(axis=(0, 2, 3))), "add_channel_bias")


def sq_dist(x: Tensor, c: Tensor) -> Tensor:
    """Squared Euclidean distances between rows of ``x`` (N×D) and ``c`` (K×D)."""
    if x.ndim != 2 or c.ndim != 2 or x.shape[1] != c.shape[1]:
        raise DimensionError(f"sq_dist: incompatible shapes {x.shape} and {c.shape}")
    diff = x.data[:, None, :] - c.data[None, :, :]
    out = np.einsum("nkd,nkd->nk", diff, diff)

    def backward(g):
        w = 2.0 * g[:, :, None] * diff
        return w.sum(axis=1), -w.sum(axis=0)

    return _make(out, (x, c), backward, "sq_dist")


# row-wise normalisations ------------------------------------------------------


def row_softmax(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise DimensionError(f"row_softmax expects a matrix, got {x.shape}")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return _make(out, (x,), backward, "row_softmax")


def log_row_softmax(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise DimensionError(f"log_row_softmax expects a matrix, got {x.shape}")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    soft = np.exp(out)

    def backward(g):
        return (g - soft * g.sum(axis=1, keepdims=True),)

    return _make(out, (x,), backward, "log_row_softmax")


def row_normalize(x: Tensor) -> Tensor:
    """Divide each row of a strictly positive matrix by its sum."""
    if x.ndim != 2:
        raise DimensionError(f"row_normalize expects a matrix, got {x.shape}")
    s = x.data.sum(axis=1, keepdims=True)
    if (s <= 0).any():
        raise DegenerateInputError("row_normalize: row with non-positive sum")
    out = x.data / s

    def backward(g):
        return ((g - (g * out).sum(axis=1, keepdims=True)) / s,)

    return _make(out, (x,), backward, "row_normalize")


def l2_normalize_rows(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise DimensionError(f"l2_normalize_rows expects a matrix, got {x.shape}")
    norms = np.sqrt((x.data * x.data).sum(axis=1, keepdims=True))
    if (norms < _NORM_FLOOR).any():
        bad = int(np.argmax(norms[:, 0] < _NORM_FLOOR))
        raise DegenerateInputError(f"row {bad} has norm below {_NORM_FLOOR:g}")
    out = x.data / norms

    def backward(g):
        return ((g - out * (g * out).sum(axis=1, keepdims=True)) / norms,)

    return _make(out, (x,), backward, "l2_normalize_rows")


# convolutional vocabulary -------------------------------------------------------


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1) -> Tensor:
    """Valid (unpadded) cross-correlation of N×C×H×W input with F×C×h×w kernels."""
    if x.ndim != 4 or kernel.ndim != 4:
        raise DimensionError(f"conv2d expects 4-D operands, got {x.shape} and {kernel.shape}")
    if stride < 1:
        raise ContractError("conv2d stride must be positive")
    n, c, hh, ww = x.shape
    f, kc, kh, kw = kernel.shape
    if kc != c:
        raise DimensionError(f"conv2d: input has {c} channels, kernel expects {kc}")
    if kh > hh or kw > ww:
        raise DimensionError(f"conv2d: kernel {kernel.shape} larger than input {x.shape}")
    ho = (hh - kh) // stride + 1
    wo = (ww - kw) // stride + 1

    win = sliding_window_view(x.data, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    kmat = kernel.data.reshape(f, c * kh * kw)
    with np.errstate(over="ignore", invalid="ignore"):
        out = (cols @ kmat.T).reshape(n, ho, wo, f).transpose(0, 3, 1, 2)

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, f)
        gk = (g2.T @ cols).reshape(kernel.shape) if kernel.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (g2 @ kmat).reshape(n, ho, wo, c, kh, kw)
            gx = np.zeros_like(x.data)
            for i in range(kh):
                for j in range(kw):
                    gx[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += gcols[
                        :, :, :, :, i, j
                    ].transpose(0, 3, 1, 2)
        return gx, gk

    return _make(np.ascontiguousarray(out), (x, kernel), backward, "conv2d")


def maxpool2d(x: Tensor) -> Tensor:
    """2×2 max pooling with stride 2; trailing odd rows/columns are dropped."""
    if x.ndim != 4:
        raise DimensionError(f"maxpool2d expects N×C×H×W, got {x.shape}")
    n, c, hh, ww = x.shape
    ho, wo = hh // 2, ww // 2
    if ho == 0 or wo == 0:
        raise DimensionError(f"maxpool2d: input {x.shape} smaller than the 2×2 window")
    blocks = x.data[:, :, : 2 * ho, : 2 * wo].reshape(n, c, ho, 2, wo, 2)
    blocks = blocks.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, 4)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        onehot = np.zeros((n, c, ho, wo, 4))
        np.put_along_axis(onehot, arg[..., None], g[..., None], axis=-1)
        full = np.zeros_like(x.data)
        full[:, :, : 2 * ho, : 2 * wo] = (
            onehot.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * ho, 2 * wo)
        )
        return (full,)

    return _make(out, (x,), backward, "maxpool2d")


# reverse pass ---------------------------------------------------------------------


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``grad`` of every reachable trainable leaf."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        node.grad = g
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()


# finite-difference checking -------------------------------------------------------


def grad_check(f: Callable[[Tensor], Tensor], x, h: float = 1e-6) -> float:
    """Max relative error between backprop and central differences for scalar ``f``.

    The error per coordinate is ``|analytic - numeric| / max(1, |analytic|)``.
    """
    x0 = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    probe = Tensor(x0, requires_grad=True)
    backward(f(probe))
    analytic = probe.grad

    numeric = np.zeros_like(x0)
    flat = numeric.reshape(-1)
    for i in range(x0.size):
        xp = x0.copy().reshape(-1)
        xm = x0.copy().reshape(-1)
        xp[i] += h
        xm[i] -= h
        fp = f(Tensor(xp.reshape(x0.shape))).item()
        fm = f(Tensor(xm.reshape(x0.shape))).item()
        flat[i] = (fp - fm) / (2.0 * h)
    return _rel_err(analytic, numeric)


def grad_check_params(f: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-6) -> float:
    """Like :func:`grad_check` but perturbs a set of leaves in place.

    ``f`` must rebuild its graph from the current ``data`` of ``params`` on
    every call. Returns the worst error over every coordinate of every leaf.
    """
    zero_grads(params)
    backward(f())
    worst = 0.0
    for p in params:
        analytic = p.grad.copy()
        numeric = np.zeros_like(p.data)
        flat_data = p.data.reshape(-1)
        flat_num = numeric.reshape(-1)
        for i in range(flat_data.size):
            orig = flat_data[i]
            flat_data[i] = orig + h
            fp = f().item()
            flat_data[i] = orig - h
            fm = f().item()
            flat_data[i] = orig
            flat_num[i] = (fp - fm) / (2.0 * h)
        worst = max(worst, _rel_err(analytic, numeric))
    return worst


def _rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    if analytic.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))))
