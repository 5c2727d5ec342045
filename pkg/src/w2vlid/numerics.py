"""Dense tensors with reverse-mode automatic differentiation.

Every op that touches a tensor with ``requires_grad`` records its inputs and a
closure mapping the output adjoint to input adjoints. :func:`backward` replays
those closures in reverse creation order, which is a valid reverse topological
order because an op can only consume tensors that already exist.

Arrays are plain numpy; float32 is the default, float64 is available through
:func:`default_dtype` for finite-difference checking.
"""
from __future__ import annotations

import contextlib
import itertools
import math
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf as _erf


class ShapeError(ValueError):
    pass


class ConfigurationError(ValueError):
    pass


class GradientError(RuntimeError):
    pass


_state = {"dtype": np.dtype(np.float32), "grad": True}
_counter = itertools.count()


@contextlib.contextmanager
def default_dtype(dtype):
    prev = _state["dtype"]
    _state["dtype"] = np.dtype(dtype)
    try:
        yield
    finally:
        _state["dtype"] = prev


def get_default_dtype() -> np.dtype:
    return _state["dtype"]


@contextlib.contextmanager
def no_grad():
    prev = _state["grad"]
    _state["grad"] = False
    try:
        yield
    finally:
        _state["grad"] = prev


def _as_array(data, dtype=None) -> np.ndarray:
    if isinstance(data, Tensor):
        data = data.data
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype.kind == "f":
        return arr
    return arr.astype(_state["dtype"])


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """An n-dimensional array that can take part in a recorded computation."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_seq", "_consumed")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._seq = next(_counter)
        self._consumed = False

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self):
        return len(self.data)

    # -- operators -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def swapaxes(self, a, b):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return transpose(self, tuple(axes))

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)


def tensor(data, requires_grad=False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _lift(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype if dtype is not None else _state["dtype"]))


def _record(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor(data)
    if _state["grad"] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def _tape(loss: Tensor) -> list[Tensor]:
    """Differentiable nodes reachable from ``loss`` in reverse recorded order."""
    seen = {id(loss)}
    stack = [loss]
    nodes = []
    while stack:
        node = stack.pop()
        nodes.append(node)
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                seen.add(id(p))
                stack.append(p)
    nodes.sort(key=lambda t: t._seq, reverse=True)
    return nodes


def backward(loss: Tensor, grad: np.ndarray | None = None) -> None:
    """Populate ``.grad`` on every tensor the scalar ``loss`` depends on.

    The graph is released afterwards; calling this twice on the same loss is an
    error rather than a silent double accumulation.
    """
    if loss._consumed:
        raise GradientError("backward already ran on this graph; recompute the loss first")
    if not loss.requires_grad:
        raise GradientError("loss does not depend on any tensor requiring grad (detached graph)")
    if grad is None:
        if loss.size != 1:
            raise GradientError(f"backward needs a scalar loss, got shape {loss.shape}")
        grad = np.ones_like(loss.data)
    grads = {id(loss): np.asarray(grad, dtype=loss.dtype)}
    for node in _tape(loss):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        node.grad = g if node.grad is None else node.grad + g
        if node._backward is not None:
            parent_grads = node._backward(g)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                grads[key] = pg if key not in grads else grads[key] + pg
        node._backward = None
        node._parents = ()
        node._consumed = True


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _lift(a, b if isinstance(b, Tensor) else None), _lift(b, a if isinstance(a, Tensor) else None)
    sa, sb = a.shape, b.shape
    return _record(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _lift(a, b if isinstance(b, Tensor) else None), _lift(b, a if isinstance(a, Tensor) else None)
    sa, sb = a.shape, b.shape
    return _record(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _lift(a, b if isinstance(b, Tensor) else None), _lift(b, a if isinstance(a, Tensor) else None)
    ad, bd = a.data, b.data
    return _record(ad * bd, (a, b),
                   lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b) -> Tensor:
    a, b = _lift(a, b if isinstance(b, Tensor) else None), _lift(b, a if isinstance(a, Tensor) else None)
    ad, bd = a.data, b.data
    out = ad / bd

    def bw(g):
        ga = _unbroadcast(g / bd, ad.shape)
        gb = _unbroadcast(-g * out / bd, bd.shape)
        return ga, gb

    return _record(out, (a, b), bw)


def power(x: Tensor, exponent: float) -> Tensor:
    xd = x.data
    return _record(xd ** exponent, (x,), lambda g: (g * exponent * xd ** (exponent - 1),))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _record(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    xd = x.data
    return _record(np.log(xd), (x,), lambda g: (g / xd,))


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return _record(out, (x,), lambda g: (g * 0.5 / out,))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _record(out, (x,), lambda g: (g * (1.0 - out * out),))


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return _record(np.where(pos, x.data, 0).astype(x.dtype), (x,), lambda g: (g * pos,))


_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact Gaussian-error linear unit, ``x * Phi(x)``."""
    xd = x.data
    cdf = 0.5 * (1.0 + _erf(xd / _SQRT2))
    out = (xd * cdf).astype(x.dtype, copy=False)

    def bw(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * xd * xd)
        return ((g * (cdf + xd * pdf)).astype(xd.dtype, copy=False),)

    return _record(out, (x,), bw)


def xlogx(x: Tensor) -> Tensor:
    """``x * ln(x)`` with the ``0 * ln 0 = 0`` convention and zero gradient there."""
    xd = x.data
    pos = xd > 0
    safe = np.where(pos, xd, 1.0)
    out = np.where(pos, xd * np.log(safe), 0.0).astype(x.dtype, copy=False)
    return _record(out, (x,), lambda g: (np.where(pos, g * (np.log(safe) + 1.0), 0.0).astype(xd.dtype),))


def where(cond: np.ndarray, a, b) -> Tensor:
    """Select from ``a`` where the constant boolean ``cond`` holds, else ``b``."""
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    cond = np.asarray(cond, dtype=bool)
    out = np.where(cond, a.data, b.data)
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(np.where(cond, g, 0), sa), _unbroadcast(np.where(cond, 0, g), sb)

    return _record(out.astype(a.dtype, copy=False), (a, b), bw)


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    if not training or p <= 0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return mul(x, Tensor(keep))


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape
    return _record(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),))


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    return _record(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def _has_array_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (np.ndarray, list)) for i in items)


def getitem(x: Tensor, index) -> Tensor:
    if isinstance(index, Tensor):
        index = index.data
    src_shape, dtype = x.shape, x.dtype
    fancy = _has_array_index(index)

    def bw(g):
        full = np.zeros(src_shape, dtype=dtype)
        if fancy:
            np.add.at(full, index, g)
        else:
            full[index] = g
        return (full,)

    return _record(x.data[index], (x,), bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_lift(t) for t in tensors]

    def bw(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _record(np.stack([t.data for t in tensors], axis=axis), tensors, bw)


def pad_time(x: Tensor, left: int, right: int, axis: int = -2) -> Tensor:
    """Zero-pad one axis of ``x``."""
    axis = axis % x.ndim
    widths = [(0, 0)] * x.ndim
    widths[axis] = (left, right)
    n = x.shape[axis]

    def bw(g):
        sl = [slice(None)] * x.ndim
        sl[axis] = slice(left, left + n)
        return (g[tuple(sl)],)

    return _record(np.pad(x.data, widths), (x,), bw)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        return (axis % ndim,)
    return tuple(a % ndim for a in axis)


def tsum(x: Tensor, axis=None, keepdims=False) -> Tensor:
    axes = _norm_axis(axis, x.ndim)
    src = x.shape

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, src).copy(),)

    return _record(np.asarray(x.data.sum(axis=axes, keepdims=keepdims)), (x,), bw)


def mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    axes = _norm_axis(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return tsum(x, axis, keepdims) / float(count)


def _extremum(x: Tensor, axis: int, keepdims: bool, pick) -> Tensor:
    axis = axis % x.ndim
    idx = pick(x.data, axis=axis)
    out = np.take_along_axis(x.data, np.expand_dims(idx, axis), axis=axis)
    src, dtype = x.shape, x.dtype

    def bw(g):
        full = np.zeros(src, dtype=dtype)
        gg = g if keepdims else np.expand_dims(g, axis)
        np.put_along_axis(full, np.expand_dims(idx, axis), gg, axis=axis)
        return (full,)

    return _record(out if keepdims else out.squeeze(axis), (x,), bw)


def tmax(x: Tensor, axis: int, keepdims=False) -> Tensor:
    """Maximum along ``axis``; the gradient goes to the first maximal element."""
    return _extremum(x, axis, keepdims, np.argmax)


def tmin(x: Tensor, axis: int, keepdims=False) -> Tensor:
    return _extremum(x, axis, keepdims, np.argmin)


# ---------------------------------------------------------------------------
# linear algebra and fused kernels
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.ndim == 0 or b.ndim == 0:
        raise ShapeError(f"matmul needs at least 1-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    if b.ndim == 1:
        return reshape(matmul(a, reshape(b, (b.shape[0], 1))), a.shape[:-1])
    if a.ndim == 1:
        return reshape(matmul(reshape(a, (1, a.shape[0])), b), b.shape[:-2] + b.shape[-1:])
    ad, bd = a.data, b.data

    def bw(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return _record(ad @ bd, (a, b), bw)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)
    return _record(out, (x,), lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),))


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse

    def bw(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _record(out, (x,), bw)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    if eps <= 0:
        raise ConfigurationError("layer_norm eps must be positive")
    if gain.shape != x.shape[-1:] or bias.shape != x.shape[-1:]:
        raise ShapeError(f"layer_norm affine shape {gain.shape}/{bias.shape} vs input {x.shape}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * rstd
    gd = gain.data
    lead = tuple(range(xd.ndim - 1))

    def bw(g):
        dxhat = g * gd
        dx = rstd * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                     - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _record(xhat * gd + bias.data, (x, gain, bias), bw)


def conv1d_grouped(x: Tensor, weight: Tensor, bias: Tensor | None = None, groups: int = 1) -> Tensor:
    """Same-padded temporal convolution over ``x`` of shape (..., T, C).

    ``weight`` has shape (C_out, C / groups, kernel). Output length equals
    input length; for even kernels the extra pad frame goes on the right.
    """
    c_in = x.shape[-1]
    c_out, c_per_group, kernel = weight.shape
    if c_in % groups or c_out % groups:
        raise ConfigurationError(f"channels {c_in}->{c_out} not divisible by groups={groups}")
    if c_per_group != c_in // groups:
        raise ShapeError(f"conv weight {weight.shape} does not match {c_in} channels in {groups} groups")
    lead = x.shape[:-2]
    T = x.shape[-2]
    xd = x.data.reshape((-1, T, c_in))
    N = xd.shape[0]
    left = kernel // 2
    right = kernel - 1 - left
    xp = np.pad(xd, ((0, 0), (left, right), (0, 0)))
    o_per_group = c_out // groups
    # im2col per group: (G, N*T, Cg*k) against (G, Cg*k, Og)
    win = np.lib.stride_tricks.sliding_window_view(xp, kernel, axis=1)  # (N, T, C, k)
    cols = win.reshape(N, T, groups, c_per_group, kernel).transpose(2, 0, 1, 3, 4) \
        .reshape(groups, N * T, c_per_group * kernel)
    w = weight.data.reshape(groups, o_per_group, c_per_group * kernel)
    out = np.matmul(cols, w.transpose(0, 2, 1)).transpose(1, 0, 2).reshape(N, T, c_out)
    if bias is not None:
        out = out + bias.data
    out = out.reshape(lead + (T, c_out))

    def bw(g):
        g2 = g.reshape(N * T, groups, o_per_group).transpose(1, 0, 2)  # (G, N*T, Og)
        gw = np.matmul(g2.transpose(0, 2, 1), cols).reshape(weight.shape)
        gcols = np.matmul(g2, w).reshape(groups, N, T, c_per_group, kernel)
        gwin = gcols.transpose(1, 2, 4, 0, 3).reshape(N, T, kernel, c_in)
        gxp = np.zeros(xp.shape, dtype=xp.dtype)
        for j in range(kernel):
            gxp[:, j:j + T] += gwin[:, :, j]
        gx = gxp[:, left:left + T].reshape(x.shape)
        if bias is None:
            return gx, gw
        return gx, gw, g.reshape(-1, c_out).sum(axis=0)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return _record(out, parents, bw)


def cosine_similarity(a, b, axis: int = -1) -> Tensor:
    """Cosine similarity along ``axis`` with broadcasting.

    Pairs where either vector has zero norm give 0 with zero gradient.
    """
    a, b = _lift(a), _lift(b)
    ad, bd = a.data, b.data
    na = np.sqrt((ad * ad).sum(axis=axis, keepdims=True))
    nb = np.sqrt((bd * bd).sum(axis=axis, keepdims=True))
    denom = na * nb
    ok = denom > 0
    safe = np.where(ok, denom, 1.0)
    dot = (ad * bd).sum(axis=axis, keepdims=True)
    s = np.where(ok, dot / safe, 0.0)

    def bw(g):
        gk = np.where(ok, np.expand_dims(g, axis), 0.0)
        sa = np.where(na > 0, na, 1.0)
        sb = np.where(nb > 0, nb, 1.0)
        ga = gk * (bd / safe - s * ad / (sa * sa))
        gb = gk * (ad / safe - s * bd / (sb * sb))
        return _unbroadcast(ga.astype(ad.dtype, copy=False), ad.shape), \
            _unbroadcast(gb.astype(bd.dtype, copy=False), bd.shape)

    return _record(np.squeeze(s, axis=axis).astype(ad.dtype, copy=False), (a, b), bw)


def straight_through(hard: np.ndarray, soft: Tensor) -> Tensor:
    """Forward value ``hard``, gradient of ``soft``."""
    return _record(np.asarray(hard, dtype=soft.dtype), (soft,), lambda g: (g,))


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------

def numerical_grad(fn: Callable[[], Tensor], x: Tensor, eps: float = 1e-6,
                   indices: np.ndarray | None = None) -> np.ndarray:
    """Central-difference gradient of scalar ``fn()`` w.r.t. ``x`` (mutated in place).

    With ``indices`` only those flat positions are perturbed and the result is
    the 1-D vector of their partial derivatives.
    """
    flat = x.data.reshape(-1)
    positions = np.arange(flat.size) if indices is None else np.asarray(indices).reshape(-1)
    out = np.zeros(positions.size, dtype=np.float64)
    with no_grad():
        for j, i in enumerate(positions):
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(fn().data.sum())
            flat[i] = orig - eps
            lo = float(fn().data.sum())
            flat[i] = orig
            out[j] = (hi - lo) / (2 * eps)
    return out.reshape(x.shape) if indices is None else out


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-3) -> float:
    """Largest elementwise ``|a - n| / max(|a|, |n|, floor)``.

    The floor keeps entries whose true gradient is essentially zero from
    dominating through cancellation noise.
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def gradcheck(fn: Callable[[], Tensor], inputs: Iterable[Tensor], eps: float = 1e-6,
              floor: float = 1e-3, samples: int | None = None,
              rng: np.random.Generator | None = None) -> float:
    """Worst relative error between backward() and central differences over ``inputs``.

    ``samples`` limits the check to that many random coordinates per input.
    """
    inputs = list(inputs)
    for t in inputs:
        t.grad = None
    backward(fn())
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for t in inputs:
        analytic = t.grad if t.grad is not None else np.zeros(t.shape)
        if samples is not None and samples < t.size:
            idx = rng.choice(t.size, size=samples, replace=False)
            numeric = numerical_grad(fn, t, eps, idx)
            worst = max(worst, relative_error(analytic.reshape(-1)[idx], numeric, floor))
        else:
            worst = max(worst, relative_error(analytic, numerical_grad(fn, t, eps), floor))
    return worst
