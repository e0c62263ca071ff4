"""Dense-tensor kernels with reverse-mode gradients.

Small numpy-backed autodiff engine: each kernel computes its forward value
eagerly and registers a closed-form backward closure. Finite differences are
used only by grad_check() to verify the analytic path, never for training.

Training precision defaults to f32; gradient verification runs at f64.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import ConfigError, FormatError, NumericError, ShapeError
from .rng import Rng

DTYPES = {"f32": np.float32, "f64": np.float64}

_grad_enabled = True
_strict_finite = True


class no_grad:
    """Context manager disabling graph recording (inference paths)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def set_strict_finite(on: bool) -> bool:
    """Toggle NaN/Inf checks in numerically risky kernels; returns previous value."""
    global _strict_finite
    prev = _strict_finite
    _strict_finite = on
    return prev


def _check_finite(arr: np.ndarray, op: str) -> None:
    if _strict_finite and not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values produced by {op}")


class Tensor:
    """Dense real array plus an optional backward edge into the graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad) and _grad_enabled
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    # -- introspection ------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
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

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    # -- autodiff plumbing --------------------------------------------------

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a seed requires a scalar")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
        _accumulate(self, np.asarray(grad, dtype=self.data.dtype))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def zero_grad(self) -> None:
        self.grad = None

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other, self), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return pow_const(self, p)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)


def _as_tensor(value, like: Tensor | None = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.data.dtype if like is not None else None
    return Tensor(np.asarray(value, dtype=dtype))


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- elementwise arithmetic --------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b, a)
    data = a.data + b.data

    def bw(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _node(data, (a, b), bw)


def sub(a: Tensor, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b, a)
    data = a.data - b.data

    def bw(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _node(data, (a, b), bw)


def mul(a: Tensor, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b, a)
    data = a.data * b.data

    def bw(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _node(data, (a, b), bw)


def div(a: Tensor, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b, a)
    if _strict_finite and np.any(b.data == 0):
        raise NumericError("division by zero")
    data = a.data / b.data

    def bw(g):
        _accumulate(a, _unbroadcast(g / b.data, a.shape))
        _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _node(data, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    def bw(g):
        _accumulate(a, -g)

    return _node(-a.data, (a,), bw)


def pow_const(a: Tensor, p: float) -> Tensor:
    p = float(p)
    data = a.data ** p

    def bw(g):
        _accumulate(a, g * p * a.data ** (p - 1.0))

    return _node(data, (a,), bw)


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)
    _check_finite(data, "exp")

    def bw(g):
        _accumulate(a, g * data)

    return _node(data, (a,), bw)


def log(a: Tensor) -> Tensor:
    if _strict_finite and np.any(a.data <= 0):
        raise NumericError("log of non-positive value")
    data = np.log(a.data)

    def bw(g):
        _accumulate(a, g / a.data)

    return _node(data, (a,), bw)


def sqrt(a: Tensor) -> Tensor:
    if _strict_finite and np.any(a.data < 0):
        raise NumericError("sqrt of negative value")
    data = np.sqrt(a.data)

    def bw(g):
        _accumulate(a, g * 0.5 / np.maximum(data, np.finfo(data.dtype).tiny))

    return _node(data, (a,), bw)


def tabs(a: Tensor) -> Tensor:
    data = np.abs(a.data)

    def bw(g):
        _accumulate(a, g * np.sign(a.data))

    return _node(data, (a,), bw)


def maximum(a: Tensor, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b, a)
    data = np.maximum(a.data, b.data)

    def bw(g):
        take_a = a.data >= b.data  # ties route to the left operand
        _accumulate(a, _unbroadcast(g * take_a, a.shape))
        _accumulate(b, _unbroadcast(g * (~take_a), b.shape))

    return _node(data, (a, b), bw)


def minimum(a: Tensor, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b, a)
    data = np.minimum(a.data, b.data)

    def bw(g):
        take_a = a.data <= b.data
        _accumulate(a, _unbroadcast(g * take_a, a.shape))
        _accumulate(b, _unbroadcast(g * (~take_a), b.shape))

    return _node(data, (a, b), bw)


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    data = np.clip(a.data, lo, hi)

    def bw(g):
        _accumulate(a, g * ((a.data >= lo) & (a.data <= hi)))

    return _node(data, (a,), bw)


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0)

    def bw(g):
        _accumulate(a, g * (a.data > 0))

    return _node(data, (a,), bw)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                    np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    _check_finite(data, "sigmoid")

    def bw(g):
        _accumulate(a, g * data * (1.0 - data))

    return _node(data, (a,), bw)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """tanh-approximation gelu: 0.5*x*(1 + tanh(c*(x + 0.044715*x^3)))."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    data = 0.5 * x * (1.0 + t)

    def bw(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x ** 2)
        _accumulate(a, g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner))

    return _node(data, (a,), bw)


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)

    def bw(g):
        _accumulate(a, g * (1.0 - data * data))

    return _node(data, (a,), bw)


# -- shape manipulation -------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    data = a.data.reshape(shape)

    def bw(g):
        _accumulate(a, g.reshape(a.shape))

    return _node(data, (a,), bw)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    data = a.data.transpose(axes)

    def bw(g):
        _accumulate(a, g.transpose(inv))

    return _node(data, (a,), bw)


def getitem(a: Tensor, idx) -> Tensor:
    data = a.data[idx]

    def bw(g):
        if not a.requires_grad:
            return
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        np.add.at(a.grad, idx, g)

    return _node(data, (a,), bw)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]

    def bw(g):
        off = 0
        for p, s in zip(parts, sizes):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(off, off + s)
            _accumulate(p, g[tuple(sl)])
            off += s

    return _node(data, tuple(parts), bw)


def stack(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    data = np.stack([p.data for p in parts], axis=axis)

    def bw(g):
        for i, p in enumerate(parts):
            _accumulate(p, np.take(g, i, axis=axis))

    return _node(data, tuple(parts), bw)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        gg = g
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        _accumulate(a, np.broadcast_to(gg, a.shape))

    return _node(data, (a,), bw)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else np.prod(
        [a.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))]
    )
    return mul(tsum(a, axis, keepdims), 1.0 / float(n))


# -- dense kernels ------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims disagree: {a.shape} @ {b.shape}")
    if a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul batch dims must match: {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def bw(g):
        _accumulate(a, g @ b.data.swapaxes(-1, -2))
        _accumulate(b, a.data.swapaxes(-1, -2) @ g)

    return _node(data, (a, b), bw)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    if axis >= x.ndim or axis < -x.ndim:
        raise ShapeError(f"softmax axis {axis} invalid for shape {x.shape}")
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)
    _check_finite(data, "softmax")

    def bw(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        _accumulate(a, data * (g - dot))

    return _node(data, (a,), bw)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    if eps <= 0:
        raise ConfigError(f"layer_norm eps must be positive, got {eps}")
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"layer_norm affine params must have shape ({c},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = ((x.data - mu) ** 2).mean(axis=-1, keepdims=True)
    istd = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * istd
    data = xhat * gamma.data + beta.data
    _check_finite(data, "layer_norm")

    def bw(g):
        _accumulate(gamma, (g * xhat).reshape(-1, c).sum(axis=0))
        _accumulate(beta, g.reshape(-1, c).sum(axis=0))
        gh = g * gamma.data
        gmean = gh.mean(axis=-1, keepdims=True)
        gxhat = (gh * xhat).mean(axis=-1, keepdims=True)
        _accumulate(x, istd * (gh - gmean - xhat * gxhat))

    return _node(data, (x, gamma, beta), bw)


def conv3x3(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Same-padded 3x3 convolution over a (Cin, H, W) map."""
    cin, h, wd = x.shape
    cout, cin_w, kh, kw = w.shape
    if (kh, kw) != (3, 3) or cin_w != cin:
        raise ShapeError(f"conv3x3 weight {w.shape} incompatible with input {x.shape}")
    if b.shape != (cout,):
        raise ShapeError(f"conv3x3 bias must have shape ({cout},)")
    xp = np.pad(x.data, ((0, 0), (1, 1), (1, 1)))
    cols = np.empty((cin, 3, 3, h, wd), dtype=x.data.dtype)
    for dy in range(3):
        for dx in range(3):
            cols[:, dy, dx] = xp[:, dy:dy + h, dx:dx + wd]
    cols2 = cols.reshape(cin * 9, h * wd)
    w2 = w.data.reshape(cout, cin * 9)
    data = (w2 @ cols2 + b.data[:, None]).reshape(cout, h, wd)

    def bw(g):
        g2 = g.reshape(cout, h * wd)
        _accumulate(w, (g2 @ cols2.T).reshape(w.shape))
        _accumulate(b, g2.sum(axis=1))
        gcols = (w2.T @ g2).reshape(cin, 3, 3, h, wd)
        gxp = np.zeros_like(xp)
        for dy in range(3):
            for dx in range(3):
                gxp[:, dy:dy + h, dx:dx + wd] += gcols[:, dy, dx]
        _accumulate(x, gxp[:, 1:h + 1, 1:wd + 1])

    return _node(data, (x, w, b), bw)


def conv1x1(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Pointwise projection of a (Cin, H, W) map with weight (Cout, Cin)."""
    cin, h, wd = x.shape
    cout = w.shape[0]
    if w.shape != (cout, cin) or b.shape != (cout,):
        raise ShapeError(f"conv1x1 weights {w.shape}/{b.shape} incompatible with {x.shape}")
    flat = reshape(x, (cin, h * wd))
    out = matmul(w, flat) + reshape(b, (cout, 1))
    return reshape(out, (cout, h, wd))


# -- multi-head attention ------------------------------------------------------


@dataclass
class AttentionWeights:
    """Projection weights for one attention layer (separate q/k/v/out)."""

    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor

    @classmethod
    def identity(cls, dim: int, dtype=np.float64) -> "AttentionWeights":
        eye = lambda: Tensor(np.eye(dim, dtype=dtype))
        zero = lambda: Tensor(np.zeros(dim, dtype=dtype))
        return cls(eye(), zero(), eye(), zero(), eye(), zero(), eye(), zero())


def split_heads(x: Tensor, heads: int) -> Tensor:
    n, c = x.shape
    if c % heads != 0:
        raise ConfigError(f"width {c} not divisible by {heads} heads")
    return transpose(reshape(x, (n, heads, c // heads)), (1, 0, 2))


def merge_heads(x: Tensor) -> Tensor:
    h, n, d = x.shape
    return reshape(transpose(x, (1, 0, 2)), (n, h * d))


def attention_scores(q_heads: Tensor, k_heads: Tensor) -> Tensor:
    """Scaled dot-product scores (heads, Nq, Nk), scale 1/sqrt(head_dim)."""
    d = q_heads.shape[-1]
    return mul(matmul(q_heads, transpose(k_heads, (0, 2, 1))), 1.0 / math.sqrt(d))


def mha_scores(q: Tensor, k: Tensor, heads: int, w: AttentionWeights) -> Tensor:
    """Pre-softmax attention scores as computed inside mha, for reuse elsewhere."""
    qp = split_heads(matmul(q, w.wq) + w.bq, heads)
    kp = split_heads(matmul(k, w.wk) + w.bk, heads)
    return attention_scores(qp, kp)


def mha(q: Tensor, k: Tensor, v: Tensor, heads: int, w: AttentionWeights) -> tuple[Tensor, Tensor]:
    """Multi-head attention; returns (output (Nq, C), attention (heads, Nq, Nk))."""
    if q.shape[-1] != k.shape[-1] or k.shape != v.shape:
        raise ShapeError(f"mha shapes disagree: q{q.shape} k{k.shape} v{v.shape}")
    scores = mha_scores(q, k, heads, w)
    attn = softmax(scores, axis=-1)
    vp = split_heads(matmul(v, w.wv) + w.bv, heads)
    out = matmul(merge_heads(matmul(attn, vp)), w.wo) + w.bo
    return out, attn


# -- parameter registry ----------------------------------------------------------


class GradientTape:
    """Named parameter registry; gradients accumulate additively on each Tensor."""

    def __init__(self, dtype: str = "f32"):
        if dtype not in DTYPES:
            raise ConfigError(f"unknown dtype {dtype!r}, expected one of {sorted(DTYPES)}")
        self.dtype_name = dtype
        self.dtype = DTYPES[dtype]
        self._params: dict[str, Tensor] = {}

    def param(self, name: str, shape: tuple[int, ...], *, init: str = "trunc_normal",
              std: float = 0.02, rng: Rng | None = None, value: np.ndarray | None = None) -> Tensor:
        if name in self._params:
            raise ConfigError(f"parameter {name!r} already registered")
        shape = tuple(int(s) for s in shape)
        if value is not None:
            arr = np.asarray(value, dtype=self.dtype).reshape(shape)
        elif init == "zeros":
            arr = np.zeros(shape, dtype=self.dtype)
        elif init == "ones":
            arr = np.ones(shape, dtype=self.dtype)
        elif init == "trunc_normal":
            if rng is None:
                raise ConfigError("trunc_normal init requires an rng")
            arr = rng.truncated_normal(int(np.prod(shape)) if shape else 1, std=std)
            arr = arr.reshape(shape).astype(self.dtype)
        else:
            raise ConfigError(f"unknown init {init!r}")
        t = Tensor(arr, requires_grad=True)
        t.requires_grad = True  # registry survives no_grad contexts
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._params.items())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def gradients(self) -> dict[str, np.ndarray]:
        return {k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for k, t in self._params.items()}

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self._params.items()}

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        missing = [k for k in self._params if k not in state]
        if missing:
            raise FormatError(f"missing parameters in state: {missing[:4]}...")
        for k, t in self._params.items():
            arr = np.asarray(state[k], dtype=self.dtype)
            if arr.shape != t.data.shape:
                raise ShapeError(f"parameter {k}: stored {arr.shape} != expected {t.data.shape}")
            t.data = arr.copy()

    def attention_weights(self, prefix: str) -> AttentionWeights:
        p = self._params
        return AttentionWeights(
            p[f"{prefix}.q.w"], p[f"{prefix}.q.b"], p[f"{prefix}.k.w"], p[f"{prefix}.k.b"],
            p[f"{prefix}.v.w"], p[f"{prefix}.v.b"], p[f"{prefix}.o.w"], p[f"{prefix}.o.b"])


# -- gradient verification --------------------------------------------------------


def grad_check(loss_fn: Callable[[], Tensor], tape: GradientTape, eps: float = 1e-5,
               coords_per_param: int = 3, seed: int = 0) -> float:
    """Max relative error between analytic gradients and central differences.

    Relative error per coordinate is |analytic - numeric| / max(1e-8,
    |analytic| + |numeric|). Coordinates where both magnitudes sit below the
    f64 noise floor (1e-6) are instead required to agree within 1e-7
    absolutely and contribute zero to the maximum when they do.
    """
    if not (1e-6 <= eps <= 1e-2):
        raise ConfigError(f"grad_check eps must lie in [1e-6, 1e-2], got {eps}")
    tape.zero_grad()
    loss = loss_fn()
    if not np.isfinite(loss.item()):
        raise NumericError("loss is not finite")
    loss.backward()
    analytic = tape.gradients()

    rng = Rng(seed)
    worst = 0.0
    for name, p in tape.items():
        n = p.data.size
        k = min(coords_per_param, n)
        idxs = sorted(set(int(i) for i in rng.integers(0, n, k)))
        flat = p.data.reshape(-1)
        a_flat = analytic[name].reshape(-1)
        for idx in idxs:
            orig = float(flat[idx])
            step = eps * max(1.0, abs(orig))
            flat[idx] = orig + step
            lp = loss_fn().item()
            flat[idx] = orig - step
            lm = loss_fn().item()
            flat[idx] = orig
            numeric = (lp - lm) / (2.0 * step)
            a = float(a_flat[idx])
            if max(abs(a), abs(numeric)) < 1e-6:
                if abs(a - numeric) > 1e-7:
                    worst = max(worst, abs(a - numeric) / max(1e-8, abs(a) + abs(numeric)))
                continue
            worst = max(worst, abs(a - numeric) / max(1e-8, abs(a) + abs(numeric)))
    return worst


# -- weight container ("NTC1") ------------------------------------------------------

_MAGIC = b"NTC1"
_DTYPE_CODE = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPE = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def save_ntc1(path, tensors: Mapping[str, np.ndarray]) -> None:
    """Write tensors to the NTC1 container (JSON manifest + little-endian blob)."""
    entries = []
    blobs = []
    offset = 0
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        if arr.dtype not in _DTYPE_CODE:
            raise FormatError(f"{name}: dtype {arr.dtype} not storable (f32/f64 only)")
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = np.ascontiguousarray(le).tobytes()
        entries.append({
            "name": name,
            "dtype": _DTYPE_CODE[arr.dtype],
            "rank": arr.ndim,
            "extents": list(arr.shape),
            "offset": offset,
        })
        blobs.append(raw)
        offset += len(raw)
    manifest = json.dumps(entries).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<Q", len(manifest)))
        f.write(manifest)
        for raw in blobs:
            f.write(raw)


def load_ntc1(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != _MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}")
    (mlen,) = struct.unpack("<Q", data[4:12])
    try:
        manifest = json.loads(data[12:12 + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: unreadable manifest: {e}") from e
    blob = data[12 + mlen:]
    out: dict[str, np.ndarray] = {}
    for e in manifest:
        dt = _CODE_DTYPE[e["dtype"]]
        shape = tuple(e["extents"])
        if len(shape) != e["rank"]:
            raise FormatError(f"{e['name']}: rank {e['rank']} != extents {shape}")
        count = int(np.prod(shape)) if shape else 1
        start = e["offset"]
        arr = np.frombuffer(blob, dtype=dt, count=count, offset=start).reshape(shape)
        out[e["name"]] = arr.astype(dt.newbyteorder("="))
    return out
