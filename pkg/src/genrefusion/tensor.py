"""Dense tensors with reverse-mode automatic differentiation.

Every op builds an output :class:`Tensor` whose ``_backward`` closure maps the
output gradient to gradients for each parent.  :meth:`Tensor.backward` walks the
graph in reverse topological order and sums contributions per node.

Ops are registered by name in :data:`OPS` so the gradient-check suite can prove
coverage, and so a test harness can corrupt a single backward rule with
:func:`corrupt_backward`.
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor", "DimensionError", "NumericError", "ContractError", "ParameterError",
    "OPS", "corrupt_backward", "tensor", "as_tensor",
    "matmul", "conv_time", "maxpool_time", "batchnorm", "RunningStats",
    "relu", "tanh", "sigmoid", "elementwise", "softmax", "dropout", "concat", "stack",
    "take", "where", "cross_entropy", "amax", "grad_check",
]


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class NumericError(FloatingPointError):
    """A forward op produced NaN or Inf from finite inputs."""


class ContractError(RuntimeError):
    """Misuse of the autodiff API (non-scalar loss, repeated backward, ...)."""


class ParameterError(ValueError):
    """An op hyperparameter is out of range."""


# name -> one-line description; every differentiable op registers here
OPS: dict[str, str] = {}
_FAULTS: dict[str, float] = {}


def _register(name: str, doc: str) -> str:
    OPS[name] = doc
    return name


@contextlib.contextmanager
def corrupt_backward(op: str, scale: float = 1.01):
    """Scale every gradient emitted by ``op``'s backward rule (fault injection)."""
    if op not in OPS:
        raise KeyError(f"unknown op {op!r}")
    _FAULTS[op] = scale
    try:
        yield
    finally:
        _FAULTS.pop(op, None)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward", "_done")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._done = False

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # -- operators --------------------------------------------------------
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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    # -- autodiff ---------------------------------------------------------
    def backward(self) -> None:
        """Populate ``.grad`` on every ``requires_grad`` tensor feeding this scalar.

        Leaf gradients accumulate across distinct graphs; running backward twice on
        the same loss raises :class:`ContractError`.
        """
        if self.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {self.shape}")
        if self._done:
            raise ContractError("backward already ran on this graph; rebuild the forward pass")
        order = _topo(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            pgrads = node._backward(g)
            scale = _FAULTS.get(node.op)
            for parent, pg in zip(node._parents, pgrads):
                if pg is None or not _needs_grad(parent):
                    continue
                if scale is not None:
                    pg = pg * scale
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        self._done = True


def _needs_grad(t: Tensor) -> bool:
    return t.requires_grad or t._backward is not None


def _topo(root: Tensor) -> list[Tensor]:
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
        for p in reversed(node._parents):
            if id(p) not in seen and _needs_grad(p):
                stack.append((p, False))
    return order


def tensor(data, requires_grad: bool = False, dtype=np.float64) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype if dtype is not None else np.float64))


def _make(op: str, data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericError(f"{op} produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = False
    out._done = False
    out.op = op
    if any(_needs_grad(p) for p in parents):
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# --- arithmetic ------------------------------------------------------------
_register("add", "broadcasting addition")
_register("sub", "broadcasting subtraction")
_register("mul", "broadcasting elementwise product")
_register("neg", "negation")


def _pair(a, b) -> tuple[Tensor, Tensor]:
    # bare scalars/arrays adopt the dtype of the tensor operand
    if isinstance(a, Tensor):
        a, b = a, as_tensor(b, a.dtype)
    else:
        a, b = as_tensor(a, b.dtype), b
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"shapes {a.shape} and {b.shape} do not broadcast") from None
    return a, b


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return _make("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return _make("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    ad, bd = a.data, b.data
    return _make("mul", ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def neg(a: Tensor) -> Tensor:
    return _make("neg", -a.data, (a,), lambda g: (-g,))


# --- linear algebra ----------------------------------------------------------
_register("matmul", "matrix product; left operand may carry leading batch axes")


def matmul(a, b) -> Tensor:
    """``a @ b`` with ``a`` of shape (..., k) and ``b`` of shape (k, n)."""
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2 or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        ga = g @ bd.T
        a2 = ad.reshape(-1, ad.shape[-1]) if ad.ndim > 1 else ad[None, :]
        g2 = g.reshape(-1, g.shape[-1]) if g.ndim > 1 else g[None, :]
        return ga, a2.T @ g2

    return _make("matmul", ad @ bd, (a, b), backward)


# --- reductions and reshaping -------------------------------------------------
_register("sum", "sum over an axis or all axes")
_register("mean", "mean over an axis or all axes")
_register("amax", "max over one axis; gradient to the first argmax")
_register("reshape", "reshape")
_register("transpose", "axis permutation")
_register("getitem", "basic/advanced indexing")
_register("take", "row gather along axis 0 (embedding lookup)")


def tsum(a: Tensor, axis=None) -> Tensor:
    shape = a.shape

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make("sum", np.asarray(a.data.sum(axis=axis)), (a,), backward)


def mean(a: Tensor, axis=None) -> Tensor:
    shape = a.shape
    n = a.data.size if axis is None else np.prod([shape[i] for i in np.atleast_1d(axis)])

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, shape).copy(),)

    return _make("mean", np.asarray(a.data.mean(axis=axis)), (a,), backward)


def amax(a: Tensor, axis: int = -1) -> Tensor:
    axis = axis % a.ndim
    idx = np.argmax(a.data, axis=axis)
    out = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def backward(g):
        ga = np.zeros_like(a.data)
        np.put_along_axis(ga, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (ga,)

    return _make("amax", out, (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _make("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes=None) -> Tensor:
    inv = None if axes is None else tuple(np.argsort(axes))
    return _make("transpose", np.transpose(a.data, axes), (a,),
                 lambda g: (np.transpose(g, inv),))


def _is_basic(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in parts)


def getitem(a: Tensor, index) -> Tensor:
    basic = _is_basic(index)

    def backward(g):
        ga = np.zeros_like(a.data)
        if basic:
            ga[index] += g
        else:
            np.add.at(ga, index, g)
        return (ga,)

    return _make("getitem", a.data[index], (a,), backward)


def take(a: Tensor, idx, padding_idx: int | None = None) -> Tensor:
    """Gather rows ``a[idx]``; the ``padding_idx`` row never receives gradient."""
    idx = np.asarray(idx, dtype=np.intp)

    def backward(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        if padding_idx is not None:
            ga[padding_idx] = 0
        return (ga,)

    return _make("take", a.data[idx], (a,), backward)


_register("concat", "concatenation along an axis")
_register("stack", "stacking along a new axis")


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise DimensionError("concat of nothing")
    ax = axis % ts[0].ndim
    sizes = [t.shape[ax] for t in ts]
    splits = np.cumsum(sizes)[:-1]
    return _make("concat", np.concatenate([t.data for t in ts], axis=ax), ts,
                 lambda g: tuple(np.split(g, splits, axis=ax)))


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in ts], axis=axis)
    ax = axis % out.ndim
    return _make("stack", out, ts,
                 lambda g: tuple(np.take(g, i, axis=ax) for i in range(len(ts))))


_register("where", "elementwise select between two tensors by a constant mask")


def where(cond, a: Tensor, b: Tensor) -> Tensor:
    """``cond ? a : b`` elementwise; selection is exact, so masked state passes through bitwise."""
    cond = np.asarray(cond, dtype=bool)
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return _make("where", np.where(cond, a.data, b.data), (a, b),
                 lambda g: (_unbroadcast(np.where(cond, g, 0), sa),
                            _unbroadcast(np.where(cond, 0, g), sb)))


# --- nonlinearities -------------------------------------------------------------
_register("relu", "rectified linear unit")
_register("tanh", "hyperbolic tangent")
_register("sigmoid", "logistic sigmoid")


def relu(x: Tensor) -> Tensor:
    keep = x.data > 0
    return _make("relu", np.where(keep, x.data, 0).astype(x.dtype), (x,), lambda g: (g * keep,))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _make("tanh", y, (x,), lambda g: (g * (1 - y * y),))


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    # split form avoids exp overflow for large |x|
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1 / (1 + e), e / (1 + e)).astype(x.dtype)
    return _make("sigmoid", y, (x,), lambda g: (g * y * (1 - y),))


def elementwise(kind: str, x: Tensor) -> Tensor:
    try:
        fn = {"relu": relu, "tanh": tanh, "sigmoid": sigmoid}[kind]
    except KeyError:
        raise ParameterError(f"unknown elementwise kind {kind!r}") from None
    return fn(x)


_register("softmax", "masked softmax along the last axis")


def softmax(x: Tensor, mask=None) -> Tensor:
    """Softmax over the last axis; masked-out entries get exactly zero."""
    d = x.data
    if mask is None:
        m = d.max(axis=-1, keepdims=True)
        e = np.exp(d - m)
    else:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), d.shape)
        if not mask.any(axis=-1).all():
            raise ContractError("softmax: a row has every entry masked (empty support)")
        m = np.where(mask, d, -np.inf).max(axis=-1, keepdims=True)
        e = np.where(mask, np.exp(np.where(mask, d - m, 0)), 0).astype(d.dtype)
    p = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _make("softmax", p, (x,), backward)


_register("cross_entropy", "fused softmax + mean categorical cross-entropy")

PROB_FLOOR = 1e-12


def cross_entropy(logits: Tensor, labels, class_weights=None) -> Tensor:
    """Mean of -log p[true] with p = softmax(logits), p clamped at 1e-12.

    The gradient w.r.t. the logits is (p - onehot) / B, or its weighted analogue
    when ``class_weights`` is given.
    """
    d = logits.data
    if d.ndim != 2:
        raise DimensionError(f"cross_entropy expects (B, G) logits, got {d.shape}")
    labels = np.asarray(labels, dtype=np.intp)
    B, G = d.shape
    if labels.shape != (B,):
        raise DimensionError(f"cross_entropy: {B} rows but {labels.shape} labels")
    if labels.size and (labels.min() < 0 or labels.max() >= G):
        raise ParameterError(f"cross_entropy: labels must lie in [0, {G})")
    m = d.max(axis=1, keepdims=True)
    e = np.exp(d - m)
    s = e.sum(axis=1, keepdims=True)
    p = e / s
    logp = (d - m - np.log(s))[np.arange(B), labels]
    nll = -np.maximum(logp, np.log(PROB_FLOOR))
    w = np.ones(B, dtype=d.dtype) if class_weights is None else \
        np.asarray(class_weights, dtype=d.dtype)[labels]
    total = w.sum()
    loss = np.asarray((w * nll).sum() / total, dtype=d.dtype)

    def backward(g):
        gl = p.copy()
        gl[np.arange(B), labels] -= 1
        return (gl * (w / total)[:, None] * g,)

    return _make("cross_entropy", loss, (logits,), backward)


# --- convolution and pooling along time ------------------------------------------
_register("conv_time", "valid 1-D cross-correlation along the last (time) axis")
_register("maxpool_time", "sliding-window max along time")


def _batched(x: Tensor):
    if x.ndim == 2:
        return reshape(x, (1,) + x.shape), True
    return x, False


def conv_time(x: Tensor, kernels: Tensor, stride: int = 1) -> Tensor:
    """Cross-correlate ``x`` (C_in, T) or (B, C_in, T) with (C_out, C_in, k) kernels."""
    if stride < 1:
        raise ParameterError(f"conv_time: stride must be positive, got {stride}")
    xb, squeeze = _batched(as_tensor(x))
    if xb.ndim != 3 or kernels.ndim != 3 or kernels.shape[1] != xb.shape[1]:
        raise DimensionError(f"conv_time: input {x.shape} incompatible with kernels {kernels.shape}")
    B, C, T = xb.shape
    O, _, k = kernels.shape
    if k > T:
        raise DimensionError(f"conv_time: kernel length {k} exceeds input length {T}")
    Tp = (T - k) // stride + 1
    xd, wd = xb.data, kernels.data
    # (B, C, Tp, k) -> (B, Tp, C, k) -> (B*Tp, C*k)
    win = np.lib.stride_tricks.sliding_window_view(xd, k, axis=2)[:, :, ::stride, :]
    cols = np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(B * Tp, C * k)
    wmat = wd.reshape(O, C * k)
    out = (cols @ wmat.T).reshape(B, Tp, O).transpose(0, 2, 1)

    def backward(g):
        g2 = g.transpose(0, 2, 1).reshape(B * Tp, O)
        gw = (g2.T @ cols).reshape(O, C, k)
        gcols = (g2 @ wmat).reshape(B, Tp, C, k)
        gx = np.zeros_like(xd)
        stop = stride * (Tp - 1) + 1
        for j in range(k):
            gx[:, :, j:j + stop:stride] += gcols[:, :, :, j].transpose(0, 2, 1)
        return gx, gw

    y = _make("conv_time", np.ascontiguousarray(out), (xb, kernels), backward)
    return reshape(y, y.shape[1:]) if squeeze else y


def maxpool_time(x: Tensor, window: int, stride: int | None = None) -> Tensor:
    """Per-channel max over windows along the last axis; ties go to the first index."""
    stride = window if stride is None else stride
    if window < 1 or stride < 1:
        raise ParameterError("maxpool_time: window and stride must be positive")
    T = x.shape[-1]
    if window > T:
        raise DimensionError(f"maxpool_time: window {window} exceeds input length {T}")
    xd = x.data
    win = np.lib.stride_tricks.sliding_window_view(xd, window, axis=-1)[..., ::stride, :]
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    Tp = out.shape[-1]

    def backward(g):
        gx = np.zeros_like(xd)
        stop = stride * (Tp - 1) + 1
        for j in range(window):
            gx[..., j:j + stop:stride] += np.where(arg == j, g, 0)
        return (gx,)

    return _make("maxpool_time", np.ascontiguousarray(out), (x,), backward)


# --- normalization and regularization --------------------------------------------
_register("batchnorm", "batch normalization over batch (and time) per channel")
_register("dropout", "inverted dropout")

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass
class RunningStats:
    mean: np.ndarray
    var: np.ndarray
    momentum: float = BN_MOMENTUM

    @classmethod
    def fresh(cls, channels: int, dtype=np.float64) -> "RunningStats":
        return cls(np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype))


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, stats: RunningStats,
              mode: str = "train", eps: float = BN_EPS) -> Tensor:
    """Normalize (B, C, T) or (B, F) input per channel.

    Train mode uses batch statistics and updates ``stats`` in place (unbiased
    running variance); eval mode uses ``stats``.
    """
    if x.ndim not in (2, 3):
        raise DimensionError(f"batchnorm expects (B, C) or (B, C, T), got {x.shape}")
    C = x.shape[1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise DimensionError(f"batchnorm: {C} channels but gamma {gamma.shape}, beta {beta.shape}")
    axes = (0, 2) if x.ndim == 3 else (0,)
    bshape = (1, C, 1) if x.ndim == 3 else (1, C)
    xd = x.data
    if mode == "train":
        if x.shape[0] < 2:
            raise ContractError("batchnorm: train mode needs a batch of at least 2")
        mu = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        n = xd.size // C
        stats.mean[...] = (1 - stats.momentum) * stats.mean + stats.momentum * mu
        stats.var[...] = (1 - stats.momentum) * stats.var + stats.momentum * var * n / (n - 1)
    elif mode == "eval":
        mu, var = stats.mean, stats.var
    else:
        raise ParameterError(f"batchnorm: unknown mode {mode!r}")
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu.reshape(bshape)) * inv.reshape(bshape)
    gd, bd = gamma.data, beta.data
    out = (xhat * gd.reshape(bshape) + bd.reshape(bshape)).astype(xd.dtype)
    train = mode == "train"

    def backward(g):
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        gxhat = g * gd.reshape(bshape)
        if train:
            n = xd.size // C
            gx = (inv.reshape(bshape) / n) * (
                n * gxhat
                - gxhat.sum(axis=axes).reshape(bshape)
                - xhat * (gxhat * xhat).sum(axis=axes).reshape(bshape)
            )
        else:
            gx = gxhat * inv.reshape(bshape)
        return gx, ggamma, gbeta

    return _make("batchnorm", out, (x, gamma, beta), backward)


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, mode: str = "train") -> Tensor:
    if not 0 <= p < 1:
        raise ParameterError(f"dropout probability must be in [0, 1), got {p}")
    if mode == "eval" or p == 0:
        return x
    if rng is None:
        raise ParameterError("dropout in train mode needs an rng")
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1 - p)
    return _make("dropout", x.data * keep, (x,), lambda g: (g * keep,))


# --- gradient checking ---------------------------------------------------------------
def grad_check(f: Callable[[], Tensor], params: Iterable[Tensor], eps: float = 1e-5,
               n_coords: int | None = None, rng: np.random.Generator | None = None,
               skip_kinks: bool = False) -> tuple[float, dict]:
    """Compare analytic gradients of ``f()`` with central differences.

    Returns the max over checked coordinates of
    ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`` along with details of
    the worst coordinate.  ``n_coords`` caps the number of coordinates (sampled
    uniformly over all parameters without replacement) when given.

    With ``skip_kinks`` a coordinate whose +/-eps probe straddles a relu or max
    switch is excluded: its two one-sided slopes disagree while the analytic value
    agrees with one of them.  ``info["kinks"]`` counts the exclusions.
    """
    params = list(params)
    for p in params:
        p.grad = None
        p.requires_grad = True
    f().backward()
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]
    coords = [(i, j) for i, p in enumerate(params) for j in range(p.data.size)]
    if n_coords is not None and n_coords < len(coords):
        rng = rng or np.random.default_rng(0)
        pick = rng.choice(len(coords), size=n_coords, replace=False)
        coords = [coords[k] for k in np.sort(pick)]
    rel = lambda a, b: abs(a - b) / max(abs(a), abs(b), 1e-8)
    f0 = float(f().data) if skip_kinks else 0.0
    worst, info, kinks = 0.0, {}, 0
    for i, j in coords:
        flat = params[i].data.reshape(-1)
        orig = flat[j]
        flat[j] = orig + eps
        fp = float(f().data)
        flat[j] = orig - eps
        fm = float(f().data)
        flat[j] = orig
        num = (fp - fm) / (2 * eps)
        ana = float(analytic[i].reshape(-1)[j])
        err = rel(ana, num)
        if skip_kinks and err >= 1e-4:
            right, left = (fp - f0) / eps, (f0 - fm) / eps
            if rel(right, left) > 1e-2 and min(rel(ana, right), rel(ana, left)) < 1e-3:
                kinks += 1
                continue
        if err > worst or not info:
            worst = max(worst, err)
            info = {"param": i, "index": j, "analytic": ana, "numeric": num, "error": err}
    info["kinks"] = kinks
    info["checked"] = len(coords)
    for p in params:
        p.grad = None
    return worst, info
