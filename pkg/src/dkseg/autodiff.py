"""Dense tensors with reverse-mode differentiation over a recorded tape.

Every operation is a plain function taking and returning :class:`Tensor`.
While a :class:`Tape` is active, operations whose inputs were produced on
that tape append a node holding a closure that maps the output gradient to
the input gradients. ``Tape.backward`` walks the nodes once in reverse.

Storage is 32-bit by default; reductions accumulate in 64-bit. The
:func:`precision` context switches storage to float64, which the gradient
checker uses so that finite differences are meaningful.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_active_tape: "Tape | None" = None
_dtype: type = np.float32
_relu_patterns: list | None = None
_relu_replay: Iterator[np.ndarray] | None = None


class NonFiniteError(FloatingPointError):
    """Raised when an operation produces NaN or Inf from its inputs."""


class TapeError(RuntimeError):
    pass


@contextlib.contextmanager
def precision(dtype) -> Iterator[None]:
    """Temporarily change the storage dtype of newly created tensors."""
    global _dtype
    prev = _dtype
    _dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _dtype = prev


def default_dtype() -> type:
    return _dtype


@contextlib.contextmanager
def replay_relu_patterns(masks: Sequence[np.ndarray]) -> Iterator[None]:
    """Make successive relu calls use ``masks`` instead of their own sign test.

    Evaluates the linear piece that produced ``masks`` even when inputs move
    across a kink; used by finite-difference checks.
    """
    global _relu_replay
    prev = _relu_replay
    _relu_replay = iter(masks)
    try:
        yield
    finally:
        _relu_replay = prev


@contextlib.contextmanager
def record_relu_patterns() -> Iterator[list]:
    """Collect the active/inactive mask of every relu evaluated inside the block."""
    global _relu_patterns
    prev = _relu_patterns
    _relu_patterns = []
    try:
        yield _relu_patterns
    finally:
        _relu_patterns = prev


class Tensor:
    __slots__ = ("data", "tape", "node")

    def __init__(self, data, *, tape: "Tape | None" = None, node: int | None = None):
        arr = np.asarray(data, dtype=_dtype)
        self.data = arr
        self.tape = tape
        self.node = node

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def grad_id(self) -> int | None:
        return self.node if self.tracked else None

    @property
    def tracked(self) -> bool:
        return self.tape is not None and self.tape is _active_tape

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, tracked={self.tracked})"

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

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


GradFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class _Node:
    __slots__ = ("inputs", "backward", "name")

    def __init__(self, inputs: tuple[int | None, ...], backward: GradFn | None, name: str):
        self.inputs = inputs
        self.backward = backward
        self.name = name


class Tape:
    """Ordered record of operations plus a registry of trainable leaves.

    Use as a context manager; only one tape is active at a time::

        with Tape() as tape:
            w = tape.watch("w", w_array)
            loss = ad.sum(w * x)
        grads = tape.backward(loss)
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.params: dict[str, int] = {}
        self._shapes: dict[str, tuple[int, ...]] = {}
        self._done = False
        self._prev: Tape | None = None

    def __enter__(self) -> "Tape":
        global _active_tape
        self._prev = _active_tape
        _active_tape = self
        return self

    def __exit__(self, *exc) -> None:
        global _active_tape
        _active_tape = self._prev

    def watch(self, name: str, value) -> Tensor:
        if name in self.params:
            raise TapeError(f"parameter {name!r} registered twice")
        t = Tensor(value.data if isinstance(value, Tensor) else value)
        self.nodes.append(_Node((), None, "leaf:" + name))
        self.params[name] = len(self.nodes) - 1
        self._shapes[name] = t.shape
        t.tape, t.node = self, len(self.nodes) - 1
        return t

    def watch_all(self, params: dict[str, np.ndarray]) -> dict[str, Tensor]:
        return {k: self.watch(k, v) for k, v in params.items()}

    def _record(self, name: str, inputs: Sequence[Tensor], out: np.ndarray, fn: GradFn) -> Tensor:
        t = Tensor(out)
        t.tape, t.node = self, len(self.nodes)
        ids = tuple(x.node if x.tape is self else None for x in inputs)
        self.nodes.append(_Node(ids, fn, name))
        return t

    def backward(self, loss: Tensor) -> dict[str, np.ndarray]:
        """Gradients of a scalar ``loss`` for every watched parameter.

        Parameters that did not influence the loss get zero arrays.
        """
        if self._done:
            raise TapeError("backward already called on this tape")
        if loss.tape is not self or loss.node is None:
            raise TapeError("loss was not recorded on this tape")
        if loss.data.size != 1:
            raise TapeError(f"loss must be scalar, got shape {loss.shape}")
        self._done = True
        keep = set(self.params.values())
        grads: list[np.ndarray | None] = [None] * len(self.nodes)
        grads[loss.node] = np.ones_like(loss.data)
        for i in range(loss.node, -1, -1):
            g = grads[i]
            node = self.nodes[i]
            if g is None or node.backward is None:
                continue
            for src, gi in zip(node.inputs, node.backward(g)):
                if src is None or gi is None:
                    continue
                grads[src] = gi if grads[src] is None else grads[src] + gi
            if i not in keep:
                grads[i] = None
        out = {}
        for name, idx in self.params.items():
            g = grads[idx]
            if g is None:
                g = np.zeros(self._shapes[name], dtype=_dtype)
            out[name] = np.asarray(g, dtype=_dtype)
        return out


def backward(loss: Tensor) -> dict[str, np.ndarray]:
    """Run the backward pass on the tape that recorded ``loss``."""
    if loss.tape is None:
        raise TapeError("loss is not attached to a tape")
    return loss.tape.backward(loss)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _finish(name: str, inputs: Sequence[Tensor], out: np.ndarray, fn: GradFn) -> Tensor:
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(f"{name} produced non-finite values")
    out = out.astype(_dtype, copy=False)
    tape = _active_tape
    if tape is not None and any(x.tape is tape for x in inputs):
        return tape._record(name, inputs, out, fn)
    return Tensor(out)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# elementwise

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.shape, b.shape
    return _finish("add", (a, b), a.data + b.data,
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.shape, b.shape
    return _finish("sub", (a, b), a.data - b.data,
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    """Elementwise product with numpy broadcasting (e.g. [N,1,H,W] * [N,C,H,W])."""
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data
    return _finish("mul", (a, b), ad * bd,
                   lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = ad / bd  # non-finite results are reported by _finish
    return _finish("div", (a, b), out,
                   lambda g: (_unbroadcast(g / bd, ad.shape),
                              _unbroadcast(-g * out / bd, bd.shape)))


def scale(x: Tensor, s: float) -> Tensor:
    s = float(s)
    return _finish("scale", (x,), x.data * s, lambda g: (g * s,))


def relu(x: Tensor) -> Tensor:
    mask = next(_relu_replay) if _relu_replay is not None else x.data > 0
    if mask.shape != x.shape:
        raise ValueError("replayed relu mask does not match input shape")
    if _relu_patterns is not None:
        _relu_patterns.append(mask)
    return _finish("relu", (x,), np.where(mask, x.data, 0), lambda g: (g * mask,))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _open_sigmoid(z: np.ndarray) -> np.ndarray:
    """Logistic in float64, kept strictly inside (0, 1) at the storage precision.

    Plain float32 evaluation returns exactly 0 or 1 once |z| passes ~17;
    those values are nudged to the nearest representable interior point.
    """
    z = z.astype(np.float64)
    e = np.exp(-np.abs(z))
    s = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    info = np.finfo(_dtype)
    return np.clip(s, info.tiny, 1.0 - info.epsneg)


def sigmoid(x: Tensor) -> Tensor:
    s = _open_sigmoid(x.data)
    return _finish("sigmoid", (x,), s, lambda g: (g * s * (1.0 - s),))


def bce_with_logits(logits: Tensor, target) -> Tensor:
    """Per-element binary cross-entropy in the stable logit form.

    ``target`` is treated as a constant.
    """
    z = logits.data
    t = _as_tensor(target).data
    out = np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))
    return _finish("bce_with_logits", (logits,), out, lambda g: (g * (_sigmoid(z) - t),))


# reductions and shape ops

def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = x.shape
    out = np.sum(x.data, axis=axis, dtype=np.float64, keepdims=keepdims)

    def grad(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).astype(_dtype),)

    return _finish("sum", (x,), np.asarray(out), grad)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = x.shape
    out = np.mean(x.data, axis=axis, dtype=np.float64, keepdims=keepdims)
    count = x.data.size // max(np.asarray(out).size, 1)

    def grad(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, shape).astype(_dtype),)

    return _finish("mean", (x,), np.asarray(out), grad)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return _finish("reshape", (x,), x.data.reshape(shape), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _finish("transpose", (x,), x.data.transpose(axes), lambda g: (g.transpose(inv),))


def swap_last(x: Tensor) -> Tensor:
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, axes)


def stack(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [_as_tensor(x) for x in xs]
    out = np.stack([x.data for x in xs], axis=axis)

    def grad(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(xs)))

    return _finish("stack", xs, out, grad)


# linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; leading dimensions broadcast as in ``np.matmul``."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul needs operands with at least 2 dimensions")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def grad(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _finish("matmul", (a, b), ad @ bd, grad)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` with ``w`` stored as [in, out]."""
    if x.shape[-1] != w.shape[0]:
        raise ValueError(f"linear expects last dim {w.shape[0]}, got {x.shape}")
    y = matmul(x, w)
    return y if b is None else add(y, b)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z.astype(np.float64))
    s = e / e.sum(axis=axis, keepdims=True)

    def grad(g):
        return (s * (g - np.sum(g * s, axis=axis, keepdims=True)),)

    return _finish("softmax", (x,), s, grad)


def softmax_rows(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise ValueError("softmax_rows expects a 2-D tensor")
    return softmax(x, axis=-1)


# convolution and resampling

def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError(f"conv2d expects 4-D input and weight, got {x.shape}, {w.shape}")
    n, c, h, wd = x.shape
    o, ci, kh, kw = w.shape
    if ci != c:
        raise ValueError(f"conv2d channel mismatch: input {c}, weight {ci}")
    if b is not None and b.shape != (o,):
        raise ValueError(f"conv2d bias must have shape ({o},), got {b.shape}")
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError("conv2d output would be empty")
    xd = x.data
    xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xd
    if kh == kw == 1 and stride == 1:
        cols = xp.transpose(0, 2, 3, 1).reshape(-1, c)
    else:
        win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    wmat = w.data.reshape(o, -1)
    out = (cols @ wmat.T).reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
    if b is not None:
        out = out + b.data.reshape(1, o, 1, 1)
    out = np.ascontiguousarray(out)
    xshape, pshape, wshape = xd.shape, xp.shape, w.data.shape

    def grad(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, o)
        gw = (g2.T @ cols).reshape(wshape)
        gb = g.sum(axis=(0, 2, 3), dtype=np.float64) if b is not None else None
        gcols = (g2 @ wmat).reshape(n, ho, wo, c, kh, kw)
        gxp = np.zeros(pshape, dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += \
                    gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        gx = gxp[:, :, pad:pad + xshape[2], pad:pad + xshape[3]] if pad else gxp
        return gx, gw, gb

    inputs = (x, w) if b is None else (x, w, b)
    return _finish("conv2d", inputs, out, grad)


def global_avg_pool(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise ValueError(f"global_avg_pool expects [N,C,H,W], got {x.shape}")
    return mean(x, axis=(2, 3))


def interp_taps(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Source indices ``i0``, ``i1`` and weights ``t`` for each output position
    (half-pixel centres, clamped at the borders)."""
    src = np.maximum((np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5, 0.0)
    i0 = np.minimum(np.floor(src).astype(np.int64), n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic [n_out, n_in] linear interpolation matrix."""
    i0, i1, t = interp_taps(n_in, n_out)
    m = np.zeros((n_out, n_in))
    np.add.at(m, (np.arange(n_out), i0), 1.0 - t)
    np.add.at(m, (np.arange(n_out), i1), t)
    return m


def resample(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable bilinear resize of the last two axes.

    Evaluated as ``x0 + t * (x1 - x0)`` so constant regions stay exactly
    constant in any precision.
    """
    dtype = arr.dtype
    i0, i1, t = interp_taps(arr.shape[-2], out_h)
    a, b = arr[..., i0, :], arr[..., i1, :]
    arr = a + t.astype(dtype)[:, None] * (b - a)
    i0, i1, t = interp_taps(arr.shape[-1], out_w)
    a, b = arr[..., i0], arr[..., i1]
    return a + t.astype(dtype) * (b - a)


def resize_bilinear(x: Tensor, out_h: int, out_w: int) -> Tensor:
    if x.ndim != 4:
        raise ValueError(f"resize_bilinear expects [N,C,H,W], got {x.shape}")
    h, w = x.shape[2:]
    ah = interp_matrix(h, out_h).astype(_dtype)
    aw = interp_matrix(w, out_w).astype(_dtype)
    return _finish("resize_bilinear", (x,), resample(x.data, out_h, out_w), lambda g: (ah.T @ g @ aw,))


def upsample_bilinear(x: Tensor, factor: int) -> Tensor:
    if factor < 1:
        raise ValueError("upsample factor must be >= 1")
    if factor == 1:
        return x
    h, w = x.shape[2:]
    return resize_bilinear(x, h * factor, w * factor)


def split(x: Tensor, sections: int, axis: int = -1) -> list[Tensor]:
    """Split into ``sections`` equal parts along ``axis``."""
    size = x.shape[axis]
    if size % sections:
        raise ValueError(f"cannot split axis of size {size} into {sections}")
    step = size // sections
    ax = axis % x.ndim
    shape = x.shape
    outs = []
    for k in range(sections):
        idx = [slice(None)] * x.ndim
        idx[ax] = slice(k * step, (k + 1) * step)
        idx = tuple(idx)

        def grad(g, idx=idx):
            full = np.zeros(shape, dtype=g.dtype)
            full[idx] = g
            return (full,)

        outs.append(_finish("split", (x,), x.data[idx], grad))
    return outs
