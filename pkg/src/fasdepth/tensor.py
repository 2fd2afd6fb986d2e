"""Dense float64 tensors with tape-based reverse-mode gradients.

Only the operators the depth network needs are provided. Every op works on
immutable :class:`Tensor` values; when a :class:`GradTape` is active and one
of the inputs is being tracked, the op appends a record to the tape so that
:func:`backward` can replay it in reverse.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

NORM_EPS = 1e-5


class TapeError(RuntimeError):
    pass


class Tensor:
    """Immutable float64 array.

    Construction from user data rejects NaN/Inf. Ops build their results
    through :func:`_wrap`, which skips the check.
    """

    __slots__ = ("data", "name", "__weakref__")

    def __init__(self, data, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"non-finite values in tensor {name or ''}".rstrip())
        arr.flags.writeable = False
        self.data = arr
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape})"

    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else add_const(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else add_const(self, -other)

    def __rsub__(self, other):
        return add_const(scale(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _wrap(arr: np.ndarray) -> Tensor:
    t = Tensor.__new__(Tensor)
    arr = np.asarray(arr, dtype=np.float64)
    arr.flags.writeable = False
    t.data = arr
    t.name = None
    return t


# --------------------------------------------------------------------------
# tape


class _Record:
    __slots__ = ("op", "out", "inputs", "backward")

    def __init__(self, op, out, inputs, backward):
        self.op = op
        self.out = out
        self.inputs = inputs
        self.backward = backward


_ACTIVE: list["GradTape"] = []


class GradTape:
    """Ordered log of executed ops, used as a context manager.

    >>> with GradTape() as tape:
    ...     tape.watch(w)
    ...     loss = sum_all(w * x)
    >>> grads = backward(tape, loss)
    """

    def __init__(self):
        self.records: list[_Record] = []
        self.watched: list[Tensor] = []
        self._tracked: set[int] = set()
        self.consumed = False

    def watch(self, *tensors: Tensor) -> None:
        for t in tensors:
            if id(t) not in self._tracked:
                self._tracked.add(id(t))
                self.watched.append(t)

    def is_tracked(self, t: Tensor) -> bool:
        return id(t) in self._tracked

    def __enter__(self) -> "GradTape":
        if self.consumed:
            raise TapeError("tape already consumed")
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def _record(self, op: str, out: Tensor, inputs: tuple, backward_fn: Callable) -> None:
        self._tracked.add(id(out))
        self.records.append(_Record(op, out, inputs, backward_fn))


def _emit(op: str, out: np.ndarray, inputs: tuple, backward_fn: Callable) -> Tensor:
    result = _wrap(out)
    if _ACTIVE:
        tape = _ACTIVE[-1]
        if any(tape.is_tracked(t) for t in inputs):
            tape._record(op, result, inputs, backward_fn)
    return result


def backward(tape: GradTape, loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Reverse-replay ``tape`` from scalar ``loss``.

    Returns a gradient array for every watched tensor; tensors the loss does
    not depend on get exact zeros. A tape can be replayed only once.
    """
    if tape.consumed:
        raise TapeError("tape already consumed")
    if loss.data.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.shape}")
    tape.consumed = True
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for rec in reversed(tape.records):
        g = grads.pop(id(rec.out), None)
        if g is None:
            continue
        for inp, gi in zip(rec.inputs, rec.backward(g)):
            if gi is None or not tape.is_tracked(inp):
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
    out = {p: grads.get(id(p), np.zeros_like(p.data)) for p in tape.watched}
    tape.records.clear()
    return out


def value_and_grad(fn: Callable[..., Tensor], params: Sequence[Tensor]):
    """Evaluate ``fn(*params)`` under a fresh tape; return (loss, grads list)."""
    with GradTape() as tape:
        tape.watch(*params)
        loss = fn(*params)
    g = backward(tape, loss)
    return loss.item(), [g[p] for p in params]


# --------------------------------------------------------------------------
# elementwise


def _check_same(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "add")
    return _emit("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "sub")
    return _emit("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "mul")
    return _emit("mul", a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _emit("scale", a.data * c, (a,), lambda g: (g * c,))


def add_const(a: Tensor, c: float) -> Tensor:
    return _emit("add_const", a.data + float(c), (a,), lambda g: (g,))


def square(a: Tensor) -> Tensor:
    return _emit("square", a.data * a.data, (a,), lambda g: (2.0 * a.data * g,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _emit("relu", np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    # split by sign so exp never overflows
    x = a.data
    e = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _emit("sigmoid", s, (a,), lambda g: (g * s * (1.0 - s),))


def tanh_op(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    return _emit("tanh", t, (a,), lambda g: (g * (1.0 - t * t),))


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise ValueError("log of non-positive value")
    return _emit("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data >= lo) & (a.data <= hi)
    return _emit("clip", np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


# --------------------------------------------------------------------------
# reductions and reshaping


def sum_all(a: Tensor) -> Tensor:
    return _emit("sum", np.array(a.data.sum()), (a,), lambda g: (np.full(a.shape, float(g)),))


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    return _emit("mean", np.array(a.data.mean()), (a,), lambda g: (np.full(a.shape, float(g) / n),))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    return _emit("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def take(a: Tensor, index) -> Tensor:
    """Basic indexing (ints and slices); gradient scatters back."""

    def bw(g):
        full = np.zeros(a.shape)
        full[index] = g
        return (full,)

    return _emit("take", np.array(a.data[index]), (a,), bw)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = tuple(tensors)
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors))
        )

    return _emit("concat", np.concatenate([t.data for t in tensors], axis=axis), tensors, bw)


def mean_of(tensors: Sequence[Tensor]) -> Tensor:
    """Elementwise mean of equally shaped tensors."""
    tensors = tuple(tensors)
    if not tensors:
        raise ValueError("mean_of: empty sequence")
    for t in tensors[1:]:
        _check_same(tensors[0], t, "mean_of")
    n = len(tensors)
    out = np.mean(np.stack([t.data for t in tensors]), axis=0)
    return _emit("mean_of", out, tensors, lambda g: tuple(g / n for _ in range(n)))


# --------------------------------------------------------------------------
# dense layers


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x (N, K) @ w (K, M) + b (M,)."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ValueError(f"linear: shape mismatch {x.shape} vs {w.shape}")
    out = x.data @ w.data
    inputs: tuple = (x, w)
    if b is not None:
        if b.shape != (w.shape[1],):
            raise ValueError(f"linear: bias shape {b.shape} vs {(w.shape[1],)}")
        out = out + b.data
        inputs = (x, w, b)

    def bw(g):
        grads = (g @ w.data.T, x.data.T @ g)
        return grads + ((g.sum(axis=0),) if b is not None else ())

    return _emit("linear", out, inputs, bw)


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis."""
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _emit("softmax", p, (a,), bw)


# --------------------------------------------------------------------------
# convolutions


def _check_rank4(x: Tensor, op: str) -> None:
    if x.ndim != 4:
        raise ValueError(f"{op}: expected (batch, channels, height, width), got shape {x.shape}")


def _same_pads(size: int, k: int, stride: int) -> tuple[int, int, int]:
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    return out, total // 2, total - total // 2


def conv2d(
    x: Tensor,
    w: Tensor,
    b: Tensor | None = None,
    stride: int = 1,
    padding: str = "same",
) -> Tensor:
    """Cross-correlation of ``x`` (B, C, H, W) with ``w`` (O, C, kh, kw).

    ``same`` pads with zeros so the output is ceil(H/stride) by
    ceil(W/stride); ``valid`` does not pad.
    """
    _check_rank4(x, "conv2d")
    if w.ndim != 4:
        raise ValueError(f"conv2d: kernels must be (out, in, kh, kw), got shape {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ValueError(f"conv2d: input shape {x.shape} does not match kernel shape {w.shape}")
    if stride < 1:
        raise ValueError(f"conv2d: stride must be >= 1, got {stride}")
    if not np.all(np.isfinite(x.data)):
        raise ValueError("conv2d: non-finite input")
    B, C, H, W = x.shape
    O, _, kh, kw = w.shape
    if padding == "same":
        if kh % 2 == 0 or kw % 2 == 0:
            raise ValueError(f"conv2d: same padding needs odd kernel, got {kh}x{kw}")
        Ho, pt, pb = _same_pads(H, kh, stride)
        Wo, pl, pr = _same_pads(W, kw, stride)
    elif padding == "valid":
        if H < kh or W < kw:
            raise ValueError(f"conv2d: input shape {x.shape} smaller than kernel shape {w.shape}")
        Ho, Wo = (H - kh) // stride + 1, (W - kw) // stride + 1
        pt = pb = pl = pr = 0
    else:
        raise ValueError(f"conv2d: unknown padding {padding!r}")
    if b is not None and b.shape != (O,):
        raise ValueError(f"conv2d: bias shape {b.shape} vs {(O,)}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pb), (pl, pr))) if pt + pb + pl + pr else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, : (Ho - 1) * stride + 1 : stride,
                                                         : (Wo - 1) * stride + 1 : stride]
    # win: (B, C, Ho, Wo, kh, kw)
    out = np.tensordot(win, w.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if b is not None:
        out = out + b.data[None, :, None, None]
    inputs = (x, w) if b is None else (x, w, b)

    def bw(g):
        gw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
        cols = np.tensordot(g, w.data, axes=([1], [0]))  # (B, Ho, Wo, C, kh, kw)
        gxp = np.zeros(xp.shape)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i : i + (Ho - 1) * stride + 1 : stride,
                    j : j + (Wo - 1) * stride + 1 : stride] += cols[..., i, j].transpose(0, 3, 1, 2)
        gx = gxp[:, :, pt : pt + H, pl : pl + W]
        grads = (gx, gw)
        return grads + ((g.sum(axis=(0, 2, 3)),) if b is not None else ())

    return _emit("conv2d", out, inputs, bw)


def depthwise_conv3x3(x: Tensor, kernel, padding: str = "replicate") -> Tensor:
    """Per-channel 3x3 cross-correlation, output shape equal to input shape.

    ``kernel`` is a 3x3 mask shared by all channels or a (C, 3, 3) stack; it
    may be a Tensor (then it receives gradients) or a plain array.
    ``padding`` is ``replicate`` (edge values repeated) or ``zeros``.
    """
    _check_rank4(x, "depthwise_conv3x3")
    k_is_tensor = isinstance(kernel, Tensor)
    k = kernel.data if k_is_tensor else np.asarray(kernel, dtype=np.float64)
    C = x.shape[1]
    if k.shape == (3, 3):
        kk = np.broadcast_to(k, (C, 3, 3))
    elif k.shape == (C, 3, 3):
        kk = k
    else:
        raise ValueError(f"depthwise_conv3x3: kernel must be 3x3 or ({C}, 3, 3), got {k.shape}")
    if padding == "replicate":
        xp = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="edge")
    elif padding == "zeros":
        xp = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1)))
    else:
        raise ValueError(f"depthwise_conv3x3: unknown padding {padding!r}")
    H, W = x.shape[2:]
    # accumulate differences from the centre tap so zero-sum masks give exact
    # zeros on flat regions
    centre = xp[:, :, 1 : 1 + H, 1 : 1 + W]
    out = kk.sum(axis=(1, 2))[None, :, None, None] * centre
    for i in range(3):
        for j in range(3):
            if (i, j) != (1, 1):
                out = out + kk[None, :, i, j, None, None] * (xp[:, :, i : i + H, j : j + W] - centre)

    def bw(g):
        gxp = np.zeros(xp.shape)
        for i in range(3):
            for j in range(3):
                gxp[:, :, i : i + H, j : j + W] += kk[None, :, i, j, None, None] * g
        if padding == "replicate":
            gxp[:, :, 1, :] += gxp[:, :, 0, :]
            gxp[:, :, -2, :] += gxp[:, :, -1, :]
            gxp = gxp[:, :, 1:-1, :]
            gxp[:, :, :, 1] += gxp[:, :, :, 0]
            gxp[:, :, :, -2] += gxp[:, :, :, -1]
            gx = gxp[:, :, :, 1:-1]
        else:
            gx = gxp[:, :, 1:-1, 1:-1]
        if not k_is_tensor:
            return (gx,)
        gk = np.empty((C, 3, 3))
        for i in range(3):
            for j in range(3):
                gk[:, i, j] = (g * xp[:, :, i : i + H, j : j + W]).sum(axis=(0, 2, 3))
        return (gx, gk.sum(axis=0) if k.shape == (3, 3) else gk)

    inputs = (x, kernel) if k_is_tensor else (x,)
    return _emit("depthwise_conv3x3", out, inputs, bw)


def max_pool2x2(x: Tensor) -> Tensor:
    """Non-overlapping 2x2 max pooling; odd trailing rows/cols are dropped."""
    _check_rank4(x, "max_pool2x2")
    B, C, H, W = x.shape
    if H < 2 or W < 2:
        raise ValueError(f"max_pool2x2: spatial dims must be >= 2, got {H}x{W}")
    Ho, Wo = H // 2, W // 2
    blocks = x.data[:, :, : 2 * Ho, : 2 * Wo].reshape(B, C, Ho, 2, Wo, 2)
    blocks = blocks.transpose(0, 1, 2, 4, 3, 5).reshape(B, C, Ho, Wo, 4)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def bw(g):
        routed = np.zeros((B, C, Ho, Wo, 4))
        np.put_along_axis(routed, arg[..., None], g[..., None], axis=-1)
        routed = routed.reshape(B, C, Ho, Wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, 2 * Ho, 2 * Wo)
        gx = np.zeros(x.shape)
        gx[:, :, : 2 * Ho, : 2 * Wo] = routed
        return (gx,)

    return _emit("max_pool2x2", out, (x,), bw)


def normalize_channels(x: Tensor, scale_: Tensor, shift: Tensor, eps: float = NORM_EPS) -> Tensor:
    """Per-channel standardization over (batch, height, width), then scale/shift.

    Statistics come from the current input on every call; there are no
    running averages.
    """
    _check_rank4(x, "normalize_channels")
    C = x.shape[1]
    if scale_.shape != (C,) or shift.shape != (C,):
        raise ValueError(f"normalize_channels: scale/shift must have shape ({C},)")
    mu = x.data.mean(axis=(0, 2, 3), keepdims=True)
    var = x.data.var(axis=(0, 2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = xhat * scale_.data[None, :, None, None] + shift.data[None, :, None, None]
    n = x.data.size // C

    def bw(g):
        dxhat = g * scale_.data[None, :, None, None]
        s1 = dxhat.sum(axis=(0, 2, 3), keepdims=True)
        s2 = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
        gx = inv * (dxhat - s1 / n - xhat * s2 / n)
        return (gx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3)))

    return _emit("normalize_channels", out, (x, scale_, shift), bw)


# --------------------------------------------------------------------------
# parameter helpers


def init_conv(rng: np.random.Generator, out_ch: int, in_ch: int, kh: int, kw: int) -> np.ndarray:
    """Uniform in [-s, s] with s = sqrt(1 / fan_in)."""
    s = math.sqrt(1.0 / (in_ch * kh * kw))
    return rng.uniform(-s, s, size=(out_ch, in_ch, kh, kw))


def init_dense(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    s = math.sqrt(1.0 / fan_in)
    return rng.uniform(-s, s, size=(fan_in, fan_out))


def numerical_grad(fn: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central finite differences of scalar ``fn`` at ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn(x)
        flat[i] = orig - h
        fm = fn(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2 * h)
    return g


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| scaled by the largest numeric magnitude (floored at 1e-8)."""
    denom = max(float(np.max(np.abs(numeric))), 1e-8)
    return float(np.max(np.abs(np.asarray(analytic) - np.asarray(numeric)))) / denom


def params_digest(params: Iterable[tuple[str, np.ndarray]]) -> str:
    import hashlib

    h = hashlib.sha256()
    for name, arr in params:
        h.update(name.encode())
        h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return h.hexdigest()
