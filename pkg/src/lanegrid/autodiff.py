"""Minimal reverse-mode automatic differentiation on dense float64 arrays.

A Tensor wraps an immutable numpy array. While a Tape is active (used as a
context manager), every op appends one record to the tape; Tape.backward
replays the records in exact reverse order and accumulates gradients into
the leaves that were created with requires_grad=True.

Scope is deliberately small: no broadcasting beyond scalar-tensor, no
higher-order derivatives, 2-D matmul only. Every forward op checks its
output for NaN/Inf and raises FloatingPointError on the first offender.
"""

from __future__ import annotations

import threading

import numpy as np

_LOCAL = threading.local()


def _active_tape():
    return getattr(_LOCAL, "tape", None)


class Tensor:
    """Immutable dense array node. Hash/equality are identity-based."""

    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise FloatingPointError(
                "non-finite value in tensor%s" % (f" '{name}'" if name else "")
            )
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single value, shape is {self.data.shape}")
        return self.data.item()

    def __repr__(self):
        tag = self.name or "tensor"
        return f"Tensor({tag}, shape={self.data.shape})"

    # convenience operators; scalars allowed, full broadcasting is not
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
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Ordered op record; recording order is the topological order."""

    def __init__(self):
        self._records = []  # (out, inputs, backward_fn)

    def __enter__(self):
        if _active_tape() is not None:
            raise RuntimeError("a Tape is already active on this thread")
        _LOCAL.tape = self
        return self

    def __exit__(self, exc_type, exc, tb):
        _LOCAL.tape = None
        return False

    def _record(self, out, inputs, backward_fn):
        self._records.append((out, inputs, backward_fn))

    def __len__(self):
        return len(self._records)

    def backward(self, loss: Tensor) -> dict[Tensor, np.ndarray]:
        """Accumulate d(loss)/d(leaf) for every requires_grad leaf.

        loss must be a scalar recorded on this tape. Returns a dict keyed
        by the leaf Tensor objects. Deterministic: identical tapes give
        bitwise-identical gradients.
        """
        if loss.data.shape != () and loss.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        holders: dict[int, Tensor] = {id(loss): loss}
        for out, inputs, backward_fn in reversed(self._records):
            g = grads.get(id(out))
            if g is None:
                continue
            for inp, contrib in zip(inputs, backward_fn(g)):
                if contrib is None:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + contrib
                else:
                    grads[key] = contrib
                    holders[key] = inp
        return {
            holders[key]: g
            for key, g in grads.items()
            if holders[key].requires_grad
        }


def _wrap(data, inputs, backward_fn):
    out = Tensor(data)
    tape = _active_tape()
    if tape is not None:
        tape._record(out, inputs, backward_fn)
    return out


def _coerce(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _binary_shapes(a: Tensor, b: Tensor, opname: str):
    """Allow equal shapes or a scalar on either side; no other broadcasting."""
    if a.data.shape == b.data.shape:
        return
    if a.data.size == 1 or b.data.size == 1:
        return
    raise ValueError(f"{opname}: shape mismatch {a.data.shape} vs {b.data.shape}")


def _reduce_to(grad: np.ndarray, shape) -> np.ndarray:
    # collapse the gradient of a scalar operand back to its 0-d/1-element shape
    if grad.shape == tuple(shape):
        return grad
    return np.sum(grad).reshape(shape)


def add(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _binary_shapes(a, b, "add")
    return _wrap(
        a.data + b.data,
        (a, b),
        lambda g: (_reduce_to(g, a.data.shape), _reduce_to(g, b.data.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _binary_shapes(a, b, "sub")
    return _wrap(
        a.data - b.data,
        (a, b),
        lambda g: (_reduce_to(g, a.data.shape), _reduce_to(-g, b.data.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _binary_shapes(a, b, "mul")
    return _wrap(
        a.data * b.data,
        (a, b),
        lambda g: (
            _reduce_to(g * b.data, a.data.shape),
            _reduce_to(g * a.data, b.data.shape),
        ),
    )


def scale(x, c: float) -> Tensor:
    x = _coerce(x)
    c = float(c)
    return _wrap(x.data * c, (x,), lambda g: (g * c,))


def sum(x, axis=None) -> Tensor:  # noqa: A001 - numpy-style name
    x = _coerce(x)
    if axis is None:
        return _wrap(
            np.sum(x.data),
            (x,),
            lambda g: (np.broadcast_to(g, x.data.shape).copy(),),
        )
    axis = int(axis)

    def backward(g, axis=axis, shape=x.data.shape):
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _wrap(np.sum(x.data, axis=axis), (x,), backward)


def mean(x) -> Tensor:
    x = _coerce(x)
    n = x.data.size
    return _wrap(
        np.mean(x.data),
        (x,),
        lambda g: (np.broadcast_to(g / n, x.data.shape).copy(),),
    )


def abs(x) -> Tensor:  # noqa: A001 - numpy-style name
    # subgradient at 0 is defined as 0 (sign(0) == 0)
    x = _coerce(x)
    return _wrap(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def relu(x) -> Tensor:
    x = _coerce(x)
    return _wrap(np.maximum(x.data, 0.0), (x,), lambda g: (g * (x.data > 0.0),))


def matmul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(
            f"matmul expects 2-D operands, got {a.data.shape} @ {b.data.shape}"
        )
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul: inner dims differ, {a.data.shape} @ {b.data.shape}")
    return _wrap(
        a.data @ b.data,
        (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g),
    )


def reshape(x, shape) -> Tensor:
    x = _coerce(x)
    shape = tuple(int(s) for s in shape)
    return _wrap(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.data.shape),))


def transpose(x, axes) -> Tensor:
    x = _coerce(x)
    axes = tuple(int(a) for a in axes)
    inverse = tuple(np.argsort(axes))
    return _wrap(
        np.transpose(x.data, axes),
        (x,),
        lambda g: (np.transpose(g, inverse),),
    )


def narrow(x, axis: int, start: int, length: int) -> Tensor:
    """Slice `length` entries along `axis` starting at `start`."""
    x = _coerce(x)
    axis, start, length = int(axis), int(start), int(length)
    if start < 0 or start + length > x.data.shape[axis]:
        raise ValueError(
            f"narrow: [{start}:{start + length}) out of bounds for axis {axis} "
            f"of shape {x.data.shape}"
        )
    index = tuple(
        slice(start, start + length) if d == axis else slice(None)
        for d in range(x.data.ndim)
    )

    def backward(g):
        full = np.zeros_like(x.data)
        full[index] = g
        return (full,)

    return _wrap(x.data[index].copy(), (x,), backward)


def softmax_lastdim(x) -> Tensor:
    x = _coerce(x)
    shifted = x.data - np.max(x.data, axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=-1, keepdims=True)

    def backward(g):
        dot = np.sum(g * y, axis=-1, keepdims=True)
        return (y * (g - dot),)

    return _wrap(y, (x,), backward)


def log_softmax_lastdim(x) -> Tensor:
    x = _coerce(x)
    shifted = x.data - np.max(x.data, axis=-1, keepdims=True)
    logz = np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))
    y = shifted - logz
    soft = np.exp(y)

    def backward(g):
        return (g - soft * np.sum(g, axis=-1, keepdims=True),)

    return _wrap(y, (x,), backward)


def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D convolution, channels-first single image.

    x: (Cin, H, W); weight: (Cout, Cin, kh, kw); bias: (Cout,) or None.
    Implemented by im2col so forward and backward are plain matmuls.
    """
    x, weight = _coerce(x), _coerce(weight)
    if bias is not None:
        bias = _coerce(bias)
    if x.data.ndim != 3 or weight.data.ndim != 4:
        raise ValueError(
            f"conv2d expects x (Cin,H,W) and weight (Cout,Cin,kh,kw), "
            f"got {x.data.shape} and {weight.data.shape}"
        )
    cin, h, w = x.data.shape
    cout, cin_w, kh, kw = weight.data.shape
    if cin != cin_w:
        raise ValueError(f"conv2d: input channels {cin} != weight channels {cin_w}")
    if bias is not None and bias.data.shape != (cout,):
        raise ValueError(f"conv2d: bias shape {bias.data.shape} != ({cout},)")
    s, p = int(stride), int(padding)
    hp, wp = h + 2 * p, w + 2 * p
    if hp < kh or wp < kw:
        raise ValueError("conv2d: kernel larger than padded input")
    ho = (hp - kh) // s + 1
    wo = (wp - kw) // s + 1

    xp = np.pad(x.data, ((0, 0), (p, p), (p, p))) if p else x.data
    # (Cin, ho, wo, kh, kw) -> (Cin*kh*kw, ho*wo)
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    windows = windows[:, ::s, ::s]
    cols = windows.transpose(0, 3, 4, 1, 2).reshape(cin * kh * kw, ho * wo)
    wmat = weight.data.reshape(cout, cin * kh * kw)
    out = (wmat @ cols).reshape(cout, ho, wo)
    if bias is not None:
        out = out + bias.data[:, None, None]

    def backward(g):
        gflat = g.reshape(cout, ho * wo)
        gw = (gflat @ cols.T).reshape(weight.data.shape)
        gcols = (wmat.T @ gflat).reshape(cin, kh, kw, ho, wo)
        gxp = np.zeros((cin, hp, wp))
        for di in range(kh):
            for dj in range(kw):
                gxp[:, di : di + ho * s : s, dj : dj + wo * s : s] += gcols[:, di, dj]
        gx = gxp[:, p : p + h, p : p + w] if p else gxp
        if bias is None:
            return (gx, gw)
        return (gx, gw, g.sum(axis=(1, 2)))

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _wrap(out, inputs, backward)


def upsample_nearest(x, factor: int) -> Tensor:
    """Nearest-neighbour upsampling of (C, H, W) by an integer factor."""
    x = _coerce(x)
    if x.data.ndim != 3:
        raise ValueError(f"upsample_nearest expects (C,H,W), got {x.data.shape}")
    f = int(factor)
    if f < 1:
        raise ValueError("upsample factor must be >= 1")
    c, h, w = x.data.shape
    out = np.repeat(np.repeat(x.data, f, axis=1), f, axis=2)

    def backward(g):
        return (g.reshape(c, h, f, w, f).sum(axis=(2, 4)),)

    return _wrap(out, (x,), backward)


def grad_check(f, x: Tensor, epsilon: float = 1e-4, rel_floor: float = 1.0) -> float:
    """Max relative error of d f(x)/dx against central finite differences.

    Relative error per element is |analytic - numeric| divided by
    max(|analytic|, |numeric|, rel_floor), so near-zero gradients are
    compared absolutely. Keep x away from |x| < 1e-2 for abs/relu kinks.
    """
    probe = Tensor(x.data.copy(), requires_grad=True)
    with Tape() as tape:
        out = f(probe)
    analytic = tape.backward(out).get(probe)
    if analytic is None:
        analytic = np.zeros_like(probe.data)

    numeric = np.zeros_like(probe.data)
    flat = probe.data.reshape(-1)
    nflat = numeric.reshape(-1)
    for i in range(flat.size):
        saved = flat[i]
        bumped = flat.copy()
        bumped[i] = saved + epsilon
        hi = f(Tensor(bumped.reshape(probe.data.shape))).item()
        bumped[i] = saved - epsilon
        lo = f(Tensor(bumped.reshape(probe.data.shape))).item()
        nflat[i] = (hi - lo) / (2.0 * epsilon)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), rel_floor)
    return float(np.max(np.abs(analytic - numeric) / denom))
