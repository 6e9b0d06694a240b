"""Small dense-tensor engine with tape-based reverse-mode differentiation.

Tensors wrap numpy arrays. Operations on tensors are recorded on the active
:class:`GradTape` (if any) so that :meth:`GradTape.gradient` can replay them
backwards. Broadcasting is restricted to scalars and trailing-suffix shapes
(bias-add), which is all the model needs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.special import erf

_ACTIVE_TAPES: list["GradTape"] = []


class ShapeError(ValueError):
    pass


class NumericalError(FloatingPointError):
    pass


class Tensor:
    """A dense row-major array plus a flag saying whether gradients are wanted."""

    __slots__ = ("data", "requires_grad", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name

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

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

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
        if isinstance(other, Tensor):
            raise TypeError("division is only defined by a python scalar")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes or None)

    @property
    def T(self):
        return swap_last(self)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean_all(self)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


@dataclass
class _Node:
    out: Tensor
    inputs: tuple[Tensor, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class GradTape:
    """Records primitive ops while active; replays them backwards on demand.

    >>> x = Tensor(3.0, requires_grad=True)
    >>> with GradTape() as tape:
    ...     y = x * x
    >>> float(tape.gradient(y, [x])[0])
    6.0
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self):
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE_TAPES.remove(self)
        return False

    def record(self, node: _Node):
        self.nodes.append(node)

    def gradient(self, loss: Tensor, sources: Iterable[Tensor]) -> list[np.ndarray]:
        """Gradients of scalar ``loss`` w.r.t. each tensor in ``sources``.

        Sources never touched by the recorded computation get a zero gradient.
        """
        sources = list(sources)
        if loss.size != 1:
            raise ShapeError(f"gradient needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            for inp, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        return [grads.get(id(s), np.zeros_like(s.data)) for s in sources]


def _needs_grad(*tensors: Tensor) -> bool:
    return bool(_ACTIVE_TAPES) and any(t.requires_grad for t in tensors)


def _make(data: np.ndarray, inputs: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if _needs_grad(*inputs):
        out.requires_grad = True
        node = _Node(out, inputs, backward)
        for tape in _ACTIVE_TAPES:
            tape.record(node)
    return out


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    if not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    return a, b


def _check_suffix(a: tuple, b: tuple, op: str):
    small, big = (a, b) if len(a) <= len(b) else (b, a)
    if small == () or big[len(big) - len(small):] == small:
        return big
    raise ShapeError(f"{op}: shapes {a} and {b} differ beyond scalar/suffix broadcasting")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    g = g.sum(axis=tuple(range(lead))) if lead else g
    return g.reshape(shape)


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_suffix(a.shape, b.shape, "add")
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_suffix(a.shape, b.shape, "sub")
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_suffix(a.shape, b.shape, "mul")
    ad, bd = a.data, b.data

    def backward(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _make(ad * bd, (a, b), backward)


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd / math.sqrt(2.0)))
    pdf = np.exp(-0.5 * xd * xd) / math.sqrt(2.0 * math.pi)
    return _make(xd * cdf, (x,), lambda g: (g * (cdf + xd * pdf),))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _make(y, (x,), lambda g: (g * y,))


# ---------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes are batch axes.

    A 2-D right operand is shared across the batch (weights).
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs at least 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    if a.ndim != b.ndim and b.ndim != 2:
        raise ShapeError(f"matmul batch shapes differ: {a.shape} @ {b.shape}")
    if a.ndim == b.ndim and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul batch shapes differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        if bd.ndim == 2 and ad.ndim > 2:
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return _make(ad @ bd, (a, b), backward)


def softmax_lastdim(x: Tensor) -> Tensor:
    xd = x.data
    if xd.shape[-1] < 1:
        raise ShapeError("softmax over an empty axis")
    z = np.exp(xd - xd.max(axis=-1, keepdims=True))
    y = z / z.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make(y, (x,), backward)


def normalize_lastdim(x: Tensor, eps: float = 1e-6) -> Tensor:
    """Zero-mean, unit-variance along the last axis (layer norm without affine)."""
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv

    def backward(g):
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * xhat).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - xhat * gx),)

    return _make(xhat, (x,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    return normalize_lastdim(x, eps) * gain + bias


def depthwise_conv3x3(x: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """Per-channel 3x3 cross-correlation, stride 1, zero padding 1.

    ``x`` is (..., H, W, C) channel-last, ``kernel`` is (C, 3, 3), ``bias`` (C,).
    """
    xd, kd = x.data, kernel.data
    c = xd.shape[-1]
    if kd.shape != (c, 3, 3) or bias.shape != (c,):
        raise ShapeError(f"depthwise kernel {kd.shape}/bias {bias.shape} do not fit {c} channels")
    h, w = xd.shape[-3], xd.shape[-2]
    pad = [(0, 0)] * (xd.ndim - 3) + [(1, 1), (1, 1), (0, 0)]
    xp = np.pad(xd, pad)
    out = np.zeros_like(xd)
    for a in range(3):
        for e in range(3):
            out += xp[..., a:a + h, e:e + w, :] * kd[:, a, e]
    out += bias.data

    def backward(g):
        gp = np.zeros_like(xp)
        gk = np.empty_like(kd)
        lead = tuple(range(g.ndim - 1))
        for a in range(3):
            for e in range(3):
                gp[..., a:a + h, e:e + w, :] += g * kd[:, a, e]
                gk[:, a, e] = (xp[..., a:a + h, e:e + w, :] * g).sum(axis=lead)
        return gp[..., 1:h + 1, 1:w + 1, :], gk, g.sum(axis=lead)

    return _make(out, (x, kernel, bias), backward)


# ---------------------------------------------------------------- structural


def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),))


def permute(x: Tensor, axes=None) -> Tensor:
    axes = tuple(range(x.ndim))[::-1] if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def swap_last(x: Tensor) -> Tensor:
    return _make(np.swapaxes(x.data, -1, -2), (x,), lambda g: (np.swapaxes(g, -1, -2),))


def getitem(x: Tensor, index) -> Tensor:
    shape, dtype = x.shape, x.dtype

    idx = index if isinstance(index, tuple) else (index,)
    basic = all(i is Ellipsis or i is None or isinstance(i, (int, slice)) for i in idx)

    def backward(g):
        gx = np.zeros(shape, dtype=dtype)
        if basic:
            gx[index] = g
        else:
            np.add.at(gx, index, g)
        return (gx,)

    return _make(x.data[index], (x,), backward)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    return _make(
        np.concatenate([t.data for t in tensors], axis=axis),
        tuple(tensors),
        lambda g: tuple(np.split(g, cuts, axis=axis)),
    )


def pad_leading(x: Tensor, n: int = 1) -> Tensor:
    """Zero-pad ``n`` leading rows and columns onto the last two axes."""
    pad = [(0, 0)] * (x.ndim - 2) + [(n, 0), (n, 0)]
    return _make(np.pad(x.data, pad), (x,), lambda g: (g[..., n:, n:],))


def take_along_last(x: Tensor, index: np.ndarray) -> Tensor:
    """out[..., i, j] = x[..., i, index[i, j]] for an integer (M, L) index."""
    m = x.shape[-2]
    if index.shape[0] != m:
        raise ShapeError(f"index rows {index.shape[0]} != {m}")
    if index.min() < 0 or index.max() >= x.shape[-1]:
        raise IndexError("gather index outside the table")
    rows = np.arange(m)[:, None]
    shape, dtype = x.shape, x.dtype

    def backward(g):
        gx = np.zeros(shape, dtype=dtype)
        np.add.at(gx, (Ellipsis, rows, index), g)
        return (gx,)

    return _make(x.data[..., rows, index], (x,), backward)


# ---------------------------------------------------------------- reductions & losses


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return _make(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean_all(x: Tensor) -> Tensor:
    shape, n = x.shape, x.size
    return _make(np.asarray(x.data.mean()), (x,), lambda g: (np.full(shape, g / n, dtype=x.dtype),))


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy of (B, C) logits against integer labels."""
    ld = logits.data
    b = ld.shape[0]
    labels = np.asarray(labels)
    if labels.shape != (b,) or labels.min(initial=0) < 0 or labels.max(initial=0) >= ld.shape[-1]:
        raise ShapeError(f"labels must be {b} ints in [0, {ld.shape[-1]}), got {labels.shape} "
                         f"with range [{labels.min(initial=0)}, {labels.max(initial=0)}]")
    shifted = ld - ld.max(axis=-1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - logz
    loss = -logp[np.arange(b), labels].mean()

    def backward(g):
        p = np.exp(logp)
        p[np.arange(b), labels] -= 1.0
        return (g * p / b,)

    return _make(np.asarray(loss, dtype=ld.dtype), (logits,), backward)


def bce_with_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean binary cross-entropy over every (clip, class) cell."""
    x = logits.data
    y = np.asarray(targets, dtype=x.dtype)
    loss = (np.maximum(x, 0) - x * y + np.log1p(np.exp(-np.abs(x)))).mean()

    def backward(g):
        return (g * (sigmoid(x) - y) / x.size,)

    return _make(np.asarray(loss, dtype=x.dtype), (logits,), backward)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ez = np.exp(x[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = np.exp(x - x.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


def assert_finite(x: Tensor | np.ndarray, what: str = "tensor"):
    data = x.data if isinstance(x, Tensor) else x
    if not np.all(np.isfinite(data)):
        raise NumericalError(f"non-finite values in {what}")


# ---------------------------------------------------------------- gradient checking


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    per_param: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol


def grad_check(
    f: Callable[[], Tensor],
    params: Mapping[str, Tensor] | Sequence[Tensor],
    eps: float = 1e-6,
    tol: float = 1e-4,
    floor: float = 1e-4,
) -> GradCheckReport:
    """Compare tape gradients of ``f()`` against central finite differences.

    ``f`` takes no arguments and reads ``params`` by closure; the params are
    perturbed in place and restored. Per-element error is
    ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``, so gradients
    smaller than ``floor`` are compared in absolute terms.
    """
    if not 1e-7 <= eps <= 1e-4:
        raise ValueError(f"eps {eps} outside [1e-7, 1e-4]")
    if not isinstance(params, Mapping):
        params = {f"p{i}": p for i, p in enumerate(params)}
    for name, p in params.items():
        if p.dtype != np.float64:
            raise TypeError(f"grad_check needs float64 parameters; {name} is {p.dtype}")

    def value() -> float:
        out = f()
        v = float(out.data)
        if not math.isfinite(v):
            raise NumericalError("grad_check: f is not finite at the probe point")
        return v

    with GradTape() as tape:
        loss = f()
    if not np.isfinite(loss.data).all():
        raise NumericalError("grad_check: f is not finite at the base point")
    analytic = dict(zip(params, tape.gradient(loss, params.values())))

    report = GradCheckReport(0.0, tol)
    for name, p in params.items():
        flat = p.data.reshape(-1)
        numeric = np.empty_like(flat)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            up = value()
            flat[k] = orig - eps
            down = value()
            flat[k] = orig
            numeric[k] = (up - down) / (2 * eps)
        a = analytic[name].reshape(-1)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), floor)
        err = float(np.max(np.abs(a - numeric) / denom)) if flat.size else 0.0
        report.per_param[name] = err
        report.max_rel_error = max(report.max_rel_error, err)
    return report
