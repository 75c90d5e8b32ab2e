"""Reverse-mode automatic differentiation over dense numpy tensors.

Forward work happens eagerly in numpy.  While a :class:`Tape` is active,
every primitive application is appended to it; :func:`backward` replays the
tape in reverse order and accumulates gradients into ``Tensor.grad``.  The
primitive set is deliberately small, and :func:`grad_check` can verify any
scalar-valued composition against central finite differences.

Default precision is 64-bit (see :func:`set_default_dtype`); gradient
checking assumes 64-bit evaluation.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ContractError, DimensionError, NumericError

_DEFAULT_DTYPE = np.float64
_DEBUG_NUMERICS = False
_TAPE_STACK: list["Tape"] = []


def set_default_dtype(dtype) -> None:
    """Select "float64" (default) or "float32" for newly created tensors."""
    global _DEFAULT_DTYPE
    if dtype in ("float64", np.float64):
        _DEFAULT_DTYPE = np.float64
    elif dtype in ("float32", np.float32):
        _DEFAULT_DTYPE = np.float32
    else:
        raise ConfigError(f"unsupported dtype {dtype!r}")


def default_dtype():
    return _DEFAULT_DTYPE


def set_debug_numerics(enabled: bool) -> None:
    """When enabled, every primitive output is checked for NaN/Inf."""
    global _DEBUG_NUMERICS
    _DEBUG_NUMERICS = bool(enabled)


class SeedStream:
    """Deterministic per-site seeds derived from a base entropy tuple.

    Each call to :meth:`next` yields a fresh ``(base..., counter)`` tuple
    suitable for ``numpy.random.default_rng``.  Threading one stream through
    a forward pass makes dropout/noise bit-reproducible for a fixed base.
    """

    def __init__(self, *entropy: int):
        self._base = tuple(int(x) & 0xFFFFFFFF for x in entropy)
        self._counter = 0

    def next(self) -> tuple[int, ...]:
        seed = self._base + (self._counter,)
        self._counter += 1
        return seed


class Tensor:
    """A dense real-valued array with an optional gradient."""

    __slots__ = ("data", "requires_grad", "grad", "_tracked")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype or _DEFAULT_DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._tracked = False
        if _DEBUG_NUMERICS and not np.all(np.isfinite(self.data)):
            raise NumericError("tensor initialized with non-finite values")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def _const(self, value) -> "Tensor":
        return _wrap(np.full(self.data.shape, value, dtype=self.data.dtype))

    # -- operator sugar over the primitive registry --------------------------

    def __add__(self, other):
        other = other if isinstance(other, Tensor) else self._const(other)
        return primitive_forward("add", (self, other))

    __radd__ = __add__

    def __neg__(self):
        return primitive_forward("elementwise-mul", (self, self._const(-1.0)))

    def __sub__(self, other):
        other = other if isinstance(other, Tensor) else self._const(other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + self._const(other)

    def __mul__(self, other):
        other = other if isinstance(other, Tensor) else self._const(other)
        return primitive_forward("elementwise-mul", (self, other))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return primitive_forward("matmul", (self, other))

    def tanh(self):
        return primitive_forward("tanh", (self,))

    def sigmoid(self):
        return primitive_forward("sigmoid", (self,))

    def relu(self):
        return primitive_forward("relu", (self,))

    def abs(self):
        # |x| = relu(x) + relu(-x); subgradient 0 at the origin.
        return self.relu() + (-self).relu()

    def softmax(self):
        return primitive_forward("softmax-last-axis", (self,))

    def sum(self):
        return primitive_forward("sum", (self,))

    def mean(self):
        return primitive_forward("mean", (self,))

    def reshape(self, *shape):
        return primitive_forward("reshape", (self,), {"shape": shape})

    def slice(self, axis: int, start: int, stop: int):
        return primitive_forward("slice", (self,), {"axis": axis, "start": start, "stop": stop})


def _wrap(arr: np.ndarray) -> Tensor:
    t = Tensor.__new__(Tensor)
    t.data = arr
    t.requires_grad = False
    t.grad = None
    t._tracked = False
    return t


def concat(tensors, axis: int = -1) -> Tensor:
    if axis == -1:
        return primitive_forward("concat-last-axis", tuple(tensors))
    if axis == 0:
        return primitive_forward("concat-first-axis", tuple(tensors))
    raise ConfigError(f"concat supports axis -1 or 0, got {axis}")


def dropout(x: Tensor, p: float, seed) -> Tensor:
    return primitive_forward("dropout", (x,), {"p": p, "seed": seed})


def conv1d(x: Tensor, filters: Tensor) -> Tensor:
    return primitive_forward("conv1d", (x, filters))


def maxpool1d(x: Tensor, width: int = 2) -> Tensor:
    return primitive_forward("maxpool1d", (x,), {"width": width})


def embedding_lookup(table: Tensor, ids) -> Tensor:
    return primitive_forward("embedding-lookup", (table,), {"ids": np.asarray(ids, dtype=np.int64)})


# -- the computation record ---------------------------------------------------


class Tape:
    """Ordered record of primitive applications within one forward pass.

    Entries are appended in execution order, which is a topological order of
    the underlying graph; one :func:`backward` pass visits each entry exactly
    once, in reverse.  A tape is confined to a single training run and a
    single thread of control.
    """

    def __init__(self):
        self.entries: list[tuple] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _TAPE_STACK.pop()
        return False

    def __len__(self):
        return len(self.entries)


def primitive_forward(name: str, inputs, attrs: dict | None = None) -> Tensor:
    """Apply a named primitive; record it if a tape is active and needed."""
    try:
        fwd = _PRIMITIVES[name][0]
    except KeyError:
        raise ConfigError(f"unknown primitive {name!r}") from None
    attrs = attrs if attrs is not None else _EMPTY_ATTRS
    arrays = tuple(t.data for t in inputs)
    out_arr, saved = fwd(arrays, attrs)
    if _DEBUG_NUMERICS and not np.all(np.isfinite(out_arr)):
        raise NumericError(f"non-finite output from primitive {name!r}")
    out = _wrap(out_arr)
    if _TAPE_STACK:
        for t in inputs:
            if t.requires_grad or t._tracked:
                out._tracked = True
                _TAPE_STACK[-1].entries.append(
                    (name, tuple(inputs), out, saved, attrs, arrays))
                break
    return out


_EMPTY_ATTRS: dict = {}


def backward(record: Tape, loss: Tensor) -> None:
    """Accumulate d(loss)/d(tensor) into ``.grad`` for every tensor the record tracks.

    Gradients add across fan-out; leaves keep their accumulated ``.grad``
    until the caller clears it.
    """
    if loss.data.shape != ():
        raise ContractError(f"backward: loss must be scalar, got shape {loss.data.shape}")
    if not any(entry[2] is loss for entry in record.entries):
        raise ContractError("backward: loss was not produced by this record")
    loss.grad = np.ones((), dtype=loss.data.dtype)
    for name, inputs, out, saved, attrs, arrays in reversed(record.entries):
        g = out.grad
        if g is None:
            continue
        bwd = _PRIMITIVES[name][1]
        grads = bwd(g, arrays, saved, attrs)
        for t, gt in zip(inputs, grads):
            if gt is None or not (t.requires_grad or t._tracked):
                continue
            t.grad = gt if t.grad is None else t.grad + gt


def grad_check(function, point, epsilon: float, *, sample: int | None = None, seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``function`` must map one tensor to a scalar tensor and be deterministic
    (fix dropout seeds).  ``sample`` optionally restricts the sweep to a
    seeded random subset of coordinates for large points; by default every
    coordinate is checked.  Evaluate in 64-bit precision.
    """
    if not (1e-6 <= epsilon <= 1e-3):
        raise ContractError(f"epsilon {epsilon} outside [1e-6, 1e-3]")
    base = np.asarray(point.data if isinstance(point, Tensor) else point, dtype=np.float64)
    x = Tensor(base.copy(), requires_grad=True, dtype=np.float64)
    with Tape() as tape:
        y = function(x)
    if y.data.shape != ():
        raise ContractError(f"grad_check: function output must be scalar, got {y.data.shape}")
    backward(tape, y)
    analytic = np.zeros_like(base) if x.grad is None else np.asarray(x.grad, np.float64)
    analytic = analytic.reshape(-1)
    flat = base.reshape(-1)
    indices = np.arange(flat.size)
    if sample is not None and sample < flat.size:
        indices = np.random.default_rng(seed).choice(flat.size, size=sample, replace=False)
    worst = 0.0
    for i in indices:
        bumped = flat.copy()
        bumped[i] = flat[i] + epsilon
        f_plus = function(_wrap(bumped.reshape(base.shape))).item()
        bumped[i] = flat[i] - epsilon
        f_minus = function(_wrap(bumped.reshape(base.shape))).item()
        numeric = (f_plus - f_minus) / (2.0 * epsilon)
        err = abs(analytic[i] - numeric) / max(1e-8, abs(analytic[i]) + abs(numeric))
        worst = max(worst, err)
    return worst


# -- primitive kernels --------------------------------------------------------

_PRIMITIVES: dict[str, tuple] = {}


def register_primitive(name: str, forward, backward_rule) -> None:
    """Register a kernel.  ``forward(arrays, attrs) -> (out, saved)``;
    ``backward_rule(grad, arrays, saved, attrs) -> per-input gradients``."""
    _PRIMITIVES[name] = (forward, backward_rule)


def _matmul_fwd(arrays, attrs):
    a, b = arrays
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: {a.shape} @ {b.shape}")
    return a @ b, None


def _matmul_bwd(g, arrays, saved, attrs):
    a, b = arrays
    return g @ b.T, a.T @ g


def _add_fwd(arrays, attrs):
    a, b = arrays
    if a.shape == b.shape:
        pass
    elif b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        pass  # broadcast over leading axes
    elif a.ndim == 2 and b.shape == (1, a.shape[1]):
        pass
    else:
        raise DimensionError(f"add: {a.shape} + {b.shape}")
    return a + b, None


def _add_bwd(g, arrays, saved, attrs):
    a, b = arrays
    if a.shape == b.shape:
        return g, g
    if b.ndim == 1:
        return g, g.reshape(-1, b.shape[0]).sum(axis=0)
    return g, g.sum(axis=0, keepdims=True)


def _mul_fwd(arrays, attrs):
    a, b = arrays
    if a.shape != b.shape:
        raise DimensionError(f"elementwise-mul: {a.shape} * {b.shape}")
    return a * b, None


def _mul_bwd(g, arrays, saved, attrs):
    a, b = arrays
    return g * b, g * a


def _tanh_fwd(arrays, attrs):
    out = np.tanh(arrays[0])
    return out, out


def _tanh_bwd(g, arrays, out, attrs):
    return (g * (1.0 - out * out),)


def _sigmoid_fwd(arrays, attrs):
    # tanh form is overflow-safe for large |x|
    out = 0.5 * (np.tanh(0.5 * arrays[0]) + 1.0)
    return out, out


def _sigmoid_bwd(g, arrays, out, attrs):
    return (g * out * (1.0 - out),)


def _relu_fwd(arrays, attrs):
    a = arrays[0]
    mask = a > 0
    return np.where(mask, a, 0.0), mask


def _relu_bwd(g, arrays, mask, attrs):
    return (g * mask,)


def _softmax_fwd(arrays, attrs):
    a = arrays[0]
    z = a - a.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)
    return out, out


def _softmax_bwd(g, arrays, out, attrs):
    dot = (g * out).sum(axis=-1, keepdims=True)
    return (out * (g - dot),)


def _make_concat(axis):
    def fwd(arrays, attrs):
        first = arrays[0]
        ax = axis % first.ndim
        for a in arrays[1:]:
            if a.ndim != first.ndim or a.shape[:ax] + a.shape[ax + 1:] != \
                    first.shape[:ax] + first.shape[ax + 1:]:
                raise DimensionError(f"concat axis {axis}: {[a.shape for a in arrays]}")
        return np.concatenate(arrays, axis=axis), [a.shape[ax] for a in arrays]

    def bwd(g, arrays, sizes, attrs):
        splits = np.cumsum(sizes[:-1])
        return tuple(np.split(g, splits, axis=axis))

    return fwd, bwd


def _slice_fwd(arrays, attrs):
    a = arrays[0]
    axis = attrs["axis"] % a.ndim
    start, stop = attrs["start"], attrs["stop"]
    if not (0 <= start < stop <= a.shape[axis]):
        raise DimensionError(f"slice: [{start}:{stop}] on axis {axis} of {a.shape}")
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, stop)
    return a[tuple(idx)].copy(), None


def _slice_bwd(g, arrays, saved, attrs):
    a = arrays[0]
    axis = attrs["axis"] % a.ndim
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(attrs["start"], attrs["stop"])
    out = np.zeros_like(a)
    out[tuple(idx)] = g
    return (out,)


def _reshape_fwd(arrays, attrs):
    a = arrays[0]
    shape = tuple(int(s) for s in attrs["shape"])
    if int(np.prod(shape)) != a.size:
        raise DimensionError(f"reshape: {a.shape} -> {shape}")
    return a.reshape(shape).copy(), None


def _reshape_bwd(g, arrays, saved, attrs):
    return (g.reshape(arrays[0].shape),)


def _sum_fwd(arrays, attrs):
    return np.asarray(arrays[0].sum()), None


def _sum_bwd(g, arrays, saved, attrs):
    return (np.full_like(arrays[0], float(g)),)


def _mean_fwd(arrays, attrs):
    return np.asarray(arrays[0].mean()), None


def _mean_bwd(g, arrays, saved, attrs):
    a = arrays[0]
    return (np.full_like(a, float(g) / a.size),)


def _dropout_fwd(arrays, attrs):
    a = arrays[0]
    p = float(attrs["p"])
    if not 0.0 <= p < 1.0:
        raise ContractError(f"dropout: p must be in [0, 1), got {p}")
    if p == 0.0:
        return a.copy(), None
    seed = attrs["seed"]
    entropy = list(seed) if isinstance(seed, (tuple, list)) else int(seed)
    # inverted scaling: kept values are divided by 1-p, inference needs no rescale
    mask = (np.random.default_rng(entropy).random(a.shape) >= p) / (1.0 - p)
    return a * mask, mask


def _dropout_bwd(g, arrays, mask, attrs):
    return (g if mask is None else g * mask,)


def _pad_lr(width):
    left = (width - 1) // 2
    return left, width - 1 - left


def _conv1d_fwd(arrays, attrs):
    x, w = arrays
    if x.ndim != 2 or w.ndim != 3 or w.shape[1] != x.shape[1]:
        raise DimensionError(f"conv1d: input {x.shape}, filters {w.shape}")
    width = w.shape[0]
    left, right = _pad_lr(width)
    padded = np.pad(x, ((left, right), (0, 0)))
    windows = np.lib.stride_tricks.sliding_window_view(padded, width, axis=0)
    cols = np.ascontiguousarray(windows.transpose(0, 2, 1)).reshape(x.shape[0], width * x.shape[1])
    out = cols @ w.reshape(width * x.shape[1], w.shape[2])
    return out, cols


def _conv1d_bwd(g, arrays, cols, attrs):
    x, w = arrays
    width, c_in, c_out = w.shape
    grad_w = (cols.T @ g).reshape(width, c_in, c_out)
    grad_cols = (g @ w.reshape(width * c_in, c_out).T).reshape(x.shape[0], width, c_in)
    left, right = _pad_lr(width)
    grad_padded = np.zeros((x.shape[0] + left + right, c_in), dtype=x.dtype)
    for k in range(width):
        grad_padded[k:k + x.shape[0]] += grad_cols[:, k, :]
    return grad_padded[left:left + x.shape[0]], grad_w


def _maxpool1d_fwd(arrays, attrs):
    x = arrays[0]
    width = int(attrs.get("width", 2))
    if x.ndim != 2:
        raise DimensionError(f"maxpool1d: input {x.shape}")
    left, right = _pad_lr(width)
    padded = np.pad(x, ((left, right), (0, 0)))
    windows = np.lib.stride_tricks.sliding_window_view(padded, width, axis=0)
    arg = windows.argmax(axis=-1)  # ties go to the earliest position
    out = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(out), arg


def _maxpool1d_bwd(g, arrays, arg, attrs):
    x = arrays[0]
    width = int(attrs.get("width", 2))
    left, right = _pad_lr(width)
    grad_padded = np.zeros((x.shape[0] + left + right, x.shape[1]), dtype=x.dtype)
    for k in range(width):
        grad_padded[k:k + x.shape[0]] += g * (arg == k)
    return (grad_padded[left:left + x.shape[0]],)


def _embedding_fwd(arrays, attrs):
    table = arrays[0]
    ids = attrs["ids"]
    if ids.ndim != 1 or ids.size == 0:
        raise DimensionError(f"embedding-lookup: ids shape {ids.shape}")
    if ids.min() < 0 or ids.max() >= table.shape[0]:
        raise ContractError(f"embedding-lookup: id outside table of {table.shape[0]} rows")
    return table[ids], None


def _embedding_bwd(g, arrays, saved, attrs):
    grad_table = np.zeros_like(arrays[0])
    np.add.at(grad_table, attrs["ids"], g)
    return (grad_table,)


register_primitive("matmul", _matmul_fwd, _matmul_bwd)
register_primitive("add", _add_fwd, _add_bwd)
register_primitive("elementwise-mul", _mul_fwd, _mul_bwd)
register_primitive("tanh", _tanh_fwd, _tanh_bwd)
register_primitive("sigmoid", _sigmoid_fwd, _sigmoid_bwd)
register_primitive("relu", _relu_fwd, _relu_bwd)
register_primitive("softmax-last-axis", _softmax_fwd, _softmax_bwd)
register_primitive("concat-last-axis", *_make_concat(-1))
register_primitive("concat-first-axis", *_make_concat(0))
register_primitive("slice", _slice_fwd, _slice_bwd)
register_primitive("reshape", _reshape_fwd, _reshape_bwd)
register_primitive("sum", _sum_fwd, _sum_bwd)
register_primitive("mean", _mean_fwd, _mean_bwd)
register_primitive("dropout", _dropout_fwd, _dropout_bwd)
register_primitive("conv1d", _conv1d_fwd, _conv1d_bwd)
register_primitive("maxpool1d", _maxpool1d_fwd, _maxpool1d_bwd)
register_primitive("embedding-lookup", _embedding_fwd, _embedding_bwd)
