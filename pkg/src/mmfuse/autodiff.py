"""Dense 4-D tensor arithmetic with reverse-mode differentiation.

Values are numpy arrays in float32 by default; a float64 shadow mode is
available for finite-difference gradient checking, where float32 rounding
would drown the comparison. Every operation appends a node to the active
Tape; nodes are created in topological order, so the backward sweep is a
single reversed pass. Accumulation order is fixed by node order, which
makes runs bit-reproducible.
"""

from __future__ import annotations

import threading

import numpy as np

DEFAULT_DTYPE = np.float32


class DimensionError(ValueError):
    pass


class ContractError(RuntimeError):
    pass


class NumericError(ArithmeticError):
    pass


# ---------------------------------------------------------------------------
# Graph plumbing


class Tensor:
    """A node in the recorded computation graph.

    `value` is the forward result; `inputs` are parent nodes; `aux` holds
    the non-differentiable arguments (indices, strides, constants) that the
    backward rule needs. Leaf nodes have op "const" or "param".
    """

    __slots__ = ("value", "op", "inputs", "aux", "grad", "name")

    def __init__(self, value, op, inputs=(), aux=None, name=None):
        self.value = value
        self.op = op
        self.inputs = inputs
        self.aux = aux or {}
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    # convenience arithmetic; scalars are promoted to const nodes
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

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.value.shape})"


class Tape:
    """Ordered record of one forward pass.

    Single-writer: one forward/backward at a time per tape. Node order is
    topological by construction. `dtype` selects working precision;
    float64 is the shadow mode used by gradient checks.
    """

    def __init__(self, dtype=DEFAULT_DTYPE, overrides=None):
        self.dtype = np.dtype(dtype)
        self.nodes = []
        self._param_nodes = {}
        self._overrides = overrides or {}
        self._prev = None

    def __enter__(self):
        self._prev = getattr(_TLS, "tape", None)
        _TLS.tape = self
        return self

    def __exit__(self, *exc):
        _TLS.tape = self._prev
        return False

    def record(self, node):
        self.nodes.append(node)
        return node

    def watch(self, param):
        """Return the leaf node for a named parameter, creating it once.

        Shadow-mode overrides (used by grad_check to perturb coordinates in
        float64) take precedence over the stored float32 value.
        """
        node = self._param_nodes.get(param.name)
        if node is None:
            source = self._overrides.get(param.name, param.value)
            node = Tensor(np.asarray(source, dtype=self.dtype), "param", name=param.name)
            self._param_nodes[param.name] = node
            self.record(node)
        return node

    def replay(self):
        """Recompute every non-leaf node from its recorded inputs.

        Returns the maximum absolute deviation from the stored values;
        0.0 means the tape reproduces the forward pass bit-exactly.
        """
        worst = 0.0
        for node in self.nodes:
            if node.op in ("const", "param"):
                continue
            fresh = _FORWARD[node.op]([p.value for p in node.inputs], node.aux)
            worst = max(worst, float(np.max(np.abs(fresh - node.value), initial=0.0)))
        return worst


# per-thread active tape: distinct model instances may run forward passes
# on distinct threads concurrently
_TLS = threading.local()


def active_tape():
    tape = getattr(_TLS, "tape", None)
    if tape is None:
        raise ContractError("no active Tape; wrap the forward pass in `with Tape():`")
    return tape


def constant(array, name=None):
    """Wrap a numpy array (or scalar) as a graph leaf with zero gradient."""
    tape = active_tape()
    value = np.asarray(array, dtype=tape.dtype)
    return tape.record(Tensor(value, "const", name=name))


class Param:
    """A named trainable value with a gradient buffer of the same shape."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name, value):
        self.name = name
        self.value = np.asarray(value, dtype=DEFAULT_DTYPE)
        self.grad = np.zeros_like(self.value)


class ParamStore:
    """Name -> Param mapping with unique names."""

    def __init__(self):
        self._entries = {}

    def create(self, name, value):
        if name in self._entries:
            raise ContractError(f"duplicate parameter name {name!r}")
        p = Param(name, value)
        self._entries[name] = p
        return p

    def __getitem__(self, name):
        return self._entries[name]

    def __contains__(self, name):
        return name in self._entries

    def __iter__(self):
        return iter(self._entries.values())

    def __len__(self):
        return len(self._entries)

    def names(self):
        return list(self._entries.keys())

    def zero_grad(self):
        for p in self._entries.values():
            p.grad[...] = 0.0

    def num_values(self):
        return sum(p.value.size for p in self._entries.values())

    def state_arrays(self):
        return {p.name: p.value for p in self._entries.values()}


# ---------------------------------------------------------------------------
# Broadcasting helpers

def _check_broadcast(xs, ys):
    """Allow equal shapes, scalars, and axes where one side has size 1."""
    if xs == ys or xs == () or ys == ():
        return
    if len(xs) != len(ys):
        raise DimensionError(f"rank mismatch: {xs} vs {ys}")
    for a, b in zip(xs, ys):
        if a != b and a != 1 and b != 1:
            raise DimensionError(f"shape mismatch: {xs} vs {ys}")


def _sum_to_shape(grad, shape):
    """Reduce a broadcast gradient back to the operand's shape."""
    if grad.shape == shape:
        return grad
    if shape == ():
        return np.asarray(grad.sum(), dtype=grad.dtype)
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _as_node(x):
    if isinstance(x, Tensor):
        return x
    return constant(x)


# ---------------------------------------------------------------------------
# Op registry

_FORWARD = {}
_BACKWARD = {}
# test hook: op names whose backward rule is deliberately corrupted
_CORRUPTED_OPS = set()


def _op(name, forward, backward):
    _FORWARD[name] = forward
    _BACKWARD[name] = backward


def _apply(op, inputs, aux=None):
    tape = active_tape()
    aux = aux or {}
    value = _FORWARD[op]([p.value for p in inputs], aux)
    if not np.all(np.isfinite(value)):
        raise NumericError(f"non-finite values produced by op {op!r}")
    return tape.record(Tensor(value, op, tuple(inputs), aux))


def _accumulate(node, grad):
    if node.grad is None:
        node.grad = grad.astype(node.value.dtype, copy=True)
    else:
        node.grad += grad


def backward(tape, loss, params=None):
    """Reverse sweep: fills node grads, then accumulates into `params`.

    `loss` must be a scalar node recorded on `tape`. Parameter gradients
    add onto whatever is already in the store (zero_grad to reset).
    """
    if loss.value.shape != ():
        raise ContractError(f"backward target must be scalar, got shape {loss.value.shape}")
    loss.grad = np.asarray(1.0, dtype=loss.value.dtype)
    for node in reversed(tape.nodes):
        if node.grad is None or node.op in ("const", "param"):
            continue
        rule = _BACKWARD[node.op]
        grads = rule(node, node.grad)
        if node.op in _CORRUPTED_OPS:
            grads = [None if g is None else g * 1.5 for g in grads]
        for parent, g in zip(node.inputs, grads):
            if g is None:
                continue
            _accumulate(parent, g)
    if params is not None:
        for node in tape._param_nodes.values():
            if node.grad is not None:
                p = params[node.name]
                p.grad += node.grad.astype(p.grad.dtype)


# ---------------------------------------------------------------------------
# Elementwise ops

def _fwd_add(vals, aux):
    return vals[0] + vals[1]


def _bwd_add(node, g):
    a, b = node.inputs
    return (_sum_to_shape(g, a.shape), _sum_to_shape(g, b.shape))


def _fwd_sub(vals, aux):
    return vals[0] - vals[1]


def _bwd_sub(node, g):
    a, b = node.inputs
    return (_sum_to_shape(g, a.shape), _sum_to_shape(-g, b.shape))


def _fwd_mul(vals, aux):
    return vals[0] * vals[1]


def _bwd_mul(node, g):
    a, b = node.inputs
    return (_sum_to_shape(g * b.value, a.shape), _sum_to_shape(g * a.value, b.shape))


def _fwd_maximum(vals, aux):
    return np.maximum(vals[0], vals[1])


def _bwd_maximum(node, g):
    a, b = node.inputs
    take_a = (a.value >= b.value).astype(g.dtype)
    return (_sum_to_shape(g * take_a, a.shape), _sum_to_shape(g * (1.0 - take_a), b.shape))


def _fwd_relu(vals, aux):
    return np.maximum(vals[0], 0.0)


def _bwd_relu(node, g):
    return (g * (node.inputs[0].value > 0.0).astype(g.dtype),)


def _fwd_sigmoid(vals, aux):
    # clip keeps exp in range; sigmoid has saturated far before +/-60 anyway
    x = np.clip(vals[0], -60.0, 60.0)
    return 1.0 / (1.0 + np.exp(-x))


def _bwd_sigmoid(node, g):
    y = node.value
    return (g * y * (1.0 - y),)


def _fwd_tanh(vals, aux):
    return np.tanh(vals[0])


def _bwd_tanh(node, g):
    y = node.value
    return (g * (1.0 - y * y),)


def _fwd_abs(vals, aux):
    return np.abs(vals[0])


def _bwd_abs(node, g):
    return (g * np.sign(node.inputs[0].value),)


def _fwd_rsqrt(vals, aux):
    return 1.0 / np.sqrt(vals[0])


def _bwd_rsqrt(node, g):
    y = node.value
    return (g * (-0.5) * y * y * y,)


_op("add", _fwd_add, _bwd_add)
_op("sub", _fwd_sub, _bwd_sub)
_op("mul", _fwd_mul, _bwd_mul)
_op("maximum", _fwd_maximum, _bwd_maximum)
_op("relu", _fwd_relu, _bwd_relu)
_op("sigmoid", _fwd_sigmoid, _bwd_sigmoid)
_op("tanh", _fwd_tanh, _bwd_tanh)
_op("abs", _fwd_abs, _bwd_abs)
_op("rsqrt", _fwd_rsqrt, _bwd_rsqrt)


def add(x, y):
    x, y = _as_node(x), _as_node(y)
    _check_broadcast(x.shape, y.shape)
    return _apply("add", [x, y])


def sub(x, y):
    x, y = _as_node(x), _as_node(y)
    _check_broadcast(x.shape, y.shape)
    return _apply("sub", [x, y])


def mul(x, y):
    x, y = _as_node(x), _as_node(y)
    _check_broadcast(x.shape, y.shape)
    return _apply("mul", [x, y])


def maximum(x, y):
    x, y = _as_node(x), _as_node(y)
    _check_broadcast(x.shape, y.shape)
    return _apply("maximum", [x, y])


def relu(x):
    return _apply("relu", [x])


def sigmoid(x):
    return _apply("sigmoid", [x])


def tanh(x):
    return _apply("tanh", [x])


def absolute(x):
    return _apply("abs", [x])


def rsqrt(x):
    return _apply("rsqrt", [x])


# ---------------------------------------------------------------------------
# Reductions

def _fwd_sum_all(vals, aux):
    return np.asarray(vals[0].sum(), dtype=vals[0].dtype)


def _bwd_sum_all(node, g):
    x = node.inputs[0]
    return (np.full(x.shape, g, dtype=x.value.dtype),)


def _fwd_mean_all(vals, aux):
    return np.asarray(vals[0].mean(), dtype=vals[0].dtype)


def _bwd_mean_all(node, g):
    x = node.inputs[0]
    return (np.full(x.shape, g / x.value.size, dtype=x.value.dtype),)


def _fwd_spatial_mean(vals, aux):
    return vals[0].mean(axis=(2, 3), keepdims=True)


def _bwd_spatial_mean(node, g):
    x = node.inputs[0]
    n = x.shape[2] * x.shape[3]
    return (np.broadcast_to(g / n, x.shape).astype(x.value.dtype),)


_op("sum_all", _fwd_sum_all, _bwd_sum_all)
_op("mean_all", _fwd_mean_all, _bwd_mean_all)
_op("spatial_mean", _fwd_spatial_mean, _bwd_spatial_mean)


def sum_all(x):
    return _apply("sum_all", [x])


def mean_all(x):
    if x.value.size == 0:
        raise DimensionError("mean of empty tensor")
    return _apply("mean_all", [x])


def global_avg_pool(x):
    """(n,c,h,w) -> (n,c,1,1), spatial mean per channel."""
    if x.value.ndim != 4 or x.shape[2] < 1 or x.shape[3] < 1:
        raise DimensionError(f"global_avg_pool needs a non-empty 4-D tensor, got {x.shape}")
    return _apply("spatial_mean", [x])


# ---------------------------------------------------------------------------
# Shape ops

def _fwd_reshape(vals, aux):
    return vals[0].reshape(aux["shape"])


def _bwd_reshape(node, g):
    return (g.reshape(node.inputs[0].shape),)


def _fwd_concat_ch(vals, aux):
    return np.concatenate(vals, axis=1)


def _bwd_concat_ch(node, g):
    grads = []
    start = 0
    for p in node.inputs:
        c = p.shape[1]
        grads.append(g[:, start:start + c])
        start += c
    return grads


def _fwd_slice_ch(vals, aux):
    return vals[0][:, aux["start"]:aux["stop"]].copy()


def _bwd_slice_ch(node, g):
    x = node.inputs[0]
    out = np.zeros(x.shape, dtype=g.dtype)
    out[:, node.aux["start"]:node.aux["stop"]] = g
    return (out,)


def _fwd_gather_ch(vals, aux):
    return vals[0][:, np.asarray(aux["index"], dtype=np.intp)].copy()


def _bwd_gather_ch(node, g):
    x = node.inputs[0]
    out = np.zeros(x.shape, dtype=g.dtype)
    # duplicated indices must accumulate, hence add.at rather than fancy assign
    np.add.at(out, (slice(None), np.asarray(node.aux["index"], dtype=np.intp)), g)
    return (out,)


def _fwd_transpose_last2(vals, aux):
    return np.swapaxes(vals[0], -1, -2).copy()


def _bwd_transpose_last2(node, g):
    return (np.swapaxes(g, -1, -2).copy(),)


def _fwd_nearest_up2(vals, aux):
    return vals[0].repeat(2, axis=2).repeat(2, axis=3)


def _bwd_nearest_up2(node, g):
    n, c, h2, w2 = g.shape
    return (g.reshape(n, c, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5)),)


def _fwd_pad_reflect1(vals, aux):
    return np.pad(vals[0], ((0, 0), (0, 0), (1, 1), (1, 1)), mode="reflect")


def _bwd_pad_reflect1(node, g):
    # fold reflected borders back; rows first then columns handles corners
    rows = g[:, :, 1:-1, :].copy()
    rows[:, :, 1, :] += g[:, :, 0, :]
    rows[:, :, -2, :] += g[:, :, -1, :]
    out = rows[:, :, :, 1:-1].copy()
    out[:, :, :, 1] += rows[:, :, :, 0]
    out[:, :, :, -2] += rows[:, :, :, -1]
    return (out,)


_op("reshape", _fwd_reshape, _bwd_reshape)
_op("concat_ch", _fwd_concat_ch, _bwd_concat_ch)
_op("slice_ch", _fwd_slice_ch, _bwd_slice_ch)
_op("gather_ch", _fwd_gather_ch, _bwd_gather_ch)
_op("transpose_last2", _fwd_transpose_last2, _bwd_transpose_last2)
_op("nearest_up2", _fwd_nearest_up2, _bwd_nearest_up2)
_op("pad_reflect1", _fwd_pad_reflect1, _bwd_pad_reflect1)


def reshape(x, shape):
    if int(np.prod(shape)) != x.value.size:
        raise DimensionError(f"cannot reshape {x.shape} to {tuple(shape)}")
    return _apply("reshape", [x], {"shape": tuple(shape)})


def concat_channels(*tensors):
    tensors = [_as_node(t) for t in tensors]
    base = tensors[0].shape
    for t in tensors[1:]:
        if t.shape[0] != base[0] or t.shape[2:] != base[2:]:
            raise DimensionError(f"concat_channels shape mismatch: {base} vs {t.shape}")
    return _apply("concat_ch", tensors)


def split_channels(x, at):
    c = x.shape[1]
    if not 0 < at < c:
        raise DimensionError(f"split index {at} outside (0, {c})")
    first = _apply("slice_ch", [x], {"start": 0, "stop": at})
    second = _apply("slice_ch", [x], {"start": at, "stop": c})
    return first, second


def slice_channels(x, start, stop):
    c = x.shape[1]
    if not (0 <= start < stop <= c):
        raise DimensionError(f"slice [{start}:{stop}] outside [0, {c}]")
    return _apply("slice_ch", [x], {"start": start, "stop": stop})


def gather_channels(x, index):
    index = [int(i) for i in index]
    c = x.shape[1]
    for i in index:
        if not 0 <= i < c:
            raise IndexError(f"gather index {i} out of range [0, {c})")
    return _apply("gather_ch", [x], {"index": tuple(index)})


def transpose_last2(x):
    return _apply("transpose_last2", [x])


def nearest_upsample2(x):
    if x.value.ndim != 4:
        raise DimensionError(f"nearest_upsample2 needs a 4-D tensor, got {x.shape}")
    return _apply("nearest_up2", [x])


def pad_reflect1(x):
    if x.shape[2] < 2 or x.shape[3] < 2:
        raise DimensionError(f"reflect padding needs h,w >= 2, got {x.shape}")
    return _apply("pad_reflect1", [x])


# ---------------------------------------------------------------------------
# Linear algebra

def _fwd_matmul(vals, aux):
    return np.matmul(vals[0], vals[1])


def _bwd_matmul(node, g):
    a, b = node.inputs
    ga = np.matmul(g, np.swapaxes(b.value, -1, -2))
    gb = np.matmul(np.swapaxes(a.value, -1, -2), g)
    return (_sum_to_shape(ga, a.shape), _sum_to_shape(gb, b.shape))


def _fwd_linear(vals, aux):
    x, w, b = vals
    return x @ w.T + b


def _bwd_linear(node, g):
    x, w, b = (p.value for p in node.inputs)
    return (g @ w, g.T @ x, g.sum(axis=0))


_op("matmul", _fwd_matmul, _bwd_matmul)
_op("linear", _fwd_linear, _bwd_linear)


def matmul(a, b):
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    return _apply("matmul", [a, b])


def linear(x, weight, bias):
    """y = x @ W.T + b for 2-D x (rows are samples)."""
    if x.shape[-1] != weight.shape[1]:
        raise DimensionError(f"linear expects {weight.shape[1]} features, got {x.shape}")
    return _apply("linear", [x, weight, bias])


# ---------------------------------------------------------------------------
# Fused normalization/attention helpers

def _fwd_softmax_last(vals, aux):
    x = vals[0]
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _bwd_softmax_last(node, g):
    y = node.value
    dot = (g * y).sum(axis=-1, keepdims=True)
    return (y * (g - dot),)


def _fwd_l2norm_last(vals, aux):
    x = vals[0]
    n = np.sqrt((x * x).sum(axis=-1, keepdims=True) + aux["eps"])
    return x / n


def _bwd_l2norm_last(node, g):
    x = node.inputs[0].value
    n = np.sqrt((x * x).sum(axis=-1, keepdims=True) + node.aux["eps"])
    dot = (g * x).sum(axis=-1, keepdims=True)
    return (g / n - x * dot / (n * n * n),)


_op("softmax_last", _fwd_softmax_last, _bwd_softmax_last)
_op("l2norm_last", _fwd_l2norm_last, _bwd_l2norm_last)


def softmax_lastdim(x):
    return _apply("softmax_last", [x])


def l2_normalize_lastdim(x, eps=1e-12):
    return _apply("l2norm_last", [x], {"eps": float(eps)})


# ---------------------------------------------------------------------------
# Convolutions

def _fwd_conv1x1(vals, aux):
    x, w, b = vals
    y = np.einsum("oc,nchw->nohw", w, x, optimize=True)
    return y + b.reshape(1, -1, 1, 1)


def _bwd_conv1x1(node, g):
    x, w, b = (p.value for p in node.inputs)
    gx = np.einsum("oc,nohw->nchw", w, g, optimize=True)
    gw = np.einsum("nohw,nchw->oc", g, x, optimize=True)
    gb = g.sum(axis=(0, 2, 3))
    return (gx, gw, gb)


def _conv3x3_shape(h, w, stride, pad):
    return ((h + 2 * pad - 3) // stride + 1, (w + 2 * pad - 3) // stride + 1)


def _fwd_conv3x3(vals, aux):
    x, w, b = vals
    stride, pad = aux["stride"], aux["pad"]
    n, c, h, ww = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho, wo = _conv3x3_shape(h, ww, stride, pad)
    out = np.zeros((n, w.shape[0], ho, wo), dtype=x.dtype)
    for u in range(3):
        for v in range(3):
            patch = x[:, :, u:u + (ho - 1) * stride + 1:stride, v:v + (wo - 1) * stride + 1:stride]
            out += np.einsum("oc,nchw->nohw", w[:, :, u, v], patch, optimize=True)
    return out + b.reshape(1, -1, 1, 1)


def _bwd_conv3x3(node, g):
    x, w, b = (p.value for p in node.inputs)
    stride, pad = node.aux["stride"], node.aux["pad"]
    n, c, h, ww = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    gxp = np.zeros_like(xp)
    gw = np.zeros_like(w)
    ho, wo = g.shape[2], g.shape[3]
    for u in range(3):
        for v in range(3):
            rows = slice(u, u + (ho - 1) * stride + 1, stride)
            cols = slice(v, v + (wo - 1) * stride + 1, stride)
            patch = xp[:, :, rows, cols]
            gw[:, :, u, v] = np.einsum("nohw,nchw->oc", g, patch, optimize=True)
            gxp[:, :, rows, cols] += np.einsum("oc,nohw->nchw", w[:, :, u, v], g, optimize=True)
    gx = gxp[:, :, pad:pad + h, pad:pad + ww] if pad else gxp
    gb = g.sum(axis=(0, 2, 3))
    return (gx, gw, gb)


_op("conv1x1", _fwd_conv1x1, _bwd_conv1x1)
_op("conv3x3", _fwd_conv3x3, _bwd_conv3x3)


def conv1x1(x, weight, bias):
    if x.shape[1] != weight.shape[1]:
        raise DimensionError(
            f"conv1x1 expects {weight.shape[1]} input channels, got {x.shape[1]} (input {x.shape})")
    return _apply("conv1x1", [x, weight, bias])


def conv3x3(x, weight, bias, stride=1, pad=1):
    if x.shape[1] != weight.shape[1]:
        raise DimensionError(
            f"conv3x3 expects {weight.shape[1]} input channels, got {x.shape[1]} (input {x.shape})")
    if x.shape[2] < 1 or x.shape[3] < 1:
        raise DimensionError(f"conv3x3 needs non-empty spatial dims, got {x.shape}")
    if stride not in (1, 2):
        raise ContractError(f"conv3x3 stride must be 1 or 2, got {stride}")
    return _apply("conv3x3", [x, weight, bias], {"stride": int(stride), "pad": int(pad)})


# ---------------------------------------------------------------------------
# Gradient checking

def grad_check(fn, params, eps=1e-4, max_coords_per_param=3, seed=0, param_names=None):
    """Compare analytic gradients of `fn` against central differences.

    `fn` takes no arguments and must build a scalar on the active tape.
    The whole check runs in float64 shadow mode: parameters are lifted to
    float64 once and coordinate perturbations are applied there, so the
    difference quotient is not polluted by float32 rounding. Up to
    `max_coords_per_param` coordinates are sampled per parameter.
    Returns the max relative error
    |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
    """
    if eps <= 0:
        raise ContractError("eps must be positive")

    shadow = {p.name: p.value.astype(np.float64) for p in params}

    def run(need_tape=False):
        with Tape(dtype=np.float64, overrides=shadow) as tape:
            loss = fn()
            if loss.value.shape != ():
                raise ContractError("grad_check target must be scalar")
        return (tape, loss) if need_tape else float(loss.value)

    tape, loss = run(need_tape=True)
    backward(tape, loss)
    analytic = {
        name: (node.grad.copy() if node.grad is not None else np.zeros_like(node.value))
        for name, node in tape._param_nodes.items()
    }

    rng = np.random.default_rng(seed)
    names = param_names if param_names is not None else sorted(analytic.keys())
    worst = 0.0
    for name in names:
        if name not in analytic:
            continue
        flat = shadow[name].reshape(-1)
        n_coords = min(max_coords_per_param, flat.size)
        coords = rng.choice(flat.size, size=n_coords, replace=False)
        for idx in coords:
            orig = flat[idx]
            flat[idx] = orig + eps
            lp = run()
            flat[idx] = orig - eps
            lm = run()
            flat[idx] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise NumericError(f"non-finite loss while perturbing parameter {name!r}")
            numeric = (lp - lm) / (2.0 * eps)
            ana = float(analytic[name].reshape(-1)[idx])
            err = abs(ana - numeric) / max(abs(ana), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
