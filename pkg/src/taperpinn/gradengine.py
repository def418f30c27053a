"""Reverse-mode differentiation on a linear tape of array primitives.

Every value that depends on the parameters is a :class:`Node` recorded on a
:class:`Tape` in creation order. Only primitives in :data:`PRIMITIVES` can
be recorded; each carries its forward rule and its vector-Jacobian product.
The jet propagation steps of the network are primitives of their own, so a
loss containing second spatial derivatives is still a first-order program in
the parameters and a single reverse sweep gives its exact gradient.
"""

from dataclasses import dataclass

import numpy as np

from taperpinn.errors import ContractViolation, NumericFailure, UnsupportedOperation
from taperpinn.network import (
    DX, DXX, DZ, DZZ, V,
    NetworkParams,
    input_jet,
    jet_affine,
    jet_tanh,
)
from taperpinn.numcore import DTYPE, SeededRng


@dataclass(frozen=True)
class Primitive:
    name: str
    forward: object
    vjp: object


PRIMITIVES = {}


def register(name, forward, vjp):
    PRIMITIVES[name] = Primitive(name, forward, vjp)


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise and reduction primitives -----------------------------------

register(
    "add",
    lambda a, b: a + b,
    lambda g, out, a, b: (_unbroadcast(g, np.shape(a)), _unbroadcast(g, np.shape(b))),
)
register(
    "sub",
    lambda a, b: a - b,
    lambda g, out, a, b: (_unbroadcast(g, np.shape(a)), _unbroadcast(-g, np.shape(b))),
)
register(
    "mul",
    lambda a, b: a * b,
    lambda g, out, a, b: (_unbroadcast(g * b, np.shape(a)),
                          _unbroadcast(g * a, np.shape(b))),
)
register("neg", lambda a: -a, lambda g, out, a: (-g,))
register("square", lambda a: a * a, lambda g, out, a: (2.0 * a * g,))
register("tanh", np.tanh, lambda g, out, a: ((1.0 - out * out) * g,))
register(
    "sum",
    lambda a: np.sum(a),
    lambda g, out, a: (np.broadcast_to(g, np.shape(a)).copy(),),
)
register(
    "matmul",
    lambda a, b: a @ b,
    lambda g, out, a, b: (
        _unbroadcast(g @ np.swapaxes(b, -1, -2) if np.ndim(b) > 1
                     else np.multiply.outer(g, b), np.shape(a)),
        _unbroadcast(np.swapaxes(a, -1, -2) @ g, np.shape(b)),
    ),
)


def _is_basic_key(key):
    key = key if isinstance(key, tuple) else (key,)
    return all(isinstance(k, (int, np.integer, slice)) or k is None or k is Ellipsis
               for k in key)


def _index_vjp(g, out, a, key):
    full = np.zeros(np.shape(a), dtype=DTYPE)
    if _is_basic_key(key):
        # basic indexing never repeats an element
        full[key] = g
    else:
        np.add.at(full, key, g)
    return (full,)


register("index", lambda a, key: a[key], _index_vjp)
register(
    "concat",
    lambda *parts: np.concatenate(parts),
    lambda g, out, *parts: tuple(
        np.split(g, np.cumsum([p.shape[0] for p in parts])[:-1])
    ),
)


# -- network jet primitives ---------------------------------------------------

def _jet_affine_fwd(w, b, h, alpha=None):
    return jet_affine(w, b, h, alpha)


def _jet_affine_vjp(g, out, w, b, h, alpha=None):
    # out = s * (W h + b e_v), s = alpha or 1
    if alpha is None:
        pre_g = g
        g_alpha = None
    else:
        pre = out / alpha if alpha != 0 else jet_affine(w, b, h)
        g_alpha = np.sum(g * pre)
        pre_g = alpha * g
    g_w = np.matmul(pre_g, np.swapaxes(h, 1, 2)).sum(axis=0)
    g_b = pre_g[V].sum(axis=1)
    g_h = np.matmul(w.T, pre_g)
    return (g_w, g_b, g_h, g_alpha)


def _jet_tanh_vjp(g, out, a):
    t = out[V]
    s = 1.0 - t * t
    a1x, a1z = a[DX], a[DZ]
    gv, gx, gz, gxx, gzz = g[V], g[DX], g[DZ], g[DXX], g[DZZ]
    # d/dt of each output channel, using s' = -2t and (2ts)' = 2(s - 2t^2)
    two_ts_prime = 2.0 * s - 4.0 * t * t
    g_t = gv - 2.0 * t * (gx * a1x + gz * a1z + gxx * a[DXX] + gzz * a[DZZ])
    g_t -= two_ts_prime * (gxx * a1x * a1x + gzz * a1z * a1z)
    ga = g * s
    four_ts = 4.0 * t * s
    ga[V] = g_t * s
    ga[DX] -= four_ts * gxx * a1x
    ga[DZ] -= four_ts * gzz * a1z
    return (ga,)


register("jet_affine", _jet_affine_fwd, _jet_affine_vjp)
register("jet_tanh", jet_tanh, _jet_tanh_vjp)


# -- tape ---------------------------------------------------------------------

_UFUNC_PRIMITIVES = {
    "add": "add",
    "subtract": "sub",
    "multiply": "mul",
    "matmul": "matmul",
    "negative": "neg",
    "square": "square",
    "tanh": "tanh",
}

class Node:
    __slots__ = ("tape", "index", "value", "op", "inputs", "attrs")

    def __init__(self, tape, index, value, op, inputs, attrs):
        self.tape = tape
        self.index = index
        self.value = value
        self.op = op
        self.inputs = inputs
        self.attrs = attrs

    # numpy must not silently unwrap nodes into object arrays; the few ufuncs
    # that have a primitive (ndarray @ node, ndarray * node, ...) are routed
    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        op = _UFUNC_PRIMITIVES.get(ufunc.__name__)
        if method != "__call__" or op is None or kwargs:
            raise UnsupportedOperation(f"numpy ufunc {ufunc.__name__} is not a tape primitive")
        return self.tape.apply(op, *inputs)

    def __array_function__(self, func, types, args, kwargs):
        raise UnsupportedOperation(f"numpy function {func.__name__} is not a tape primitive")

    @property
    def shape(self):
        return np.shape(self.value)

    def __add__(self, other):
        return self.tape.apply("add", self, other)

    def __radd__(self, other):
        return self.tape.apply("add", other, self)

    def __sub__(self, other):
        return self.tape.apply("sub", self, other)

    def __rsub__(self, other):
        return self.tape.apply("sub", other, self)

    def __mul__(self, other):
        return self.tape.apply("mul", self, other)

    def __rmul__(self, other):
        return self.tape.apply("mul", other, self)

    def __truediv__(self, other):
        if isinstance(other, Node):
            raise UnsupportedOperation("division by a taped value is not a primitive")
        return self.tape.apply("mul", self, 1.0 / other)

    def __neg__(self):
        return self.tape.apply("neg", self)

    def __pow__(self, p):
        if p != 2:
            raise UnsupportedOperation(f"only squaring is a primitive, got power {p}")
        return self.tape.apply("square", self)

    def __matmul__(self, other):
        return self.tape.apply("matmul", self, other)

    def __rmatmul__(self, other):
        return self.tape.apply("matmul", other, self)

    def __getitem__(self, key):
        return self.tape.apply("index", self, key=key)

    def __repr__(self):
        return f"Node(#{self.index}, op={self.op}, shape={self.shape})"


class Tape:
    """Ordered record of one evaluation."""

    def __init__(self):
        self.nodes = []
        self.last_backward_visits = 0

    def leaf(self, value):
        node = Node(self, len(self.nodes), np.asarray(value, dtype=DTYPE), None, (), {})
        self.nodes.append(node)
        return node

    def apply(self, op, *inputs, **attrs):
        prim = PRIMITIVES.get(op)
        if prim is None:
            raise UnsupportedOperation(f"unregistered primitive {op!r}")
        for x in inputs:
            if isinstance(x, Node) and x.tape is not self:
                raise ContractViolation("node belongs to a different tape")
        values = [x.value if isinstance(x, Node) else x for x in inputs]
        out = prim.forward(*values, **attrs)
        node = Node(self, len(self.nodes), out, op, inputs, attrs)
        self.nodes.append(node)
        return node

    def replay(self, leaf_values=None):
        """Re-run every recorded primitive in order and return the last value.

        ``leaf_values`` optionally maps leaf index to a replacement value.
        """
        leaf_values = leaf_values or {}
        values = []
        for node in self.nodes:
            if node.op is None:
                values.append(leaf_values.get(node.index, node.value))
                continue
            args = [values[x.index] if isinstance(x, Node) else x for x in node.inputs]
            values.append(PRIMITIVES[node.op].forward(*args, **node.attrs))
        return values[-1]

    def backward(self, output):
        """Adjoints of ``output`` (a scalar node) w.r.t. every node, by index."""
        if np.ndim(output.value) != 0:
            raise ContractViolation("backward needs a scalar output")
        adj = [None] * len(self.nodes)
        adj[output.index] = np.ones((), dtype=DTYPE)
        visits = 0
        for node in reversed(self.nodes[: output.index + 1]):
            visits += 1
            g = adj[node.index]
            if g is None or node.op is None:
                continue
            if not np.all(np.isfinite(g)):
                raise NumericFailure(f"non-finite adjoint at node #{node.index} ({node.op})")
            values = [x.value if isinstance(x, Node) else x for x in node.inputs]
            grads = PRIMITIVES[node.op].vjp(g, node.value, *values, **node.attrs)
            for x, gx in zip(node.inputs, grads):
                if isinstance(x, Node) and gx is not None:
                    adj[x.index] = gx if adj[x.index] is None else adj[x.index] + gx
        self.last_backward_visits = visits
        return adj


# -- parameters on a tape -----------------------------------------------------

class ParamGradient(NetworkParams):
    """Partials of a scalar w.r.t. every entry of a :class:`NetworkParams`."""

    def __post_init__(self):
        super().__post_init__()
        if not np.all(np.isfinite(self.flatten())):
            raise NumericFailure("non-finite parameter gradient")


class TapedParams:
    """Leaf nodes for every parameter array of a network."""

    def __init__(self, tape, params):
        self.tape = tape
        self.params = params
        self.weights = [tape.leaf(w) for w in params.weights]
        self.biases = [tape.leaf(b) for b in params.biases]
        self.alphas = tape.leaf(params.alphas)
        self.alpha_list = [self.alphas[i] for i in range(params.n_hidden)]

    def leaves(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        out.append(self.alphas)
        return out


def taped_jet_forward(tp, x, z):
    """Jet of the network at 1-D point arrays as a node of shape (5, 2, P)."""
    tape = tp.tape
    h = input_jet(np.asarray(x, dtype=DTYPE), np.asarray(z, dtype=DTYPE))
    last = len(tp.weights) - 1
    for i, (w, b) in enumerate(zip(tp.weights, tp.biases)):
        if i < last:
            a = tape.apply("jet_affine", w, b, h, tp.alpha_list[i])
            h = tape.apply("jet_tanh", a)
        else:
            h = tape.apply("jet_affine", w, b, h)
    return h


def taped_forward(tp, x, z):
    """Network value at 1-D point arrays, built from generic primitives only."""
    tape = tp.tape
    h = np.stack([np.asarray(x, dtype=DTYPE), np.asarray(z, dtype=DTYPE)])
    last = len(tp.weights) - 1
    for i, (w, b) in enumerate(zip(tp.weights, tp.biases)):
        pre = (w @ h) + b[:, None]
        h = tape.apply("tanh", tp.alpha_list[i] * pre) if i < last else pre
    return h


def grad_loss(params, loss_fn):
    """Loss value and exact gradient w.r.t. all network parameters.

    ``loss_fn(tp)`` receives a :class:`TapedParams` and must return a scalar
    node built from registered primitives.
    """
    tape = Tape()
    tp = TapedParams(tape, params)
    out = loss_fn(tp)
    if not isinstance(out, Node):
        raise UnsupportedOperation("loss_fn must return a taped scalar")
    loss = float(out.value)
    if not np.isfinite(loss):
        raise NumericFailure("non-finite loss")
    adj = tape.backward(out)
    arrays = []
    for leaf in tp.leaves():
        g = adj[leaf.index]
        arrays.append(np.zeros_like(leaf.value) if g is None else np.asarray(g))
    grad = ParamGradient(
        params.layer_sizes, arrays[0:-1:2], arrays[1:-1:2], arrays[-1]
    )
    return loss, grad


def loss_value(params, loss_fn):
    tape = Tape()
    return float(loss_fn(TapedParams(tape, params)).value)


def fd_check(params, loss_fn, n_probes=20, step=1e-6, rng=None):
    """Largest relative gap between analytic and central-difference partials.

    Probes ``n_probes`` distinct random coordinates of the flattened parameter
    vector. The relative error is ``|g - fd| / max(|g|, 1e-12)``.
    """
    if step <= 0:
        raise ContractViolation(f"step must be positive, got {step}")
    rng = rng if rng is not None else SeededRng(0)
    _, grad = grad_loss(params, loss_fn)
    g = grad.flatten()
    base = params.flatten()
    n_probes = min(int(n_probes), base.size)
    idx = rng._gen.choice(base.size, size=n_probes, replace=False)
    worst = 0.0
    for i in idx:
        plus = base.copy()
        plus[i] += step
        minus = base.copy()
        minus[i] -= step
        fd = (loss_value(NetworkParams.unflatten(params.layer_sizes, plus), loss_fn)
              - loss_value(NetworkParams.unflatten(params.layer_sizes, minus), loss_fn)
              ) / (2.0 * step)
        worst = max(worst, abs(g[i] - fd) / max(abs(g[i]), 1e-12))
    return worst
