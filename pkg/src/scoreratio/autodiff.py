"""A small array-valued differentiation engine.

Reverse mode works on a :class:`Tape` of recorded primitives (add, multiply,
matrix product, tanh, sum, reshape, concatenation). Forward mode propagates
(primal, tangent) pairs through the MLP using the same primitives, so when the
inputs are tape nodes the tangent computation is itself recorded and a single
reverse sweep differentiates it (reverse-over-forward). This is what the
Jacobian trace term of the training objective needs.

All primitives accept plain ``numpy`` arrays too, in which case nothing is
recorded and the result is an ordinary array.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .exceptions import DimensionMismatch, NotScalar


class Tape:
    """Ordered record of primitive operations."""

    def __init__(self):
        self.nodes: list[Node] = []

    def leaf(self, value) -> "Node":
        return Node(self, np.asarray(value, dtype=float), (), None, ())

    def replay(self) -> list[np.ndarray]:
        """Recompute every node from the leaves; returns the replayed values in tape order."""
        values: list[np.ndarray] = []
        for node in self.nodes:
            if node.fn is None:
                values.append(node.value)
            else:
                args = [values[a.index] if isinstance(a, Node) else a for a in node.args]
                values.append(node.fn(*args))
        return values

    def backward(self, output: "Node", wrt: Sequence["Node"]) -> list[np.ndarray]:
        if output.tape is not self:
            raise ValueError("output node belongs to a different tape")
        if output.value.size != 1:
            raise NotScalar(f"backward needs a scalar output, got shape {output.value.shape}")
        grads: dict[int, np.ndarray] = {output.index: np.ones_like(output.value)}
        for node in reversed(self.nodes[: output.index + 1]):
            g = grads.pop(node.index, None)
            if g is None or node.fn is None:
                if g is not None:
                    grads[node.index] = g
                continue
            raw = [a.value if isinstance(a, Node) else a for a in node.args]
            for arg, vjp in zip(node.args, node.vjps):
                if not isinstance(arg, Node) or vjp is None:
                    continue
                contrib = vjp(g, node.value, *raw)
                prev = grads.get(arg.index)
                grads[arg.index] = contrib if prev is None else prev + contrib
        return [grads.get(n.index, np.zeros_like(n.value)) for n in wrt]


class Node:
    """A recorded array value."""

    __slots__ = ("tape", "value", "args", "fn", "vjps", "index")
    __array_priority__ = 1000
    __array_ufunc__ = None

    def __init__(self, tape: Tape, value, args, fn, vjps):
        self.tape = tape
        self.value = value
        self.args = args
        self.fn = fn
        self.vjps = vjps
        self.index = len(tape.nodes)
        tape.nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def T(self):
        return transpose(self)

    def __repr__(self):
        return f"Node(index={self.index}, shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, negative(other))

    def __rsub__(self, other):
        return add(other, negative(self))

    def __mul__(self, other):
        return multiply(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return negative(self)

    def __truediv__(self, other):
        if isinstance(other, Node):
            raise TypeError("division by a recorded node is not supported")
        return multiply(self, 1.0 / np.asarray(other, dtype=float))

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def sum(self, axis=None):
        return sum_(self, axis)


def _tape_of(*args) -> Tape | None:
    for a in args:
        if isinstance(a, Node):
            return a.tape
    return None


def _record(fn: Callable, args: tuple, vjps: tuple):
    tape = _tape_of(*args)
    raw = [a.value if isinstance(a, Node) else a for a in args]
    out = fn(*raw)
    if tape is None:
        return out
    return Node(tape, np.asarray(out, dtype=float), args, fn, vjps)


def unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _shape(x):
    return np.shape(x)


def add(a, b):
    return _record(
        np.add,
        (a, b),
        (
            lambda g, out, a_, b_: unbroadcast(g, _shape(a_)),
            lambda g, out, a_, b_: unbroadcast(g, _shape(b_)),
        ),
    )


def negative(a):
    return _record(np.negative, (a,), (lambda g, out, a_: -g,))


def multiply(a, b):
    return _record(
        np.multiply,
        (a, b),
        (
            lambda g, out, a_, b_: unbroadcast(g * b_, _shape(a_)),
            lambda g, out, a_, b_: unbroadcast(g * a_, _shape(b_)),
        ),
    )


def _swap(x):
    return np.swapaxes(x, -1, -2)


def matmul(a, b):
    if _tape_of(a, b) is not None and (np.ndim(_val(a)) < 2 or np.ndim(_val(b)) < 2):
        raise DimensionMismatch("recorded matmul needs operands with ndim >= 2")
    return _record(
        np.matmul,
        (a, b),
        (
            lambda g, out, a_, b_: unbroadcast(g @ _swap(b_), _shape(a_)),
            lambda g, out, a_, b_: unbroadcast(_swap(a_) @ g, _shape(b_)),
        ),
    )


def tanh(a):
    return _record(np.tanh, (a,), (lambda g, out, a_: g * (1.0 - out * out),))


def square(a):
    return multiply(a, a)


def sum_(a, axis=None):
    def fn(x):
        return np.sum(x, axis=axis)

    def vjp(g, out, x):
        if axis is None:
            return np.broadcast_to(g, x.shape).copy()
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(ax % x.ndim for ax in axes)
        return np.broadcast_to(np.expand_dims(g, axes), x.shape).copy()

    return _record(fn, (a,), (vjp,))


def mean(a, axis=None):
    n = np.size(_val(a)) if axis is None else np.shape(_val(a))[axis]
    return multiply(sum_(a, axis), 1.0 / n)


def reshape(a, shape):
    return _record(
        lambda x: np.reshape(x, shape),
        (a,),
        (lambda g, out, x: np.reshape(g, np.shape(x)),),
    )


def transpose(a):
    return _record(
        lambda x: np.swapaxes(x, -1, -2),
        (a,),
        (lambda g, out, x: np.swapaxes(g, -1, -2),),
    )


def concat(parts: Sequence, axis: int = -1):
    parts = tuple(parts)
    sizes = [np.shape(_val(p))[axis] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def fn(*xs):
        return np.concatenate(xs, axis=axis)

    def make_vjp(i):
        def vjp(g, out, *xs):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(bounds[i], bounds[i + 1])
            return g[tuple(idx)]

        return vjp

    return _record(fn, parts, tuple(make_vjp(i) for i in range(len(parts))))


def _val(x):
    return x.value if isinstance(x, Node) else x


def value(x) -> np.ndarray:
    """Plain array behind ``x`` (a node or an array)."""
    return np.asarray(_val(x))


# ---------------------------------------------------------------------------
# MLP


@dataclass
class MlpParams:
    """Fully connected network: tanh on hidden layers, identity on the output.

    ``weights[k]`` has shape (in, out) so batched inputs multiply on the left.
    Entries may be plain arrays or tape nodes.
    """

    weights: list
    biases: list
    activation: str = "tanh"

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise DimensionMismatch("need one bias per weight matrix and at least one layer")
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            if np.shape(_val(W))[1] != np.shape(_val(b))[0]:
                raise DimensionMismatch(f"layer {k}: weight/bias widths differ")
            if k and np.shape(_val(self.weights[k - 1]))[1] != np.shape(_val(W))[0]:
                raise DimensionMismatch(f"layer {k}: input width does not match previous layer")
        if self.activation != "tanh":
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def widths(self) -> list[int]:
        return [np.shape(_val(self.weights[0]))[0]] + [np.shape(_val(W))[1] for W in self.weights]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def arrays(self) -> list:
        """Parameters in flattening order: layer-major, weights before biases."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend((W, b))
        return out

    @property
    def size(self) -> int:
        return sum(np.size(_val(a)) for a in self.arrays())

    def flatten(self) -> np.ndarray:
        return np.concatenate([np.ravel(value(a)) for a in self.arrays()])

    def with_flat(self, flat: np.ndarray) -> "MlpParams":
        arrays = _split_flat(flat, [np.shape(value(a)) for a in self.arrays()])
        return MlpParams(arrays[0::2], arrays[1::2], self.activation)

    def record(self, tape: Tape) -> "MlpParams":
        return MlpParams(
            [tape.leaf(value(W)) for W in self.weights],
            [tape.leaf(value(b)) for b in self.biases],
            self.activation,
        )

    @classmethod
    def initialize(cls, widths: Sequence[int], rng, zero_last: bool = True) -> "MlpParams":
        """Gaussian init with std 1/sqrt(fan_in); the output layer is zero when ``zero_last``."""
        weights, biases = [], []
        for k in range(len(widths) - 1):
            fan_in, fan_out = widths[k], widths[k + 1]
            last = k == len(widths) - 2
            if last and zero_last:
                W = np.zeros((fan_in, fan_out))
            else:
                W = rng.standard_normal((fan_in, fan_out)) / np.sqrt(max(fan_in, 1))
            weights.append(W)
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)


def _split_flat(flat, shapes):
    flat = np.asarray(flat, dtype=float)
    total = sum(int(np.prod(s)) for s in shapes)
    if flat.shape != (total,):
        raise DimensionMismatch(f"expected {total} parameters, got {flat.shape}")
    out, pos = [], 0
    for s in shapes:
        k = int(np.prod(s))
        out.append(flat[pos : pos + k].reshape(s).copy())
        pos += k
    return out


@dataclass
class DualVector:
    primal: object
    tangent: object = field(default=None)

    def __post_init__(self):
        if self.tangent is None:
            self.tangent = np.zeros_like(value(self.primal))
        try:
            np.broadcast_shapes(np.shape(value(self.primal)), np.shape(value(self.tangent)))
        except ValueError:
            raise DimensionMismatch("tangent shape incompatible with primal") from None


def _check_input(params: MlpParams, z):
    width = params.widths[0]
    if np.shape(value(z))[-1] != width:
        raise DimensionMismatch(f"input width {np.shape(value(z))[-1]} != {width}")


def mlp_forward(params: MlpParams, z):
    """Evaluate the network on ``z`` of shape (in,) or (N, in)."""
    _check_input(params, z)
    single = np.ndim(value(z)) == 1
    h = reshape(z, (1, -1)) if single else z
    last = params.n_layers - 1
    for k, (W, b) in enumerate(zip(params.weights, params.biases)):
        a = h @ W + b
        h = tanh(a) if k < last else a
    return reshape(h, (-1,)) if single else h


def mlp_dual(params: MlpParams, z, dz) -> DualVector:
    """Propagate a primal batch ``z`` (N, in) and tangents ``dz`` (..., N or 1, in).

    The tangent may carry leading axes (one per direction); each hidden layer
    multiplies it by ``1 - tanh^2`` of the shared primal pre-activation.
    """
    _check_input(params, z)
    if np.shape(value(dz))[-1] != params.widths[0]:
        raise DimensionMismatch("direction width does not match network input")
    h, dh = z, dz
    last = params.n_layers - 1
    for k, (W, b) in enumerate(zip(params.weights, params.biases)):
        a = h @ W + b
        da = dh @ W
        if k < last:
            h = tanh(a)
            dh = (1.0 - h * h) * da
        else:
            h, dh = a, da
    return DualVector(h, dh)


def jvp(params: MlpParams, x, direction):
    """Jacobian-vector product of the network at ``x`` along ``direction``."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(direction, dtype=float)
    if x.shape != v.shape:
        raise DimensionMismatch(f"direction shape {v.shape} != input shape {x.shape}")
    single = x.ndim == 1
    out = mlp_dual(params, np.atleast_2d(x), np.atleast_2d(v))
    t = value(out.tangent)
    return t[0] if single else t


def grad(loss: Node, params) -> np.ndarray:
    """Flat gradient of a recorded scalar with respect to ``params``.

    ``params`` is an :class:`MlpParams` of tape leaves, or any sequence of
    leaves (or objects exposing ``arrays()``), flattened in order.
    """
    if not isinstance(loss, Node):
        raise NotScalar("loss was not recorded on a tape")
    leaves = params.arrays() if hasattr(params, "arrays") else list(params)
    grads = loss.tape.backward(loss, leaves)
    if not grads:
        return np.zeros(0)
    return np.concatenate([np.ravel(g) for g in grads])
