"""Reverse-mode automatic differentiation on numpy arrays.

A graph is a DAG of :class:`Node` objects built eagerly: constructing an
operation computes its value right away whenever all operands already have
values (unbound :class:`Input` leaves defer evaluation until
:func:`forward` binds them).  :func:`forward` re-evaluates a built graph
from the current leaf values, which is what the finite-difference checker
and the optimizer rely on; :func:`backward` fills the gradient slot of
every node reachable from a scalar root and accumulates into
:class:`Parameter` buffers.

Only the primitives the hazard network and its likelihood need are
provided: matrix product, add, elementwise multiply, concatenate, slice,
ReLU, sine, natural log, Softplus, batch normalization, sum, mean and
negation.  Everything runs in double precision.
"""

from __future__ import annotations

import numpy as np

from .exceptions import GraphStateError, InputError, NumericalError, ShapeError

__all__ = [
    "Node",
    "Constant",
    "Input",
    "Parameter",
    "ParamSet",
    "BatchNormState",
    "forward",
    "backward",
    "finite_difference_check",
    "matmul",
    "add",
    "mul",
    "neg",
    "concat",
    "slice1d",
    "relu",
    "sin",
    "log",
    "softplus",
    "batchnorm",
    "sigmoid_values",
    "softplus_values",
]


def _f64(value) -> np.ndarray:
    return np.asarray(value, dtype=np.float64)


def sigmoid_values(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function on raw arrays."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus_values(x: np.ndarray) -> np.ndarray:
    """Softplus in the overflow-safe form max(x, 0) + log1p(exp(-|x|))."""
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


class Node:
    """One operation result: cached value plus a gradient slot.

    ``_compute`` recomputes the value from parent values and ``_grads``
    maps the upstream gradient to per-parent gradients.  Both close over
    whatever static payload the op needs.
    """

    _serial = 0

    def __init__(self, op, parents=(), compute=None, grads=None):
        self.op = op
        self.parents = tuple(parents)
        self._compute = compute
        self._grads = grads
        self.value = None
        self.grad = None
        Node._serial += 1
        self.label = f"{op}#{Node._serial}"
        if compute is not None and all(p.value is not None for p in self.parents):
            try:
                self.value = compute([p.value for p in self.parents])
            except ShapeError as exc:
                raise ShapeError(f"node {self.label}: {exc}") from None

    # sugar so model/loss code reads like numpy
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __sub__(self, other):
        return add(self, neg(_lift(other)))

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return _sum(self)

    def mean(self):
        return _mean(self)

    def __repr__(self):
        shape = None if self.value is None else np.shape(self.value)
        return f"Node({self.label}, shape={shape})"


class Constant(Node):
    def __init__(self, value):
        super().__init__("const")
        self.value = _f64(value)


class Input(Node):
    """Named leaf bound by :func:`forward`'s input map."""

    def __init__(self, name: str):
        super().__init__("input")
        self.name = name


class Parameter(Node):
    """Learnable leaf; ``grad`` persists and accumulates across backward passes."""

    def __init__(self, name: str, value):
        super().__init__("param")
        self.name = name
        self.value = _f64(value).copy()
        self.grad = np.zeros_like(self.value)


class ParamSet:
    """Named parameter collection with matching value/gradient buffers."""

    def __init__(self):
        self._params: dict[str, Parameter] = {}

    def add(self, name: str, value) -> Parameter:
        if name in self._params:
            raise InputError(f"duplicate parameter name {name!r}")
        p = Parameter(name, value)
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self):
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad[...] = 0.0

    def values_copy(self) -> dict[str, np.ndarray]:
        return {name: p.value.copy() for name, p in self._params.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for name, arr in values.items():
            p = self._params[name]
            if p.value.shape != np.shape(arr):
                raise ShapeError(
                    f"parameter {name!r}: stored shape {np.shape(arr)} != expected {p.value.shape}"
                )
            p.value[...] = arr


class BatchNormState:
    """Running statistics for one batch-norm op (inference-mode affine)."""

    def __init__(self, width: int, momentum: float = 0.9, eps: float = 1e-5):
        self.running_mean = np.zeros(width)
        self.running_var = np.ones(width)
        self.momentum = momentum
        self.eps = eps

    def snapshot(self) -> dict[str, np.ndarray]:
        return {"mean": self.running_mean.copy(), "var": self.running_var.copy()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        self.running_mean[...] = snap["mean"]
        self.running_var[...] = snap["var"]


def _lift(value) -> Node:
    if isinstance(value, Node):
        return value
    return Constant(value)


def _topo_order(root: Node) -> list[Node]:
    """Iterative post-order: parents always precede their consumers."""
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def forward(root: Node, inputs: dict[str, np.ndarray] | None = None) -> np.ndarray:
    """Re-evaluate the graph below ``root`` and return the root value.

    ``inputs`` binds :class:`Input` leaves by name; every input leaf must
    be bound on every call.  Constants keep their values and parameters
    are read from their live buffers, so calling this after an optimizer
    step (or a finite-difference perturbation) yields the updated output.
    """
    inputs = inputs or {}
    for node in _topo_order(root):
        if isinstance(node, Input):
            if node.name not in inputs:
                raise GraphStateError(f"input {node.name!r} is not bound")
            node.value = _f64(inputs[node.name])
        elif node._compute is not None:
            try:
                node.value = node._compute([p.value for p in node.parents])
            except ShapeError as exc:
                raise ShapeError(f"node {node.label}: {exc}") from None
    return root.value


def backward(root: Node) -> dict[str, np.ndarray]:
    """Gradient of the scalar root with respect to every reachable parameter.

    Gradients accumulate additively over multiple uses of a node within
    the graph.  Every reachable node gets its ``grad`` slot populated;
    ``Parameter.grad`` buffers additionally accumulate across calls
    (cleared via ``ParamSet.zero_grad``).  Returns this call's parameter
    gradients by name.
    """
    if root.value is None:
        raise GraphStateError("backward called before forward: root has no value")
    if np.size(root.value) != 1:
        raise ShapeError(
            f"backward requires a scalar root, got shape {np.shape(root.value)} at {root.label}"
        )
    order = _topo_order(root)
    for node in order:
        if node.value is None:
            raise GraphStateError(f"backward called before forward: {node.label} has no value")

    local: dict[int, np.ndarray] = {id(root): np.ones_like(root.value)}
    for node in reversed(order):
        g = local.get(id(node))
        if g is None:
            continue
        if node._grads is None:
            continue  # leaf
        parent_grads = node._grads([p.value for p in node.parents], node.value, g)
        for parent, pg in zip(node.parents, parent_grads):
            if pg is None:
                continue
            acc = local.get(id(parent))
            local[id(parent)] = pg if acc is None else acc + pg

    param_grads: dict[str, np.ndarray] = {}
    for node in order:
        g = local.get(id(node))
        if g is None:
            g = np.zeros_like(node.value)
        if isinstance(node, Parameter):
            node.grad += g
            param_grads[node.name] = g.copy()
        else:
            node.grad = g
    return param_grads


def finite_difference_check(
    root: Node,
    params: ParamSet,
    inputs: dict[str, np.ndarray] | None = None,
    epsilon: float = 1e-3,
) -> float:
    """Max relative error between backward and central finite differences.

    Relative error is |a - b| / max(|a|, |b|, 1e-8), maximized over every
    element of every parameter in ``params``.  Returns 0.0 for a
    parameter-free graph.  Parameter values are restored exactly on exit;
    gradient buffers are left as this check's backward pass wrote them.
    """
    if epsilon <= 0:
        raise InputError("epsilon must be positive")
    forward(root, inputs)
    params.zero_grad()
    analytic = backward(root)
    worst = 0.0
    for p in params:
        grad = analytic.get(p.name)
        if grad is None:
            grad = np.zeros_like(p.value)
        flat_value = p.value.reshape(-1)
        flat_grad = np.asarray(grad).reshape(-1)
        for i in range(flat_value.size):
            keep = flat_value[i]
            flat_value[i] = keep + epsilon
            hi = float(forward(root, inputs))
            flat_value[i] = keep - epsilon
            lo = float(forward(root, inputs))
            flat_value[i] = keep
            fd = (hi - lo) / (2.0 * epsilon)
            a, b = float(flat_grad[i]), fd
            err = abs(a - b) / max(abs(a), abs(b), 1e-8)
            worst = max(worst, err)
    forward(root, inputs)  # leave cached values consistent with restored params
    return worst


# ---------------------------------------------------------------------------
# primitives


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum out axes that numpy broadcasting introduced or expanded."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def add(a, b) -> Node:
    a, b = _lift(a), _lift(b)

    def compute(vals):
        x, y = vals
        try:
            return x + y
        except ValueError as exc:
            raise ShapeError(f"add: incompatible shapes {x.shape} and {y.shape}") from exc

    def grads(vals, value, g):
        x, y = vals
        return _unbroadcast(g, x.shape), _unbroadcast(g, y.shape)

    return Node("add", (a, b), compute, grads)


def mul(a, b) -> Node:
    a, b = _lift(a), _lift(b)

    def compute(vals):
        x, y = vals
        try:
            return x * y
        except ValueError as exc:
            raise ShapeError(f"mul: incompatible shapes {x.shape} and {y.shape}") from exc

    def grads(vals, value, g):
        x, y = vals
        return _unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)

    return Node("mul", (a, b), compute, grads)


def neg(a) -> Node:
    a = _lift(a)
    return Node("neg", (a,), lambda v: -v[0], lambda v, value, g: (-g,))


def matmul(a, b) -> Node:
    """Matrix product; accepts 2-D @ 2-D, 2-D @ 1-D and 1-D @ 2-D."""
    a, b = _lift(a), _lift(b)

    def compute(vals):
        x, y = vals
        if x.ndim not in (1, 2) or y.ndim not in (1, 2) or (x.ndim == 1 and y.ndim == 1):
            raise ShapeError(f"matmul: unsupported ranks {x.ndim} and {y.ndim}")
        if x.shape[-1] != y.shape[0]:
            raise ShapeError(f"matmul: inner dimensions disagree, {x.shape} @ {y.shape}")
        return x @ y

    def grads(vals, value, g):
        x, y = vals
        x2 = x if x.ndim == 2 else x.reshape(1, -1)
        y2 = y if y.ndim == 2 else y.reshape(-1, 1)
        g2 = g.reshape(x2.shape[0], y2.shape[1])
        gx = (g2 @ y2.T).reshape(x.shape)
        gy = (x2.T @ g2).reshape(y.shape)
        return gx, gy

    return Node("matmul", (a, b), compute, grads)


def concat(nodes, axis: int = 1) -> Node:
    nodes = [_lift(n) for n in nodes]

    def compute(vals):
        try:
            return np.concatenate(vals, axis=axis)
        except ValueError as exc:
            raise ShapeError(f"concat: shapes {[v.shape for v in vals]} on axis {axis}") from exc

    def grads(vals, value, g):
        sizes = [v.shape[axis] for v in vals]
        splits = np.cumsum(sizes)[:-1]
        return tuple(np.split(g, splits, axis=axis))

    return Node("concat", nodes, compute, grads)


def slice1d(a, start: int, stop: int) -> Node:
    """Contiguous slice of a 1-D node; the gradient scatters back."""
    a = _lift(a)

    def compute(vals):
        (x,) = vals
        if x.ndim != 1:
            raise ShapeError(f"slice1d expects a vector, got shape {x.shape}")
        return x[start:stop]

    def grads(vals, value, g):
        (x,) = vals
        out = np.zeros_like(x)
        out[start:stop] = g
        return (out,)

    return Node("slice", (a,), compute, grads)


def relu(a) -> Node:
    # subgradient at exactly 0 is 0
    a = _lift(a)
    return Node(
        "relu",
        (a,),
        lambda v: np.maximum(v[0], 0.0),
        lambda v, value, g: (g * (v[0] > 0.0),),
    )


def sin(a) -> Node:
    a = _lift(a)
    return Node("sin", (a,), lambda v: np.sin(v[0]), lambda v, value, g: (g * np.cos(v[0]),))


def log(a) -> Node:
    a = _lift(a)

    def compute(vals):
        (x,) = vals
        if np.any(x <= 0.0):
            raise NumericalError(f"log of non-positive value (min operand {float(np.min(x))!r})")
        return np.log(x)

    return Node("log", (a,), compute, lambda v, value, g: (g / v[0],))


def softplus(a) -> Node:
    a = _lift(a)
    return Node(
        "softplus",
        (a,),
        lambda v: softplus_values(v[0]),
        lambda v, value, g: (g * sigmoid_values(v[0]),),
    )


def _sum(a) -> Node:
    a = _lift(a)
    return Node(
        "sum",
        (a,),
        lambda v: np.asarray(np.sum(v[0])),
        lambda v, value, g: (np.broadcast_to(g, v[0].shape).copy(),),
    )


def _mean(a) -> Node:
    a = _lift(a)
    return Node(
        "mean",
        (a,),
        lambda v: np.asarray(np.mean(v[0])),
        lambda v, value, g: (np.broadcast_to(g / v[0].size, v[0].shape).copy(),),
    )


def batchnorm(x, gamma, beta, state: BatchNormState, training: bool) -> Node:
    """Per-feature batch normalization over axis 0 of an (n, f) node.

    Training mode normalizes by batch statistics (population variance) and
    folds them into the running buffers with the state's momentum; every
    re-evaluation of the graph repeats that update, which never changes
    the training-mode output itself.  Inference mode is the frozen affine
    transform built from the running statistics.
    """
    x, gamma, beta = _lift(x), _lift(gamma), _lift(beta)
    cache: dict[str, np.ndarray] = {}

    def compute(vals):
        xv, gv, bv = vals
        if xv.ndim != 2 or gv.shape != (xv.shape[1],) or bv.shape != (xv.shape[1],):
            raise ShapeError(
                f"batchnorm: x {xv.shape}, gamma {gv.shape}, beta {bv.shape} are inconsistent"
            )
        if training:
            mean = xv.mean(axis=0)
            diff = xv - mean
            var = np.einsum("ij,ij->j", diff, diff) / xv.shape[0]
            state.running_mean[...] = state.momentum * state.running_mean + (1 - state.momentum) * mean
            state.running_var[...] = state.momentum * state.running_var + (1 - state.momentum) * var
        else:
            mean = state.running_mean
            var = state.running_var
            diff = xv - mean
        inv_std = 1.0 / np.sqrt(var + state.eps)
        xhat = diff * inv_std
        cache["xhat"] = xhat
        cache["inv_std"] = inv_std
        return gv * xhat + bv

    def grads(vals, value, g):
        xv, gv, bv = vals
        xhat, inv_std = cache["xhat"], cache["inv_std"]
        dgamma = np.einsum("ij,ij->j", g, xhat)
        dbeta = g.sum(axis=0)
        if training:
            n = xv.shape[0]
            dxhat = g * gv
            m1 = dxhat.mean(axis=0)
            m2 = np.einsum("ij,ij->j", dxhat, xhat) / n
            dx = inv_std * (dxhat - m1 - xhat * m2)
            return dx, dgamma, dbeta
        return g * (gv * inv_std), dgamma, dbeta

    return Node("batchnorm", (x, gamma, beta), compute, grads)
