"""Eagerly recorded matrix expressions with reverse-mode gradients.

Every value in a recorded expression is a dense 2-D float64 array.  A
:class:`Tape` stores nodes in creation order, which is already a
topological order, so the backward sweep is a single reversed pass that
accumulates vector-Jacobian products into parent nodes.

The operation set is deliberately closed: matmul, broadcast add, scale,
the pointwise maps (tanh, sigmoid, softplus, exp, clamped log, abs,
power), row softmax, column mean, column max, weighted sum, dot,
transpose, and row selection.  Each records one node; nothing fuses.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import rng

# log() is clamped below at this value so cross-entropy terms stay
# finite for saturated sigmoids; the gradient is zero in the clamped
# region, matching the derivative of log(max(x, eps)).
LOG_EPS = 1e-7


def as_matrix(x, *, check_finite: bool = True) -> np.ndarray:
    """Coerce to a dense 2-D float64 array, rejecting empty or bad input."""
    arr = np.array(x, dtype=np.float64, copy=True)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError(f"empty matrix of shape {arr.shape}")
    if check_finite and not np.all(np.isfinite(arr)):
        raise ValueError("matrix contains non-finite values")
    return arr


class Node:
    """One recorded value.  Do not instantiate directly; use Tape or ops."""

    __slots__ = ("tape", "id", "op", "value", "parents", "vjp", "aux")

    def __init__(self, tape, node_id, op, value, parents, vjp, aux=None):
        self.tape = tape
        self.id = node_id
        self.op = op
        self.value = value
        self.parents = parents
        self.vjp = vjp
        self.aux = aux

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    # Sugar for readable expression code.  Each dunder lowers to the
    # primitive ops below, so the recorded graph stays within the set.
    def __add__(self, other: "Node") -> "Node":
        return add(self, other)

    def __sub__(self, other: "Node") -> "Node":
        return add(self, scale(other, -1.0))

    def __neg__(self) -> "Node":
        return scale(self, -1.0)

    def __mul__(self, s) -> "Node":
        return scale(self, s)

    def __rmul__(self, s) -> "Node":
        return scale(self, s)

    def __matmul__(self, other: "Node") -> "Node":
        return matmul(self, other)

    def __repr__(self) -> str:
        return f"Node(id={self.id}, op={self.op!r}, shape={self.shape})"


class Tape:
    """Recording context: leaves in, one scalar output out."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.params: dict[str, Node] = {}
        self.output: Node | None = None

    def _record(self, op, value, parents, vjp, aux=None) -> Node:
        node = Node(self, len(self.nodes), op, value, parents, vjp, aux)
        self.nodes.append(node)
        return node

    def constant(self, x) -> Node:
        return self._record("constant", as_matrix(x), (), None)

    def param(self, name: str, x) -> Node:
        """Register a named trainable leaf; names must be unique per tape."""
        if name in self.params:
            raise ValueError(f"duplicate parameter name: {name!r}")
        node = self._record("param", as_matrix(x), (), None)
        self.params[name] = node
        return node

    def finalize(self, output: Node) -> "Tape":
        """Designate the scalar output node.  Required before backward()."""
        if output.tape is not self:
            raise ValueError("output node belongs to a different tape")
        if output.shape != (1, 1):
            raise ValueError(f"output must be 1x1, got shape {output.shape}")
        self.output = output
        return self

    @property
    def output_value(self) -> float:
        if self.output is None:
            raise ValueError("tape has no designated output")
        return float(self.output.value[0, 0])


def _same_tape(*nodes: Node) -> Tape:
    tape = nodes[0].tape
    for node in nodes[1:]:
        if node.tape is not tape:
            raise ValueError("nodes belong to different tapes")
    return tape


# ---------------------------------------------------------------------------
# Stable pointwise maps shared with the plain-numpy forward paths.


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def softmax_rows(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# Primitive operations.


def matmul(a: Node, b: Node) -> Node:
    tape = _same_tape(a, b)
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    value = a.value @ b.value

    def vjp(g):
        return g @ b.value.T, a.value.T @ g

    return tape._record("matmul", value, (a, b), vjp)


def add(a: Node, b: Node) -> Node:
    """Elementwise sum; a 1xC right operand broadcasts over rows."""
    tape = _same_tape(a, b)
    if a.shape == b.shape:
        broadcast = False
    elif b.shape == (1, a.shape[1]):
        broadcast = True
    else:
        raise ValueError(f"add shape mismatch: {a.shape} + {b.shape}")
    value = a.value + b.value

    def vjp(g):
        gb = g.sum(axis=0, keepdims=True) if broadcast else g
        return g, gb

    return tape._record("add", value, (a, b), vjp)


def scale(a: Node, s) -> Node:
    """Multiply by a python float or by a 1x1 node."""
    if isinstance(s, Node):
        tape = _same_tape(a, s)
        if s.shape != (1, 1):
            raise ValueError(f"scale factor must be 1x1, got {s.shape}")
        value = a.value * s.value[0, 0]

        def vjp(g):
            return g * s.value[0, 0], np.array([[float(np.sum(g * a.value))]])

        return tape._record("scale", value, (a, s), vjp)
    factor = float(s)
    value = a.value * factor

    def vjp_const(g):
        return (g * factor,)

    return a.tape._record("scale", value, (a,), vjp_const)


def _pointwise(op: str, a: Node, value: np.ndarray, dfdx: np.ndarray) -> Node:
    def vjp(g):
        return (g * dfdx,)

    return a.tape._record(op, value, (a,), vjp)


def tanh(a: Node) -> Node:
    value = np.tanh(a.value)
    return _pointwise("tanh", a, value, 1.0 - value**2)


def sigmoid_op(a: Node) -> Node:
    value = sigmoid(a.value)
    return _pointwise("sigmoid", a, value, value * (1.0 - value))


def softplus_op(a: Node) -> Node:
    return _pointwise("softplus", a, softplus(a.value), sigmoid(a.value))


def exp(a: Node) -> Node:
    value = np.exp(a.value)
    return _pointwise("exp", a, value, value)


def log(a: Node) -> Node:
    """Natural log, clamped below at LOG_EPS (zero gradient when clamped)."""
    clamped = np.maximum(a.value, LOG_EPS)
    value = np.log(clamped)
    dfdx = np.where(a.value > LOG_EPS, 1.0 / clamped, 0.0)
    return _pointwise("log", a, value, dfdx)


def absolute(a: Node) -> Node:
    return _pointwise("abs", a, np.abs(a.value), np.sign(a.value))


def power(a: Node, p) -> Node:
    """Elementwise a**p for a float or 1x1-node exponent.

    A non-integer or node exponent requires a non-negative base; the
    exponent gradient uses base * log(base) with the 0 * log(0) limit
    taken as 0.
    """
    if isinstance(p, Node):
        tape = _same_tape(a, p)
        if p.shape != (1, 1):
            raise ValueError(f"exponent node must be 1x1, got {p.shape}")
        if np.any(a.value < 0.0):
            raise ValueError("power with a node exponent requires base >= 0")
        pval = p.value[0, 0]
        value = a.value**pval

        def vjp(g):
            base = a.value
            with np.errstate(divide="ignore", invalid="ignore"):
                dbase = np.where(base > 0.0, pval * value / base, 0.0)
                safe_log = np.where(base > 0.0, np.log(np.where(base > 0.0, base, 1.0)), 0.0)
            if pval == 1.0:
                dbase = np.full_like(base, 1.0)
            dp = float(np.sum(g * value * safe_log))
            return g * dbase, np.array([[dp]])

        return tape._record("power", value, (a, p), vjp)

    pval = float(p)
    if pval != round(pval) and np.any(a.value < 0.0):
        raise ValueError("fractional power requires base >= 0")
    value = a.value**pval
    with np.errstate(divide="ignore", invalid="ignore"):
        dfdx = pval * a.value ** (pval - 1.0)
    dfdx = np.where(np.isfinite(dfdx), dfdx, 0.0)
    return _pointwise("power", a, value, dfdx)


def transpose(a: Node) -> Node:
    def vjp(g):
        return (g.T,)

    return a.tape._record("transpose", a.value.T.copy(), (a,), vjp)


def row_softmax(a: Node) -> Node:
    value = softmax_rows(a.value)

    def vjp(g):
        inner = (g * value).sum(axis=1, keepdims=True)
        return (value * (g - inner),)

    return a.tape._record("row_softmax", value, (a,), vjp)


def col_softmax(a: Node) -> Node:
    """Softmax down each column, composed from transpose + row softmax."""
    return transpose(row_softmax(transpose(a)))


def column_mean(a: Node) -> Node:
    rows = a.shape[0]
    value = a.value.mean(axis=0, keepdims=True)

    def vjp(g):
        return (np.broadcast_to(g / rows, a.shape).copy(),)

    return a.tape._record("column_mean", value, (a,), vjp)


def column_max(a: Node) -> Node:
    """Per-column max; ties resolve to the lowest row index.

    The winning row indices are recorded on ``node.aux`` and receive the
    whole gradient (one-hot rows in the VJP).
    """
    idx = np.argmax(a.value, axis=0)
    value = a.value[idx, np.arange(a.shape[1])][np.newaxis, :]

    def vjp(g):
        out = np.zeros(a.shape)
        out[idx, np.arange(a.shape[1])] = g[0]
        return (out,)

    return a.tape._record("column_max", value, (a,), vjp, aux=idx)


def weighted_sum(w: Node, v: Node) -> Node:
    """Column sums of w * v; a Kx1 weight column broadcasts across columns."""
    tape = _same_tape(w, v)
    if w.shape[0] != v.shape[0]:
        raise ValueError(f"weighted_sum row mismatch: {w.shape} vs {v.shape}")
    if w.shape[1] == v.shape[1]:
        value = (w.value * v.value).sum(axis=0, keepdims=True)

        def vjp(g):
            return g * v.value, g * w.value

        return tape._record("weighted_sum", value, (w, v), vjp)
    if w.shape[1] == 1:
        value = (w.value * v.value).sum(axis=0, keepdims=True)

        def vjp_broadcast(g):
            return v.value @ g.T, w.value @ g

        return tape._record("weighted_sum", value, (w, v), vjp_broadcast)
    raise ValueError(f"weighted_sum column mismatch: {w.shape} vs {v.shape}")


def dot(a: Node, b: Node) -> Node:
    tape = _same_tape(a, b)
    if a.shape != b.shape:
        raise ValueError(f"dot shape mismatch: {a.shape} vs {b.shape}")
    value = np.array([[float(np.sum(a.value * b.value))]])

    def vjp(g):
        return g[0, 0] * b.value, g[0, 0] * a.value

    return tape._record("dot", value, (a, b), vjp)


def take_row(a: Node, index: int) -> Node:
    """Select one row as a 1xC matrix; the gradient scatters back to it."""
    if not 0 <= index < a.shape[0]:
        raise ValueError(f"row index {index} out of range for shape {a.shape}")

    def vjp(g):
        out = np.zeros(a.shape)
        out[index] = g[0]
        return (out,)

    return a.tape._record("take_row", a.value[index : index + 1].copy(), (a,), vjp, aux=index)


# ---------------------------------------------------------------------------
# Backward sweep and the finite-difference audit.


def backward(tape: Tape) -> dict[int, np.ndarray]:
    """Gradients of the scalar output w.r.t. every parameter node.

    Returns a map from parameter node id to an array of the parameter's
    shape.  Parameters the output does not depend on get zero gradients.
    """
    if tape.output is None:
        raise ValueError("tape has no designated output; call finalize()")
    grads: list[np.ndarray | None] = [None] * len(tape.nodes)
    grads[tape.output.id] = np.ones((1, 1))
    for node in reversed(tape.nodes):
        g = grads[node.id]
        if g is None or node.vjp is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if grads[parent.id] is None:
                grads[parent.id] = pg.copy()
            else:
                grads[parent.id] += pg
    out: dict[int, np.ndarray] = {}
    for node in tape.params.values():
        g = grads[node.id]
        out[node.id] = np.zeros(node.shape) if g is None else g
    return out


def param_gradients(tape: Tape) -> dict[str, np.ndarray]:
    """backward(), keyed by parameter name instead of node id."""
    by_id = backward(tape)
    return {name: by_id[node.id] for name, node in tape.params.items()}


@dataclass
class GradCheckResult:
    max_rel_err: float
    per_param: dict[str, float] = field(default_factory=dict)
    tie_perturbed: bool = False


def _has_max_ties(tape: Tape) -> bool:
    for node in tape.nodes:
        if node.op != "column_max":
            continue
        col_values = node.parents[0].value
        if np.any((col_values == node.value).sum(axis=0) > 1):
            return True
    return False


def check_gradients(
    loss_builder: Callable[[dict[str, np.ndarray]], Tape],
    point: dict[str, np.ndarray],
    h: float = 1e-5,
) -> GradCheckResult:
    """Audit reverse-mode gradients against central differences.

    ``loss_builder`` maps a dict of parameter arrays to a finalized
    scalar tape.  The relative error for each component is
    |analytic - central| / (|analytic| + |central| + 1e-12); the result
    carries the max per parameter and overall.

    If the tape at ``point`` contains a tied column max, the point is
    nudged by deterministic uniform noise of magnitude 1e-6 first (the
    one-hot max gradient is not a descent direction exactly at a tie),
    and the result is flagged.
    """
    point = {name: as_matrix(arr) for name, arr in point.items()}
    tape = loss_builder(point)
    tie_perturbed = False
    if _has_max_ties(tape):
        gen = rng.stream(0, rng.PURPOSE_INIT, 0)
        point = {
            name: arr + rng.uniform(gen, -1e-6, 1e-6, arr.shape)
            for name, arr in point.items()
        }
        tape = loss_builder(point)
        tie_perturbed = True

    analytic = param_gradients(tape)

    def loss_at(arrays: dict[str, np.ndarray]) -> float:
        value = loss_builder(arrays).output_value
        if not np.isfinite(value):
            raise FloatingPointError("loss is non-finite at a probe point")
        return value

    per_param: dict[str, float] = {}
    for name in point:
        base = point[name]
        grad = analytic[name]
        worst = 0.0
        flat = base.ravel()
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + h
            up = loss_at(point)
            flat[i] = original - h
            down = loss_at(point)
            flat[i] = original
            central = (up - down) / (2.0 * h)
            a = grad.ravel()[i]
            rel = abs(a - central) / (abs(a) + abs(central) + 1e-12)
            worst = max(worst, rel)
        per_param[name] = worst
    overall = max(per_param.values()) if per_param else 0.0
    return GradCheckResult(max_rel_err=overall, per_param=per_param, tie_perturbed=tie_perturbed)
