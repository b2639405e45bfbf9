"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

A :class:`Tape` is built once (define-then-run): parameter *slots* are
declared with a name and shape, constants are captured by value, and each
primitive appends one node.  :meth:`Tape.forward` binds arrays to the slots
and evaluates every node in order, caching the results; :meth:`Tape.backward`
then sweeps the cached values in reverse and returns the gradient of the
terminal scalar with respect to every slot.

Supported primitives: add, sub, mul, scale, neg, matmul, transpose, tanh,
sigmoid, relu, square, sum, mean, take.  Broadcasting is limited to
matrix + row vector (bias addition) and scalar * tensor.

Example::

    tape = Tape()
    x = tape.param("x", ())
    y = tape.param("y", ())
    tape.mul(x, y)
    tape.forward({"x": 2.0, "y": 3.0})   # 6.0
    tape.backward()                      # {"x": 3.0, "y": 2.0}
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, TapeStateError

__all__ = [
    "Node",
    "Tape",
    "GradientCheckReport",
    "forward_eval",
    "backward_grad",
    "check_gradient",
]


class Node:
    """Handle to a tape node; supports ``+ - * @`` and unary minus."""

    __slots__ = ("tape", "id", "shape")

    def __init__(self, tape: "Tape", node_id: int, shape: tuple):
        self.tape = tape
        self.id = node_id
        self.shape = shape

    def __add__(self, other):
        return self.tape.add(self, other)

    def __sub__(self, other):
        return self.tape.sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Node):
            return self.tape.mul(self, other)
        return self.tape.scale(self, float(other))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return self.tape.matmul(self, other)

    def __neg__(self):
        return self.tape.neg(self)

    @property
    def T(self):
        return self.tape.transpose(self)

    def __repr__(self):
        return f"Node(id={self.id}, op={self.tape._ops[self.id]!r}, shape={self.shape})"


def _matmul_shape(a: tuple, b: tuple) -> tuple:
    if len(a) == 2 and len(b) == 2 and a[1] == b[0]:
        return (a[0], b[1])
    if len(a) == 2 and len(b) == 1 and a[1] == b[0]:
        return (a[0],)
    if len(a) == 1 and len(b) == 2 and a[0] == b[0]:
        return (b[1],)
    raise ShapeError(f"matmul shapes {a} and {b} are incompatible")


class Tape:
    """Append-only record of primitive operations.

    Node ids are assigned in strictly increasing order and every node refers
    only to earlier ids, so the node list is already a topological order.
    """

    def __init__(self):
        self._ops: list[str] = []
        self._inputs: list[tuple] = []
        self._attrs: list = []
        self._shapes: list[tuple] = []
        self._slots: dict[str, int] = {}
        self._values: list | None = None
        self._terminal: int | None = None

    # -- construction -----------------------------------------------------

    def _append(self, op, inputs, shape, attr=None) -> Node:
        self._ops.append(op)
        self._inputs.append(tuple(n.id for n in inputs))
        self._attrs.append(attr)
        self._shapes.append(tuple(shape))
        self._values = None
        return Node(self, len(self._ops) - 1, tuple(shape))

    def _check(self, *nodes):
        for n in nodes:
            if not isinstance(n, Node) or n.tape is not self:
                raise TypeError("operands must be nodes of this tape")

    def param(self, name: str, shape) -> Node:
        """Declare a parameter slot to be bound at :meth:`forward` time."""
        if name in self._slots:
            raise ValueError(f"slot {name!r} declared twice")
        if isinstance(shape, (int, np.integer)):
            shape = (shape,)
        shape = tuple(int(s) for s in shape)
        node = self._append("param", (), shape, name)
        self._slots[name] = node.id
        return node

    def const(self, value) -> Node:
        arr = np.asarray(value, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError("constant contains non-finite entries")
        return self._append("const", (), arr.shape, arr)

    def add(self, a: Node, b: Node) -> Node:
        self._check(a, b)
        if a.shape == b.shape:
            return self._append("add", (a, b), a.shape)
        if len(a.shape) == 2 and b.shape == (a.shape[1],):
            return self._append("add_row", (a, b), a.shape)
        raise ShapeError(f"cannot add shapes {a.shape} and {b.shape}")

    def sub(self, a: Node, b: Node) -> Node:
        self._check(a, b)
        if a.shape != b.shape:
            raise ShapeError(f"cannot subtract shapes {a.shape} and {b.shape}")
        return self._append("sub", (a, b), a.shape)

    def mul(self, a: Node, b: Node) -> Node:
        self._check(a, b)
        if a.shape == b.shape:
            return self._append("mul", (a, b), a.shape)
        if b.shape == ():
            return self._append("mul_scalar", (a, b), a.shape)
        if a.shape == ():
            return self._append("mul_scalar", (b, a), b.shape)
        raise ShapeError(f"cannot multiply shapes {a.shape} and {b.shape}")

    def scale(self, a: Node, c: float) -> Node:
        self._check(a)
        return self._append("scale", (a,), a.shape, float(c))

    def neg(self, a: Node) -> Node:
        return self.scale(a, -1.0)

    def matmul(self, a: Node, b: Node) -> Node:
        self._check(a, b)
        return self._append("matmul", (a, b), _matmul_shape(a.shape, b.shape))

    def transpose(self, a: Node) -> Node:
        self._check(a)
        if len(a.shape) != 2:
            raise ShapeError("transpose needs a matrix")
        return self._append("transpose", (a,), a.shape[::-1])

    def tanh(self, a: Node) -> Node:
        self._check(a)
        return self._append("tanh", (a,), a.shape)

    def sigmoid(self, a: Node) -> Node:
        self._check(a)
        return self._append("sigmoid", (a,), a.shape)

    def relu(self, a: Node) -> Node:
        self._check(a)
        return self._append("relu", (a,), a.shape)

    def square(self, a: Node) -> Node:
        self._check(a)
        return self._append("square", (a,), a.shape)

    def sum(self, a: Node) -> Node:
        self._check(a)
        return self._append("sum", (a,), ())

    def mean(self, a: Node) -> Node:
        self._check(a)
        return self._append("mean", (a,), ())

    def take(self, a: Node, index) -> Node:
        """Basic (non-fancy) indexing, e.g. ``take(out, (0, 2))`` or ``take(out, (slice(None), 1))``."""
        self._check(a)
        shape = np.empty(a.shape, dtype=np.int8)[index].shape
        return self._append("take", (a,), shape, index)

    def activation(self, name: str, a: Node) -> Node:
        if name == "tanh":
            return self.tanh(a)
        if name == "sigmoid":
            return self.sigmoid(a)
        if name == "relu":
            return self.relu(a)
        raise ValueError(f"unknown activation {name!r}")

    # -- evaluation -------------------------------------------------------

    @property
    def slots(self) -> dict[str, tuple]:
        return {name: self._shapes[i] for name, i in self._slots.items()}

    def __len__(self):
        return len(self._ops)

    def forward(self, bindings: dict, output: Node | None = None) -> float:
        """Evaluate the tape; the terminal (``output`` or last node) must be scalar."""
        if not self._ops:
            raise TapeStateError("empty tape")
        terminal = len(self._ops) - 1 if output is None else output.id
        if self._shapes[terminal] != ():
            raise ShapeError(f"terminal node has shape {self._shapes[terminal]}, expected scalar")
        missing = set(self._slots) - set(bindings)
        if missing:
            raise ShapeError(f"unbound slots: {sorted(missing)}")

        vals: list = [None] * (terminal + 1)
        ops, ins, attrs = self._ops, self._inputs, self._attrs
        for i in range(terminal + 1):
            op = ops[i]
            a = vals[ins[i][0]] if ins[i] else None
            if op == "param":
                v = np.asarray(bindings[attrs[i]], dtype=np.float64)
                if v.shape != self._shapes[i]:
                    raise ShapeError(
                        f"slot {attrs[i]!r} bound with shape {v.shape}, declared {self._shapes[i]}"
                    )
            elif op == "const":
                v = attrs[i]
            elif op == "add" or op == "add_row":
                v = a + vals[ins[i][1]]
            elif op == "sub":
                v = a - vals[ins[i][1]]
            elif op == "mul" or op == "mul_scalar":
                v = a * vals[ins[i][1]]
            elif op == "scale":
                v = a * attrs[i]
            elif op == "matmul":
                v = a @ vals[ins[i][1]]
            elif op == "transpose":
                v = a.T
            elif op == "tanh":
                v = np.tanh(a)
            elif op == "sigmoid":
                v = _sigmoid(a)
            elif op == "relu":
                v = np.maximum(a, 0.0)
            elif op == "square":
                v = a * a
            elif op == "sum":
                v = np.sum(a)
            elif op == "mean":
                v = np.mean(a)
            elif op == "take":
                v = a[attrs[i]]
            else:  # pragma: no cover
                raise AssertionError(op)
            vals[i] = v
        self._values = vals
        self._terminal = terminal
        return float(vals[terminal])

    def value(self, node: Node) -> np.ndarray:
        """Cached forward value of ``node`` (after :meth:`forward`)."""
        if self._values is None or node.id >= len(self._values):
            raise TapeStateError("forward has not been run for this node")
        return self._values[node.id]

    def backward(self) -> dict[str, np.ndarray]:
        """Gradient of the terminal scalar with respect to each slot."""
        if self._values is None:
            raise TapeStateError("backward called before forward")
        vals, ops, ins, attrs = self._values, self._ops, self._inputs, self._attrs
        t = self._terminal
        grads: list = [None] * (t + 1)
        grads[t] = np.float64(1.0)

        def acc(j, g):
            if grads[j] is None:
                grads[j] = g
            else:
                grads[j] = grads[j] + g

        for i in range(t, -1, -1):
            g = grads[i]
            if g is None:
                continue
            op = ops[i]
            if op == "param" or op == "const":
                continue
            src = ins[i]
            if op == "add":
                acc(src[0], g)
                acc(src[1], g)
            elif op == "add_row":
                acc(src[0], g)
                acc(src[1], g.sum(axis=0))
            elif op == "sub":
                acc(src[0], g)
                acc(src[1], -g)
            elif op == "mul":
                acc(src[0], g * vals[src[1]])
                acc(src[1], g * vals[src[0]])
            elif op == "mul_scalar":
                acc(src[0], g * vals[src[1]])
                acc(src[1], np.sum(g * vals[src[0]]))
            elif op == "scale":
                acc(src[0], g * attrs[i])
            elif op == "matmul":
                a, b = vals[src[0]], vals[src[1]]
                if a.ndim == 2 and b.ndim == 2:
                    acc(src[0], g @ b.T)
                    acc(src[1], a.T @ g)
                elif a.ndim == 2:
                    acc(src[0], np.outer(g, b))
                    acc(src[1], a.T @ g)
                else:
                    acc(src[0], b @ g)
                    acc(src[1], np.outer(a, g))
            elif op == "transpose":
                acc(src[0], g.T)
            elif op == "tanh":
                y = vals[i]
                acc(src[0], g * (1.0 - y * y))
            elif op == "sigmoid":
                y = vals[i]
                acc(src[0], g * y * (1.0 - y))
            elif op == "relu":
                # subgradient at 0 is 0
                acc(src[0], g * (vals[src[0]] > 0.0))
            elif op == "square":
                acc(src[0], 2.0 * g * vals[src[0]])
            elif op == "sum":
                acc(src[0], np.full(self._shapes[src[0]], g))
            elif op == "mean":
                shape = self._shapes[src[0]]
                acc(src[0], np.full(shape, g / max(1, int(np.prod(shape)))))
            elif op == "take":
                full = np.zeros(self._shapes[src[0]])
                full[attrs[i]] = g
                acc(src[0], full)
            else:  # pragma: no cover
                raise AssertionError(op)

        out = {}
        for name, j in self._slots.items():
            gj = grads[j] if j <= t else None
            out[name] = np.zeros(self._shapes[j]) if gj is None else np.asarray(gj, dtype=np.float64)
        return out


def _sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0:
        return np.float64(1.0 / (1.0 + np.exp(-x)) if x >= 0 else np.exp(x) / (1.0 + np.exp(x)))
    # split by sign to avoid overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def forward_eval(tape: Tape, bindings: dict) -> float:
    return tape.forward(bindings)


def backward_grad(tape: Tape) -> dict[str, np.ndarray]:
    return tape.backward()


@dataclass
class GradientCheckReport:
    """Per-slot elementwise relative errors between analytic and FD gradients.

    Relative error is ``|a - f| / max(|a|, |f|, 1)``; the unit floor keeps
    near-zero gradients from reporting spurious blow-ups.
    """

    errors: dict
    tol: float
    flagged: list = field(default_factory=list)

    @property
    def max_error(self) -> float:
        return max((float(np.max(e)) if e.size else 0.0) for e in self.errors.values()) if self.errors else 0.0

    @property
    def max_error_per_slot(self) -> dict:
        return {k: (float(np.max(e)) if e.size else 0.0) for k, e in self.errors.items()}

    @property
    def passed(self) -> bool:
        return not self.flagged


def check_gradient(tape: Tape, bindings: dict, step: float = 1e-5, tol: float = 1e-5) -> GradientCheckReport:
    """Compare :meth:`Tape.backward` with central finite differences."""
    if step <= 0:
        raise ValueError("step must be positive")
    bound = {k: np.array(v, dtype=np.float64) for k, v in bindings.items()}
    tape.forward(bound)
    analytic = tape.backward()
    errors, flagged = {}, []
    for name in tape.slots:
        base = bound[name]
        err = np.zeros(base.shape)
        flat = base.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            fp = tape.forward(bound)
            flat[k] = orig - step
            fm = tape.forward(bound)
            flat[k] = orig
            fd = (fp - fm) / (2.0 * step)
            a = float(analytic[name].reshape(-1)[k])
            e = abs(a - fd) / max(abs(a), abs(fd), 1.0)
            err.reshape(-1)[k] = e
            if e > tol:
                flagged.append((name, np.unravel_index(k, base.shape) if base.shape else ()))
        errors[name] = err
    tape.forward(bound)
    return GradientCheckReport(errors=errors, tol=tol, flagged=flagged)
