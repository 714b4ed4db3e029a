"""
Minimal reverse-mode automatic differentiation over dense float64 matrices.

Every forward pass records its operations on a fresh ``Tape``. Values are 2-D ``numpy`` arrays; scalars are 1x1
matrices. ``backward`` walks the tape in reverse and accumulates gradients on every node that requires one.
"""
from dataclasses import dataclass, field

import numpy as np

from mpns_lab.utils import DimensionError

ELEMENTWISE_KINDS = ("add", "sub", "mul", "tanh", "sigmoid", "relu", "negate", "scale")


def as_matrix(values):
    """
    Return a validated float64 copy of ``values`` as a 2-D matrix.

    Scalars become 1x1 matrices and 1-D sequences become a single row.
    """
    arr = np.array(values, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise DimensionError(f"Expected a matrix, got an array with {arr.ndim} dimensions.")

    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionError(f"Matrices need at least one row and one column, got {arr.shape}.")
    if not np.all(np.isfinite(arr)):
        raise ValueError("Matrix entries must be finite.")
    return arr


class Node:
    """
    A value participating in reverse-mode gradient computation.
    """

    __slots__ = ("tape", "value", "grad", "parents", "backward_rule", "requires_grad", "name")

    def __init__(self, tape, value, parents=(), backward_rule=None, requires_grad=False, name=None):
        self.tape = tape
        self.value = value
        self.grad = None
        self.parents = tuple(parents)
        self.backward_rule = backward_rule
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(name={self.name!r}, shape={self.shape}, requires_grad={self.requires_grad})"


class Tape:
    """
    Topologically ordered record of the nodes created during one forward pass.
    """

    def __init__(self):
        self.nodes = []
        self._trainable = {}
        self._frozen = {}

    def leaf(self, values, requires_grad=False, name=None):
        """
        Record a new input node holding a validated copy of ``values``.
        """
        node = Node(self, as_matrix(values), requires_grad=requires_grad, name=name)
        self.nodes.append(node)
        return node

    def parameter(self, name, array, trainable=True):
        """
        Bind a persistent parameter array as a leaf of this tape.

        Trainable bindings are shared per name so every use of a parameter accumulates into one gradient. Frozen
        bindings read the same values but never receive a gradient.
        """
        cache = self._trainable if trainable else self._frozen
        node = cache.get(name)
        if node is None:
            node = Node(self, array, requires_grad=trainable, name=name)
            cache[name] = node
            self.nodes.append(node)
        return node

    def gradients(self):
        """
        Return ``{name: gradient}`` for every trainable parameter bound to this tape.
        """
        return {
            name: node.grad if node.grad is not None else np.zeros_like(node.value)
            for name, node in self._trainable.items()
        }

    def record(self, value, parents, backward_rule, name=None):
        """
        Append the result of an operation, inheriting ``requires_grad`` from its parents.
        """
        requires_grad = any(p.requires_grad for p in parents)
        node = Node(
            self,
            value,
            parents=parents,
            backward_rule=backward_rule if requires_grad else None,
            requires_grad=requires_grad,
            name=name,
        )
        self.nodes.append(node)
        return node


def _tape_of(*nodes):
    tape = nodes[0].tape
    for n in nodes[1:]:
        if n.tape is not tape:
            raise ValueError("Operands belong to different tapes.")
    return tape


def _same_shape(op, a, b):
    if a.shape != b.shape:
        raise DimensionError(f"{op} needs equal shapes, got {a.shape} and {b.shape}.")


def matmul(a, b):
    """
    Matrix product ``a @ b``.
    """
    tape = _tape_of(a, b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}.")

    def rule(g):
        return g @ b.value.T, a.value.T @ g

    return tape.record(a.value @ b.value, (a, b), rule)


def add(a, b):
    _same_shape("add", a, b)
    return _tape_of(a, b).record(a.value + b.value, (a, b), lambda g: (g, g))


def sub(a, b):
    _same_shape("sub", a, b)
    return _tape_of(a, b).record(a.value - b.value, (a, b), lambda g: (g, -g))


def mul(a, b):
    _same_shape("mul", a, b)
    return _tape_of(a, b).record(a.value * b.value, (a, b), lambda g: (g * b.value, g * a.value))


def negate(x):
    return x.tape.record(-x.value, (x,), lambda g: (-g,))


def scale(x, c):
    c = float(c)
    return x.tape.record(c * x.value, (x,), lambda g: (c * g,))


def tanh(x):
    out = np.tanh(x.value)
    return x.tape.record(out, (x,), lambda g: (g * (1.0 - out * out),))


def sigmoid(x):
    # tanh form stays finite for large |x|
    out = 0.5 * (1.0 + np.tanh(0.5 * x.value))
    return x.tape.record(out, (x,), lambda g: (g * out * (1.0 - out),))


def relu(x):
    mask = x.value > 0.0
    return x.tape.record(np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,))


def elementwise(kind, *inputs, c=None):
    """
    Dispatch one of the elementwise operations by name.
    """
    if kind == "add":
        return add(*inputs)
    if kind == "sub":
        return sub(*inputs)
    if kind == "mul":
        return mul(*inputs)
    if kind == "tanh":
        return tanh(*inputs)
    if kind == "sigmoid":
        return sigmoid(*inputs)
    if kind == "relu":
        return relu(*inputs)
    if kind == "negate":
        return negate(*inputs)
    if kind == "scale":
        if c is None:
            raise ValueError("scale needs a constant c.")
        return scale(*inputs, c)
    raise NotImplementedError(f"Unknown elementwise operation {kind}.")


def add_bias(x, bias):
    """
    Add a 1xk bias row to every row of an nxk matrix.
    """
    tape = _tape_of(x, bias)
    if bias.shape != (1, x.shape[1]):
        raise DimensionError(f"Bias of shape {bias.shape} does not fit rows of shape {x.shape}.")
    return tape.record(x.value + bias.value, (x, bias), lambda g: (g, g.sum(axis=0, keepdims=True)))


def sum_all(x):
    """
    Sum of all entries as a 1x1 matrix.
    """
    ones = np.ones_like(x.value)
    return x.tape.record(np.array([[x.value.sum()]]), (x,), lambda g: (g[0, 0] * ones,))


def mean(x):
    """
    Mean of all entries as a 1x1 matrix.
    """
    size = x.value.size
    fill = np.full_like(x.value, 1.0 / size)
    return x.tape.record(np.array([[x.value.mean()]]), (x,), lambda g: (g[0, 0] * fill,))


def concat_cols(nodes):
    """
    Concatenate matrices with equal row counts side by side.
    """
    nodes = list(nodes)
    tape = _tape_of(*nodes)
    rows = {n.shape[0] for n in nodes}
    if len(rows) != 1:
        raise DimensionError(f"concat_cols needs equal row counts, got {[n.shape for n in nodes]}.")
    bounds = np.cumsum([0] + [n.shape[1] for n in nodes])

    def rule(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(nodes)))

    return tape.record(np.concatenate([n.value for n in nodes], axis=1), nodes, rule)


def slice_cols(x, start, stop):
    """
    Columns ``[start, stop)`` of ``x``.
    """
    if not 0 <= start < stop <= x.shape[1]:
        raise DimensionError(f"Column slice [{start}, {stop}) is outside a matrix of shape {x.shape}.")

    def rule(g):
        full = np.zeros_like(x.value)
        full[:, start:stop] = g
        return (full,)

    return x.tape.record(x.value[:, start:stop].copy(), (x,), rule)


def row_cosine(a, b, eps=1e-8):
    """
    Per-row cosine similarity of two nxk matrices, returned as nx1.

    Norms are smoothed as sqrt(|v|^2 + eps) so all-zero rows stay differentiable.
    """
    _same_shape("row_cosine", a, b)
    tape = _tape_of(a, b)
    na = np.sqrt((a.value * a.value).sum(axis=1, keepdims=True) + eps)
    nb = np.sqrt((b.value * b.value).sum(axis=1, keepdims=True) + eps)
    dot = (a.value * b.value).sum(axis=1, keepdims=True)
    cos = dot / (na * nb)

    def rule(g):
        ga = g * (b.value / (na * nb) - cos * a.value / (na * na))
        gb = g * (a.value / (na * nb) - cos * b.value / (nb * nb))
        return ga, gb

    return tape.record(cos, (a, b), rule)


def _standardized_columns(x, eps):
    centered = x - x.mean(axis=0, keepdims=True)
    norm = np.sqrt((centered * centered).sum(axis=0, keepdims=True) + eps)
    return centered / norm, norm


def _standardized_columns_grad(g, unit, norm):
    g_centered = (g - unit * (unit * g).sum(axis=0, keepdims=True)) / norm
    return g_centered - g_centered.mean(axis=0, keepdims=True)


def column_correlation(a, b, eps=1e-8):
    """
    Pearson correlation of every column of ``a`` (nxp) with every column of ``b`` (nxq), returned as pxq.

    The widths of ``a`` and ``b`` may differ. Column norms are smoothed like ``row_cosine`` so constant columns give
    zero correlation instead of a division by zero.
    """
    tape = _tape_of(a, b)
    if a.shape[0] != b.shape[0]:
        raise DimensionError(f"column_correlation needs equal row counts, got {a.shape} and {b.shape}.")
    unit_a, norm_a = _standardized_columns(a.value, eps)
    unit_b, norm_b = _standardized_columns(b.value, eps)

    def rule(g):
        return (
            _standardized_columns_grad(unit_b @ g.T, unit_a, norm_a),
            _standardized_columns_grad(unit_a @ g, unit_b, norm_b),
        )

    return tape.record(unit_a.T @ unit_b, (a, b), rule)


def softmax_cross_entropy(logits, labels, reduction="mean"):
    """
    Cross-entropy of row-wise softmax against integer class labels.

    ``reduction="mean"`` returns a 1x1 batch mean, ``"none"`` the nx1 per-row losses.
    """
    n, k = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise DimensionError(f"Expected {n} labels for logits of shape {logits.shape}, got shape {labels.shape}.")
    if not np.issubdtype(labels.dtype, np.integer):
        raise ValueError("Labels must be integer class indices.")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"Labels must lie in [0, {k}).")
    if reduction not in ("mean", "none"):
        raise NotImplementedError(f"Unknown reduction {reduction}.")

    shifted = logits.value - logits.value.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(n)
    per_row = (log_norm[:, 0] - shifted[rows, labels]).reshape(n, 1)
    probs = np.exp(shifted - log_norm)
    probs[rows, labels] -= 1.0

    if reduction == "mean":
        return logits.tape.record(
            np.array([[per_row.mean()]]), (logits,), lambda g: (g[0, 0] * probs / n,)
        )
    return logits.tape.record(per_row, (logits,), lambda g: (g * probs,))


def gradient_reversal(x, grl_lambda):
    """
    Identity on values; multiplies the incoming gradient by ``-grl_lambda`` on the way back.
    """
    grl_lambda = float(grl_lambda)
    if grl_lambda < 0.0:
        raise ValueError(f"grl_lambda must be nonnegative, got {grl_lambda}.")
    return x.tape.record(x.value, (x,), lambda g: (-grl_lambda * g,))


def stop_gradient(x):
    """
    Identity on values with no gradient path to ``x``.
    """
    node = Node(x.tape, x.value, requires_grad=False)
    x.tape.nodes.append(node)
    return node


def zero_grad(tape):
    for node in tape.nodes:
        node.grad = None


def backward(tape, root):
    """
    Populate ``grad`` on every node of ``tape`` that requires one, for the scalar ``root``.

    Repeated calls accumulate. Leaves that ``root`` does not depend on get an all-zero gradient.
    """
    if root.shape != (1, 1):
        raise ValueError(f"backward needs a scalar root, got shape {root.shape}.")
    if root.tape is not tape:
        raise ValueError("Root node is not recorded on this tape.")

    pending = {id(root): np.ones((1, 1))}
    for node in reversed(tape.nodes):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node.grad = g.copy() if node.grad is None else node.grad + g
        if node.backward_rule is None:
            continue
        for parent, parent_grad in zip(node.parents, node.backward_rule(g)):
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            pending[key] = pending[key] + parent_grad if key in pending else parent_grad

    for node in tape.nodes:
        if node.requires_grad and node.grad is None:
            node.grad = np.zeros_like(node.value)


@dataclass
class AdamState:
    """
    Running moments for the Adam optimizer, keyed by parameter name.
    """

    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """
    Apply one bias-corrected Adam update to ``params`` in place.

    Parameters without an entry in ``grads`` are treated as having a zero gradient.
    """
    state.step += 1
    t = state.step
    correction1 = 1.0 - beta1 ** t
    correction2 = 1.0 - beta2 ** t

    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        elif g.shape != p.shape:
            raise DimensionError(f"Gradient for {name} has shape {g.shape}, parameter has {p.shape}.")

        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        state.m[name] = m
        state.v[name] = v

        p -= lr * (m / correction1) / (np.sqrt(v / correction2) + eps)

    return params, state
