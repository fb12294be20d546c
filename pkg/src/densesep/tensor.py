"""Dense float tensors and reverse-mode autodiff over a recorded tape.

Everything numeric in this package flows through `Tensor`.  Operations
accept either plain tensors (no recording, cheap inference path) or
`Node` handles bound to a `Graph`; when at least one input is a node the
result is recorded so `backward` can later replay the tape in reverse.
"""

from __future__ import annotations

import numpy as np

from .errors import GradientCheckError, GraphError, ShapeMismatchError

__all__ = [
    "Tensor",
    "Node",
    "Graph",
    "GradMap",
    "tensor",
    "zeros",
    "ones",
    "apply_op",
    "value_of",
    "array_of",
    "concat",
    "narrow",
    "elementwise",
    "add",
    "sub",
    "mul",
    "relu",
    "square",
    "reduce_mean",
    "backward",
    "grad_check",
]

_ALLOWED_DTYPES = (np.float32, np.float64)


class Tensor:
    """Immutable dense n-d array of f32 or f64 values.

    The public constructor validates dtype and finiteness; results of
    internal operations are wrapped without re-validation.
    """

    __slots__ = ("data",)

    def __init__(self, data, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _ALLOWED_DTYPES:
            if np.issubdtype(arr.dtype, np.floating):
                raise TypeError(f"unsupported float dtype {arr.dtype}; use f32 or f64")
            arr = arr.astype(np.float32)
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor elements must be finite")
        self.data = arr

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        out = object.__new__(cls)
        out.data = arr
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> str:
        return "f64" if self.data.dtype == np.float64 else "f32"

    def astype(self, dtype) -> "Tensor":
        np_dtype = np.float64 if dtype in ("f64", np.float64) else np.float32
        return Tensor._wrap(np.ascontiguousarray(self.data, dtype=np_dtype))

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeMismatchError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def copy(self) -> "Tensor":
        return Tensor._wrap(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype})"


def tensor(data, dtype=np.float32) -> Tensor:
    return Tensor(data, dtype=dtype)


def zeros(shape, dtype=np.float32) -> Tensor:
    return Tensor._wrap(np.zeros(shape, dtype=dtype))


def ones(shape, dtype=np.float32) -> Tensor:
    return Tensor._wrap(np.ones(shape, dtype=dtype))


class Node:
    """A tensor recorded on a graph: op name, parents, value, saved context."""

    __slots__ = ("graph", "nid", "op", "parents", "value", "ctx", "backward_fn",
                 "name", "trainable")

    def __init__(self, graph, nid, op, parents, value, ctx, backward_fn,
                 name=None, trainable=False):
        self.graph = graph
        self.nid = nid
        self.op = op
        self.parents = parents
        self.value = value
        self.ctx = ctx
        self.backward_fn = backward_fn
        self.name = name
        self.trainable = trainable

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def is_leaf(self) -> bool:
        return self.op == "leaf"

    def __repr__(self):
        tag = self.name or self.op
        return f"Node({self.nid}, {tag}, shape={self.shape})"


class Graph:
    """Dynamically recorded computation tape.

    Nodes are appended in execution order, which is by construction a
    topological order.  A graph is built on one thread; after `backward`
    it stays valid read-only.
    """

    def __init__(self):
        self.nodes: list[Node] = []

    def leaf(self, t: Tensor, name=None, trainable=False) -> Node:
        if not isinstance(t, Tensor):
            t = Tensor(t)
        node = Node(self, len(self.nodes), "leaf", (), t, None, None,
                    name=name, trainable=trainable)
        self.nodes.append(node)
        return node

    def _record(self, op, parents, value, ctx, backward_fn) -> Node:
        node = Node(self, len(self.nodes), op, parents, value, ctx, backward_fn)
        self.nodes.append(node)
        return node

    def parameters(self) -> list[Node]:
        return [n for n in self.nodes if n.is_leaf and n.trainable]

    def __len__(self):
        return len(self.nodes)


class GradMap:
    """Gradients keyed by leaf node id, shapes mirroring the parameters."""

    def __init__(self, grads: dict):
        self._grads = grads

    def __getitem__(self, key) -> Tensor:
        if isinstance(key, Node):
            key = key.nid
        return self._grads[key]

    def __contains__(self, key):
        if isinstance(key, Node):
            key = key.nid
        return key in self._grads

    def __len__(self):
        return len(self._grads)

    def items(self):
        return self._grads.items()


def value_of(x) -> Tensor:
    """The Tensor behind a Tensor or Node."""
    return x.value if isinstance(x, Node) else x


def array_of(x) -> np.ndarray:
    return value_of(x).data


def apply_op(op, inputs, output_array, ctx, backward_fn):
    """Wrap an op result, recording it when any input is a graph node.

    `backward_fn(ctx, grad)` must return one gradient array per input
    (None for non-differentiable slots).  Returns a plain Tensor when no
    input is recorded, so inference pays nothing for the tape.
    """
    graph = None
    for x in inputs:
        if isinstance(x, Node):
            if graph is None:
                graph = x.graph
            elif graph is not x.graph:
                raise GraphError(f"op {op!r} mixes nodes from two graphs")
    out = Tensor._wrap(output_array)
    if graph is None:
        return out
    parents = tuple(x if isinstance(x, Node) else None for x in inputs)
    return graph._record(op, parents, out, ctx, backward_fn)


# ---------------------------------------------------------------------------
# core ops


def concat(inputs, axis: int):
    """Concatenate tensors along `axis`; all other dims must agree."""
    if len(inputs) == 0:
        raise ShapeMismatchError("concat of an empty input list")
    arrays = [array_of(x) for x in inputs]
    first = arrays[0].shape
    for a in arrays[1:]:
        if len(a.shape) != len(first) or any(
            a.shape[d] != first[d] for d in range(len(first)) if d != axis
        ):
            raise ShapeMismatchError(
                f"concat axis={axis}: off-axis mismatch between {first} and {a.shape}"
            )
    out = np.concatenate(arrays, axis=axis) if len(arrays) > 1 else arrays[0].copy()
    sizes = [a.shape[axis] for a in arrays]

    def bwd(ctx, grad):
        axis_, sizes_ = ctx
        bounds = np.cumsum(sizes_)[:-1]
        return tuple(np.ascontiguousarray(g) for g in np.split(grad, bounds, axis=axis_))

    return apply_op("concat", list(inputs), out, (axis, sizes), bwd)


def narrow(x, axis: int, start: int, stop: int):
    """Slice `[start, stop)` along `axis` (backward zero-pads back in place)."""
    a = array_of(x)
    if not (0 <= start < stop <= a.shape[axis]):
        raise ShapeMismatchError(
            f"narrow [{start}, {stop}) out of range for axis {axis} of {a.shape}"
        )
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, stop)
    out = np.ascontiguousarray(a[tuple(index)])

    def bwd(ctx, grad):
        shape, axis_, start_, stop_ = ctx
        full = np.zeros(shape, dtype=grad.dtype)
        idx = [slice(None)] * len(shape)
        idx[axis_] = slice(start_, stop_)
        full[tuple(idx)] = grad
        return (full,)

    return apply_op("narrow", [x], out, (a.shape, axis, start, stop), bwd)


def _as_operand(x, like: np.ndarray):
    """Accept python scalars as 0-d tensors of the companion's dtype."""
    if isinstance(x, (int, float)):
        return Tensor._wrap(np.asarray(x, dtype=like.dtype))
    return x


def _binary_shapes(op, a, b):
    sa, sb = a.shape, b.shape
    if sa == sb or a.size == 1 or b.size == 1:
        return
    raise ShapeMismatchError(f"{op}: shapes {sa} and {sb} differ (no broadcasting)")


def _unbroadcast(grad, shape):
    # inverse of scalar-with-tensor broadcasting only
    if grad.shape == shape:
        return grad
    return np.asarray(grad.sum(), dtype=grad.dtype).reshape(shape)


def add(a, b):
    b = _as_operand(b, array_of(a))
    a = _as_operand(a, array_of(b))
    av, bv = array_of(a), array_of(b)
    _binary_shapes("add", av, bv)

    def bwd(ctx, grad):
        sa, sb = ctx
        return _unbroadcast(grad, sa), _unbroadcast(grad, sb)

    return apply_op("add", [a, b], av + bv, (av.shape, bv.shape), bwd)


def sub(a, b):
    b = _as_operand(b, array_of(a))
    a = _as_operand(a, array_of(b))
    av, bv = array_of(a), array_of(b)
    _binary_shapes("sub", av, bv)

    def bwd(ctx, grad):
        sa, sb = ctx
        return _unbroadcast(grad, sa), _unbroadcast(-grad, sb)

    return apply_op("sub", [a, b], av - bv, (av.shape, bv.shape), bwd)


def mul(a, b):
    b = _as_operand(b, array_of(a))
    a = _as_operand(a, array_of(b))
    av, bv = array_of(a), array_of(b)
    _binary_shapes("mul", av, bv)

    def bwd(ctx, grad):
        av_, bv_ = ctx
        return _unbroadcast(grad * bv_, av_.shape), _unbroadcast(grad * av_, bv_.shape)

    return apply_op("mul", [a, b], av * bv, (av, bv), bwd)


def relu(a):
    av = array_of(a)
    out = np.maximum(av, 0)

    def bwd(ctx, grad):
        # subgradient 0 at exactly 0
        return (grad * (ctx > 0),)

    return apply_op("relu", [a], out, av, bwd)


def square(a):
    av = array_of(a)

    def bwd(ctx, grad):
        return (grad * (2 * ctx),)

    return apply_op("square", [a], av * av, av, bwd)


_ELEMENTWISE = {"add": add, "sub": sub, "mul": mul, "relu": relu, "square": square}


def elementwise(op: str, a, b=None):
    """Dispatch one of {add, mul, sub, relu, square} by name."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    if op in ("relu", "square"):
        if b is not None:
            raise TypeError(f"{op} is unary")
        return fn(a)
    if b is None:
        raise TypeError(f"{op} needs two operands")
    return fn(a, b)


def reduce_mean(a):
    """Mean over all elements; backward distributes 1/N."""
    av = array_of(a)
    if av.size == 0:
        raise ShapeMismatchError("reduce_mean of an empty tensor")
    out = np.asarray(av.mean(), dtype=av.dtype)

    def bwd(ctx, grad):
        shape, n, dtype = ctx
        return (np.full(shape, grad / n, dtype=dtype),)

    return apply_op("reduce_mean", [a], out, (av.shape, av.size, av.dtype), bwd)


# ---------------------------------------------------------------------------
# reverse pass


def backward(graph: Graph, root: Node) -> GradMap:
    """Accumulate d(root)/d(leaf) for every trainable leaf of `graph`.

    The root must be a scalar node of this graph.  Unused trainable
    leaves get zero gradients.  The graph remains usable read-only.
    """
    if not isinstance(root, Node) or root.graph is not graph:
        raise GraphError("backward root does not belong to the given graph")
    if root.value.size != 1:
        raise GraphError(f"backward root must be scalar, got shape {root.shape}")

    grads: dict[int, np.ndarray] = {
        root.nid: np.ones(root.value.data.shape, dtype=root.value.data.dtype)
    }
    for node in reversed(graph.nodes[: root.nid + 1]):
        grad = grads.pop(node.nid, None)
        if grad is None or node.is_leaf:
            if node.is_leaf and grad is not None:
                grads[node.nid] = grad  # keep leaf grads
            continue
        parent_grads = node.backward_fn(node.ctx, grad)
        for parent, pg in zip(node.parents, parent_grads):
            if parent is None or pg is None:
                continue
            acc = grads.get(parent.nid)
            grads[parent.nid] = pg if acc is None else acc + pg

    out = {}
    for leaf in graph.parameters():
        g = grads.get(leaf.nid)
        if g is None:
            g = np.zeros(leaf.value.data.shape, dtype=leaf.value.data.dtype)
        out[leaf.nid] = Tensor._wrap(g)
    return GradMap(out)


def grad_check(f, input: Tensor, eps: float = 1e-5, max_coords=None, seed: int = 0):
    """Max relative error between analytic and central-difference gradients.

    `f` must build a scalar from its single argument using this module's
    ops (it may close over fixed parameters).  The numeric side re-runs
    `f` on plain tensors, so it never touches the tape under test.  With
    `max_coords`, a deterministic random subset of coordinates is probed.
    """
    if input.dtype != "f64":
        raise TypeError("grad_check requires an f64 input")

    graph = Graph()
    x = graph.leaf(input, name="input", trainable=True)
    out = f(x)
    if not isinstance(out, Node) or out.graph is not graph:
        raise GraphError("grad_check function must return a node of the probe graph")
    if out.value.size != 1:
        raise GraphError("grad_check function must return a scalar")
    if not np.isfinite(out.value.data).all():
        raise GradientCheckError("function produced a non-finite value")
    analytic = backward(graph, out)[x].data.reshape(-1)

    base = input.data.reshape(-1)
    coords = np.arange(base.size)
    if max_coords is not None and max_coords < base.size:
        rng = np.random.default_rng(seed)
        coords = rng.choice(base.size, size=max_coords, replace=False)

    def eval_at(flat):
        r = f(Tensor._wrap(flat.reshape(input.shape)))
        return float(array_of(r).reshape(()))

    worst = 0.0
    for i in coords:
        probe = base.copy()
        probe[i] = base[i] + eps
        f_plus = eval_at(probe)
        probe[i] = base[i] - eps
        f_minus = eval_at(probe)
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise GradientCheckError(
                f"non-finite value while probing coordinate {i}", coordinate=int(i)
            )
        numeric = (f_plus - f_minus) / (2 * eps)
        denom = max(abs(analytic[i]), abs(numeric), 1e-12)
        worst = max(worst, abs(analytic[i] - numeric) / denom)
    return worst
