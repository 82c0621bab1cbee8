"""Minimal reverse-mode differentiation over dense float64 tensors.

A ComputationGraph is declared once per batch shape: declare named inputs
and parameters, chain builder methods into a scalar loss, then call
``forward(graph, values)`` and ``backward(graph)``.  Forward values are kept
on the graph and never mutated by backward, so a graph instance is cheap to
re-run and safe to inspect after either pass.  Distinct instances are
independent; nothing here is shared.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, InvalidArgumentError, NumericError

CHECKPOINT_MAGIC = b"NCGL"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class Tensor:
    """A shape plus row-major float64 values; the checkpoint/interface unit."""

    shape: tuple
    values: np.ndarray

    @staticmethod
    def wrap(arr) -> "Tensor":
        a = np.ascontiguousarray(arr, dtype=np.float64)
        return Tensor(shape=a.shape, values=a)

    def __post_init__(self):
        if tuple(self.values.shape) != tuple(self.shape):
            raise InvalidArgumentError(
                f"value shape {self.values.shape} != declared {self.shape}"
            )


@dataclass
class _Node:
    op: str
    inputs: list
    shape: tuple
    name: str | None = None
    dtype: str = "f8"
    extra: dict = field(default_factory=dict)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum grad back down to `shape` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class ComputationGraph:
    """Static acyclic graph; node handles are plain ints in topo order."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self._values: list | None = None
        self._grads: dict | None = None

    # -- declarations -----------------------------------------------------

    def _add(self, node: _Node) -> int:
        self.nodes.append(node)
        return len(self.nodes) - 1

    def input(self, name: str, shape, dtype: str = "f8") -> int:
        return self._add(_Node("input", [], tuple(shape), name=name, dtype=dtype))

    def param(self, name: str, shape) -> int:
        return self._add(_Node("param", [], tuple(shape), name=name))

    def const(self, value) -> int:
        a = np.asarray(value)
        a = a.astype(np.int64) if np.issubdtype(a.dtype, np.integer) else a.astype(np.float64)
        return self._add(_Node("const", [], tuple(a.shape), extra={"value": a}))

    # -- shape bookkeeping --------------------------------------------------

    def _shape(self, h: int) -> tuple:
        return self.nodes[h].shape

    def _bad(self, op: str, msg: str):
        raise InvalidArgumentError(f"node {len(self.nodes)} ({op}): {msg}")

    # -- ops ----------------------------------------------------------------

    def matmul(self, a: int, b: int) -> int:
        sa, sb = self._shape(a), self._shape(b)
        if len(sa) != 2 or len(sb) != 2 or sa[1] != sb[0]:
            self._bad("matmul", f"need (n,k)x(k,m), got {sa} x {sb}")
        return self._add(_Node("matmul", [a, b], (sa[0], sb[1])))

    def _broadcast_shape(self, op, sa, sb):
        try:
            return np.broadcast_shapes(sa, sb)
        except ValueError:
            self._bad(op, f"shapes {sa} and {sb} do not broadcast")

    def add(self, a: int, b: int) -> int:
        out = self._broadcast_shape("add", self._shape(a), self._shape(b))
        return self._add(_Node("add", [a, b], out))

    def mul(self, a: int, b: int) -> int:
        out = self._broadcast_shape("mul", self._shape(a), self._shape(b))
        return self._add(_Node("mul", [a, b], out))

    def scalar_affine(self, x: int, scale: float, offset: float) -> int:
        return self._add(
            _Node("scalar_affine", [x], self._shape(x),
                  extra={"scale": float(scale), "offset": float(offset)})
        )

    def concat(self, a: int, b: int, axis: int = 1) -> int:
        sa, sb = list(self._shape(a)), list(self._shape(b))
        if len(sa) != len(sb):
            self._bad("concat", f"rank mismatch {sa} vs {sb}")
        rest_a = sa[:axis] + sa[axis + 1:]
        rest_b = sb[:axis] + sb[axis + 1:]
        if rest_a != rest_b:
            self._bad("concat", f"non-concat dims differ: {sa} vs {sb}")
        out = list(sa)
        out[axis] = sa[axis] + sb[axis]
        return self._add(_Node("concat", [a, b], tuple(out), extra={"axis": axis}))

    def gather_rows(self, x: int, idx: int) -> int:
        sx, si = self._shape(x), self._shape(idx)
        if len(sx) != 2 or len(si) != 1:
            self._bad("gather_rows", f"need 2-D source and 1-D index, got {sx}, {si}")
        return self._add(_Node("gather_rows", [x, idx], (si[0], sx[1])))

    def reshape(self, x: int, shape) -> int:
        shape = tuple(shape)
        if int(np.prod(self._shape(x), dtype=np.int64)) != int(np.prod(shape, dtype=np.int64)):
            self._bad("reshape", f"{self._shape(x)} cannot reshape to {shape}")
        return self._add(_Node("reshape", [x], shape))

    def _unary(self, op: str, x: int) -> int:
        return self._add(_Node(op, [x], self._shape(x)))

    def relu(self, x: int) -> int:
        return self._unary("relu", x)

    def tanh(self, x: int) -> int:
        return self._unary("tanh", x)

    def sigmoid(self, x: int) -> int:
        return self._unary("sigmoid", x)

    def softplus(self, x: int) -> int:
        return self._unary("softplus", x)

    def hinge(self, x: int) -> int:
        # phi(a) = max(0, 1 - 2a); subgradient at the kink a = 1/2 is 0
        return self._unary("hinge", x)

    def row_softmax(self, x: int) -> int:
        if len(self._shape(x)) != 2:
            self._bad("row_softmax", f"need 2-D, got {self._shape(x)}")
        return self._unary("row_softmax", x)

    def softmax_xent(self, logits: int, targets: int) -> int:
        sl, st = self._shape(logits), self._shape(targets)
        if len(sl) != 2 or st != (sl[0],):
            self._bad("softmax_xent", f"need (B,m) logits and (B,) targets, got {sl}, {st}")
        return self._add(_Node("softmax_xent", [logits, targets], (sl[0],)))

    def sq_l2(self, x: int) -> int:
        sx = self._shape(x)
        out = (sx[0],) if len(sx) > 1 else ()
        return self._add(_Node("sq_l2", [x], out))

    def rowsum(self, x: int) -> int:
        if len(self._shape(x)) != 2:
            self._bad("rowsum", f"need 2-D, got {self._shape(x)}")
        return self._add(_Node("rowsum", [x], (self._shape(x)[0],)))

    def sum(self, x: int) -> int:
        return self._add(_Node("sum", [x], ()))

    def mean(self, x: int) -> int:
        return self._add(_Node("mean", [x], ()))


def _eval_node(node: _Node, vals: list) -> np.ndarray:
    a = vals[node.inputs[0]] if node.inputs else None
    b = vals[node.inputs[1]] if len(node.inputs) > 1 else None
    op = node.op
    if op == "matmul":
        return a @ b
    if op == "add":
        return a + b
    if op == "mul":
        return a * b
    if op == "scalar_affine":
        return node.extra["scale"] * a + node.extra["offset"]
    if op == "concat":
        return np.concatenate([a, b], axis=node.extra["axis"])
    if op == "gather_rows":
        return a[b]
    if op == "reshape":
        return a.reshape(node.shape)
    if op == "relu":
        return np.maximum(a, 0.0)
    if op == "tanh":
        return np.tanh(a)
    if op == "sigmoid":
        return 1.0 / (1.0 + np.exp(-a))
    if op == "softplus":
        return np.logaddexp(0.0, a)
    if op == "hinge":
        return np.maximum(0.0, 1.0 - 2.0 * a)
    if op == "row_softmax":
        z = a - a.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)
    if op == "softmax_xent":
        z = a - a.max(axis=1, keepdims=True)
        lse = np.log(np.exp(z).sum(axis=1))
        return lse - z[np.arange(a.shape[0]), b]
    if op == "sq_l2":
        axes = tuple(range(1, a.ndim)) if a.ndim > 1 else None
        return np.sum(a * a, axis=axes)
    if op == "rowsum":
        return a.sum(axis=1)
    if op == "sum":
        return np.asarray(a.sum())
    if op == "mean":
        return np.asarray(a.mean())
    raise InvalidArgumentError(f"unknown op {op!r}")


def forward(graph: ComputationGraph, inputs: dict) -> np.ndarray:
    """Evaluate every node in order; returns the last node's value.

    `inputs` supplies one array (or Tensor) per declared input AND param
    node, keyed by name.
    """
    vals: list = [None] * len(graph.nodes)
    for i, node in enumerate(graph.nodes):
        if node.op in ("input", "param"):
            if node.name not in inputs:
                raise InvalidArgumentError(f"missing value for {node.op} {node.name!r}")
            v = inputs[node.name]
            v = v.values if isinstance(v, Tensor) else np.asarray(v)
            if node.op == "param" or node.dtype == "f8":
                v = v.astype(np.float64, copy=False)
            else:
                v = v.astype(np.int64, copy=False)
            if tuple(v.shape) != node.shape:
                raise InvalidArgumentError(
                    f"node {i} ({node.op} {node.name!r}): shape {v.shape} != declared {node.shape}"
                )
            vals[i] = v
        elif node.op == "const":
            vals[i] = node.extra["value"]
        else:
            vals[i] = _eval_node(node, vals)
    graph._values = vals
    graph._grads = None
    return vals[-1]


def value_of(graph: ComputationGraph, handle: int) -> np.ndarray:
    """Read a node's forward value (forward must have run)."""
    if graph._values is None:
        raise InvalidArgumentError("forward has not run")
    return graph._values[handle]


def backward(graph: ComputationGraph) -> dict:
    """Reverse accumulation from the (scalar) last node.

    Returns {param name: gradient array}.  Forward values are read, not
    modified.
    """
    if graph._values is None:
        raise InvalidArgumentError("forward has not run")
    vals = graph._values
    if np.asarray(vals[-1]).size != 1:
        raise InvalidArgumentError(
            f"final node must be scalar, has shape {np.asarray(vals[-1]).shape}"
        )
    grads: list = [None] * len(graph.nodes)
    grads[-1] = np.ones_like(np.asarray(vals[-1], dtype=np.float64))

    def accum(h: int, g: np.ndarray):
        if graph.nodes[h].op == "const" or (
            graph.nodes[h].op == "input" and graph.nodes[h].dtype != "f8"
        ):
            return
        grads[h] = g if grads[h] is None else grads[h] + g

    for i in range(len(graph.nodes) - 1, -1, -1):
        node, g = graph.nodes[i], grads[i]
        if g is None or node.op in ("input", "param", "const"):
            continue
        a_h = node.inputs[0]
        a = vals[a_h]
        out = vals[i]
        op = node.op
        if op == "matmul":
            b_h = node.inputs[1]
            accum(a_h, g @ vals[b_h].T)
            accum(b_h, a.T @ g)
        elif op == "add":
            b_h = node.inputs[1]
            accum(a_h, _unbroadcast(g, a.shape))
            accum(b_h, _unbroadcast(g, vals[b_h].shape))
        elif op == "mul":
            b_h = node.inputs[1]
            accum(a_h, _unbroadcast(g * vals[b_h], a.shape))
            accum(b_h, _unbroadcast(g * a, vals[b_h].shape))
        elif op == "scalar_affine":
            accum(a_h, node.extra["scale"] * g)
        elif op == "concat":
            axis = node.extra["axis"]
            split = a.shape[axis]
            sl_a = [slice(None)] * g.ndim
            sl_b = [slice(None)] * g.ndim
            sl_a[axis] = slice(0, split)
            sl_b[axis] = slice(split, None)
            accum(a_h, g[tuple(sl_a)])
            accum(node.inputs[1], g[tuple(sl_b)])
        elif op == "gather_rows":
            idx = vals[node.inputs[1]]
            ga = np.zeros_like(a)
            np.add.at(ga, idx, g)
            accum(a_h, ga)
        elif op == "reshape":
            accum(a_h, g.reshape(a.shape))
        elif op == "relu":
            accum(a_h, g * (a > 0.0))
        elif op == "tanh":
            accum(a_h, g * (1.0 - out * out))
        elif op == "sigmoid":
            accum(a_h, g * out * (1.0 - out))
        elif op == "softplus":
            accum(a_h, g / (1.0 + np.exp(-a)))
        elif op == "hinge":
            accum(a_h, -2.0 * g * (a < 0.5))
        elif op == "row_softmax":
            accum(a_h, out * (g - (g * out).sum(axis=1, keepdims=True)))
        elif op == "softmax_xent":
            targets = vals[node.inputs[1]]
            z = a - a.max(axis=1, keepdims=True)
            e = np.exp(z)
            soft = e / e.sum(axis=1, keepdims=True)
            soft[np.arange(a.shape[0]), targets] -= 1.0
            accum(a_h, soft * g[:, None])
        elif op == "sq_l2":
            shape = (slice(None),) + (None,) * (a.ndim - 1)
            accum(a_h, 2.0 * a * (g[shape] if a.ndim > 1 else g))
        elif op == "rowsum":
            accum(a_h, np.broadcast_to(g[:, None], a.shape).copy())
        elif op == "sum":
            accum(a_h, np.full_like(a, float(g)))
        elif op == "mean":
            accum(a_h, np.full_like(a, float(g) / a.size))
        else:
            raise InvalidArgumentError(f"unknown op {op!r}")

    out = {}
    for i, node in enumerate(graph.nodes):
        if node.op == "param":
            gi = grads[i]
            if node.name not in out:
                out[node.name] = gi if gi is not None else np.zeros(node.shape)
            elif gi is not None:
                # the same parameter may appear as several nodes (e.g. a
                # discriminator applied to both real and fake batches);
                # their gradients add
                out[node.name] = out[node.name] + gi
    graph._grads = out
    return out


# -- optimizers --------------------------------------------------------------


@dataclass
class OptimizerState:
    kind: str
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @staticmethod
    def sgd(learning_rate: float) -> "OptimizerState":
        return OptimizerState(kind="SGD", learning_rate=learning_rate)

    @staticmethod
    def adam(learning_rate: float, beta1: float = 0.9, beta2: float = 0.999,
             eps: float = 1e-8) -> "OptimizerState":
        return OptimizerState(kind="Adam", learning_rate=learning_rate,
                              beta1=beta1, beta2=beta2, eps=eps)


def optimizer_step(params: dict, grads: dict, state: OptimizerState) -> dict:
    """One SGD/Adam update; returns a fresh params dict, mutates state buffers."""
    if state.kind not in ("SGD", "Adam"):
        raise InvalidArgumentError(f"unknown optimizer kind {state.kind!r}")
    for name, g in grads.items():
        if name not in params:
            raise InvalidArgumentError(f"gradient for unknown parameter {name!r}")
        if np.asarray(g).shape != np.asarray(params[name]).shape:
            raise InvalidArgumentError(
                f"gradient shape {np.asarray(g).shape} != parameter shape "
                f"{np.asarray(params[name]).shape} for {name!r}"
            )
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
    state.step_count += 1
    out = dict(params)
    lr = state.learning_rate
    for name, g in grads.items():
        p = np.asarray(params[name], dtype=np.float64)
        g = np.asarray(g, dtype=np.float64)
        if state.kind == "SGD":
            out[name] = p - lr * g
            continue
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m, v = np.zeros_like(p), np.zeros_like(p)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        t = state.step_count
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        out[name] = p - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return out


# -- checkpoints ---------------------------------------------------------------


def save_checkpoint(path, params: dict) -> None:
    """magic "NCGL", u32 version, then per tensor:
    u32 name length, name bytes, u32 rank, u32 dims, f8 values; all little-endian."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        for name, arr in params.items():
            a = np.asarray(arr, dtype="<f8")  # tobytes() below makes the C-order copy
            nb = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", a.ndim))
            fh.write(struct.pack(f"<{a.ndim}I", *a.shape))
            fh.write(a.tobytes())


def load_checkpoint(path) -> dict:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"bad checkpoint magic {blob[:4]!r}")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    off = 8
    out = {}
    try:
        while off < len(blob):
            (name_len,) = struct.unpack_from("<I", blob, off)
            off += 4
            name = blob[off:off + name_len].decode("utf-8")
            off += name_len
            (rank,) = struct.unpack_from("<I", blob, off)
            off += 4
            dims = struct.unpack_from(f"<{rank}I", blob, off)
            off += 4 * rank
            count = int(np.prod(dims, dtype=np.int64)) if rank else 1
            if off + 8 * count > len(blob):
                raise FormatError("truncated tensor payload")
            vals = np.frombuffer(blob, dtype="<f8", count=count, offset=off)
            off += 8 * count
            out[name] = vals.reshape(dims).astype(np.float64)
    except struct.error as exc:
        raise FormatError(f"truncated checkpoint: {exc}") from exc
    return out
