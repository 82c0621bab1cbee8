"""Generator, projection discriminator, and classifier networks.

All forwards run through diffcomp graphs; the builders here append a net's
ops to a caller-supplied graph under a name prefix, so the training module
can compose G into D into a loss and differentiate end to end.  Convenience
wrappers construct a one-shot graph for plain evaluation.

The discriminator is the projection form  D(x,y) = onehot(y)' V psi(x) +
v' psi2(x) + c  with a shared tanh trunk and two linear heads.  The scalar
bias c is trainable and starts at 0.5: the hinge pivots there, so centering
the initial output spread on the pivot leaves roughly half of each batch
with live gradient on both the real and fake terms instead of a dead zone.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import diffcomp as dc
from .errors import InvalidArgumentError

DEFAULT_FEATURE_DIM = 64  # width of both discriminator feature heads


def one_hot(labels: np.ndarray, m: int) -> np.ndarray:
    y = np.asarray(labels)
    if y.ndim != 1:
        raise InvalidArgumentError(f"labels must be 1-D, got shape {y.shape}")
    if y.size and (y.min() < 0 or y.max() >= m):
        raise InvalidArgumentError(
            f"labels must lie in [0, {m}), got range [{y.min()}, {y.max()}]"
        )
    out = np.zeros((y.shape[0], m))
    out[np.arange(y.shape[0]), y] = 1.0
    return out


def _init_dense(rng: np.random.Generator, dims: list, weights: dict, prefix: str = ""):
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        weights[f"{prefix}w{i}"] = rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)
        weights[f"{prefix}b{i}"] = np.zeros(fan_out)


def _append_dense(g: dc.ComputationGraph, prefix: str, x, dims: list,
                  final_linear: bool = True):
    """Chain len(dims)-1 dense layers onto node x; tanh between layers."""
    n_layers = len(dims) - 1
    for i in range(n_layers):
        w = g.param(f"{prefix}w{i}", (dims[i], dims[i + 1]))
        b = g.param(f"{prefix}b{i}", (dims[i + 1],))
        x = g.add(g.matmul(x, w), b)
        if i < n_layers - 1 or not final_linear:
            x = g.tanh(x)
    return x


def _prefixed(weights: dict, prefix: str) -> dict:
    return {prefix + k: v for k, v in weights.items()}


# -- generator -----------------------------------------------------------------


@dataclass(frozen=True)
class GeneratorParams:
    d_z: int
    m: int
    d_x: int
    hidden: tuple
    weights: dict

    def layer_dims(self) -> list:
        return [self.d_z + self.m, *self.hidden, self.d_x]


def init_generator(d_z: int, m: int, d_x: int, hidden, rng: np.random.Generator) -> GeneratorParams:
    p = GeneratorParams(d_z=d_z, m=m, d_x=d_x, hidden=tuple(hidden), weights={})
    _init_dense(rng, p.layer_dims(), p.weights)
    return p


def build_generator(g: dc.ComputationGraph, p: GeneratorParams, z, y_onehot,
                    prefix: str = "g."):
    """Append G(z;y) to the graph; z and y_onehot are existing nodes."""
    x = g.concat(z, y_onehot, axis=1)
    return _append_dense(g, prefix, x, p.layer_dims())


def gen_forward(p: GeneratorParams, z: np.ndarray, y: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    g = dc.ComputationGraph()
    zn = g.input("z", z.shape)
    yn = g.input("y1h", (z.shape[0], p.m))
    build_generator(g, p, zn, yn)
    vals = {"z": z, "y1h": one_hot(y, p.m), **_prefixed(p.weights, "g.")}
    return dc.forward(g, vals)


# -- projection discriminator ----------------------------------------------------


@dataclass(frozen=True)
class ProjDiscParams:
    d_x: int
    m: int
    d_feat: int          # width of psi, paired with V
    d_feat2: int         # width of psi2, paired with v
    hidden: tuple
    concat_y: bool
    weights: dict        # trunk t.w*/t.b*, heads psi.*/psi2.*, V, v, c

    def trunk_dims(self) -> list:
        d_in = self.d_x + (self.m if self.concat_y else 0)
        return [d_in, *self.hidden]


def init_disc(d_x: int, m: int, hidden, rng: np.random.Generator,
              d_feat: int = DEFAULT_FEATURE_DIM, d_feat2: int = DEFAULT_FEATURE_DIM,
              concat_y: bool = False) -> ProjDiscParams:
    if not hidden:
        raise InvalidArgumentError("discriminator needs at least one hidden layer")
    p = ProjDiscParams(d_x=d_x, m=m, d_feat=d_feat, d_feat2=d_feat2,
                       hidden=tuple(hidden), concat_y=concat_y, weights={})
    dims = p.trunk_dims()
    _init_dense(rng, dims, p.weights, "t.")
    w = dims[-1]
    p.weights["psi.w"] = rng.standard_normal((w, d_feat)) / np.sqrt(w)
    p.weights["psi.b"] = np.zeros(d_feat)
    p.weights["psi2.w"] = rng.standard_normal((w, d_feat2)) / np.sqrt(w)
    p.weights["psi2.b"] = np.zeros(d_feat2)
    p.weights["V"] = rng.standard_normal((m, d_feat)) * 0.1
    p.weights["v"] = rng.standard_normal(d_feat2) * 0.1
    # a zero score starts reals on the satisfied side of their margin hinge
    # and fakes on the live side of theirs, so the game ignites from the
    # fake term alone instead of stalling at the kink
    p.weights["c"] = np.asarray(0.0)
    return p


def build_disc(g: dc.ComputationGraph, p: ProjDiscParams, x, y_int,
               prefix: str = "d.", use_projection: bool = True):
    """Append D(x,y) to the graph; returns a (batch,) node.

    y_int is an integer-label node; the one-hot needed for concat_y is taken
    from a constant identity table so the label path stays differentiable
    only where it should be (nowhere).
    """
    if p.concat_y:
        eye = g.const(np.eye(p.m))
        x = g.concat(x, g.gather_rows(eye, y_int), axis=1)
    trunk = x
    dims = p.trunk_dims()
    for i in range(len(dims) - 1):
        w = g.param(f"{prefix}t.w{i}", (dims[i], dims[i + 1]))
        b = g.param(f"{prefix}t.b{i}", (dims[i + 1],))
        trunk = g.tanh(g.add(g.matmul(trunk, w), b))
    width = dims[-1]
    psi = g.add(g.matmul(trunk, g.param(f"{prefix}psi.w", (width, p.d_feat))),
                g.param(f"{prefix}psi.b", (p.d_feat,)))
    psi2 = g.add(g.matmul(trunk, g.param(f"{prefix}psi2.w", (width, p.d_feat2))),
                 g.param(f"{prefix}psi2.b", (p.d_feat2,)))
    v_col = g.reshape(g.param(f"{prefix}v", (p.d_feat2,)), (p.d_feat2, 1))
    batch = g._shape(x)[0]
    lin = g.reshape(g.matmul(psi2, v_col), (batch,))
    out = g.add(lin, g.param(f"{prefix}c", ()))
    if use_projection:
        rows = g.gather_rows(g.param(f"{prefix}V", (p.m, p.d_feat)), y_int)
        out = g.add(g.rowsum(g.mul(rows, psi)), out)
    return out


def disc_forward(x: np.ndarray, y: np.ndarray, p: ProjDiscParams,
                 concat_y: bool | None = None, use_projection: bool = True) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    one_hot(y, p.m)  # range validation
    if concat_y is not None and concat_y != p.concat_y:
        p = replace(p, concat_y=concat_y)
    g = dc.ComputationGraph()
    xn = g.input("x", x.shape)
    yn = g.input("y", y.shape, dtype="i8")
    build_disc(g, p, xn, yn, use_projection=use_projection)
    return dc.forward(g, {"x": x, "y": y, **_prefixed(p.weights, "d.")})


def project_constraints(p: ProjDiscParams) -> ProjDiscParams:
    """Rescale each V column whose max |entry| exceeds 1 and v if its L2
    norm exceeds 1; everything else passes through untouched."""
    w = dict(p.weights)
    v_mat = np.asarray(w["V"], dtype=np.float64)
    col_max = np.abs(v_mat).max(axis=0) if v_mat.size else np.zeros(0)
    w["V"] = v_mat / np.maximum(col_max, 1.0)
    vec = np.asarray(w["v"], dtype=np.float64)
    norm = float(np.linalg.norm(vec))
    if norm > 1.0:
        vec = vec / norm
    w["v"] = vec
    return replace(p, weights=w)


# -- classifiers -----------------------------------------------------------------


@dataclass(frozen=True)
class ClassifierParams:
    d_x: int
    m: int
    hidden: tuple
    weights: dict

    def layer_dims(self) -> list:
        return [self.d_x, *self.hidden, self.m]


def init_classifier(d_x: int, m: int, hidden, rng: np.random.Generator) -> ClassifierParams:
    p = ClassifierParams(d_x=d_x, m=m, hidden=tuple(hidden), weights={})
    _init_dense(rng, p.layer_dims(), p.weights)
    return p


def build_classifier(g: dc.ComputationGraph, p: ClassifierParams, x, prefix: str = "h."):
    return _append_dense(g, prefix, x, p.layer_dims())


def classifier_logits(p: ClassifierParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    g = dc.ComputationGraph()
    xn = g.input("x", x.shape)
    build_classifier(g, p, xn)
    return dc.forward(g, {"x": x, **_prefixed(p.weights, "h.")})


def classifier_predict(p: ClassifierParams, x: np.ndarray) -> np.ndarray:
    return np.argmax(classifier_logits(p, x), axis=1)


def train_classifier(x: np.ndarray, y: np.ndarray, hidden, epochs: int, lr: float,
                     seed: int, batch_size: int = 256, m: int | None = None):
    """Adam on softmax cross-entropy; returns (params, final training accuracy)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise InvalidArgumentError("need a non-empty 2-D sample matrix")
    if y.shape != (x.shape[0],):
        raise InvalidArgumentError(f"labels shape {y.shape} != ({x.shape[0]},)")
    if m is None:
        m = int(y.max()) + 1
    rng = np.random.default_rng(seed)
    p = init_classifier(x.shape[1], m, hidden, rng)
    state = dc.OptimizerState.adam(lr)
    graphs: dict = {}

    def graph_for(batch: int):
        if batch not in graphs:
            g = dc.ComputationGraph()
            xn = g.input("x", (batch, x.shape[1]))
            yn = g.input("y", (batch,), dtype="i8")
            g.mean(g.softmax_xent(build_classifier(g, p, xn), yn))
            graphs[batch] = g
        return graphs[batch]

    weights = dict(p.weights)
    n = x.shape[0]
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            g = graph_for(idx.size)
            dc.forward(g, {"x": x[idx], "y": y[idx], **_prefixed(weights, "h.")})
            grads = dc.backward(g)
            stripped = {k.removeprefix("h."): v for k, v in grads.items()}
            weights = dc.optimizer_step(weights, stripped, state)
    trained = replace(p, weights=weights)
    acc = float(np.mean(classifier_predict(trained, x) == y))
    return trained, acc
