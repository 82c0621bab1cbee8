"""Label recovery by generator inversion.

For each candidate label y the inner problem min_z ||G(z;y) - x||^2 is
attacked with Adam from several standard-normal starts; the recovered label
is the argmin over y of the best residual, ties resolved to the lowest
index.  All (sample, label, restart) problems are independent, so they run
as one big batched graph whose only parameter is the stacked z block; Adam's
per-coordinate moments keep the trajectories exactly as independent as
separate runs would be.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcomp as dc
from .errors import InvalidArgumentError
from .models import GeneratorParams, one_hot


@dataclass(frozen=True)
class RecoveryConfig:
    restarts: int = 5
    steps: int = 200
    lr: float = 0.05
    tie_break: str = "lowest-index"

    def __post_init__(self):
        if self.restarts < 1 or self.steps < 1:
            raise InvalidArgumentError(
                f"need restarts >= 1 and steps >= 1, got {self.restarts}, {self.steps}"
            )
        if self.tie_break != "lowest-index":
            raise InvalidArgumentError(f"unsupported tie_break {self.tie_break!r}")


def _build_inversion_graph(gen: GeneratorParams, rows: int):
    """G with frozen (const) weights; the flattened z block is the only param."""
    g = dc.ComputationGraph()
    z = g.param("z", (rows, gen.d_z))
    y1h = g.input("y1h", (rows, gen.m))
    target = g.input("target", (rows, gen.d_x))
    x = g.concat(z, y1h, axis=1)
    dims = gen.layer_dims()
    n_layers = len(dims) - 1
    for i in range(n_layers):
        w = g.const(gen.weights[f"w{i}"])
        b = g.const(gen.weights[f"b{i}"])
        x = g.add(g.matmul(x, w), b)
        if i < n_layers - 1:
            x = g.tanh(x)
    diff = g.add(x, g.scalar_affine(target, -1.0, 0.0))
    residuals = g.sq_l2(diff)
    g.sum(residuals)
    return g, residuals


def recover_label_batch(x: np.ndarray, gen: GeneratorParams, cfg: RecoveryConfig,
                        rng: np.random.Generator):
    """Returns (labels (n,), best residual per class (n, m))."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != gen.d_x:
        raise InvalidArgumentError(
            f"samples must be (n, {gen.d_x}), got {x.shape}"
        )
    n, m = x.shape[0], gen.m
    rows = n * m
    # restart-major draw: growing `restarts` only appends new starts
    z0 = rng.standard_normal((cfg.restarts, n, m, gen.d_z))
    labels_all = np.tile(np.arange(m), n)
    y1h = one_hot(labels_all, m)
    target = np.repeat(x, m, axis=0)
    graph, residual_node = _build_inversion_graph(gen, rows)
    best = np.full((n, m), np.inf)
    for r in range(cfg.restarts):
        z = z0[r].reshape(rows, gen.d_z)
        state = dc.OptimizerState.adam(cfg.lr)
        params = {"z": z}
        for _ in range(cfg.steps):
            dc.forward(graph, {**params, "y1h": y1h, "target": target})
            grads = dc.backward(graph)
            params = dc.optimizer_step(params, grads, state)
        dc.forward(graph, {**params, "y1h": y1h, "target": target})
        res = dc.value_of(graph, residual_node).reshape(n, m)
        best = np.minimum(best, res)
    return np.argmin(best, axis=1), best


def recover_label(x: np.ndarray, gen: GeneratorParams, cfg: RecoveryConfig,
                  rng: np.random.Generator):
    """Single-sample convenience wrapper: (label, per-class residuals)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise InvalidArgumentError(f"expected one sample vector, got shape {x.shape}")
    labels, residuals = recover_label_batch(x[None, :], gen, cfg, rng)
    return int(labels[0]), residuals[0]
