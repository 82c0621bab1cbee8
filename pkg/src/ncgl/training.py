"""The GAN variants and their alternating D/G training loops.

Variants
--------
Biased        real (x, noisy y) vs fake (G(z;y), y), y from the noisy
              marginal; pretends labels are clean.
Unbiased      real hinge term reweighted by rows of C^-1 so its expectation
              matches the clean-label term; needs full-rank C.
RCGAN         fakes' conditioning labels are passed through the known C
              before the discriminator sees them, so D compares noisy
              against noisy; optional regularizer pulls G(z;y) toward
              classifier-h*-consistency with y.
RCGAN_U       same comparison but C is unknown: a row-softmax channel
              estimate M corrupts the fake labels; the G step differentiates
              through the full sum over corrupted labels so M's logits learn
              alongside G at a boosted learning rate.
RCGAN_plus_y  RCGAN with the label also concatenated to D's input, plus an
              artificial-noise schedule that starts training at a high
              effective noise level and anneals it away.
AmbientStyle  label concatenation only -- no projection term; the ablation
              baseline.

Sign convention: D's raw score is read as a fakeness level, with the hinge
phi(a) = max(0, 1 - 2a) pivoting at 1/2.  The D step improves
    E[phi(D(real))] + E[phi(1 - D(fake))]
(reported as loss_d) by descending the separated-margin form
E[phi(1/2 - D(real))] + E[phi(D(fake) - 1/2)]: reals are pushed down toward
a margin at 0, fakes up toward a margin at 1, and both gates stay live
across the gap between the margins.  On a (region, label) score that real
and fake mass share, the net push is then the fake-minus-real density
difference, so the score runs to the boundary whose side says which
distribution is overrepresented there — a persistent signal rather than
jitter at a common kink.  The G step minimizes E[phi(1 - D(fake))], live
exactly on the fakes D scores above the pivot, and the channel estimate
reads the same flags per corrupted label.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import diffcomp as dc
from .channel import ConfusionMatrix, analyze, corrupt_many, make_uniform_flip
from .data import LabeledDataset, TrainView
from .errors import InvalidArgumentError, NumericError, PreconditionError
from .models import (
    ClassifierParams,
    GeneratorParams,
    ProjDiscParams,
    build_disc,
    build_generator,
    gen_forward,
    init_disc,
    init_generator,
    project_constraints,
    train_classifier,
)

VARIANTS = ("Biased", "Unbiased", "RCGAN", "RCGAN_U", "RCGAN_plus_y", "AmbientStyle")
METRIC_COLUMNS = ("epoch", "variant", "loss_d", "loss_g", "gen_label_acc", "m_error")

H_STAR_EPOCHS = 60
H_STAR_LR = 0.05
EVAL_SAMPLES = 2000


class TrainingAborted(NumericError):
    """Raised when a loss or gradient goes non-finite; carries the last
    artifacts that were still finite."""

    def __init__(self, msg: str, artifacts):
        super().__init__(msg)
        self.artifacts = artifacts


@dataclass(frozen=True)
class ExperimentConfig:
    variant: str
    epochs: int
    lam: float = 0.0
    lr_d: float = 1e-3
    lr_g: float = 1e-3
    m_lr_multiplier: float = 10.0
    batch: int = 128
    d_steps_per_g: int = 1
    seed: int = 0
    d_z: int = 4
    g_hidden: tuple = (64, 64)
    d_hidden: tuple = (64,)
    d_feat: int = 64
    d_feat2: int = 64
    fake_label_source: str = "noisy_marginal"
    loss: str = "hinge"
    schedule: tuple = (0.3, 0.8)
    schedule_pbar0: float = 0.3

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise InvalidArgumentError(
                f"unknown variant {self.variant!r}; expected one of {VARIANTS}"
            )
        if self.lam < 0:
            raise InvalidArgumentError(f"lambda must be >= 0, got {self.lam}")
        if self.variant == "Biased" and self.lam != 0:
            raise InvalidArgumentError(
                "Biased has no clean conditioning label to regularize toward; "
                "lambda must be 0"
            )
        if self.batch < 1 or self.epochs < 0 or self.d_steps_per_g < 1:
            raise InvalidArgumentError("need batch >= 1, epochs >= 0, d_steps_per_g >= 1")
        if self.m_lr_multiplier <= 0:
            raise InvalidArgumentError("m_lr_multiplier must be > 0")
        if self.fake_label_source not in ("noisy_marginal", "uniform"):
            raise InvalidArgumentError(
                f"unknown fake_label_source {self.fake_label_source!r}"
            )
        if self.loss not in ("hinge", "logistic"):
            raise InvalidArgumentError(f"unknown loss {self.loss!r}")
        if self.loss == "logistic" and self.variant != "Biased":
            raise InvalidArgumentError("logistic loss is only wired up for Biased")
        b1, b2 = self.schedule
        if not (0.0 <= b1 <= b2 <= 1.0):
            raise InvalidArgumentError(f"schedule breakpoints must satisfy 0<=b1<=b2<=1, got {self.schedule}")
        object.__setattr__(self, "g_hidden", tuple(self.g_hidden))
        object.__setattr__(self, "d_hidden", tuple(self.d_hidden))
        object.__setattr__(self, "schedule", tuple(self.schedule))

    def to_json(self) -> str:
        doc = {
            "variant": self.variant, "epochs": self.epochs, "lambda": self.lam,
            "lr_d": self.lr_d, "lr_g": self.lr_g,
            "m_lr_multiplier": self.m_lr_multiplier, "batch": self.batch,
            "d_steps_per_g": self.d_steps_per_g, "seed": self.seed,
            "d_z": self.d_z, "g_hidden": list(self.g_hidden),
            "d_hidden": list(self.d_hidden), "d_feat": self.d_feat,
            "d_feat2": self.d_feat2, "fake_label_source": self.fake_label_source,
            "loss": self.loss, "schedule": list(self.schedule),
            "schedule_pbar0": self.schedule_pbar0,
        }
        return json.dumps(doc, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "ExperimentConfig":
        doc = json.loads(text)
        if "lambda" in doc:
            doc["lam"] = doc.pop("lambda")
        for key in ("g_hidden", "d_hidden", "schedule"):
            if key in doc:
                doc[key] = tuple(doc[key])
        return ExperimentConfig(**doc)


@dataclass
class ChannelEstimate:
    logits: np.ndarray

    def realized(self) -> ConfusionMatrix:
        z = self.logits - self.logits.max(axis=1, keepdims=True)
        e = np.exp(z)
        rows = e / e.sum(axis=1, keepdims=True)
        return ConfusionMatrix(m=rows.shape[0], entries=rows)


def init_channel_estimate(m: int) -> ChannelEstimate:
    # diagonally dominant start: for m=10 this is exactly diag 0.2 / off 0.8/9
    m0 = (1.0 / 9.0) * np.eye(m) + (8.0 / 9.0) / m * np.ones((m, m))
    return ChannelEstimate(logits=np.log(m0))


def effective_noise(pi_tilde: float, pi: float, m: int) -> float:
    """Diagonal of the composition of uniform flips: UF(pi) then UF(pi_tilde)."""
    if not (0.0 <= pi_tilde <= 1.0 and 0.0 <= pi <= 1.0):
        raise InvalidArgumentError(
            f"noise parameters must be in [0,1], got {pi_tilde}, {pi}"
        )
    if m < 2:
        raise InvalidArgumentError(f"need m >= 2, got {m}")
    q = (1.0 - pi) / (m - 1)
    return pi_tilde * (pi - q) + q


def schedule_pi_tilde(epoch: int, epochs: int, pi: float, m: int,
                      breakpoints: tuple, pbar0: float) -> float:
    """Three phases: hold effective noise at pbar0, ramp pi_tilde to 1, hold."""
    q = (1.0 - pi) / (m - 1)
    if abs(pi - q) < 1e-12:
        return 1.0
    start = min(max((pbar0 - q) / (pi - q), 0.0), 1.0)
    b1, b2 = breakpoints
    e1, e2 = b1 * epochs, b2 * epochs
    if epochs == 0 or epoch >= e2 or e2 <= e1:
        return 1.0
    if epoch < e1:
        return start
    frac = (epoch - e1) / (e2 - e1)
    return start + frac * (1.0 - start)


# -- loss graphs ---------------------------------------------------------------


@dataclass
class LossBundle:
    """A built graph plus everything needed to run it.

    The graph's final node is what the optimizer minimizes; `value_node`
    holds the reported loss value.  For the D step these are the same
    hinges gated on opposite sides of the 1/2 pivot (see loss_d).
    """

    graph: dc.ComputationGraph
    feeds: dict
    value_node: int


def _disc_score(g: dc.ComputationGraph, disc, x, y, use_projection: bool) -> int:
    """The discriminator's scalar score per pair; phi reads it as a fakeness
    level with its kink at 1/2."""
    return build_disc(g, disc, x, y, use_projection=use_projection)


def _hinge_term(g: dc.ComputationGraph, d_node: int, a_mult: float,
                a_shift: float, loss_kind: str) -> int:
    """mean phi(a_mult*D + a_shift); logistic swaps phi for softplus(1-2a)."""
    a = g.scalar_affine(d_node, a_mult, a_shift)
    body = g.softplus(g.scalar_affine(a, -2.0, 1.0)) if loss_kind == "logistic" \
        else g.hinge(a)
    return g.mean(body)


def hinge_pair_value(d_real: float, d_fake: float) -> float:
    """The D objective on one (real, fake) output pair."""
    phi = lambda a: max(0.0, 1.0 - 2.0 * a)
    return phi(d_real) + phi(1.0 - d_fake)


def _disc_flags(variant: str) -> tuple:
    """(concat_y, use_projection) for each variant's discriminator."""
    if variant == "RCGAN_plus_y":
        return True, True
    if variant == "AmbientStyle":
        return True, False
    return False, True


def _fake_d_labels(variant: str, y_fake: np.ndarray, c_or_m, rng) -> np.ndarray:
    """Labels the discriminator sees on fake samples."""
    if variant in ("Biased", "Unbiased"):
        return y_fake
    if variant == "RCGAN_U":
        return corrupt_many(y_fake, c_or_m.realized(), rng)
    return corrupt_many(y_fake, c_or_m, rng)


def loss_d(variant: str, real_batch: tuple, fake_batch: tuple, c_or_m,
           disc: ProjDiscParams, rng: np.random.Generator,
           loss_kind: str = "hinge") -> LossBundle:
    """D-step graph.

    `value_node` reports the adversarial objective E[phi(D_real)] +
    E[phi(1-D_fake)] that the step improves.  The final node — what the
    optimizer descends — is the separated-margin form E[phi(1/2 - D_real)] +
    E[phi(D_fake - 1/2)]: the same hinge shape, but reals are pushed down
    toward a margin at 0 and fakes up toward a margin at 1.  Both gates stay
    live across the (0, 1) gap, so on a score that real and fake mass share
    the net push is proportional to the fake-minus-real density difference
    and the score runs to whichever boundary that sign selects — the flags
    the G step reads then carry which pairings are overrepresented.  Putting
    both margins at the same pivot instead makes every shared score settle
    exactly at the kink, where the surviving flags are batch jitter
    proportional to the fake sampling weights themselves, and the channel
    estimate chases its own mass.

    real_batch = (x, noisy labels); fake_batch = (generated x, conditioning
    labels).  RCGAN-family corruption of the fake labels happens here, off
    `rng`; Unbiased computes its C^-1 row weights here.
    """
    x_real, y_real = real_batch
    x_fake, y_fake = fake_batch
    x_real = np.asarray(x_real, dtype=np.float64)
    x_fake = np.asarray(x_fake, dtype=np.float64)
    y_real = np.asarray(y_real, dtype=np.int64)
    y_fake = np.asarray(y_fake, dtype=np.int64)
    b = x_real.shape[0]
    if b == 0 or x_fake.shape[0] == 0:
        raise InvalidArgumentError("batches must be non-empty")
    m = disc.m
    _, use_projection = _disc_flags(variant)

    g = dc.ComputationGraph()
    xr = g.input("x_real", x_real.shape)
    yr = g.input("y_real", (b,), dtype="i8")
    xf = g.input("x_fake", x_fake.shape)
    yf = g.input("y_fake_d", (x_fake.shape[0],), dtype="i8")
    feeds = {"x_real": x_real, "x_fake": x_fake}

    if variant == "Unbiased":
        a = analyze(c_or_m)
        if not a.is_full_rank:
            raise PreconditionError("Unbiased needs an invertible channel")
        # sum_y (C^-1)_{noisy,y} phi(D(x, y)): tile each x against all labels.
        # The debiasing identity is shape-agnostic, so the descent form just
        # reweights phi(1-D) with the same rows.
        tile_idx = g.const(np.repeat(np.arange(b), m))
        labels_all = g.const(np.tile(np.arange(m), b))
        d_all = _disc_score(g, disc, g.gather_rows(xr, tile_idx), labels_all,
                            use_projection)
        weights = g.input("w_unbiased", (b, m))

        def reweighted(node):
            return g.mean(g.rowsum(g.mul(g.reshape(g.hinge(node), (b, m)), weights)))

        real_term = reweighted(d_all)
        real_margin = reweighted(g.scalar_affine(d_all, -1.0, 0.5))
        feeds["w_unbiased"] = a.inverse[y_real, :]
        feeds["y_real"] = y_real  # declared input: feed even though unused
    else:
        d_real = _disc_score(g, disc, xr, yr, use_projection)
        real_term = _hinge_term(g, d_real, 1.0, 0.0, loss_kind)
        real_margin = _hinge_term(g, d_real, -1.0, 0.5, loss_kind)
        feeds["y_real"] = y_real

    d_fake = _disc_score(g, disc, xf, yf, use_projection)
    fake_term = _hinge_term(g, d_fake, -1.0, 1.0, loss_kind)
    fake_margin = _hinge_term(g, d_fake, 1.0, -0.5, loss_kind)
    value = g.add(real_term, fake_term)
    g.add(real_margin, fake_margin)
    feeds["y_fake_d"] = _fake_d_labels(variant, y_fake, c_or_m, rng)
    return LossBundle(graph=g, feeds=feeds, value_node=value)


def _append_classifier_const(g: dc.ComputationGraph, h: ClassifierParams, x):
    dims = h.layer_dims()
    for i in range(len(dims) - 1):
        x = g.add(g.matmul(x, g.const(h.weights[f"w{i}"])), g.const(h.weights[f"b{i}"]))
        if i < len(dims) - 2:
            x = g.tanh(x)
    return x


def loss_g(variant: str, gen: GeneratorParams, fake_batch: tuple,
           h_star: ClassifierParams | None, lam: float, c_or_m,
           disc: ProjDiscParams, loss_kind: str = "hinge") -> LossBundle:
    """G-step graph: minimize E[phi(1-D(fake))] (+ lambda regularizer).

    fake_batch is (z, y) or (z, y, y_tilde); the pre-corrupted y_tilde is
    required for the sampled RCGAN-family path and ignored by RCGAN_U,
    which sums over all corrupted labels with the realized-M weights so the
    estimate's logits pick up gradient.
    """
    if lam < 0:
        raise InvalidArgumentError(f"lambda must be >= 0, got {lam}")
    z, y = fake_batch[0], fake_batch[1]
    y_tilde = fake_batch[2] if len(fake_batch) > 2 else None
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    b = z.shape[0]
    m = gen.m
    _, use_projection = _disc_flags(variant)

    g = dc.ComputationGraph()
    zn = g.input("z", z.shape)
    yn = g.input("y", (b,), dtype="i8")
    y1h = g.gather_rows(g.const(np.eye(m)), yn)
    x_fake = build_generator(g, gen, zn, y1h)
    feeds = {"z": z, "y": y}

    if variant == "RCGAN_U":
        # phi_M: tile fakes against every corrupted label, weight by M rows
        tile_idx = g.const(np.repeat(np.arange(b), m))
        labels_all = g.const(np.tile(np.arange(m), b))
        d_all = _disc_score(g, disc, g.gather_rows(x_fake, tile_idx), labels_all,
                            use_projection)
        phi = g.hinge(g.scalar_affine(d_all, -1.0, 1.0))
        logits = g.param("m.logits", (m, m))
        rows = g.gather_rows(g.row_softmax(logits), yn)
        loss_node = g.mean(g.rowsum(g.mul(g.reshape(phi, (b, m)), rows)))
        feeds["m.logits"] = c_or_m.logits
    else:
        if variant in ("RCGAN", "RCGAN_plus_y", "AmbientStyle"):
            if y_tilde is None:
                raise InvalidArgumentError(
                    f"{variant} needs pre-corrupted labels in fake_batch"
                )
            d_labels = np.asarray(y_tilde, dtype=np.int64)
        else:
            d_labels = y
        yd = g.input("y_d", (b,), dtype="i8")
        d_fake = _disc_score(g, disc, x_fake, yd, use_projection)
        loss_node = _hinge_term(g, d_fake, -1.0, 1.0, loss_kind)
        feeds["y_d"] = d_labels

    if lam > 0:
        if h_star is None:
            raise InvalidArgumentError("lambda > 0 requires a trained h*")
        xent = g.mean(g.softmax_xent(_append_classifier_const(g, h_star, x_fake), yn))
        loss_node = g.add(loss_node, g.scalar_affine(xent, lam, 0.0))
    return LossBundle(graph=g, feeds=feeds, value_node=loss_node)


# -- the training loop -----------------------------------------------------------


@dataclass
class RunArtifacts:
    config: ExperimentConfig
    gen: GeneratorParams
    disc: ProjDiscParams
    h_star: ClassifierParams | None
    m_estimate: ChannelEstimate | None
    metric_rows: list = field(default_factory=list)

    def metrics_csv(self) -> str:
        lines = [",".join(METRIC_COLUMNS)]
        for row in self.metric_rows:
            lines.append(",".join(
                repr(row[c]) if isinstance(row[c], float) else str(row[c])
                for c in METRIC_COLUMNS
            ))
        return "\n".join(lines) + "\n"

    def save(self, out_dir) -> None:
        """Write config.json, metrics.csv, and one checkpoint per component."""
        from pathlib import Path

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(self.config.to_json() + "\n")
        (out / "metrics.csv").write_text(self.metrics_csv())
        dc.save_checkpoint(out / "gen.ckpt", self.gen.weights)
        dc.save_checkpoint(out / "disc.ckpt", self.disc.weights)
        if self.h_star is not None:
            dc.save_checkpoint(out / "h_star.ckpt", self.h_star.weights)
        if self.m_estimate is not None:
            dc.save_checkpoint(out / "m.ckpt", {"logits": self.m_estimate.logits})


def _require_channel(config: ExperimentConfig, c_known):
    needs = ("Unbiased", "RCGAN", "RCGAN_plus_y", "AmbientStyle")
    if config.variant in needs and c_known is None:
        raise InvalidArgumentError(f"{config.variant} requires the true channel")
    if config.variant == "RCGAN_U" and c_known is not None:
        raise InvalidArgumentError(
            "RCGAN_U estimates the channel; passing one in is a bug upstream"
        )


def _strip(grads: dict, prefix: str) -> dict:
    return {k.removeprefix(prefix): v for k, v in grads.items()
            if k.startswith(prefix)}


def train(config: ExperimentConfig, dataset, c_known: ConfusionMatrix | None = None,
          eval_classifier: ClassifierParams | None = None,
          eval_channel: ConfusionMatrix | None = None) -> RunArtifacts:
    """Run one experiment; deterministic in config.seed.

    `dataset` is a TrainView (or a LabeledDataset, from which only the
    training view is taken).  The two eval_* arguments exist purely for the
    metric log: without them the respective columns are nan.
    """
    view = dataset.train_view() if isinstance(dataset, LabeledDataset) else dataset
    if not isinstance(view, TrainView):
        raise InvalidArgumentError("dataset must be a TrainView or LabeledDataset")
    if view.x.shape[0] == 0:
        raise InvalidArgumentError("empty dataset")
    _require_channel(config, c_known)
    if config.variant == "Unbiased" and not analyze(c_known).is_full_rank:
        raise PreconditionError("Unbiased needs an invertible channel")

    n, d_x = view.x.shape
    m = view.m
    ss = np.random.SeedSequence(config.seed)
    (ss_init, ss_order, ss_z, ss_label, ss_corrupt, ss_sched) = ss.spawn(6)
    rng_init = np.random.default_rng(ss_init)
    rng_order = np.random.default_rng(ss_order)
    rng_z = np.random.default_rng(ss_z)
    rng_label = np.random.default_rng(ss_label)
    rng_corrupt = np.random.default_rng(ss_corrupt)
    rng_sched = np.random.default_rng(ss_sched)

    concat_y, use_projection = _disc_flags(config.variant)
    gen = init_generator(config.d_z, m, d_x, config.g_hidden, rng_init)
    disc = init_disc(d_x, m, config.d_hidden, rng_init, d_feat=config.d_feat,
                     d_feat2=config.d_feat2, concat_y=concat_y)
    h_star = None
    if config.lam > 0:
        h_star, _ = train_classifier(view.x, view.noisy_labels, hidden=(),
                                     epochs=H_STAR_EPOCHS, lr=H_STAR_LR,
                                     seed=int(rng_init.integers(2**31)), m=m)
    estimate = init_channel_estimate(m) if config.variant == "RCGAN_U" else None
    c_or_m = estimate if config.variant == "RCGAN_U" else c_known

    if config.fake_label_source == "uniform":
        label_probs = np.full(m, 1.0 / m)
    else:
        label_probs = np.bincount(view.noisy_labels, minlength=m) / n

    opt_d = dc.OptimizerState.adam(config.lr_d)
    opt_g = dc.OptimizerState.adam(config.lr_g)
    # plain SGD for the channel logits: its step shrinks with the actual
    # flag contrast, so the estimate settles once its rows match the data,
    # where a normalized step would keep wandering on residual batch noise
    opt_m = dc.OptimizerState.sgd(config.lr_g * config.m_lr_multiplier)

    pi_diag = float(np.mean(np.diag(c_known.entries))) if c_known is not None else 1.0
    is_plus_y = config.variant == "RCGAN_plus_y"

    artifacts = RunArtifacts(config=config, gen=gen, disc=disc, h_star=h_star,
                             m_estimate=estimate)

    def snapshot():
        artifacts.gen = gen
        artifacts.disc = disc
        artifacts.m_estimate = estimate

    def draw_fake_labels(size):
        return rng_label.choice(m, size=size, p=label_probs)

    batches = n // config.batch
    try:
        for epoch in range(config.epochs):
            if is_plus_y:
                pt = schedule_pi_tilde(epoch, config.epochs, pi_diag, m,
                                       config.schedule, config.schedule_pbar0)
                extra = make_uniform_flip(m, pt)
                fake_channel = ConfusionMatrix(m=m, entries=c_known.entries @ extra.entries)
            d_sum, g_sum = 0.0, 0.0
            order = rng_order.permutation(n)
            for bi in range(batches):
                idx = order[bi * config.batch:(bi + 1) * config.batch]
                x_real = view.x[idx]
                y_real = view.noisy_labels[idx]
                if is_plus_y:
                    y_real = corrupt_many(y_real, extra, rng_sched)
                    step_channel = fake_channel
                else:
                    step_channel = c_or_m

                for _ in range(config.d_steps_per_g):
                    y_f = draw_fake_labels(config.batch)
                    z = rng_z.standard_normal((config.batch, config.d_z))
                    x_fake = gen_forward(gen, z, y_f)
                    bundle = loss_d(config.variant, (x_real, y_real), (x_fake, y_f),
                                    step_channel, disc, rng_corrupt, config.loss)
                    dc.forward(bundle.graph, {**bundle.feeds,
                                              **{f"d.{k}": v for k, v in disc.weights.items()}})
                    d_sum += float(dc.value_of(bundle.graph, bundle.value_node))
                    grads = dc.backward(bundle.graph)
                    new_w = dc.optimizer_step(disc.weights, _strip(grads, "d."), opt_d)
                    disc = replace(disc, weights=new_w)
                    if use_projection:
                        disc = project_constraints(disc)

                y_f = draw_fake_labels(config.batch)
                z = rng_z.standard_normal((config.batch, config.d_z))
                if config.variant in ("RCGAN", "RCGAN_plus_y", "AmbientStyle"):
                    y_t = corrupt_many(y_f, step_channel, rng_corrupt)
                    fake_batch = (z, y_f, y_t)
                else:
                    fake_batch = (z, y_f)
                bundle = loss_g(config.variant, gen, fake_batch, h_star, config.lam,
                                step_channel, disc, config.loss)
                values = {**bundle.feeds,
                          **{f"g.{k}": v for k, v in gen.weights.items()},
                          **{f"d.{k}": v for k, v in disc.weights.items()}}
                dc.forward(bundle.graph, values)
                g_sum += float(dc.value_of(bundle.graph, bundle.value_node))
                grads = dc.backward(bundle.graph)
                gen = replace(gen, weights=dc.optimizer_step(
                    gen.weights, _strip(grads, "g."), opt_g))
                if config.variant == "RCGAN_U":
                    new_logits = dc.optimizer_step(
                        {"logits": estimate.logits},
                        {"logits": grads["m.logits"]}, opt_m)["logits"]
                    estimate.logits = new_logits

            loss_d_mean = d_sum / max(batches * config.d_steps_per_g, 1)
            loss_g_mean = g_sum / max(batches, 1)
            if not (math.isfinite(loss_d_mean) and math.isfinite(loss_g_mean)):
                raise TrainingAborted(
                    f"non-finite loss at epoch {epoch}: d={loss_d_mean} g={loss_g_mean}",
                    artifacts,
                )
            if eval_classifier is not None:
                from .metrics import generator_label_accuracy
                acc_rng = np.random.default_rng(
                    np.random.SeedSequence([config.seed, 0xE7A1, epoch]))
                acc = generator_label_accuracy(gen, eval_classifier, EVAL_SAMPLES, acc_rng)
            else:
                acc = float("nan")
            if estimate is not None and eval_channel is not None:
                from .metrics import confusion_error
                m_err = confusion_error(estimate.realized(), eval_channel)
            else:
                m_err = float("nan")
            artifacts.metric_rows.append({
                "epoch": epoch, "variant": config.variant,
                "loss_d": loss_d_mean, "loss_g": loss_g_mean,
                "gen_label_acc": acc, "m_error": m_err,
            })
            snapshot()
    except TrainingAborted:
        raise
    except NumericError as e:
        raise TrainingAborted(str(e), artifacts) from e

    snapshot()
    return artifacts
