"""Evaluation of trained generators and channel estimates.

Everything here is pure given parameter snapshots and a seeded generator;
clean labels are legitimate inputs in this module (and only here and in the
report layer -- training code never sees them).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ConfusionMatrix
from .data import LabeledDataset
from .errors import InvalidArgumentError
from .models import ClassifierParams, GeneratorParams, classifier_predict, gen_forward
from .recovery import RecoveryConfig, recover_label_batch


@dataclass(frozen=True)
class EvalReport:
    gen_label_acc: float
    per_class_mean_err: float
    recovery_acc: float | None = None
    m_error: float | None = None

    def __post_init__(self):
        for name in ("gen_label_acc", "recovery_acc"):
            v = getattr(self, name)
            if v is not None and not (0.0 <= v <= 1.0):
                raise InvalidArgumentError(f"{name} must be in [0,1], got {v}")


def generator_label_accuracy(gen: GeneratorParams, f: ClassifierParams, n: int,
                             rng: np.random.Generator) -> float:
    """Fraction of uniform-label draws where f classifies G(z;y) as y."""
    if n < 1:
        raise InvalidArgumentError(f"need n >= 1, got {n}")
    y = rng.integers(0, gen.m, size=n)
    z = rng.standard_normal((n, gen.d_z))
    x = gen_forward(gen, z, y)
    return float(np.mean(classifier_predict(f, x) == y))


def confusion_error(m_est: ConfusionMatrix, c: ConfusionMatrix) -> float:
    """Max absolute entrywise deviation between estimate and truth."""
    if m_est.m != c.m:
        raise InvalidArgumentError(f"size mismatch: {m_est.m} vs {c.m}")
    return float(np.abs(m_est.entries - c.entries).max())


def recovery_accuracy(gen: GeneratorParams, ds: LabeledDataset, cfg: RecoveryConfig,
                      sample_count: int, rng: np.random.Generator) -> float:
    """Inversion-recovered labels vs clean labels on a random subset."""
    if ds.clean_labels is None:
        raise InvalidArgumentError("dataset carries no clean labels")
    if sample_count < 1:
        raise InvalidArgumentError(f"need sample_count >= 1, got {sample_count}")
    take = min(sample_count, ds.n)
    idx = rng.choice(ds.n, size=take, replace=False)
    labels, _ = recover_label_batch(ds.x[idx], gen, cfg, rng)
    return float(np.mean(labels == ds.clean_labels[idx]))


def per_class_mean_error(gen: GeneratorParams, class_means: np.ndarray, n: int,
                         rng: np.random.Generator) -> float:
    """Mean over classes of ||mean_z G(z;y) - target mean_y||."""
    class_means = np.asarray(class_means, dtype=np.float64)
    if class_means.shape != (gen.m, gen.d_x):
        raise InvalidArgumentError(
            f"class means must be {gen.m}x{gen.d_x}, got {class_means.shape}"
        )
    errs = []
    for y in range(gen.m):
        z = rng.standard_normal((n, gen.d_z))
        x = gen_forward(gen, z, np.full(n, y))
        errs.append(float(np.linalg.norm(x.mean(axis=0) - class_means[y])))
    return float(np.mean(errs))
