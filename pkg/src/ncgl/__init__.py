"""Conditional GAN training under label noise, with exact small-support oracles.

Two halves share one vocabulary:

* ``channel`` / ``findist`` / ``theory`` manipulate exact finite joint
  distributions over (point, label) pairs and verify the distance bounds
  that justify training against corrupted labels.
* ``diffcomp`` / ``models`` / ``training`` / ``recovery`` implement the
  trainable side: a small reverse-mode engine, projection discriminators,
  the four loss variants, and label recovery by generator inversion.
"""

__version__ = "0.1.0"

from . import errors
from .channel import ChannelAnalysis, ConfusionMatrix, analyze, corrupt, corrupt_many, make_uniform_flip, push_forward
from .data import LabeledDataset, MixtureSpec, TrainView, inject_noise, load_idx, make_mixture
from .findist import ConstrainedBoxClass, FiniteJoint, bounded_class_distance, divergence, empirical
from .metrics import EvalReport, confusion_error, generator_label_accuracy, recovery_accuracy
from .models import ClassifierParams, GeneratorParams, ProjDiscParams, init_disc, init_generator, project_constraints, train_classifier
from .recovery import RecoveryConfig, recover_label, recover_label_batch
from .theory import BoundReport, build_counterexample, check_thm1, check_thm2_bounded, counterexample_instance, empirical_convergence, witness_tight
from .training import ChannelEstimate, ExperimentConfig, RunArtifacts, TrainingAborted, train

__all__ = [
    "errors",
    "ChannelAnalysis", "ConfusionMatrix", "analyze", "corrupt", "corrupt_many",
    "make_uniform_flip", "push_forward",
    "LabeledDataset", "MixtureSpec", "TrainView", "inject_noise", "load_idx",
    "make_mixture",
    "ConstrainedBoxClass", "FiniteJoint", "bounded_class_distance", "divergence",
    "empirical",
    "EvalReport", "confusion_error", "generator_label_accuracy", "recovery_accuracy",
    "ClassifierParams", "GeneratorParams", "ProjDiscParams", "init_disc",
    "init_generator", "project_constraints", "train_classifier",
    "RecoveryConfig", "recover_label", "recover_label_batch",
    "BoundReport", "build_counterexample", "check_thm1", "check_thm2_bounded",
    "counterexample_instance", "empirical_convergence", "witness_tight",
    "ChannelEstimate", "ExperimentConfig", "RunArtifacts", "TrainingAborted",
    "train",
]
