"""Two-stage importance-weighted training against shortcut reliance.

A low-capacity network is trained first; training items it masters (which
tend to carry shortcuts) are downweighted when the high-capacity target
network is trained.  Ships with a self-contained tensor/autodiff core,
controlled shortcut injection for CIFAR-format data, and an experiment
harness with congruent/incongruent/neutral evaluation.
"""

from .autograd import Tape, Tensor
from .estimators import NetClassifier, ReweightedClassifier
from .experiment import ExperimentConfig, config_from_dict, run_condition, run_experiment
from .metrics import EvalResult, ObResult, accuracy, logit, overall_benefit
from .models import ModelSpec, build_hcn, build_lcn, build_model, glorot_init
from .shortcuts import ShortcutSpec, build_test_sets, inject_global, inject_local, make_gaussian_masks
from .weighting import IwTable, importance_weights, normalize_batch_iws, weighted_batch_loss

__version__ = "0.1.0"

__all__ = [
    "Tape", "Tensor",
    "NetClassifier", "ReweightedClassifier",
    "ExperimentConfig", "config_from_dict", "run_condition", "run_experiment",
    "EvalResult", "ObResult", "accuracy", "logit", "overall_benefit",
    "ModelSpec", "build_hcn", "build_lcn", "build_model", "glorot_init",
    "ShortcutSpec", "build_test_sets", "inject_global", "inject_local", "make_gaussian_masks",
    "IwTable", "importance_weights", "normalize_batch_iws", "weighted_batch_loss",
    "__version__",
]
