"""rnnlab: a training laboratory for plain recurrent networks.

Exact BPTT, weight-noise and DropConnect perturbations, norm penalties,
spectral-radius-controlled sparse initialization, and an experiment harness
for next-frame prediction on binary piano-roll sequences.
"""

from .errors import ContractError, DataError, DivergenceError
from .grad import bptt, finite_diff, grad_check
from .harness import (HyperConfig, SearchSpace, SweepResult, TrainingTrace,
                      TrainResult, demo_surface, max_grad_w, random_search,
                      sweep, train)
from .init import InitSpec, init_params, rescale_spectral, sparse_gaussian, spectral_radius
from .model import ForwardTrace, SequenceBatch, ce_loss, evaluate, forward
from .optim import OptimizerConfig, OptimizerState, step
from .params import Gradients, RnnParams
from .perturb import (PerturbationPlan, PerturbationSpec, RegPenaltySpec,
                      effective_weights, norm_penalty, noisy_moments,
                      sample_plan, sampled_activation_grad)

__all__ = [
    "ContractError", "DataError", "DivergenceError",
    "bptt", "finite_diff", "grad_check",
    "HyperConfig", "SearchSpace", "SweepResult", "TrainingTrace",
    "TrainResult", "demo_surface", "max_grad_w", "random_search", "sweep",
    "train",
    "InitSpec", "init_params", "rescale_spectral", "sparse_gaussian",
    "spectral_radius",
    "ForwardTrace", "SequenceBatch", "ce_loss", "evaluate", "forward",
    "OptimizerConfig", "OptimizerState", "step",
    "Gradients", "RnnParams",
    "PerturbationPlan", "PerturbationSpec", "RegPenaltySpec",
    "effective_weights", "norm_penalty", "noisy_moments", "sample_plan",
    "sampled_activation_grad",
]
