"""nrlab: a numerical laboratory for small-initialization training dynamics
of two-layer networks recovering a single-neuron target."""

__version__ = "0.1.0"

from .dynamics import StopReason, TrainConfig, Trajectory, train
from .geometry import BranchLabel, EvalPlan, classify, generalization_error
from .model import (ActivationSpec, Dataset, NetworkParams, SamplingPlan,
                    TargetSpec, example_target, forward, get_activation,
                    make_dataset, register_activation, target_eval)
from .spectral import (GammaVector, HessianSpectrum, NeuronScales,
                       compute_gamma, hessian_at_origin, neuron_scales,
                       rescale_to_ratio, time_shift)

__all__ = [
    "ActivationSpec", "BranchLabel", "Dataset", "EvalPlan", "GammaVector",
    "HessianSpectrum", "NetworkParams", "NeuronScales", "SamplingPlan",
    "StopReason", "TargetSpec", "TrainConfig", "Trajectory", "classify",
    "compute_gamma", "example_target", "forward", "generalization_error",
    "get_activation", "hessian_at_origin", "make_dataset", "neuron_scales",
    "register_activation", "rescale_to_ratio", "target_eval", "time_shift",
    "train", "__version__",
]
