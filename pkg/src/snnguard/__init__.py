"""Spiking networks with threshold-guarded training, gradient attacks, and robustness analysis."""
from .attacks import AttackConfig, run_attack
from .network import SnnModel, forward, init_model, smooth_proxy
from .neurons import NeuronParams, SurrogateSpec, flip_probability, lif_step
from .tensor import Tensor, backward
from .tgo import TgoConfig, lambda_schedule, membrane_constraint, threshold_neighbor_fraction

__version__ = "0.1.0"
