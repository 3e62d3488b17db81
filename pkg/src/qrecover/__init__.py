"""Hybrid quantum-classical regression for bond recovery rates.

Exact state-vector and density-matrix simulation, amplitude and angle
encoders, a strongly-entangling variational circuit with adjoint and
parameter-shift gradients, the FNN / QmlAngle / QmlAmplitude models, and the
cross-validation and Diebold-Mariano tooling used to compare them.
"""

__version__ = "0.1.0"

from .errors import QRecoverError
from .statesim import QuantumState, new_zero_state
from .encoders import amplitude_encode, angle_encode
from .pqc import PqcParams, adjoint_gradient, parameter_shift_gradient
from .hybrid import HybridModel, ModelSpec, TrainConfig, build_model, count_params, train
from .noise import DensityMatrix, NoiseParams, noisy_pqc_expvals
from .evaluation import aggregate_curves, dm_test, kfold_split, loocv_plan, significance_grid
from .data import Dataset, load_csv, synth_recovery

__all__ = [
    "Dataset",
    "DensityMatrix",
    "HybridModel",
    "ModelSpec",
    "NoiseParams",
    "PqcParams",
    "QRecoverError",
    "QuantumState",
    "TrainConfig",
    "adjoint_gradient",
    "aggregate_curves",
    "amplitude_encode",
    "angle_encode",
    "build_model",
    "count_params",
    "dm_test",
    "kfold_split",
    "load_csv",
    "loocv_plan",
    "new_zero_state",
    "noisy_pqc_expvals",
    "parameter_shift_gradient",
    "significance_grid",
    "synth_recovery",
    "train",
]
