"""PINN solver for Helmholtz scattering at a rectangular waveguide junction.

Two formulations are supported: the classical boundary value problem with
Dirichlet-to-Neumann (DtN) interface conditions, and a taper-based scattering
formulation that solves for ``u_sct = u - chi * u_inc``.
"""

from taperpinn.numcore import SeededRng, glorot_normal, matvec, sample_uniform
from taperpinn.network import NetworkParams, forward, init_params, jet_forward
from taperpinn.physics import ProblemSpec, reference_solution, taper
from taperpinn.lossbuilder import (
    build_training_set,
    init_sa_weights,
    relative_error,
    total_loss,
)
from taperpinn.trainer import TrainConfig, evaluate_field, train

__version__ = "0.1.0"

__all__ = [
    "SeededRng",
    "glorot_normal",
    "matvec",
    "sample_uniform",
    "NetworkParams",
    "forward",
    "init_params",
    "jet_forward",
    "ProblemSpec",
    "reference_solution",
    "taper",
    "build_training_set",
    "init_sa_weights",
    "relative_error",
    "total_loss",
    "TrainConfig",
    "evaluate_field",
    "train",
]
