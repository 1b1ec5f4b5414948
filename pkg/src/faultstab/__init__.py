"""Lipschitz-stable geometry inversion for half-space crack models."""

from .geometry import FaultParams, ParamBox, observation_grid, sine_basis
from .kernel import KernelConfig
from .operators import ForwardSetup, assemble, forward, svd_subspace

__version__ = "0.1.0"

__all__ = ["FaultParams", "ParamBox", "observation_grid", "sine_basis", "KernelConfig",
           "ForwardSetup", "assemble", "forward", "svd_subspace"]
