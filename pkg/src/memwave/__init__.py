"""Spectral-Galerkin simulator for viscoelastic waves with infinite memory."""

from .kernels import BACKEND
from .model import DampingSpec, MemoryKernel, SourceSpec, validate_assumptions
from .spectral import Field, SpectralBasis, build_basis
from .history import HistoryField, PastHistory, Profile, init_history
from .solver import Model, SimState, StepperConfig, init_state, run, step
from .energy import EnergyLedger, modified_energy, quadratic_energy

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "DampingSpec", "MemoryKernel", "SourceSpec", "validate_assumptions",
    "Field", "SpectralBasis", "build_basis", "HistoryField", "PastHistory", "Profile",
    "init_history", "Model", "SimState", "StepperConfig", "init_state", "run", "step",
    "EnergyLedger", "modified_energy", "quadratic_energy",
]
