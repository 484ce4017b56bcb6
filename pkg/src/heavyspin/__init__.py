"""Spherical mixed p-spin glasses with heavy-tailed disorder: scales, free energies, simulations."""

__version__ = "0.1.0"

from .disorder import CouplingTensor, Hamiltonian, Layer, MixtureSpec, generate
from .errors import BudgetExceeded, ConfigError, NumericalError
from .parisi import MixtureFunction, OrderParameter, minimize_cs, parisi_value
from .tails import Regime, TailLaw, TailScales, lambda_stat, quantile_scale

__all__ = [
    "BudgetExceeded", "ConfigError", "CouplingTensor", "Hamiltonian", "Layer", "MixtureFunction",
    "MixtureSpec", "NumericalError", "OrderParameter", "Regime", "TailLaw", "TailScales",
    "generate", "lambda_stat", "minimize_cs", "parisi_value", "quantile_scale",
]
