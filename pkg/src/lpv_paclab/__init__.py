"""LPV state-space systems, lambda-weighted H2 norms and PAC generalization bounds."""

from .errors import BudgetError, ConfigError, DatasetFormatError, LpvError, NumericalError
from .lpv_core import THETA_STAR, LpvSystem, ThetaFamily, simulate, simulate_batch, theta_system
from .signals import (
    Dataset,
    DistributionSpec,
    PiecewiseConstantSignal,
    generate_dataset,
    l2_norm,
    load_dataset,
    paper_law,
    save_dataset,
)
from .stability_h2 import check_family, h2_norm, h2_norm_sq, lmi_check, solve_gen_lyapunov
from .pac import LossSpec, PacConfig, empirical_risk, theorem1_bound
from .ident import identify
from .volterra import kernel_w, picard_output, truncated_output

__version__ = "0.1.0"

__all__ = [
    "BudgetError",
    "ConfigError",
    "DatasetFormatError",
    "LpvError",
    "NumericalError",
    "THETA_STAR",
    "LpvSystem",
    "ThetaFamily",
    "simulate",
    "simulate_batch",
    "theta_system",
    "Dataset",
    "DistributionSpec",
    "PiecewiseConstantSignal",
    "generate_dataset",
    "l2_norm",
    "load_dataset",
    "paper_law",
    "save_dataset",
    "check_family",
    "h2_norm",
    "h2_norm_sq",
    "lmi_check",
    "solve_gen_lyapunov",
    "LossSpec",
    "PacConfig",
    "empirical_risk",
    "theorem1_bound",
    "identify",
    "kernel_w",
    "picard_output",
    "truncated_output",
]
