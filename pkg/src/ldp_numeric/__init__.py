"""Local differential privacy mechanisms for numeric data."""

from .params import (
    MechanismKind,
    PrivacyBudget,
    solve_beta,
    solve_p00,
    solve_t_opt,
    t_pm_sub,
    variance,
    worst_case_variance,
)
from .mechanisms import RandomStream, perturb
from .discretize import GridSpec, discretize, perturb_discrete
from .multidim import choose_k, estimate_means, perturb_tuple

__version__ = "0.1.0"

__all__ = [
    "MechanismKind",
    "PrivacyBudget",
    "RandomStream",
    "GridSpec",
    "choose_k",
    "discretize",
    "estimate_means",
    "perturb",
    "perturb_discrete",
    "perturb_tuple",
    "solve_beta",
    "solve_p00",
    "solve_t_opt",
    "t_pm_sub",
    "variance",
    "worst_case_variance",
]
