"""Rough paths, rough stochastic integrals and BSDEs with rough drivers."""

from .bsde import Driver, solve_lipschitz_bsde, solve_quadratic_bsde_small
from .controlled import EssBoundedControlledPath, StochasticControlledPath, controlled_distance, controlled_norm
from .flow import VectorField, solve_backward_flow, solve_nonlinear_rough_bsde, transformed_driver
from .integral import rough_stochastic_integrate, stability_audit
from .linear import LinearRoughBsdeProblem, duality_closed_form, solve_linear_rough_bsde
from .models import BinomialTree, BrownianEnsemble, martingale_decomposition, simulate_brownian
from .pde import MarkovianProblem, fd_pde_oracle, feynman_kac_u, simulate_forward_sde
from .roughpath import (
    RoughPath,
    SampledPath,
    TimeGrid,
    canonical_lift,
    ito_brownian_lift,
    p_variation,
    rough_distance,
    rough_path_metrics,
    stratonovich_brownian_lift,
)
from .sewing import sew_deterministic, sew_stochastic
from .tables import ConvergenceTable, fit_rate

__version__ = "0.1.0"
