"""Likelihood approximation for dynamic factor models through the dynamic mode decomposition."""

from .dfm import (
    InnovationsForm,
    PanelData,
    StateSpaceModel,
    filter_gap,
    kalman_loglik,
    simulate_dfm,
    solve_riccati,
    var1_loglik,
    var_coefficient,
)
from .dmd import ReducedVAR, build_snapshots, dmd_fit, dmd_fit_moments, dmd_loglik, truncated_svd
from .errors import DmdlikError
from .estimation import (
    DFMMap,
    GeneratorBinding,
    MAMap,
    MCMCConfig,
    OptConfig,
    ParameterVector,
    SpectralModel,
    approx_loglik,
    mle_fit,
    monte_carlo_study,
    rwmh_sample,
    whittle_loglik,
)
from .ma import JacobianSet, MARepresentation, assemble_ma, commutability_slackness, simulate_micro_panel
from .rank import RankConfig, RankReport, gavish_donoho, gd_lambda, select_rank

__version__ = "0.1.0"

__all__ = [
    "DFMMap",
    "DmdlikError",
    "GeneratorBinding",
    "InnovationsForm",
    "JacobianSet",
    "MAMap",
    "MARepresentation",
    "MCMCConfig",
    "OptConfig",
    "PanelData",
    "ParameterVector",
    "RankConfig",
    "RankReport",
    "ReducedVAR",
    "SpectralModel",
    "StateSpaceModel",
    "approx_loglik",
    "assemble_ma",
    "build_snapshots",
    "commutability_slackness",
    "dmd_fit",
    "dmd_fit_moments",
    "dmd_loglik",
    "filter_gap",
    "gavish_donoho",
    "gd_lambda",
    "kalman_loglik",
    "mle_fit",
    "monte_carlo_study",
    "rwmh_sample",
    "select_rank",
    "simulate_dfm",
    "simulate_micro_panel",
    "solve_riccati",
    "truncated_svd",
    "var1_loglik",
    "var_coefficient",
    "whittle_loglik",
]
