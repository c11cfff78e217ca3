"""Simulation and verification engine for 1-d lattices of continuous spins.

Three independent routes to the same ensemble quantities — a closed-form
Gaussian oracle, a deterministic transfer/Fourier engine, and Markov chain
samplers — plus the estimators and command-line experiments that check them
against each other: equivalence of the grand canonical and canonical
ensembles at matched mean spin, and decay of correlations with uniqueness
under changed boundaries.
"""

from .model import (
    ConfigError,
    Interaction,
    LatticeModel,
    Potential,
    SpinConfig,
    Window,
    load_model,
    model_from_dict,
    resize,
)
from .gaussian import (
    GaussianMoments,
    boundary_sensitivity,
    ce_moments,
    conditioned_moments_dense,
    density_at_zero,
    free_energy_ce,
    free_energy_gce,
    gce_moments,
    pair_c_norm,
    sigma_of_m,
    total_variance_over_n,
)
from .transfer import LocalFunction, QuadratureGrid, TransferChain
from .samplers import (
    ChainConfig,
    SampleBatch,
    model_digest,
    run_ce_chain,
    run_gce_chain,
    two_boundary_ce_pair,
)
from .estimators import (
    CorrelationCurve,
    DecayFit,
    FreeEnergyReport,
    covariance_curve,
    curve_from_matrix,
    fit_decay,
    integrated_autocorrelation_time,
    loglinear_rate,
    mean_with_error,
    sigma_of_m_general,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "Potential", "Interaction", "Window", "LatticeModel",
    "SpinConfig", "load_model", "model_from_dict", "resize",
    "GaussianMoments", "gce_moments", "ce_moments", "conditioned_moments_dense",
    "free_energy_gce", "free_energy_ce", "density_at_zero", "sigma_of_m",
    "total_variance_over_n", "boundary_sensitivity", "pair_c_norm",
    "QuadratureGrid", "LocalFunction", "TransferChain",
    "ChainConfig", "SampleBatch", "run_gce_chain", "run_ce_chain",
    "two_boundary_ce_pair", "model_digest",
    "CorrelationCurve", "DecayFit", "FreeEnergyReport", "mean_with_error",
    "integrated_autocorrelation_time", "covariance_curve", "curve_from_matrix",
    "fit_decay", "loglinear_rate", "sigma_of_m_general",
    "__version__",
]
