"""Simulation and verification tools for eigenvector statistics of Levy matrices."""

from .ensemble import EnsembleSpec, build_levy, compute_t, decompose, select_parameters
from .limit_moments import MomentReport, imR_moment, median_moment
from .rde import closed_form_rho0, solve_m_alpha, solve_rde
from .spectral import ParticleConfig, SpectralSample, eigh
from .stable_rand import StableLaw, sample_entry, sample_ppp, sample_stable

__version__ = "0.1.0"

__all__ = [
    "EnsembleSpec",
    "MomentReport",
    "ParticleConfig",
    "SpectralSample",
    "StableLaw",
    "build_levy",
    "closed_form_rho0",
    "compute_t",
    "decompose",
    "eigh",
    "imR_moment",
    "median_moment",
    "sample_entry",
    "sample_ppp",
    "sample_stable",
    "select_parameters",
    "solve_m_alpha",
    "solve_rde",
]
