"""Spectral simulator and verification lab for Navier-Stokes with additive fractional noise."""

__version__ = "0.1.0"

from .convolution import ConvolutionTrajectory, convolve, holder_probe, regularity_probe
from .energy import energy_audit, gronwall_constant, interpolation_norms, ladyzhenskaya_constant
from .estimates import check_admissibility, hs_norm_S_Phi, s_q_series, verify_hs_regime
from .fbm import CylindricalPath, HurstGrid, sample_cylindrical, sample_fbm
from .solver import SolveConfig, compute_K0, compute_tau, solve_direct, solve_local, uniqueness_probe
from .spectral import NoiseOperator, SpectralField, StokesModel, bilinear, diagonal_model, fourier_model

__all__ = [
    "ConvolutionTrajectory",
    "CylindricalPath",
    "HurstGrid",
    "NoiseOperator",
    "SolveConfig",
    "SpectralField",
    "StokesModel",
    "bilinear",
    "check_admissibility",
    "compute_K0",
    "compute_tau",
    "convolve",
    "diagonal_model",
    "energy_audit",
    "fourier_model",
    "gronwall_constant",
    "holder_probe",
    "hs_norm_S_Phi",
    "interpolation_norms",
    "ladyzhenskaya_constant",
    "regularity_probe",
    "s_q_series",
    "sample_cylindrical",
    "sample_fbm",
    "solve_direct",
    "solve_local",
    "uniqueness_probe",
    "verify_hs_regime",
]
