"""Simulator and analysis toolkit for polarization-entangled photon pairs
from the biexciton-exciton cascade of a quantum dot with finite
fine-structure splitting."""

from .polarization import (
    BELL_PHI_PLUS,
    PLANCK_H_UEV_NS,
    DegreesOfCorrelation,
    FssSplitting,
    basis_ket,
    cascade_ket,
    degree_of_correlation,
    fidelity,
    fidelity_from_correlations,
    joint_probability,
    mix_with_background,
    time_averaged_rho,
)

__all__ = [
    "BELL_PHI_PLUS",
    "PLANCK_H_UEV_NS",
    "DegreesOfCorrelation",
    "FssSplitting",
    "basis_ket",
    "cascade_ket",
    "degree_of_correlation",
    "fidelity",
    "fidelity_from_correlations",
    "joint_probability",
    "mix_with_background",
    "time_averaged_rho",
]

__version__ = "0.1.0"
