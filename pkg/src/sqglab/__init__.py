"""Pseudo-spectral solver for the dissipative quasi-geostrophic equation
with fractional dissipation, plus regularity diagnostics."""

__version__ = "0.1.0"

from .spectral import (Grid, PhysicalField, SpectralField, VelocityField, forward_transform,
                       fractional_laplacian, inverse_transform, random_field, riesz_velocity)
from .solver import BlowUpError, SimConfig, SimState, TrajectoryStore, run, step
from .extension import ExtensionConfig, ExtensionField, extend, normal_derivative_limit

__all__ = [
    "Grid", "PhysicalField", "SpectralField", "VelocityField", "forward_transform",
    "inverse_transform", "fractional_laplacian", "riesz_velocity", "random_field",
    "SimConfig", "SimState", "TrajectoryStore", "BlowUpError", "run", "step",
    "ExtensionConfig", "ExtensionField", "extend", "normal_derivative_limit",
]
