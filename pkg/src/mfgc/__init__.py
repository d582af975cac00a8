"""Solver library for mean field games of controls with price coupling on the torus."""

from mfgc.grids import (
    GridError,
    ScalarField,
    TimeGrid,
    TorusGrid,
    VectorField,
    divergence,
    gradient,
    integrate,
    laplacian,
    make_grids,
    periodic_convolve,
)
from mfgc.model import (
    AffinePrice,
    ConvolutionCoupling,
    Custom1DLagrangian,
    Custom1DPrice,
    ModelSpec,
    QuadraticLagrangian,
    ZeroCoupling,
)

__all__ = [
    "GridError",
    "ScalarField",
    "TimeGrid",
    "TorusGrid",
    "VectorField",
    "divergence",
    "gradient",
    "integrate",
    "laplacian",
    "make_grids",
    "periodic_convolve",
    "AffinePrice",
    "ConvolutionCoupling",
    "Custom1DLagrangian",
    "Custom1DPrice",
    "ModelSpec",
    "QuadraticLagrangian",
    "ZeroCoupling",
]

__version__ = "0.1.0"
