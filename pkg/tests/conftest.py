import numpy as np
import pytest

from mfgc.grids import make_grids
from mfgc.model import AffinePrice, ConvolutionCoupling, ModelSpec, QuadraticLagrangian


def homogeneous_model(sigma=0.05, b=1.0):
    """Space-homogeneous fixture: L = v^2/2, phi = 1, Psi(z) = z + b, f = 0, g = 0."""
    return ModelSpec(
        sigma=sigma,
        horizon=1.0,
        d=1,
        k=1,
        lagrangian=QuadraticLagrangian(1.0),
        price=AffinePrice(np.array([[1.0]]), np.array([b])),
    )


def congestion_model(sigma=0.1, b=0.5, amp=0.5):
    """Local congestion fixture: f(m) = m (delta kernel, K = id), bump start."""
    return ModelSpec(
        sigma=sigma,
        horizon=1.0,
        d=1,
        k=1,
        lagrangian=QuadraticLagrangian(1.0),
        price=AffinePrice(np.array([[1.0]]), np.array([b])),
        coupling=ConvolutionCoupling(kernel="delta"),
        initial_m0=lambda x: 1.0 + amp * np.cos(2.0 * np.pi * x),
    )


@pytest.fixture(scope="session")
def grids_small():
    return make_grids(1, 16, 1.0, 16)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20260809)
