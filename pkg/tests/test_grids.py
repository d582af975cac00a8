"""Grid construction and the discrete-calculus identities it guarantees."""

import numpy as np
import pytest

from mfgc.grids import (
    GridError,
    TorusGrid,
    divergence,
    gradient,
    inner,
    integrate,
    laplacian,
    make_grids,
    periodic_convolve,
    reflect_kernel,
)


class TestMakeGrids:
    def test_basic_1d(self):
        grid, tgrid = make_grids(1, 4, 1.0, 8)
        assert grid.h == 0.25
        assert tgrid.dt == 0.125

    def test_basic_2d(self):
        grid, tgrid = make_grids(2, 8, 2.0, 16)
        assert grid.num_nodes == 64
        assert tgrid.dt == 0.125

    def test_rejects_bad_dimension(self):
        with pytest.raises(GridError, match="unsupported dimension"):
            make_grids(3, 8, 1.0, 8)

    def test_rejects_coarse_grid(self):
        with pytest.raises(GridError):
            make_grids(1, 3, 1.0, 8)

    def test_rejects_nonpositive_horizon(self):
        with pytest.raises(GridError):
            make_grids(1, 8, 0.0, 8)

    def test_rejects_zero_steps(self):
        with pytest.raises(GridError):
            make_grids(1, 8, 1.0, 0)

    def test_nodes_wrap(self):
        grid = TorusGrid(1, 8)
        assert np.allclose(grid.axis_coords(), np.arange(8) / 8.0)


class TestIntegrate:
    def test_constant(self):
        grid = TorusGrid(1, 8)
        assert integrate(grid, np.ones(8)) == 1.0
        grid2 = TorusGrid(2, 8)
        assert integrate(grid2, np.ones((8, 8))) == pytest.approx(1.0, abs=1e-15)

    def test_sine_integrates_to_zero(self):
        grid = TorusGrid(1, 8)
        x = grid.axis_coords()
        assert integrate(grid, np.sin(2 * np.pi * x)) == pytest.approx(0.0, abs=1e-15)

    def test_exact_for_low_trig(self):
        # rectangle rule is exact for trig polynomials below Nyquist:
        # oracle = symbolic integral of 1 + 0.5 sin(2 pi x) over [0,1] = 1
        grid = TorusGrid(1, 8)
        x = grid.axis_coords()
        assert integrate(grid, 1.0 + 0.5 * np.sin(2 * np.pi * x)) == pytest.approx(1.0, abs=1e-15)

    def test_rejects_nonfinite(self):
        grid = TorusGrid(1, 8)
        vals = np.ones(8)
        vals[3] = np.nan
        with pytest.raises(GridError, match="non-finite"):
            integrate(grid, vals)


class TestGradient:
    def test_constant_is_zero(self):
        grid = TorusGrid(2, 8)
        assert np.all(gradient(grid, np.full((8, 8), 3.7)) == 0.0)

    def test_sine_n4_hand_value(self):
        # centered difference of sin(2 pi x) at x=0 with h=1/4:
        # (sin(2 pi h) - sin(-2 pi h)) / (2h) = sin(pi/2) / (1/4) = 4
        grid = TorusGrid(1, 4)
        x = grid.axis_coords()
        g = gradient(grid, np.sin(2 * np.pi * x))
        assert g[0, 0] == pytest.approx(4.0, abs=1e-14)

    def test_wrapped_ramp_seam(self):
        # a linear ramp is discontinuous across the seam; the centered stencil
        # there sees the jump, by design rather than by error
        grid = TorusGrid(1, 8)
        ramp = grid.axis_coords().copy()
        g = gradient(grid, ramp)[:, 0]
        assert np.allclose(g[1:-1], 1.0)
        jump = (ramp[1] - ramp[-1]) / (2 * grid.h)
        assert g[0] == pytest.approx(jump)


class TestDivergenceLaplacian:
    def test_constant_vector_divergence(self):
        grid = TorusGrid(2, 8)
        assert np.all(divergence(grid, np.full((8, 8, 2), 1.3)) == 0.0)

    def test_divergence_hand_value(self):
        grid = TorusGrid(1, 4)
        x = grid.axis_coords()
        v = np.sin(2 * np.pi * x)[:, None]
        assert divergence(grid, v)[0] == pytest.approx(4.0, abs=1e-14)

    def test_laplacian_constant(self):
        grid = TorusGrid(1, 8)
        assert np.all(laplacian(grid, np.full(8, 2.0)) == 0.0)

    def test_laplacian_eigenvalue(self):
        # stencil eigenvalue on sin(2 pi x): -(2/h^2)(1 - cos(2 pi h))
        grid = TorusGrid(1, 8)
        h = grid.h
        x = grid.axis_coords()
        s = np.sin(2 * np.pi * x)
        lam = -(2.0 / h**2) * (1.0 - np.cos(2 * np.pi * h))
        assert np.allclose(laplacian(grid, s), lam * s, atol=1e-12)
        assert laplacian(grid, s)[2] == pytest.approx(lam, rel=1e-12)

    def test_telescoping_randomized(self, rng):
        # sum of div(w) and of lap(s) vanish for any field (1000 samples)
        for d, n in [(1, 16), (2, 8)]:
            grid = TorusGrid(d, n)
            for _ in range(500):
                s = rng.normal(size=grid.shape)
                w = rng.normal(size=grid.shape + (d,))
                assert abs(integrate(grid, divergence(grid, w))) < 1e-12
                assert abs(integrate(grid, laplacian(grid, s))) < 1e-12

    def test_integration_by_parts_randomized(self, rng):
        # <s, div w> = -<grad s, w> exactly up to roundoff (1000 samples)
        for d, n in [(1, 16), (2, 8)]:
            grid = TorusGrid(d, n)
            for _ in range(500):
                s = rng.normal(size=grid.shape)
                w = rng.normal(size=grid.shape + (d,))
                lhs = inner(grid, s, divergence(grid, w))
                rhs = -inner(grid, gradient(grid, s), w)
                assert abs(lhs - rhs) < 1e-11


class TestJensen:
    def test_cauchy_schwarz_randomized(self, rng):
        # |int v m|^2 <= int |v|^2 m for densities m (1000 samples)
        grid = TorusGrid(1, 16)
        for _ in range(1000):
            raw = rng.uniform(0.0, 1.0, size=16)
            m = raw / integrate(grid, raw)
            v = rng.normal(size=(16, 1))
            mean = integrate(grid, v[:, 0] * m)
            second = integrate(grid, v[:, 0] ** 2 * m)
            assert mean**2 <= second + 1e-12


class TestConvolve:
    def test_delta_identity(self, rng):
        grid = TorusGrid(1, 8)
        delta = np.zeros(8)
        delta[0] = 1.0 / grid.h
        m = rng.normal(size=8)
        assert np.allclose(periodic_convolve(grid, m, delta), m, atol=1e-13)

    def test_unit_mass_constant_kernel(self, rng):
        grid = TorusGrid(1, 8)
        raw = rng.uniform(0.1, 1.0, size=8)
        m = raw / integrate(grid, raw)
        out = periodic_convolve(grid, m, np.ones(8))
        assert np.allclose(out, 1.0, atol=1e-13)

    def test_uniform_density_any_kernel(self, rng):
        # uniform m maps any kernel to the constant integrate(kernel)
        grid = TorusGrid(1, 8)
        k = rng.normal(size=8)
        out = periodic_convolve(grid, np.ones(8), k)
        expected = grid.h * np.sum(k)  # direct sum oracle
        assert np.allclose(out, expected, atol=1e-13)

    def test_commutative_bilinear(self, rng):
        grid = TorusGrid(2, 8)
        a = rng.normal(size=(8, 8))
        b = rng.normal(size=(8, 8))
        c = rng.normal(size=(8, 8))
        assert np.allclose(periodic_convolve(grid, a, b), periodic_convolve(grid, b, a), atol=1e-12)
        lhs = periodic_convolve(grid, a, 2.0 * b + c)
        rhs = 2.0 * periodic_convolve(grid, a, b) + periodic_convolve(grid, a, c)
        assert np.allclose(lhs, rhs, atol=1e-12)

    def test_sup_bound_on_densities(self, rng):
        # max |m * k| <= max |k| for unit-mass densities
        grid = TorusGrid(1, 16)
        for _ in range(200):
            raw = rng.uniform(0.0, 1.0, size=16)
            m = raw / integrate(grid, raw)
            k = rng.normal(size=16)
            conv = periodic_convolve(grid, m, k)
            assert np.max(np.abs(conv)) <= np.max(np.abs(k)) + 1e-12

    def test_reflect_kernel_adjoint(self, rng):
        # <a * k, b> = <a, b * reflect(k)>: the identity the coupling uses
        grid = TorusGrid(1, 8)
        a, b, k = rng.normal(size=(3, 8))
        lhs = inner(grid, periodic_convolve(grid, a, k), b)
        rhs = inner(grid, a, periodic_convolve(grid, b, reflect_kernel(grid, k)))
        assert lhs == pytest.approx(rhs, abs=1e-12)
