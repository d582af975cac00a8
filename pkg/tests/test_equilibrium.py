"""Slice equilibrium: closed forms, oracles, uniqueness and stability."""

import numpy as np
import pytest

from conftest import homogeneous_model
from mfgc.equilibrium import (
    EquilibriumOptions,
    NonConvergenceError,
    demand,
    equilibrium_bounds,
    equilibrium_residual,
    J_functional,
    solve_equilibrium,
)
from mfgc.grids import TorusGrid, integrate
from mfgc.model import AffinePrice, Custom1DPrice, ModelSpec, QuadraticLagrangian


def scalar_affine_model(a, b, a_L=1.0):
    return ModelSpec(
        sigma=0.05, horizon=1.0, d=1, k=1,
        lagrangian=QuadraticLagrangian(a_L),
        price=AffinePrice(np.array([[float(a)]]), np.array([float(b)])),
    )


def bisection_oracle(model, grid, t, m, w, lo=-50.0, hi=50.0):
    """Root of G(P) = P - Psi(demand(v(P))) by plain bisection (k = 1)."""
    phi = model.phi_at(grid, t)

    def G(P):
        arg = w + np.einsum("...kd,k->...d", phi, np.array([P]))
        v = -model.hamiltonian_grad(grid, t, arg)
        z = demand(model, grid, t, v, m)
        return P - model.price_psi(t, z)[0]

    assert G(lo) < 0 < G(hi)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if G(mid) > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


class TestDemand:
    def test_zero_velocity(self):
        grid = TorusGrid(1, 8)
        model = scalar_affine_model(1.0, 0.0)
        z = demand(model, grid, 0.0, np.zeros((8, 1)), np.ones(8))
        assert z == pytest.approx(0.0)

    def test_constant_velocity_unit_mass(self, rng):
        grid = TorusGrid(1, 8)
        model = scalar_affine_model(1.0, 0.0)
        raw = rng.uniform(0.2, 1.0, size=8)
        m = raw / integrate(grid, raw)
        z = demand(model, grid, 0.0, np.full((8, 1), 0.7), m)
        assert z[0] == pytest.approx(0.7, abs=1e-13)

    def test_symmetric_integrand_vanishes(self):
        grid = TorusGrid(1, 8)
        model = ModelSpec(
            sigma=0.05, horizon=1.0, d=1, k=1,
            lagrangian=QuadraticLagrangian(1.0),
            price=AffinePrice(np.array([[1.0]]), np.array([0.0])),
            phi_weight=np.array([[2.0]]),
        )
        v = np.sin(2 * np.pi * grid.axis_coords())[:, None]
        z = demand(model, grid, 0.0, v, np.ones(8))
        assert z[0] == pytest.approx(0.0, abs=1e-14)

    def test_cauchy_schwarz_bound(self, rng):
        grid = TorusGrid(1, 16)
        model = ModelSpec(
            sigma=0.05, horizon=1.0, d=1, k=1,
            lagrangian=QuadraticLagrangian(1.0),
            price=AffinePrice(np.array([[1.0]]), np.array([0.0])),
            phi_weight=np.array([[1.5]]),
        )
        for _ in range(300):
            raw = rng.uniform(0.0, 1.0, size=16)
            m = raw / integrate(grid, raw)
            v = rng.normal(size=(16, 1))
            z = demand(model, grid, 0.0, v, m)
            bound = 1.5 * np.sqrt(integrate(grid, v[:, 0] ** 2 * m))
            assert abs(z[0]) <= bound + 1e-12


class TestJFunctional:
    def test_zero_normalization(self):
        grid = TorusGrid(1, 8)
        model = scalar_affine_model(1.0, 0.0)
        val = J_functional(model, grid, 0.0, np.zeros((8, 1)), np.ones(8), np.zeros((8, 1)))
        assert val == pytest.approx(0.0)

    def test_closed_form_quadrature(self):
        # v = 1, m uniform, w = 0, L = v^2/2, Phi = z^2/2: J = Phi(1) + 1/2 = 1
        grid = TorusGrid(1, 8)
        model = scalar_affine_model(1.0, 0.0)
        val = J_functional(model, grid, 0.0, np.ones((8, 1)), np.ones(8), np.zeros((8, 1)))
        assert val == pytest.approx(1.0, abs=1e-13)

    def test_solver_output_minimizes(self, rng):
        # J at the equilibrium v is below J at 100 random perturbations
        grid = TorusGrid(1, 16)
        model = scalar_affine_model(1.3, 0.4)
        raw = rng.uniform(0.1, 1.0, size=16)
        m = raw / integrate(grid, raw)
        w = rng.normal(scale=0.5, size=(16, 1))
        res = solve_equilibrium(model, grid, 0.0, m, w)
        J_star = J_functional(model, grid, 0.0, res.v_slice, m, w)
        for _ in range(100):
            v_pert = res.v_slice + rng.normal(scale=0.3, size=(16, 1))
            assert J_star <= J_functional(model, grid, 0.0, v_pert, m, w) + 1e-12


class TestSolveEquilibrium:
    def test_symmetric_zero(self):
        # w = 0, b = 0: P = 0 and v = 0 for any PSD a
        grid = TorusGrid(1, 8)
        for a in [0.0, 0.7, 2.5]:
            model = scalar_affine_model(a, 0.0)
            r = solve_equilibrium(model, grid, 0.0, np.ones(8), np.zeros((8, 1)))
            assert abs(r.P[0]) < 1e-12
            assert np.max(np.abs(r.v_slice)) < 1e-12

    def test_scalar_closed_form(self, rng):
        # P = (b - a wbar) / (1 + a) for L = v^2/2, phi = 1
        grid = TorusGrid(1, 16)
        x = grid.axis_coords()
        w = (0.5 + 0.3 * np.sin(2 * np.pi * x))[:, None]  # wbar = 0.5 on uniform m
        model = scalar_affine_model(1.0, 0.0)
        r = solve_equilibrium(model, grid, 0.0, np.ones(16), w)
        assert r.P[0] == pytest.approx(-0.25, abs=1e-10)
        assert np.allclose(r.v_slice[:, 0], -w[:, 0] + 0.25, atol=1e-10)

    def test_scalar_closed_form_b1(self):
        grid = TorusGrid(1, 16)
        model = scalar_affine_model(1.0, 1.0)
        r = solve_equilibrium(model, grid, 0.0, np.ones(16), np.zeros((16, 1)))
        assert r.P[0] == pytest.approx(0.5, abs=1e-10)
        assert np.allclose(r.v_slice, -0.5, atol=1e-10)

    def test_randomized_closed_form_vs_bisection(self, rng):
        grid = TorusGrid(1, 16)
        for _ in range(40):
            a = rng.uniform(0.0, 4.0)
            b = rng.normal(scale=2.0)
            wbar = rng.normal(scale=1.0)
            w = np.full((16, 1), wbar)
            model = scalar_affine_model(a, b)
            r = solve_equilibrium(model, grid, 0.0, np.ones(16), w)
            expected = (b - a * wbar) / (1.0 + a)
            assert r.P[0] == pytest.approx(expected, abs=1e-9)
            oracle = bisection_oracle(model, grid, 0.0, np.ones(16), w)
            assert r.P[0] == pytest.approx(oracle, abs=1e-9)

    def test_first_order_condition_on_support(self, rng):
        # phi' Psi(z) + L_v(v) + w = 0 where m > 0
        grid = TorusGrid(1, 16)
        model = scalar_affine_model(0.8, -0.3, a_L=1.4)
        raw = rng.uniform(0.0, 1.0, size=16)
        raw[3] = 0.0  # null point: v still defined via H_p there
        m = raw / integrate(grid, raw)
        w = rng.normal(scale=0.5, size=(16, 1))
        opts = EquilibriumOptions()
        r = solve_equilibrium(model, grid, 0.0, m, w, opts)
        z = demand(model, grid, 0.0, r.v_slice, m)
        foc = model.price_psi(0.0, z)[0] + 1.4 * r.v_slice[:, 0] + w[:, 0]
        assert np.max(np.abs(foc[m > 0])) < 10 * opts.tol_P
        assert np.max(np.abs(foc)) < 10 * opts.tol_P  # v extended off-support via H_p

    def test_uniqueness_two_starts(self, rng):
        grid = TorusGrid(1, 16)
        model = scalar_affine_model(2.3, 0.9)
        raw = rng.uniform(0.1, 1.0, size=16)
        m = raw / integrate(grid, raw)
        w = rng.normal(scale=0.7, size=(16, 1))
        opts = EquilibriumOptions()
        r0 = solve_equilibrium(model, grid, 0.0, m, w, opts, P0=np.zeros(1))
        r1 = solve_equilibrium(model, grid, 0.0, m, w, opts, P0=rng.normal(scale=5.0, size=1))
        assert abs(r0.P[0] - r1.P[0]) < 10 * opts.tol_P
        l2m = integrate(grid, np.sum((r0.v_slice - r1.v_slice) ** 2, axis=-1) * m)
        assert np.sqrt(l2m) < 10 * opts.tol_P

    def test_exact_pair_residual(self):
        grid = TorusGrid(1, 16)
        model = scalar_affine_model(1.0, 1.0)
        v = np.full((16, 1), -0.5)
        res = equilibrium_residual(model, grid, 0.0, v, np.array([0.5]), np.ones(16), np.zeros((16, 1)))
        assert res < 1e-12

    def test_defect_residual(self):
        grid = TorusGrid(1, 16)
        model = scalar_affine_model(1.0, 1.0)
        res = equilibrium_residual(model, grid, 0.0, np.zeros((16, 1)), np.array([0.0]),
                                   np.ones(16), np.zeros((16, 1)))
        assert res == pytest.approx(1.0)

    def test_perturbed_v_residual_scales(self, rng):
        grid = TorusGrid(1, 16)
        model = scalar_affine_model(1.0, 1.0)
        c_L = model.lagrangian.c_L
        for eps in [1e-3, 1e-2, 1e-1]:
            v = np.full((16, 1), -0.5) + eps
            res = equilibrium_residual(model, grid, 0.0, v, np.array([0.5]), np.ones(16), np.zeros((16, 1)))
            assert res >= 0.5 * c_L * eps

    def test_nonconvergent_price_map_raises(self):
        # Psi(z) = 1 - z with L = v^2/2, phi = 1, w = 0 makes the reduced
        # residual G(P) = P - Psi(-P) = -1 for every P: no root exists
        # (monotonicity violated), and the solver must report it
        grid = TorusGrid(1, 8)
        price = Custom1DPrice(psi_fn=lambda z: 1.0 - z, phi_fn=lambda z: z - 0.5 * z * z)
        model = ModelSpec(sigma=0.05, horizon=1.0, d=1, k=1,
                          lagrangian=QuadraticLagrangian(1.0), price=price)
        opts = EquilibriumOptions(max_iter=25)
        with pytest.raises(NonConvergenceError) as exc:
            solve_equilibrium(model, grid, 0.0, np.ones(8), np.zeros((8, 1)), opts)
        assert exc.value.residual > 0


class TestStabilityAndBounds:
    def test_price_continuity_halving_sequence(self, rng):
        # as |w2 - w1| -> 0 along halvings, |P2 - P1| -> 0 below any threshold
        grid = TorusGrid(1, 16)
        model = scalar_affine_model(1.5, 0.2)
        raw = rng.uniform(0.1, 1.0, size=16)
        m = raw / integrate(grid, raw)
        w = rng.normal(scale=0.5, size=(16, 1))
        base = solve_equilibrium(model, grid, 0.0, m, w)
        pert = rng.normal(size=(16, 1))
        deltas = []
        for i in range(20):
            w2 = w + pert * 0.5**i
            r2 = solve_equilibrium(model, grid, 0.0, m, w2)
            deltas.append(abs(r2.P[0] - base.P[0]))
        # limit property only: past some index the deltas sit below each
        # threshold; no rate is asserted
        for threshold in [1e-2, 1e-4, 1e-5]:
            assert min(deltas) < threshold
            tail_start = next(i for i, d in enumerate(deltas) if d < threshold)
            assert all(d < threshold for d in deltas[tail_start:])
        assert deltas[-1] <= deltas[0] or deltas[0] == 0.0

    def test_bounds_hold_on_random_inputs(self, rng):
        grid = TorusGrid(1, 16)
        model = scalar_affine_model(1.0, 0.5)
        R = 2.0
        bounds = equilibrium_bounds(model, grid, R)
        for _ in range(100):
            raw = rng.uniform(0.0, 1.0, size=16)
            m = raw / integrate(grid, raw)
            w = rng.uniform(-R, R, size=(16, 1))
            r = solve_equilibrium(model, grid, 0.0, m, w)
            assert abs(r.P[0]) <= bounds.P_inf
            assert np.max(np.abs(r.v_slice)) <= bounds.v_inf

    def test_homogeneous_fixture_prices(self):
        grid = TorusGrid(1, 16)
        model = homogeneous_model()
        r = solve_equilibrium(model, grid, 0.3, np.ones(16), np.zeros((16, 1)))
        assert r.P[0] == pytest.approx(0.5, abs=1e-12)
