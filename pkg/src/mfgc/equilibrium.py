"""Per-time-slice control/price equilibrium.

Given a time t, a density slice m and a gradient-like field w, the slice
equilibrium is the unique pair (v, P) with

    v(x) = -H_p(x, t, w(x) + phi(x,t)' P),
    P    = Psi(t, integral of phi v m),

equivalently the first-order conditions of the strongly convex functional

    J(v) = Phi(t, integral of phi v m) + integral of (L(v) + <w, v>) m.

Since v is an explicit closed form in P while P lives in R^k with k tiny,
the pair is computed by reducing to the k-dimensional root problem
G(P) = P - Psi(t, z(v(P))) = 0, solved by damped fixed-point iteration
with a finite-difference Newton fallback when progress stalls.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mfgc.grids import TorusGrid, integrate
from mfgc.model import ModelSpec


class NonConvergenceError(RuntimeError):
    """Iteration failed to reach tolerance; carries the last residual."""

    def __init__(self, message: str, residual: float, context: dict | None = None):
        super().__init__(message)
        self.residual = residual
        self.context = context or {}


@dataclass(frozen=True)
class EquilibriumOptions:
    tol_P: float = 1e-10
    max_iter: int = 200
    damping: float = 0.5
    jacobian_fd_step: float = 1e-6

    def __post_init__(self):
        if not (self.tol_P > 0):
            raise ValueError("tol_P must be positive")
        if not (0.0 < self.damping <= 1.0):
            raise ValueError("damping must lie in (0, 1]")


@dataclass
class EquilibriumResult:
    v_slice: np.ndarray  # (*grid.shape, d)
    P: np.ndarray  # (k,)
    residual: float
    iterations: int


def demand(model: ModelSpec, grid: TorusGrid, t: float, v_slice: np.ndarray, m_slice: np.ndarray) -> np.ndarray:
    """Weighted net demand z = integral of phi(x,t) v(x) m(x) dx, in R^k."""
    phi = model.phi_at(grid, t)  # (*shape, k, d)
    v = np.asarray(v_slice, dtype=float)
    m = np.asarray(m_slice, dtype=float)
    flux = np.einsum("...kd,...d->...k", phi, v) * m[..., None]
    return np.sum(flux.reshape(-1, model.k), axis=0) * grid.cell_volume


def J_functional(
    model: ModelSpec,
    grid: TorusGrid,
    t: float,
    v_slice: np.ndarray,
    m_slice: np.ndarray,
    w_slice: np.ndarray,
) -> float:
    """Slice objective Phi(t, z) + integral of (L(v) + <w, v>) m."""
    v = np.asarray(v_slice, dtype=float)
    m = np.asarray(m_slice, dtype=float)
    w = np.asarray(w_slice, dtype=float)
    z = demand(model, grid, t, v, m)
    run = model.lagrangian_value(grid, t, v) + np.sum(w * v, axis=-1)
    return model.price_phi(t, z) + integrate(grid, run * m)


def _v_of_P(model: ModelSpec, grid: TorusGrid, t: float, w: np.ndarray, P: np.ndarray, phi: np.ndarray) -> np.ndarray:
    arg = w + np.einsum("...kd,k->...d", phi, P)
    return -model.hamiltonian_grad(grid, t, arg)


def solve_equilibrium(
    model: ModelSpec,
    grid: TorusGrid,
    t: float,
    m_slice: np.ndarray,
    w_slice: np.ndarray,
    opts: EquilibriumOptions | None = None,
    P0: np.ndarray | None = None,
) -> EquilibriumResult:
    """Solve the slice equilibrium; returns (v, P) with residual <= tol_P.

    ``P0`` warm-starts the price (previous slice during sweeps, else 0).
    v is defined everywhere through H_p, including on the null set of m.

    Raises:
        NonConvergenceError: no convergence after ``max_iter`` iterations
            with the damping halved twice and a Newton fallback attempted
            (the documented symptom of data violating the monotonicity
            assumptions).
    """
    opts = opts or EquilibriumOptions()
    m = np.asarray(m_slice, dtype=float)
    w = np.asarray(w_slice, dtype=float)
    phi = model.phi_at(grid, t)
    P = np.zeros(model.k) if P0 is None else np.asarray(P0, dtype=float).copy()

    def G(P_):
        v = _v_of_P(model, grid, t, w, P_, phi)
        z = demand(model, grid, t, v, m)
        return P_ - model.price_psi(t, z)

    g = G(P)
    res = float(np.max(np.abs(g)))
    theta = opts.damping
    slow = 0
    it = 0
    while it < opts.max_iter:
        if res <= opts.tol_P:
            break
        it += 1
        P_try = P - theta * g
        g_try = G(P_try)
        res_try = float(np.max(np.abs(g_try)))
        if res_try <= max(0.5 * res, opts.tol_P):
            P, g, res = P_try, g_try, res_try
            slow = 0
            continue
        if res_try < res:
            # monotone but slow; keep it, but count toward the fallback
            P, g, res = P_try, g_try, res_try
            slow += 1
        else:
            theta *= 0.5
            slow += 2
        if slow < 2:
            continue
        # Progress stalled: finite-difference Newton on G; k is tiny so the
        # dense solve is free.  Exact for affine price maps.
        eps = opts.jacobian_fd_step
        J = np.empty((model.k, model.k))
        for j in range(model.k):
            Pj = P.copy()
            Pj[j] += eps
            J[:, j] = (G(Pj) - g) / eps
        try:
            step = np.linalg.solve(J, -g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(J, -g, rcond=None)[0]
        scale = 1.0
        for _ in range(8):
            P_try = P + scale * step
            g_try = G(P_try)
            res_try = float(np.max(np.abs(g_try)))
            if res_try < res:
                P, g, res = P_try, g_try, res_try
                slow = 0
                theta = opts.damping
                break
            scale *= 0.5
        # if even the Newton line search failed, the halved damping retries

    if res > opts.tol_P:
        raise NonConvergenceError(
            f"slice equilibrium did not converge: residual {res:.3e} after {it} iterations "
            "(model may violate the monotonicity assumptions)",
            residual=res,
            context={"t": t, "P": P.tolist()},
        )
    v = _v_of_P(model, grid, t, w, P, phi)
    return EquilibriumResult(v_slice=v, P=P, residual=res + 0.0, iterations=it)


def equilibrium_residual(
    model: ModelSpec,
    grid: TorusGrid,
    t: float,
    v_slice: np.ndarray,
    P: np.ndarray,
    m_slice: np.ndarray,
    w_slice: np.ndarray,
) -> float:
    """Max of the two slice-system defect norms; zero iff (v, P) solves it."""
    v = np.asarray(v_slice, dtype=float)
    P = np.atleast_1d(np.asarray(P, dtype=float))
    phi = model.phi_at(grid, t)
    v_defect = v - _v_of_P(model, grid, t, np.asarray(w_slice, dtype=float), P, phi)
    z = demand(model, grid, t, v, np.asarray(m_slice, dtype=float))
    p_defect = P - model.price_psi(t, z)
    return max(float(np.max(np.abs(v_defect))), float(np.max(np.abs(p_defect))))


@dataclass(frozen=True)
class EquilibriumBounds:
    """Computable a-priori levels for |P| and ||v||_inf given ||w||_inf <= R.

    Derived from J(v*) <= J(0) plus strong convexity and the linear growth
    of the price map; conservative by construction.  Used as solver
    monitors: a breach is flagged, never silently accepted.
    """

    R: float
    v_inf: float
    P_inf: float


def equilibrium_bounds(model: ModelSpec, grid: TorusGrid, R: float, t: float = 0.0) -> EquilibriumBounds:
    c_L = float(model.lagrangian.c_L)
    lv0 = float(model.lagrangian.lv0_bound(grid))
    lmin0, lmax0 = model.lagrangian.value_at_zero_range(grid, t)
    phimax = model.phi_max(grid, t)
    psi0 = float(np.max(np.abs(model.price_psi(t, np.zeros(model.k)))))
    growth = model.price.linear_growth_constant()

    # J(v*) <= J(0) <= max_x L(x,t,0); J(v) >= min_x L(x,t,0) + c_L/2 Y^2 - A Y
    # with Y = ||v||_{L^2_m} and A collecting the linear terms.
    A = lv0 + R + psi0 * phimax
    B = max(lmax0 - lmin0, 0.0)
    Y = (A + np.sqrt(A * A + 2.0 * c_L * B)) / c_L
    z_max = phimax * Y
    P_inf = float(psi0 + growth * z_max)
    v_inf = (R + phimax * np.sqrt(model.k * model.d) * P_inf + lv0) / c_L
    return EquilibriumBounds(R=R, v_inf=float(v_inf), P_inf=P_inf)
