"""Outer coupling loop: damped fixed-point iteration with continuation.

One sweep of the coupling map, for the continuation parameter tau:

    1. project every density slice, m_bar = rho(m);
    2. per time step j, solve the slice equilibrium with the frozen data
       (m_bar_{j+1}, grad u_j) to get the price path P and the coupling
       source f(m_bar_{j+1});
    3. backward value sweep for u_tilde, freezing the Hamiltonian's
       gradient argument at the current iterate's grad u_j;
    4. per step, re-solve the equilibrium at (m_bar_{j+1}, grad u_tilde_j)
       for the drift v;
    5. forward density sweep for m_tilde with drift v;
    6. damp: u <- (1-theta_u) u + theta_u u_tilde,
             m <- rho((1-theta_m) m + theta_m m_tilde).

At a fixed point the quadruple (u, m, v, P) satisfies the fully coupled
discrete system in which the Hamiltonian argument, the drift and the
equilibrium all collocate diagonally (grad u_j with m_{j+1} on the step
(t_j, t_{j+1}]); that system is the first-order optimality system of the
discrete control problem minimized by the potential layer, which is what
makes the duality gap a valid convergence certificate.

Continuation runs the sweep over a nondecreasing tau schedule from the
decoupled heat system (tau = 0) to the full game (tau = 1), warm-starting
each stage from the previous one.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from mfgc.equilibrium import (
    EquilibriumOptions,
    NonConvergenceError,
    equilibrium_bounds,
    equilibrium_residual,
    solve_equilibrium,
)
from mfgc.grids import ScalarField, TimeGrid, TorusGrid, divergence, gradient, laplacian
from mfgc.model import ModelSpec, validate_assumptions
from mfgc.pde import PdeOptions, fp_forward, hjb_backward, rho_project


class ModelValidationError(ValueError):
    """Model failed the sampled assumption checks (use force=True to override)."""


@dataclass
class MfgState:
    """Discrete solver state: nodal u and m, per-step drift and price."""

    u: ScalarField  # nt+1 slices
    m: ScalarField  # nt+1 slices, every slice a density
    v: np.ndarray  # (nt, *shape, d), drift on (t_j, t_{j+1}]
    P_traj: np.ndarray  # (nt, k), price on (t_j, t_{j+1}]
    tau: float

    def copy(self) -> "MfgState":
        return MfgState(self.u.copy(), self.m.copy(), self.v.copy(), self.P_traj.copy(), self.tau)


@dataclass(frozen=True)
class SolveOptions:
    outer_tol: float = 1e-8
    max_outer: int = 500
    damping_u: float = 0.5
    damping_m: float = 0.5
    tau_schedule: tuple = (0.0, 0.25, 0.5, 0.75, 1.0)
    equilibrium: EquilibriumOptions = field(default_factory=EquilibriumOptions)
    pde: PdeOptions = field(default_factory=PdeOptions)
    tripwire_factor: float = 1e3
    monitor_margin: float = 0.5  # fractional slack on the a-priori monitor levels

    def __post_init__(self):
        sched = tuple(float(t) for t in self.tau_schedule)
        object.__setattr__(self, "tau_schedule", sched)
        if not sched or sched[0] != 0.0 or sched[-1] != 1.0:
            raise ValueError("tau_schedule must start at 0 and end at 1")
        if any(b < a for a, b in zip(sched, sched[1:])):
            raise ValueError("tau_schedule must be nondecreasing")
        if not (0 < self.damping_u <= 1 and 0 < self.damping_m <= 1):
            raise ValueError("damping factors must lie in (0, 1]")
        if self.max_outer < 1:
            raise ValueError("max_outer must be at least 1")


@dataclass
class SolveReport:
    residuals: list = field(default_factory=list)  # per tau: {"tau":, "history": [...]}
    tau_path: list = field(default_factory=list)
    monitors: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    duality_gap: dict = field(default_factory=dict)
    tripwire_ok: bool = True

    def as_dict(self) -> dict:
        return {
            "residuals": self.residuals,
            "tau_path": self.tau_path,
            "monitors": self.monitors,
            "checks": self.checks,
            "timings": self.timings,
            "duality_gap": self.duality_gap,
            "tripwire_ok": self.tripwire_ok,
        }


def residuals(state_before: MfgState, state_after: MfgState) -> float:
    """Max of the sup-norm deltas of u and m between two states."""
    du = float(np.max(np.abs(state_after.u.data - state_before.u.data)))
    dm = float(np.max(np.abs(state_after.m.data - state_before.m.data)))
    return max(du, dm)


def initial_state(
    model: ModelSpec,
    grid: TorusGrid,
    tgrid: TimeGrid,
    init_u=None,
    init_m=None,
) -> MfgState:
    """Default start: u = 0 and every m slice equal to the initial density."""
    nt = tgrid.nt
    if init_u is None:
        u_data = np.zeros((nt + 1,) + grid.shape)
    else:
        u_data = np.broadcast_to(np.asarray(init_u, dtype=float), (nt + 1,) + grid.shape).copy()
    if init_m is None:
        m_slice = model.initial_density(grid)
        m_data = np.broadcast_to(m_slice, (nt + 1,) + grid.shape).copy()
    else:
        m_data = np.broadcast_to(np.asarray(init_m, dtype=float), (nt + 1,) + grid.shape).copy()
        m_data = np.stack([rho_project(grid, s) for s in m_data])
        m_data[0] = model.initial_density(grid)
    return MfgState(
        u=ScalarField(grid, tgrid, u_data),
        m=ScalarField(grid, tgrid, m_data),
        v=np.zeros((nt,) + grid.shape + (grid.d,)),
        P_traj=np.zeros((nt, model.k)),
        tau=0.0,
    )


def _interval_equilibria(
    model: ModelSpec,
    grid: TorusGrid,
    tgrid: TimeGrid,
    m_bar: np.ndarray,
    grads: np.ndarray,
    opts: EquilibriumOptions,
    P_warm: np.ndarray | None,
):
    """Slice equilibria for every step: (v_j, P_j) at (m_bar[j+1], grads[j])."""
    nt = tgrid.nt
    v = np.empty((nt,) + grid.shape + (grid.d,))
    P = np.empty((nt, model.k))
    res_max = 0.0
    prev = None
    times = tgrid.times
    for j in range(nt):
        warm = P_warm[j] if P_warm is not None else prev
        r = solve_equilibrium(model, grid, times[j + 1], m_bar[j + 1], grads[j], opts, P0=warm)
        v[j] = r.v_slice
        P[j] = r.P
        res_max = max(res_max, r.residual)
        prev = r.P
    return v, P, res_max


def picard_step(
    model: ModelSpec,
    grid: TorusGrid,
    tgrid: TimeGrid,
    state: MfgState,
    opts: SolveOptions,
) -> tuple[MfgState, dict]:
    """One damped sweep of the coupling map; returns the new state and info.

    info carries the undamped sweep output (u_tilde, m_tilde), the sweep
    residual max(|u_tilde - u|, |m_tilde - m|), and the diagnostics of the
    two PDE sweeps.
    """
    nt = tgrid.nt
    tau = state.tau
    m_bar = np.stack([rho_project(grid, s) for s in state.m.data])
    grads = np.stack([gradient(grid, state.u.data[j]) for j in range(nt)])

    # price path and coupling source from the frozen iterate
    _, P_traj, eq_res_P = _interval_equilibria(
        model, grid, tgrid, m_bar, grads, opts.equilibrium, state.P_traj if state.P_traj.size else None
    )
    f_traj = np.stack(
        [model.coupling_f(grid, tgrid.times[j + 1], m_bar[j + 1]) for j in range(nt)]
    )

    hjb_diag: dict = {}
    u_tilde = hjb_backward(
        model, grid, tgrid, P_traj, f_traj, tau, opts.pde, grad_ref=grads, diagnostics=hjb_diag
    )

    # drift from the fresh value function
    grads_new = np.stack([gradient(grid, u_tilde.data[j]) for j in range(nt)])
    v_traj, P_new, eq_res_v = _interval_equilibria(
        model, grid, tgrid, m_bar, grads_new, opts.equilibrium, P_traj
    )

    fp_diag: dict = {}
    m_tilde = fp_forward(
        model, grid, tgrid, v_traj, tau, opts.pde, m0=m_bar[0], diagnostics=fp_diag
    )

    res_u = float(np.max(np.abs(u_tilde.data - state.u.data)))
    res_m = float(np.max(np.abs(m_tilde.data - state.m.data)))

    u_damped = (1.0 - opts.damping_u) * state.u.data + opts.damping_u * u_tilde.data
    m_damped = (1.0 - opts.damping_m) * state.m.data + opts.damping_m * m_tilde.data
    m_damped = np.stack([rho_project(grid, s) for s in m_damped])

    new_state = MfgState(
        u=ScalarField(grid, tgrid, u_damped),
        m=ScalarField(grid, tgrid, m_damped),
        v=v_traj,
        P_traj=P_new,
        tau=tau,
    )
    info = {
        "residual": max(res_u, res_m),
        "residual_u": res_u,
        "residual_m": res_m,
        "u_tilde": u_tilde,
        "m_tilde": m_tilde,
        "equilibrium_residual": max(eq_res_P, eq_res_v),
        "hjb": hjb_diag,
        "fp": fp_diag,
    }
    return new_state, info


def _check_monitors(model, grid, tgrid, state, info, opts) -> dict:
    grad_inf = 0.0
    for j in range(tgrid.nt):
        grad_inf = max(grad_inf, float(np.max(np.abs(gradient(grid, state.u.data[j])))))
    bounds = equilibrium_bounds(model, grid, R=grad_inf + 1e-6)
    vals = {
        "u_inf": float(np.max(np.abs(state.u.data))),
        "grad_u_inf": grad_inf,
        "P_inf": float(np.max(np.abs(state.P_traj))) if state.P_traj.size else 0.0,
        "v_inf": float(np.max(np.abs(state.v))) if state.v.size else 0.0,
        "P_bound": bounds.P_inf,
        "v_bound": bounds.v_inf,
        "hjb_bound": info["hjb"].get("hjb_bound"),
        "hjb_bound_ok": info["hjb"].get("hjb_bound_ok", True),
        "projection_magnitude": info["fp"].get("projection_magnitude"),
        "mass_error_max": info["fp"].get("mass_error_max"),
        "min_density": info["fp"].get("min_density"),
    }
    slack = 1.0 + opts.monitor_margin
    vals["breach"] = bool(
        vals["P_inf"] > slack * bounds.P_inf + 1e-9 or vals["v_inf"] > slack * bounds.v_inf + 1e-9
    )
    return vals


def equation_defects(
    model: ModelSpec,
    grid: TorusGrid,
    tgrid: TimeGrid,
    u_data: np.ndarray,
    m_data: np.ndarray,
    v_traj: np.ndarray,
    P_traj: np.ndarray,
    tau: float,
    opts: PdeOptions | None = None,
    gamma_traj: np.ndarray | None = None,
) -> dict:
    """Re-evaluate the four coupled equations on a state, in update form.

    Returns sup-norm defects of: the backward value recursion (with the
    state's own gradient in the Hamiltonian), the forward density
    recursion, the terminal condition, and the per-step equilibrium
    conditions.  All are ~0 exactly at a fixed point of the sweep.
    """
    opts = opts or PdeOptions()
    theta = opts.theta_scheme
    nt, dt = tgrid.nt, tgrid.dt
    times = tgrid.times
    sigma = model.sigma
    hjb_def = 0.0
    fp_def = 0.0
    eq_def = 0.0
    for j in range(nt):
        t_lab = times[j + 1]
        q = gradient(grid, u_data[j])
        phi = model.phi_at(grid, t_lab)
        p_arg = q + np.einsum("...kd,k->...d", phi, P_traj[j])
        h_val = model.hamiltonian(grid, t_lab, p_arg)
        if gamma_traj is not None:
            f_j = gamma_traj[j]
        else:
            f_j = model.coupling_f(grid, t_lab, m_data[j + 1])
        lhs = u_data[j] - theta * dt * sigma * laplacian(grid, u_data[j])
        rhs = u_data[j + 1] + (1.0 - theta) * dt * sigma * laplacian(grid, u_data[j + 1])
        hjb_def = max(hjb_def, float(np.max(np.abs(lhs - rhs + dt * tau * (h_val - f_j)))))

        flux = v_traj[j] * m_data[j + 1][..., None]
        lhs_m = (
            m_data[j + 1]
            - theta * dt * sigma * laplacian(grid, m_data[j + 1])
            + dt * tau * divergence(grid, flux)
        )
        rhs_m = m_data[j] + (1.0 - theta) * dt * sigma * laplacian(grid, m_data[j])
        fp_def = max(fp_def, float(np.max(np.abs(lhs_m - rhs_m))))

        eq_def = max(
            eq_def,
            equilibrium_residual(model, grid, t_lab, v_traj[j], P_traj[j], m_data[j + 1], q),
        )
    terminal_def = float(np.max(np.abs(u_data[nt] - tau * model.terminal_slice(grid))))
    return {
        "hjb_defect": hjb_def,
        "fp_defect": fp_def,
        "terminal_defect": terminal_def,
        "equilibrium_defect": eq_def,
    }


def solve_mfgc(
    model: ModelSpec,
    grid: TorusGrid,
    tgrid: TimeGrid,
    opts: SolveOptions | None = None,
    force: bool = False,
    init_u=None,
    init_m=None,
    validation_seed: int = 0,
) -> tuple[MfgState, SolveReport]:
    """Continuation solve of the full coupled system up to tau = 1.

    Raises:
        ModelValidationError: assumption checks failed and force is False.
        NonConvergenceError: some continuation stage stalled; the error
            context carries the stage, the residual history and the last
            state for post-mortem (non-monotone couplings are the
            documented cause; uniqueness is not guaranteed for them).
    """
    opts = opts or SolveOptions()
    t0 = time.perf_counter()
    report = SolveReport()

    validation = validate_assumptions(model, grid, seed=validation_seed)
    report.checks["assumptions"] = validation.as_dict()
    if not validation.all_passed and not force:
        names = ", ".join(c.name for c in validation.failures())
        raise ModelValidationError(f"model failed assumption checks: {names}")

    state = initial_state(model, grid, tgrid, init_u=init_u, init_m=init_m)
    prev_final_res = None
    prev_tau = None

    for tau in opts.tau_schedule:
        dtau = 0.0 if prev_tau is None else float(tau) - prev_tau
        prev_tau = float(tau)
        state.tau = float(tau)
        history: list[float] = []
        stage_t0 = time.perf_counter()
        converged = False
        for it in range(opts.max_outer):
            state_new, info = picard_step(model, grid, tgrid, state, opts)
            res = info["residual"]
            history.append(res)
            if it == 0 and prev_final_res is not None:
                # warm-start regression tripwire: the first sweep of a new
                # stage may move by O(dtau), never by orders of magnitude
                # beyond it (without the dtau term the floor would trip on
                # every healthy coarse schedule)
                floor = max(prev_final_res, opts.outer_tol, dtau)
                if res > opts.tripwire_factor * floor:
                    report.tripwire_ok = False
            monitors = _check_monitors(model, grid, tgrid, state_new, info, opts)
            if monitors["breach"]:
                raise NonConvergenceError(
                    f"a-priori monitor breached at tau={tau}: "
                    f"|P|={monitors['P_inf']:.3g} vs bound {monitors['P_bound']:.3g}, "
                    f"|v|={monitors['v_inf']:.3g} vs bound {monitors['v_bound']:.3g}",
                    residual=res,
                    context={"tau": tau, "monitors": monitors, "history": history},
                )
            state = state_new
            if res <= opts.outer_tol:
                converged = True
                break
        report.residuals.append({"tau": float(tau), "history": history})
        report.tau_path.append(float(tau))
        report.timings[f"tau_{tau:g}_s"] = time.perf_counter() - stage_t0
        if not converged:
            raise NonConvergenceError(
                f"no convergence at tau={tau}: residual plateau at {history[-1]:.3e} "
                f"after {len(history)} sweeps (possible non-monotone coupling, or an "
                "algorithmic stall; both hypotheses must be examined)",
                residual=history[-1],
                context={"tau": tau, "history": history, "monitors": monitors},
            )
        prev_final_res = history[-1]
        report.monitors = monitors

    # Final consistency pass: equilibria recomputed from the converged pair.
    m_bar = np.stack([rho_project(grid, s) for s in state.m.data])
    grads = np.stack([gradient(grid, state.u.data[j]) for j in range(tgrid.nt)])
    v_traj, P_traj, eq_res = _interval_equilibria(
        model, grid, tgrid, m_bar, grads, opts.equilibrium, state.P_traj
    )
    state = MfgState(
        u=state.u,
        m=ScalarField(grid, tgrid, m_bar),
        v=v_traj,
        P_traj=P_traj,
        tau=1.0,
    )
    defects = equation_defects(
        model, grid, tgrid, state.u.data, state.m.data, state.v, state.P_traj, 1.0, opts.pde
    )
    report.checks["fixed_point_defects"] = defects
    report.checks["fixed_point_consistent"] = bool(
        max(defects["hjb_defect"], defects["fp_defect"], defects["terminal_defect"]) <= 10 * opts.outer_tol
        and defects["equilibrium_defect"] <= 1e-6
    )
    report.checks["final_equilibrium_residual"] = eq_res
    masses = np.sum(state.m.data.reshape(tgrid.nt + 1, -1), axis=1) * grid.cell_volume
    report.checks["mass_error_max"] = float(np.max(np.abs(masses - 1.0)))
    report.checks["min_density"] = float(np.min(state.m.data))
    report.timings["total_s"] = time.perf_counter() - t0
    return state, report
