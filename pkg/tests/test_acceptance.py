"""Acceptance criteria, one test per criterion, at the stated tolerances.

Each test prints one `ACCEPTANCE Cn (<name>): PASS|FAIL` line (visible with
pytest -s; the per-test verdict lines of `pytest -v` mirror them).
"""

import json
import shutil
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import congestion_model
from mfgc.artifacts import load_run, write_field_csv
from mfgc.cli import EXIT_OK, EXIT_VERIFY_FAILED, main
from mfgc.equilibrium import solve_equilibrium
from mfgc.grids import TorusGrid, divergence, gradient, inner, integrate, make_grids
from mfgc.model import (
    AffinePrice,
    ConvolutionCoupling,
    ModelSpec,
    QuadraticLagrangian,
    hamiltonian,
    hamiltonian_grad,
)
from mfgc.pde import fp_forward, rho_project
from mfgc.potential import duality_gap, gamma_from_density, potential_B_incomplete
from mfgc.solver import SolveOptions, solve_mfgc


def criterion(num: int, name: str, ok: bool, detail: str = ""):
    verdict = "PASS" if ok else "FAIL"
    print(f"ACCEPTANCE C{num} ({name}): {verdict} {detail}", flush=True)
    assert ok, f"criterion {num} ({name}) failed: {detail}"


HOMOG_CONFIG = {
    "model": {
        "sigma": 0.05,
        "k": 1,
        "lagrangian": {"family": "quadratic", "a_L": 1.0},
        "price": {"family": "affine", "a": [[1.0]], "b": [1.0]},
        "coupling": {"family": "zero"},
        "terminal_g": 0.0,
        "initial_m0": "uniform",
    },
    "grid": {"d": 1, "n": 64, "T": 1.0, "nt": 128},
    "solver": {"outer_tol": 1e-8},
    "seed": 1,
}

CONGESTION_CONFIG = {
    "model": {
        "sigma": 0.1,
        "k": 1,
        "lagrangian": {"family": "quadratic", "a_L": 1.0},
        "price": {"family": "affine", "a": [[1.0]], "b": [0.5]},
        "coupling": {"family": "convolution", "kernel": "delta",
                     "K": {"linear": {"slope": 1.0}}},
        "terminal_g": 0.0,
        "initial_m0": {"cos_bump": {"amplitude": 0.5, "mode": 1}},
    },
    "grid": {"d": 1, "n": 16, "T": 1.0, "nt": 16},
    "solver": {"outer_tol": 1e-8},
    "seed": 2,
}


@pytest.fixture(scope="module")
def run_dirs(tmp_path_factory):
    """All converged CLI runs of the acceptance session (criterion 2 sweeps them)."""
    return []


@pytest.fixture(scope="module")
def homog_run(tmp_path_factory, run_dirs):
    base = tmp_path_factory.mktemp("acceptance_homog")
    cfg = base / "config.json"
    cfg.write_text(json.dumps(HOMOG_CONFIG))
    out = base / "run"
    t0 = time.perf_counter()
    code = main(["solve", "--config", str(cfg), "--out", str(out)])
    elapsed = time.perf_counter() - t0
    assert code == EXIT_OK
    run_dirs.append(out)
    return out, elapsed


@pytest.fixture(scope="module")
def congestion_solution():
    """Criterion 4/5/6 base run: n=32, nt=64, outer_tol=1e-8."""
    grid, tgrid = make_grids(1, 32, 1.0, 64)
    model = congestion_model()
    state, report = solve_mfgc(model, grid, tgrid, opts=SolveOptions(outer_tol=1e-8))
    return model, grid, tgrid, state, report


@pytest.fixture(scope="module")
def ladder_run(tmp_path_factory, run_dirs):
    base = tmp_path_factory.mktemp("acceptance_ladder")
    cfg = base / "config.json"
    cfg.write_text(json.dumps(CONGESTION_CONFIG))
    out = base / "run"
    code = main(["solve", "--config", str(cfg), "--out", str(out), "--refine-ladder", "3"])
    assert code == EXIT_OK
    run_dirs.append(out)
    for level in range(2):
        run_dirs.append(out / f"level_{level}")
    return out


class TestAcceptance:
    def test_c1_homogeneous_fixture(self, homog_run):
        # hand solution of the space-homogeneous reduction:
        # P = 1/2, m = 1, u(x, 0) = -T/8
        out, elapsed = homog_run
        run = load_run(out)
        p_err = float(np.max(np.abs(run.P - 0.5)))
        m_err = float(np.max(np.abs(run.m - 1.0)))
        u0_err = float(np.max(np.abs(run.u[0] + 0.125)))
        ok = p_err <= 1e-6 and m_err <= 1e-8 and u0_err <= 1e-6 and elapsed < 30.0
        criterion(1, "homogeneous fixture", ok,
                  f"|P-0.5|={p_err:.2e} |m-1|={m_err:.2e} |u0+1/8|={u0_err:.2e} t={elapsed:.1f}s")

    def test_c2_mass_and_positivity(self, homog_run, ladder_run, run_dirs):
        # every stored m slice of every converged run, via the verifier
        worst_mass = 0.0
        worst_min = np.inf
        all_ok = True
        for d in run_dirs:
            assert main(["verify", "--run", str(d)]) == EXIT_OK
            result = json.loads((Path(d) / "verify.json").read_text())
            mc = result["checks"]["mass_conservation"]
            pc = result["checks"]["positivity"]
            all_ok = all_ok and mc["passed"] and pc["passed"]
            worst_mass = max(worst_mass, mc["max_error"])
            worst_min = min(worst_min, pc["min_density"])
        ok = all_ok and worst_mass <= 1e-12 and worst_min >= 0.0
        criterion(2, "mass and positivity", ok,
                  f"max |mass-1|={worst_mass:.2e}, min density={worst_min:.3g} over {len(run_dirs)} runs")

    def test_c3_equilibrium_closed_form(self):
        # P = (b - a wbar) / (1 + a) on the quadratic/affine family, against
        # the closed form and a bisection oracle, 100 random draws
        grid = TorusGrid(1, 16)
        rng = np.random.default_rng(3)
        t0 = time.perf_counter()
        worst_closed = 0.0
        worst_oracle = 0.0
        for _ in range(100):
            a = rng.uniform(0.0, 4.0)
            b = rng.normal(scale=2.0)
            wbar = rng.normal(scale=1.5)
            model = ModelSpec(sigma=0.05, horizon=1.0, d=1, k=1,
                              lagrangian=QuadraticLagrangian(1.0),
                              price=AffinePrice(np.array([[a]]), np.array([b])))
            w = np.full((16, 1), wbar)
            m = np.ones(16)
            res = solve_equilibrium(model, grid, 0.0, m, w)
            closed = (b - a * wbar) / (1.0 + a)
            worst_closed = max(worst_closed, abs(res.P[0] - closed))

            # bisection oracle on G(P) = (1 + a) P - (b - a wbar)
            lo, hi = -60.0, 60.0
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                if (1.0 + a) * mid - (b - a * wbar) > 0:
                    hi = mid
                else:
                    lo = mid
            worst_oracle = max(worst_oracle, abs(res.P[0] - 0.5 * (lo + hi)))
        elapsed = time.perf_counter() - t0
        ok = worst_closed <= 1e-9 and worst_oracle <= 1e-9 and elapsed < 5.0
        criterion(3, "equilibrium closed form", ok,
                  f"max closed-form err={worst_closed:.2e}, oracle err={worst_oracle:.2e}, t={elapsed:.2f}s")

    def test_c4_variational_principle(self, congestion_solution):
        # B_incomplete at the solution (with its own frozen congestion
        # source) undercuts 20 feasible competitors built from random drifts
        model, grid, tgrid, state, _ = congestion_solution
        t0 = time.perf_counter()
        f_star = gamma_from_density(model, grid, tgrid, state.m)
        B_sol = potential_B_incomplete(model, grid, tgrid, state.m, state.v, f_star).total
        rng = np.random.default_rng(4)
        x = grid.axis_coords()
        worst = -np.inf
        for _ in range(20):
            v = np.zeros((tgrid.nt,) + grid.shape + (1,))
            for mode in range(1, 3):
                v[..., 0] += (rng.normal(scale=0.2) * np.sin(2 * np.pi * mode * x)
                              + rng.normal(scale=0.2) * np.cos(2 * np.pi * mode * x))
            v[..., 0] += rng.normal(scale=0.2)
            diag = {}
            m_comp = fp_forward(model, grid, tgrid, v, tau=1.0, diagnostics=diag)
            assert diag["projection_magnitude"] <= 1e-13  # competitors stay feasible
            B_comp = potential_B_incomplete(model, grid, tgrid, m_comp, v, f_star).total
            worst = max(worst, B_sol - B_comp)
        elapsed = time.perf_counter() - t0
        ok = worst <= 1e-7 and elapsed < 60.0
        criterion(4, "variational principle", ok,
                  f"max B(sol)-B(competitor)={worst:.3e} (slack 1e-7), t={elapsed:.1f}s")

    def test_c5_duality_certificate(self, congestion_solution, ladder_run):
        model, grid, tgrid, state, _ = congestion_solution
        out = duality_gap(model, grid, tgrid, state.u, state.m, state.v, state.P_traj)
        ladder = json.loads((Path(ladder_run) / "ladder.json").read_text())
        gaps = ladder["gap_certified"]
        ok = (
            out["gap_certified"] <= 1e-4
            and out["gap"] >= -out["allowed_negative"]
            and ladder["n"] == [16, 32, 64]
            and all(b < a for a, b in zip(gaps, gaps[1:]))
        )
        criterion(5, "duality certificate", ok,
                  f"gap={out['gap_certified']:.3e} at n=32/tol=1e-8; ladder gaps={['%.2e' % g for g in gaps]}")

    def test_c6_uniqueness_two_initializations(self, congestion_solution):
        model, grid, tgrid, s1, _ = congestion_solution
        rng = np.random.default_rng(6)
        x = grid.axis_coords()
        s2, _ = solve_mfgc(
            model, grid, tgrid, opts=SolveOptions(outer_tol=1e-8),
            init_u=rng.uniform(-0.5, 0.5, size=(tgrid.nt + 1,) + grid.shape),
            init_m=1.0 + 0.8 * np.cos(2 * np.pi * (x - 0.3)),
        )
        tol = 10 * 1e-8
        du = float(np.max(np.abs(s1.u.data - s2.u.data)))
        dm = float(np.max(np.abs(s1.m.data - s2.m.data)))
        dP = float(np.max(np.abs(s1.P_traj - s2.P_traj)))
        ok = du <= tol and dm <= tol and dP <= tol
        criterion(6, "uniqueness under monotone coupling", ok,
                  f"|du|={du:.2e} |dm|={dm:.2e} |dP|={dP:.2e} (tol {tol:.0e})")

    def test_c7_invariant_suites(self):
        t0 = time.perf_counter()
        rng = np.random.default_rng(7)
        grid = TorusGrid(1, 16)
        model = ModelSpec(sigma=0.1, horizon=1.0, d=2, k=1,
                          lagrangian=QuadraticLagrangian(1.3),
                          price=AffinePrice(np.array([[1.0]]), np.array([0.2])))
        c_L = 1.3

        fenchel_ok = True
        duality_ineq_ok = True
        for _ in range(1000):
            p = rng.normal(scale=3.0, size=2)
            v = rng.normal(scale=3.0, size=2)
            hp = hamiltonian_grad(model, None, 0.0, p)
            H = hamiltonian(model, None, 0.0, p)
            L_at = model.lagrangian.value(None, 0.0, -hp)
            fenchel_ok &= abs(H + L_at + p @ (-hp)) < 1e-8
            L_v = model.lagrangian.value(None, 0.0, v)
            duality_ineq_ok &= H + L_v + p @ v >= 0.5 * c_L * np.sum((v + hp) ** 2) - 1e-8

        ibp_ok = True
        jensen_ok = True
        for _ in range(1000):
            s = rng.normal(size=16)
            w = rng.normal(size=(16, 1))
            lhs = inner(grid, s, divergence(grid, w))
            ibp_ok &= abs(lhs + inner(grid, gradient(grid, s), w)) < 1e-11
            raw = rng.uniform(0.0, 1.0, size=16)
            m = raw / integrate(grid, raw)
            vv = rng.normal(size=16)
            jensen_ok &= integrate(grid, vv * m) ** 2 <= integrate(grid, vv * vv * m) + 1e-12

        rho_ok = True
        for _ in range(1000):
            mm = rng.normal(scale=2.0, size=16)
            once = rho_project(grid, mm)
            rho_ok &= bool(np.max(np.abs(rho_project(grid, once) - once)) < 1e-13)
        rho_ok &= bool(np.allclose(rho_project(grid, np.zeros(16)), 1.0, atol=0.0))
        half = np.zeros(16)
        half[:8] = 2.0
        rho_ok &= bool(np.allclose(rho_project(grid, half), half, atol=0.0))
        raw = rng.uniform(0.1, 1.0, size=16)
        dens = raw / integrate(grid, raw)
        rho_ok &= bool(np.allclose(rho_project(grid, dens), dens, atol=1e-15))

        coup = ConvolutionCoupling(kernel="delta")
        subdif_ok = True
        for _ in range(1000):
            r1, r2 = rng.uniform(0.05, 1.0, size=(2, 16))
            m1 = r1 / integrate(grid, r1)
            m2 = r2 / integrate(grid, r2)
            lhs = coup.F(grid, 0.0, m2) - coup.F(grid, 0.0, m1)
            rhs = integrate(grid, coup.f(grid, 0.0, m1) * (m2 - m1))
            subdif_ok &= lhs >= rhs - 1e-9

        elapsed = time.perf_counter() - t0
        ok = all([fenchel_ok, duality_ineq_ok, ibp_ok, jensen_ok, rho_ok, subdif_ok]) and elapsed < 60.0
        criterion(7, "invariant suites", ok,
                  f"fenchel={fenchel_ok} strong-duality={duality_ineq_ok} ibp={ibp_ok} "
                  f"jensen={jensen_ok} rho={rho_ok} subdifF={subdif_ok}, t={elapsed:.1f}s")

    def test_c8_heat_decay(self):
        grid, tgrid = make_grids(1, 64, 1.0, 256)
        model = ModelSpec(sigma=0.05, horizon=1.0, d=1, k=1,
                          lagrangian=QuadraticLagrangian(1.0),
                          price=AffinePrice(np.array([[1.0]]), np.array([0.0])),
                          initial_m0=lambda x: 1.0 + 0.5 * np.sin(2 * np.pi * x))
        m = fp_forward(model, grid, tgrid, np.zeros((256,) + grid.shape + (1,)), tau=1.0)
        amp = 0.5 * (np.max(m.data[-1]) - np.min(m.data[-1]))
        lam = (2.0 / grid.h**2) * (1.0 - np.cos(2 * np.pi * grid.h))
        predicted = 0.5 * np.exp(-model.sigma * lam * tgrid.T)
        rel = abs(amp - predicted) / predicted
        criterion(8, "heat decay quantitative", rel < 0.02,
                  f"relative error vs discrete eigenvalue formula: {rel:.4f}")

    def test_c9_fault_injection(self, homog_run, tmp_path, capsys):
        src, _ = homog_run
        run = load_run(src)

        def tampered(name, mutate):
            dst = tmp_path / f"tamper_{name}"
            shutil.copytree(src, dst)
            mutate(dst)
            code = main(["verify", "--run", str(dst)])
            out = capsys.readouterr().out
            return code, out

        m = run.m.copy()
        m[10] *= 1.01
        code_m, out_m = tampered("mass", lambda d: write_field_csv(
            d / "m.csv", run.grid, run.tgrid.times, m))
        v = run.v.copy()
        v[5] += 0.03
        code_v, out_v = tampered("v", lambda d: write_field_csv(
            d / "v.csv", run.grid, run.tgrid.times[1:], v))
        g = run.gamma.copy()
        g[20] -= 0.05
        code_g, out_g = tampered("gamma", lambda d: write_field_csv(
            d / "gamma.csv", run.grid, run.tgrid.times[1:], g))

        ok = (
            code_m == EXIT_VERIFY_FAILED and "mass_conservation" in out_m
            and code_v == EXIT_VERIFY_FAILED and "equilibrium_residual" in out_v
            and code_g == EXIT_VERIFY_FAILED and "dual_feasibility" in out_g
        )
        criterion(9, "fault injection", ok,
                  f"mass->{code_m}, v->{code_v}, gamma->{code_g} each exit 3 with the named check")
