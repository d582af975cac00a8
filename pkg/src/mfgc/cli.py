"""Command-line driver: solve a configured problem, verify stored runs,
export plot-ready series and figures.

Commands (exit codes: 0 success / 1 usage or IO error / 2 non-convergence
/ 3 verification failure):

    mfgc solve --config cfg.json --out rundir [--force] [--refine-ladder L]
    mfgc verify --run rundir
    mfgc export-plots --run rundir

The configuration is a JSON document with top-level keys
{model, grid, solver, equilibrium, pde, output, seed}; schema violations
are reported with JSON pointer paths.  Tabulated model ingredients may be
inline arrays or CSV file references resolved relative to the config.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

try:
    import jsonschema
except ImportError:  # pragma: no cover
    jsonschema = None

from mfgc.artifacts import ArtifactError, RunArtifacts, load_run, save_run
from mfgc.equilibrium import EquilibriumOptions, NonConvergenceError, equilibrium_residual
from mfgc.grids import TimeGrid, TorusGrid, gradient, integrate, make_grids
from mfgc.model import (
    AffinePrice,
    ConvolutionCoupling,
    Custom1DLagrangian,
    Custom1DPrice,
    ModelError,
    ModelSpec,
    QuadraticLagrangian,
    ZeroCoupling,
)
from mfgc.pde import CflError, PdeOptions
from mfgc.potential import dual_feasibility_defects, duality_gap, gamma_from_density
from mfgc.solver import (
    ModelValidationError,
    SolveOptions,
    equation_defects,
    solve_mfgc,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NON_CONVERGENCE = 2
EXIT_VERIFY_FAILED = 3


CONFIG_SCHEMA = {
    "type": "object",
    "required": ["model", "grid"],
    "additionalProperties": False,
    "properties": {
        "model": {
            "type": "object",
            "required": ["sigma", "k", "lagrangian", "price"],
            "additionalProperties": False,
            "properties": {
                "sigma": {"type": "number", "exclusiveMinimum": 0},
                "k": {"type": "integer", "minimum": 1},
                "lagrangian": {"type": "object"},
                "price": {"type": "object"},
                "coupling": {"type": "object"},
                "terminal_g": {},
                "initial_m0": {},
                "phi_weight": {"type": "array"},
            },
        },
        "grid": {
            "type": "object",
            "required": ["d", "n", "T", "nt"],
            "additionalProperties": False,
            "properties": {
                "d": {"type": "integer"},
                "n": {"type": "integer"},
                "T": {"type": "number", "exclusiveMinimum": 0},
                "nt": {"type": "integer", "minimum": 1},
            },
        },
        "solver": {"type": "object"},
        "equilibrium": {"type": "object"},
        "pde": {"type": "object"},
        "output": {"type": "object"},
        "seed": {"type": "integer"},
    },
}


def _load_table(spec, base_dir: Path, columns: int) -> np.ndarray:
    """Inline array-of-rows or {"csv": path} reference, as an (n, columns) array."""
    if isinstance(spec, dict) and "csv" in spec:
        path = base_dir / spec["csv"]
        if not path.exists():
            raise ModelError(f"referenced table file does not exist: {path}")
        arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    else:
        arr = np.asarray(spec, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != columns:
        raise ModelError(f"table must have {columns} columns, got shape {arr.shape}")
    return arr


def _build_lagrangian(cfg: dict, base_dir: Path):
    family = cfg.get("family", "quadratic")
    if family == "quadratic":
        return QuadraticLagrangian(a_L=float(cfg.get("a_L", 1.0)), offset=cfg.get("offset"))
    if family == "custom1d":
        tab = _load_table(cfg["table"], base_dir, 3)
        return Custom1DLagrangian.from_table(tab[:, 0], tab[:, 1], tab[:, 2], c_L=float(cfg["c_L"]))
    raise ModelError(f"unknown lagrangian family: {family!r}")


def _piecewise_linear_with_primitive(x_pts: np.ndarray, y_pts: np.ndarray):
    """Interpolant of (x, y) plus its exact primitive anchored at 0."""
    seg = 0.5 * (y_pts[1:] + y_pts[:-1]) * np.diff(x_pts)
    cum = np.concatenate(([0.0], np.cumsum(seg)))
    base = np.interp(0.0, x_pts, cum)

    def f(x):
        x = np.asarray(x, dtype=float)
        if np.any(x < x_pts[0]) or np.any(x > x_pts[-1]):
            raise ModelError("evaluation outside tabulated range")
        return np.interp(x, x_pts, y_pts)

    def F(x):
        x = np.asarray(x, dtype=float)
        if np.any(x < x_pts[0]) or np.any(x > x_pts[-1]):
            raise ModelError("evaluation outside tabulated range")
        i = np.clip(np.searchsorted(x_pts, x, side="right") - 1, 0, len(x_pts) - 2)
        dx = x - x_pts[i]
        slope = (y_pts[i + 1] - y_pts[i]) / (x_pts[i + 1] - x_pts[i])
        return cum[i] - base + y_pts[i] * dx + 0.5 * slope * dx * dx

    return f, F


def _build_price(cfg: dict, base_dir: Path):
    family = cfg.get("family", "affine")
    if family == "affine":
        return AffinePrice(a=np.asarray(cfg["a"], dtype=float), b=np.asarray(cfg["b"], dtype=float))
    if family == "custom1d":
        tab = _load_table(cfg["table"], base_dir, 2)
        psi, phi = _piecewise_linear_with_primitive(tab[:, 0], tab[:, 1])
        if np.any(np.diff(tab[:, 1]) < -1e-12):
            raise ModelError("custom price table must be nondecreasing")
        return Custom1DPrice(psi_fn=psi, phi_fn=phi, growth_C=float(cfg.get("growth_C", 10.0)))
    raise ModelError(f"unknown price family: {family!r}")


def _build_coupling(cfg: dict | None, base_dir: Path):
    if cfg is None or cfg.get("family", "zero") == "zero":
        return ZeroCoupling()
    if cfg["family"] == "convolution":
        kernel_cfg = cfg.get("kernel", "delta")
        if isinstance(kernel_cfg, str):
            kernel = kernel_cfg if kernel_cfg == "delta" else None
            if kernel is None:
                raise ModelError(f"unknown kernel spec: {kernel_cfg!r}")
        elif isinstance(kernel_cfg, (int, float)):
            kernel = float(kernel_cfg)
        elif isinstance(kernel_cfg, dict) and "values" in kernel_cfg:
            kernel = np.asarray(kernel_cfg["values"], dtype=float)
        else:
            raise ModelError("kernel must be 'delta', a constant, or {'values': [...]}")
        k_cfg = cfg.get("K", {"linear": {"slope": 1.0, "intercept": 0.0}})
        if "linear" in k_cfg:
            s = float(k_cfg["linear"].get("slope", 1.0))
            c = float(k_cfg["linear"].get("intercept", 0.0))
            if s < 0:
                raise ModelError("congestion slope must be nonnegative for monotonicity")
            return ConvolutionCoupling(
                kernel=kernel,
                K=lambda w: s * w + c,
                Kint=lambda w: 0.5 * s * w * w + c * w,
                K_bound=abs(c) + 10.0 * abs(s),
            )
        if "table" in k_cfg:
            tab = _load_table(k_cfg["table"], base_dir, 2)
            return ConvolutionCoupling.from_table(tab[:, 0], tab[:, 1], kernel=kernel)
        raise ModelError("coupling K must be {'linear': ...} or {'table': ...}")
    raise ModelError(f"unknown coupling family: {cfg['family']!r}")


def _build_space_data(spec, what: str):
    """Scalar, sampled values, or a small analytic family for boundary data."""
    if spec is None:
        return 0.0
    if isinstance(spec, (int, float)):
        return float(spec)
    if isinstance(spec, str):
        return spec  # "uniform" for densities
    if isinstance(spec, dict) and "values" in spec:
        return np.asarray(spec["values"], dtype=float)
    if isinstance(spec, dict) and "cos_bump" in spec:
        p = spec["cos_bump"]
        amp = float(p.get("amplitude", 0.5))
        mode = int(p.get("mode", 1))
        shift = float(p.get("shift", 0.0))

        def bump(*coords):
            out = 1.0
            for c in coords:
                out = out * np.cos(2.0 * np.pi * mode * (c - shift))
            return 1.0 + amp * out

        return bump
    if isinstance(spec, dict) and "cos" in spec:
        p = spec["cos"]
        amp = float(p.get("amplitude", 1.0))
        mode = int(p.get("mode", 1))

        def wave(*coords):
            out = amp
            for c in coords:
                out = out * np.cos(2.0 * np.pi * mode * c)
            return out

        return wave
    raise ModelError(f"unsupported {what} spec: {spec!r}")


def build_model(config: dict, base_dir: Path) -> tuple[ModelSpec, TorusGrid, TimeGrid]:
    gc = config["grid"]
    grid, tgrid = make_grids(int(gc["d"]), int(gc["n"]), float(gc["T"]), int(gc["nt"]))
    mc = config["model"]
    model = ModelSpec(
        sigma=float(mc["sigma"]),
        horizon=tgrid.T,
        d=grid.d,
        k=int(mc["k"]),
        lagrangian=_build_lagrangian(mc["lagrangian"], base_dir),
        price=_build_price(mc["price"], base_dir),
        coupling=_build_coupling(mc.get("coupling"), base_dir),
        phi_weight=np.asarray(mc["phi_weight"], dtype=float) if "phi_weight" in mc else None,
        terminal_g=_build_space_data(mc.get("terminal_g"), "terminal_g"),
        initial_m0=_build_space_data(mc.get("initial_m0", "uniform"), "initial_m0"),
    )
    return model, grid, tgrid


def build_options(config: dict) -> SolveOptions:
    sc = dict(config.get("solver", {}))
    eq = EquilibriumOptions(**config.get("equilibrium", {}))
    pde = PdeOptions(**config.get("pde", {}))
    if "tau_schedule" in sc:
        sc["tau_schedule"] = tuple(sc["tau_schedule"])
    return SolveOptions(equilibrium=eq, pde=pde, **sc)


def resolve_table_refs(config: dict, base_dir: Path) -> dict:
    """Inline any {'csv': path} table references so run dirs are portable."""
    cfg = json.loads(json.dumps(config))
    mc = cfg.get("model", {})
    spots = [
        (mc.get("lagrangian", {}), "table", 3),
        (mc.get("price", {}), "table", 2),
        (mc.get("coupling", {}).get("K", {}) if isinstance(mc.get("coupling"), dict) else {}, "table", 2),
    ]
    for holder, key, cols in spots:
        spec = holder.get(key)
        if isinstance(spec, dict) and "csv" in spec:
            holder[key] = _load_table(spec, base_dir, cols).tolist()
    return cfg


def validate_config(config: dict) -> list[str]:
    """Schema errors as '<json pointer>: <message>' strings; empty if valid."""
    if jsonschema is None:
        return []
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = []
    for err in sorted(validator.iter_errors(config), key=lambda e: list(e.absolute_path)):
        pointer = "/" + "/".join(str(p) for p in err.absolute_path)
        errors.append(f"{pointer}: {err.message}")
    return errors


# ---------------------------------------------------------------------------
# solve
# ---------------------------------------------------------------------------


def _run_single(config: dict, base_dir: Path, out_dir: Path, force: bool) -> tuple[int, dict]:
    model, grid, tgrid = build_model(config, base_dir)
    opts = build_options(config)
    seed = int(config.get("seed", 0))
    try:
        state, report = solve_mfgc(model, grid, tgrid, opts=opts, force=force, validation_seed=seed)
    except NonConvergenceError as exc:
        partial = {
            "status": "non_convergence",
            "error": str(exc),
            "residual": exc.residual,
            "context": {k: v for k, v in exc.context.items() if k != "history"},
            "history": exc.context.get("history"),
        }
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.json").write_text(json.dumps(partial, indent=2, default=float) + "\n")
        (out_dir / "config.json").write_text(json.dumps(config, indent=2) + "\n")
        print(f"non-convergence: {exc}", file=sys.stderr)
        return EXIT_NON_CONVERGENCE, partial

    gap = duality_gap(model, grid, tgrid, state.u, state.m, state.v, state.P_traj,
                      fstar_seed=seed)
    report.duality_gap = gap
    rep = report.as_dict()
    rep["status"] = "converged"
    gamma = gamma_from_density(model, grid, tgrid, state.m)
    save_run(out_dir, config, grid, tgrid, state.u.data, state.m.data, state.v, state.P_traj, gamma, rep)
    return EXIT_OK, rep


def cmd_solve(config_path: str, out_dir: str | None, force: bool = False, refine_ladder: int = 0) -> int:
    cfg_path = Path(config_path)
    if not cfg_path.exists():
        print(f"config not found: {cfg_path}", file=sys.stderr)
        return EXIT_USAGE
    try:
        config = json.loads(cfg_path.read_text())
    except json.JSONDecodeError as exc:
        print(f"config is not valid JSON: {exc}", file=sys.stderr)
        return EXIT_USAGE
    errors = validate_config(config)
    if errors:
        for e in errors:
            print(f"config schema violation at {e}", file=sys.stderr)
        return EXIT_USAGE
    if out_dir is None:
        out_dir = config.get("output", {}).get("dir")
        if out_dir is None:
            print("no output directory: pass --out or set output.dir in the config", file=sys.stderr)
            return EXIT_USAGE
    out = Path(out_dir)
    base_dir = cfg_path.parent
    try:
        config = resolve_table_refs(config, base_dir)
        if refine_ladder <= 1:
            code, _ = _run_single(config, base_dir, out, force)
            return code
        # Refinement ladder: level l doubles n and quadruples nt (dt ~ h^2),
        # and tightens the outer tolerance by 100x per level so each level's
        # gap certifies its own solve; the finest level runs at the
        # configured tolerance and is copied to the top of the run dir.
        base_n = int(config["grid"]["n"])
        base_nt = int(config["grid"]["nt"])
        base_tol = float(config.get("solver", {}).get("outer_tol", SolveOptions().outer_tol))
        ladder = {"n": [], "nt": [], "h": [], "outer_tol": [], "gap": [], "gap_certified": []}
        final_code = EXIT_OK
        for level in range(refine_ladder):
            cfg_l = json.loads(json.dumps(config))
            cfg_l["grid"]["n"] = base_n * 2**level
            cfg_l["grid"]["nt"] = base_nt * 4**level
            cfg_l.setdefault("solver", {})["outer_tol"] = base_tol * 100.0 ** (refine_ladder - 1 - level)
            dest = out / f"level_{level}" if level < refine_ladder - 1 else out
            code, rep = _run_single(cfg_l, base_dir, dest, force)
            if code != EXIT_OK:
                return code
            ladder["n"].append(cfg_l["grid"]["n"])
            ladder["nt"].append(cfg_l["grid"]["nt"])
            ladder["h"].append(1.0 / cfg_l["grid"]["n"])
            ladder["outer_tol"].append(cfg_l["solver"]["outer_tol"])
            ladder["gap"].append(rep["duality_gap"]["gap"])
            ladder["gap_certified"].append(rep["duality_gap"]["gap_certified"])
        (out / "ladder.json").write_text(json.dumps(ladder, indent=2) + "\n")
        return final_code
    except (ModelValidationError, ModelError, CflError, ArtifactError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------


def verify_run(run: RunArtifacts) -> dict:
    """Re-check the stored artifacts against the discrete system invariants."""
    model, grid, tgrid = build_model(run.config, run.run_dir)
    outer_tol = float(run.config.get("solver", {}).get("outer_tol", SolveOptions().outer_tol))
    theta = float(run.config.get("pde", {}).get("theta_scheme", 1.0))
    checks = {}

    masses = np.array([integrate(grid, s) for s in run.m])
    checks["mass_conservation"] = {
        "passed": bool(np.max(np.abs(masses - 1.0)) <= 1e-12),
        "max_error": float(np.max(np.abs(masses - 1.0))),
        "tolerance": 1e-12,
    }
    checks["positivity"] = {
        "passed": bool(np.min(run.m) >= 0.0),
        "min_density": float(np.min(run.m)),
    }

    eq_res = 0.0
    for j in range(tgrid.nt):
        w = gradient(grid, run.u[j])
        eq_res = max(
            eq_res,
            equilibrium_residual(model, grid, tgrid.times[j + 1], run.v[j], run.P[j], run.m[j + 1], w),
        )
    checks["equilibrium_residual"] = {
        "passed": bool(eq_res <= 1e-6),
        "max_residual": eq_res,
        "tolerance": 1e-6,
    }

    defects = equation_defects(
        model, grid, tgrid, run.u, run.m, run.v, run.P, tau=1.0,
        opts=PdeOptions(theta_scheme=theta), gamma_traj=run.gamma,
    )
    tol_pde = max(10.0 * outer_tol, 1e-9)
    checks["hjb_residual"] = {
        "passed": bool(defects["hjb_defect"] <= tol_pde),
        "defect": defects["hjb_defect"],
        "tolerance": tol_pde,
    }
    checks["fp_residual"] = {
        "passed": bool(defects["fp_defect"] <= tol_pde),
        "defect": defects["fp_defect"],
        "tolerance": tol_pde,
    }
    checks["terminal_condition"] = {
        "passed": bool(defects["terminal_defect"] <= 1e-12),
        "defect": defects["terminal_defect"],
    }

    gamma_model = gamma_from_density(model, grid, tgrid, run.m)
    gamma_err = float(np.max(np.abs(gamma_model - run.gamma)))
    checks["gamma_consistency"] = {
        "passed": bool(gamma_err <= 1e-8),
        "max_error": gamma_err,
    }
    feas = dual_feasibility_defects(model, grid, tgrid, run.u, run.P, run.gamma, theta=theta)
    checks["dual_feasibility"] = {
        "passed": bool(feas["pde_defect"] <= 1e-6 and feas["terminal_defect"] <= 1e-9),
        "pde_defect": feas["pde_defect"],
        "terminal_defect": feas["terminal_defect"],
        "tolerance": 1e-6,
    }

    gap = duality_gap(model, grid, tgrid, run.u, run.m, run.v, run.P)
    gap_tol = max(1e-4, 1e4 * outer_tol)
    checks["duality_gap"] = {
        "passed": bool(
            gap["gap_certified"] <= gap_tol and gap["gap"] >= -gap["allowed_negative"]
        ),
        "gap": gap["gap"],
        "gap_certified": gap["gap_certified"],
        "tolerance": gap_tol,
    }

    all_passed = all(c["passed"] for c in checks.values())
    return {"all_passed": all_passed, "checks": checks}


def cmd_verify(run_dir: str) -> int:
    try:
        run = load_run(Path(run_dir))
    except (ArtifactError, KeyError, ValueError) as exc:
        print(f"cannot load run artifacts: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if run.report.get("status") == "non_convergence":
        print("run dir holds a non-converged solve; nothing to verify", file=sys.stderr)
        return EXIT_USAGE
    result = verify_run(run)
    (run.run_dir / "verify.json").write_text(json.dumps(result, indent=2, default=float) + "\n")
    if result["all_passed"]:
        print("all checks passed")
        return EXIT_OK
    failed = [name for name, c in result["checks"].items() if not c["passed"]]
    print("FAILED checks: " + ", ".join(failed))
    return EXIT_VERIFY_FAILED


# ---------------------------------------------------------------------------
# export-plots
# ---------------------------------------------------------------------------


def cmd_export_plots(run_dir: str) -> int:
    try:
        run = load_run(Path(run_dir))
    except (ArtifactError, KeyError, ValueError) as exc:
        print(f"cannot load run artifacts: {exc}", file=sys.stderr)
        return EXIT_USAGE
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = run.run_dir
    grid, tgrid = run.grid, run.tgrid

    # residual-vs-iteration series, one row per sweep, tau column included
    res_rows = ["tau,iteration,residual"]
    for stage in run.report.get("residuals", []):
        for i, r in enumerate(stage["history"]):
            res_rows.append(f"{stage['tau']:g},{i},{r:.17g}")
    (out / "residuals.csv").write_text("\n".join(res_rows) + "\n")

    fig, ax = plt.subplots(figsize=(5, 3.2))
    for stage in run.report.get("residuals", []):
        ax.semilogy(stage["history"], label=f"tau={stage['tau']:g}")
    ax.set_xlabel("sweep")
    ax.set_ylabel("residual")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out / "residuals.png", dpi=130)
    plt.close(fig)

    # density profiles at quartile times
    nt = tgrid.nt
    quartiles = sorted({0, nt // 4, nt // 2, (3 * nt) // 4, nt})
    header = ("i," if grid.d == 1 else "i,j,") + ",".join(
        f"m_t{tgrid.times[q]:g}" for q in quartiles
    )
    rows = [header]
    if grid.d == 1:
        for i in range(grid.n):
            rows.append(f"{i}," + ",".join(f"{run.m[q][i]:.17g}" for q in quartiles))
    else:
        for i in range(grid.n):
            for j in range(grid.n):
                rows.append(f"{i},{j}," + ",".join(f"{run.m[q][i, j]:.17g}" for q in quartiles))
    (out / "m_profiles.csv").write_text("\n".join(rows) + "\n")

    fig, ax = plt.subplots(figsize=(5, 3.2))
    x = grid.axis_coords()
    for q in quartiles:
        prof = run.m[q] if grid.d == 1 else run.m[q][:, grid.n // 2]
        ax.plot(x, prof, label=f"t={tgrid.times[q]:g}")
    ax.set_xlabel("x")
    ax.set_ylabel("density")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out / "m_profiles.png", dpi=130)
    plt.close(fig)

    # mass / positivity diagnostics and the price path
    diag_rows = ["t,mass,min_density"]
    for j in range(nt + 1):
        diag_rows.append(
            f"{tgrid.times[j]:.17g},{integrate(grid, run.m[j]):.17g},{float(np.min(run.m[j])):.17g}"
        )
    (out / "diagnostics.csv").write_text("\n".join(diag_rows) + "\n")

    fig, ax = plt.subplots(figsize=(5, 3.2))
    for c in range(run.P.shape[1]):
        ax.plot(tgrid.times[1:], run.P[:, c], label=f"P{c + 1}")
    ax.set_xlabel("t")
    ax.set_ylabel("price")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out / "price.png", dpi=130)
    plt.close(fig)

    # gap-vs-h series when a refinement ladder ran
    ladder_path = out / "ladder.json"
    if ladder_path.exists():
        ladder = json.loads(ladder_path.read_text())
        rows = ["h,n,nt,outer_tol,gap,gap_certified"]
        for i in range(len(ladder["h"])):
            rows.append(
                f"{ladder['h'][i]:.17g},{ladder['n'][i]},{ladder['nt'][i]},"
                f"{ladder['outer_tol'][i]:.3g},{ladder['gap'][i]:.17g},{ladder['gap_certified'][i]:.17g}"
            )
        (out / "gap_ladder.csv").write_text("\n".join(rows) + "\n")
        fig, ax = plt.subplots(figsize=(4.2, 3.2))
        ax.loglog(ladder["h"], np.maximum(ladder["gap_certified"], 1e-16), "o-")
        ax.set_xlabel("h")
        ax.set_ylabel("duality gap")
        fig.tight_layout()
        fig.savefig(out / "gap_ladder.png", dpi=130)
        plt.close(fig)

    print(f"plot series and figures written to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="mfgc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="run a configured solve")
    p_solve.add_argument("--config", required=True)
    p_solve.add_argument("--out", default=None, help="run directory (default: output.dir from the config)")
    p_solve.add_argument("--force", action="store_true", help="run despite failed assumption checks")
    p_solve.add_argument("--refine-ladder", type=int, default=0, metavar="L",
                         help="run L refinement levels (doubling n, quadrupling nt)")

    p_verify = sub.add_parser("verify", help="re-check stored run artifacts")
    p_verify.add_argument("--run", required=True)

    p_export = sub.add_parser("export-plots", help="emit plot-ready series and figures")
    p_export.add_argument("--run", required=True)

    args = parser.parse_args(argv)
    if args.command == "solve":
        return cmd_solve(args.config, args.out, force=args.force, refine_ladder=args.refine_ladder)
    if args.command == "verify":
        return cmd_verify(args.run)
    if args.command == "export-plots":
        return cmd_export_plots(args.run)
    parser.error(f"unknown command {args.command!r}")
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
