"""Run artifact files: delimited field dumps and the structured JSON report.

A run directory contains:

    config.json   resolved configuration the run used
    u.csv, m.csv  nodal scalar trajectories, one block per time slice
    v.csv         per-step drift (vector components per node)
    P.csv         per-step price path, columns t, P1..Pk
    gamma.csv     per-step congestion source
    report.json   residual histories, monitors, duality gap, timings, checks

Field CSV format: each slice starts with a header line ``# slice t=<value>``
followed by ``i,value`` rows in 1-D or ``i,j,value`` rows in 2-D (vector
files carry one trailing column per component).  Plain text keeps the
desk-scale artifacts diffable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from mfgc.grids import TimeGrid, TorusGrid


class ArtifactError(RuntimeError):
    """Missing or malformed run artifacts."""


def _slice_rows(grid: TorusGrid, slice_values: np.ndarray) -> list[str]:
    rows = []
    if grid.d == 1:
        for i in range(grid.n):
            vals = np.atleast_1d(slice_values[i])
            rows.append(f"{i}," + ",".join(f"{v:.17g}" for v in vals))
    else:
        for i in range(grid.n):
            for j in range(grid.n):
                vals = np.atleast_1d(slice_values[i, j])
                rows.append(f"{i},{j}," + ",".join(f"{v:.17g}" for v in vals))
    return rows


def write_field_csv(path: Path, grid: TorusGrid, times: np.ndarray, data: np.ndarray) -> None:
    """Write a (num_slices, *grid.shape[, comps]) array as slice blocks."""
    lines = []
    for idx, t in enumerate(times):
        lines.append(f"# slice t={t:.17g}")
        lines.extend(_slice_rows(grid, data[idx]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_field_csv(path: Path, grid: TorusGrid, comps: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Read slice blocks back; returns (times, data)."""
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"missing artifact: {path}")
    times = []
    slices = []
    current = None
    shape = grid.shape if comps == 0 else grid.shape + (comps,)
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            if "t=" not in line:
                raise ArtifactError(f"malformed slice header in {path}: {line!r}")
            times.append(float(line.split("t=")[1]))
            current = np.zeros(shape)
            slices.append(current)
            continue
        if current is None:
            raise ArtifactError(f"data before any slice header in {path}")
        parts = line.split(",")
        if grid.d == 1:
            i = int(parts[0])
            vals = [float(p) for p in parts[1:]]
            current[i] = vals[0] if comps == 0 else vals
        else:
            i, j = int(parts[0]), int(parts[1])
            vals = [float(p) for p in parts[2:]]
            current[i, j] = vals[0] if comps == 0 else vals
    return np.asarray(times), np.stack(slices)


def write_price_csv(path: Path, times: np.ndarray, P: np.ndarray) -> None:
    k = P.shape[1]
    header = "t," + ",".join(f"P{i + 1}" for i in range(k))
    rows = [header]
    for t, row in zip(times, P):
        rows.append(f"{t:.17g}," + ",".join(f"{v:.17g}" for v in row))
    Path(path).write_text("\n".join(rows) + "\n")


def read_price_csv(path: Path) -> tuple[np.ndarray, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"missing artifact: {path}")
    lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
    body = lines[1:]
    times = []
    vals = []
    for ln in body:
        parts = [float(p) for p in ln.split(",")]
        times.append(parts[0])
        vals.append(parts[1:])
    return np.asarray(times), np.asarray(vals)


@dataclass
class RunArtifacts:
    """Loaded contents of a run directory."""

    run_dir: Path
    config: dict
    report: dict
    grid: TorusGrid
    tgrid: TimeGrid
    u: np.ndarray  # (nt+1, *shape)
    m: np.ndarray  # (nt+1, *shape)
    v: np.ndarray  # (nt, *shape, d)
    P: np.ndarray  # (nt, k)
    gamma: np.ndarray  # (nt, *shape)


def save_run(
    run_dir: Path,
    config: dict,
    grid: TorusGrid,
    tgrid: TimeGrid,
    u: np.ndarray,
    m: np.ndarray,
    v: np.ndarray,
    P: np.ndarray,
    gamma: np.ndarray,
    report: dict,
) -> None:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(json.dumps(config, indent=2) + "\n")
    node_times = tgrid.times
    step_times = tgrid.times[1:]  # interval data labelled by the upper slice
    write_field_csv(run_dir / "u.csv", grid, node_times, u)
    write_field_csv(run_dir / "m.csv", grid, node_times, m)
    write_field_csv(run_dir / "v.csv", grid, step_times, v)
    write_field_csv(run_dir / "gamma.csv", grid, step_times, gamma)
    write_price_csv(run_dir / "P.csv", step_times, P)
    (run_dir / "report.json").write_text(json.dumps(report, indent=2, default=float) + "\n")


def load_run(run_dir: Path) -> RunArtifacts:
    run_dir = Path(run_dir)
    cfg_path = run_dir / "config.json"
    rep_path = run_dir / "report.json"
    for p in (cfg_path, rep_path):
        if not p.exists():
            raise ArtifactError(f"missing artifact: {p}")
    config = json.loads(cfg_path.read_text())
    report = json.loads(rep_path.read_text())
    gc = config["grid"]
    grid = TorusGrid(d=int(gc["d"]), n=int(gc["n"]))
    tgrid = TimeGrid(T=float(gc["T"]), nt=int(gc["nt"]))
    _, u = read_field_csv(run_dir / "u.csv", grid)
    _, m = read_field_csv(run_dir / "m.csv", grid)
    _, v = read_field_csv(run_dir / "v.csv", grid, comps=grid.d)
    _, gamma = read_field_csv(run_dir / "gamma.csv", grid)
    _, P = read_price_csv(run_dir / "P.csv")
    expected = {
        "u": ((tgrid.nt + 1,) + grid.shape, u.shape),
        "m": ((tgrid.nt + 1,) + grid.shape, m.shape),
        "v": ((tgrid.nt,) + grid.shape + (grid.d,), v.shape),
        "gamma": ((tgrid.nt,) + grid.shape, gamma.shape),
    }
    for name, (want, got) in expected.items():
        if want != got:
            raise ArtifactError(f"artifact {name}.csv has shape {got}, expected {want}")
    return RunArtifacts(
        run_dir=run_dir, config=config, report=report, grid=grid, tgrid=tgrid,
        u=u, m=m, v=v, P=P, gamma=gamma,
    )
