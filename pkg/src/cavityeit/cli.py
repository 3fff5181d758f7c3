"""Experiment orchestration: config in, CSV tables and a JSON manifest out.

Exit codes: 2 config/schema problem, 3 solver failure, 4 inadequate
truncation or dimension cap. Reruns with the same config and seed write
byte-identical CSVs; the manifest records versions, seeds, warnings, and
wall time, and every CSV row ends with the run identifier that names its
manifest.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
import warnings
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import ConfigError, RunConfig, effective_g, parse_config
from .hilbert import DimensionCapError, build_space
from .mcwf import McwfPointSolver
from .model import SystemParams
from .observables import TruncationError
from .semiclassical import SemiclassicalPointSolver
from .steadystate import SolverError
from .sweep import (
    WindowError,
    QuantumPointSolver,
    default_window,
    fwhm,
    min_fwhm,
    resolve_fock_dim,
    spectrum,
    sweep_control,
)

__all__ = ["run_config", "compare_methods", "representative_params", "main"]

EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_TRUNCATION = 4

MCWF_T_FINAL = 60.0

# display-only truncation for the mean-field Poisson distribution
_SC_FOCK_FALLBACK = 12


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "%.12e" % float(value)
    if value is None:
        return ""
    return str(value)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _resolved_dict(cfg: RunConfig) -> dict:
    d = {
        "kind": cfg.kind,
        "params": asdict(cfg.params),
        "n_atoms_list": list(cfg.n_atoms_list),
        "method": cfg.method,
        "g_scaling": cfg.g_scaling,
        "fock_dim": cfg.fock_dim,
        "window": list(cfg.window) if cfg.window else None,
        "n_points": cfg.n_points,
        "seed": cfg.seed,
        "n_traj": cfg.n_traj,
        "threads": cfg.threads,
        "extras": {
            k: list(v) if isinstance(v, tuple) else v for k, v in cfg.extras.items()
        },
    }
    return d


def _run_id(cfg: RunConfig) -> str:
    blob = json.dumps(_resolved_dict(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def _scaled_params(cfg: RunConfig, n_atoms: int, g: float | None = None,
                   **changes) -> SystemParams:
    return replace(cfg.params, g=effective_g(cfg, n_atoms, g), **changes)


def representative_params(cfg: RunConfig) -> tuple[SystemParams, int]:
    """One concrete (params, n_atoms) pair summarizing a config.

    Used for cross-validation smoke checks: first atom count (or the
    quantum-feasible stand-in for mean-field comparisons), the largest
    control-grid entry (relaxation slows as omega_c shrinks, and the smoke
    checks integrate to the steady state), range midpoints for search rules.
    """
    n = int(cfg.extras.get("quantum_n_atoms", cfg.n_atoms_list[0]))
    changes: dict = {}
    if cfg.kind == "control-sweep" or cfg.extras.get("scan") == "control":
        changes["omega_c"] = cfg.extras["omega_grid"][-1]
    elif "omega_range" in cfg.extras:
        lo, hi = cfg.extras["omega_range"]
        changes["omega_c"] = 0.5 * (lo + hi)
    g = None
    if cfg.kind == "fwhm-map":
        if "g_list" in cfg.extras:
            g = cfg.extras["g_list"][0]
        else:
            g, om = cfg.extras["g_omega_pairs"][0]
            changes["omega_c"] = om
    elif cfg.kind == "statistics":
        pool = tuple(cfg.extras.get("g_list") or ()) + tuple(
            cfg.extras.get("g_collective_list") or ()
        )
        g = pool[0]
    if "delta_p" in cfg.extras:
        changes["delta_p"] = cfg.extras["delta_p"]
    return _scaled_params(cfg, n, g, **changes), n


def _fock_for(cfg: RunConfig, params: SystemParams, n_atoms: int) -> int:
    if cfg.fock_dim is not None:
        return cfg.fock_dim
    return resolve_fock_dim(params, n_atoms)


def _make_point_solver(cfg: RunConfig, params: SystemParams, n_atoms: int,
                       fock_used: dict):
    """Per-method detuning solver; records the truncation it settled on."""
    if cfg.method == "semiclassical":
        return SemiclassicalPointSolver(
            params, n_atoms, fock_dim=cfg.fock_dim or _SC_FOCK_FALLBACK
        )
    fock = _fock_for(cfg, params, n_atoms)
    fock_used[str(n_atoms)] = fock
    space = build_space(n_atoms, fock)
    if cfg.method == "mcwf":
        return McwfPointSolver(
            params, space, n_traj=cfg.n_traj, base_seed=cfg.seed,
            t_final=MCWF_T_FINAL, n_jobs=cfg.threads,
        )
    return QuantumPointSolver(params, space)


def _solver_factory(cfg: RunConfig, n_atoms: int, fock_used: dict):
    def factory(params: SystemParams):
        return _make_point_solver(cfg, params, n_atoms, fock_used)

    return factory


_FWHM_COLS = [
    "fwhm", "peak_location", "peak_height", "left_cross", "right_cross",
    "refined", "uncertainty", "notes",
]


def _fwhm_row(res) -> list:
    return [
        res.fwhm, res.peak_location, res.peak_height, res.left_cross,
        res.right_cross, res.refined,
        res.uncertainty if res.uncertainty is not None else float("nan"),
        ";".join(res.notes),
    ]


def _run_spectrum(cfg: RunConfig, rid: str, fock_used: dict):
    n = cfg.n_atoms_list[0]
    params = _scaled_params(cfg, n)
    solver = _make_point_solver(cfg, params, n, fock_used)
    spec = spectrum(
        params, n, window=cfg.window, n_points=cfg.n_points,
        method=cfg.method, point_solver=solver, n_jobs=cfg.threads,
    )
    fock = len(spec.points[0].photon_dist)
    header = [
        "delta_p", "transmission_paper_norm", "transmission_unit_norm",
        "pop11", "pop22", "pop33", "g2",
    ] + [f"p{k}" for k in range(fock)]
    if spec.transmission_se is not None:
        header.append("transmission_se")
    header.append("run_id")
    rows = []
    for i, (d, obs) in enumerate(zip(spec.detunings, spec.points)):
        row = [
            d, obs.transmission_paper, obs.transmission,
            obs.pop11, obs.pop22, obs.pop33, obs.g2,
        ] + list(obs.photon_dist)
        if spec.transmission_se is not None:
            row.append(spec.transmission_se[i])
        row.append(rid)
        rows.append(row)
    return [("spectrum.csv", header, rows)]


def _run_fwhm_map(cfg: RunConfig, rid: str, fock_used: dict):
    rows = []
    for n in cfg.n_atoms_list:
        if "g_list" in cfg.extras:
            combos = [(g, cfg.params.omega_c) for g in cfg.extras["g_list"]]
        else:
            combos = list(cfg.extras["g_omega_pairs"])
        for g_raw, omega in combos:
            params = _scaled_params(cfg, n, g_raw, omega_c=omega)
            sweep = sweep_control(
                params, n, [omega], method=cfg.method, window=cfg.window,
                n_points=cfg.n_points, fock_dim=cfg.fock_dim, n_jobs=cfg.threads,
                point_solver_factory=_solver_factory(cfg, n, fock_used),
            )
            res = sweep[0][1]
            rows.append([n, params.g, omega] + _fwhm_row(res) + [rid])
    header = ["n_atoms", "g", "omega_c"] + _FWHM_COLS + ["run_id"]
    return [("fwhm_map.csv", header, rows)]


def _run_control_sweep(cfg: RunConfig, rid: str, fock_used: dict):
    artifacts = []
    min_rows = []
    grid = cfg.extras["omega_grid"]
    for n in cfg.n_atoms_list:
        params = _scaled_params(cfg, n)
        sweep = sweep_control(
            params, n, grid, method=cfg.method, window=cfg.window,
            n_points=cfg.n_points, fock_dim=cfg.fock_dim, n_jobs=cfg.threads,
            point_solver_factory=_solver_factory(cfg, n, fock_used),
        )
        header = ["omega_c"] + _FWHM_COLS + ["run_id"]
        rows = [[om] + _fwhm_row(res) + [rid] for om, res in sweep]
        artifacts.append((f"fwhm_n{n}.csv", header, rows))
        om_star, best = min(sweep, key=lambda item: item[1].fwhm)
        min_rows.append([n, om_star, best.fwhm, rid])
    artifacts.append(
        ("min_fwhm.csv", ["n_atoms", "omega_star", "fwhm_min", "run_id"], min_rows)
    )
    return artifacts


def _run_min_fwhm(cfg: RunConfig, rid: str, fock_used: dict):
    rows = []
    for n in cfg.n_atoms_list:
        params = _scaled_params(cfg, n)
        om_star, res = min_fwhm(
            params, n, cfg.extras["omega_range"], method=cfg.method,
            window=cfg.window, n_points=cfg.n_points, fock_dim=cfg.fock_dim,
            n_jobs=cfg.threads,
            point_solver_factory=_solver_factory(cfg, n, fock_used),
        )
        rows.append([n, om_star, res.fwhm, rid])
    return [("min_fwhm.csv", ["n_atoms", "omega_star", "fwhm_min", "run_id"], rows)]


def _fwhm_single(cfg: RunConfig, params: SystemParams, n: int, fock_used: dict):
    sweep = sweep_control(
        params, n, [params.omega_c], method=cfg.method, window=cfg.window,
        n_points=cfg.n_points, fock_dim=cfg.fock_dim, n_jobs=cfg.threads,
        point_solver_factory=_solver_factory(cfg, n, fock_used),
    )
    return sweep[0][1]


def _run_statistics(cfg: RunConfig, rid: str, fock_used: dict):
    rows = []
    entries = [(g, "fixed") for g in cfg.extras.get("g_list", ())] + [
        (g, "collective") for g in cfg.extras.get("g_collective_list", ())
    ]
    for n in cfg.n_atoms_list:
        for g_raw, scaling in entries:
            g_eff = g_raw / np.sqrt(n) if scaling == "collective" else g_raw
            params = replace(cfg.params, g=g_eff)
            if cfg.extras["omega_rule"] == "min-fwhm":
                sub = replace(cfg, g_scaling="fixed", params=params)
                om_star, res = min_fwhm(
                    params, n, cfg.extras["omega_range"], method=cfg.method,
                    window=cfg.window, n_points=cfg.n_points,
                    fock_dim=cfg.fock_dim, n_jobs=cfg.threads,
                    point_solver_factory=_solver_factory(sub, n, fock_used),
                )
                params = replace(params, omega_c=om_star)
                width = res
            else:
                width = None
            if cfg.extras["delta_p_rule"] == "half-fwhm":
                if width is None:
                    sub = replace(cfg, g_scaling="fixed", params=params)
                    width = _fwhm_single(sub, params, n, fock_used)
                delta = 0.5 * width.fwhm
            else:
                delta = cfg.extras["delta_p"]
            params = replace(params, delta_p=delta)
            sub = replace(cfg, g_scaling="fixed", params=params)
            solver = _make_point_solver(sub, params, n, fock_used)
            obs, _se = solver(delta)
            rows.append([
                n, g_eff, scaling, params.omega_c, delta,
                obs.transmission, obs.mean_photons, obs.g2, obs.p21,
                obs.pop11, obs.pop22, obs.pop33, rid,
            ])
    header = [
        "n_atoms", "g", "g_rule", "omega_c", "delta_p", "transmission_unit_norm",
        "mean_photons", "g2", "p21", "pop11", "pop22", "pop33", "run_id",
    ]
    return [("statistics.csv", header, rows)]


def _method_column(name: str) -> str:
    return name.replace("-", "_")


def compare_methods(cfg: RunConfig, rid: str | None = None,
                    fock_used: dict | None = None):
    """Aligned per-method observables with deltas against the first method.

    Returns (header, rows). The quantum column may run at a different atom
    count (extras quantum_n_atoms) so a mean-field large-N curve can sit next
    to the tractable quantum reference.
    """
    rid = rid if rid is not None else _run_id(cfg)
    fock_used = fock_used if fock_used is not None else {}
    methods = cfg.extras["methods"]
    n_default = cfg.n_atoms_list[0]

    def solver_for(m: str, params: SystemParams):
        n = cfg.extras["quantum_n_atoms"] if m == "quantum-steady" else n_default
        return _make_point_solver(replace(cfg, method=m), params, n, fock_used)

    columns: dict[str, list[float]] = {m: [] for m in methods}
    ses: dict[str, list[float]] = {m: [] for m in methods if m == "mcwf"}

    if cfg.extras["scan"] == "control":
        xs = list(cfg.extras["omega_grid"])
        x_name = "omega_c"
        for x in xs:  # parameters change per point, so solvers are rebuilt
            params = _scaled_params(
                cfg, n_default, omega_c=x, delta_p=cfg.extras["delta_p"]
            )
            for m in methods:
                obs, se = solver_for(m, params)(params.delta_p)
                columns[m].append(obs.transmission)
                if m in ses:
                    ses[m].append(se)
    else:
        base = _scaled_params(cfg, n_default)
        window = cfg.window or default_window(base)
        xs = list(np.linspace(window[0], window[1], cfg.n_points))
        x_name = "delta_p"
        solvers = {m: solver_for(m, base) for m in methods}
        for x in xs:
            for m in methods:
                obs, se = solvers[m](x)
                columns[m].append(obs.transmission)
                if m in ses:
                    ses[m].append(se)

    header = [x_name] + [f"transmission_{_method_column(m)}" for m in methods]
    for m in methods[1:]:
        header += [f"abs_delta_{_method_column(m)}", f"rel_delta_{_method_column(m)}"]
    for m in ses:
        header.append(f"se_{_method_column(m)}")
    header.append("run_id")

    rows = []
    ref = methods[0]
    for i, x in enumerate(xs):
        row = [x] + [columns[m][i] for m in methods]
        for m in methods[1:]:
            diff = columns[m][i] - columns[ref][i]
            denom = max(abs(columns[ref][i]), 1e-12)
            row += [abs(diff), abs(diff) / denom]
        for m in ses:
            row.append(ses[m][i])
        row.append(rid)
        rows.append(row)
    return header, rows


def _run_compare(cfg: RunConfig, rid: str, fock_used: dict):
    header, rows = compare_methods(cfg, rid, fock_used)
    return [("compare.csv", header, rows)]


_RUNNERS = {
    "spectrum": _run_spectrum,
    "fwhm-map": _run_fwhm_map,
    "control-sweep": _run_control_sweep,
    "min-fwhm": _run_min_fwhm,
    "statistics": _run_statistics,
    "semiclassical-compare": _run_compare,
}


def run_config(
    source: str | Path | RunConfig,
    out_dir: str | Path | None = None,
    method: str | None = None,
    threads: int | None = None,
    seed: int | None = None,
) -> Path:
    """Execute one experiment config; returns the manifest path."""
    cfg = source if isinstance(source, RunConfig) else parse_config(source)
    if method is not None:
        if method not in ("quantum-steady", "mcwf", "semiclassical"):
            raise ConfigError("method", f"unknown method {method!r}")
        cfg = replace(cfg, method=method)
    if threads is not None:
        cfg = replace(cfg, threads=threads)
    if seed is not None:
        cfg = replace(cfg, seed=seed)

    out = Path(out_dir) if out_dir is not None else Path("results")
    out.mkdir(parents=True, exist_ok=True)

    rid = _run_id(cfg)
    fock_used: dict[str, int] = {}
    t0 = time.perf_counter()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        artifacts = _RUNNERS[cfg.kind](cfg, rid, fock_used)
    elapsed = time.perf_counter() - t0

    names = []
    for fname, header, rows in artifacts:
        _write_csv(out / fname, header, rows)
        names.append(fname)

    manifest = {
        "run_id": rid,
        "config": _resolved_dict(cfg),
        "source": cfg.source,
        "seed": cfg.seed,
        "fock_dim_used": fock_used,
        "warnings": sorted({str(w.message) for w in caught}),
        "timings": {"total_s": elapsed},
        "artifacts": names,
        "versions": {
            "python": sys.version.split()[0],
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "cavityeit": __version__,
        },
    }
    manifest_path = out / "manifest.json"
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest_path


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="simulate",
        description="Run a cavity-EIT experiment config and write CSV results.",
    )
    parser.add_argument("config", help="path to the experiment config file")
    parser.add_argument("--out", default=None, help="output directory (default: results)")
    parser.add_argument(
        "--method", default=None,
        choices=["quantum-steady", "mcwf", "semiclassical"],
        help="override the configured solution method",
    )
    parser.add_argument("--threads", type=int, default=None, help="worker count")
    parser.add_argument("--seed", type=int, default=None, help="override the base seed")
    args = parser.parse_args(argv)

    try:
        manifest = run_config(
            args.config, out_dir=args.out, method=args.method,
            threads=args.threads, seed=args.seed,
        )
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TruncationError, DimensionCapError) as exc:
        print(f"truncation error: {exc}", file=sys.stderr)
        return EXIT_TRUNCATION
    except (SolverError, WindowError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    print(manifest)
    return 0


if __name__ == "__main__":
    sys.exit(main())
