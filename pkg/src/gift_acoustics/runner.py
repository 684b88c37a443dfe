"""Benchmark runs driven by a :class:`RunConfig`."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .adapt import refine_loop
from .benchmarks import barrier as bar
from .benchmarks import cylinder as cyl
from .benchmarks import horn as hrn
from .config import RunConfig
from .errors import ConfigError
from .export import (
    plot_csv,
    write_convergence_csv,
    write_geometry_json,
    write_mesh_json,
    write_optim_csv,
    write_trace_csv,
    write_vtk,
)
from .optimize import AdaptiveParams, DesignVector, SQPOptions, adaptive_optimize
from .sensitivity import adjoint_gradient
from .solver import solve_problem


@dataclass
class BenchmarkSetup:
    """Everything the drivers need: builder, objective, design and meshes."""

    builder: Callable
    objective: Callable
    design: DesignVector
    meshes: list
    gradient: object
    incident: Callable | None = None


def wavenumber(cfg: RunConfig, default_k: float | None = None) -> float:
    ph = cfg.physics
    if ph.k is not None:
        return ph.k
    if ph.f is not None:
        return 2 * np.pi * ph.f / ph.c
    if default_k is None:
        raise ConfigError("physics: f or k is required for %s" % cfg.benchmark)
    return default_k


def _design_values(cfg: RunConfig, default) -> np.ndarray:
    d = cfg.geometry.design
    x = np.asarray(default if d is None else d, dtype=float)
    if x.size != np.size(default):
        raise ConfigError("geometry.design: expected %d values, got %d" % (np.size(default), x.size))
    return x


def setup(cfg: RunConfig) -> BenchmarkSetup:
    level = cfg.solver.initial_level
    grad_mode = cfg.optimizer.gradient
    if cfg.benchmark == "cylinder":
        case = cfg.geometry.case
        k = wavenumber(cfg, cyl.K_DEFAULT)
        lo, hi = cyl.BOUNDS[case]
        x0 = _design_values(cfg, cyl.INITIAL[case])

        def builder(x):
            return cyl.cylinder_problem(case, x, k=k)

        gradient: object = "fd"
        if grad_mode == "adjoint":

            def gradient(x, meshes):
                return adjoint_gradient(
                    builder,
                    x,
                    meshes,
                    cyl.DESIGN_EDGES,
                    cyl.density,
                    cyl.density_derivative,
                    cyl.incident_with_gradient(k),
                )[0]

        return BenchmarkSetup(
            builder,
            cyl.CylinderObjective(),
            DesignVector(x0, lo, hi),
            cyl.initial_meshes(1 << level),
            gradient,
            cyl.incident_field(k),
        )
    if cfg.benchmark == "horn":
        n_cp = cfg.geometry.n_cp or 1
        f = cfg.physics.f if cfg.physics.f is not None else wavenumber(cfg) * cfg.physics.c / (2 * np.pi)
        hc = hrn.HornConfig(f=f, c=cfg.physics.c, n_cp=n_cp)
        if grad_mode == "adjoint":
            raise ConfigError("optimizer.gradient: the horn objective supports 'fd' only")
        lo, hi = hc.bounds()
        x0 = _design_values(cfg, np.zeros(hc.n_design))
        return BenchmarkSetup(
            lambda x: hrn.horn_problem(hc, x),
            hrn.HornObjective(hc),
            DesignVector(x0, lo, hi),
            hrn.initial_meshes(level),
            "fd",
        )
    n_cp = cfg.geometry.n_cp or 5
    f = cfg.physics.f if cfg.physics.f is not None else wavenumber(cfg) * cfg.physics.c / (2 * np.pi)
    bc = bar.BarrierConfig(f=f, c=cfg.physics.c, n_cp=n_cp, aggregate=cfg.physics.aggregate)
    x0 = _design_values(cfg, bc.initial_design())
    lo, hi = bc.bounds
    design = DesignVector(
        x0,
        np.full(n_cp, lo),
        np.full(n_cp, hi),
        ineq=lambda x: np.array([bar.barrier_area(bc, x) - bc.area_cap]),
    )
    gradient = "fd"
    if grad_mode == "adjoint":

        def gradient(x, meshes):
            return bar.barrier_gradient(bc, x, meshes)

    def incident(x):
        return bar.greens_halfplane(x, bc.source, bc.k)[0]

    return BenchmarkSetup(
        lambda x: bar.build_barrier(bc, x, check_bounds=False),
        bar.BarrierObjective(bc),
        design,
        bar.initial_meshes(bc, level),
        gradient,
        incident,
    )


@dataclass
class RunResult:
    x: np.ndarray
    J: float
    dofs: int
    refine_trace: list
    optim_trace: object
    meshes: list
    solution: object
    wall_s: float


def run(cfg: RunConfig, deterministic: bool = True) -> RunResult:
    """Refinement only, or the adaptive optimization loop when enabled."""
    st = setup(cfg)
    ad = cfg.adapt
    t0 = time.perf_counter()
    if cfg.optimizer.enabled:
        op = cfg.optimizer
        res = adaptive_optimize(
            st.builder,
            st.objective,
            st.design,
            AdaptiveParams(ad.eps0, ad.eps_loop, ad.eps_sol, ad.n_max, ad.fraction, ad.uniform, ad.max_refine),
            st.meshes,
            gradient=st.gradient,
            options=SQPOptions(tol_x=op.tol_x, tol_g=op.tol_g, max_iter=op.max_iter),
            deterministic=deterministic,
        )
        sol = solve_problem(st.builder(res.x).with_meshes(res.meshes))
        return RunResult(
            res.x, res.J, sol.n_dofs, res.refine_trace, res.optim_trace, res.meshes, sol, time.perf_counter() - t0
        )
    x = st.design.values
    rr = refine_loop(
        st.builder(x).with_meshes(st.meshes),
        ad.eps_loop,
        ad.max_refine,
        st.objective,
        ad.fraction,
        ad.uniform,
        deterministic,
    )
    last = rr.trace[-1]
    return RunResult(x, last.objective, last.dofs, rr.trace, None, rr.meshes, rr.solution, time.perf_counter() - t0)


def write_run(cfg: RunConfig, result: RunResult, out_dir, deterministic: bool = True) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=1, sort_keys=True))
    write_trace_csv(result.refine_trace, out / "trace.csv")
    write_convergence_csv(result.refine_trace, out / "convergence.csv")
    csvs = [(out / "convergence.csv", True, True)]
    if result.optim_trace is not None:
        write_optim_csv(result.optim_trace, out / "optim_trace.csv")
        csvs.append((out / "optim_trace.csv", False, False))
    write_mesh_json(result.meshes, out / "mesh.json")
    write_geometry_json(result.solution.problem.patches, out / "geometry.json")
    if cfg.outputs.vtk:
        write_vtk(result.solution, out / "field.vtk")
    if cfg.outputs.svg:
        for path, lx, ly in csvs:
            plot_csv(path, path.with_suffix(".svg"), logx=lx, logy=ly)
    summary = {
        "benchmark": cfg.benchmark,
        "x": [float(v) for v in result.x],
        "J": result.J,
        "dofs": result.dofs,
        "message": result.optim_trace.message if result.optim_trace is not None else "refined",
    }
    if not deterministic:
        summary["wall_s"] = result.wall_s
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True))
    return out


def run_benchmark(cfg: RunConfig, out_dir, deterministic: bool = True) -> Path:
    return write_run(cfg, run(cfg, deterministic), out_dir, deterministic)
