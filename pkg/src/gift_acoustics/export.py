"""Run artifacts: CSV traces, mesh JSON, legacy VTK fields and SVG plots.

Floats are written with ``repr`` so that re-reading a CSV reproduces the
in-memory values exactly.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .adapt import TraceRow
from .optimize import OptimizationTrace, OptimRow

TRACE_COLUMNS = ("iter", "dofs", "eta_rel", "objective", "wall_ms")
OPTIM_COLUMNS = ("iter", "J", "||step||", "||grad||", "constraint_max", "dofs")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_trace_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r.iter), _fmt(r.dofs), _fmt(r.eta_rel), _fmt(r.objective), _fmt(r.wall_ms)])


def read_trace_csv(path) -> list:
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if tuple(header) != TRACE_COLUMNS:
            raise ValueError("unexpected trace header %r" % (header,))
        return [
            TraceRow(int(a), int(b), float(c), None if d == "" else float(d), float(e)) for a, b, c, d, e in rd
        ]


def write_optim_csv(trace: OptimizationTrace, path) -> None:
    n = len(trace.rows[0].x) if trace.rows else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(OPTIM_COLUMNS) + ["x_%d" % (i + 1) for i in range(n)])
        for r in trace.rows:
            w.writerow(
                [_fmt(r.iter), _fmt(r.J), _fmt(r.step), _fmt(r.grad), _fmt(r.constraint_max), _fmt(r.dofs)]
                + [_fmt(v) for v in r.x]
            )


def read_optim_csv(path) -> OptimizationTrace:
    tr = OptimizationTrace()
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if tuple(header[:6]) != OPTIM_COLUMNS:
            raise ValueError("unexpected optimization trace header %r" % (header,))
        for row in rd:
            tr.append(
                OptimRow(
                    int(row[0]),
                    float(row[1]),
                    float(row[2]),
                    float(row[3]),
                    float(row[4]),
                    int(row[5]),
                    tuple(float(v) for v in row[6:]),
                )
            )
    return tr


def write_convergence_csv(rows, path) -> None:
    """DOFs against the estimator and the objective."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("dofs", "eta_rel", "objective"))
        for r in rows:
            w.writerow([_fmt(r.dofs), _fmt(r.eta_rel), _fmt(r.objective)])


def write_mesh_json(meshes, path) -> None:
    payload = {"patches": [m.to_dict() for m in meshes]}
    Path(path).write_text(json.dumps(payload, indent=1))


def write_geometry_json(patches, path) -> None:
    Path(path).write_text(json.dumps({"patches": [p.to_dict() for p in patches]}, indent=1))


def write_vtk(sol, path, samples: int = 4, incident=None) -> None:
    """Legacy ASCII unstructured grid with ``samples x samples`` quads per cell.

    ``incident(x)`` is added to the field when given (total field output).
    """
    from .solver import evaluate_param

    s = np.linspace(0.0, 1.0, samples + 1)
    su, sv = np.meshgrid(s, s, indexing="ij")
    su, sv = su.ravel(), sv.ravel()
    per = (samples + 1) ** 2
    pts, vals, quads = [], [], []
    base = 0
    for p, (geo, mesh) in enumerate(zip(sol.problem.patches, sol.problem.meshes)):
        rect = mesh.cell_arrays()["rect"]
        u = (rect[:, 0:1] + su[None, :] * (rect[:, 2] - rect[:, 0])[:, None]).ravel()
        v = (rect[:, 1:2] + sv[None, :] * (rect[:, 3] - rect[:, 1])[:, None]).ravel()
        x = geo.evaluate(u, v)
        f = evaluate_param(sol, p, u, v)
        if incident is not None:
            f = f + np.asarray(incident(x), dtype=complex)
        pts.append(x)
        vals.append(f)
        for c in range(rect.shape[0]):
            o = base + c * per
            for i in range(samples):
                for j in range(samples):
                    a = o + i * (samples + 1) + j
                    quads.append((a, a + samples + 1, a + samples + 2, a + 1))
        base += rect.shape[0] * per
    X = np.concatenate(pts)
    F = np.concatenate(vals)
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\nhelmholtz field\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write("POINTS %d double\n" % X.shape[0])
        for x, y in X:
            fh.write("%.12g %.12g 0\n" % (x, y))
        fh.write("CELLS %d %d\n" % (len(quads), 5 * len(quads)))
        for q in quads:
            fh.write("4 %d %d %d %d\n" % q)
        fh.write("CELL_TYPES %d\n" % len(quads))
        fh.write("9\n" * len(quads))
        fh.write("POINT_DATA %d\n" % X.shape[0])
        for name, arr in (("re_u", F.real), ("im_u", F.imag), ("abs_u", np.abs(F))):
            fh.write("SCALARS %s double 1\nLOOKUP_TABLE default\n" % name)
            fh.write("\n".join("%.12g" % a for a in arr))
            fh.write("\n")


def read_vtk_point_data(path) -> dict:
    """Point coordinates and scalar arrays of a file written by :func:`write_vtk`."""
    lines = Path(path).read_text().splitlines()
    out: dict = {}
    i = 0
    while i < len(lines):
        parts = lines[i].split()
        if parts and parts[0] == "POINTS":
            n = int(parts[1])
            out["points"] = np.array([[float(t) for t in ln.split()[:2]] for ln in lines[i + 1 : i + 1 + n]])
            i += n
        elif parts and parts[0] == "SCALARS":
            n = out["points"].shape[0]
            out[parts[1]] = np.array([float(t) for t in lines[i + 2 : i + 2 + n]])
            i += n + 1
        i += 1
    return out


def plot_csv(csv_path, svg_path, x: str | None = None, logx: bool = False, logy: bool = False) -> None:
    """Line plot of every numeric column against ``x`` (first column by default)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with open(csv_path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        rows = [r for r in rd]
    xi = header.index(x) if x is not None else 0
    fig, ax = plt.subplots(figsize=(5, 3.5))
    xs = np.array([float(r[xi]) for r in rows]) if rows else np.zeros(0)
    for j, name in enumerate(header):
        if j == xi:
            continue
        col = [r[j] for r in rows]
        if not col or any(c == "" for c in col):
            continue
        ys = np.array([float(c) for c in col])
        ax.plot(xs, ys, marker="o", ms=3, label=name)
    ax.set_xlabel(header[xi])
    if logx:
        ax.set_xscale("log")
    if logy:
        ax.set_yscale("log")
    ax.legend(fontsize=7)
    fig.tight_layout()
    plt.rcParams["svg.hashsalt"] = "gift"
    fig.savefig(svg_path, format="svg", metadata={"Date": None})
    plt.close(fig)
