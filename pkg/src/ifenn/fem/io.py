"""VTK legacy ASCII export and small CSV helpers."""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from ..mesh import StructuredMesh

_VTK_CELL_TYPE = {2: 9, 3: 12}   # VTK_QUAD, VTK_HEXAHEDRON


def write_vtk(path, mesh: StructuredMesh, point_data: Mapping[str, np.ndarray], title: str = "ifenn") -> Path:
    """Write nodal fields; arrays shaped [n] become SCALARS, [n, d] become VECTORS."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pts = np.zeros((mesh.n_nodes, 3))
    pts[:, : mesh.dim] = mesh.nodes
    nper = mesh.cells.shape[1]
    lines = ["# vtk DataFile Version 3.0", title.replace("\n", " ")[:255], "ASCII",
             "DATASET UNSTRUCTURED_GRID", f"POINTS {mesh.n_nodes} double"]
    lines += [" ".join(f"{v:.17g}" for v in p) for p in pts]
    lines.append(f"CELLS {mesh.n_cells} {mesh.n_cells * (nper + 1)}")
    lines += [f"{nper} " + " ".join(map(str, c)) for c in mesh.cells]
    lines.append(f"CELL_TYPES {mesh.n_cells}")
    lines += [str(_VTK_CELL_TYPE[mesh.dim])] * mesh.n_cells
    if point_data:
        lines.append(f"POINT_DATA {mesh.n_nodes}")
    for name, arr in point_data.items():
        arr = np.asarray(arr, dtype=float)
        safe = "_".join(str(name).split())
        if arr.ndim == 1:
            lines += [f"SCALARS {safe} double 1", "LOOKUP_TABLE default"]
            lines += [f"{v:.17g}" for v in arr]
        else:
            vec = np.zeros((mesh.n_nodes, 3))
            vec[:, : arr.shape[1]] = arr.reshape(mesh.n_nodes, -1)
            lines.append(f"VECTORS {safe} double")
            lines += [" ".join(f"{v:.17g}" for v in row) for row in vec]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_vtk_point_data(path) -> dict[str, np.ndarray]:
    """Minimal reader for files produced by :func:`write_vtk`."""
    toks = Path(path).read_text().split("\n")
    out: dict[str, np.ndarray] = {}
    n = 0
    i = 0
    while i < len(toks):
        line = toks[i].split()
        if line and line[0] == "POINT_DATA":
            n = int(line[1])
        elif line and line[0] == "SCALARS":
            out[line[1]] = np.array([float(v) for v in toks[i + 2: i + 2 + n]])
            i += 1 + n
        elif line and line[0] == "VECTORS":
            out[line[1]] = np.array([[float(v) for v in r.split()] for r in toks[i + 1: i + 1 + n]])
            i += n
        i += 1
    return out


def write_csv(path, header: Iterable[str], rows: Iterable[Iterable]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(header))
        for r in rows:
            w.writerow([f"{v:.10g}" if isinstance(v, float) else v for v in r])
    return path


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def state_metrics_rows(states, residuals=None):
    """(step, time, residual, |u|_2, |z|_2, |tr eps|_2) per state."""
    residuals = residuals or [float("nan")] * len(states)
    for s, r in zip(states, residuals):
        yield [s.step, float(s.time), float(r), float(np.linalg.norm(s.u)),
               float(np.linalg.norm(s.z)), float(np.linalg.norm(s.strain_trace))]


STATE_METRICS_HEADER = ("step", "time", "residual", "u_norm", "z_norm", "strain_trace_norm")
