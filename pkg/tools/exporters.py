from pathlib import Path
from typing import Dict, Iterable, List

import meshio
import numpy as np
import pandas as pd

from solvers.errors import ExportError
from solvers.mesh import NodalField, TriangularMesh, as_nodal_field
from solvers.signum import subdivide_by_sign
from utils.run_tracker import RunReport

TABLE_COLUMNS = ['nodes', 'iters', 'facts', 'solves', 'time_s', 'converged']


def export_control_field(mesh: TriangularMesh, w: NodalField, u_bound: float, path) -> Path:
    """
    Write the control u = u_b sign(w) as a legacy ASCII VTK file.

    Cut elements are split along the zero level set so that the cell data
    "control" is exactly +-u_b on every cell; point data "w" holds w with
    zeros at the crossing points.
    """
    path = Path(path)
    w = as_nodal_field(mesh, w)
    points, triangles, signs = subdivide_by_sign(mesh, w)
    num_crossings = points.shape[0] - mesh.num_nodes

    try:
        meshio.write_points_cells(
            str(path),
            np.column_stack([points, np.zeros(points.shape[0])]),
            [("triangle", triangles)],
            point_data={"w": np.concatenate([w, np.zeros(num_crossings)])},
            cell_data={"control": [u_bound * signs]},
            file_format="vtk42",
            binary=False,
        )
    except OSError as e:
        raise ExportError(path, e.strerror or str(e)) from e
    return path


def table_frame(report: RunReport, record_timings: bool = True) -> pd.DataFrame:
    """One row per level with the result-table columns."""
    rows = [
        {
            'nodes': level.nodes,
            'iters': level.iterations,
            'facts': level.factorizations,
            'solves': level.solves,
            'time_s': f"{level.wall_time if record_timings else 0.0:.4f}",
            'converged': bool(level.converged),
        }
        for level in report.levels
    ]
    return pd.DataFrame(rows, columns=TABLE_COLUMNS)


def write_table_csv(report: RunReport, path, record_timings: bool = True) -> Path:
    """Write `nodes,iters,facts,solves,time_s,converged`, one row per level."""
    path = Path(path)
    try:
        table_frame(report, record_timings).to_csv(path, index=False, lineterminator="\n")
    except OSError as e:
        raise ExportError(path, e.strerror or str(e)) from e
    return path


def read_table_csv(path) -> pd.DataFrame:
    path = Path(path)
    try:
        frame = pd.read_csv(path)
    except (OSError, pd.errors.ParserError) as e:
        raise ExportError(path, str(e)) from e
    missing = [column for column in TABLE_COLUMNS if column not in frame.columns]
    if missing:
        raise ExportError(path, f"missing columns {', '.join(missing)}")
    return frame


def write_trace_csv(trace: Iterable[Dict], path) -> Path:
    """Per-iteration trace of one level; columns follow the solver's row keys."""
    path = Path(path)
    rows: List[Dict] = list(trace)
    frame = pd.DataFrame(rows) if rows else pd.DataFrame(columns=['iteration'])
    try:
        frame.to_csv(path, index=False, float_format="%.10e", lineterminator="\n")
    except OSError as e:
        raise ExportError(path, e.strerror or str(e)) from e
    return path
