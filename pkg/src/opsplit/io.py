"""Legacy-VTK ASCII snapshots and trajectory CSV."""

import csv
from pathlib import Path

import numpy as np

from .mesh import refine_uniform

TRAJECTORY_COLUMNS = ("step", "t", "sup_norm", "constraint_residual", "newton_iters")


def _vtk_grid(points, triangles, title):
    lines = [
        "# vtk DataFile Version 3.0",
        title[:255],
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {len(points)} double",
    ]
    lines += [f"{float(x)!r} {float(y)!r} 0.0" for x, y in points]
    lines.append(f"CELLS {len(triangles)} {4 * len(triangles)}")
    lines += [f"3 {a} {b} {c}" for a, b, c in triangles]
    lines.append(f"CELL_TYPES {len(triangles)}")
    lines += ["5"] * len(triangles)
    return lines


def _point_scalars(name, values):
    return [f"SCALARS {name} double 1", "LOOKUP_TABLE default"] + [repr(float(v)) for v in values]


def write_vtk(path, mesh, point_data=None, title="opsplit"):
    """Write ``mesh`` with optional nodal scalars ``{name: values}``.

    Values of length ``n_vertices`` are written on the mesh itself. P2 fields
    (``n_vertices + n_edges`` values) are written on the once-refined mesh,
    whose vertices are exactly the P2 nodes, so no information is lost.
    """
    point_data = dict(point_data or {})
    nv = mesh.n_vertices
    sizes = {len(v) for v in point_data.values()}
    if sizes - {nv, nv + mesh.n_edges}:
        raise ValueError(f"point data must have {nv} or {nv + mesh.n_edges} values")
    if nv + mesh.n_edges in sizes:
        fine = refine_uniform(mesh)
        points, tris = fine.vertices, fine.triangles
        point_data = {
            k: v if len(v) == len(points) else _lift_p1(mesh, fine, v) for k, v in point_data.items()
        }
    else:
        points, tris = mesh.vertices, mesh.triangles
    lines = _vtk_grid(points, tris, title)
    if point_data:
        lines.append(f"POINT_DATA {len(points)}")
        for name, values in point_data.items():
            lines += _point_scalars(name, values)
    Path(path).write_text("\n".join(lines) + "\n")


def _lift_p1(mesh, fine, values):
    values = np.asarray(values, dtype=float)
    return np.concatenate([values, values[mesh.edges].mean(axis=1)])


def write_state_vtk(path, state, title=None):
    """Snapshot of a State: the P2 state and each P1 multiplier component."""
    mesh = state.y.space.mesh
    data = {"y": state.y.coeffs}
    for k, pk in enumerate(state.p):
        data[f"p{k}"] = pk.coeffs
    write_vtk(path, mesh, data, title or f"step {state.step} t={float(state.t)!r}")


def read_vtk_points(path):
    """Points, triangles and point scalars of a file written by ``write_vtk``."""
    tokens = Path(path).read_text().split("\n")
    it = iter(tokens)
    points, tris, data = None, None, {}
    for line in it:
        head = line.split()
        if not head:
            continue
        if head[0] == "POINTS":
            n = int(head[1])
            points = np.array([[float(v) for v in next(it).split()[:2]] for _ in range(n)])
        elif head[0] == "CELLS":
            n = int(head[1])
            tris = np.array([[int(v) for v in next(it).split()[1:]] for _ in range(n)])
        elif head[0] == "SCALARS":
            next(it)  # lookup table
            data[head[1]] = np.array([float(next(it)) for _ in range(len(points))])
    return points, tris, data


def write_trajectory_csv(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRAJECTORY_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for r in rows:
            writer.writerow({k: repr(float(r[k])) if isinstance(r[k], float) else int(r[k]) for k in TRAJECTORY_COLUMNS})


def read_trajectory_csv(path):
    with open(path, newline="") as fh:
        return [
            {
                "step": int(r["step"]),
                "t": float(r["t"]),
                "sup_norm": float(r["sup_norm"]),
                "constraint_residual": float(r["constraint_residual"]),
                "newton_iters": int(r["newton_iters"]),
            }
            for r in csv.DictReader(fh)
        ]
