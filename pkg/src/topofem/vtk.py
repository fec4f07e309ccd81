"""Legacy ASCII VTK output of element tags, nodal solutions and interface segments."""
from __future__ import annotations

import numpy as np

from .mesh import TAG_NAMES

VTK_LINE = 3
VTK_TRIANGLE = 5
INTERFACE_TAG = -1


def _fmt(values):
    return "\n".join(" ".join(repr(float(v)) for v in row) for row in np.atleast_2d(values))


def write_unstructured(path, vertices, triangles, cell_data=None, point_data=None, segments=None,
                       segment_point_data=None, title="topofem"):
    """Write triangles (and optional line segments) as one unstructured grid.

    ``cell_data`` maps names to per-triangle values; segments get
    ``INTERFACE_TAG`` in every cell field. ``point_data`` maps names to
    per-vertex values and ``segment_point_data`` supplies them for the
    segment end points.
    """
    vertices = np.asarray(vertices, dtype=float)
    triangles = np.asarray(triangles, dtype=np.int64)
    segs = np.zeros((0, 2, 2)) if segments is None else np.asarray(segments, dtype=float).reshape(-1, 2, 2)
    nv, nt, ns = len(vertices), len(triangles), len(segs)
    pts = np.vstack([vertices, segs.reshape(-1, 2)]) if ns else vertices
    npts = len(pts)
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {npts} double"]
    lines.append(_fmt(np.column_stack([pts, np.zeros(npts)])))
    lines.append(f"CELLS {nt + ns} {4 * nt + 3 * ns}")
    lines.extend(f"3 {a} {b} {c}" for a, b, c in triangles)
    lines.extend(f"2 {nv + 2 * k} {nv + 2 * k + 1}" for k in range(ns))
    lines.append(f"CELL_TYPES {nt + ns}")
    lines.extend([str(VTK_TRIANGLE)] * nt + [str(VTK_LINE)] * ns)
    if cell_data:
        lines.append(f"CELL_DATA {nt + ns}")
        for name, values in cell_data.items():
            values = np.concatenate([np.asarray(values).ravel(), np.full(ns, INTERFACE_TAG)])
            is_int = np.issubdtype(values.dtype, np.integer)
            lines.append(f"SCALARS {name} {'int' if is_int else 'double'} 1")
            lines.append("LOOKUP_TABLE default")
            lines.extend(str(int(v)) if is_int else repr(float(v)) for v in values)
    if point_data:
        lines.append(f"POINT_DATA {npts}")
        for name, values in point_data.items():
            extra = np.zeros(2 * ns)
            if segment_point_data and name in segment_point_data:
                extra = np.asarray(segment_point_data[name], dtype=float).ravel()
            values = np.concatenate([np.asarray(values, dtype=float).ravel(), extra])
            lines.append(f"SCALARS {name} double 1")
            lines.append("LOOKUP_TABLE default")
            lines.extend(repr(float(v)) for v in values)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_snapshot(path, state):
    """Element tags, the extended discrete solution and the interface of one time step."""
    mesh = state.active.mesh
    space = state.space
    tags = state.active.tags()
    u = np.zeros(mesh.n_vertices)
    active = np.zeros(mesh.n_vertices)
    vdofs = space.dofs[space.dofs < mesh.n_vertices]
    u[vdofs] = state.u[space.global_to_local[vdofs]]
    active[vdofs] = 1.0
    geo = state.geometry
    segs = geo.segments
    seg_u = None
    if len(segs):
        owners = np.repeat(geo.segment_element, 2)
        seg_u = space.evaluate(state.u, owners, segs.reshape(-1, 2))
    write_unstructured(
        path, mesh.vertices, mesh.triangles,
        cell_data={"tag": tags},
        point_data={"u": u, "active": active},
        segments=segs, segment_point_data={"u": seg_u} if seg_u is not None else None,
        title=f"step {state.n} t={state.t:.6g} tags: " + ",".join(f"{k}={n}" for k, n in enumerate(TAG_NAMES)),
    )


def read_unstructured(path):
    """Minimal reader for files written here: ``(points, cells, cell_types, fields)``."""
    with open(path) as fh:
        tokens = fh.read().split("\n")
    pts, cells, types, fields = None, [], [], {}
    i = 0
    while i < len(tokens):
        line = tokens[i].strip()
        if line.startswith("POINTS"):
            n = int(line.split()[1])
            pts = np.array([[float(v) for v in tokens[i + 1 + k].split()] for k in range(n)])
            i += n
        elif line.startswith("CELLS"):
            n = int(line.split()[1])
            cells = [[int(v) for v in tokens[i + 1 + k].split()[1:]] for k in range(n)]
            i += n
        elif line.startswith("CELL_TYPES"):
            n = int(line.split()[1])
            types = [int(tokens[i + 1 + k]) for k in range(n)]
            i += n
        elif line.startswith("SCALARS"):
            name = line.split()[1]
            j = i + 2
            vals = []
            while j < len(tokens) and tokens[j].strip() and not tokens[j][0].isalpha():
                vals.append(float(tokens[j]))
                j += 1
            fields[name] = np.array(vals)
            i = j - 1
        i += 1
    return pts, cells, np.array(types), fields
