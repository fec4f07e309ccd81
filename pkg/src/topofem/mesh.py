"""Background triangulation and per-step active-mesh classification."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import ContainmentViolation, InvalidRect

# cell tags used for export
TAG_INTERIOR, TAG_CUT, TAG_STRIP_ONLY, TAG_EXTENSION, TAG_INACTIVE = range(5)
TAG_NAMES = ("interior", "cut", "strip-only", "extension", "inactive")


@dataclass(eq=False)
class BackgroundMesh:
    """Conforming triangulation with edge and neighbor connectivity.

    Local edge ``k`` of a triangle joins local vertices ``k`` and ``(k+1) % 3``.
    ``h`` is the grid spacing of the structured construction (triangle legs).
    """

    vertices: np.ndarray
    triangles: np.ndarray
    h: float
    level: int = 0
    rect: tuple | None = None
    edges: np.ndarray = field(init=False, repr=False)
    triangle_edges: np.ndarray = field(init=False, repr=False)
    edge_triangles: np.ndarray = field(init=False, repr=False)
    neighbors: np.ndarray = field(init=False, repr=False)
    cache: dict = field(init=False, repr=False, default_factory=dict)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=float)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64)
        tri = self.triangles
        nt = len(tri)
        local = np.stack([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]], axis=1).reshape(-1, 2)
        key = np.sort(local, axis=1)
        self.edges, inverse = np.unique(key, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        self.triangle_edges = inverse.reshape(nt, 3)
        ne = len(self.edges)
        et = np.full((ne, 2), -1, dtype=np.int64)
        owner = np.repeat(np.arange(nt), 3)
        order = np.argsort(inverse, kind="stable")
        sorted_edges = inverse[order]
        first = np.ones(len(order), dtype=bool)
        first[1:] = sorted_edges[1:] != sorted_edges[:-1]
        et[sorted_edges[first], 0] = owner[order[first]]
        et[sorted_edges[~first], 1] = owner[order[~first]]
        self.edge_triangles = et
        other = np.where(et[self.triangle_edges, 0] == np.arange(nt)[:, None],
                         et[self.triangle_edges, 1], et[self.triangle_edges, 0])
        self.neighbors = other

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def interior_edges(self):
        return np.flatnonzero(self.edge_triangles[:, 1] >= 0)

    def corners(self, elements=None):
        tri = self.triangles if elements is None else self.triangles[elements]
        return self.vertices[tri]

    def areas(self, elements=None):
        p = self.corners(elements)
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def edge_lengths(self):
        p = self.vertices[self.edges]
        return np.linalg.norm(p[:, 1] - p[:, 0], axis=1)

    def reference_points(self, ref, elements=None):
        """Map reference coordinates ``ref`` (n, 2) into every (selected) element."""
        p = self.corners(elements)
        ref = np.asarray(ref, dtype=float).reshape(-1, 2)
        bary = np.column_stack([1.0 - ref[:, 0] - ref[:, 1], ref])
        return np.matmul(bary, p)

    def refine(self):
        """Uniform red refinement: every triangle splits into four similar ones."""
        nv = self.n_vertices
        mid = 0.5 * (self.vertices[self.edges[:, 0]] + self.vertices[self.edges[:, 1]])
        verts = np.vstack([self.vertices, mid])
        a, b, c = self.triangles.T
        mab, mbc, mca = (nv + self.triangle_edges).T
        children = np.concatenate([
            np.stack([a, mab, mca], axis=1),
            np.stack([mab, b, mbc], axis=1),
            np.stack([mca, mbc, c], axis=1),
            np.stack([mab, mbc, mca], axis=1),
        ])
        return BackgroundMesh(verts, children, self.h / 2, self.level + 1, self.rect)

    def element_graph(self, mask=None):
        """Facet-adjacency graph restricted to ``mask`` as a sparse matrix."""
        nt = self.n_triangles
        e = self.interior_edges
        t1, t2 = self.edge_triangles[e].T
        if mask is not None:
            keep = mask[t1] & mask[t2]
            t1, t2 = t1[keep], t2[keep]
        data = np.ones(2 * len(t1))
        return coo_matrix((data, (np.r_[t1, t2], np.r_[t2, t1])), shape=(nt, nt)).tocsr()

    def count_components(self, mask):
        """Number of facet-connected components among the elements in ``mask``."""
        mask = np.asarray(mask, dtype=bool)
        if not mask.any():
            return 0
        _, labels = connected_components(self.element_graph(mask), directed=False)
        return len(np.unique(labels[mask]))


def _check_rect(rect):
    try:
        (x0, x1), (y0, y1) = rect
    except (TypeError, ValueError) as exc:
        raise InvalidRect(f"rect must be ((x_lo, x_hi), (y_lo, y_hi)), got {rect!r}") from exc
    if not (np.isfinite([x0, x1, y0, y1]).all() and x1 > x0 and y1 > y0):
        raise InvalidRect(f"degenerate rect {rect!r}")
    return float(x0), float(x1), float(y0), float(y1)


def structured_mesh(rect, nx, ny, level=0, h=None):
    """Grid of ``nx`` x ``ny`` rectangles, each split along its (1, 1) diagonal."""
    x0, x1, y0, y1 = _check_rect(rect)
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    verts = np.column_stack([X.ravel(), Y.ravel()])
    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    v00 = (j * (nx + 1) + i).ravel()
    v10 = v00 + 1
    v01 = v00 + nx + 1
    v11 = v01 + 1
    tris = np.concatenate([np.stack([v00, v10, v11], axis=1), np.stack([v00, v11, v01], axis=1)])
    if h is None:
        h = max((x1 - x0) / nx, (y1 - y0) / ny)
    return BackgroundMesh(verts, tris, float(h), level, ((x0, x1), (y0, y1)))


def build_background(rect=((-2.0, 2.0), (-1.5, 1.5)), h0=0.5, levels=0):
    """Structured triangulation of ``rect`` with spacing ``h0 * 2**-levels``.

    Equivalent to ``levels`` red refinements of the ``h0`` grid.
    """
    x0, x1, y0, y1 = _check_rect(rect)
    if not h0 > 0:
        raise InvalidRect("h0 must be positive")
    if levels < 0:
        raise InvalidRect("levels must be non-negative")
    nx0 = (x1 - x0) / h0
    ny0 = (y1 - y0) / h0
    if abs(nx0 - round(nx0)) > 1e-9 or abs(ny0 - round(ny0)) > 1e-9 or round(nx0) < 1 or round(ny0) < 1:
        raise InvalidRect(f"h0={h0} does not divide the rect {rect!r}")
    n = 2**levels
    return structured_mesh(((x0, x1), (y0, y1)), int(round(nx0)) * n, int(round(ny0)) * n,
                           level=levels, h=h0 / n)


def fit_background(rect, h_target):
    """Structured mesh of ``rect`` with spacing close to ``h_target``."""
    x0, x1, y0, y1 = _check_rect(rect)
    nx = max(1, int(math.ceil((x1 - x0) / h_target - 1e-9)))
    ny = max(1, int(math.ceil((y1 - y0) / h_target - 1e-9)))
    return structured_mesh(((x0, x1), (y0, y1)), nx, ny)


# --------------------------------------------------------------------------
# active mesh


def sample_coordinates(depth=0):
    """Reference sampling nodes: vertices, edge midpoints, barycenter, plus a
    uniform barycentric grid of ``2**depth`` intervals per edge."""
    base = [(0, 0), (1, 0), (0, 1), (0.5, 0), (0.5, 0.5), (0, 0.5), (1 / 3, 1 / 3)]
    pts = [np.array(base, dtype=float)]
    if depth > 0:
        n = 2**depth
        i, j = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
        keep = (i + j) <= n
        pts.append(np.column_stack([i[keep], j[keep]]) / n)
    ref = np.vstack(pts)
    return np.unique(np.round(ref, 14), axis=0)


@dataclass
class ActiveMesh:
    """Element sets of one time step (all masks index background triangles)."""

    mesh: BackgroundMesh = field(repr=False)
    time_index: int
    t: float
    delta: float
    layers: int
    interior: np.ndarray
    cut: np.ndarray
    active: np.ndarray
    strip: np.ndarray
    stabilization_facets: np.ndarray

    @property
    def active_elements(self):
        return np.flatnonzero(self.active)

    @property
    def interior_elements(self):
        return np.flatnonzero(self.interior)

    @property
    def cut_elements(self):
        return np.flatnonzero(self.cut)

    @property
    def strip_elements(self):
        return np.flatnonzero(self.strip)

    @property
    def physical(self):
        """Elements meeting the physical domain (interior or cut)."""
        return self.interior | self.cut

    def tags(self):
        tags = np.full(len(self.active), TAG_INACTIVE, dtype=np.int64)
        tags[self.active] = TAG_EXTENSION
        tags[self.strip] = TAG_STRIP_ONLY
        tags[self.cut] = TAG_CUT
        tags[self.interior] = TAG_INTERIOR
        return tags


def layer_count(delta, h):
    """Facet-neighbor layers covering a distance ``delta``: ``ceil(delta/h) + 1``."""
    if delta < 0:
        raise ValueError("delta must be non-negative")
    return int(math.ceil(delta / h - 1e-12)) + 1


def expand(mesh, mask, layers):
    """Grow an element mask by ``layers`` facet-neighbor layers."""
    mask = np.asarray(mask, dtype=bool).copy()
    nb = mesh.neighbors
    valid = nb >= 0
    safe = np.where(valid, nb, 0)
    for _ in range(layers):
        grow = np.any(mask[safe] & valid, axis=1)
        if not np.any(grow & ~mask):
            break
        mask |= grow
    return mask


def element_signs(mesh, field, t, sample_depth=0):
    """Return per-element ``(all_inside, any_inside)`` from level set samples (phi <= 0 is inside)."""
    ref = sample_coordinates(sample_depth)
    pts = mesh.reference_points(ref)
    inside = field.value(pts, t) <= 0.0
    return inside.all(axis=1), inside.any(axis=1)


def classify_elements(mesh, field, t, delta, time_index=0, sample_depth=0):
    """Tag interior, cut, active and strip elements and collect ghost-penalty facets.

    Parameters
    ----------
    mesh : BackgroundMesh
    field : LevelSetField
    t : float
    delta : float
        Extension width; converted to ``ceil(delta/h) + 1`` neighbor layers.
    sample_depth : int
        Extra barycentric sampling grid (use the cut-quadrature depth so the
        tags agree with the sub-element interface reconstruction).
    """
    if delta < 0:
        raise ValueError("delta must be non-negative")
    all_in, any_in = element_signs(mesh, field, t, sample_depth)
    interior = all_in
    cut = any_in & ~all_in
    layers = layer_count(delta, mesh.h)
    active = expand(mesh, interior | cut, layers)
    strip = expand(mesh, cut, layers) & active
    e = mesh.interior_edges
    t1, t2 = mesh.edge_triangles[e].T
    use = active[t1] & active[t2] & (strip[t1] | strip[t2])
    return ActiveMesh(mesh, time_index, float(t), float(delta), layers, interior, cut, active, strip, e[use])


def check_containment(previous, current):
    """Raise unless every element meeting the new domain was active before."""
    missing = current.physical & ~previous.active
    if np.any(missing):
        raise ContainmentViolation(
            f"step {current.time_index} (t={current.t:.6g}): {int(missing.sum())} elements meet the "
            f"domain outside the active mesh of step {previous.time_index}; increase delta"
        )


def choose_delta(constants, dt, safety=2.0, v_floor=1.0):
    """Extension width ``safety * max(V_max^+, v_floor) * dt``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    if safety < 1:
        raise ValueError("safety must be at least 1")
    v = constants if isinstance(constants, (int, float)) else constants.v_max_plus
    return safety * max(float(v), v_floor) * dt
