"""Lagrange spaces on active meshes and the sparse forms of the unfitted scheme."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.io
import scipy.sparse as sp

from .cutgeom import subdivision, triangle_rule

_GRAD_LAMBDA = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
_LOCAL_EDGES = ((0, 1), (1, 2), (2, 0))


def n_local(order):
    if order not in (1, 2):
        raise ValueError(f"finite element order must be 1 or 2, got {order}")
    return 3 if order == 1 else 6


def _monomials(ref):
    x, y = ref[:, 0], ref[:, 1]
    one, zero = np.ones_like(x), np.zeros_like(x)
    val = np.column_stack([one, x, y, x * x, x * y, y * y])
    dx = np.column_stack([zero, one, zero, 2.0 * x, y, zero])
    dy = np.column_stack([zero, zero, one, zero, x, 2.0 * y])
    return val, dx, dy


@lru_cache(maxsize=None)
def _p2_coefficients():
    # basis_j(node_i) = delta_ij, so the monomial coefficients invert the Vandermonde matrix
    vander, _, _ = _monomials(reference_nodes(2))
    return np.linalg.inv(vander)


def reference_basis(order, ref):
    """Values ``(n, nloc)`` and reference gradients ``(n, nloc, 2)`` at points ``ref``.

    Valid outside the reference triangle too (polynomial extension).
    """
    ref = np.asarray(ref, dtype=float).reshape(-1, 2)
    n = len(ref)
    if order == 1:
        lam = np.column_stack([1.0 - ref[:, 0] - ref[:, 1], ref[:, 0], ref[:, 1]])
        return lam, np.broadcast_to(_GRAD_LAMBDA, (n, 3, 2)).copy()
    n_local(order)
    coef = _p2_coefficients()
    val, dx, dy = _monomials(ref)
    grad = np.stack([dx @ coef, dy @ coef], axis=-1)
    return val @ coef, grad


def reference_nodes(order):
    if order == 1:
        return np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    return np.array([[0, 0], [1, 0], [0, 1], [0.5, 0], [0.5, 0.5], [0, 0.5]], dtype=float)


@lru_cache(maxsize=None)
def reference_matrices(order, depth=0):
    """Exact mass ``(nsub, nloc, nloc)`` and stiffness ``(nsub, 2, 2, nloc, nloc)`` blocks
    of each reference sub-triangle at the given subdivision depth."""
    nodes, tris = subdivision(depth)
    ref, w = triangle_rule(2 * order)
    sub = nodes[tris]
    d1 = sub[:, 1] - sub[:, 0]
    d2 = sub[:, 2] - sub[:, 0]
    jac = np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    pts = sub[:, None, 0] + ref[None, :, 0, None] * d1[:, None] + ref[None, :, 1, None] * d2[:, None]
    val, grad = reference_basis(order, pts.reshape(-1, 2))
    nloc = val.shape[1]
    val = val.reshape(len(sub), len(w), nloc)
    grad = grad.reshape(len(sub), len(w), nloc, 2)
    ww = jac[:, None] * w[None, :]
    mass = np.einsum("sq,sqi,sqj->sij", ww, val, val)
    stiff = np.einsum("sq,sqia,sqjb->sabij", ww, grad, grad)
    mass.setflags(write=False)
    stiff.setflags(write=False)
    return mass, stiff


# --------------------------------------------------------------------------
# per-mesh data


def _cached(mesh, key, build):
    if key not in mesh.cache:
        mesh.cache[key] = build()
    return mesh.cache[key]


def affine_data(mesh):
    """``(origin (nt, 2), jacobian (nt, 2, 2), inverse (nt, 2, 2), |det| (nt,))`` of the element maps."""

    def build():
        p = mesh.corners()
        J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)
        det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        inv = np.empty_like(J)
        inv[:, 0, 0] = J[:, 1, 1] / det
        inv[:, 1, 1] = J[:, 0, 0] / det
        inv[:, 0, 1] = -J[:, 0, 1] / det
        inv[:, 1, 0] = -J[:, 1, 0] / det
        return p[:, 0].copy(), J, inv, np.abs(det)

    return _cached(mesh, "affine", build)


def element_dofs(mesh, order):
    """Global DOF ids per element: vertices, then ``n_vertices + edge`` for m=2."""

    def build():
        if n_local(order) == 3:
            return mesh.triangles.copy()
        return np.hstack([mesh.triangles, mesh.n_vertices + mesh.triangle_edges])

    return _cached(mesh, ("dofs", order), build)


def dof_coordinates(mesh, order):
    def build():
        if n_local(order) == 3:
            return mesh.vertices.copy()
        mid = 0.5 * (mesh.vertices[mesh.edges[:, 0]] + mesh.vertices[mesh.edges[:, 1]])
        return np.vstack([mesh.vertices, mid])

    return _cached(mesh, ("coords", order), build)


def to_reference(mesh, elements, points):
    """Reference coordinates of ``points`` (n, 2) with respect to ``elements`` (n,)."""
    origin, _, inv, _ = affine_data(mesh)
    d = points - origin[elements]
    A = inv[elements]
    return np.column_stack([A[:, 0, 0] * d[:, 0] + A[:, 0, 1] * d[:, 1], A[:, 1, 0] * d[:, 0] + A[:, 1, 1] * d[:, 1]])


# --------------------------------------------------------------------------
# spaces


class FeSpace:
    """Continuous P1 or P2 Lagrange space restricted to the active elements."""

    def __init__(self, active, order):
        self.active = active
        self.mesh = active.mesh
        self.order = order
        self.nloc = n_local(order)
        edofs = element_dofs(self.mesh, order)
        self.elements = active.active_elements
        self.dofs = np.unique(edofs[self.elements])
        n_global = len(dof_coordinates(self.mesh, order))
        self.global_to_local = np.full(n_global, -1, dtype=np.int64)
        self.global_to_local[self.dofs] = np.arange(len(self.dofs))

    @property
    def n_dofs(self):
        return len(self.dofs)

    @property
    def coordinates(self):
        return dof_coordinates(self.mesh, self.order)[self.dofs]

    def local_dofs(self, elements):
        loc = self.global_to_local[element_dofs(self.mesh, self.order)[elements]]
        if np.any(loc < 0):
            raise ValueError("element outside the active mesh")
        return loc

    def interpolate(self, func):
        """Lagrange interpolant of ``func(points) -> values``."""
        return np.asarray(func(self.coordinates), dtype=float).copy()

    def basis_at(self, elements, points, ref=None):
        """Basis values ``(n, nloc)`` and physical gradients ``(n, nloc, 2)`` at points of given owners.

        ``ref`` may pass the reference coordinates when the caller already has them.
        """
        if ref is None:
            ref = to_reference(self.mesh, elements, points)
        val, grad = reference_basis(self.order, ref)
        _, _, inv, _ = affine_data(self.mesh)
        return val, np.matmul(grad, inv[elements])

    def evaluate(self, coeffs, elements, points, gradient=False, ref=None):
        val, grad = self.basis_at(elements, points, ref)
        c = coeffs[self.local_dofs(elements)]
        u = np.einsum("ni,ni->n", val, c)
        if not gradient:
            return u
        return u, np.einsum("nia,ni->na", grad, c)

    def transfer_from(self, other, coeffs):
        """Copy shared DOF values from another space on the same mesh; new DOFs start at zero."""
        out = np.zeros(self.n_dofs)
        if other is None:
            return out
        loc = other.global_to_local[self.dofs]
        shared = loc >= 0
        out[shared] = coeffs[loc[shared]]
        return out


# --------------------------------------------------------------------------
# element matrices


def _element_blocks(space, geo):
    """Mass and stiffness element blocks restricted to the reconstructed domain.

    Returns ``(elements, mass (ne, nloc, nloc), stiffness (ne, nloc, nloc))``.
    """
    mesh, order, nloc = space.mesh, space.order, space.nloc
    _, _, inv, det = affine_data(mesh)
    m_sub, k_sub = reference_matrices(order, geo.depth)
    m_ref, k_ref = m_sub.sum(axis=0), k_sub.sum(axis=0)
    blocks_e, blocks_m, blocks_k = [], [], []

    full = geo.full
    if len(full):
        C = _metric(inv[full])
        blocks_e.append(full)
        blocks_m.append(det[full, None, None] * m_ref[None])
        blocks_k.append(det[full, None, None] * (C.reshape(-1, 4) @ k_ref.reshape(4, -1)).reshape(-1, nloc, nloc))

    part = geo.partial
    if len(part):
        mask = geo.sub_inside.astype(float)
        C = _metric(inv[part])
        Mp = (mask @ m_sub.reshape(len(m_sub), -1)).reshape(-1, nloc, nloc)
        Kp = (mask @ k_sub.reshape(len(k_sub), -1)).reshape(-1, 2, 2, nloc, nloc)
        Mp *= det[part, None, None]
        Kp = det[part, None, None] * (C.reshape(-1, 4, 1) * Kp.reshape(-1, 4, nloc * nloc)).sum(axis=1).reshape(-1, nloc, nloc)
        if len(geo.pieces):
            pm, pk = _piece_blocks(space, geo, part)
            Mp += pm
            Kp += pk
        blocks_e.append(part)
        blocks_m.append(Mp)
        blocks_k.append(Kp)

    if not blocks_e:
        z = np.zeros((0, nloc, nloc))
        return np.zeros(0, dtype=np.int64), z, z
    return np.concatenate(blocks_e), np.concatenate(blocks_m), np.concatenate(blocks_k)


def _piece_blocks(space, geo, part):
    """Quadrature of the clipped sub-triangle pieces, summed into blocks indexed like ``part``."""
    nloc = space.nloc
    ref, w = triangle_rule(2 * space.order)
    tri = geo.pieces
    d1 = tri[:, 1] - tri[:, 0]
    d2 = tri[:, 2] - tri[:, 0]
    area2 = np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    pts = (tri[:, None, 0] + ref[None, :, 0, None] * d1[:, None] + ref[None, :, 1, None] * d2[:, None]).reshape(-1, 2)
    owner = np.repeat(geo.piece_element, len(w))
    weights = (area2[:, None] * w[None, :]).ravel()
    val, grad = space.basis_at(owner, pts)
    slot = np.searchsorted(part, owner)
    wv = weights[:, None] * val
    mass = wv[:, :, None] * val[:, None, :]
    wg = weights[:, None, None] * grad
    stiff = wg[:, :, None, 0] * grad[:, None, :, 0] + wg[:, :, None, 1] * grad[:, None, :, 1]
    group = sp.csr_matrix((np.ones(len(slot)), (slot, np.arange(len(slot)))), shape=(len(part), len(slot)))
    Mp = (group @ mass.reshape(len(slot), -1)).reshape(-1, nloc, nloc)
    Kp = (group @ stiff.reshape(len(slot), -1)).reshape(-1, nloc, nloc)
    return Mp, Kp


def _metric(inv):
    """``J^-1 J^-T`` per element."""
    return np.matmul(inv, inv.transpose(0, 2, 1))


def _scatter(space, elements, blocks):
    n = space.n_dofs
    if not len(elements):
        return sp.csr_matrix((n, n))
    loc = space.local_dofs(elements)
    rows = np.repeat(loc, space.nloc, axis=1).ravel()
    cols = np.tile(loc, (1, space.nloc)).ravel()
    return sp.coo_matrix((blocks.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def assemble_bulk(space, geo):
    """Mass ``int phi_i phi_j`` and stiffness ``int grad phi_i . grad phi_j`` over the domain."""
    elements, m, k = _element_blocks(space, geo)
    return _scatter(space, elements, m), _scatter(space, elements, k)


def assemble_mass(space, geo):
    return assemble_bulk(space, geo)[0]


def assemble_stiffness(space, geo):
    return assemble_bulk(space, geo)[1]


# --------------------------------------------------------------------------
# ghost penalty


def gamma_s(c_gamma=1.0, dt=0.0, h=1.0):
    """Stabilization weight ``c_gamma * (1 + dt / h)``."""
    if not c_gamma > 0:
        raise ValueError("c_gamma must be positive")
    if not h > 0:
        raise ValueError("h must be positive")
    return c_gamma * (1.0 + dt / h)


def patch_matrices(mesh, order, edges):
    """``int_{T1 u T2} Phi Phi^T`` with ``Phi = [basis of T1 extended, -basis of T2 extended]``.

    Returns ``(ne, 2 nloc, 2 nloc)``; the patch integral is exact (degree 2m).
    """
    nloc = n_local(order)
    ref, w = triangle_rule(2 * order)
    t1, t2 = mesh.edge_triangles[edges].T
    _, J, _, det = affine_data(mesh)
    out = np.zeros((len(edges), 2 * nloc, 2 * nloc))
    for host in (t1, t2):
        pts = mesh.reference_points(ref, host).reshape(-1, 2)
        rep1 = np.repeat(t1, len(w))
        rep2 = np.repeat(t2, len(w))
        b1, _ = reference_basis(order, to_reference(mesh, rep1, pts))
        b2, _ = reference_basis(order, to_reference(mesh, rep2, pts))
        phi = np.hstack([b1, -b2]).reshape(len(edges), len(w), 2 * nloc)
        ww = det[host][:, None, None] * w[None, :, None]
        out += np.matmul((ww * phi).transpose(0, 2, 1), phi)
    return out


def _all_patch_matrices(mesh, order):
    """Patch matrices of every edge, zero on boundary edges; cached per mesh."""

    def build():
        out = np.zeros((mesh.n_edges, 2 * n_local(order), 2 * n_local(order)))
        inner = mesh.interior_edges
        out[inner] = patch_matrices(mesh, order, inner)
        return out

    return _cached(mesh, ("patch", order), build)


def assemble_ghost_penalty(space, active, h=None, gamma=1.0):
    """``gamma / h^2 * sum_F int_{omega_F} (u1 - u2)(v1 - v2)`` over the stabilization facets."""
    mesh = space.mesh
    h = mesh.h if h is None else h
    n = space.n_dofs
    edges = active.stabilization_facets
    if not len(edges):
        return sp.csr_matrix((n, n))
    blocks = _all_patch_matrices(mesh, space.order)[edges] * (gamma / h**2)
    t1, t2 = mesh.edge_triangles[edges].T
    loc = np.hstack([space.local_dofs(t1), space.local_dofs(t2)])
    k = loc.shape[1]
    rows = np.repeat(loc, k, axis=1).ravel()
    cols = np.tile(loc, (1, k)).ravel()
    return sp.coo_matrix((blocks.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def element_projection(mesh, element, order, func, quad_order=None):
    """Coefficients of the L2(T) projection of ``func`` onto P_m(T) in the element's Lagrange basis."""
    ref, w = triangle_rule(quad_order or 2 * order + 4)
    _, _, _, det = affine_data(mesh)
    pts = mesh.reference_points(ref, [element])[0]
    val, _ = reference_basis(order, ref)
    mass = det[element] * np.einsum("q,qi,qj->ij", w, val, val)
    moments = det[element] * (w * np.asarray(func(pts), dtype=float)) @ val
    return np.linalg.solve(mass, moments)


# --------------------------------------------------------------------------
# loads


def assemble_load(space, elements, points, weights, values, ref=None):
    """``b_i = sum_q w_q values_q phi_i(x_q)`` for quadrature points owned by ``elements``."""
    if not len(points):
        return np.zeros(space.n_dofs)
    val, _ = space.basis_at(elements, points, ref)
    contrib = (weights * values)[:, None] * val
    return np.bincount(space.local_dofs(elements).ravel(), weights=contrib.ravel(), minlength=space.n_dofs)


@lru_cache(maxsize=None)
def _tabulated_reference(order, fe_order, depth):
    """Reference rule on the whole triangle (slot 0) and on each depth sub-triangle (slots 1..).

    Returns barycentric point weights ``(k, nq, 3)``, reference weights ``(k, nq)``,
    basis values ``(k, nq, nloc)`` and reference gradients ``(k, nq, nloc, 2)``.
    """
    ref, w = triangle_rule(order)
    nodes, tris = subdivision(depth)
    whole = np.array([[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]])
    sub = np.concatenate([whole, nodes[tris]])
    d1 = sub[:, 1] - sub[:, 0]
    d2 = sub[:, 2] - sub[:, 0]
    jac = np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    pts = sub[:, None, 0] + ref[None, :, 0, None] * d1[:, None] + ref[None, :, 1, None] * d2[:, None]
    flat = pts.reshape(-1, 2)
    val, grad = reference_basis(fe_order, flat)
    k, nq = pts.shape[:2]
    bary = np.column_stack([1.0 - flat[:, 0] - flat[:, 1], flat]).reshape(k, nq, 3)
    out = (bary, jac[:, None] * w[None, :], val.reshape(k, nq, -1), grad.reshape(k, nq, -1, 2))
    for arr in out:
        arr.setflags(write=False)
    return out


@dataclass
class TabulatedRule:
    """Quadrature on whole elements and whole sub-triangles with tabulated basis values.

    Entry ``e`` integrates over element ``elements[e]`` (``slot`` 0) or over its
    sub-triangle ``slot - 1``; entries are grouped by slot.
    """

    elements: np.ndarray
    slot: np.ndarray
    points: np.ndarray
    """``(ne, nq, 2)``"""
    weights: np.ndarray
    """``(ne, nq)``"""
    values: np.ndarray
    """``(k, nq, nloc)`` per slot"""
    gradients: np.ndarray
    """``(k, nq, nloc, 2)`` per slot, reference coordinates"""
    groups: list
    """``(slot, entry slice)`` pairs"""

    def __len__(self):
        return len(self.elements)


def tabulated_rule(space, geo, order):
    """Degree-``order`` rule on the full elements and fully inside sub-triangles of ``geo``."""
    mesh = space.mesh
    bary, wref, val, grad = _tabulated_reference(order, space.order, geo.depth)
    r, s = np.nonzero(geo.sub_inside)
    elements = np.concatenate([geo.full, geo.partial[r]]).astype(np.int64)
    slot = np.concatenate([np.zeros(len(geo.full), dtype=np.int64), s + 1])
    by_slot = np.argsort(slot, kind="stable")
    elements, slot = elements[by_slot], slot[by_slot]
    _, _, _, det = affine_data(mesh)
    points = np.matmul(bary[slot], mesh.corners(elements))
    bounds = np.flatnonzero(np.diff(slot)) + 1
    starts = np.concatenate([[0], bounds])
    stops = np.concatenate([bounds, [len(slot)]])
    groups = [(int(slot[a]), slice(int(a), int(b))) for a, b in zip(starts, stops) if b > a]
    return TabulatedRule(elements, slot, points, det[elements, None] * wref[slot], val, grad, groups)


def evaluate_tabulated(space, coeffs, rule, gradient=False):
    """Values ``(ne, nq)`` and optionally physical gradients ``(ne, nq, 2)`` on a tabulated rule."""
    c = coeffs[space.local_dofs(rule.elements)]
    nq = rule.weights.shape[1]
    u = np.empty((len(rule), nq))
    g_ref = np.empty((len(rule), nq, 2)) if gradient else None
    for k, sel in rule.groups:
        u[sel] = c[sel] @ rule.values[k].T
        if gradient:
            nloc = rule.values.shape[2]
            g_ref[sel] = (c[sel] @ rule.gradients[k].transpose(1, 0, 2).reshape(nloc, 2 * nq)).reshape(-1, nq, 2)
    if not gradient:
        return u
    _, _, inv, _ = affine_data(space.mesh)
    return u, np.matmul(g_ref, inv[rule.elements])


def load_tabulated(space, rule, values):
    """Load vector of ``values (ne, nq)`` against the basis on a tabulated rule."""
    wv = rule.weights * values
    contrib = np.empty((len(rule), rule.values.shape[2]))
    for k, sel in rule.groups:
        contrib[sel] = wv[sel] @ rule.values[k]
    return np.bincount(space.local_dofs(rule.elements).ravel(), weights=contrib.ravel(), minlength=space.n_dofs)


def assemble_rhs(space, geo, problem, t, volume_order=None, surface_points=None):
    """Source ``int f phi_i`` over the domain plus flux ``int g phi_i`` over the interface.

    The flux uses the normals of the reconstructed interface so that it is
    the Neumann datum of the domain actually integrated over.
    """
    m = space.order
    volume_order = volume_order or 2 * m + 2
    vol = geo.volume_rule(volume_order, pieces_only=True)
    b = assemble_load(space, vol.element, vol.points, vol.weights, problem.source(vol.points, t), vol.ref)
    whole = tabulated_rule(space, geo, volume_order)
    if len(whole):
        f = problem.source(whole.points.reshape(-1, 2), t).reshape(whole.weights.shape)
        b += load_tabulated(space, whole, f)
    sur = geo.surface_rule(surface_points or m + 2)
    if len(sur.points):
        b += assemble_load(space, sur.element, sur.points, sur.weights, problem.flux(sur.points, t, sur.normals_h))
    return b


# --------------------------------------------------------------------------
# system


@dataclass
class SystemMatrix:
    """Components of ``mass_coef / dt * M + A + S`` on one active mesh (S already weighted)."""

    mass: sp.csr_matrix
    stiffness: sp.csr_matrix
    ghost: sp.csr_matrix
    dt: float
    mass_coef: float = 1.0

    def component(self, name):
        return {"M": self.mass, "A": self.stiffness, "S": self.ghost}[name]

    @property
    def matrix(self):
        return ((self.mass_coef / self.dt) * self.mass + self.stiffness + self.ghost).tocsr()


def export_matrix_market(path, matrix, comment=""):
    """Write a sparse matrix in Matrix Market coordinate format."""
    scipy.io.mmwrite(str(path), sp.coo_matrix(matrix), comment=comment, symmetry="general")
