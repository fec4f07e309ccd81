"""Quadrature on cut triangles from a piecewise-linear interface reconstruction.

Each element is split into ``4**depth`` similar sub-triangles. On every
sub-triangle the level set is replaced by its vertex interpolant, so the
inside part ``{phi <= 0}`` is a triangle, a quadrilateral (split in two) or
the whole sub-triangle, and the interface is a straight segment.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import roots_jacobi

DEFAULT_DEPTH = {1: 2, 2: 3}
_AREA_TOL = 1e-14


@lru_cache(maxsize=None)
def triangle_rule(order):
    """Collapsed Gauss rule on the reference triangle, exact to total degree ``order``.

    Returns ``(points (n, 2), weights (n,))``; weights are positive and sum to 1/2.
    """
    n = max(1, (int(order) + 2) // 2)
    u, wu = roots_jacobi(n, 1.0, 0.0)
    s, ws = leggauss(n)
    x = 0.5 * (u + 1.0)
    y01 = 0.5 * (s + 1.0)
    X = np.repeat(x, n)
    S = np.tile(y01, n)
    pts = np.column_stack([X, (1.0 - X) * S])
    w = np.outer(wu / 4.0, ws / 2.0).ravel()
    pts.setflags(write=False)
    w.setflags(write=False)
    return pts, w


@lru_cache(maxsize=None)
def segment_rule(npts):
    """Gauss-Legendre nodes on [0, 1] with weights summing to one."""
    s, w = leggauss(int(npts))
    s = 0.5 * (s + 1.0)
    w = 0.5 * w
    s.setflags(write=False)
    w.setflags(write=False)
    return s, w


@lru_cache(maxsize=None)
def subdivision(depth):
    """Uniform sub-triangulation of the reference triangle.

    Returns ``(nodes (nn, 2), triangles (4**depth, 3))`` with every
    sub-triangle counterclockwise.
    """
    n = 2**depth
    index = {}
    nodes = []
    for i in range(n + 1):
        for j in range(n + 1 - i):
            index[i, j] = len(nodes)
            nodes.append((i / n, j / n))
    tris = []
    for i in range(n):
        for j in range(n - i):
            tris.append((index[i, j], index[i + 1, j], index[i, j + 1]))
            if i + j < n - 1:
                tris.append((index[i + 1, j], index[i + 1, j + 1], index[i, j + 1]))
    nodes = np.array(nodes)
    tris = np.array(tris, dtype=np.int64)
    nodes.setflags(write=False)
    tris.setflags(write=False)
    return nodes, tris


def _signed_area(p):
    d1 = p[..., 1, :] - p[..., 0, :]
    d2 = p[..., 2, :] - p[..., 0, :]
    return 0.5 * (d1[..., 0] * d2[..., 1] - d1[..., 1] * d2[..., 0])


def map_triangles(tris, ref_pts):
    """Images of reference points in each triangle: ``(k, n, 2)``."""
    p0 = tris[:, None, 0, :]
    return p0 + ref_pts[None, :, 0, None] * (tris[:, None, 1, :] - p0) + ref_pts[None, :, 1, None] * (tris[:, None, 2, :] - p0)


def _crossing(pa, pb, fa, fb):
    s = (fa / (fa - fb))[:, None]
    return pa + s * (pb - pa)


def clip_linear(pts, phi):
    """Clip triangles with vertex values ``phi`` against ``{phi <= 0}``.

    ``pts`` is ``(k, 3, 2)``; every triangle must have mixed signs.
    Returns ``(pieces, piece_owner, segments, segment_owner, segment_normals)``
    where normals are the unit gradients of the linear interpolants.
    """
    k = len(pts)
    inside = phi <= 0.0
    count = inside.sum(axis=1)
    rows = np.arange(k)[:, None]
    one = count == 1
    # rotate: lone inside vertex first, or lone outside vertex last
    start = np.where(one, np.argmax(inside, axis=1), (np.argmin(inside, axis=1) + 1) % 3)
    order = (start[:, None] + np.arange(3)[None, :]) % 3
    P = pts[rows, order]
    F = phi[rows, order]
    a, b, c = P[:, 0], P[:, 1], P[:, 2]
    fa, fb, fc = F[:, 0], F[:, 1], F[:, 2]

    e1 = b - a
    e2 = c - a
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    db, dc = fb - fa, fc - fa
    grad = np.column_stack([(db * e2[:, 1] - dc * e1[:, 1]) / det, (dc * e1[:, 0] - db * e2[:, 0]) / det])
    normal = grad / np.linalg.norm(grad, axis=1, keepdims=True)

    i1 = np.flatnonzero(one)
    i2 = np.flatnonzero(~one)
    pab = _crossing(a[i1], b[i1], fa[i1], fb[i1])
    pac = _crossing(a[i1], c[i1], fa[i1], fc[i1])
    pbc = _crossing(b[i2], c[i2], fb[i2], fc[i2])
    pca = _crossing(c[i2], a[i2], fc[i2], fa[i2])

    pieces = np.concatenate([
        np.stack([a[i1], pab, pac], axis=1),
        np.stack([a[i2], b[i2], pbc], axis=1),
        np.stack([a[i2], pbc, pca], axis=1),
    ])
    owner = np.concatenate([i1, i2, i2])
    segs = np.concatenate([np.stack([pab, pac], axis=1), np.stack([pbc, pca], axis=1)])
    seg_owner = np.concatenate([i1, i2])

    area = _signed_area(pieces)
    scale = np.abs(det)[owner]
    keep = area > _AREA_TOL * scale
    length = np.linalg.norm(segs[:, 1] - segs[:, 0], axis=1)
    keep_s = length > _AREA_TOL * np.sqrt(np.abs(det)[seg_owner])
    return pieces[keep], owner[keep], segs[keep_s], seg_owner[keep_s], normal[seg_owner[keep_s]]


@dataclass
class VolumeRule:
    element: np.ndarray
    points: np.ndarray
    weights: np.ndarray
    ref: np.ndarray | None = None
    """Reference coordinates of ``points`` in their owner elements."""

    def integrate(self, f):
        return float(np.dot(self.weights, _evaluate(f, self.points)))


@dataclass
class SurfaceRule:
    element: np.ndarray
    points: np.ndarray
    weights: np.ndarray
    normals: np.ndarray
    """Exact unit normals ``grad phi / |grad phi|`` (discrete ones where the gradient vanishes)."""
    normals_h: np.ndarray
    """Unit normals of the reconstructed interface segments."""

    def integrate(self, g):
        return float(np.dot(self.weights, _evaluate(g, self.points)))

    @property
    def length(self):
        return float(self.weights.sum())


def _evaluate(f, pts):
    if np.isscalar(f):
        return np.full(len(pts), float(f))
    return np.broadcast_to(np.asarray(f(pts), dtype=float), (len(pts),))


@dataclass(eq=False)
class CutGeometry:
    """Reconstructed ``Omega(t) = {phi <= 0}`` on a set of background elements.

    Attributes
    ----------
    full : element ids lying entirely inside the reconstruction
    partial : element ids with a nonempty interface piece
    sub_inside : ``(len(partial), 4**depth)`` mask of sub-triangles fully inside
    pieces, piece_element : clipped triangles of mixed sub-triangles and their element ids
    segments, segment_element, segment_normals : interface segments (outward discrete normals)
    """

    mesh: object
    field: object
    t: float
    depth: int
    full: np.ndarray
    partial: np.ndarray
    sub_inside: np.ndarray
    pieces: np.ndarray
    piece_element: np.ndarray
    segments: np.ndarray
    segment_element: np.ndarray
    segment_normals: np.ndarray

    @property
    def elements(self):
        return np.union1d(self.full, self.partial)

    def full_subtriangles(self):
        """Physical coordinates and owners of fully inside sub-triangles of partial elements."""
        nodes, tris = subdivision(self.depth)
        r, s = np.nonzero(self.sub_inside)
        return _map_each(self.mesh.corners(self.partial[r]), nodes[tris[s]]), self.partial[r]

    def volume_rule(self, order, pieces_only=False):
        """Quadrature on the reconstructed domain exact for polynomials of degree ``order`` per piece.

        With ``pieces_only`` only the clipped pieces of mixed sub-triangles are covered.
        """
        ref, w = triangle_rule(order)
        parts_e, parts_x, parts_w, parts_r = [], [], [], []
        if not pieces_only and len(self.full):
            corners = self.mesh.corners(self.full)
            area = np.abs(_signed_area(corners))
            parts_x.append(map_triangles(corners, ref).reshape(-1, 2))
            parts_w.append((2.0 * area[:, None] * w[None, :]).ravel())
            parts_e.append(np.repeat(self.full, len(w)))
            parts_r.append(np.tile(ref, (len(self.full), 1)))
        nodes, tris = subdivision(self.depth)
        r, s = np.nonzero(self.sub_inside)
        if not pieces_only and len(r):
            owner = self.partial[r]
            ref_tris = nodes[tris[s]]
            tri = _map_each(self.mesh.corners(owner), ref_tris)
            area = np.abs(_signed_area(tri))
            parts_x.append(map_triangles(tri, ref).reshape(-1, 2))
            parts_w.append((2.0 * area[:, None] * w[None, :]).ravel())
            parts_e.append(np.repeat(owner, len(w)))
            parts_r.append(map_triangles(ref_tris, ref).reshape(-1, 2))
        if len(self.pieces):
            tri, owner = self.pieces, self.piece_element
            area = np.abs(_signed_area(tri))
            pts = map_triangles(tri, ref).reshape(-1, 2)
            elem = np.repeat(owner, len(w))
            parts_x.append(pts)
            parts_w.append((2.0 * area[:, None] * w[None, :]).ravel())
            parts_e.append(elem)
            parts_r.append(_reference_coordinates(self.mesh.corners(elem), pts))
        if not parts_e:
            return VolumeRule(np.zeros(0, dtype=np.int64), np.zeros((0, 2)), np.zeros(0), np.zeros((0, 2)))
        e = np.concatenate(parts_e)
        order_ = np.argsort(e, kind="stable")
        return VolumeRule(e[order_], np.concatenate(parts_x)[order_], np.concatenate(parts_w)[order_],
                          np.concatenate(parts_r)[order_])

    def surface_rule(self, npts, eps_grad=1e-10):
        """Gauss-Legendre rule with ``npts`` nodes on every interface segment."""
        s, w = segment_rule(npts)
        segs = self.segments
        if not len(segs):
            z = np.zeros((0, 2))
            return SurfaceRule(np.zeros(0, dtype=np.int64), z, np.zeros(0), z, z)
        length = np.linalg.norm(segs[:, 1] - segs[:, 0], axis=1)
        pts = (segs[:, None, 0, :] + s[None, :, None] * (segs[:, None, 1, :] - segs[:, None, 0, :])).reshape(-1, 2)
        weights = (length[:, None] * w[None, :]).ravel()
        elem = np.repeat(self.segment_element, len(s))
        nh = np.repeat(self.segment_normals, len(s), axis=0)
        g = np.asarray(self.field.gradient(pts, self.t), dtype=float)
        gn = np.linalg.norm(g, axis=1)
        ok = gn >= eps_grad
        n_exact = nh.copy()
        n_exact[ok] = g[ok] / gn[ok, None]
        order_ = np.argsort(elem, kind="stable")
        return SurfaceRule(elem[order_], pts[order_], weights[order_], n_exact[order_], nh[order_])

    def area(self):
        return self.volume_rule(1).weights.sum()

    def length(self):
        return float(np.linalg.norm(self.segments[:, 1] - self.segments[:, 0], axis=1).sum())


def _reference_coordinates(corners, pts):
    """Invert the affine maps of ``corners`` (n, 3, 2) at ``pts`` (n, 2)."""
    d1 = corners[:, 1] - corners[:, 0]
    d2 = corners[:, 2] - corners[:, 0]
    d = pts - corners[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    return np.column_stack([(d[:, 0] * d2[:, 1] - d[:, 1] * d2[:, 0]) / det,
                            (d1[:, 0] * d[:, 1] - d1[:, 1] * d[:, 0]) / det])


def _map_each(corners, ref_tris):
    """Map reference triangles ``ref_tris[k]`` into ``corners[k]``: ``(k, 3, 2)``."""
    if not len(corners):
        return np.zeros((0, 3, 2))
    p0 = corners[:, None, 0, :]
    return (p0 + ref_tris[:, :, 0, None] * (corners[:, None, 1, :] - p0)
            + ref_tris[:, :, 1, None] * (corners[:, None, 2, :] - p0))


def cut_geometry(mesh, field, t, depth=2, elements=None):
    """Reconstruct the domain on ``elements`` (all elements when omitted)."""
    if depth < 0:
        raise ValueError("depth must be non-negative")
    elements = np.arange(mesh.n_triangles) if elements is None else np.asarray(elements, dtype=np.int64)
    nodes, tris = subdivision(depth)
    pts = mesh.reference_points(nodes, elements)
    phi = np.asarray(field.value(pts, t), dtype=float)
    inside = phi <= 0.0
    all_in = inside.all(axis=1)
    any_in = inside.any(axis=1)
    full = elements[all_in]
    mixed = any_in & ~all_in
    partial = elements[mixed]
    pts_p = pts[mixed]
    phi_p = phi[mixed]

    sphi = phi_p[:, tris]
    sin = sphi <= 0.0
    sub_inside = sin.all(axis=2)
    cut_sub = sin.any(axis=2) & ~sub_inside
    r, s = np.nonzero(cut_sub)
    sub_pts = pts_p[r[:, None], tris[s]]
    pieces, owner, segs, seg_owner, normals = clip_linear(sub_pts, sphi[r, s])
    return CutGeometry(
        mesh, field, float(t), int(depth), full, partial, sub_inside,
        pieces, partial[r[owner]], segs, partial[r[seg_owner]], normals,
    )


@dataclass
class CutQuadrature:
    """Quadrature of a single element intersected with the reconstructed domain."""

    element_id: int
    volume_points: np.ndarray
    volume_weights: np.ndarray
    surface_points: np.ndarray
    surface_weights: np.ndarray
    surface_normals: np.ndarray
    subdivision_depth: int

    @property
    def volume(self):
        return float(self.volume_weights.sum())

    @property
    def surface_length(self):
        return float(self.surface_weights.sum())


def cut_element_quadrature(mesh, element, field, t, depth=2, rule_order=2, surface_points=None):
    """Volume and surface rule of one element; ``surface_points`` defaults to ``rule_order // 2 + 1``."""
    geo = cut_geometry(mesh, field, t, depth, elements=[element])
    vol = geo.volume_rule(rule_order)
    sur = geo.surface_rule(surface_points or rule_order // 2 + 1)
    return CutQuadrature(int(element), vol.points, vol.weights, sur.points, sur.weights, sur.normals, int(depth))


def integrate_volume(f, active, field, t, depth=2, order=2):
    """Integral of ``f`` over the reconstructed domain restricted to the active mesh."""
    geo = _active_geometry(active, field, t, depth)
    return geo.volume_rule(order).integrate(f)


def integrate_surface(g, active, field, t, depth=2, npts=2):
    """Integral of ``g`` over the reconstructed interface within the active mesh."""
    geo = _active_geometry(active, field, t, depth)
    return geo.surface_rule(npts).integrate(g)


def _active_geometry(active, field, t, depth):
    return cut_geometry(active.mesh, field, t, depth, elements=np.flatnonzero(active.physical))
