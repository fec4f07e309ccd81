"""Ghost penalty of a random continuous piecewise polynomial on a two-triangle patch.

Patch: the unit square split along its (1, 1) diagonal into
``T1 = (0,0),(1,0),(1,1)`` and ``T2 = (0,0),(1,1),(0,1)``. Nodal values at the
Lagrange nodes are drawn from a seeded generator; each local polynomial is
fitted in physical monomials and ``int_square (p1 - p2)^2`` is evaluated with
a tensor Gauss rule (exact up to degree 19).
"""
import numpy as np
from numpy.polynomial.legendre import leggauss

SEED = 20240601
T1 = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]])
T2 = np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


def nodes(tri, order):
    if order == 1:
        return tri
    mids = 0.5 * (tri + np.roll(tri, -1, axis=0))
    return np.vstack([tri, mids])


def monomials(p, order):
    x, y = p[:, 0], p[:, 1]
    cols = [np.ones_like(x), x, y]
    if order == 2:
        cols += [x * x, x * y, y * y]
    return np.column_stack(cols)


def nodal_values(order):
    """Random values keyed by node coordinates (shared nodes get one value)."""
    rng = np.random.default_rng(SEED + order)
    pts = np.unique(np.round(np.vstack([nodes(T1, order), nodes(T2, order)]), 12), axis=0)
    return {tuple(p): float(v) for p, v in zip(pts, rng.uniform(-1, 1, len(pts)))}


def local_poly(tri, order, values):
    p = nodes(tri, order)
    rhs = np.array([values[tuple(np.round(q, 12))] for q in p])
    return np.linalg.solve(monomials(p, order), rhs)


def penalty(order, n=10):
    values = nodal_values(order)
    c1 = local_poly(T1, order, values)
    c2 = local_poly(T2, order, values)
    g, w = leggauss(n)
    s = 0.5 * (g + 1)
    X, Y = np.meshgrid(s, s, indexing="ij")
    W = np.outer(0.5 * w, 0.5 * w).ravel()
    pts = np.column_stack([X.ravel(), Y.ravel()])
    diff = monomials(pts, order) @ (c1 - c2)
    return float(W @ diff**2)


if __name__ == "__main__":
    for m in (1, 2):
        print(f"order {m} s(u,u) = {penalty(m)!r}")
