import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.polynomial.legendre import leggauss

from conftest import single_triangle_mesh
from topofem import levelset
from topofem.cutgeom import (
    clip_linear,
    cut_element_quadrature,
    cut_geometry,
    integrate_surface,
    integrate_volume,
    segment_rule,
    subdivision,
    triangle_rule,
)
from topofem.levelset import DiskField, LinearField
from topofem.mesh import build_background, classify_elements, structured_mesh


def test_half_plane_cut_of_reference_triangle(reference_mesh):
    q = cut_element_quadrature(reference_mesh, 0, LinearField(a=(1.0, 0.0), c=-0.5), 0.0, depth=0)
    assert abs(q.volume - 0.375) <= 1e-12
    assert abs(q.surface_length - 0.5) <= 1e-12
    assert np.allclose(q.surface_normals, [1.0, 0.0], atol=1e-14)
    assert q.subdivision_depth == 0


@pytest.mark.parametrize("depth", [0, 1, 3])
def test_inside_element_gets_full_rule(reference_mesh, depth):
    q = cut_element_quadrature(reference_mesh, 0, LinearField(a=(0.0, 0.0), c=-1.0), 0.0, depth=depth)
    assert q.volume == pytest.approx(0.5, abs=1e-15)
    assert len(q.surface_points) == 0


def test_outside_element_is_empty(reference_mesh):
    q = cut_element_quadrature(reference_mesh, 0, LinearField(a=(0.0, 0.0), c=1.0), 0.0, depth=2)
    assert len(q.volume_points) == 0 and q.volume == 0.0


def test_negative_depth_rejected(reference_mesh):
    with pytest.raises(ValueError):
        cut_geometry(reference_mesh, LinearField(), 0.0, depth=-1)


# rules


@pytest.mark.parametrize("order", range(0, 9))
def test_triangle_rule_exactness(order):
    pts, w = triangle_rule(order)
    assert np.all(w > 0)
    for a in range(order + 1):
        for b in range(order + 1 - a):
            exact = math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)
            assert w @ (pts[:, 0] ** a * pts[:, 1] ** b) == pytest.approx(exact, rel=1e-13, abs=1e-16)


@pytest.mark.parametrize("npts", [1, 2, 3, 5])
def test_segment_rule_exactness(npts):
    s, w = segment_rule(npts)
    for k in range(2 * npts):
        assert w @ s**k == pytest.approx(1.0 / (k + 1), rel=1e-13)


@pytest.mark.parametrize("depth", [0, 1, 2, 4])
def test_subdivision_tiles_reference_triangle(depth):
    nodes, tris = subdivision(depth)
    p = nodes[tris]
    d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    area = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    assert len(tris) == 4**depth
    assert np.all(area > 0)
    assert area.sum() == pytest.approx(0.5, abs=1e-14)
    assert np.allclose(area, area[0])


def test_clip_keeps_quadrilateral_part():
    pts = np.array([[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]])
    pieces, owner, segs, _, normals = clip_linear(pts, np.array([[-1.0, 1.0, -1.0]]))
    d1, d2 = pieces[:, 1] - pieces[:, 0], pieces[:, 2] - pieces[:, 0]
    assert len(pieces) == 2 and np.all(owner == 0)
    assert np.abs(0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])).sum() == pytest.approx(0.375)
    assert np.linalg.norm(segs[0, 1] - segs[0, 0]) == pytest.approx(0.5)
    assert np.allclose(normals[0], [1.0, 0.0])


# global integrals


def test_disk_area_and_perimeter_are_second_order_in_depth():
    field = DiskField(0.25, 0.0, name="disk")
    mesh = structured_mesh(((-1.0, 1.0), (-1.0, 1.0)), 4, 4)
    depths = np.arange(0, 7)
    area_err, length_err = [], []
    for d in depths:
        geo = cut_geometry(mesh, field, 0.0, int(d))
        area_err.append(abs(geo.area() - math.pi / 4))
        length_err.append(abs(geo.length() - math.pi))
    assert -np.polyfit(depths, np.log2(area_err), 1)[0] == pytest.approx(2.0, abs=0.3)
    assert -np.polyfit(depths, np.log2(length_err), 1)[0] == pytest.approx(2.0, abs=0.3)


@pytest.fixture(scope="module")
def unit_disk_active():
    mesh = build_background(levelset.PAPER_BULK, 0.5, 2)
    field = levelset.get_scenario("shrinking_disk")
    return classify_elements(mesh, field, 0.0, 0.0, sample_depth=3), field


def test_unit_disk_area(unit_disk_active):
    active, field = unit_disk_active
    assert active.mesh.h == 0.125
    area = integrate_volume(lambda x: np.ones(len(x)), active, field, 0.0, depth=3)
    assert abs(area - math.pi) / math.pi < 2e-3


def test_unit_circle_length(unit_disk_active):
    active, field = unit_disk_active
    length = integrate_surface(lambda x: np.ones(len(x)), active, field, 0.0, depth=3)
    assert abs(length - 2 * math.pi) / (2 * math.pi) < 5e-3


def test_empty_domain_integrates_to_zero(unit_disk_active):
    active, _ = unit_disk_active
    outside = LinearField(a=(0.0, 0.0), c=1.0)
    assert integrate_volume(1.0, active, outside, 0.0) == 0.0
    assert integrate_surface(1.0, active, outside, 0.0) == 0.0


def test_surface_normals_match_gradient():
    field = levelset.get_scenario("paper_splitting")
    mesh = build_background(field.bulk, 0.5, 2)
    for t in (0.1, 0.4):
        rule = cut_geometry(mesh, field, t, 2).surface_rule(3)
        g = field.gradient(rule.points, t)
        assert np.allclose(rule.normals, g / np.linalg.norm(g, axis=1)[:, None], atol=1e-8)
        assert np.allclose(np.linalg.norm(rule.normals_h, axis=1), 1.0)
        assert np.all(np.sum(rule.normals_h * rule.normals, axis=1) > 0.9)


def test_volume_rule_per_element_bounds():
    field = levelset.get_scenario("paper_merging")
    mesh = build_background(field.bulk, 0.5, 1)
    geo = cut_geometry(mesh, field, 0.2, 2)
    rule = geo.volume_rule(4)
    assert np.all(rule.weights > 0)
    per_element = np.bincount(rule.element, weights=rule.weights, minlength=mesh.n_triangles)
    assert np.all(per_element <= mesh.areas() + 1e-12)
    assert np.all(np.diff(rule.element) >= 0)


def test_pieces_only_rule_complements_whole_triangles():
    field = levelset.get_scenario("paper_splitting")
    mesh = build_background(field.bulk, 0.5, 1)
    geo = cut_geometry(mesh, field, 0.3, 2)
    full = geo.volume_rule(2)
    pieces = geo.volume_rule(2, pieces_only=True)
    inside = mesh.areas(geo.full).sum() + geo.sub_inside.sum() * mesh.areas(geo.partial[:1])[0] / 4**2
    assert full.weights.sum() == pytest.approx(pieces.weights.sum() + inside, rel=1e-12)
    # stored reference coordinates map back onto the physical points
    r = pieces.ref
    bary = np.column_stack([1 - r[:, 0] - r[:, 1], r])
    assert np.allclose(np.einsum("nk,nkd->nd", bary, mesh.corners(pieces.element)), pieces.points, atol=1e-13)


# properties on random triangles


def _polygon_moment(poly, a, b, n=12):
    """``int_P x^a y^b`` by Green's theorem: the boundary integral of ``x^(a+1) y^b / (a+1) dy``."""
    s, w = leggauss(n)
    s, w = 0.5 * (s + 1), 0.5 * w
    total = 0.0
    for p, q in zip(poly, np.roll(poly, -1, axis=0)):
        x = p[0] + s * (q[0] - p[0])
        y = p[1] + s * (q[1] - p[1])
        total += w @ (x ** (a + 1) * y**b) / (a + 1) * (q[1] - p[1])
    return total


def _inside_polygon(corners, phi):
    """Counterclockwise polygon ``{phi <= 0}`` of a triangle with vertex-linear ``phi``."""
    out = []
    for i in range(3):
        j = (i + 1) % 3
        if phi[i] <= 0:
            out.append(corners[i])
        if (phi[i] < 0) != (phi[j] < 0) and phi[i] != phi[j] and phi[i] * phi[j] < 0:
            s = phi[i] / (phi[i] - phi[j])
            out.append(corners[i] + s * (corners[j] - corners[i]))
    return np.array(out)


coord = st.floats(-2.0, 2.0)


@st.composite
def cut_triangles(draw):
    corners = np.array([[draw(coord), draw(coord)] for _ in range(3)])
    d1, d2 = corners[1] - corners[0], corners[2] - corners[0]
    det = d1[0] * d2[1] - d1[1] * d2[0]
    if det < 0:
        corners = corners[[0, 2, 1]]
    a = np.array([draw(st.floats(-1, 1)), draw(st.floats(-1, 1))])
    c = draw(st.floats(-1, 1))
    return corners, a, c, abs(det) / 2


@given(cut_triangles())
def test_partition_property(sample):
    corners, a, c, area = sample
    if area < 1e-3:
        return
    mesh = single_triangle_mesh(corners)
    if np.any(np.abs(corners @ a + c) < 1e-9):
        return
    inside = cut_element_quadrature(mesh, 0, LinearField(a, 0.0, c), 0.0, depth=1).volume
    outside = cut_element_quadrature(mesh, 0, LinearField(-a, 0.0, -c), 0.0, depth=1).volume
    assert abs(inside + outside - area) <= 1e-12 * max(1.0, area)


@given(cut_triangles(), st.integers(0, 6), st.integers(0, 2))
def test_linear_cut_exactness(sample, order, depth):
    corners, a, c, area = sample
    if area < 1e-3:
        return
    mesh = single_triangle_mesh(corners)
    phi = corners @ a + c
    if np.any(np.abs(phi) < 1e-9):
        return
    poly = _inside_polygon(corners, phi)
    q = cut_element_quadrature(mesh, 0, LinearField(a, 0.0, c), 0.0, depth=depth, rule_order=order)
    x, y = (q.volume_points.T if len(q.volume_points) else (np.zeros(0), np.zeros(0)))
    for i in range(order + 1):
        j = order - i
        exact = _polygon_moment(poly, i, j) if len(poly) >= 3 else 0.0
        assert abs(q.volume_weights @ (x**i * y**j) - exact) <= 1e-12 * max(area, 1.0) * 8.0 ** order


def test_partition_property_for_curved_field():
    field = levelset.get_scenario("paper_splitting")
    flipped = levelset.ScaledField(field, 1.0)
    flipped.value = lambda x, t: -field.value(x, t)
    mesh = build_background(field.bulk, 0.5, 1)

    def per_element(f, depth):
        rule = cut_geometry(mesh, f, 0.3, depth).volume_rule(1)
        return np.bincount(rule.element, weights=rule.weights, minlength=mesh.n_triangles)

    for depth in (0, 2, 3):
        total = per_element(field, depth) + per_element(flipped, depth)
        assert np.allclose(total, mesh.areas(), rtol=0, atol=1e-12)
