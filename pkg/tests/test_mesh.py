import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from topofem import levelset
from topofem.errors import ContainmentViolation, InvalidRect
from topofem.levelset import DiskField, LinearField, PAPER_BULK
from topofem.mesh import (
    TAG_CUT,
    TAG_INACTIVE,
    TAG_INTERIOR,
    build_background,
    check_containment,
    choose_delta,
    classify_elements,
    expand,
    layer_count,
)


@pytest.fixture(scope="module")
def level1():
    return build_background(PAPER_BULK, 0.5, 1)


@pytest.fixture(scope="module")
def level2():
    return build_background(PAPER_BULK, 0.5, 2)


def test_coarse_paper_mesh_counts():
    mesh = build_background(PAPER_BULK, 0.5, 0)
    assert mesh.n_triangles == 96
    assert mesh.h == 0.5


def test_one_refinement(level1):
    assert level1.n_triangles == 384
    assert level1.h == 0.25


@pytest.mark.parametrize("rect", [((0.0, 0.0), (0.0, 1.0)), ((0.0, 1.0), (2.0, 1.0)), "square"])
def test_degenerate_rect(rect):
    with pytest.raises(InvalidRect):
        build_background(rect, 0.5, 0)


def test_spacing_must_divide_rect():
    with pytest.raises(InvalidRect):
        build_background(PAPER_BULK, 0.3, 0)


@pytest.mark.parametrize("levels", [0, 1, 2])
def test_background_invariants(levels):
    mesh = build_background(PAPER_BULK, 0.5, levels)
    assert np.all(mesh.areas() > 0)
    counts = np.count_nonzero(mesh.edge_triangles >= 0, axis=1)
    p = mesh.vertices[mesh.edges]
    on_boundary = np.zeros(mesh.n_edges, dtype=bool)
    for axis, (lo, hi) in enumerate(PAPER_BULK):
        for side in (lo, hi):
            on_boundary |= np.all(np.isclose(p[:, :, axis], side), axis=1)
    assert np.all(counts[on_boundary] == 1)
    assert np.all(counts[~on_boundary] == 2)
    lengths = mesh.edge_lengths()
    assert lengths.max() / lengths.min() <= 4
    assert mesh.areas().sum() == pytest.approx(12.0, rel=1e-14)


def test_refinement_matches_direct_construction():
    coarse = build_background(PAPER_BULK, 0.5, 1)
    fine = coarse.refine()
    direct = build_background(PAPER_BULK, 0.5, 2)
    assert fine.h == coarse.h / 2 == direct.h
    assert fine.n_triangles == direct.n_triangles
    key = lambda v: np.unique(np.round(v, 12), axis=0)  # noqa: E731
    assert np.array_equal(key(fine.vertices), key(direct.vertices))
    assert fine.areas().sum() == pytest.approx(coarse.areas().sum())


def test_neighbors_are_symmetric(level1):
    nb = level1.neighbors
    for t in range(level1.n_triangles):
        for s in nb[t][nb[t] >= 0]:
            assert t in nb[s]


# active mesh


def test_everything_inside(level1):
    act = classify_elements(level1, LinearField(a=(0.0, 0.0), c=-1.0), 0.0, 0.1)
    assert act.active.all() and act.interior.all()
    assert not act.cut.any() and not act.strip.any()
    assert len(act.stabilization_facets) == 0


def test_everything_outside(level1):
    act = classify_elements(level1, LinearField(a=(0.0, 0.0), c=1.0), 0.0, 0.1)
    assert not act.active.any()
    assert np.all(act.tags() == TAG_INACTIVE)


def test_shrinking_disk_union_covers_disk(level1):
    act = classify_elements(level1, DiskField(1.0, -1.0), 0.0, 0.0)
    assert act.layers == 1
    assert level1.areas(act.active_elements).sum() >= math.pi
    assert np.array_equal(act.active, expand(level1, act.physical, 1))


def test_post_split_interior_has_two_components(level2):
    act = classify_elements(level2, levelset.get_scenario("paper_splitting"), 0.3, 0.05)
    assert level2.count_components(act.interior) == 2
    assert level2.count_components(act.active) in (1, 2)


def test_pre_split_domain_is_connected(level2):
    act = classify_elements(level2, levelset.get_scenario("paper_splitting"), 0.2, 0.05)
    assert level2.count_components(act.interior | act.cut) == 1


def _facet_invariants(mesh, act):
    facets = act.stabilization_facets
    assert len(np.unique(facets)) == len(facets)
    t1, t2 = mesh.edge_triangles[facets].T
    assert np.all(t1 >= 0) and np.all(t2 >= 0)
    assert np.all(act.active[t1] & act.active[t2])
    assert np.all(act.strip[t1] | act.strip[t2])
    # every qualifying interior edge is present
    e = mesh.interior_edges
    a, b = mesh.edge_triangles[e].T
    expected = e[act.active[a] & act.active[b] & (act.strip[a] | act.strip[b])]
    assert np.array_equal(np.sort(facets), np.sort(expected))


def test_set_inclusions_and_facets(level2):
    for name in ("paper_splitting", "paper_merging", "two_balls", "shrinking_disk"):
        field = levelset.get_scenario(name)
        t = 0.5 * sum(field.time_span)
        act = classify_elements(level2, field, t, 0.1, sample_depth=2)
        assert np.all(act.active[act.interior | act.cut])
        assert np.all(act.active[act.strip])
        assert not np.any(act.interior & act.cut)
        _facet_invariants(level2, act)


def test_tags(level1):
    act = classify_elements(level1, DiskField(1.0, -1.0), 0.0, 0.3)
    tags = act.tags()
    assert np.array_equal(tags == TAG_INTERIOR, act.interior)
    assert np.array_equal(tags == TAG_CUT, act.cut)
    assert np.array_equal(tags != TAG_INACTIVE, act.active)


@given(st.floats(0.0, 0.5), st.floats(0.0, 0.5), st.floats(0.0, 0.5))
def test_monotone_in_delta(d1, d2, t):
    mesh = build_background(PAPER_BULK, 0.5, 1)
    lo, hi = sorted((d1, d2))
    field = levelset.get_scenario("paper_splitting")
    small = classify_elements(mesh, field, t, lo)
    big = classify_elements(mesh, field, t, hi)
    assert np.all(big.active[small.active])
    assert np.all(big.strip[small.strip])
    assert np.all(np.isin(small.stabilization_facets, big.stabilization_facets))


def test_layer_count():
    assert layer_count(0.0, 0.25) == 1
    assert layer_count(0.25, 0.25) == 2
    assert layer_count(0.26, 0.25) == 3
    with pytest.raises(ValueError):
        layer_count(-1.0, 0.25)


def test_containment_check(level1):
    field = DiskField(0.25, 1.0)
    before = classify_elements(level1, field, 0.0, 0.0, time_index=0)
    after = classify_elements(level1, field, 2.0, 0.0, time_index=1)
    with pytest.raises(ContainmentViolation, match="increase delta"):
        check_containment(before, after)
    check_containment(after, before)


# extension width


def test_choose_delta_floor():
    assert choose_delta(0.0, 0.05, 2.0) == pytest.approx(0.1)
    assert choose_delta(0.5, 0.05, 2.0) == pytest.approx(0.1)
    assert choose_delta(3.0, 0.05, 2.0) == pytest.approx(0.3)


def test_choose_delta_accepts_constants():
    c = levelset.EvolutionConstants(v_max_plus=2.0, sample_count=1, excluded_near_singular=0)
    assert choose_delta(c, 0.1, 1.0) == pytest.approx(0.2)


@pytest.mark.parametrize("dt,safety", [(0.0, 2.0), (-0.1, 2.0), (0.1, 0.5)])
def test_choose_delta_preconditions(dt, safety):
    with pytest.raises(ValueError):
        choose_delta(0.0, dt, safety)
