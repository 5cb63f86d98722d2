import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fosls.mesh import (build_reference_mesh, entities, make_mesh, patch, read_json, read_triangle, refine_nvb,
                        refine_uniform, shape_regularity, write_json)


def brute_contains(mesh, k, x, tol=1e-12):
    """Point-in-triangle oracle via signed areas."""
    p = mesh.vertices[mesh.triangles[k]]
    out = np.ones(len(x), dtype=bool)
    for j in range(3):
        a, b = p[j], p[(j + 1) % 3]
        cross = (b[0] - a[0]) * (x[:, 1] - a[1]) - (b[1] - a[1]) * (x[:, 0] - a[0])
        out &= cross >= -tol
    return out


def test_reference_mesh_counts():
    sq = build_reference_mesh("unit_square")
    assert (sq.n_vertices, sq.n_triangles, len(sq.edges)) == (4, 2, 5)
    ls = build_reference_mesh("l_shape")
    assert (ls.n_vertices, ls.n_triangles) == (8, 6)
    assert ls.areas.sum() == pytest.approx(3.0)
    st_ = build_reference_mesh("spacetime_rect", 2.0)
    assert (st_.n_vertices, st_.n_triangles, len(st_.edges)) == (4, 2, 5)
    assert st_.areas.sum() == pytest.approx(2.0)
    assert {"initial", "final", "lateral"} <= st_.labels
    with pytest.raises(ValueError):
        build_reference_mesh("spacetime_rect", 0.0)
    with pytest.raises(ValueError):
        build_reference_mesh("annulus")


def test_spacetime_labels_follow_coordinates():
    m = build_reference_mesh("spacetime_rect", 1.5)
    for e, lab in zip(m.boundary_edges, m.edge_labels[m.boundary_edges]):
        x = m.vertices[m.edges[e]]
        if lab == "initial":
            assert np.all(x[:, 0] == 0)
        elif lab == "final":
            assert np.all(x[:, 0] == 1.5)
        else:
            assert lab == "lateral" and (np.all(x[:, 1] == 0) or np.all(x[:, 1] == 1))


def test_refine_single_marked_triangle_closes_neighbour():
    m = refine_nvb(build_reference_mesh("unit_square"), {0})
    assert m.n_triangles == 4
    assert m.is_conforming()


def test_refine_empty_marking_is_noop():
    m = build_reference_mesh("l_shape")
    r = refine_nvb(m, set())
    assert np.array_equal(r.vertices, m.vertices) and np.array_equal(r.triangles, m.triangles)


def test_refine_all_lshape_bisects_each_once():
    m = build_reference_mesh("l_shape")
    r = refine_nvb(m, set(range(6)))
    assert r.n_triangles == 12
    assert r.areas.sum() == pytest.approx(3.0)


def test_uniform_refinement():
    m = refine_uniform(build_reference_mesh("unit_square"))
    assert (m.n_vertices, m.n_triangles) == (9, 8)
    assert shape_regularity(m) == pytest.approx(np.pi / 4)
    assert refine_uniform(m, 2).n_triangles == 8 * 16


def test_entities():
    m = build_reference_mesh("unit_square")
    e = entities(m, "edge")
    assert len(e) == 5
    assert sorted(e.multiplicity.tolist()) == [1, 1, 1, 1, 2]
    v = entities(m, "vertex")
    assert len(v) == 4 and set(v.multiplicity.tolist()) == {1, 2}
    one = make_mesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]])
    t = entities(one, "triangle")
    assert len(t) == 1 and t.multiplicity.tolist() == [1]
    with pytest.raises(ValueError):
        entities(m, "face")


def test_patch():
    m = build_reference_mesh("unit_square")
    assert patch(m, 0) == {0, 1}
    one = make_mesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]])
    assert patch(one, 0) == {0}
    r = refine_uniform(m)
    corner = int(np.flatnonzero([np.any(np.all(r.vertices[t] == [0, 0], axis=1)) for t in r.triangles])[0])
    nb = {k for k in range(r.n_triangles) if set(r.triangles[k]) & set(r.triangles[corner])}
    assert patch(r, corner) == nb


def test_shape_regularity():
    m = build_reference_mesh("unit_square")
    assert shape_regularity(m) == pytest.approx(np.pi / 4)
    assert shape_regularity(refine_uniform(m, 5)) >= np.pi / 8 - 1e-12


def test_degenerate_rejected():
    with pytest.raises(ValueError):
        make_mesh([[0, 0], [1, 0], [2, 0]], [[0, 1, 2]])
    with pytest.raises(ValueError):
        make_mesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 3]])


def test_clockwise_triangles_are_flipped():
    m = make_mesh([[0, 0], [1, 0], [0, 1]], [[0, 2, 1]])
    assert m.areas[0] == pytest.approx(0.5)


def test_locate_matches_point_in_triangle_oracle():
    rng = np.random.default_rng(5)
    m = refine_nvb(refine_uniform(build_reference_mesh("l_shape")), {0, 3, 7})
    x = rng.uniform(-1, 1, size=(500, 2))
    x = x[~((x[:, 0] > 0) & (x[:, 1] < 0))]
    k = m.locate(x)
    for K in range(m.n_triangles):
        sel = k == K
        assert np.all(brute_contains(m, K, x[sel]))


def test_ownership_is_a_partition():
    rng = np.random.default_rng(2)
    m = refine_uniform(build_reference_mesh("unit_square"))
    # interior edges and vertices are shared by several closed triangles
    x = np.vstack([rng.uniform(0, 1, size=(200, 2)), m.vertices, m.vertices[m.edges].mean(axis=1)])
    x = x[np.all((x > 0) & (x < 1), axis=1)]
    owners = np.array([m.owns(K, x) for K in range(m.n_triangles)])
    assert np.all(owners.sum(axis=0) == 1)


def test_json_roundtrip(tmp_path):
    m = refine_nvb(build_reference_mesh("spacetime_rect", 2.0), {1})
    write_json(m, tmp_path / "m.json")
    r = read_json(tmp_path / "m.json")
    assert np.array_equal(r.triangles, m.triangles)
    assert np.array_equal(r.refinement_edge, m.refinement_edge)
    assert r.boundary == m.boundary
    data = json.loads((tmp_path / "m.json").read_text())
    assert set(data) >= {"vertices", "triangles", "boundary"}


def test_read_triangle_format(tmp_path):
    (tmp_path / "m.node").write_text("# unit square\n4 2 0 1\n1 0 0 1\n2 1 0 1\n3 1 1 1\n4 0 1 1\n")
    (tmp_path / "m.ele").write_text("2 3 0\n1 1 2 3\n2 1 3 4\n")
    m = read_triangle(tmp_path / "m.node")
    assert (m.n_vertices, m.n_triangles) == (4, 2)
    assert m.areas.sum() == pytest.approx(1.0)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), steps=st.integers(1, 6), domain=st.sampled_from(["unit_square", "l_shape"]))
def test_random_refinement_stays_conforming(seed, steps, domain):
    rng = np.random.default_rng(seed)
    m = build_reference_mesh(domain)
    area = m.areas.sum()
    for _ in range(steps):
        marked = set(np.flatnonzero(rng.random(m.n_triangles) < 0.3).tolist())
        m = refine_nvb(m, marked)
    assert m.is_conforming()
    assert m.areas.sum() == pytest.approx(area)
    assert np.all(m.areas > 0)
    assert shape_regularity(m) >= np.pi / 8 - 1e-12
    # boundary labels survive bisection: boundary length is preserved
    b = m.edges[m.boundary_edges]
    assert np.linalg.norm(m.vertices[b[:, 1]] - m.vertices[b[:, 0]], axis=1).sum() == pytest.approx(
        4.0 if domain == "unit_square" else 8.0)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_marked_triangles_are_refined(seed):
    rng = np.random.default_rng(seed)
    m = refine_uniform(build_reference_mesh("unit_square"))
    marked = set(rng.choice(m.n_triangles, size=3, replace=False).tolist())
    r = refine_nvb(m, marked)
    for K in marked:
        centroid = m.vertices[m.triangles[K]].mean(axis=0, keepdims=True)
        child = r.locate(centroid)[0]
        assert r.areas[child] <= m.areas[K] / 2 + 1e-15
