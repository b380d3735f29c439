import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ifenn.errors import InvalidArgumentError, NotFoundError
from ifenn.mesh import (
    annulus_mesh,
    boundary_nodes,
    build_structured_grid,
    interpolation_matrix,
    select_sensor_grid,
    sensor_matrix,
)
from ifenn.fem.element import cell_quadrature


def test_cube_counts():
    m = build_structured_grid(3, [10, 10, 10], [1, 1, 1])
    assert m.n_nodes == 1331
    assert m.n_cells == 1000


def test_single_cell():
    m = build_structured_grid(2, [1, 1], [1, 1])
    assert (m.n_nodes, m.n_cells) == (4, 1)


def test_lexicographic_order():
    m = build_structured_grid(2, [2, 3], [2, 3])
    assert (m.n_nodes, m.n_cells) == (12, 6)
    np.testing.assert_allclose(m.nodes[0], [0, 0])
    np.testing.assert_allclose(m.nodes[-1], [2, 3])
    # x runs fastest
    np.testing.assert_allclose(m.nodes[1], [1, 0])
    np.testing.assert_allclose(m.nodes[3], [0, 1])


@pytest.mark.parametrize("div,ext", [([0, 1], [1, 1]), ([1, 1], [1, -1]), ([1], [1])])
def test_bad_grid(div, ext):
    with pytest.raises(InvalidArgumentError):
        build_structured_grid(2, div, ext)


def test_bad_dim():
    with pytest.raises(InvalidArgumentError):
        build_structured_grid(4, [1] * 4, [1] * 4)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 3), st.lists(st.integers(1, 4), min_size=3, max_size=3),
       st.lists(st.floats(0.1, 5.0), min_size=3, max_size=3))
def test_counts_and_boundary_cover(dim, div, ext):
    m = build_structured_grid(dim, div[:dim], ext[:dim])
    assert m.n_nodes == np.prod([d + 1 for d in div[:dim]])
    assert m.n_cells == np.prod(div[:dim])
    assert m.cells.min() >= 0 and m.cells.max() < m.n_nodes
    assert np.all(cell_quadrature(m).wdet > 0)

    # every exterior face is tagged exactly once: count faces by brute force
    faces = {}
    lf = [(0, 1), (1, 2), (2, 3), (3, 0)] if dim == 2 else \
         [(0, 1, 2, 3), (4, 5, 6, 7), (0, 1, 5, 4), (1, 2, 6, 5), (2, 3, 7, 6), (3, 0, 4, 7)]
    for c in m.cells:
        for f in lf:
            key = tuple(sorted(int(c[i]) for i in f))
            faces[key] = faces.get(key, 0) + 1
    exterior = {k for k, v in faces.items() if v == 1}
    tagged = [tuple(sorted(int(i) for i in f)) for p in m.boundary.values() for f in p.faces]
    assert len(tagged) == len(set(tagged))
    assert set(tagged) == exterior

    # boundary nodes are exactly those on the box surface
    on_surface = np.any(np.isclose(m.nodes, 0) | np.isclose(m.nodes, np.array(ext[:dim])), axis=1)
    union = np.unique(np.concatenate([boundary_nodes(m, t) for t in m.tags]))
    np.testing.assert_array_equal(union, np.flatnonzero(on_surface))


def test_boundary_nodes_examples():
    m = build_structured_grid(2, [2, 2], [1, 1])
    left = boundary_nodes(m, "left")
    assert len(left) == 3 and np.all(m.nodes[left, 0] == 0)
    assert len(boundary_nodes(build_structured_grid(2, [1, 1], [1, 1]), "top")) == 2
    cube = build_structured_grid(3, [10, 10, 10], [1, 1, 1])
    assert len(boundary_nodes(cube, "left")) == 121


def test_unknown_tag():
    m = build_structured_grid(2, [2, 2], [1, 1])
    with pytest.raises(NotFoundError):
        boundary_nodes(m, "nowhere")
    with pytest.raises(NotFoundError):
        select_sensor_grid(m, [2], "nowhere")


def test_sensor_grid_examples():
    cube = build_structured_grid(3, [10, 10, 10], [1, 1, 1])
    assert select_sensor_grid(cube, [8, 8, 8]).count == 512
    sq = build_structured_grid(2, [4, 4], [1, 1])
    g = select_sensor_grid(sq, [3, 3])
    expected = {(a, b) for a in (0, 0.5, 1) for b in (0, 0.5, 1)}
    assert {tuple(np.round(p, 12)) for p in g.locations} == expected
    single = select_sensor_grid(sq, [1], "top")
    np.testing.assert_allclose(single.locations, [[0.5, 1.0]])


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6))
def test_sensor_grid_reflection_symmetry(nx, ny):
    m = build_structured_grid(2, [5, 3], [2.0, 1.0])
    g = select_sensor_grid(m, [nx, ny])
    pts = {tuple(np.round(p, 10)) for p in g.locations}
    mirrored = {tuple(np.round([2.0 - p[0], p[1]], 10)) for p in g.locations}
    assert pts == mirrored
    assert np.all(g.locations >= -1e-12) and np.all(g.locations <= np.array([2.0, 1.0]) + 1e-12)


def test_interpolation_reproduces_bilinear_fields():
    m = build_structured_grid(2, [3, 5], [1.5, 2.0])
    f = 2 + 3 * m.nodes[:, 0] - m.nodes[:, 1] + 0.5 * m.nodes[:, 0] * m.nodes[:, 1]
    pts = np.random.default_rng(0).uniform([0, 0], [1.5, 2.0], size=(20, 2))
    P = interpolation_matrix(m, pts)
    exact = 2 + 3 * pts[:, 0] - pts[:, 1] + 0.5 * pts[:, 0] * pts[:, 1]
    np.testing.assert_allclose(P @ f, exact, atol=1e-12)


def test_annulus_tags_and_sensors():
    m = annulus_mesh([4, 12], 1.0, 2.0)
    r = np.linalg.norm(m.nodes, axis=1)
    np.testing.assert_allclose(r[boundary_nodes(m, "inner")], 1.0)
    np.testing.assert_allclose(r[boundary_nodes(m, "outer")], 2.0)
    assert np.all(cell_quadrature(m).wdet > 0)
    g = select_sensor_grid(m, [7], "outer")
    np.testing.assert_allclose(np.linalg.norm(g.locations, axis=1), 2.0)
    # on-node sensors read the nodal value exactly
    vals = sensor_matrix(m, g) @ r
    np.testing.assert_allclose(vals, 2.0)


def test_split_tag():
    m = build_structured_grid(2, [4, 2], [4, 2])
    m2 = m.split_tag("top", "patch", lambda c: c[:, 0] < 2)
    assert set(boundary_nodes(m2, "patch").tolist()) == {10, 11, 12}
    assert "patch" not in m.tags
    with pytest.raises(InvalidArgumentError):
        m.split_tag("top", "patch", lambda c: c[:, 0] < 100)
