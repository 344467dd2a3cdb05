import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import cvt, rnd
from vembddc.mesh import (
    MeshError,
    MeshFormatError,
    PolyMesh,
    cell_geometry,
    generate_cvt,
    generate_random_voronoi,
    polygon_geometry,
    polygon_quadrature,
    polygon_rule,
    read_mesh,
    unit_square_grid,
    validate_mesh,
    write_mesh,
)


def _check_invariants(mesh):
    areas = mesh.cell_areas()
    assert np.all(areas > 0)
    assert abs(areas.sum() - 1.0) <= 1e-12
    counts = (mesh.edge_cells >= 0).sum(axis=1)
    assert np.all(counts[mesh.boundary_edge] == 1)
    assert np.all(counts[~mesh.boundary_edge] == 2)
    for c, loop in enumerate(mesh.cells):
        for k, e in enumerate(mesh.cell_edges[c]):
            a, b = sorted((int(loop[k]), int(loop[(k + 1) % len(loop)])))
            assert tuple(mesh.edges[e]) == (a, b)


def test_single_cell_is_unit_square():
    for mesh in (generate_random_voronoi(1, 5), generate_cvt(1, 5)):
        assert mesh.n_cells == 1
        assert mesh.cell_areas()[0] == pytest.approx(1.0, abs=1e-14)


def test_random_voronoi_tessellates_and_is_deterministic():
    a = generate_random_voronoi(100, 42)
    b = generate_random_voronoi(100, 42)
    assert a.n_cells == 100
    _check_invariants(a)
    assert a.digest() == b.digest()
    assert np.array_equal(a.vertices, b.vertices)


@settings(max_examples=8, deadline=None)
@given(n=st.integers(2, 60), seed=st.integers(0, 10_000))
def test_generators_tessellate_for_any_seed(n, seed):
    _check_invariants(generate_random_voronoi(n, seed))


def test_cvt_four_cells_converges_to_square_grid():
    eps = 0.03
    init = np.array([[0.25 + eps, 0.25 - eps], [0.75 - eps, 0.25 + eps],
                     [0.25 - eps, 0.75 - eps], [0.75 + eps, 0.75 + eps]])
    mesh = generate_cvt(4, 0, lloyd_tol=1e-10, max_lloyd_iters=500, init_seeds=init)
    cen = mesh.cell_centroids()
    want = np.array([[0.25, 0.25], [0.75, 0.25], [0.25, 0.75], [0.75, 0.75]])
    for w in want:
        assert np.min(np.linalg.norm(cen - w, axis=1)) < 1e-6


def test_cvt_stopping_rule_and_invariants():
    mesh = generate_cvt(50, 3, lloyd_tol=1e-4, max_lloyd_iters=500)
    _check_invariants(mesh)
    assert mesh.meta["lloyd_displacement"] < 1e-4 or mesh.meta["lloyd_iters"] == 500


def test_cell_geometry_analytic():
    g = cell_geometry(unit_square_grid(1), 0)
    assert g.area == pytest.approx(1.0)
    assert np.allclose(g.centroid, [0.5, 0.5])
    assert g.diameter == pytest.approx(np.sqrt(2))
    tri = polygon_geometry(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]))
    assert tri.area == pytest.approx(0.5)
    assert np.allclose(tri.centroid, [1 / 3, 1 / 3])
    t = np.arange(6) * np.pi / 3
    hexagon = polygon_geometry(np.column_stack([np.cos(t), np.sin(t)]))
    assert abs(hexagon.area - 3 * np.sqrt(3) / 2) < 1e-12
    assert hexagon.diameter >= hexagon.edge_lengths.max()


def test_quadrature_unit_square():
    mesh = unit_square_grid(1)
    rule = polygon_quadrature(mesh, 0, 6)
    assert sum(w for _, w in rule) == pytest.approx(1.0, abs=1e-14)
    assert abs(sum(w * p[0] * p[1] for p, w in rule) - 0.25) < 1e-13


def _green_x4(xy):
    """Oracle: int x^4 dA = closed line integral of x^5/5 dy (exact per edge by Gauss-Legendre)."""
    g, w = np.polynomial.legendre.leggauss(4)
    t, w = 0.5 * (g + 1), 0.5 * w
    total = 0.0
    for a, b in zip(xy, np.roll(xy, -1, axis=0)):
        x = a[0] + t * (b[0] - a[0])
        total += (w @ x ** 5) / 5 * (b[1] - a[1])
    return total


def test_quadrature_pentagon_matches_line_integral_oracle():
    t = np.arange(5) * 2 * np.pi / 5
    xy = 0.5 + 0.3 * np.column_stack([np.cos(t), np.sin(t)])
    pts, w = polygon_rule(xy, 6)
    assert abs(w @ pts[:, 0] ** 4 - _green_x4(xy)) < 1e-10
    # and exactness for all monomials up to degree 6 on the unit square
    sq = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    pts, w = polygon_rule(sq, 6)
    for a in range(7):
        for b in range(7 - a):
            assert abs(w @ (pts[:, 0] ** a * pts[:, 1] ** b) - 1 / ((a + 1) * (b + 1))) < 1e-12


def test_quadrature_rejects_non_star_shaped_cell():
    # arrow-shaped polygon whose centroid sees an edge from behind
    xy = np.array([[0, 0], [1, 0], [1, 1], [0.9, 1], [0.9, 0.1], [0.1, 0.1], [0.1, 1], [0, 1]], float)
    with pytest.raises(MeshError):
        polygon_rule(xy, 6)


def test_validate_mesh():
    assert validate_mesh(unit_square_grid(1), 0.1, 0.1).ok
    xy = np.array([[0, 0], [1, 0], [1, 1], [1e-9, 1], [0, 1]], float)
    bad = PolyMesh(xy, [[0, 1, 2, 3, 4]])
    assert validate_mesh(bad, 0.01, 0.01).offending_cells == [0]
    mesh = cvt(256)
    before = mesh.digest()
    assert validate_mesh(mesh, 0.01, 0.01).ok
    assert mesh.digest() == before


def test_mesh_file_round_trip(tmp_path):
    for mesh in (unit_square_grid(1), cvt(100)):
        path = tmp_path / "m.msh"
        write_mesh(mesh, path)
        back = read_mesh(path)
        assert back.structurally_equal(mesh)
        assert np.array_equal(back.vertices, mesh.vertices)


def test_mesh_file_errors(tmp_path):
    path = tmp_path / "bad.msh"
    path.write_text("polymesh 1\nvertex 0 0 0\nvertex 1 1 0\nvertex 2 0 1\ncell 0 0 1 7\n")
    with pytest.raises(MeshFormatError, match="missing vertex"):
        read_mesh(path)
    path.write_text("polymesh 1\nvertex 0 zero 0\n")
    with pytest.raises(MeshFormatError, match=":2:"):
        read_mesh(path)
    path.write_text("mesh 2\n")
    with pytest.raises(MeshFormatError):
        read_mesh(path)


def test_rnd_meshes_differ_by_seed():
    assert rnd(64, 1).digest() != rnd(64, 2).digest()
