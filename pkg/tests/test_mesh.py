import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vesicle.fem import Elements
from vesicle.mesh import Boundary, build_uniform, dunavant5, integrate, p1_basis, p2_basis


@pytest.mark.parametrize("nx, ny, nv, nt, ne", [(4, 4, 25, 32, 56), (1, 2, 6, 4, 9), (3, 5, 24, 30, 53)])
def test_counts(nx, ny, nv, nt, ne):
    mesh = build_uniform((0.0, 1.0, 0.0, 2.0), nx, ny)
    assert mesh.n_vertices == nv == (nx + 1) * (ny + 1)
    assert mesh.n_triangles == nt == 2 * nx * ny
    assert mesh.n_edges == ne == nx * (ny + 1) + ny * (nx + 1) + nx * ny


def test_p2_dof_count(mesh4):
    assert mesh4.p2.size == 81
    assert mesh4.p1.size == 25


@given(nx=st.integers(1, 9), ny=st.integers(1, 9),
       w=st.floats(0.1, 10.0), h=st.floats(0.1, 10.0))
@settings(max_examples=40, deadline=None)
def test_mesh_invariants(nx, ny, w, h):
    mesh = build_uniform((-1.0, -1.0 + w, 2.0, 2.0 + h), nx, ny)
    areas = mesh.signed_areas
    assert np.all(areas > 0)
    assert np.isclose(areas.sum(), w * h, rtol=1e-13)
    # each edge is shared by one (boundary) or two (interior) triangles
    counts = np.bincount(mesh.tri_edges.ravel(), minlength=mesh.n_edges)
    assert set(np.unique(counts)) <= {1, 2}
    mid = 0.5 * (mesh.vertices[mesh.edges[:, 0]] + mesh.vertices[mesh.edges[:, 1]])
    on_boundary = ((mid[:, 0] == mesh.x0) | (mid[:, 0] == mesh.x1)
                   | (mid[:, 1] == mesh.y0) | (mid[:, 1] == mesh.y1))
    assert np.array_equal(counts == 1, on_boundary)
    for dm in (mesh.p1, mesh.p2):
        assert np.array_equal(np.unique(dm.cell_dofs), np.arange(dm.size))


def test_boundary_tags(mesh4):
    dm = mesh4.p2
    xy = dm.coords
    top = dm.boundary_dofs(Boundary.TOP)
    assert np.all(xy[top, 1] == 4.0)
    left = dm.boundary_dofs(Boundary.LEFT)
    assert np.all(xy[left, 0] == 0.0)
    interior = dm.tags == Boundary.INTERIOR
    inside = (xy[:, 0] > 0) & (xy[:, 0] < 4) & (xy[:, 1] > 0) & (xy[:, 1] < 4)
    assert np.array_equal(interior, inside)
    # 4 sides of 2*4+1 nodes, corners counted once
    assert np.count_nonzero(~interior) == 4 * 9 - 4


@pytest.mark.parametrize("bad", [(0, 3), (3, 0), (-1, 2)])
def test_rejects_bad_counts(bad):
    with pytest.raises(ValueError):
        build_uniform((0.0, 1.0, 0.0, 1.0), *bad)


def test_rejects_degenerate_rectangle():
    with pytest.raises(ValueError):
        build_uniform((0.0, 0.0, 0.0, 1.0), 2, 2)


def test_integrate_examples():
    quad = dunavant5()
    big = build_uniform((0.0, 4.0, 0.0, 4.0), 4, 4)
    unit = build_uniform((0.0, 1.0, 0.0, 1.0), 3, 3)
    assert integrate(big, quad, lambda x, y: np.ones_like(x)) == pytest.approx(16.0, abs=1e-13)
    assert integrate(unit, quad, lambda x, y: x * y) == pytest.approx(0.25, abs=1e-14)
    assert integrate(unit, quad, lambda x, y: x ** 5) == pytest.approx(1.0 / 6.0, abs=1e-14)


def _reference_moment(p, q):
    # int over the reference triangle of x^p y^q = p! q! / (p + q + 2)!
    from math import factorial
    return factorial(p) * factorial(q) / factorial(p + q + 2)


def test_quadrature_exact_to_degree_5():
    quad = dunavant5()
    assert quad.weights.sum() == pytest.approx(0.5, abs=1e-15)
    x, y = quad.xi[:, 0], quad.xi[:, 1]
    for p in range(6):
        for q in range(6 - p):
            assert np.dot(quad.weights, x ** p * y ** q) == pytest.approx(_reference_moment(p, q), abs=1e-15)
    # degree 6 is not exact: the rule is exactly degree 5
    assert abs(np.dot(quad.weights, x ** 6) - _reference_moment(6, 0)) > 1e-8


def test_partition_of_unity_and_gradients():
    xi = dunavant5().xi
    for basis in (p1_basis, p2_basis):
        val, grad = basis(xi)
        assert np.allclose(val.sum(axis=1), 1.0, atol=1e-13)
        assert np.allclose(grad.sum(axis=1), 0.0, atol=1e-13)


def test_p2_nodal_property():
    nodes = np.array([[0, 0], [1, 0], [0, 1], [0.5, 0], [0.5, 0.5], [0, 0.5]], dtype=float)
    val, _ = p2_basis(nodes)
    assert np.allclose(val, np.eye(6), atol=1e-15)


def test_refinement_convergence_of_smooth_integral():
    exact = (1 - np.cos(4.0)) * np.sin(4.0)  # int_0^4 sin x dx * int_0^4 cos y dy
    # one-point midpoint rule makes the mesh-dependent error visible
    from vesicle.mesh import QuadratureRule
    mid = QuadratureRule(np.array([[1 / 3, 1 / 3, 1 / 3]]), np.array([0.5]), 1)
    errs = []
    for n in (8, 16, 32):
        mesh = build_uniform((0.0, 4.0, 0.0, 4.0), n, n)
        errs.append(abs(integrate(mesh, mid, lambda x, y: np.sin(x) * np.cos(y)) - exact))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates >= 1.9)


def test_element_tables_match_area(mesh16):
    el = Elements(mesh16)
    assert el.integral(np.ones_like(el.wdet)) == pytest.approx(16.0, abs=1e-12)
    # mass matrix rows sum to the load vector of 1
    M = el.mass()
    assert np.allclose(M.sum(axis=2), (el.wdet @ el.N2), atol=1e-15)
