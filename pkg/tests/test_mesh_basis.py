import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from tensor_ritz.mesh_basis import (
    SymTridiag,
    build_mesh,
    gauss_rule,
    interpolate,
    load_vector,
    load_vector_deriv,
    mass_matrix,
    stiffness_matrix,
)

from conftest import hat, hat_deriv


def element_quadrature(mesh, f, order=8):
    """Composite Gauss quadrature written out independently of the package."""
    xi, wi = np.polynomial.legendre.leggauss(order)
    total = 0.0
    for e in range(mesh.n_elems):
        lo = mesh.a + e * mesh.h
        x = lo + 0.5 * mesh.h * (xi + 1)
        total += 0.5 * mesh.h * np.dot(wi, f(x))
    return total


def support_quad(mesh, j, f):
    """Adaptive quadrature of ``f`` over the (one or two) elements supporting node j."""
    elems = [e for e in (j - 1, j) if 0 <= e < mesh.n_elems]
    return sum(integrate.quad(f, mesh.nodes[e], mesh.nodes[e + 1], epsabs=1e-15, epsrel=1e-13)[0]
               for e in elems)


# ---------------------------------------------------------------------------
# build_mesh


def test_build_mesh_fields():
    m = build_mesh(0, 1, 2)
    assert m.h == 0.5
    assert m.n_nodes == 3
    np.testing.assert_array_equal(m.nodes, [0.0, 0.5, 1.0])


def test_build_mesh_finest_study_size():
    assert build_mesh(0, 1, 1024).h == 1 / 1024


@pytest.mark.parametrize("args", [(0, 1, 0), (0, 1, -3), (1, 1, 4), (2, 1, 4), (0, 1, 2.5)])
def test_build_mesh_rejects(args):
    with pytest.raises(ValueError):
        build_mesh(*args)


# ---------------------------------------------------------------------------
# Gram matrices


def test_mass_matrix_two_elements():
    M = mass_matrix(build_mesh(0, 1, 2))
    np.testing.assert_allclose(M.diag, [1 / 6, 1 / 3, 1 / 6], rtol=0, atol=1e-16)
    np.testing.assert_allclose(M.off, [1 / 12, 1 / 12], rtol=0, atol=1e-16)


def test_stiffness_matrix_two_elements():
    A = stiffness_matrix(build_mesh(0, 1, 2))
    np.testing.assert_allclose(A.diag, [2, 4, 2], rtol=0, atol=1e-15)
    np.testing.assert_allclose(A.off, [-2, -2], rtol=0, atol=1e-15)


def test_mass_matrix_matches_quadrature_oracle():
    mesh = build_mesh(0, 1, 4)
    M = mass_matrix(mesh).to_dense()
    ref = np.array([[element_quadrature(mesh, lambda x: hat(mesh, j)(x) * hat(mesh, n)(x))
                     for n in range(mesh.n_nodes)] for j in range(mesh.n_nodes)])
    np.testing.assert_allclose(M, ref, rtol=0, atol=1e-14)


def test_stiffness_matrix_matches_quadrature_oracle():
    mesh = build_mesh(0, 1, 3)
    A = stiffness_matrix(mesh).to_dense()
    # derivatives jump at nodes, which Gauss points never hit
    ref = np.array([[element_quadrature(mesh, lambda x: hat_deriv(mesh, j)(x) * hat_deriv(mesh, n)(x))
                     for n in range(mesh.n_nodes)] for j in range(mesh.n_nodes)])
    np.testing.assert_allclose(A, ref, rtol=0, atol=1e-14)


@settings(max_examples=50, deadline=None)
@given(a=st.floats(-5, 5), length=st.floats(0.1, 10), n=st.integers(1, 300))
def test_mass_partition_of_unity(a, length, n):
    mesh = build_mesh(a, a + length, n)
    M = mass_matrix(mesh)
    total = M.diag.sum() + 2 * M.off.sum()
    assert total == pytest.approx(mesh.b - mesh.a, rel=0, abs=1e-14 * max(1, length) * 10)


@settings(max_examples=50, deadline=None)
@given(n=st.integers(1, 500), length=st.floats(0.1, 10))
def test_stiffness_null_space(n, length):
    A = stiffness_matrix(build_mesh(0, length, n))
    np.testing.assert_allclose(A.matvec(np.ones(n + 1)), 0.0, atol=1e-14 * n / length * 10)


def test_mass_matrix_positive_definite():
    rng = np.random.default_rng(0)
    M = mass_matrix(build_mesh(0, 1, 17))
    for _ in range(100):
        v = rng.standard_normal(18)
        assert v @ M.matvec(v) > 0


def test_symtridiag_matvec_matches_dense():
    rng = np.random.default_rng(1)
    T = SymTridiag(rng.standard_normal(6), rng.standard_normal(5))
    X = rng.standard_normal((3, 6))
    np.testing.assert_allclose(T.matvec(X), X @ T.to_dense(), atol=1e-14)
    with pytest.raises(ValueError):
        T.matvec(np.ones(5))


# ---------------------------------------------------------------------------
# Gauss rules


def test_gauss_order_one_is_midpoint():
    r = gauss_rule(1)
    np.testing.assert_array_equal(r.nodes, [0.0])
    np.testing.assert_array_equal(r.weights, [2.0])


def test_gauss_order_two_exactness():
    r = gauss_rule(2)
    assert np.dot(r.weights, r.nodes ** 3) == pytest.approx(0.0, abs=1e-16)
    assert np.dot(r.weights, r.nodes ** 2) == pytest.approx(2 / 3, abs=1e-15)


def test_gauss_order_eight_cosine_single_element():
    r = gauss_rule(8)
    x = 0.5 * (r.nodes + 1)
    assert 0.5 * np.dot(r.weights, np.cos(np.pi * x)) == pytest.approx(0.0, abs=1e-14)


@pytest.mark.parametrize("order", range(1, 17))
def test_gauss_weights_and_degree(order):
    r = gauss_rule(order)
    assert r.weights.sum() == pytest.approx(2.0, abs=1e-14)
    deg = 2 * order - 1
    exact = 0.0 if deg % 2 else 2.0 / (deg + 1)
    assert np.dot(r.weights, r.nodes ** deg) == pytest.approx(exact, abs=1e-13)


@pytest.mark.parametrize("order", [0, 17, -1, 2.5])
def test_gauss_rule_rejects(order):
    with pytest.raises(ValueError):
        gauss_rule(order)


# ---------------------------------------------------------------------------
# load vectors


def test_load_vector_of_one():
    mesh = build_mesh(0, 2, 8)
    b = load_vector(mesh, lambda x: np.ones_like(x))
    assert b.sum() == pytest.approx(2.0, abs=1e-14)
    assert b[0] == pytest.approx(mesh.h / 2) and b[-1] == pytest.approx(mesh.h / 2)
    np.testing.assert_allclose(b[1:-1], mesh.h, rtol=1e-14)


def test_load_vector_cosine_matches_adaptive_quadrature():
    mesh = build_mesh(0, 1, 4)
    b = load_vector(mesh, lambda x: np.cos(np.pi * x), gauss_rule(8))
    ref = [support_quad(mesh, j, lambda x: hat(mesh, j)(x) * np.cos(np.pi * x)) for j in range(mesh.n_nodes)]
    np.testing.assert_allclose(b, ref, rtol=0, atol=1e-12)
    # closed form: cos(pi x_j) * 2 (1 - cos(pi h)) / (pi^2 h), halved at the ends
    closed = np.cos(np.pi * mesh.nodes) * 2 * (1 - np.cos(np.pi * mesh.h)) / (np.pi ** 2 * mesh.h)
    closed[[0, -1]] /= 2
    np.testing.assert_allclose(b, closed, rtol=0, atol=1e-14)


def test_load_vector_of_hat_reproduces_mass_column():
    mesh = build_mesh(0, 1, 6)
    M = mass_matrix(mesh).to_dense()
    for n in range(mesh.n_nodes):
        np.testing.assert_allclose(load_vector(mesh, hat(mesh, n)), M[:, n], rtol=0, atol=1e-14)


@settings(max_examples=30, deadline=None)
@given(coeffs=st.lists(st.floats(-3, 3), min_size=4, max_size=4), n=st.integers(1, 12),
       order=st.integers(3, 8))
def test_load_vector_exact_for_cubics(coeffs, n, order):
    mesh = build_mesh(0, 1, n)
    poly = np.polynomial.Polynomial(coeffs)
    b = load_vector(mesh, poly, gauss_rule(order))
    # hat times cubic is a quartic on each element: 3-point Gauss is exact there
    ref = [element_quadrature(mesh, lambda x: hat(mesh, j)(x) * poly(x), order=5) for j in range(mesh.n_nodes)]
    np.testing.assert_allclose(b, ref, rtol=0, atol=1e-13)


def test_load_vector_deriv_zero_and_one():
    mesh = build_mesh(0, 1, 5)
    np.testing.assert_array_equal(load_vector_deriv(mesh, lambda x: np.zeros_like(x)), np.zeros(6))
    expected = np.zeros(6)
    expected[[0, -1]] = [-1, 1]
    np.testing.assert_allclose(load_vector_deriv(mesh, lambda x: np.ones_like(x)), expected, atol=1e-14)


def test_load_vector_deriv_sine_matches_quadrature():
    mesh = build_mesh(0, 1, 8)
    gp = lambda x: -np.pi * np.sin(np.pi * x)
    b = load_vector_deriv(mesh, gp)
    ref = [support_quad(mesh, j, lambda x: hat_deriv(mesh, j)(x) * gp(x)) for j in range(mesh.n_nodes)]
    np.testing.assert_allclose(b, ref, rtol=0, atol=1e-12)


# ---------------------------------------------------------------------------
# interpolation


def test_interpolate_examples():
    m2 = build_mesh(0, 1, 2)
    np.testing.assert_array_equal(interpolate(build_mesh(0, 1, 7), lambda x: 1.0), np.ones(8))
    np.testing.assert_array_equal(interpolate(m2, lambda x: x), [0, 0.5, 1])
    np.testing.assert_allclose(interpolate(m2, lambda x: np.cos(np.pi * x)), [1, 0, -1], atol=1e-16)
