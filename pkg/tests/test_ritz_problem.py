import numpy as np
import pytest

from tensor_ritz.als_solver import SolverOptions, solve
from tensor_ritz.cp_function import SeparableFunction, new_cp, scale
from tensor_ritz.dense_oracle import cp_to_dense, dense_energy, dense_galerkin_solve
from tensor_ritz.ritz_problem import (
    BlockQuadraticForm,
    EllipticProblem,
    apply_block_hessian,
    block_quadratic,
    cosine_problem,
    energy,
    full_gradient,
)

from conftest import random_cp, unit_meshes


def test_energy_of_zero(problem3):
    assert energy(problem3, new_cp(unit_meshes(3, 6), 3, "zero")) == 0.0


def test_energy_of_interpolated_exact_solution(problem3):
    u = new_cp(unit_meshes(3, 64), 3, problem3.exact)
    target = -3 * np.pi ** 2 / 2
    assert abs(energy(problem3, u) - target) <= 0.01 * abs(target)


@pytest.mark.parametrize("seed", range(5))
def test_energy_matches_dense(problem2, seed):
    u = random_cp(2, 4, 2, seed=seed)
    ref = dense_energy(problem2, cp_to_dense(u))
    assert energy(problem2, u) == pytest.approx(ref, rel=1e-12)


def test_energy_dimension_mismatch(problem2):
    with pytest.raises(ValueError):
        energy(problem2, random_cp(3, 4, 2, seed=0))


def test_problem_validation(problem2):
    with pytest.raises(ValueError):
        EllipticProblem(3, 1.0, problem2.rhs)
    with pytest.raises(ValueError):
        EllipticProblem(2, -1.0, problem2.rhs)


# ---------------------------------------------------------------------------
# gradient


def fd_gradient(p, u, step=1e-6):
    grads = []
    for m, block in enumerate(u.factors):
        G = np.zeros_like(block)
        for idx in np.ndindex(block.shape):
            plus, minus = block.copy(), block.copy()
            plus[idx] += step
            minus[idx] -= step
            G[idx] = (energy(p, u.with_block(m, plus)) - energy(p, u.with_block(m, minus))) / (2 * step)
        grads.append(G)
    return grads


def test_gradient_at_zero_is_minus_load(problem2):
    u = new_cp(unit_meshes(2, 4), 2, "zero")
    for m, G in enumerate(full_gradient(problem2, u)):
        np.testing.assert_array_equal(G, -block_quadratic(problem2, u, m).g)


def test_gradient_at_zero_in_one_dimension():
    # with d = 1 the load term survives at the origin
    p1 = cosine_problem(1)
    u = new_cp(unit_meshes(1, 6), 1, "zero")
    G, = full_gradient(p1, u)
    np.testing.assert_allclose(G, -block_quadratic(p1, u, 0).g)
    assert np.linalg.norm(G) > 0


@pytest.mark.parametrize("seed", range(10))
def test_gradient_matches_finite_differences(problem2, seed):
    u = random_cp(2, 4, 2, seed=seed)
    G = np.concatenate([g.ravel() for g in full_gradient(problem2, u)])
    ref = np.concatenate([g.ravel() for g in fd_gradient(problem2, u)])
    assert np.linalg.norm(G - ref) / np.linalg.norm(ref) < 1e-6


def test_gradient_vanishes_at_als_fixed_point(problem2):
    u0 = random_cp(2, 4, 3, seed=1)
    u, report = solve(problem2, u0, SolverOptions(seed=1))
    assert report.converged
    e = energy(problem2, u)
    for G in full_gradient(problem2, u):
        assert np.linalg.norm(G) <= 1e-8 * (1 + abs(e))


# ---------------------------------------------------------------------------
# block quadratic


def test_block_quadratic_of_constant_one(problem3):
    u = new_cp(unit_meshes(3, 5), 1, SeparableFunction.constant(3))
    for m in range(3):
        q = block_quadratic(problem3, u, m)
        np.testing.assert_allclose(q.alpha, [[1.0]], atol=1e-14)
        np.testing.assert_allclose(q.beta, [[np.pi ** 2]], atol=1e-12)


def test_block_quadratic_index_check(problem2):
    with pytest.raises(IndexError):
        block_quadratic(problem2, random_cp(2, 4, 2, seed=0), 2)


@pytest.mark.parametrize("seed", range(20))
def test_block_restriction_consistency(seed, problem2, problem3):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(2, 4))
    p = problem2 if d == 2 else problem3
    u = random_cp(d, int(rng.integers(2, 7)), int(rng.integers(1, 4)), seed=rng)
    m = int(rng.integers(d))
    q = block_quadratic(p, u, m)
    X1, X2 = rng.uniform(-1, 1, size=(2,) + u.factors[m].shape)
    de = energy(p, u.with_block(m, X1)) - energy(p, u.with_block(m, X2))
    dq = q.value(X1) - q.value(X2)
    assert dq == pytest.approx(de, rel=1e-12, abs=1e-12 * (1 + abs(energy(p, u))))


def test_block_forms_are_psd(problem3):
    for seed in range(5):
        u = random_cp(3, 6, 4, seed=seed)
        for m in range(3):
            q = block_quadratic(problem3, u, m)
            assert np.linalg.eigvalsh(q.alpha).min() >= -1e-12
            assert np.linalg.eigvalsh(q.beta).min() >= -1e-12


def test_apply_block_hessian_basics(problem2):
    u = random_cp(2, 5, 3, seed=0)
    q = block_quadratic(problem2, u, 1)
    np.testing.assert_array_equal(apply_block_hessian(q, np.zeros(q.shape)), 0.0)
    with pytest.raises(ValueError):
        apply_block_hessian(q, np.zeros((2, 6)))
    rng = np.random.default_rng(0)
    X, Y = rng.standard_normal((2,) + q.shape)
    assert np.vdot(Y, apply_block_hessian(q, X)) == pytest.approx(np.vdot(apply_block_hessian(q, Y), X), rel=1e-12)
    np.testing.assert_allclose(q.dense() @ X.ravel(), apply_block_hessian(q, X).ravel(), rtol=1e-12, atol=1e-12)


def test_apply_block_hessian_reduces_to_stiffness(problem2):
    q0 = block_quadratic(problem2, random_cp(2, 5, 1, seed=0), 0)
    q = BlockQuadraticForm(0, np.ones((1, 1)), np.zeros((1, 1)), q0.g, q0.mass, q0.stiff)
    x = np.random.default_rng(1).standard_normal((1, 6))
    np.testing.assert_allclose(apply_block_hessian(q, x), x @ q0.stiff.to_dense(), atol=1e-13)


# ---------------------------------------------------------------------------
# global structure


def test_quadratic_linear_split(problem3):
    u = random_cp(3, 5, 3, seed=2)
    # E(a) = a^2 Q - a L, fitted from a = 1 and a = 3
    e1, e3 = energy(problem3, u), energy(problem3, scale(u, 3.0))
    Q = (e3 - 3 * e1) / 6
    L = Q - e1
    for a in (-1.0, 0.5, 2.0):
        assert energy(problem3, scale(u, a)) == pytest.approx(a * a * Q - a * L, rel=1e-12)


@pytest.mark.parametrize("n_elems", [2, 3, 5])
def test_energy_bounded_below_by_galerkin_minimum(problem2, n_elems):
    _, e_min = dense_galerkin_solve(problem2, unit_meshes(2, n_elems))
    rng = np.random.default_rng(n_elems)
    for _ in range(20):
        u = random_cp(2, n_elems, int(rng.integers(1, 4)), seed=rng)
        assert energy(problem2, u) >= e_min - 1e-12 * abs(e_min)
