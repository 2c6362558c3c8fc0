"""Brute-force full-tensor reference computations for tiny instances.

Everything here works on the explicit order-d coefficient array, whose size
grows like N**d, so hard size guards are enforced. 1D integrals are computed
from pointwise basis evaluation at Gauss points rather than from the closed-form
tridiagonal matrices, so these routines check the CP code along an
independent path. Used by the tests and the acceptance suite only.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from .cp_function import CPFunction, SeparableFunction
from .mesh_basis import GaussRule, Mesh1D, basis_matrix, gauss_rule, quadrature_points

MAX_DENSE_SIZE = 10 ** 6
MAX_SOLVE_SIZE = 4096
MAX_QUAD_POINTS = 10 ** 7


class OracleSizeError(ValueError):
    pass


def _guard(n: int, limit: int, what: str):
    if n > limit:
        raise OracleSizeError(f"{what} has {n} entries, above the oracle limit {limit}")


@dataclass(frozen=True)
class DenseTensorFunction:
    """Tensor-product FE function with an explicit coefficient array (dimension 0 slowest)."""

    meshes: tuple[Mesh1D, ...]
    coeffs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "meshes", tuple(self.meshes))
        coeffs = np.asarray(self.coeffs, dtype=float)
        if coeffs.shape != tuple(m.n_nodes for m in self.meshes):
            raise ValueError("coefficient array does not match the meshes")
        _guard(coeffs.size, MAX_DENSE_SIZE, "dense coefficient array")
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def dim(self) -> int:
        return len(self.meshes)

    def __call__(self, x) -> np.ndarray:
        """Point values, by summing ``coeffs[J] * prod_i phi_{j_i}(x_i)`` over all J."""
        pts = np.atleast_2d(np.asarray(x, dtype=float))
        vals = np.tensordot(basis_matrix(self.meshes[0], pts[:, 0]), self.coeffs, axes=([1], [0]))
        for i in range(1, self.dim):
            vals = np.einsum("pj...,pj->p...", vals, basis_matrix(self.meshes[i], pts[:, i]))
        return vals


def _mode_product(T: np.ndarray, mats: Sequence[np.ndarray]) -> np.ndarray:
    """Apply ``mats[i]`` (shape (n_out, N_i)) along every axis ``i`` of ``T``."""
    for i, A in enumerate(mats):
        T = np.moveaxis(np.tensordot(A, T, axes=([1], [i])), 0, i)
    return T


def cp_to_dense(u: CPFunction) -> DenseTensorFunction:
    _guard(int(np.prod([m.n_nodes for m in u.meshes], dtype=float)), MAX_DENSE_SIZE, "dense coefficient array")
    out = u.factors[0]
    for block in u.factors[1:]:
        out = out[..., None] * block.reshape((block.shape[0],) + (1,) * (out.ndim - 1) + (block.shape[1],))
    return DenseTensorFunction(u.meshes, out.sum(axis=0))


# ---------------------------------------------------------------------------
# 1D ingredients by quadrature
# ---------------------------------------------------------------------------


def _quad_1d(mesh: Mesh1D, rule: GaussRule):
    x, w = quadrature_points(mesh, rule)
    return x.ravel(), w.ravel()


def dense_gram_1d(mesh: Mesh1D, rule: GaussRule | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Dense mass and stiffness matrices from Gauss quadrature of basis products."""
    x, w = _quad_1d(mesh, rule or gauss_rule())
    B = basis_matrix(mesh, x)
    D = basis_matrix(mesh, x, deriv=True)
    return (B.T * w) @ B, (D.T * w) @ D


def dense_load_1d(mesh: Mesh1D, g: Callable, rule: GaussRule | None = None, deriv: bool = False) -> np.ndarray:
    x, w = _quad_1d(mesh, rule or gauss_rule())
    B = basis_matrix(mesh, x, deriv=deriv)
    return B.T @ (w * np.asarray(g(x), dtype=float) * np.ones_like(x))


def _dense_load(p_rhs: SeparableFunction, meshes, rule) -> np.ndarray:
    total = 0.0
    for w, row in zip(p_rhs.weights, p_rhs.terms):
        term = np.array(w)
        for mesh, f in zip(meshes, row):
            term = np.multiply.outer(term, dense_load_1d(mesh, f.fn, rule))
        total = total + term
    return total


def _apply_operator(coeffs: np.ndarray, masses, stiffs, reaction: float) -> np.ndarray:
    d = len(masses)
    out = reaction * _mode_product(coeffs, masses)
    for m in range(d):
        mats = [stiffs[i] if i == m else masses[i] for i in range(d)]
        out = out + _mode_product(coeffs, mats)
    return out


# ---------------------------------------------------------------------------
# energies and solves
# ---------------------------------------------------------------------------


def dense_energy(p, w: DenseTensorFunction, rule: GaussRule | None = None) -> float:
    """Ritz energy of a full-tensor function, with no use of CP structure."""
    if p.dim != w.dim:
        raise ValueError("dimension mismatch")
    rule = rule or gauss_rule()
    grams = [dense_gram_1d(m, rule) for m in w.meshes]
    masses = [g[0] for g in grams]
    stiffs = [g[1] for g in grams]
    Kc = _apply_operator(w.coeffs, masses, stiffs, p.reaction)
    b = _dense_load(p.rhs, w.meshes, rule)
    return float(0.5 * np.vdot(w.coeffs, Kc) - np.vdot(b, w.coeffs))


def assemble_dense_system(p, meshes: Sequence[Mesh1D], rule: GaussRule | None = None):
    """Full Galerkin matrix (Kronecker sum) and load vector, row-major unknown order."""
    rule = rule or gauss_rule()
    n = int(np.prod([m.n_nodes for m in meshes]))
    _guard(n, MAX_SOLVE_SIZE, "dense Galerkin system")
    grams = [dense_gram_1d(m, rule) for m in meshes]
    d = len(meshes)

    def kron_all(mats):
        out = np.ones((1, 1))
        for A in mats:
            out = np.kron(out, A)
        return out

    K = p.reaction * kron_all([g[0] for g in grams])
    for m in range(d):
        K += kron_all([grams[i][1] if i == m else grams[i][0] for i in range(d)])
    return K, _dense_load(p.rhs, meshes, rule).ravel()


def dense_galerkin_solve(p, meshes: Sequence[Mesh1D], rule: GaussRule | None = None) -> tuple[DenseTensorFunction, float]:
    """Minimizer of the energy over the whole tensor-product space, and its energy."""
    meshes = tuple(meshes)
    if len(meshes) != p.dim:
        raise ValueError("dimension mismatch")
    K, b = assemble_dense_system(p, meshes, rule)
    x = scipy.linalg.cho_solve(scipy.linalg.cho_factor(K), b)
    w = DenseTensorFunction(meshes, x.reshape([m.n_nodes for m in meshes]))
    return w, dense_energy(p, w, rule)


# ---------------------------------------------------------------------------
# tensorized quadrature
# ---------------------------------------------------------------------------


def tensor_grid(meshes: Sequence[Mesh1D], rule: GaussRule | None = None):
    """Per-dimension composite Gauss points and weights."""
    rule = rule or gauss_rule()
    pts = [_quad_1d(m, rule) for m in meshes]
    total = int(np.prod([len(x) for x, _ in pts], dtype=float))
    _guard(total, MAX_QUAD_POINTS, "tensor quadrature grid")
    return [x for x, _ in pts], [w for _, w in pts]


def _grid_weights(ws) -> np.ndarray:
    W = np.array(1.0)
    for w in ws:
        W = np.multiply.outer(W, w)
    return W


def tensorized_integral(G, meshes: Sequence[Mesh1D], rule: GaussRule | None = None) -> float:
    """Full tensor-product Gauss quadrature of ``G`` over the box spanned by ``meshes``.

    ``G`` is called with an (n, d) array of points and must return n values;
    a SeparableFunction works as is.
    """
    xs, ws = tensor_grid(meshes, rule)
    grid = np.stack(np.meshgrid(*xs, indexing="ij"), axis=-1).reshape(-1, len(xs))
    vals = np.asarray(G(grid), dtype=float).reshape([len(x) for x in xs])
    return float((vals * _grid_weights(ws)).sum())


def _grid_values(w: DenseTensorFunction, xs, deriv_axis: int | None = None) -> np.ndarray:
    mats = [basis_matrix(m, x, deriv=(i == deriv_axis)) for i, (m, x) in enumerate(zip(w.meshes, xs))]
    return _mode_product(w.coeffs, mats)


def dense_inner_l2(w1: DenseTensorFunction, w2: DenseTensorFunction, rule: GaussRule | None = None) -> float:
    xs, ws = tensor_grid(w1.meshes, rule)
    return float((_grid_values(w1, xs) * _grid_values(w2, xs) * _grid_weights(ws)).sum())


def dense_inner_h1_semi(w1: DenseTensorFunction, w2: DenseTensorFunction, rule: GaussRule | None = None) -> float:
    xs, ws = tensor_grid(w1.meshes, rule)
    W = _grid_weights(ws)
    return float(sum((_grid_values(w1, xs, m) * _grid_values(w2, xs, m) * W).sum() for m in range(w1.dim)))


def dense_inner_l2_sep(w: DenseTensorFunction, F: SeparableFunction, rule: GaussRule | None = None) -> float:
    xs, ws = tensor_grid(w.meshes, rule)
    grid = np.stack(np.meshgrid(*xs, indexing="ij"), axis=-1).reshape(-1, len(xs))
    Fv = F(grid).reshape([len(x) for x in xs])
    return float((_grid_values(w, xs) * Fv * _grid_weights(ws)).sum())


def dense_inner_h1_semi_sep(w: DenseTensorFunction, F: SeparableFunction, rule: GaussRule | None = None) -> float:
    xs, ws = tensor_grid(w.meshes, rule)
    grid = np.stack(np.meshgrid(*xs, indexing="ij"), axis=-1).reshape(-1, len(xs))
    gradF = F.gradient(grid)
    W = _grid_weights(ws)
    shape = [len(x) for x in xs]
    return float(sum((_grid_values(w, xs, m) * gradF[:, m].reshape(shape) * W).sum() for m in range(w.dim)))
