"""Ritz energy of ``-Laplace(u) + c u = f`` with natural (Neumann) boundary data.

For a CP trial function the energy

    I(u) = 1/2 * int(|grad u|^2 + c u^2) - int(f u)

is a quadratic function of any single coefficient block when the other
blocks are held fixed. :func:`block_quadratic` builds that quadratic in
Kronecker-structured form, which is what the alternating solver minimizes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cp_function import (
    CPFunction,
    Factor,
    SeparableFunction,
    _leave_one_out,
    _product,
    inner_h1_semi,
    inner_l2,
    inner_l2_sep,
)
from .mesh_basis import Mesh1D, SymTridiag


@dataclass(frozen=True)
class EllipticProblem:
    dim: int
    reaction: float
    rhs: SeparableFunction
    exact: SeparableFunction | None = None

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dimension must be at least 1")
        if self.reaction < 0:
            raise ValueError("reaction coefficient must be nonnegative")
        if self.rhs.dim != self.dim:
            raise ValueError("right-hand side has the wrong dimension")
        if self.exact is not None and self.exact.dim != self.dim:
            raise ValueError("exact solution has the wrong dimension")


def cosine_problem(dim: int) -> EllipticProblem:
    """``-Lap u + pi^2 u = 2 pi^2 sum_k cos(pi x_k)`` on the unit cube.

    The exact solution is ``sum_k cos(pi x_k)``, whose normal derivative
    vanishes on the boundary.
    """
    cos = Factor(lambda x: np.cos(np.pi * x), lambda x: -np.pi * np.sin(np.pi * x))
    pi2 = np.pi ** 2
    return EllipticProblem(
        dim=dim,
        reaction=pi2,
        rhs=SeparableFunction.coordinate_sum(dim, cos, 2.0 * pi2),
        exact=SeparableFunction.coordinate_sum(dim, cos, 1.0),
    )


def _check_dim(p: EllipticProblem, u: CPFunction):
    if p.dim != u.dim:
        raise ValueError(f"dimension mismatch: problem d={p.dim}, trial function d={u.dim}")


def energy(p: EllipticProblem, u: CPFunction) -> float:
    _check_dim(p, u)
    quad = inner_h1_semi(u, u) + p.reaction * inner_l2(u, u)
    return 0.5 * quad - inner_l2_sep(u, p.rhs)


@dataclass(frozen=True)
class BlockQuadraticForm:
    """Energy restricted to block ``dim_index``, up to an additive constant.

    ``E(X) = 1/2 <X, alpha X A + beta X M> - <g, X>`` for a (P, N) block X.
    """

    dim_index: int
    alpha: np.ndarray
    beta: np.ndarray
    g: np.ndarray
    mass: SymTridiag
    stiff: SymTridiag
    mesh: Mesh1D | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.g.shape

    def value(self, X: np.ndarray) -> float:
        return float(0.5 * np.vdot(X, apply_block_hessian(self, X)) - np.vdot(self.g, X))

    def gradient(self, X: np.ndarray) -> np.ndarray:
        return apply_block_hessian(self, X) - self.g

    def trace(self) -> float:
        """Trace of the (P*N) x (P*N) Hessian."""
        return float(np.trace(self.alpha) * self.stiff.diag.sum()
                     + np.trace(self.beta) * self.mass.diag.sum())

    def dense(self) -> np.ndarray:
        """Assembled Hessian acting on row-major ``X.ravel()``."""
        return np.kron(self.alpha, self.stiff.to_dense()) + np.kron(self.beta, self.mass.to_dense())


def apply_block_hessian(q: BlockQuadraticForm, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.shape != q.g.shape:
        raise ValueError(f"block shape {X.shape} does not match {q.g.shape}")
    return q.alpha @ q.stiff.matvec(X) + q.beta @ q.mass.matvec(X)


def contractions(u: CPFunction) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Self-contractions ``s[i] = C_i M_i C_i^T`` and ``t[i] = C_i A_i C_i^T``."""
    s = [U @ M.matvec(U).T for U, M in zip(u.factors, u.mass)]
    t = [U @ A.matvec(U).T for U, A in zip(u.factors, u.stiff)]
    return s, t


def rhs_projections(p: EllipticProblem, u: CPFunction) -> list[np.ndarray]:
    """Per-dimension (P, R) matrices ``C_i b_{r,i}`` against the right-hand side terms."""
    return [U @ p.rhs.load_matrix(i, mesh).T for i, (U, mesh) in enumerate(zip(u.factors, u.meshes))]


def block_quadratic(p: EllipticProblem, u: CPFunction, m: int,
                    s: list[np.ndarray] | None = None,
                    t: list[np.ndarray] | None = None,
                    proj: list[np.ndarray] | None = None) -> BlockQuadraticForm:
    """Quadratic form of the energy in block ``m`` with the other blocks of ``u`` fixed.

    ``s``, ``t`` and ``proj`` may be passed in by a caller that keeps them up
    to date across block updates; entries for dimension ``m`` are never read.
    """
    _check_dim(p, u)
    d = u.dim
    if not 0 <= m < d:
        raise IndexError(f"block index {m} out of range for d={d}")
    if s is None or t is None:
        s, t = contractions(u)
    if proj is None:
        proj = rhs_projections(p, u)

    others = [i for i in range(d) if i != m]
    ones = np.ones((u.rank, u.rank))
    if others:
        s_o = [s[i] for i in others]
        alpha = _product(s_o)
        beta = sum(t[i] * rest for i, rest in zip(others, _leave_one_out(s_o)))
        coef = _product([proj[i] for i in others]) * p.rhs.weights
    else:
        alpha = ones
        beta = np.zeros_like(ones)
        coef = np.ones((u.rank, p.rhs.rank)) * p.rhs.weights
    beta = beta + p.reaction * alpha
    g = coef @ p.rhs.load_matrix(m, u.meshes[m])
    return BlockQuadraticForm(m, alpha, beta, g, u.mass[m], u.stiff[m], u.meshes[m])


def full_gradient(p: EllipticProblem, u: CPFunction) -> list[np.ndarray]:
    """Partial derivatives of the energy with respect to every coefficient."""
    _check_dim(p, u)
    s, t = contractions(u)
    proj = rhs_projections(p, u)
    return [block_quadratic(p, u, m, s, t, proj).gradient(u.factors[m]) for m in range(u.dim)]
