"""Uniform 1D meshes and the linear (hat) finite-element basis on them.

Gram matrices are kept in symmetric tridiagonal storage; nothing here ever
forms an N x N dense array except for `SymTridiag.to_dense`, which exists
for tests and small direct solves.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

UnivariateFn = Callable[[np.ndarray], np.ndarray]

MAX_GAUSS_ORDER = 16
DEFAULT_GAUSS_ORDER = 8


@dataclass(frozen=True)
class Mesh1D:
    """Uniform partition of ``[a, b]`` into ``n_elems`` elements."""

    a: float
    b: float
    n_elems: int

    @property
    def h(self) -> float:
        return (self.b - self.a) / self.n_elems

    @property
    def n_nodes(self) -> int:
        return self.n_elems + 1

    @property
    def nodes(self) -> np.ndarray:
        return self.a + self.h * np.arange(self.n_nodes)

    def contains(self, x, tol: float = 1e-12) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        slack = tol * max(1.0, abs(self.a), abs(self.b))
        return (x >= self.a - slack) & (x <= self.b + slack)

    def locate(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Element index and local coordinate ``t`` in [0, 1] for points ``x``.

        The right endpoint belongs to the last element.
        """
        s = (np.asarray(x, dtype=float) - self.a) / self.h
        elem = np.clip(np.floor(s).astype(np.int64), 0, self.n_elems - 1)
        return elem, s - elem


def build_mesh(a: float, b: float, n_elems: int) -> Mesh1D:
    if int(n_elems) != n_elems or n_elems < 1:
        raise ValueError(f"n_elems must be a positive integer, got {n_elems!r}")
    if not a < b:
        raise ValueError(f"need a < b, got a={a}, b={b}")
    return Mesh1D(float(a), float(b), int(n_elems))


@dataclass(frozen=True)
class SymTridiag:
    """Symmetric tridiagonal matrix stored by its diagonal and first off-diagonal."""

    diag: np.ndarray
    off: np.ndarray

    def __post_init__(self):
        if self.off.shape[0] != self.diag.shape[0] - 1:
            raise ValueError("off-diagonal must be one shorter than the diagonal")

    @property
    def n(self) -> int:
        return self.diag.shape[0]

    def matvec(self, x: np.ndarray) -> np.ndarray:
        """Apply the matrix along the last axis of ``x``.

        For a P x N block ``X`` this returns ``X @ T`` (T is symmetric).
        """
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.n:
            raise ValueError(f"expected trailing size {self.n}, got {x.shape[-1]}")
        y = self.diag * x
        y[..., :-1] += self.off * x[..., 1:]
        y[..., 1:] += self.off * x[..., :-1]
        return y

    def quad_form(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Bilinear form ``x T y^T`` for row-stacked vectors (P_x x N, P_y x N)."""
        return np.atleast_2d(x) @ self.matvec(np.atleast_2d(y)).T

    def to_dense(self) -> np.ndarray:
        return np.diag(self.diag) + np.diag(self.off, 1) + np.diag(self.off, -1)

    def to_banded(self) -> np.ndarray:
        """Upper banded layout accepted by ``scipy.linalg.solveh_banded``."""
        ab = np.zeros((2, self.n))
        ab[0, 1:] = self.off
        ab[1] = self.diag
        return ab

    def __add__(self, other: SymTridiag) -> SymTridiag:
        return SymTridiag(self.diag + other.diag, self.off + other.off)

    def __mul__(self, c: float) -> SymTridiag:
        return SymTridiag(c * self.diag, c * self.off)

    __rmul__ = __mul__


@dataclass(frozen=True)
class GaussRule:
    """Gauss-Legendre rule on the reference element [-1, 1]."""

    nodes: np.ndarray
    weights: np.ndarray
    order: int = field(default=0)


def gauss_rule(order: int = DEFAULT_GAUSS_ORDER) -> GaussRule:
    if int(order) != order or not 1 <= order <= MAX_GAUSS_ORDER:
        raise ValueError(f"Gauss order must be in [1, {MAX_GAUSS_ORDER}], got {order!r}")
    nodes, weights = np.polynomial.legendre.leggauss(int(order))
    return GaussRule(nodes, weights, int(order))


def mass_matrix(mesh: Mesh1D) -> SymTridiag:
    h = mesh.h
    diag = np.full(mesh.n_nodes, 2.0 * h / 3.0)
    diag[[0, -1]] = h / 3.0
    return SymTridiag(diag, np.full(mesh.n_elems, h / 6.0))


def stiffness_matrix(mesh: Mesh1D) -> SymTridiag:
    h = mesh.h
    diag = np.full(mesh.n_nodes, 2.0 / h)
    diag[[0, -1]] = 1.0 / h
    return SymTridiag(diag, np.full(mesh.n_elems, -1.0 / h))


def quadrature_points(mesh: Mesh1D, rule: GaussRule) -> tuple[np.ndarray, np.ndarray]:
    """Physical Gauss points and weights, shape (n_elems, order)."""
    h = mesh.h
    left = mesh.a + h * np.arange(mesh.n_elems)
    x = left[:, None] + 0.5 * h * (rule.nodes + 1.0)
    w = np.broadcast_to(0.5 * h * rule.weights, x.shape)
    return x, w


def _scatter(mesh: Mesh1D, left: np.ndarray, right: np.ndarray) -> np.ndarray:
    out = np.zeros(mesh.n_nodes)
    out[:-1] += left
    out[1:] += right
    return out


def load_vector(mesh: Mesh1D, g: UnivariateFn, rule: GaussRule | None = None) -> np.ndarray:
    """Entries ``int phi_j(x) g(x) dx`` by per-element Gauss quadrature."""
    rule = rule or gauss_rule()
    x, w = quadrature_points(mesh, rule)
    wg = w * np.asarray(g(x), dtype=float)
    lam = 0.5 * (rule.nodes + 1.0)
    return _scatter(mesh, wg @ (1.0 - lam), wg @ lam)


def load_vector_deriv(mesh: Mesh1D, gprime: UnivariateFn, rule: GaussRule | None = None) -> np.ndarray:
    """Entries ``int phi_j'(x) g'(x) dx`` by per-element Gauss quadrature."""
    rule = rule or gauss_rule()
    x, w = quadrature_points(mesh, rule)
    elem_int = (w * np.asarray(gprime(x), dtype=float)).sum(axis=1) / mesh.h
    return _scatter(mesh, -elem_int, elem_int)


def interpolate(mesh: Mesh1D, g: UnivariateFn) -> np.ndarray:
    return np.asarray(g(mesh.nodes), dtype=float) * np.ones(mesh.n_nodes)


def hat_values(mesh: Mesh1D, x) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Local hat-function data at points ``x``.

    Returns the element index ``e`` together with the values of the two
    nonzero basis functions there: ``phi_e(x)`` and ``phi_{e+1}(x)``.
    """
    elem, t = mesh.locate(x)
    return elem, 1.0 - t, t


def basis_matrix(mesh: Mesh1D, x, deriv: bool = False) -> np.ndarray:
    """Dense (len(x), n_nodes) matrix of basis values or derivatives at ``x``."""
    x = np.ravel(np.asarray(x, dtype=float))
    elem, lo, hi = hat_values(mesh, x)
    if deriv:
        lo = np.full_like(lo, -1.0 / mesh.h)
        hi = np.full_like(hi, 1.0 / mesh.h)
    B = np.zeros((x.size, mesh.n_nodes))
    rows = np.arange(x.size)
    B[rows, elem] += lo
    B[rows, elem + 1] += hi
    return B
