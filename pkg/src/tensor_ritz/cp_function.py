"""Trial functions in CP (canonical polyadic) format over 1D hat bases.

A rank-P function on a d-dimensional box is stored as d coefficient
blocks, block ``i`` of shape ``(P, N_i)``::

    u(x) = sum_k prod_i ( sum_j C[i][k, j] * phi_{i,j}(x_i) )

The order-d coefficient tensor is never formed. All integrals of products
of such functions reduce to products of P x P contractions of the blocks
against the 1D mass and stiffness matrices, so their cost grows linearly
with d.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from os import PathLike
from typing import Callable, Sequence

import numpy as np

from .mesh_basis import (
    GaussRule,
    Mesh1D,
    SymTridiag,
    build_mesh,
    gauss_rule,
    interpolate,
    load_vector,
    load_vector_deriv,
    mass_matrix,
    quadrature_points,
    stiffness_matrix,
)

CHECKPOINT_VERSION = 1
SEP_REFERENCE_ELEMS = 64


# ---------------------------------------------------------------------------
# analytic separable functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Factor:
    """A univariate function together with (optionally) its derivative."""

    fn: Callable[[np.ndarray], np.ndarray]
    deriv: Callable[[np.ndarray], np.ndarray] | None = None


def _ones(x):
    return np.ones_like(np.asarray(x, dtype=float))


def _zeros(x):
    return np.zeros_like(np.asarray(x, dtype=float))


ONE = Factor(_ones, _zeros)


@dataclass(frozen=True, eq=False)
class SeparableFunction:
    """``F(x) = sum_r weights[r] * prod_i terms[r][i](x_i)``."""

    terms: tuple[tuple[Factor, ...], ...]
    weights: np.ndarray
    intervals: tuple[tuple[float, float], ...] = ()
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        terms = tuple(tuple(row) for row in self.terms)
        if not terms or not terms[0]:
            raise ValueError("separable function needs at least one term and one dimension")
        d = len(terms[0])
        if any(len(row) != d for row in terms):
            raise ValueError("every term must have one factor per dimension")
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if weights.shape[0] != len(terms):
            raise ValueError("need one weight per term")
        intervals = tuple(tuple(map(float, iv)) for iv in self.intervals) or ((0.0, 1.0),) * d
        if len(intervals) != d:
            raise ValueError("need one interval per dimension")
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "intervals", intervals)

    @property
    def dim(self) -> int:
        return len(self.terms[0])

    @property
    def rank(self) -> int:
        return len(self.terms)

    @property
    def has_derivatives(self) -> bool:
        return all(f.deriv is not None for row in self.terms for f in row)

    @classmethod
    def constant(cls, dim: int, value: float = 1.0) -> SeparableFunction:
        return cls(((ONE,) * dim,), [value])

    @classmethod
    def coordinate_sum(cls, dim: int, factor: Factor, weight: float = 1.0) -> SeparableFunction:
        """``weight * sum_k g(x_k)``, a rank-``dim`` separable function."""
        terms = tuple(tuple(factor if i == k else ONE for i in range(dim)) for k in range(dim))
        return cls(terms, np.full(dim, float(weight)))

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.zeros(x.shape[0])
        for w, row in zip(self.weights, self.terms):
            term = np.full(x.shape[0], w)
            for i, f in enumerate(row):
                term = term * f.fn(x[:, i])
            out += term
        return out

    def gradient(self, x) -> np.ndarray:
        if not self.has_derivatives:
            raise ValueError("separable function is missing derivative handles")
        x = np.atleast_2d(np.asarray(x, dtype=float))
        grad = np.zeros_like(x)
        for w, row in zip(self.weights, self.terms):
            vals = np.stack([f.fn(x[:, i]) * _ones(x[:, i]) for i, f in enumerate(row)])
            for m, f in enumerate(row):
                others = np.prod(np.delete(vals, m, axis=0), axis=0)
                grad[:, m] += w * f.deriv(x[:, m]) * others
        return grad

    def load_matrix(self, i: int, mesh: Mesh1D, deriv: bool = False) -> np.ndarray:
        """(R, N) matrix of load vectors of every term's factor in dimension ``i``.

        Results are cached per (dimension, mesh, kind).
        """
        key = (i, mesh, deriv)
        cached = self._cache.get(key)
        if cached is None:
            if deriv and not self.has_derivatives:
                raise ValueError("separable function is missing derivative handles")
            rule = gauss_rule()
            if deriv:
                rows = [load_vector_deriv(mesh, row[i].deriv, rule) for row in self.terms]
            else:
                rows = [load_vector(mesh, row[i].fn, rule) for row in self.terms]
            cached = np.array(rows)
            cached.setflags(write=False)
            self._cache[key] = cached
        return cached


# ---------------------------------------------------------------------------
# CP trial functions
# ---------------------------------------------------------------------------


class CPFunction:
    """Rank-P trial function with one (P, N_i) coefficient block per dimension.

    Instances are immutable: the blocks are read-only arrays, and updates go
    through :meth:`with_block`, which returns a new function.
    """

    __slots__ = ("meshes", "factors", "_mass", "_stiff")

    def __init__(self, meshes: Sequence[Mesh1D], factors: Sequence[np.ndarray]):
        meshes = tuple(meshes)
        if len(meshes) == 0 or len(meshes) != len(factors):
            raise ValueError("need one mesh per coefficient block (and at least one)")
        blocks = []
        rank = None
        for mesh, block in zip(meshes, factors):
            block = np.array(block, dtype=float, ndmin=2)
            if block.ndim != 2 or block.shape[1] != mesh.n_nodes:
                raise ValueError(f"block shape {block.shape} does not match mesh with {mesh.n_nodes} nodes")
            if rank is None:
                rank = block.shape[0]
            elif block.shape[0] != rank:
                raise ValueError("all blocks must have the same number of rows (the rank)")
            block.setflags(write=False)
            blocks.append(block)
        if rank < 1:
            raise ValueError("rank must be at least 1")
        self.meshes = meshes
        self.factors = tuple(blocks)
        self._mass = None
        self._stiff = None

    @property
    def dim(self) -> int:
        return len(self.meshes)

    @property
    def rank(self) -> int:
        return self.factors[0].shape[0]

    @property
    def n_params(self) -> int:
        return sum(f.size for f in self.factors)

    @property
    def mass(self) -> tuple[SymTridiag, ...]:
        if self._mass is None:
            self._mass = tuple(mass_matrix(m) for m in self.meshes)
        return self._mass

    @property
    def stiff(self) -> tuple[SymTridiag, ...]:
        if self._stiff is None:
            self._stiff = tuple(stiffness_matrix(m) for m in self.meshes)
        return self._stiff

    def with_block(self, m: int, block: np.ndarray) -> CPFunction:
        factors = list(self.factors)
        factors[m] = block
        out = CPFunction(self.meshes, factors)
        out._mass, out._stiff = self._mass, self._stiff
        return out

    def copy_blocks(self) -> list[np.ndarray]:
        return [f.copy() for f in self.factors]

    def __call__(self, x) -> np.ndarray | float:
        return evaluate(self, x)

    def __repr__(self) -> str:
        ns = [m.n_elems for m in self.meshes]
        return f"CPFunction(dim={self.dim}, rank={self.rank}, n_elems={ns})"


def new_cp(meshes: Sequence[Mesh1D], rank: int, init="random", seed: int | None = 0,
           value: float = 1.0) -> CPFunction:
    """Build a rank-``rank`` CP function on ``meshes``.

    Parameters
    ----------
    meshes : sequence of Mesh1D
        One mesh per dimension.
    rank : int
        Number of rank-one terms P.
    init : {"random", "zero", "constant"} or SeparableFunction
        ``"random"`` draws entries i.i.d. uniform on [-0.5, 0.5] from
        ``numpy.random.default_rng(seed)``. ``"constant"`` fills every entry
        with ``value``. A SeparableFunction of the same rank is interpolated
        term by term at the mesh nodes, its weights going into the first
        dimension's block.
    seed : int, optional
        Seed (or anything accepted by ``default_rng``) for ``"random"``.
    """
    if int(rank) != rank or rank < 1:
        raise ValueError(f"rank must be a positive integer, got {rank!r}")
    meshes = tuple(meshes)
    if isinstance(init, SeparableFunction):
        if init.rank != rank:
            raise ValueError(f"nodal init needs rank {init.rank}, got {rank}")
        if init.dim != len(meshes):
            raise ValueError("dimension mismatch between meshes and separable function")
        factors = []
        for i, mesh in enumerate(meshes):
            block = np.array([interpolate(mesh, row[i].fn) for row in init.terms])
            if i == 0:
                block *= init.weights[:, None]
            factors.append(block)
        return CPFunction(meshes, factors)
    if init == "zero":
        return CPFunction(meshes, [np.zeros((rank, m.n_nodes)) for m in meshes])
    if init == "constant":
        return CPFunction(meshes, [np.full((rank, m.n_nodes), float(value)) for m in meshes])
    if init == "random":
        rng = np.random.default_rng(seed)
        return CPFunction(meshes, [rng.uniform(-0.5, 0.5, size=(rank, m.n_nodes)) for m in meshes])
    raise ValueError(f"unknown initialization {init!r}")


def evaluate(u: CPFunction, x) -> np.ndarray | float:
    """Point values of ``u``; ``x`` is a single point (d,) or a batch (n, d)."""
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[1] != u.dim:
        raise ValueError(f"points must have {u.dim} coordinates, got {pts.shape[1]}")
    prod = np.ones((u.rank, pts.shape[0]))
    for i, (mesh, block) in enumerate(zip(u.meshes, u.factors)):
        xi = pts[:, i]
        if not np.all(mesh.contains(xi)):
            raise ValueError(f"coordinate {i} outside [{mesh.a}, {mesh.b}]")
        elem, t = mesh.locate(xi)
        prod *= (1.0 - t) * block[:, elem] + t * block[:, elem + 1]
    vals = prod.sum(axis=0)
    return float(vals[0]) if single else vals


def _check_meshes(u: CPFunction, v: CPFunction):
    if u.meshes != v.meshes:
        raise ValueError("CP functions live on different meshes")


def _leave_one_out(mats: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Elementwise products of all but one entry, via prefix/suffix products."""
    d = len(mats)
    ones = np.ones_like(mats[0])
    prefix = [ones]
    for a in mats[:-1]:
        prefix.append(prefix[-1] * a)
    suffix = [ones] * d
    for i in range(d - 2, -1, -1):
        suffix[i] = suffix[i + 1] * mats[i + 1]
    return [prefix[i] * suffix[i] for i in range(d)]


def _product(mats: Sequence[np.ndarray]) -> np.ndarray:
    out = np.ones_like(mats[0])
    for a in mats:
        out = out * a
    return out


@dataclass(frozen=True)
class GramCache:
    """Per-dimension P_u x P_v contractions ``s[i] = U_i M_i V_i^T``, ``t[i] = U_i A_i V_i^T``."""

    s: tuple[np.ndarray, ...]
    t: tuple[np.ndarray, ...]


def mass_contraction(u_block: np.ndarray, v_block: np.ndarray, mass: SymTridiag) -> np.ndarray:
    return u_block @ mass.matvec(v_block).T


def gram_cache(u: CPFunction, v: CPFunction) -> GramCache:
    _check_meshes(u, v)
    s = tuple(U @ M.matvec(V).T for U, V, M in zip(u.factors, v.factors, u.mass))
    t = tuple(U @ A.matvec(V).T for U, V, A in zip(u.factors, v.factors, u.stiff))
    return GramCache(s, t)


def inner_l2(u: CPFunction, v: CPFunction) -> float:
    """Exact L2 inner product of two CP functions on the same meshes."""
    _check_meshes(u, v)
    s = [U @ M.matvec(V).T for U, V, M in zip(u.factors, v.factors, u.mass)]
    return float(_product(s).sum())


def inner_h1_semi(u: CPFunction, v: CPFunction) -> float:
    """Exact ``int grad u . grad v`` of two CP functions on the same meshes."""
    g = gram_cache(u, v)
    loo = _leave_one_out(g.s)
    return float(sum(t * rest for t, rest in zip(g.t, loo)).sum())


def _sep_projections(u: CPFunction, F: SeparableFunction, deriv: bool) -> list[np.ndarray]:
    if F.dim != u.dim:
        raise ValueError(f"dimension mismatch: CP function has d={u.dim}, separable has d={F.dim}")
    return [U @ F.load_matrix(i, mesh, deriv).T for i, (U, mesh) in enumerate(zip(u.factors, u.meshes))]


def inner_l2_sep(u: CPFunction, F: SeparableFunction) -> float:
    """``int u F`` with one 1D load vector per (term, dimension)."""
    proj = _sep_projections(u, F, deriv=False)
    return float((_product(proj) * F.weights).sum())


def inner_h1_semi_sep(u: CPFunction, F: SeparableFunction) -> float:
    """``int grad u . grad F``; needs derivative handles on every factor of F."""
    if not F.has_derivatives:
        raise ValueError("separable function is missing derivative handles")
    proj = _sep_projections(u, F, deriv=False)
    dproj = _sep_projections(u, F, deriv=True)
    loo = _leave_one_out(proj)
    total = sum(dp * rest for dp, rest in zip(dproj, loo))
    return float((total * F.weights).sum())


def _univariate_grams(F: SeparableFunction, i: int, n_elems: int, rule: GaussRule):
    a, b = F.intervals[i]
    x, w = quadrature_points(build_mesh(a, b, n_elems), rule)
    x, w = x.ravel(), w.ravel()
    vals = np.array([row[i].fn(x) * _ones(x) for row in F.terms])
    gram = (vals * w) @ vals.T
    if not F.has_derivatives:
        return gram, None
    dvals = np.array([row[i].deriv(x) * _ones(x) for row in F.terms])
    return gram, (dvals * w) @ dvals.T


def sep_norms(F: SeparableFunction, n_elems: int = SEP_REFERENCE_ELEMS) -> tuple[float, float]:
    """Squared L2 norm and squared H1 seminorm of a separable function.

    The 1D factor integrals use 8-point Gauss on a reference mesh of
    ``max(n_elems, 64)`` elements per dimension. The seminorm is NaN when
    derivative handles are missing.
    """
    n_elems = max(int(n_elems), SEP_REFERENCE_ELEMS)
    rule = gauss_rule()
    grams, dgrams = zip(*(_univariate_grams(F, i, n_elems, rule) for i in range(F.dim)))
    ww = np.outer(F.weights, F.weights)
    l2_sq = float((_product(grams) * ww).sum())
    if dgrams[0] is None:
        return l2_sq, math.nan
    loo = _leave_one_out(grams)
    h1_sq = float((sum(dg * rest for dg, rest in zip(dgrams, loo)) * ww).sum())
    return l2_sq, h1_sq


# ---------------------------------------------------------------------------
# algebra and conditioning
# ---------------------------------------------------------------------------


def scale(u: CPFunction, c: float, dim: int = 0) -> CPFunction:
    """``c * u``, applied to the block of dimension ``dim``."""
    return u.with_block(dim, c * u.factors[dim])


def concat_add(u: CPFunction, v: CPFunction) -> CPFunction:
    """``u + v`` as a rank ``P_u + P_v`` function (blocks stacked, no recompression)."""
    _check_meshes(u, v)
    out = CPFunction(u.meshes, [np.vstack([a, b]) for a, b in zip(u.factors, v.factors)])
    out._mass, out._stiff = u._mass, u._stiff
    return out


def factor_norms(u: CPFunction) -> np.ndarray:
    """(d, P) array of M-norms of every 1D factor."""
    return np.array([
        np.sqrt(np.maximum(np.einsum("kj,kj->k", U, M.matvec(U)), 0.0))
        for U, M in zip(u.factors, u.mass)
    ])


def rebalance(u: CPFunction) -> CPFunction:
    """Equalize the factor M-norms within every rank term.

    Each factor of term k is rescaled to the geometric mean of the term's
    per-dimension norms, which leaves the function unchanged. Terms with an
    exactly zero factor are left as they are.
    """
    norms = factor_norms(u)
    healthy = np.all(norms > 0.0, axis=0)
    if not healthy.any():
        return u
    scales = np.ones_like(norms)
    logn = np.log(norms[:, healthy])
    scales[:, healthy] = np.exp(logn.mean(axis=0) - logn)
    out = CPFunction(u.meshes, [U * sc[:, None] for U, sc in zip(u.factors, scales)])
    out._mass, out._stiff = u._mass, u._stiff
    return out


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def to_dict(u: CPFunction) -> dict:
    return {
        "version": CHECKPOINT_VERSION,
        "dim": u.dim,
        "rank": u.rank,
        "meshes": [{"a": m.a, "b": m.b, "n_elems": m.n_elems} for m in u.meshes],
        "factors": [block.tolist() for block in u.factors],
    }


def from_dict(data: dict) -> CPFunction:
    if data.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {data.get('version')!r}")
    meshes = [build_mesh(m["a"], m["b"], m["n_elems"]) for m in data["meshes"]]
    u = CPFunction(meshes, [np.array(f, dtype=float) for f in data["factors"]])
    if u.dim != data["dim"] or u.rank != data["rank"]:
        raise ValueError("checkpoint header does not match its factor blocks")
    return u


def save_checkpoint(u: CPFunction, path: str | PathLike) -> None:
    # json writes floats with repr(), the shortest string that round-trips exactly
    with open(path, "w") as fh:
        json.dump(to_dict(u), fh)
        fh.write("\n")


def load_checkpoint(path: str | PathLike) -> CPFunction:
    with open(path) as fh:
        return from_dict(json.load(fh))
