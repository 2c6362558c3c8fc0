"""Alternating minimization of the Ritz energy over CP coefficient blocks.

One sweep visits the dimensions in order. For each dimension the energy is
an exact quadratic in that block (see ``ritz_problem.block_quadratic``), so
the block is replaced by the minimizer of that quadratic. A plain
gradient-descent mode is kept alongside for comparison.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
import scipy.linalg

from .cp_function import CPFunction, factor_norms, rebalance
from .mesh_basis import Mesh1D, mass_matrix, stiffness_matrix
from .ritz_problem import (
    BlockQuadraticForm,
    EllipticProblem,
    apply_block_hessian,
    block_quadratic,
    contractions,
    energy,
    full_gradient,
    rhs_projections,
)

log = logging.getLogger(__name__)

DEGENERATE_NORM = 1e-14
# dense fallback after a CG stall is refused above this many unknowns
DENSE_HARD_LIMIT = 8000


class BlockSolveError(RuntimeError):
    pass


@dataclass
class SolverOptions:
    max_sweeps: int = 200
    energy_tol: float = 1e-12
    cg_tol: float = 1e-12
    cg_max_iters: int | None = None  # None means 10 * P * N
    regularization: float = 1e-10
    dense_solve_threshold: int = 2000
    seed: int = 0
    gd_learning_rate: float | None = None
    mode: str = "als"
    refinement_steps: int = 2

    def __post_init__(self):
        self.mode = self.mode.lower()
        if self.mode not in ("als", "gd"):
            raise ValueError(f"mode must be 'als' or 'gd', got {self.mode!r}")
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be positive")
        for name in ("energy_tol", "cg_tol", "regularization"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.gd_learning_rate is not None and not self.gd_learning_rate > 0:
            raise ValueError("gd_learning_rate must be positive")
        if self.mode == "gd" and self.gd_learning_rate is None:
            raise ValueError("gradient-descent mode needs an explicit gd_learning_rate")
        if self.refinement_steps < 0:
            raise ValueError("refinement_steps must be nonnegative")


@dataclass
class EnergyReport:
    energies: list[float] = field(default_factory=list)
    sweeps_run: int = 0
    converged: bool = False
    block_solver_stats: list[list[int]] = field(default_factory=list)
    reseeded_terms: int = 0


# ---------------------------------------------------------------------------
# block solves
# ---------------------------------------------------------------------------


@lru_cache(maxsize=16)
def _fast_diag(mesh: Mesh1D) -> tuple[np.ndarray, np.ndarray]:
    """Generalized eigenpairs ``A V = M V diag(lam)`` with ``V^T M V = I``."""
    return scipy.linalg.eigh(stiffness_matrix(mesh).to_dense(), mass_matrix(mesh).to_dense())


def _regularization(q: BlockQuadraticForm, opts: SolverOptions) -> float:
    P, N = q.shape
    return opts.regularization * q.trace() / (P * N)


def _dense_solve(q: BlockQuadraticForm, eps: float, refinement_steps: int) -> np.ndarray:
    H0 = q.dense()
    H = H0.copy()
    H[np.diag_indices_from(H)] += eps
    b = q.g.ravel()
    try:
        factor = scipy.linalg.cho_factor(H)

        def inv(r):
            return scipy.linalg.cho_solve(factor, r)
    except scipy.linalg.LinAlgError:
        w, V = scipy.linalg.eigh(H)
        keep = w > 1e-14 * max(w.max(), 0.0)
        if not keep.any():
            raise BlockSolveError("block Hessian has no positive spectrum")
        Vk, wk = V[:, keep], w[keep]

        def inv(r):
            return Vk @ ((Vk.T @ r) / wk)

    x = inv(b)
    # iterated Tikhonov: removes the O(eps) bias wherever H is well conditioned
    for _ in range(refinement_steps):
        x = x + inv(b - H0 @ x)
    if not np.all(np.isfinite(x)):
        raise BlockSolveError("dense block solve produced non-finite values")
    return x.reshape(q.shape)


def _preconditioner(q: BlockQuadraticForm, eps: float):
    """Exact inverse of ``alpha' (x) A + beta' (x) M`` with shifted alpha, beta.

    The shift in ``beta`` stands in for the ``eps I`` term, which is not of
    Kronecker-sum form; CG corrects the difference.
    """
    P, N = q.shape
    lam, V = _fast_diag_for(q)
    eye = np.eye(P)
    a_shift = 1e-14 * max(np.trace(q.alpha) / P, 1e-300)
    b_shift = eps / q.mass.diag.mean() + 1e-14 * max(np.trace(q.beta) / P, 1e-300)
    mats = lam[:, None, None] * (q.alpha + a_shift * eye) + (q.beta + b_shift * eye)
    chol = np.linalg.cholesky(mats)

    def apply(R: np.ndarray) -> np.ndarray:
        rhs = (R @ V).T[..., None]
        y = np.linalg.solve(chol, rhs)
        z = np.linalg.solve(np.swapaxes(chol, 1, 2), y)
        return z[..., 0].T @ V.T

    return apply


def _fast_diag_for(q: BlockQuadraticForm) -> tuple[np.ndarray, np.ndarray]:
    if q.mesh is not None:
        return _fast_diag(q.mesh)
    return scipy.linalg.eigh(q.stiff.to_dense(), q.mass.to_dense())


def _pcg(H, precond, b: np.ndarray, X0: np.ndarray, atol: float, max_iters: int):
    X = X0.copy()
    R = b - H(X)
    Z = precond(R)
    D = Z.copy()
    rz = np.vdot(R, Z)
    for it in range(max_iters):
        if np.linalg.norm(R) <= atol:
            return X, it, True
        HD = H(D)
        dHd = np.vdot(D, HD)
        if not dHd > 0:
            return X, it, False
        step = rz / dHd
        X += step * D
        R -= step * HD
        Z = precond(R)
        rz_new = np.vdot(R, Z)
        D = Z + (rz_new / rz) * D
        rz = rz_new
    return X, max_iters, np.linalg.norm(R) <= atol


def _iterative_solve(q: BlockQuadraticForm, X0: np.ndarray, eps: float, opts: SolverOptions):
    P, N = q.shape

    def H(X):
        return apply_block_hessian(q, X) + eps * X

    precond = _preconditioner(q, eps)
    atol = opts.cg_tol * np.linalg.norm(q.g)
    max_iters = opts.cg_max_iters or 10 * P * N
    X, total, ok = _pcg(H, precond, q.g, X0, atol, max_iters)
    for _ in range(opts.refinement_steps):
        if not ok:
            break
        R = q.g - apply_block_hessian(q, X)
        dX, n_it, ok = _pcg(H, precond, R, np.zeros_like(X), atol, max_iters)
        X += dX
        total += n_it
    return X, total, ok


def _solve_block(q: BlockQuadraticForm, X0: np.ndarray | None, opts: SolverOptions) -> tuple[np.ndarray, int]:
    P, N = q.shape
    if not np.any(q.g):
        return np.zeros(q.shape), 0
    if q.trace() <= 0.0:
        raise BlockSolveError("block Hessian vanishes while the load does not")
    eps = _regularization(q, opts)
    if P * N <= opts.dense_solve_threshold:
        return _dense_solve(q, eps, opts.refinement_steps), 0
    X0 = np.zeros(q.shape) if X0 is None else np.asarray(X0, dtype=float)
    X, iters, ok = _iterative_solve(q, X0, eps, opts)
    if ok:
        return X, iters
    if P * N > DENSE_HARD_LIMIT:
        raise BlockSolveError(f"CG stalled after {iters} iterations and the block is too large to factorize")
    log.debug("CG stalled after %d iterations; using dense factorization", iters)
    return _dense_solve(q, eps, opts.refinement_steps), iters


def solve_block(q: BlockQuadraticForm, X0: np.ndarray | None, opts: SolverOptions) -> np.ndarray:
    """Minimize the block energy ``E(X)``.

    The Hessian is shifted by ``eps = opts.regularization * trace(H) / (P N)``
    so the solve stays well posed when ``alpha`` is singular, followed by
    ``opts.refinement_steps`` steps of iterated Tikhonov refinement against
    the unshifted Hessian. Small blocks are assembled and Cholesky-factorized;
    larger ones use CG warm-started at ``X0``, preconditioned by the exact
    inverse of the Kronecker-sum part.
    """
    return _solve_block(q, X0, opts)[0]


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------


def _als_sweep(p: EllipticProblem, u: CPFunction, opts: SolverOptions) -> tuple[CPFunction, list[int]]:
    s, t = contractions(u)
    proj = rhs_projections(p, u)
    iters = []
    for m in range(u.dim):
        q = block_quadratic(p, u, m, s, t, proj)
        X_old = u.factors[m]
        X, n_it = _solve_block(q, X_old, opts)
        iters.append(n_it)
        # regularization may make the exact block energy rise by O(eps); keep the old block then
        if q.value(X) > q.value(X_old):
            continue
        u = u.with_block(m, X)
        s[m] = X @ q.mass.matvec(X).T
        t[m] = X @ q.stiff.matvec(X).T
        proj[m] = X @ p.rhs.load_matrix(m, u.meshes[m]).T
    return rebalance(u), iters


def sweep(p: EllipticProblem, u: CPFunction, opts: SolverOptions) -> tuple[CPFunction, float]:
    """One pass over all dimensions; returns the new function and its energy."""
    if opts.mode == "gd":
        u = gd_step(p, u, opts.gd_learning_rate)
    else:
        u, _ = _als_sweep(p, u, opts)
    return u, energy(p, u)


def gd_step(p: EllipticProblem, u: CPFunction, eta: float) -> CPFunction:
    """``theta <- theta - eta * grad I(theta)`` on every coefficient at once."""
    if eta < 0:
        raise ValueError("learning rate must be nonnegative")
    grads = full_gradient(p, u)
    return CPFunction(u.meshes, [U - eta * G for U, G in zip(u.factors, grads)])




def reseed_degenerate(u: CPFunction, rng: np.random.Generator) -> tuple[CPFunction, int]:
    """Give rank terms with a vanishing factor fresh random factors.

    The first dimension's factor of such a term is set to zero and the
    others are redrawn, so the represented function does not change, while
    the next solve of block 0 sees a nonsingular direction for the term.
    """
    norms = factor_norms(u)
    bad = np.flatnonzero(norms.min(axis=0) < DEGENERATE_NORM)
    if bad.size == 0:
        return u, 0
    blocks = u.copy_blocks()
    blocks[0][bad] = 0.0
    for i in range(1, u.dim):
        blocks[i][bad] = rng.uniform(-0.5, 0.5, size=(bad.size, blocks[i].shape[1]))
    return CPFunction(u.meshes, blocks), int(bad.size)


def solve(p: EllipticProblem, u0: CPFunction, opts: SolverOptions | None = None,
          progress: Callable[[dict], None] | None = None) -> tuple[CPFunction, EnergyReport]:
    """Minimize the energy starting from ``u0``.

    Stops when the relative energy change over a sweep drops below
    ``opts.energy_tol`` or after ``opts.max_sweeps`` sweeps; the report's
    ``converged`` flag tells which. Returns the lowest-energy iterate seen.
    ``progress`` receives one dict per sweep with keys ``sweep``,
    ``energy`` and ``max_block_iters``.
    """
    opts = opts or SolverOptions()
    if p.dim != u0.dim:
        raise ValueError(f"dimension mismatch: problem d={p.dim}, trial function d={u0.dim}")
    eta = opts.gd_learning_rate if opts.mode == "gd" else None
    rng = np.random.default_rng([opts.seed, 1])

    u = u0
    e_prev = energy(p, u)
    report = EnergyReport(energies=[e_prev])
    best_u, best_e = u, e_prev
    for k in range(1, opts.max_sweeps + 1):
        if opts.mode == "gd":
            u, iters = gd_step(p, u, eta), []
        else:
            u, iters = _als_sweep(p, u, opts)
            u, n_bad = reseed_degenerate(u, rng)
            report.reseeded_terms += n_bad
        e = energy(p, u)
        report.energies.append(e)
        report.block_solver_stats.append(iters)
        report.sweeps_run = k
        if progress is not None:
            progress({"sweep": k, "energy": e, "max_block_iters": max(iters, default=0)})
        if e < best_e:
            best_u, best_e = u, e
        if not np.isfinite(e):
            log.warning("energy became non-finite at sweep %d", k)
            break
        if abs(e - e_prev) <= opts.energy_tol * max(abs(e), abs(e_prev)):
            report.converged = True
            break
        e_prev = e
    if not report.converged:
        log.info("no convergence within %d sweeps (last energy %.16g)", report.sweeps_run, report.energies[-1])
    return best_u, report
