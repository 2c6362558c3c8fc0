"""Ritz solver for high-dimensional elliptic problems with CP-format trial functions.

Trial functions are sums of products of 1D piecewise-linear finite-element
functions, so every integral in the Ritz energy splits into products of 1D
integrals and costs time linear in the dimension.
"""

from .als_solver import BlockSolveError, EnergyReport, SolverOptions, gd_step, solve, solve_block, sweep
from .cp_function import (
    CPFunction,
    Factor,
    GramCache,
    SeparableFunction,
    concat_add,
    evaluate,
    gram_cache,
    inner_h1_semi,
    inner_h1_semi_sep,
    inner_l2,
    inner_l2_sep,
    load_checkpoint,
    new_cp,
    rebalance,
    save_checkpoint,
    scale,
    sep_norms,
)
from .experiment import ConvergenceRecord, ExperimentConfig, compute_errors, fit_rate, run_convergence_study
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
    stiffness_matrix,
)
from .ritz_problem import (
    BlockQuadraticForm,
    EllipticProblem,
    apply_block_hessian,
    block_quadratic,
    cosine_problem,
    energy,
    full_gradient,
)

__version__ = "0.1.0"
