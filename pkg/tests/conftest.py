import numpy as np
import pytest

from tensor_ritz.cp_function import new_cp
from tensor_ritz.mesh_basis import build_mesh
from tensor_ritz.ritz_problem import cosine_problem

# acceptance results collected by tests/test_acceptance.py, printed at the end of the run
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


def unit_meshes(dim, n_elems):
    return [build_mesh(0.0, 1.0, n_elems)] * dim


def random_cp(dim, n_elems, rank, seed):
    return new_cp(unit_meshes(dim, n_elems), rank, "random", seed=seed)


def hat(mesh, j):
    """Independent closed-form hat function phi_j for test oracles."""
    xj = mesh.a + j * mesh.h

    def phi(x):
        return np.maximum(0.0, 1.0 - np.abs(np.asarray(x, dtype=float) - xj) / mesh.h)

    return phi


def hat_deriv(mesh, j):
    xj = mesh.a + j * mesh.h

    def dphi(x):
        x = np.asarray(x, dtype=float)
        inside = np.abs(x - xj) < mesh.h
        return np.where(inside, -np.sign(x - xj) / mesh.h, 0.0)

    return dphi


@pytest.fixture(scope="session")
def problem2():
    return cosine_problem(2)


@pytest.fixture(scope="session")
def problem3():
    return cosine_problem(3)
