"""Mesh-refinement studies for the cosine Neumann problem.

Both errors are normalized by the right-hand side:
``|u - u_N|_{H1} / |f|_{L2}`` and ``|u - u_N|_{L2} / |f|_{L2}``.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .als_solver import SolverOptions, solve
from .cp_function import (
    CPFunction,
    inner_h1_semi,
    inner_h1_semi_sep,
    inner_l2,
    inner_l2_sep,
    new_cp,
    save_checkpoint,
    sep_norms,
)
from .mesh_basis import build_mesh
from .ritz_problem import EllipticProblem, cosine_problem

log = logging.getLogger(__name__)

CSV_MAGIC = "# tensor-ritz v1"
CSV_COLUMNS = ("h", "err_h1", "err_l2", "energy", "sweeps", "wall_seconds", "converged")
THREADS_ENV = "TENSOR_RITZ_THREADS"
ROUNDING_FLOOR = -1e-12


def default_mesh_sequence(dim: int) -> list[int]:
    cap = 256 if dim <= 3 else 64
    return [2 ** k for k in range(1, int(math.log2(cap)) + 1)]


@dataclass
class ExperimentConfig:
    dim: int
    rank: int | None = None
    mesh_sequence: list[int] | None = None
    solver: SolverOptions = field(default_factory=SolverOptions)
    output_path: str | None = None
    checkpoint_path: str | None = None
    seed: int = 0

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError(f"dim must be a positive integer, got {self.dim!r}")
        if self.rank is None:
            self.rank = 2 * self.dim
        if int(self.rank) != self.rank or self.rank < 1:
            raise ValueError(f"rank must be a positive integer, got {self.rank!r}")
        if self.mesh_sequence is None:
            self.mesh_sequence = default_mesh_sequence(self.dim)
        self.mesh_sequence = [int(n) for n in self.mesh_sequence]
        if not self.mesh_sequence:
            raise ValueError("mesh_sequence is empty")
        if self.mesh_sequence[0] < 1 or any(b <= a for a, b in zip(self.mesh_sequence, self.mesh_sequence[1:])):
            raise ValueError("mesh_sequence must be strictly increasing positive element counts")
        if isinstance(self.solver, dict):
            self.solver = SolverOptions(**self.solver)

    @classmethod
    def from_json(cls, path: str | os.PathLike) -> ExperimentConfig:
        with open(path) as fh:
            return cls(**json.load(fh))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ConvergenceRecord:
    h: float
    err_h1: float
    err_l2: float
    energy: float
    sweeps: int
    wall_seconds: float
    converged: bool = True


def _clamped_sqrt(sq: float, what: str) -> float:
    if sq < 0.0:
        if sq < ROUNDING_FLOOR:
            raise FloatingPointError(f"squared {what} error is {sq:.3e}, beyond rounding")
        return 0.0
    return math.sqrt(sq)


def compute_errors(p: EllipticProblem, u: CPFunction) -> tuple[float, float]:
    """Return ``(err_h1, err_l2)``, both divided by the L2 norm of the right-hand side.

    The squared errors are expanded as ``|u|^2 - 2 (u, u_N) + |u_N|^2`` so
    every term is an exact separable integral.
    """
    if p.exact is None:
        raise ValueError("problem has no exact solution to compare against")
    n_ref = max(m.n_elems for m in u.meshes)
    f_l2_sq, _ = sep_norms(p.rhs, n_ref)
    ex_l2_sq, ex_semi_sq = sep_norms(p.exact, n_ref)
    l2_sq = ex_l2_sq - 2.0 * inner_l2_sep(u, p.exact) + inner_l2(u, u)
    semi_sq = ex_semi_sq - 2.0 * inner_h1_semi_sep(u, p.exact) + inner_h1_semi(u, u)
    f_norm = math.sqrt(f_l2_sq)
    err_l2 = _clamped_sqrt(l2_sq, "L2")
    err_h1 = _clamped_sqrt(l2_sq + semi_sq, "H1")
    return err_h1 / f_norm, err_l2 / f_norm


def solve_on_mesh(dim: int, rank: int, n_elems: int, opts: SolverOptions, init_seed,
                  progress: Callable[[dict], None] | None = None):
    p = cosine_problem(dim)
    meshes = [build_mesh(0.0, 1.0, n_elems)] * dim
    u0 = new_cp(meshes, rank, "random", seed=init_seed)
    u, report = solve(p, u0, opts, progress)
    return p, u, report


def _run_one(cfg: ExperimentConfig, n_elems: int, seq: np.random.SeedSequence) -> tuple[ConvergenceRecord, CPFunction]:
    init_seq, solver_seq = seq.spawn(2)
    opts = SolverOptions(**{**asdict(cfg.solver), "seed": int(solver_seq.generate_state(1)[0])})
    t0 = time.perf_counter()
    p, u, report = solve_on_mesh(cfg.dim, cfg.rank, n_elems, opts, init_seq)
    err_h1, err_l2 = compute_errors(p, u)
    wall = time.perf_counter() - t0
    record = ConvergenceRecord(
        h=u.meshes[0].h,
        err_h1=err_h1,
        err_l2=err_l2,
        energy=min(report.energies),
        sweeps=report.sweeps_run,
        wall_seconds=wall,
        converged=report.converged,
    )
    if not report.converged:
        log.warning("n_elems=%d did not converge in %d sweeps", n_elems, report.sweeps_run)
    return record, u


def _thread_count() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def run_convergence_study(cfg: ExperimentConfig,
                          on_record: Callable[[int, ConvergenceRecord], None] | None = None) -> list[ConvergenceRecord]:
    """Solve on every mesh of the sequence and collect error records.

    Rows are appended (and flushed) to ``cfg.output_path`` in mesh order as
    soon as each run finishes. With ``cfg.checkpoint_path`` set, every
    solution is saved there as ``cp_n<n_elems>.json``.
    """
    seqs = np.random.SeedSequence(cfg.seed).spawn(len(cfg.mesh_sequence))
    ckpt_dir = Path(cfg.checkpoint_path) if cfg.checkpoint_path else None
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)

    writer = CsvWriter(cfg.output_path) if cfg.output_path else None
    records = []
    threads = min(_thread_count(), len(cfg.mesh_sequence))
    try:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = pool.map(lambda args: _run_one(cfg, *args), zip(cfg.mesh_sequence, seqs))
            for n_elems, (record, u) in zip(cfg.mesh_sequence, results):
                records.append(record)
                if writer is not None:
                    writer.write(record)
                if ckpt_dir is not None:
                    save_checkpoint(u, ckpt_dir / f"cp_n{n_elems}.json")
                if on_record is not None:
                    on_record(n_elems, record)
    finally:
        if writer is not None:
            writer.close()
    return records


class CsvWriter:
    def __init__(self, path: str | os.PathLike):
        self._fh = open(path, "w", newline="")
        self._fh.write(CSV_MAGIC + "\n")
        self._csv = csv.writer(self._fh)
        self._csv.writerow(CSV_COLUMNS)
        self._fh.flush()

    def write(self, r: ConvergenceRecord):
        self._csv.writerow([repr(float(r.h)), repr(float(r.err_h1)), repr(float(r.err_l2)),
                            repr(float(r.energy)), int(r.sweeps), repr(float(r.wall_seconds)),
                            int(bool(r.converged))])
        self._fh.flush()
        os.fsync(self._fh.fileno())

    def close(self):
        self._fh.close()


def read_csv(path: str | os.PathLike) -> list[ConvergenceRecord]:
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if first != CSV_MAGIC:
            raise ValueError(f"{path}: missing '{CSV_MAGIC}' header line")
        rows = list(csv.DictReader(fh))
    return [
        ConvergenceRecord(
            h=float(r["h"]), err_h1=float(r["err_h1"]), err_l2=float(r["err_l2"]),
            energy=float(r["energy"]), sweeps=int(r["sweeps"]),
            wall_seconds=float(r["wall_seconds"]), converged=bool(int(r["converged"])),
        )
        for r in rows
    ]


def fit_rate(records: Iterable[ConvergenceRecord]) -> tuple[float, float]:
    """Least-squares slopes of log(err) against log(h) for the H1 and L2 errors.

    Records with ``h >= 1/2`` are dropped as pre-asymptotic; at least three
    must remain.
    """
    usable = [r for r in records if r.h < 0.5]
    if len(usable) < 3:
        raise ValueError(f"need at least 3 records with h < 1/2, got {len(usable)}")
    log_h = np.log([r.h for r in usable])
    slope_h1 = np.polyfit(log_h, np.log([r.err_h1 for r in usable]), 1)[0]
    slope_l2 = np.polyfit(log_h, np.log([r.err_l2 for r in usable]), 1)[0]
    return float(slope_h1), float(slope_l2)


def parse_mesh_spec(spec: str) -> list[int]:
    """``"2:128"`` gives the doubling sequence 2, 4, ..., 128; ``"8,16,32"`` is taken literally."""
    spec = spec.strip()
    if ":" in spec:
        lo, hi = (int(s) for s in spec.split(":"))
        if lo < 1 or hi < lo:
            raise ValueError(f"bad mesh range {spec!r}")
        out = []
        n = lo
        while n <= hi:
            out.append(n)
            n *= 2
        return out
    return [int(s) for s in spec.split(",") if s.strip()]


def records_table(records: Sequence[ConvergenceRecord]) -> str:
    lines = [f"{'h':>12} {'err_h1':>12} {'err_l2':>12} {'energy':>18} {'sweeps':>6} {'sec':>8}"]
    for r in records:
        flag = "" if r.converged else "  (not converged)"
        lines.append(f"{r.h:12.6g} {r.err_h1:12.4e} {r.err_l2:12.4e} {r.energy:18.10f} "
                     f"{r.sweeps:6d} {r.wall_seconds:8.2f}{flag}")
    return "\n".join(lines)
