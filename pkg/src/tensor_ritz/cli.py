"""Command-line entry point: ``tensor-ritz {study,solve,errors,rate}``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict

from .als_solver import SolverOptions
from .cp_function import load_checkpoint, save_checkpoint
from .experiment import (
    ExperimentConfig,
    compute_errors,
    fit_rate,
    parse_mesh_spec,
    read_csv,
    records_table,
    run_convergence_study,
    solve_on_mesh,
)
from .ritz_problem import cosine_problem

log = logging.getLogger("tensor_ritz")


class UsageError(Exception):
    pass


def _add_solver_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("solver")
    g.add_argument("--max-sweeps", type=int)
    g.add_argument("--energy-tol", type=float)
    g.add_argument("--regularization", type=float)
    g.add_argument("--mode", choices=["als", "gd"])
    g.add_argument("--lr", type=float, dest="gd_learning_rate", help="learning rate for --mode gd")


def _solver_options(args, base: SolverOptions | None = None) -> SolverOptions:
    fields = asdict(base or SolverOptions())
    for name in ("max_sweeps", "energy_tol", "regularization", "mode", "gd_learning_rate"):
        value = getattr(args, name, None)
        if value is not None:
            fields[name] = value
    return SolverOptions(**fields)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tensor-ritz",
        description="CP-format Ritz solver for -Lap u + pi^2 u = f on [0,1]^d with Neumann data.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    st = sub.add_parser("study", help="mesh-refinement convergence study, written as CSV")
    st.add_argument("--config", help="JSON file with ExperimentConfig fields")
    st.add_argument("--dim", type=int)
    st.add_argument("--rank", type=int, help="default 2*dim")
    st.add_argument("--meshes", help="element counts, '2:128' (doubling) or '8,16,32'")
    st.add_argument("--seed", type=int)
    st.add_argument("--out", help="CSV output path")
    st.add_argument("--checkpoint-dir", help="save every solution here")
    _add_solver_flags(st)

    so = sub.add_parser("solve", help="solve on one mesh and write a checkpoint")
    so.add_argument("--dim", type=int, required=True)
    so.add_argument("--rank", type=int)
    so.add_argument("--n-elems", type=int, required=True)
    so.add_argument("--seed", type=int, default=0)
    so.add_argument("--out", required=True, help="checkpoint path (JSON)")
    _add_solver_flags(so)

    er = sub.add_parser("errors", help="recompute errors of a checkpoint")
    er.add_argument("--in", dest="inp", required=True)

    ra = sub.add_parser("rate", help="fit convergence rates from a study CSV")
    ra.add_argument("--in", dest="inp", required=True)
    return parser


def _study(args) -> int:
    try:
        fields = ExperimentConfig.from_json(args.config).to_dict() if args.config else {}
        flags = {"dim": args.dim, "rank": args.rank, "seed": args.seed, "output_path": args.out,
                 "checkpoint_path": args.checkpoint_dir}
        if args.meshes is not None:
            flags["mesh_sequence"] = parse_mesh_spec(args.meshes)
        fields.update({k: v for k, v in flags.items() if v is not None})
        if "dim" not in fields:
            raise UsageError("study needs --dim or --config")
        base = fields.pop("solver", None)
        cfg = ExperimentConfig(solver=_solver_options(args, SolverOptions(**base) if base else None), **fields)
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from exc

    def report(n_elems, rec):
        log.info("n_elems=%d h=%.6g err_h1=%.4e err_l2=%.4e sweeps=%d", n_elems, rec.h,
                 rec.err_h1, rec.err_l2, rec.sweeps)

    records = run_convergence_study(cfg, on_record=report)
    print(records_table(records))
    if sum(r.h < 0.5 for r in records) >= 3:
        s1, s0 = fit_rate(records)
        print(f"slope_h1 {s1!r}\nslope_l2 {s0!r}")
    return 0


def _solve(args) -> int:
    rank = args.rank if args.rank is not None else (2 * args.dim if args.dim and args.dim > 0 else None)
    if args.dim is None or args.dim < 1 or rank is None or rank < 1 or args.n_elems < 1:
        raise UsageError("dim, rank and n-elems must be positive")
    opts = _solver_options(args, SolverOptions(seed=args.seed))
    p, u, report = solve_on_mesh(args.dim, rank, args.n_elems, opts, args.seed)
    save_checkpoint(u, args.out)
    err_h1, err_l2 = compute_errors(p, u)
    print(f"energy {min(report.energies)!r}")
    print(f"sweeps {report.sweeps_run} converged {report.converged}")
    print(f"err_h1 {err_h1!r}\nerr_l2 {err_l2!r}")
    return 0


def _errors(args) -> int:
    u = load_checkpoint(args.inp)
    err_h1, err_l2 = compute_errors(cosine_problem(u.dim), u)
    print(f"err_h1 {err_h1!r}\nerr_l2 {err_l2!r}")
    return 0


def _rate(args) -> int:
    s1, s0 = fit_rate(read_csv(args.inp))
    print(f"slope_h1 {s1!r}\nslope_l2 {s0!r}")
    return 0


COMMANDS = {"study": _study, "solve": _solve, "errors": _errors, "rate": _rate}


def main(argv: list[str] | None = None) -> int:
    """Run the CLI; returns 0 on success, 1 on runtime failure, 2 on usage errors."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"tensor-ritz {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        log.debug("failure", exc_info=True)
        print(f"tensor-ritz {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
