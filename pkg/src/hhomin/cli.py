"""Benchmark runner: solve, estimate, refine, and write CSV histories.

Exit codes: 0 success, 2 usage error, 3 solver nonconvergence, 4 estimator
invariant violation.
"""

import argparse
import os
import sys

import numpy as np

from .adaptivity import EstimatorError, SolverError, run_problem
from .mesh import read_mesh, write_mesh
from .problems import make_problem

BASE_COLUMNS = ["level", "ndof", "hmax", "Eh", "Ev0", "Estar", "LEB",
                "gap", "osc", "newton_iters", "wall_s"]
ERROR_COLUMNS = ["errW1p", "errFlux", "errQuasi"]


def build_parser():
    p = argparse.ArgumentParser(
        prog="hho-bench",
        description="Convex-minimization benchmarks on the L-shaped domain "
                    "with primal-dual error control.")
    p.add_argument("--problem", required=True,
                   choices=["odp", "bingham", "plaplace"])
    p.add_argument("--k", type=int, default=None,
                   help="face polynomial degree (default: 0 for odp, "
                        "1 otherwise)")
    p.add_argument("--r", type=float, default=2.0,
                   help="stabilization exponent (default 2)")
    p.add_argument("--s", type=float, default=1.0,
                   help="stabilization mesh-size power (default 1)")
    p.add_argument("--eps", type=float, default=None,
                   help="regularization parameter (bingham only)")
    p.add_argument("--p", type=float, default=None,
                   help="growth exponent (plaplace only, default 4)")
    p.add_argument("--theta", type=float, default=0.5,
                   help="bulk marking fraction (default 0.5)")
    p.add_argument("--refine", choices=["uniform", "adaptive"],
                   default="adaptive")
    p.add_argument("--levels", type=int, default=None,
                   help="number of refinement levels to record")
    p.add_argument("--max-ndof", type=int, default=None,
                   help="stop once a level reaches this many free dofs")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--mesh", default=None,
                   help="custom initial mesh file (text format)")
    p.add_argument("--f-const", type=float, default=None,
                   help="constant source override (odp only)")
    return p


def validate(args, parser):
    """Normalize the parsed flags into a run configuration."""
    if args.eps is not None and args.problem != "bingham":
        parser.error("--eps only applies to the bingham problem")
    if args.p is not None and args.problem != "plaplace":
        parser.error("--p only applies to the plaplace problem")
    if args.f_const is not None and args.problem != "odp":
        parser.error("--f-const only applies to the odp problem")
    if args.mesh is not None and args.problem == "plaplace":
        parser.error("--mesh is not supported for plaplace (the exact "
                     "solution is tied to the L-shaped domain)")
    if args.k is None:
        args.k = 0 if args.problem == "odp" else 1
    if not 0 <= args.k <= 3:
        parser.error("supported face degrees are k in {0, 1, 2, 3}")
    if not 0.0 < args.theta <= 1.0:
        parser.error("--theta must lie in (0, 1]")
    if args.levels is None and args.max_ndof is None:
        if args.refine == "uniform":
            args.levels = 5
        else:
            args.max_ndof = 10000

    kwargs = {"k": args.k, "r": args.r, "s": args.s}
    if args.problem == "bingham":
        kwargs["eps"] = args.eps if args.eps is not None else 1e-4
    if args.problem == "plaplace" and args.p is not None:
        kwargs["p"] = args.p
    if args.problem == "odp" and args.f_const is not None:
        kwargs["f_const"] = args.f_const

    config = {
        "problem": args.problem,
        "refine": args.refine,
        "theta": args.theta,
        "levels": args.levels,
        "max_ndof": args.max_ndof,
        "out": args.out,
        "mesh": args.mesh,
        "kwargs": kwargs,
    }
    return config


def format_float(x):
    return f"{x:.17g}"


def write_csv(path, records, header_items, with_errors):
    cols = BASE_COLUMNS + (ERROR_COLUMNS if with_errors else [])
    with open(path, "w") as fh:
        fh.write("# hho-bench convergence history\n")
        for key, val in header_items:
            fh.write(f"# {key}={val}\n")
        fh.write("# osc column: quasinorm oscillation (squared) for "
                 "plaplace, ||h(f-f_h)||_p' otherwise\n")
        fh.write(",".join(cols) + "\n")
        for rec in records:
            row = [str(rec.level), str(rec.ndof), format_float(rec.hmax),
                   format_float(rec.Eh), format_float(rec.Ev0),
                   format_float(rec.Estar), format_float(rec.leb),
                   format_float(rec.gap), format_float(rec.osc),
                   str(rec.newton_iters), format_float(rec.wall_s)]
            if with_errors:
                row += [format_float(getattr(rec, c)) for c in ERROR_COLUMNS]
            fh.write(",".join(row) + "\n")


def read_csv(path):
    """Read a convergence CSV back into (header dict, column arrays)."""
    header = {}
    rows = []
    cols = None
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    key, _, val = body.partition("=")
                    header[key.strip()] = val.strip()
                continue
            if cols is None:
                cols = line.split(",")
            else:
                rows.append([float(t) for t in line.split(",")])
    data = {c: np.array([r[i] for r in rows]) for i, c in enumerate(cols)}
    return header, data


def run(config):
    """Execute one benchmark run and write all artifacts; returns records."""
    problem = make_problem(config["problem"], **config["kwargs"])
    if config["mesh"]:
        custom = read_mesh(config["mesh"])
        problem.initial_mesh = lambda: custom
    result = run_problem(problem, refine=config["refine"],
                         levels=config["levels"],
                         max_ndof=config["max_ndof"],
                         theta=config["theta"])

    out = config["out"]
    os.makedirs(out, exist_ok=True)
    stem = f"{config['problem']}_{config['refine']}"
    header_items = sorted(
        [("problem", config["problem"]), ("refine", config["refine"]),
         ("theta", config["theta"]),
         ("levels", config["levels"]), ("max_ndof", config["max_ndof"])]
        + list(config["kwargs"].items())
        + list(problem.params.items()))
    csv_path = os.path.join(out, f"{stem}.csv")
    write_csv(csv_path, result.records, header_items,
              with_errors=bool(problem.exact))
    write_mesh(result.mesh, os.path.join(out, f"{stem}_mesh.txt"))
    for lvl, eta in enumerate(result.eta_per_level):
        np.savetxt(os.path.join(out, f"{stem}_eta_{lvl}.txt"), eta,
                   fmt="%.17g")
    return result, csv_path


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    config = validate(args, parser)
    try:
        result, csv_path = run(config)
    except SolverError as exc:
        print(f"solver failed: {exc}", file=sys.stderr)
        if exc.records:
            os.makedirs(config["out"], exist_ok=True)
            stem = f"{config['problem']}_{config['refine']}"
            write_csv(os.path.join(config["out"], f"{stem}_partial.csv"),
                      exc.records, [("problem", config["problem"]),
                                    ("status", "aborted")], False)
        return 3
    except EstimatorError as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return 4
    for rec in result.records:
        print(f"level {rec.level:2d} ndof {rec.ndof:7d} "
              f"gap {rec.gap:.6e} bracket [{rec.leb:.8f}, {rec.Ev0:.8f}]")
    print(f"wrote {csv_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
