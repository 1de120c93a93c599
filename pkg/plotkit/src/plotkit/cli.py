"""Command-line entry points: plot-convergence and plot-mesh."""

import argparse
import sys

from .plots import plot_convergence, plot_mesh
from .series import ColumnError, SeriesSpec


def main_convergence(argv=None):
    parser = argparse.ArgumentParser(
        prog="plot-convergence",
        description="Log-log convergence plot from hho-bench CSV files.")
    parser.add_argument("--csv", action="append", default=[],
                        metavar="FILE:COLUMN[:LABEL]",
                        help="series to draw; may be repeated")
    parser.add_argument("--out", required=True, help="output image path")
    parser.add_argument("--x", default="ndof",
                        help="abscissa column (default ndof)")
    parser.add_argument("--fit-points", type=int, default=3,
                        help="points used for the slope fit (default 3)")
    parser.add_argument("--ref-slope", type=float, default=None,
                        help="draw a reference-slope guide triangle")
    args = parser.parse_args(argv)
    if not args.csv:
        parser.error("at least one --csv FILE:COLUMN is required")
    series = []
    for item in args.csv:
        parts = item.split(":")
        if len(parts) < 2:
            parser.error(f"bad --csv value {item!r}: want FILE:COLUMN")
        series.append(SeriesSpec(parts[0], parts[1],
                                 parts[2] if len(parts) > 2 else None,
                                 ref_slope=args.ref_slope))
    try:
        fitted = plot_convergence(series, args.out, xcolumn=args.x,
                                  fit_points=args.fit_points)
    except (ColumnError, ValueError, OSError) as exc:
        print(str(exc), file=sys.stderr)
        return 2
    for label, slope in fitted:
        print(f"{label}: fitted slope {slope:.17g}")
    print(f"wrote {args.out}")
    return 0


def main_mesh(argv=None):
    parser = argparse.ArgumentParser(
        prog="plot-mesh",
        description="Wireframe rendering of an hho-bench mesh file.")
    parser.add_argument("--mesh", required=True)
    parser.add_argument("--out", required=True)
    args = parser.parse_args(argv)
    try:
        n = plot_mesh(args.mesh, args.out)
    except (ValueError, OSError) as exc:
        print(str(exc), file=sys.stderr)
        return 2
    print(f"wrote {args.out} ({n} triangles)")
    return 0


if __name__ == "__main__":
    sys.exit(main_convergence())
