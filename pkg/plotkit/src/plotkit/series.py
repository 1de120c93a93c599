"""Reading hho-bench CSV histories and fitting log-log rates."""

import numpy as np
from dataclasses import dataclass


class ColumnError(ValueError):
    """Requested column is not present in the CSV."""


def read_history(path):
    """Parse a convergence CSV: '#' comment header with key=value lines,
    one header row, numeric rows.  Returns (meta dict, column arrays)."""
    meta = {}
    cols = None
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    key, _, val = body.partition("=")
                    meta[key.strip()] = val.strip()
                continue
            if cols is None:
                cols = [c.strip() for c in line.split(",")]
            else:
                rows.append([float(t) for t in line.split(",")])
    if cols is None:
        raise ValueError(f"{path}: no header row found")
    data = {c: np.array([r[i] for r in rows]) for i, c in enumerate(cols)}
    return meta, data


def fit_rate(x, y, npoints=3):
    """Least-squares slope of log(y) against log(x) on the last points.

    This is the same fit the solver's acceptance checks use.
    """
    x = np.asarray(x, dtype=float)[-npoints:]
    y = np.asarray(y, dtype=float)[-npoints:]
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("rate fit needs positive data")
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


@dataclass
class SeriesSpec:
    """One curve: CSV path, column, label, and the line style convention
    (solid for adaptive runs, dashed for uniform)."""
    path: str
    column: str
    label: str = None
    style: str = None          # "solid" | "dashed"; inferred when None
    ref_slope: float = None

    def load(self, xcolumn="ndof"):
        meta, data = read_history(self.path)
        if self.column not in data:
            raise ColumnError(
                f"{self.path}: column {self.column!r} not found; "
                f"available: {', '.join(sorted(data))}")
        if xcolumn not in data:
            raise ColumnError(
                f"{self.path}: abscissa column {xcolumn!r} not found")
        style = self.style
        if style is None:
            style = "solid" if meta.get("refine", "adaptive") == "adaptive" \
                else "dashed"
        label = self.label
        if label is None:
            label = f"{meta.get('problem', 'run')}:{self.column}"
        return data[xcolumn], data[self.column], label, style
