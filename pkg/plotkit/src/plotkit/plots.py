"""Figure generation: log-log convergence curves and mesh wireframes."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .series import fit_rate


def plot_convergence(series, out, xcolumn="ndof", fit_points=3,
                     xlabel=None, ylabel=None):
    """Log-log plot of the given series with fitted-slope annotations.

    Returns the list of (label, fitted slope).  Solid lines are adaptive
    runs, dashed lines uniform runs.
    """
    if not series:
        raise ValueError("no series given")
    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    fitted = []
    for spec in series:
        x, y, label, style = spec.load(xcolumn)
        slope = fit_rate(x, y, fit_points)
        fitted.append((label, slope))
        ls = "-" if style == "solid" else "--"
        ax.loglog(x, y, ls, marker="o", markersize=3.5,
                  label=f"{label} (slope {slope:.2f})")
        if spec.ref_slope is not None:
            _slope_guide(ax, x, y, spec.ref_slope)
    ax.set_xlabel(xlabel or xcolumn)
    ax.set_ylabel(ylabel or ", ".join(sorted({s.column for s in series})))
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    plt.close(fig)
    return fitted


def _slope_guide(ax, x, y, slope):
    x0, x1 = x[-2], x[-1]
    y0 = y[-2] * 0.6
    ax.loglog([x0, x1], [y0, y0 * (x1 / x0) ** slope], ":", color="gray",
              linewidth=1)
    ax.annotate(f"{slope:g}", xy=(x1, y0 * (x1 / x0) ** slope),
                fontsize=7, color="gray")


def read_mesh_file(path):
    """Parse the plain-text mesh format: 'NV NC', vertices, cells.

    Raises ValueError naming the offending line on malformed input.
    """
    with open(path) as fh:
        raw = fh.readlines()
    lines = [(i + 1, ln.split()) for i, ln in enumerate(raw) if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty file")
    lineno, head = lines[0]
    try:
        nv, nc = int(head[0]), int(head[1])
    except (IndexError, ValueError):
        raise ValueError(f"{path}: line {lineno}: expected 'NV NC'")
    if len(lines) != 1 + nv + nc:
        raise ValueError(f"{path}: expected {1 + nv + nc} content lines, "
                         f"got {len(lines)}")
    vertices = np.zeros((nv, 2))
    for row, (lineno, toks) in enumerate(lines[1:1 + nv]):
        try:
            vertices[row] = [float(toks[0]), float(toks[1])]
        except (IndexError, ValueError):
            raise ValueError(f"{path}: line {lineno}: expected 'x y'")
    cells = np.zeros((nc, 3), dtype=int)
    for row, (lineno, toks) in enumerate(lines[1 + nv:]):
        try:
            cells[row] = [int(toks[0]), int(toks[1]), int(toks[2])]
        except (IndexError, ValueError):
            raise ValueError(f"{path}: line {lineno}: expected 'i j k'")
        if cells[row].min() < 0 or cells[row].max() >= nv:
            raise ValueError(f"{path}: line {lineno}: vertex index out of "
                             f"range")
    return vertices, cells


def plot_mesh(path, out):
    """Wireframe rendering of a mesh file; returns the cell count."""
    vertices, cells = read_mesh_file(path)
    fig, ax = plt.subplots(figsize=(5.0, 5.0))
    tri = vertices[np.column_stack([cells, cells[:, :1]])]
    for loop in tri:
        ax.plot(loop[:, 0], loop[:, 1], "k-", linewidth=0.6)
    ax.set_aspect("equal")
    ax.set_title(f"{len(cells)} triangles")
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    plt.close(fig)
    return len(cells)
