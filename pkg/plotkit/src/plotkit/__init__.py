"""Plotting companion for hho-bench convergence histories and meshes."""

__version__ = "0.1.0"
