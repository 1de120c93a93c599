"""HHO solver for convex minimization with primal-dual error control."""

__version__ = "0.1.0"
