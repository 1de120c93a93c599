"""Benchmark problem presets on the L-shaped domain.

Three convex minimization problems: a two-material optimal design problem,
viscoplastic pipe flow, and the 4-Laplacian with a known singular solution.
All use the L-shape with pure Dirichlet boundary.
"""

import numpy as np
from dataclasses import dataclass, field
from scipy.integrate import quad

from .energy import (EnergyDensity, ProblemSpec, bingham_density,
                     odp_density, plaplace_density)
from .mesh import lshape_initial

ORIGIN = np.array([0.0, 0.0])


class PLaplaceExact:
    """Singular exact solution of the 4-Laplace benchmark.

    u = r^b sin(b phi) with b = 7/8 and the angle measured from the
    positive x-axis, counterclockwise across the reentrant corner at the
    origin.  The matching source is f = b^3 (2 - 2b) r^(3b-4) sin(b phi);
    the printed source in the literature carries the same r- and
    phi-dependence with the constant (7/8)^3 / 4.
    """

    def __init__(self, beta=7.0 / 8.0):
        self.beta = beta
        self._energy = None

    def _polar(self, pts):
        x, y = pts[..., 0], pts[..., 1]
        r = np.hypot(x, y)
        phi = np.mod(np.arctan2(y, x), 2.0 * np.pi)
        return r, phi

    def u(self, pts):
        r, phi = self._polar(pts)
        return r ** self.beta * np.sin(self.beta * phi)

    def grad(self, pts):
        b = self.beta
        r, phi = self._polar(pts)
        rs = np.maximum(r, 1e-300)
        amp = b * rs ** (b - 1.0)
        er = np.stack([np.cos(phi), np.sin(phi)], axis=-1)
        ephi = np.stack([-np.sin(phi), np.cos(phi)], axis=-1)
        return amp[..., None] * (np.sin(b * phi)[..., None] * er
                                 + np.cos(b * phi)[..., None] * ephi)

    def flux(self, pts):
        """|grad u|^2 grad u for the quartic growth."""
        b = self.beta
        r, phi = self._polar(pts)
        rs = np.maximum(r, 1e-300)
        amp = b ** 3 * rs ** (3.0 * (b - 1.0))
        er = np.stack([np.cos(phi), np.sin(phi)], axis=-1)
        ephi = np.stack([-np.sin(phi), np.cos(phi)], axis=-1)
        return amp[..., None] * (np.sin(b * phi)[..., None] * er
                                 + np.cos(b * phi)[..., None] * ephi)

    def f(self, pts):
        b = self.beta
        r, phi = self._polar(pts)
        rs = np.maximum(r, 1e-300)
        return b ** 3 * (2.0 - 2.0 * b) * rs ** (3.0 * b - 4.0) \
            * np.sin(b * phi)

    @staticmethod
    def _ray_length(phi):
        return 1.0 / np.maximum(np.abs(np.cos(phi)), np.abs(np.sin(phi)))

    def _polar_integral(self, g, rexp):
        """integral over the L-shape of r^rexp g(phi), by 1D quadrature."""
        s = rexp + 2.0
        breaks = np.pi * np.array([0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5])
        total = 0.0
        for a, b in zip(breaks[:-1], breaks[1:]):
            val, _ = quad(lambda t: g(t) * self._ray_length(t) ** s / s,
                          a, b, epsabs=1e-14, epsrel=1e-13)
            total += val
        return total

    def energy(self):
        """Exact minimal energy, via radially explicit integration."""
        if self._energy is None:
            b = self.beta
            self._energy = (b ** 3 / 4.0) * self._polar_integral(
                lambda t: b - np.sin(b * t) ** 2, -0.5)
        return self._energy

    def f_norm(self, q):
        """L^q norm of the source over the L-shape."""
        b = self.beta
        c = b ** 3 * (2.0 - 2.0 * b)
        val = self._polar_integral(
            lambda t: np.abs(np.sin(b * t)) ** q, (3.0 * b - 4.0) * q)
        return (c ** q * val) ** (1.0 / q)


@dataclass
class Problem:
    """One benchmark: density, discretization inputs and data."""
    name: str
    density: EnergyDensity
    k: int
    r: float
    s: float
    f: callable
    dirichlet: callable = None
    exact: object = None
    singular_vertex: np.ndarray = None
    continuation: list = field(default_factory=list)
    params: dict = field(default_factory=dict)
    marking_oscillation: str = "none"   # none | p2 | quasinorm

    def __post_init__(self):
        # route degree/exponent validation through the core spec type
        ProblemSpec(self.density, self.k, self.r, self.s, self.f,
                    self.dirichlet, self.name)
        if not self.continuation:
            self.continuation = [self.density]

    def initial_mesh(self):
        return lshape_initial()


def _const(c):
    return lambda pts: np.full(pts.shape[:-1], float(c))


def odp_problem(k=0, r=2.0, s=1.0, mu1=1.0, mu2=2.0, lam=0.0084,
                f_const=1.0):
    den = odp_density(mu1, mu2, lam)
    return Problem("odp", den, k, r, s, _const(f_const),
                   params={"mu1": mu1, "mu2": mu2, "lam": lam,
                           "f_const": f_const})


def bingham_problem(k=1, r=2.0, s=1.0, mu=1.0, g=0.2, eps=1e-4,
                    f_const=10.0):
    den = bingham_density(mu, g, eps)
    # descend through the regularization parameters on the coarsest mesh
    eps_list = [e for e in (1.0, 1e-1, 1e-2, 1e-3, 1e-4) if e > eps]
    cont = [bingham_density(mu, g, e) for e in eps_list] + [den]
    return Problem("bingham", den, k, r, s, _const(f_const),
                   continuation=cont, marking_oscillation="p2",
                   params={"mu": mu, "g": g, "eps": eps, "f_const": f_const})


def plaplace_problem(k=1, r=2.0, s=1.0, p=4.0):
    """Power-law benchmark; for p = 4 the singular exact solution fixes
    the data, otherwise a homogeneous problem with unit source."""
    den = plaplace_density(p)
    exact = PLaplaceExact() if p == 4.0 else None
    return Problem("plaplace", den, k, r, s,
                   exact.f if exact else _const(1.0),
                   dirichlet=exact.u if exact else None,
                   exact=exact,
                   singular_vertex=ORIGIN if exact else None,
                   marking_oscillation="quasinorm" if exact else "none",
                   params={"p": p})


def make_problem(name, **overrides):
    factories = {"odp": odp_problem, "bingham": bingham_problem,
                 "plaplace": plaplace_problem}
    if name not in factories:
        raise ValueError(f"unknown problem {name!r}; "
                         f"choose from {sorted(factories)}")
    return factories[name](**overrides)
