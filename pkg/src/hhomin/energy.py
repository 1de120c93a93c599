"""Convex energy densities, their conjugates, and the discrete energies.

Densities act on 2D vectors (scalar problems).  Each density carries the
value/gradient/Hessian used by the solver, the exact value and convex
conjugate used by the error estimator, and two-sided growth constants
c1 |A|^p - c2 <= value(A) <= c3 |A|^p + c4.

For the viscoplastic (Bingham-type) density the solver works with the
smoothed value (regularization eps), while the estimator keeps the exact
nonsmooth value and its exact conjugate; weak duality survives because the
smoothed value dominates the exact one pointwise.
"""

import numpy as np
from dataclasses import dataclass, field
from scipy.optimize import minimize_scalar

from .operators import (divergence_reconstruction,
                        dual_potential_reconstruction,
                        gradient_reconstruction, stab_dual,
                        stab_primal_energy)


def _norm(A):
    return np.sqrt(np.sum(A * A, axis=-1))


@dataclass
class EnergyDensity:
    name: str
    p: float
    value: callable          # solver energy density
    grad: callable
    hess: callable            # piecewise second derivative, (..., 2, 2)
    conjugate: callable       # exact convex conjugate (estimator)
    est_value: callable       # exact density (estimator); often == value
    c1: float
    c2: float
    c3: float
    c4: float
    smooth: bool = True
    params: dict = field(default_factory=dict)


def plaplace_density(p):
    """Power-law density |A|^p / p with conjugate |G|^p' / p'."""
    if not 1.0 < p < np.inf:
        raise ValueError("growth exponent p must lie in (1, inf)")
    q = p / (p - 1.0)
    floor = 1e-14 if p < 2 else 0.0

    def value(A):
        return _norm(A) ** p / p

    def _weight(A, expo):
        # n^expo with the correct continuous limit at A = 0: the weights
        # always multiply a power of A that vanishes fast enough for p >= 2
        n = _norm(A)
        nsafe = np.maximum(n, floor) if p < 2 else np.where(n > 0, n, 1.0)
        w = nsafe ** expo
        if p > 2:
            w = np.where(n > 0, w, 0.0)
        return w

    def grad(A):
        return _weight(A, p - 2.0)[..., None] * A

    def hess(A):
        eye = np.eye(2)
        return (_weight(A, p - 2.0)[..., None, None] * eye
                + (p - 2.0) * _weight(A, p - 4.0)[..., None, None]
                * A[..., :, None] * A[..., None, :])

    def conjugate(G):
        return _norm(G) ** q / q

    return EnergyDensity("plaplace", p, value, grad, hess, conjugate, value,
                         c1=1.0 / p, c2=0.0, c3=1.0 / p, c4=0.0,
                         params={"p": p})


def bingham_density(mu, g, eps):
    """Quadratic-plus-threshold density for pipe flow.

    value is the smoothed density used by the solver (exact for eps = 0);
    est_value and conjugate are the exact nonsmooth pair.
    """
    if mu <= 0 or g <= 0 or eps < 0:
        raise ValueError("need mu, g > 0 and eps >= 0")

    def value(A):
        n2 = np.sum(A * A, axis=-1)
        return 0.5 * mu * n2 + g * np.sqrt(n2 + eps * eps)

    def grad(A):
        s = np.sqrt(np.sum(A * A, axis=-1) + eps * eps)
        if eps == 0.0:
            s = np.maximum(s, 1e-300)
        return mu * A + g * A / s[..., None]

    def hess(A):
        s = np.sqrt(np.sum(A * A, axis=-1) + eps * eps)
        if eps == 0.0:
            s = np.maximum(s, 1e-300)
        eye = np.eye(2)
        return (mu * np.broadcast_to(eye, A.shape[:-1] + (2, 2))
                + g * (eye / s[..., None, None]
                       - A[..., :, None] * A[..., None, :]
                       / s[..., None, None] ** 3))

    def est_value(A):
        n = _norm(A)
        return 0.5 * mu * n * n + g * n

    def conjugate(G):
        n = _norm(G)
        return np.where(n <= g, 0.0, (n - g) ** 2 / (2.0 * mu))

    return EnergyDensity("bingham", 2.0, value, grad, hess, conjugate,
                         est_value, c1=mu / 2.0, c2=0.0,
                         c3=mu / 2.0 + g / 2.0, c4=g / 2.0 + g * eps,
                         smooth=eps > 0,
                         params={"mu": mu, "g": g, "eps": eps})


def radial_conjugate_oracle(w, beta, tmax):
    """sup_{t >= 0} (t beta - w(t)) by bounded 1D maximization."""
    res = minimize_scalar(lambda t: -(t * beta - w(t)), bounds=(0.0, tmax),
                          method="bounded",
                          options={"xatol": 1e-13, "maxiter": 500})
    return max(-res.fun, 0.0 * beta - w(0.0))


def odp_density(mu1, mu2, lam):
    """Two-material optimal design density: radial, piecewise C1.

    The radial profile is quadratic (stiff) up to t1, affine in the
    transition band [t1, t2], and quadratic (soft, shifted) beyond; the
    conjugate is derived in closed form and cross-checked against a 1D
    numerical sup at construction.
    """
    if not (0 < mu1 < mu2) or lam <= 0:
        raise ValueError("need 0 < mu1 < mu2 and lam > 0")
    t1 = np.sqrt(2.0 * lam * mu1 / mu2)
    t2 = mu2 * t1 / mu1
    if not 0 < t1 < t2:
        raise ValueError("derived thresholds violate 0 < t1 < t2")
    shift = t1 * mu2 * (t2 - t1) / 2.0

    def w(t):
        t = np.asarray(t, dtype=float)
        return np.where(
            t <= t1, 0.5 * mu2 * t * t,
            np.where(t <= t2, t1 * mu2 * (t - 0.5 * t1),
                     0.5 * mu1 * t * t + shift))

    def wp_over_t(t):
        # w'(t)/t, finite at t = 0
        t = np.asarray(t, dtype=float)
        tsafe = np.maximum(t, 1e-300)
        return np.where(t <= t1, mu2,
                        np.where(t <= t2, t1 * mu2 / tsafe, mu1))

    def wpp(t):
        t = np.asarray(t, dtype=float)
        return np.where(t <= t1, mu2, np.where(t <= t2, 0.0, mu1))

    def value(A):
        return w(_norm(A))

    def grad(A):
        return wp_over_t(_norm(A))[..., None] * A

    def hess(A):
        n = _norm(A)
        r = wp_over_t(n)
        eye = np.eye(2)
        nsafe = np.maximum(n, 1e-300)
        ahat = A / nsafe[..., None]
        proj = ahat[..., :, None] * ahat[..., None, :]
        rad = np.where(n > 0, wpp(n), mu2)
        return (r[..., None, None] * (eye - proj)
                + rad[..., None, None] * proj)

    def conjugate(G):
        b = _norm(G)
        return np.where(b <= mu2 * t1, b * b / (2.0 * mu2),
                        b * b / (2.0 * mu1) - shift)

    # guard the derived branches against a 1D numerical sup
    tmax = t2 + (mu2 * t1 + 1.0) / mu1 + 10.0
    for b in (0.0, 0.5 * mu2 * t1, mu2 * t1, 1.5 * mu2 * t1, 1.0, 5.0):
        num = radial_conjugate_oracle(w, b, tmax + 4 * b / mu1)
        if abs(conjugate(np.array([b, 0.0])) - num) > 1e-8 * (1.0 + num):
            raise RuntimeError(
                f"optimal-design conjugate mismatch at |G|={b}: "
                f"closed form {conjugate(np.array([b, 0.0]))}, oracle {num}")
    tt = np.linspace(0.0, 3.0 * t2 + 5.0, 2001)
    if np.any(w(tt) < 0.5 * mu1 * tt * tt - 1e-12):
        raise RuntimeError("lower growth bound c1 = mu1/2 violated")
    if np.any(w(tt) > 0.5 * mu2 * tt * tt + 1e-12):
        raise RuntimeError("upper growth bound c3 = mu2/2 violated")

    return EnergyDensity("odp", 2.0, value, grad, hess, conjugate, value,
                         c1=mu1 / 2.0, c2=0.0, c3=mu2 / 2.0, c4=0.0,
                         smooth=True,
                         params={"mu1": mu1, "mu2": mu2, "lam": lam,
                                 "t1": t1, "t2": t2})


class LowerOrder:
    """Source term f with its cellwise degree-k projection.

    Cells touching `singular_vertex` are projected with a vertex-graded
    composite rule so that point singularities of f are resolved.
    """

    def __init__(self, space, f, singular_vertex=None):
        from .basis import project_cell_single, project_onto_cells
        self.f = f
        self.space = space
        coeffs = project_onto_cells(
            space.cell_basis, f,
            rule_data=(space.cq_pts, space.cq_w, space.cb_vals))[:, :space.mk]
        if singular_vertex is not None:
            for c in _cells_at_vertex(space.mesh, singular_vertex):
                pts, w = _graded_rule_at(space.mesh, c, singular_vertex,
                                         2 * space.k + 4)
                coeffs[c] = project_cell_single(
                    space.cell_basis, c, f, pts, w)[:space.mk]
        self.f_h = coeffs
        self.singular_vertex = singular_vertex

    @classmethod
    def from_coeffs(cls, space, f_h):
        """Wrap prescribed projection coefficients (no callable source)."""
        obj = cls.__new__(cls)
        obj.space = space
        obj.f_h = np.asarray(f_h, dtype=float)
        obj.singular_vertex = None
        obj.f = None
        return obj

    def lp_norm_fh(self, q):
        """L^q norm of the projected source."""
        pts, w, vals = self.space.cell_rule_data(2 * self.space.k + 4)
        fq = np.einsum("cqi,ci->cq", vals[:, :, :self.space.mk], self.f_h)
        return float(np.einsum("cq,cq->", np.abs(fq) ** q, w)) ** (1.0 / q)


def _cells_at_vertex(mesh, vertex):
    d = np.linalg.norm(mesh.vertices[mesh.cells].reshape(-1, 2)
                       - np.asarray(vertex), axis=1).reshape(-1, 3)
    return np.nonzero(np.any(d < 1e-12, axis=1))[0]


def _graded_rule_at(mesh, c, vertex, exactness, levels=50):
    """Vertex-graded composite rule on cell c, singular point first."""
    from .quadrature import cell_quadrature, graded_triangle_rule
    verts = mesh.vertices[mesh.cells[c]]
    d = np.linalg.norm(verts - np.asarray(vertex), axis=1)
    order = np.roll(np.arange(3), -int(np.argmin(d)))
    rule = cell_quadrature(exactness)
    return graded_triangle_rule(verts[order], rule, levels=levels)


@dataclass
class ProblemSpec:
    """Discrete minimization setup: density, degrees and penalty inputs."""
    density: EnergyDensity
    k: int
    r: float = 2.0
    s: float = 1.0
    f: callable = None           # source term, vectorized over points
    dirichlet: callable = None   # boundary data; None means homogeneous
    name: str = ""

    def __post_init__(self):
        if self.r <= 1.0:
            raise ValueError("stabilization exponent r must exceed 1")
        if self.k < 0 or self.k > 3:
            raise ValueError("face degree k must lie in {0, 1, 2, 3}")


def energy_exactness(density, k):
    """Quadrature degree for nonpolynomial energy integrands."""
    return int(np.ceil(2.0 * density.p * (k + 1))) + 2


def cell_flux(space, u, density):
    """Degree-k cell projection of the flux at the reconstructed gradient.

    These are the cell coefficients of the discrete dual variable,
    (NC, dim P_k, 2).
    """
    pts, w, vals = space.cell_rule_data(energy_exactness(density, space.k))
    D = gradient_reconstruction(space, u)
    Dq = np.einsum("cqi,cid->cqd", vals[:, :, :space.mk], D)
    flux = density.grad(Dq)
    return np.einsum("cqd,cqi,cq->cid", flux, vals[:, :, :space.mk], w)


def discrete_energy(space, v, density, lower, r, s):
    """Primal discrete energy: bulk density + load + penalty / r."""
    pts, w, vals = space.cell_rule_data(energy_exactness(density, space.k))
    D = gradient_reconstruction(space, v)
    Dq = np.einsum("cqi,cid->cqd", vals[:, :, :space.mk], D)
    bulk = float(np.einsum("cq,cq->", density.value(Dq), w))
    load = float(np.einsum("ci,ci->", lower.f_h, v.cell[:, :space.mk]))
    return bulk - load + stab_primal_energy(space, v, r, s) / r


def divergence_misfit(space, t, lower, q):
    """L^q distance between the reconstructed divergence and -f_h."""
    div = divergence_reconstruction(space, t)
    pts, w, vals = space.cell_rule_data(2 * space.k + 4)
    res = np.einsum("cqi,ci->cq", vals[:, :, :space.mk], div + lower.f_h)
    return float(np.einsum("cq,cq->", np.abs(res) ** q, w)) ** (1.0 / q)


def discrete_dual_energy(space, t, density, lower, r, s,
                         feasibility_tol=1e-9,
                         normal_convention="consistent"):
    """Dual discrete energy; -inf when the divergence constraint fails.

    The constraint is div_h t = -f_h; it holds by construction for
    interpolants of exact fluxes and for the postprocessed dual variable,
    so the tolerance only absorbs roundoff.
    """
    q = density.p / (density.p - 1.0)
    misfit = divergence_misfit(space, t, lower, q)
    if misfit > feasibility_tol * (1.0 + lower.lp_norm_fh(q)):
        return -np.inf
    div = divergence_reconstruction(space, t)
    rec = dual_potential_reconstruction(space, t, div)
    pts, w, vals = space.cell_rule_data(energy_exactness(density, space.k))
    Rq = np.einsum("cqi,cid->cqd", vals[:, :, :space.mk], rec)
    bulk = float(np.einsum("cq,cq->", density.conjugate(Rq), w))
    rprime = r / (r - 1.0)
    pen = stab_dual(space, t, r, s, normal_convention=normal_convention,
                    rec=rec)
    return -bulk - pen / rprime
