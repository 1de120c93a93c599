"""Primal-dual a posteriori error control and adaptive refinement.

The local indicator is the pointwise convex-duality gap of the conforming
postprocessed pair (displacement, flux), integrated per cell; summed over
the mesh it reproduces the primal-dual gap of the modified problem whose
load is the projected source.  A guaranteed lower bound for the exact
minimal energy subtracts a data-oscillation penalty from the dual value.

Cells touching a designated singular point are integrated with
vertex-graded composite rules, so singular sources and boundary data do not
pollute the estimator columns.
"""

import time
import numpy as np
from dataclasses import dataclass

from .energy import (LowerOrder, _cells_at_vertex, _graded_rule_at,
                     discrete_dual_energy, discrete_energy, energy_exactness)
from .mesh import refine_bisect, refine_uniform
from .operators import HHOSpace
from .postprocess import dual_traces, nodal_average, rt_reconstruct
from .quadrature import face_quadrature, graded_segment_rule, map_to_segments
from .solver import DofMap, dirichlet_face_values, minimize


class EstimatorError(RuntimeError):
    """An estimator invariant failed (conjugate bug, negative indicator)."""


class SolverError(RuntimeError):
    """The Newton solve did not converge; carries partial run records."""

    def __init__(self, message, records=None):
        super().__init__(message)
        self.records = records or []


@dataclass
class EstimateReport:
    eta: np.ndarray            # per-cell indicator, clamped nonnegative
    marking: np.ndarray        # indicator plus local oscillation where used
    gap: float                 # sum of eta
    energy_upper: float        # E(v0) with the true source
    energy_upper_mod: float    # E_sigma0(v0), the gap partner
    dual_value: float          # E*_sigma0(sigma0)
    leb: float
    osc_leb: float             # ||h (f - f_h)||_q entering the lower bound
    osc_report: float          # oscillation column for the run record
    errors: dict
    pieces: dict


def poincare_constant(p):
    """Upper bound for the Poincare constant of convex cells."""
    return 1.0 / np.pi if p == 2.0 else 2.0 * (p / 2.0) ** (1.0 / p)


def quasinorm_osc_density(grad_norm, residual, h, p):
    """Pointwise density of the growth-adapted oscillation.

    h^2 (|grad v|^{p-1} + h |f - f_h|)^{p'-2} |f - f_h|^2; for p = 2 this
    collapses to h^2 |f - f_h|^2.
    """
    q = p / (p - 1.0)
    base = grad_norm ** (p - 1.0) + h * np.abs(residual)
    if q == 2.0:
        wgt = np.ones_like(base)
    else:
        safe = np.where(base > 0, base, 1.0)
        wgt = np.where(base > 0, safe ** (q - 2.0), 0.0)
    return h * h * wgt * residual * residual


def displacement_bound(density, c_p, f_norm, area):
    """Positive root of c1 t^p - c_p t ||f|| - c2 |Omega|, by bisection."""
    def fun(t):
        return density.c1 * t ** density.p - c_p * t * f_norm \
            - density.c2 * area

    if f_norm == 0.0 and density.c2 == 0.0:
        return 0.0
    hi = 1.0
    while fun(hi) <= 0.0:
        hi *= 2.0
        if hi > 1e30:
            raise EstimatorError("displacement bound bracket failed")
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if fun(mid) > 0.0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def dorfler_mark(eta, theta):
    """Minimal-cardinality bulk marking; ties broken by cell index."""
    if not 0.0 < theta <= 1.0:
        raise ValueError("marking fraction theta must lie in (0, 1]")
    eta = np.asarray(eta, dtype=float)
    total = float(eta.sum())
    if total <= 0.0:
        return np.array([], dtype=np.int64)
    order = np.lexsort((np.arange(len(eta)), -eta))
    csum = np.cumsum(eta[order])
    n = int(np.searchsorted(csum, theta * total * (1.0 - 1e-12))) + 1
    return np.sort(order[:min(n, len(eta))])


def estimate(space, problem, lower, u):
    """Full a posteriori pass; returns (report, flux, displacement)."""
    den = problem.density
    p = den.p
    q = p / (p - 1.0)
    mesh = space.mesh
    NC = mesh.num_cells

    sig_h = dual_traces(space, u, den, lower, problem.r, problem.s)
    sigma0 = rt_reconstruct(space, sig_h, lower)

    exact = problem.exact if problem.dirichlet is not None else None
    if exact is None:
        v0 = nodal_average(space, u.cell)
    else:
        from .basis import project_cell_single, project_onto_cells
        uproj = project_onto_cells(
            space.cell_basis, exact.u,
            rule_data=(space.cq_pts, space.cq_w, space.cb_vals))
        if problem.singular_vertex is not None:
            for c in _cells_at_vertex(mesh, problem.singular_vertex):
                pts, w = _graded_rule_at(mesh, c, problem.singular_vertex,
                                         2 * space.k + 4)
                uproj[c] = project_cell_single(space.cell_basis, c, exact.u,
                                               pts, w)
        v0 = nodal_average(space, u.cell - uproj)

    def reduce_cells(pts, w, cells, single=False):
        """All per-cell integrals of the estimator in one sweep."""
        cb = space.cell_basis
        if single:
            c = cells[0]
            vals = cb.values_single(c, pts)[None]
            grads = cb.gradients_single(c, pts)[None]
            s0 = sigma0.values_single(c, pts)[None]
            pts = pts[None]
            w = w[None]
        else:
            vals = space.cb_vals if pts is space.cq_pts else cb.values(pts)
            grads = cb.gradients(pts, cells)
            s0 = sigma0.values(pts, cells)
        coef = v0.cell_coeffs[cells]
        gv = np.einsum("cqid,ci->cqd", grads, coef)
        vv = np.einsum("cqi,ci->cq", vals, coef)
        if exact is not None:
            gv = gv + exact.grad(pts)
            vv = vv + exact.u(pts)
        fv = problem.f(pts)
        fhv = np.einsum("cqi,ci->cq", vals[:, :, :space.mk],
                        lower.f_h[cells])
        psi = den.est_value(gv)
        conj = den.conjugate(s0)
        cross = np.einsum("cqd,cqd->cq", s0, gv)
        hK = mesh.h_K[cells]
        ft = fv - fhv
        out = {
            "eta": np.einsum("cq,cq->c", psi - cross + conj, w),
            "absint": np.einsum("cq,cq->c",
                                np.abs(psi) + np.abs(cross) + np.abs(conj),
                                w),
            "psi": np.einsum("cq,cq->c", psi, w),
            "conj": np.einsum("cq,cq->c", conj, w),
            "cross": np.einsum("cq,cq->c", cross, w),
            "load_true": np.einsum("cq,cq->c", fv * vv, w),
            "load_h": np.einsum("cq,cq->c", fhv * vv, w),
            "osc_leb": hK ** q * np.einsum("cq,cq->c", np.abs(ft) ** q, w),
            "f_norm": np.einsum("cq,cq->c", np.abs(fv) ** q, w),
        }
        gnorm = np.sqrt(np.einsum("cqd,cqd->cq", gv, gv))
        if problem.marking_oscillation == "quasinorm":
            dens = quasinorm_osc_density(gnorm, ft, hK[:, None], p)
            out["osc_mark"] = np.einsum("cq,cq->c", dens, w)
        elif problem.marking_oscillation == "p2":
            out["osc_mark"] = hK ** 2 * np.einsum("cq,cq->c", ft * ft, w)
        else:
            out["osc_mark"] = np.zeros(len(w))
        if exact is not None:
            ge = np.einsum("cqid,ci->cqd", grads, coef)   # grad(v0 - u)
            genorm2 = np.einsum("cqd,cqd->cq", ge, ge)
            gu = exact.grad(pts)
            gunorm = np.sqrt(np.einsum("cqd,cqd->cq", gu, gu))
            dflux = den.grad(gv) - exact.flux(pts)
            out["err_grad"] = np.einsum(
                "cq,cq->c", genorm2 ** (p / 2.0), w)
            out["err_flux"] = np.einsum(
                "cq,cq->c",
                np.einsum("cqd,cqd->cq", dflux, dflux) ** (q / 2.0), w)
            out["err_quasi"] = np.einsum(
                "cq,cq->c", (gunorm + gnorm) ** (p - 2.0) * genorm2, w)
        return out

    edeg = energy_exactness(den, space.k)
    pts, w, _vals, _grads = space.cell_rule_data(edeg, grads=True)
    allc = np.arange(NC)
    # batched pass (basis values recomputed at the energy rule)
    data = reduce_cells(pts, w, allc)
    singular_cells = []
    if problem.singular_vertex is not None:
        singular_cells = list(_cells_at_vertex(mesh,
                                               problem.singular_vertex))
        for c in singular_cells:
            gp, gw = _graded_rule_at(mesh, c, problem.singular_vertex, edeg)
            one = reduce_cells(gp, gw, np.array([c]), single=True)
            for key in data:
                data[key][c] = one[key][0]

    # Dirichlet boundary term for inhomogeneous data
    bnd = 0.0
    if problem.dirichlet is not None:
        frule = face_quadrature(edeg)
        sv = problem.singular_vertex
        for f in np.nonzero(space.dirichlet_faces)[0]:
            ends = mesh.vertices[mesh.face_vertices[f]]
            if sv is not None and \
                    np.linalg.norm(ends - sv, axis=1).min() < 1e-12:
                hit = np.linalg.norm(ends - sv, axis=1) < 1e-12
                a, b = (ends[0], ends[1]) if hit[0] else (ends[1], ends[0])
                fp, fw = graded_segment_rule(a, b, frule)
            else:
                fp, fw = map_to_segments(frule, ends[0:1], ends[1:2])
                fp, fw = fp[0], fw[0]
            s0n = sigma0.values_single(int(mesh.face_cells[f, 0]), fp) \
                @ mesh.face_normals[f]
            bnd += float(np.sum(fw * problem.dirichlet(fp) * s0n))

    # clamp the indicator; a decisively negative value is a bug
    scale = 1.0 + float(data["absint"].sum())
    eta = data["eta"]
    if eta.min() < -1e-8 * scale:
        raise EstimatorError(
            f"negative refinement indicator {eta.min():.3e} at scale "
            f"{scale:.3e}: conjugate-function branches are inconsistent")
    eta = np.where(eta >= 0.0, eta, 0.0)

    e_psi = float(data["psi"].sum())
    e_conj = float(data["conj"].sum())
    e_cross = float(data["cross"].sum())
    dual_value = -e_conj + bnd
    upper_mod = e_psi - e_cross + bnd
    upper_true = e_psi - float(data["load_true"].sum())

    osc_leb = float(data["osc_leb"].sum()) ** (1.0 / q)
    if exact is not None and hasattr(exact, "f_norm"):
        f_norm = exact.f_norm(q)
    else:
        f_norm = float(data["f_norm"].sum()) ** (1.0 / q)
    c_p = poincare_constant(p)
    c_du = displacement_bound(den, c_p, f_norm, float(mesh.areas.sum()))
    leb = dual_value - c_p * c_du * osc_leb

    marking = eta + data["osc_mark"]
    if problem.marking_oscillation == "quasinorm":
        osc_report = float(data["osc_mark"].sum())
    else:
        osc_report = osc_leb

    errors = {}
    if exact is not None:
        errors = {
            "errW1p": float(data["err_grad"].sum()) ** (1.0 / p),
            "errFlux": float(data["err_flux"].sum()) ** (1.0 / q),
            "errQuasi": float(np.sqrt(data["err_quasi"].sum())),
        }

    report = EstimateReport(
        eta=eta, marking=marking, gap=float(eta.sum()),
        energy_upper=upper_true, energy_upper_mod=upper_mod,
        dual_value=dual_value, leb=leb, osc_leb=osc_leb,
        osc_report=osc_report, errors=errors,
        pieces={"bulk": e_psi, "conjugate": e_conj, "cross": e_cross,
                "boundary": bnd, "load_true": float(data["load_true"].sum()),
                "load_h": float(data["load_h"].sum()),
                "c_p": c_p, "c_du": c_du, "f_norm": f_norm,
                "singular_cells": singular_cells})

    # runtime weak-duality guard on the discrete pair
    e_h = discrete_energy(space, u, den, lower, problem.r, problem.s)
    e_h_star = discrete_dual_energy(space, sig_h, den, lower, problem.r,
                                    problem.s)
    if e_h_star > e_h + 1e-9 * (1.0 + abs(e_h)):
        raise EstimatorError(
            f"discrete weak duality violated: dual {e_h_star} > primal "
            f"{e_h}")
    report.pieces["Eh"] = e_h
    report.pieces["Eh_star"] = e_h_star
    return report, sigma0, v0


@dataclass
class RunRecord:
    level: int
    ndof: int
    hmax: float
    Eh: float
    Ev0: float
    Estar: float
    leb: float
    gap: float
    osc: float
    newton_iters: int
    wall_s: float
    errW1p: float = None
    errFlux: float = None
    errQuasi: float = None


@dataclass
class RunResult:
    records: list
    mesh: object              # final mesh
    eta_per_level: list
    reports: list


def prolong(new_space, old_space, u_old):
    """Transfer a solution to a refined mesh (cells exactly, faces by
    averaged traces)."""
    parents = new_space.mesh.parent_cells
    vals = old_space.cell_basis.values(new_space.cq_pts, parents)
    uq = np.einsum("cqi,ci->cq", vals, u_old.cell[parents])
    cell = np.einsum("cq,cqi,cq->ci", uq, new_space.cb_vals, new_space.cq_w)
    mesh = new_space.mesh
    kp = mesh.face_cells[:, 0]
    km = np.where(mesh.face_cells[:, 1] >= 0, mesh.face_cells[:, 1], kp)
    mp = np.einsum("fai,fi->fa", new_space.tr_plus, cell[kp])
    mm = np.einsum("fai,fi->fa", new_space.tr_minus, cell[km])
    face = np.where((mesh.face_cells[:, 1] >= 0)[:, None],
                    0.5 * (mp + mm), mp)
    out = new_space.zero_primal()
    out.cell, out.face = cell, face
    return out


def _solve_level(space, problem, lower, dirichlet_values, x0):
    """One level: warm start when possible, continuation otherwise."""
    total_iters = 0
    if x0 is not None:
        u, rep = minimize(space, problem.density, lower, problem.r,
                          problem.s, dirichlet_values, x0=x0)
        total_iters += rep.iterations
        if rep.converged:
            return u, rep, total_iters
    x = None
    for den in problem.continuation:
        u, rep = minimize(space, den, lower, problem.r, problem.s,
                          dirichlet_values, x0=x)
        total_iters += rep.iterations
        x = u
        if not rep.converged:
            return u, rep, total_iters
    return u, rep, total_iters


def run_problem(problem, refine="adaptive", levels=None, max_ndof=None,
                theta=0.5, on_level=None):
    """Solve -> estimate -> mark -> refine until the budget is spent.

    `on_level(**state)` is called after each estimate with the level's
    space, solution, lower-order data, report and postprocessed fields.
    """
    if refine not in ("adaptive", "uniform"):
        raise ValueError("refine must be 'adaptive' or 'uniform'")
    if levels is None and max_ndof is None:
        levels = 6
    mesh = problem.initial_mesh()
    records, etas, reports = [], [], []
    u_prev = space_prev = None
    level = 0
    while True:
        t0 = time.perf_counter()
        space = HHOSpace(mesh, problem.k)
        lower = LowerOrder(space, problem.f,
                           singular_vertex=problem.singular_vertex)
        dvals = dirichlet_face_values(space, problem.dirichlet,
                                      singular_vertex=problem.singular_vertex)
        ndof = DofMap(space).n_free
        x0 = prolong(space, space_prev, u_prev) if u_prev is not None else None
        u, rep, iters = _solve_level(space, problem, lower, dvals, x0)
        if not rep.converged:
            raise SolverError(
                f"Newton did not converge on level {level} "
                f"(ndof {ndof}): {rep.message}", records)
        report, sigma0, v0 = estimate(space, problem, lower, u)
        wall = time.perf_counter() - t0
        records.append(RunRecord(
            level=level, ndof=ndof, hmax=float(mesh.h_max),
            Eh=rep.energy, Ev0=report.energy_upper, Estar=report.dual_value,
            leb=report.leb, gap=report.gap, osc=report.osc_report,
            newton_iters=iters, wall_s=wall, **report.errors))
        etas.append(report.eta)
        reports.append(report)
        if on_level is not None:
            on_level(level=level, space=space, u=u, lower=lower,
                     report=report, sigma0=sigma0, v0=v0,
                     record=records[-1])

        level += 1
        if levels is not None and level >= levels:
            break
        if max_ndof is not None and ndof >= max_ndof:
            break
        if refine == "adaptive":
            marked = dorfler_mark(report.marking, theta)
            if len(marked) == 0:
                break
            mesh = refine_bisect(mesh, marked)
        else:
            mesh = refine_uniform(mesh)
        u_prev, space_prev = u, space
    return RunResult(records, mesh, etas, reports)


def fit_rate(x, y, npoints=3):
    """Least-squares slope of log(y) against log(x) on the last points."""
    x = np.asarray(x, dtype=float)[-npoints:]
    y = np.asarray(y, dtype=float)[-npoints:]
    if np.any(y <= 0) or np.any(x <= 0):
        raise ValueError("rate fit needs positive data")
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])
