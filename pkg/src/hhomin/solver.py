"""Newton minimization of the discrete energy over the free unknowns.

Global dof layout: all cell blocks first, then all face blocks; Dirichlet
face coefficients are fixed to the projected boundary datum and eliminated.
The Hessian factorization falls back to a growing diagonal shift whenever
the factorization fails or produces a non-descent direction.
"""

import numpy as np
import scipy.sparse as sparse
from dataclasses import dataclass, field
from scipy.sparse.linalg import splu

from .energy import cell_flux, energy_exactness
from .operators import (PrimalDofs, residual_coeffs, stab_primal_energy,
                        stab_trace_coeffs)

ARMIJO_C = 1e-4
MAX_BACKTRACKS = 40


@dataclass
class SolveReport:
    iterations: int = 0
    grad_norm: float = np.inf
    energy: float = np.nan
    backtracks: int = 0
    levenberg_shifts: int = 0
    converged: bool = False
    message: str = ""


class DofMap:
    """Free/fixed split of the global coefficient vector."""

    def __init__(self, space, dirichlet_values=None):
        self.space = space
        mesh = space.mesh
        self.n_cell = mesh.num_cells * space.mk1
        self.n_total = self.n_cell + mesh.num_faces * space.nf

        fixed = np.zeros(self.n_total, dtype=bool)
        for f in np.nonzero(space.dirichlet_faces)[0]:
            fixed[self.n_cell + f * space.nf:
                  self.n_cell + (f + 1) * space.nf] = True
        self.fixed = fixed
        self.free = ~fixed
        self.n_free = int(self.free.sum())
        self.full_to_free = np.full(self.n_total, -1, dtype=np.int64)
        self.full_to_free[self.free] = np.arange(self.n_free)

        self.fixed_values = np.zeros(self.n_total)
        if dirichlet_values is not None:
            face_part = np.zeros((mesh.num_faces, space.nf))
            face_part[space.dirichlet_faces] = \
                dirichlet_values[space.dirichlet_faces]
            self.fixed_values[self.n_cell:] = face_part.ravel()

        # per-cell local-to-global dof indices
        nf, mk1 = space.nf, space.mk1
        cf = mesh.cell_faces
        gidx = np.empty((mesh.num_cells, space.nloc_v), dtype=np.int64)
        gidx[:, :mk1] = (np.arange(mesh.num_cells)[:, None] * mk1
                         + np.arange(mk1)[None, :])
        for ell in range(3):
            gidx[:, mk1 + ell * nf:mk1 + (ell + 1) * nf] = \
                self.n_cell + cf[:, ell:ell + 1] * nf + np.arange(nf)[None, :]
        self.gidx = gidx

        rows = np.repeat(gidx, space.nloc_v, axis=1).ravel()
        cols = np.tile(gidx, (1, space.nloc_v)).ravel()
        rf, cfree = self.full_to_free[rows], self.full_to_free[cols]
        self.keep = (rf >= 0) & (cfree >= 0)
        self.rows_free = rf[self.keep]
        self.cols_free = cfree[self.keep]

    def to_dofs(self, x_free):
        x = self.fixed_values.copy()
        x[self.free] = x_free
        space = self.space
        return PrimalDofs(space.k,
                          x[:self.n_cell].reshape(-1, space.mk1),
                          x[self.n_cell:].reshape(-1, space.nf))

    def from_dofs(self, v):
        return np.concatenate([v.cell.ravel(), v.face.ravel()])[self.free]


class EnergyAssembler:
    """Value, gradient and Hessian of the discrete energy."""

    def __init__(self, space, density, lower, r, s):
        self.space = space
        self.density = density
        self.lower = lower
        self.r = r
        self.s = s
        exact = energy_exactness(density, space.k)
        pts, w, vals = space.cell_rule_data(exact)
        self.w = w
        self.bvals = vals[:, :, :space.mk]
        # values of the reconstructed-gradient map at quadrature points,
        # per local dof: (NC, nq, 2, nloc)
        self.gq = np.einsum("cqi,cidl->cqdl", self.bvals, space.grad_mat)
        self.hs = space.h_Sk ** (-s)
        if r == 2:
            self.stab_hess = np.einsum("cf,cfan,cfam->cnm", self.hs,
                                       space.res_mat, space.res_mat)

    def dh_values(self, xloc):
        return np.einsum("cqdl,cl->cqd", self.gq, xloc)

    def energy(self, v, xloc=None):
        space = self.space
        if xloc is None:
            xloc = space.primal_local(v)
        Dq = self.dh_values(xloc)
        bulk = float(np.einsum("cq,cq->", self.density.value(Dq), self.w))
        load = float(np.einsum("ci,ci->", self.lower.f_h,
                               v.cell[:, :space.mk]))
        return bulk - load + stab_primal_energy(space, v, self.r,
                                                self.s) / self.r

    def gradient_local(self, v):
        """Per-cell local gradients (NC, nloc) and the energy value."""
        space = self.space
        xloc = space.primal_local(v)
        Dq = self.dh_values(xloc)
        dpsi = self.density.grad(Dq)
        g = np.einsum("cqd,cqdl,cq->cl", dpsi, self.gq, self.w)
        g[:, :space.mk] -= self.lower.f_h
        t = stab_trace_coeffs(space, v, self.r)
        g += np.einsum("cf,cfa,cfan->cn", self.hs, t, space.res_mat)
        bulk = float(np.einsum("cq,cq->", self.density.value(Dq), self.w))
        load = float(np.einsum("ci,ci->", self.lower.f_h,
                               v.cell[:, :space.mk]))
        E = bulk - load + stab_primal_energy(space, v, self.r, self.s) / self.r
        return E, g

    def hessian_local(self, v):
        space = self.space
        xloc = space.primal_local(v)
        Dq = self.dh_values(xloc)
        d2 = self.density.hess(Dq)
        tmp = np.einsum("cqde,cqdl->cqel", d2, self.gq)
        H = np.einsum("cqel,cqem,cq->clm", tmp, self.gq, self.w,
                      optimize=True)
        if self.r == 2:
            H += self.stab_hess
        else:
            rho = residual_coeffs(space, v)
            exact = int(np.ceil(self.r * space.k + space.k)) + 2
            _, _, wf, fbv, _, _ = space.face_rule_data(exact)
            fbv_c = fbv[space.mesh.cell_faces]
            wf_c = wf[space.mesh.cell_faces]
            vals = np.einsum("cfqa,cfa->cfq", fbv_c, rho)
            wgt = (self.r - 1.0) * np.abs(vals) ** (self.r - 2.0)
            mloc = np.einsum("cfq,cfqa,cfqb,cfq->cfab", wgt, fbv_c, fbv_c,
                             wf_c)
            H += np.einsum("cf,cfab,cfan,cfbm->cnm", self.hs, mloc,
                           space.res_mat, space.res_mat, optimize=True)
        return H


def assemble_energy_gradient(space, v, density, lower, r, s, dofmap=None):
    """Energy and assembled gradient over the free dofs."""
    if dofmap is None:
        dofmap = DofMap(space)
    asm = EnergyAssembler(space, density, lower, r, s)
    E, gloc = asm.gradient_local(v)
    g = np.zeros(dofmap.n_total)
    np.add.at(g, dofmap.gidx.ravel(), gloc.ravel())
    return E, g[dofmap.free]


def assemble_hessian(space, v, density, lower, r, s, dofmap=None):
    """Sparse Hessian over the free dofs (CSC)."""
    if dofmap is None:
        dofmap = DofMap(space)
    asm = EnergyAssembler(space, density, lower, r, s)
    H = asm.hessian_local(v)
    data = H.reshape(len(H), -1).ravel()[dofmap.keep]
    return sparse.csc_matrix(
        (data, (dofmap.rows_free, dofmap.cols_free)),
        shape=(dofmap.n_free, dofmap.n_free))


def dirichlet_face_values(space, data, singular_vertex=None):
    """Projected Dirichlet datum per face (zero for data=None).

    Boundary faces with an endpoint at `singular_vertex` are projected with
    a rule graded toward that endpoint, for data with singular derivatives.
    """
    if data is None:
        return np.zeros((space.mesh.num_faces, space.nf))
    vals = np.asarray(data(space.fq_pts))
    coeffs = np.einsum("fq,fqa,fq->fa", vals, space.fb_vals, space.fq_w)
    if singular_vertex is not None:
        from .quadrature import face_quadrature, graded_segment_rule
        mesh = space.mesh
        rule = face_quadrature(2 * space.k + 4)
        sv = np.asarray(singular_vertex)
        for f in np.nonzero(space.dirichlet_faces)[0]:
            ends = mesh.vertices[mesh.face_vertices[f]]
            hit = np.linalg.norm(ends - sv, axis=1) < 1e-12
            if not hit.any():
                continue
            # grade toward the singular endpoint, in face parameterization
            a, b = (ends[0], ends[1]) if hit[0] else (ends[1], ends[0])
            pts, w = graded_segment_rule(a, b, rule)
            t = (np.linalg.norm(pts - ends[0], axis=1)
                 / np.linalg.norm(ends[1] - ends[0]))
            fb = space.face_basis.values(t, np.array([f]))[0]
            coeffs[f] = np.einsum("q,qa,q->a", data(pts), fb, w)
    return coeffs


def minimize(space, density, lower, r, s, dirichlet_values=None, x0=None,
             grad_tol=1e-10, step_tol=1e-14, max_iter=1000):
    """Damped Newton minimization; returns (PrimalDofs, SolveReport)."""
    dofmap = DofMap(space, dirichlet_values)
    asm = EnergyAssembler(space, density, lower, r, s)
    report = SolveReport()

    if x0 is None:
        x = np.zeros(dofmap.n_free)
    else:
        x = dofmap.from_dofs(x0) if isinstance(x0, PrimalDofs) else x0.copy()

    def eval_eg(xf):
        v = dofmap.to_dofs(xf)
        E, gloc = asm.gradient_local(v)
        g = np.zeros(dofmap.n_total)
        np.add.at(g, dofmap.gidx.ravel(), gloc.ravel())
        return v, E, g[dofmap.free]

    v, E, g = eval_eg(x)
    for _ in range(max_iter):
        gnorm = np.linalg.norm(g)
        report.grad_norm = gnorm
        report.energy = E
        if gnorm <= grad_tol * (1.0 + abs(E)):
            report.converged = True
            report.message = "gradient tolerance reached"
            break

        Hloc = asm.hessian_local(v)
        data = Hloc.reshape(len(Hloc), -1).ravel()[dofmap.keep]
        H = sparse.csc_matrix(
            (data, (dofmap.rows_free, dofmap.cols_free)),
            shape=(dofmap.n_free, dofmap.n_free))
        base = max(abs(H.diagonal()).max(), 1.0)

        # Newton step with a growing diagonal shift whenever the
        # factorization fails, the direction does not descend, or the
        # line search cannot make progress
        shift = 0.0
        accepted = False
        for _ in range(30):
            try:
                Hs = (H + shift * sparse.identity(dofmap.n_free,
                                                  format="csc")
                      if shift else H)
                d = splu(Hs).solve(-g)
            except RuntimeError:
                d = None
            if d is None or not np.all(np.isfinite(d)) or g @ d >= 0:
                shift = 1e-12 * base if shift == 0.0 else shift * 10.0
                report.levenberg_shifts += 1
                continue
            slope = g @ d
            # below the rounding floor of the energy the sufficient-decrease
            # test is meaningless; the full Newton step is safe for a
            # convex energy near its minimizer
            floor = 16.0 * np.finfo(float).eps * (1.0 + abs(E))
            t = 1.0
            n_back = 0
            if -slope <= floor:
                v_new, E_new, g_new = eval_eg(x + d)
                accepted = True
                break
            while n_back < MAX_BACKTRACKS:
                v_new, E_new, g_new = eval_eg(x + t * d)
                if E_new <= E + ARMIJO_C * t * slope:
                    break
                t *= 0.5
                n_back += 1
            report.backtracks += n_back
            if n_back < MAX_BACKTRACKS:
                accepted = True
                break
            shift = 1e-8 * base if shift == 0.0 else shift * 100.0
            report.levenberg_shifts += 1
        if not accepted:
            report.message = "no descent step found"
            break

        step = t * np.linalg.norm(d)
        x = x + t * d
        v, E, g = v_new, E_new, g_new
        report.iterations += 1
        if step <= step_tol * (1.0 + np.linalg.norm(x)):
            report.grad_norm = np.linalg.norm(g)
            report.energy = E
            report.converged = \
                report.grad_norm <= grad_tol * (1.0 + abs(E))
            report.message = "step tolerance reached"
            break
    else:
        report.message = "iteration budget exhausted"

    report.energy = E
    report.grad_norm = np.linalg.norm(g)
    return v, report


def solve_linear_quadratic(space, density, lower, r, s,
                           dirichlet_values=None):
    """Direct solve of the quadratic case (constant Hessian) for checks."""
    dofmap = DofMap(space, dirichlet_values)
    zero = dofmap.to_dofs(np.zeros(dofmap.n_free))
    _, g0 = assemble_energy_gradient(space, zero, density, lower, r, s,
                                     dofmap)
    H = assemble_hessian(space, zero, density, lower, r, s, dofmap)
    x = splu(H).solve(-g0)
    return dofmap.to_dofs(x)


def check_euler_lagrange(space, u, density, lower, r, s):
    """Residual of the face-wise equilibrium identity.

    On every face away from the Dirichlet boundary the jump of the cell
    flux normal trace must balance the stabilization traces; the report
    carries the worst absolute and relative face residual in L2(S).
    """
    sigma = cell_flux(space, u, density)
    mesh = space.mesh
    nrm = mesh.face_normals
    kp = mesh.face_cells[:, 0]
    km = np.where(mesh.face_cells[:, 1] >= 0, mesh.face_cells[:, 1], kp)
    mom_p = np.einsum("fai,fid,fd->fa", space.tr_plus[:, :, :space.mk],
                      sigma[kp], nrm)
    mom_m = np.einsum("fai,fid,fd->fa", space.tr_minus[:, :, :space.mk],
                      sigma[km], nrm)
    jump = np.where((mesh.face_cells[:, 1] >= 0)[:, None],
                    mom_p - mom_m, mom_p)

    t = stab_trace_coeffs(space, u, r)
    hst = space.h_Sk[:, :, None] ** (-s) * t
    tsum = np.zeros_like(jump)
    np.add.at(tsum, mesh.cell_faces.ravel(),
              hst.reshape(-1, space.nf))

    resid = jump + tsum
    check = ~space.dirichlet_faces
    rnorm = np.linalg.norm(resid, axis=1)
    scale = 1.0 + np.linalg.norm(jump, axis=1) + np.linalg.norm(tsum, axis=1)
    out = {
        "max_abs": float(rnorm[check].max(initial=0.0)),
        "max_rel": float((rnorm[check] / scale[check]).max(initial=0.0)),
        "per_face": rnorm,
    }
    return out
