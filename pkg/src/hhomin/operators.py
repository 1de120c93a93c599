"""Hybrid high-order spaces, reconstruction operators and stabilizations.

The primal space couples per-cell polynomials of degree k+1 with per-face
polynomials of degree k; the dual space couples per-cell vector fields of
degree k with per-face normal-trace polynomials of degree k.  All operators
(gradient, divergence, potential and dual potential reconstruction) are
assembled cell-by-cell in orthonormal coefficient bases, so L2 pairings are
plain coefficient dot products.

Scalar unknowns in 2D throughout; face data is stored relative to the face
normal and the face parameterization of the mesh, and each adjacent cell
applies its orientation sign.
"""

import numpy as np
from dataclasses import dataclass

from . import mesh as meshmod
from .basis import (CellBasisSet, FaceBasisSet, poly_dim, project_onto_cells,
                    project_onto_faces)
from .quadrature import cell_quadrature, face_quadrature, map_to_cells, \
    map_to_segments


@dataclass
class PrimalDofs:
    """Cell coefficients of degree k+1 plus face coefficients of degree k."""
    k: int
    cell: np.ndarray    # (NC, dim P_{k+1})
    face: np.ndarray    # (NF, k+1)

    def copy(self):
        return PrimalDofs(self.k, self.cell.copy(), self.face.copy())


@dataclass
class DualDofs:
    """Cell vector-field coefficients plus face normal-trace coefficients."""
    k: int
    cell: np.ndarray    # (NC, dim P_k, 2)
    face: np.ndarray    # (NF, k+1)

    def copy(self):
        return DualDofs(self.k, self.cell.copy(), self.face.copy())


class HHOSpace:
    """Per-mesh factory for all cell-local operator matrices."""

    def __init__(self, mesh, k):
        if k < 0:
            raise ValueError("face degree k must be nonnegative")
        self.mesh = mesh
        self.k = k
        self.mk = poly_dim(k)
        self.mk1 = poly_dim(k + 1)
        self.mkm1 = poly_dim(k - 1)
        self.nf = k + 1
        self.nloc_v = self.mk1 + 3 * self.nf
        self.nloc_w = 2 * self.mk + 3 * self.nf

        self.cell_basis = CellBasisSet(mesh, k + 1)
        self.face_basis = FaceBasisSet(mesh, k)
        self._rule_cache = {}
        self._face_rule_cache = {}

        self._build_face_moments()
        self._build_cell_tensors()
        self._build_operator_matrices()
        self._self_check()

        self.dirichlet_faces = mesh.face_labels == meshmod.DIRICHLET
        self.neumann_faces = mesh.face_labels == meshmod.NEUMANN
        self.interior_faces = mesh.face_labels == meshmod.INTERIOR

    # -- precomputed data -------------------------------------------------

    def _build_face_moments(self):
        mesh = self.mesh
        rule = face_quadrature(2 * self.k + 4)
        a = mesh.vertices[mesh.face_vertices[:, 0]]
        b = mesh.vertices[mesh.face_vertices[:, 1]]
        self.fq_t = rule.points
        self.fq_pts, self.fq_w = map_to_segments(rule, a, b)
        self.fb_vals = self.face_basis.values(rule.points)   # (NF, nq, nf)

        kplus = mesh.face_cells[:, 0]
        kminus = np.where(mesh.face_cells[:, 1] >= 0,
                          mesh.face_cells[:, 1], kplus)
        self.cbt_plus = self.cell_basis.values(self.fq_pts, kplus)
        self.cbt_minus = self.cell_basis.values(self.fq_pts, kminus)
        gp = self.cell_basis.gradients(self.fq_pts, kplus)
        gm = self.cell_basis.gradients(self.fq_pts, kminus)
        nrm = mesh.face_normals

        def moments(vals):
            return np.einsum("fqa,fqi,fq->fai", self.fb_vals, vals, self.fq_w)

        self.tr_plus = moments(self.cbt_plus)        # (NF, nf, mk1)
        self.tr_minus = moments(self.cbt_minus)
        self.gtr_plus = moments(np.einsum("fqid,fd->fqi", gp, nrm))
        self.gtr_minus = moments(np.einsum("fqid,fd->fqi", gm, nrm))
        bnd = mesh.face_cells[:, 1] < 0
        self.tr_minus[bnd] = 0.0
        self.gtr_minus[bnd] = 0.0

        # per cell and local face: moments seen from that cell's side
        cf = mesh.cell_faces
        is_plus = mesh.cell_face_signs > 0
        self.ctr = np.where(is_plus[:, :, None, None],
                            self.tr_plus[cf], self.tr_minus[cf])
        self.cgtr = np.where(is_plus[:, :, None, None],
                             self.gtr_plus[cf], self.gtr_minus[cf])

    def _build_cell_tensors(self):
        mesh = self.mesh
        rule = cell_quadrature(2 * self.k + 4)
        self.cq_pts, self.cq_w = map_to_cells(rule, mesh.vertices, mesh.cells,
                                              mesh.vertices)
        self.cb_vals = self.cell_basis.values(self.cq_pts)
        self.cb_grads = self.cell_basis.gradients(self.cq_pts)
        # Tg[c, i, d, j] = integral over K of (d/dx_d basis_i) basis_j
        self.Tg = np.einsum("cqid,cqj,cq->cidj", self.cb_grads, self.cb_vals,
                            self.cq_w)

    def _build_operator_matrices(self):
        NC = self.mesh.num_cells
        mk, mk1, nf = self.mk, self.mk1, self.nf
        sg = self.mesh.cell_face_signs
        nrm = self.mesh.face_normals[self.mesh.cell_faces]   # (NC, 3, 2)

        # gradient reconstruction, coefficients of basis_i e_d
        D = np.zeros((NC, mk, 2, self.nloc_v))
        D[:, :, :, :mk1] = -self.Tg[:, :mk]
        face_term = np.einsum("cl,cld,clai->cidla",
                              sg, nrm, self.ctr[:, :, :, :mk])
        D[:, :, :, mk1:] = face_term.reshape(NC, mk, 2, 3 * nf)
        self.grad_mat = D

        # divergence reconstruction; dual cell block flattened (j, d)
        V = np.zeros((NC, mk, self.nloc_w))
        V[:, :, :2 * mk] = -np.transpose(self.Tg[:, :mk, :, :mk],
                                         (0, 1, 3, 2)).reshape(NC, mk, 2 * mk)
        V[:, :, 2 * mk:] = np.einsum("cl,clai->cila", sg,
                                     self.ctr[:, :, :, :mk]
                                     ).reshape(NC, mk, 3 * nf)
        self.div_mat = V

        # gradient Gram and Laplacian pairing from Tg (exact algebra)
        Tk = self.Tg[:, :, :, :mk]
        self.grad_gram = np.einsum("cidl,cjdl->cij", Tk, Tk)
        lap = np.einsum("cidl,cldj->cij", self.Tg[:, :, :, :mk1],
                        self.Tg[:, :mk1])

        # potential reconstruction: Neumann-type local problem with the
        # cell mean fixed to the mean of the cell unknown
        rhs = np.zeros((NC, mk1, self.nloc_v))
        rhs[:, :, :mk1] = -lap
        rhs[:, :, mk1:] = np.einsum("cl,clai->cila", sg, self.cgtr
                                    ).reshape(NC, mk1, 3 * nf)
        P = np.zeros((NC, mk1, self.nloc_v))
        P[:, 1:, :] = np.linalg.solve(self.grad_gram[:, 1:, 1:],
                                      rhs[:, 1:, :])
        P[:, 0, 0] = 1.0
        self.pot_mat = P

        # orthonormal basis of the complement of piecewise gradients in
        # P_k(K)^2, from the SVD of the gradient coefficient columns
        egrad = np.transpose(self.Tg[:, 1:, :, :mk], (0, 3, 2, 1)
                             ).reshape(NC, 2 * mk, mk1 - 1)
        u, s, _ = np.linalg.svd(egrad)
        self.nz = 2 * mk - (mk1 - 1)
        self.grad_complement = u[:, :, mk1 - 1:]   # (NC, 2mk, nz)
        if len(s):
            smin = s.min()
            if smin <= 1e-10:
                raise RuntimeError(
                    f"degenerate cell: gradient basis nearly singular "
                    f"(sigma_min={smin:.3e})")

        # residual maps v -> v_S - proj_S v_K per cell and local face
        R = np.zeros((NC, 3, nf, self.nloc_v))
        R[:, :, :, :mk1] = -self.ctr
        for ell in range(3):
            R[:, ell, :, mk1 + ell * nf:mk1 + (ell + 1) * nf] = np.eye(nf)
        self.res_mat = R

        self.h_Sk = self.mesh.h_S[self.mesh.cell_faces]   # (NC, 3)

    def _self_check(self):
        rng = np.random.default_rng(20240517)
        co = rng.standard_normal((self.k + 2, self.k + 2))

        def v(p):
            return np.polynomial.polynomial.polyval2d(p[..., 0], p[..., 1], co)

        vh = interp_primal(self, v)
        got = gradient_reconstruction(self, vh)

        def gv(p):
            cx = np.polynomial.polynomial.polyder(co, axis=0)
            cy = np.polynomial.polynomial.polyder(co, axis=1)
            return np.stack([
                np.polynomial.polynomial.polyval2d(p[..., 0], p[..., 1], cx),
                np.polynomial.polynomial.polyval2d(p[..., 0], p[..., 1], cy),
            ], axis=-1)

        want = project_onto_cells(self.cell_basis, gv,
                                  rule_data=(self.cq_pts, self.cq_w,
                                             self.cb_vals))[:, :self.mk]
        err = np.abs(got - want).max()
        scale = 1.0 + np.abs(want).max()
        if err > 1e-10 * scale:
            raise RuntimeError(
                f"commuting-property self check failed: {err:.3e}")

    # -- quadrature data caches -------------------------------------------

    def cell_rule_data(self, exactness, grads=False):
        """(points, weights, basis values[, basis gradients]) per cell."""
        key = (exactness, grads)
        if key not in self._rule_cache:
            rule = cell_quadrature(exactness)
            pts, w = map_to_cells(rule, self.mesh.vertices, self.mesh.cells,
                                  self.mesh.vertices)
            vals = self.cell_basis.values(pts)
            if grads:
                g = self.cell_basis.gradients(pts)
                self._rule_cache[key] = (pts, w, vals, g)
            else:
                self._rule_cache[key] = (pts, w, vals)
        return self._rule_cache[key]

    def face_rule_data(self, exactness):
        """(params, points, weights, face basis, cell traces +/-)."""
        if exactness not in self._face_rule_cache:
            mesh = self.mesh
            rule = face_quadrature(exactness)
            a = mesh.vertices[mesh.face_vertices[:, 0]]
            b = mesh.vertices[mesh.face_vertices[:, 1]]
            pts, w = map_to_segments(rule, a, b)
            fbv = self.face_basis.values(rule.points)
            kplus = mesh.face_cells[:, 0]
            kminus = np.where(mesh.face_cells[:, 1] >= 0,
                              mesh.face_cells[:, 1], kplus)
            cp = self.cell_basis.values(pts, kplus)
            cm = self.cell_basis.values(pts, kminus)
            self._face_rule_cache[exactness] = (rule.points, pts, w, fbv,
                                                cp, cm)
        return self._face_rule_cache[exactness]

    # -- dof layout helpers -----------------------------------------------

    def zero_primal(self):
        return PrimalDofs(self.k,
                          np.zeros((self.mesh.num_cells, self.mk1)),
                          np.zeros((self.mesh.num_faces, self.nf)))

    def zero_dual(self):
        return DualDofs(self.k,
                        np.zeros((self.mesh.num_cells, self.mk, 2)),
                        np.zeros((self.mesh.num_faces, self.nf)))

    def primal_local(self, v):
        """Per-cell local vectors (NC, nloc_v)."""
        fy = v.face[self.mesh.cell_faces].reshape(self.mesh.num_cells, -1)
        return np.concatenate([v.cell, fy], axis=1)

    def dual_local(self, t):
        fy = t.face[self.mesh.cell_faces].reshape(self.mesh.num_cells, -1)
        return np.concatenate([t.cell.reshape(self.mesh.num_cells, -1), fy],
                              axis=1)


# -- interpolation ---------------------------------------------------------

def interp_primal(space, v):
    """Cell projections of degree k+1 and face projections of degree k."""
    cell = project_onto_cells(space.cell_basis, v,
                              rule_data=(space.cq_pts, space.cq_w,
                                         space.cb_vals))
    fq = np.asarray(v(space.fq_pts))
    face = np.einsum("fq,fqa,fq->fa", fq, space.fb_vals, space.fq_w)
    return PrimalDofs(space.k, cell, face)


def interp_dual(space, tau):
    """Cell projections of the field, face projections of normal traces."""
    cell = project_onto_cells(space.cell_basis, tau,
                              rule_data=(space.cq_pts, space.cq_w,
                                         space.cb_vals))[:, :space.mk, :]
    tq = np.asarray(tau(space.fq_pts))
    tn = np.einsum("fqd,fd->fq", tq, space.mesh.face_normals)
    face = np.einsum("fq,fqa,fq->fa", tn, space.fb_vals, space.fq_w)
    return DualDofs(space.k, cell, face)


# -- reconstruction operators ----------------------------------------------

def gradient_reconstruction(space, v):
    """Cell-wise gradient reconstruction, coefficients (NC, dim P_k, 2)."""
    return np.einsum("cidl,cl->cid", space.grad_mat, space.primal_local(v))


def divergence_reconstruction(space, t):
    """Cell-wise divergence reconstruction, coefficients (NC, dim P_k)."""
    return np.einsum("cil,cl->ci", space.div_mat, space.dual_local(t))


def potential_reconstruction(space, v):
    """Cell-wise potential of degree k+1 with matched cell means."""
    return np.einsum("cil,cl->ci", space.pot_mat, space.primal_local(v))


def dual_potential_reconstruction(space, t, div=None):
    """Flux reconstruction in P_k(K)^2 from divergence and trace data.

    Solves the cell-local potential problem driven by the reconstructed
    divergence and the face data, then adds back the component of the cell
    field in the orthogonal complement of the gradients.
    """
    if div is None:
        div = divergence_reconstruction(space, t)
    NC = space.mesh.num_cells
    sg = space.mesh.cell_face_signs
    rhs = np.zeros((NC, space.mk1))
    rhs[:, :space.mk] = -div
    fc = t.face[space.mesh.cell_faces]          # (NC, 3, nf)
    rhs += np.einsum("cl,clai,cla->ci", sg, space.ctr, fc)
    phi = np.linalg.solve(space.grad_gram[:, 1:, 1:], rhs[:, 1:, None])[..., 0]
    out = np.einsum("cjdi,cj->cid", space.Tg[:, 1:, :, :space.mk], phi)
    zc = np.einsum("cmz,cm->cz", space.grad_complement,
                   t.cell.reshape(NC, -1))
    out += np.einsum("cmz,cz->cm", space.grad_complement, zc
                     ).reshape(NC, space.mk, 2)
    return out


# -- stabilizations ----------------------------------------------------------

def residual_coeffs(space, v):
    """Face residuals v_S - proj_S v_K per cell and local face, (NC,3,nf)."""
    return np.einsum("cfan,cn->cfa", space.res_mat, space.primal_local(v))


def stab_trace_coeffs(space, u, r):
    """Coefficients of the projected residual power per cell and face.

    For r = 2 this is the residual itself; otherwise the pointwise power
    |rho|^{r-2} rho is evaluated at face quadrature points and projected.
    """
    rho = residual_coeffs(space, u)
    if r == 2:
        return rho
    exact = int(np.ceil(r * space.k + space.k)) + 2
    _, _, w, fbv, _, _ = space.face_rule_data(exact)
    fbv_c = fbv[space.mesh.cell_faces]      # (NC, 3, nq, nf)
    w_c = w[space.mesh.cell_faces]
    vals = np.einsum("cfqa,cfa->cfq", fbv_c, rho)
    tv = np.abs(vals) ** (r - 2.0) * vals
    return np.einsum("cfq,cfqa,cfq->cfa", tv, fbv_c, w_c)


def stab_primal(space, u, v, r, s):
    """Face penalty pairing; equals the r-power penalty when u = v."""
    t = stab_trace_coeffs(space, u, r)
    rho_v = residual_coeffs(space, v)
    hs = space.h_Sk ** (-s)
    return float(np.einsum("cf,cfa,cfa->", hs, t, rho_v))


def stab_primal_energy(space, v, r, s):
    """sum over cells and faces of h^-s int |v_S - proj v_K|^r."""
    rho = residual_coeffs(space, v)
    hs = space.h_Sk ** (-s)
    if r == 2:
        return float(np.einsum("cf,cfa,cfa->", hs, rho, rho))
    exact = int(np.ceil(r * space.k + space.k)) + 2
    _, _, w, fbv, _, _ = space.face_rule_data(exact)
    fbv_c = fbv[space.mesh.cell_faces]
    w_c = w[space.mesh.cell_faces]
    vals = np.einsum("cfqa,cfa->cfq", fbv_c, rho)
    return float(np.einsum("cf,cfq,cfq->", hs, np.abs(vals) ** r, w_c))


def stab_dual(space, t, r, s, normal_convention="consistent", rec=None):
    """Dual stabilization: face mismatch of the reconstructed flux.

    normal_convention "consistent" compares normal traces as seen from each
    cell (the variant under which weak duality and the decay of the
    stabilization for smooth interpolants hold); "printed" compares the
    stored face function against the trace times the cell-outward normal
    without re-orienting the face function.  See the package docs.
    """
    if r <= 1:
        raise ValueError("stabilization exponent r must exceed 1")
    rprime = r / (r - 1.0)
    if rec is None:
        rec = dual_potential_reconstruction(space, t)
    exact = int(np.ceil(rprime * space.k + space.k)) + 2
    _, _, w, fbv, cp, cm = space.face_rule_data(exact)
    cf = space.mesh.cell_faces
    sg = space.mesh.cell_face_signs
    nrm = space.mesh.face_normals[cf]
    ct = np.where((sg > 0)[:, :, None, None], cp[cf, :, :space.mk],
                  cm[cf, :, :space.mk])
    recn = np.einsum("cfqi,cid,cfd->cfq", ct, rec, nrm)
    tvals = np.einsum("cfqa,cfa->cfq", fbv[cf], t.face[cf])
    if normal_convention == "consistent":
        g = tvals - recn
    elif normal_convention == "printed":
        g = tvals - sg[:, :, None] * recn
    else:
        raise ValueError(f"unknown normal convention {normal_convention!r}")
    hs = space.h_Sk ** (s / (r - 1.0))
    return float(np.einsum("cf,cfq,cfq->", hs, np.abs(g) ** rprime, w[cf]))
