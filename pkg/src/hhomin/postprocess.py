"""Postprocessing of a discrete minimizer.

Three objects are built from a converged solution: the discrete dual
variable (cell flux projections with equilibrated face traces), a normal-
trace continuous Raviart-Thomas flux whose divergence equals the projected
load exactly, and a continuous displacement obtained by nodal averaging of
the cell unknowns.
"""

import numpy as np
from dataclasses import dataclass

from . import mesh as meshmod
from .basis import poly_dim
from .energy import cell_flux
from .operators import DualDofs, divergence_reconstruction, stab_trace_coeffs


def dual_traces(space, u, density, lower, r, s, div_tol=1e-7):
    """Discrete dual variable from the solved primal unknowns.

    Face traces combine the average flux trace with the stabilization
    traces so that the reconstructed divergence equals -f_h; a violation
    of that identity signals an unconverged solve and raises.
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

    hsT = space.h_Sk[:, :, None] ** (-s) * stab_trace_coeffs(space, u, r)
    t_plus = np.zeros((mesh.num_faces, space.nf))
    t_minus = np.zeros((mesh.num_faces, space.nf))
    for ell in range(3):
        f = mesh.cell_faces[:, ell]
        plus = mesh.cell_face_signs[:, ell] > 0
        t_plus[f[plus]] = hsT[plus, ell]
        t_minus[f[~plus]] = hsT[~plus, ell]

    interior = space.interior_faces[:, None]
    dirich = space.dirichlet_faces[:, None]
    face = np.where(interior, 0.5 * (mom_p + mom_m) + 0.5 * (t_plus - t_minus),
                    np.where(dirich, mom_p + t_plus, 0.0))

    sig_h = DualDofs(space.k, sigma, face)
    resid = divergence_reconstruction(space, sig_h) + lower.f_h
    scale = 1.0 + np.linalg.norm(lower.f_h)
    if np.linalg.norm(resid) > div_tol * scale:
        raise RuntimeError(
            "dual variable violates the divergence identity "
            f"({np.linalg.norm(resid):.3e} vs scale {scale:.3e}); "
            "the primal solve did not converge")
    return sig_h


class RTFunction:
    """Cellwise Raviart-Thomas field with single-valued normal traces."""

    def __init__(self, space, coeffs):
        self.space = space
        self.coeffs = coeffs            # (NC, (k+1)(k+3))
        self.k = space.k

    def _split(self, cells):
        c = self.coeffs[cells]
        mk = self.space.mk
        return c[..., :2 * mk].reshape(c.shape[:-1] + (mk, 2)), \
            c[..., 2 * mk:]

    def _bubbles(self, pts, cells):
        """xi * q_j(xi) for homogeneous monomials q_j of degree k."""
        basis = self.space.cell_basis
        xi = (pts - basis.centers[cells][..., None, :]) \
            / basis.scales[cells][..., None, None]
        a = np.arange(self.k + 1)
        q = xi[..., 0:1] ** a * xi[..., 1:2] ** (self.k - a)   # (...,nq,k+1)
        return xi[..., None, :] * q[..., None], q

    def values(self, pts, cells=None):
        if cells is None:
            cells = np.arange(self.space.mesh.num_cells)
        pk, bc = self._split(cells)
        vals = self.space.cell_basis.values(pts, cells)[..., :self.space.mk]
        out = np.einsum("...qi,...id->...qd", vals, pk)
        bub, _ = self._bubbles(pts, cells)
        out += np.einsum("...qjd,...j->...qd", bub, bc)
        return out

    def divergence(self, pts, cells=None):
        if cells is None:
            cells = np.arange(self.space.mesh.num_cells)
        pk, bc = self._split(cells)
        grads = self.space.cell_basis.gradients(pts, cells)[..., :self.space.mk, :]
        out = np.einsum("...qid,...id->...q", grads, pk)
        _, q = self._bubbles(pts, cells)
        h = self.space.cell_basis.scales[cells]
        out += (self.k + 2.0) / h[..., None] * \
            np.einsum("...qj,...j->...q", q, bc)
        return out

    def values_single(self, c, pts):
        return self.values(pts[None, :, :], np.array([c]))[0]


def rt_reconstruct(space, sig_h, lower=None, div_tol=1e-8):
    """H(div)-conforming Raviart-Thomas flux from the dual variable.

    Face normal-trace moments are set to the face data of the dual
    variable (stored once per face, so conformity is structural), interior
    moments to the cell flux projections.  When `lower` is given, the
    pointwise identity div = -f_h is verified.
    """
    mesh = space.mesh
    k, mk, nf, mkm1 = space.k, space.mk, space.nf, space.mkm1
    NC = mesh.num_cells
    ndof = (k + 1) * (k + 3)

    rt = RTFunction(space, np.zeros((NC, ndof)))
    V = np.zeros((NC, ndof, ndof))
    rhs = np.zeros((NC, ndof))

    # face rows: normal moments against the face basis, relative to the
    # (global) face normal
    nrm = mesh.face_normals[mesh.cell_faces]          # (NC, 3, 2)
    V[:, :3 * nf, :2 * mk] = np.einsum(
        "cfai,cfd->cfaid", space.ctr[:, :, :, :mk], nrm
    ).reshape(NC, 3 * nf, 2 * mk)

    # face rows for the bubble functions, via face quadrature from each
    # cell's side
    fq = space.fq_pts[mesh.cell_faces]                 # (NC, 3, nq, 2)
    wq = space.fq_w[mesh.cell_faces]
    fbv = space.fb_vals[mesh.cell_faces]               # (NC, 3, nq, nf)
    cells3 = np.repeat(np.arange(NC)[:, None], 3, axis=1)
    bub, _ = rt._bubbles(fq, cells3)                   # (NC, 3, nq, k+1, 2)
    bn = np.einsum("cfqjd,cfd->cfqj", bub, nrm)
    V[:, :3 * nf, 2 * mk:] = np.einsum(
        "cfqa,cfqj,cfq->cfaj", fbv, bn, wq).reshape(NC, 3 * nf, k + 1)

    # interior rows (k >= 1): moments against P_{k-1}(K)^2
    if mkm1 > 0:
        eye = np.zeros((mkm1, 2, mk, 2))
        for i in range(mkm1):
            for d in range(2):
                eye[i, d, i, d] = 1.0
        V[:, 3 * nf:, :2 * mk] = np.broadcast_to(
            eye.reshape(2 * mkm1, 2 * mk), (NC, 2 * mkm1, 2 * mk))
        cbub, _ = rt._bubbles(space.cq_pts, np.arange(NC))
        mom = np.einsum("cqi,cqjd,cq->cidj", space.cb_vals[:, :, :mkm1],
                        cbub, space.cq_w)
        V[:, 3 * nf:, 2 * mk:] = mom.reshape(NC, 2 * mkm1, k + 1)

    rhs[:, :3 * nf] = sig_h.face[mesh.cell_faces].reshape(NC, 3 * nf)
    if mkm1 > 0:
        rhs[:, 3 * nf:] = sig_h.cell[:, :mkm1, :].reshape(NC, 2 * mkm1)

    rt.coeffs = np.linalg.solve(V, rhs[..., None])[..., 0]

    if lower is not None:
        pts, w, vals = space.cell_rule_data(2 * space.k + 4)
        dv = rt.divergence(pts)
        fh = np.einsum("cqi,ci->cq", vals[:, :, :mk], lower.f_h)
        err = np.sqrt(np.einsum("cq,cq->", (dv + fh) ** 2, w))
        scale = 1.0 + np.linalg.norm(lower.f_h)
        if err > div_tol * scale:
            raise RuntimeError(
                f"flux reconstruction divergence misfit {err:.3e} "
                f"exceeds tolerance (scale {scale:.3e})")
    return rt


@dataclass
class LagrangeNodes:
    """Lagrange lattice of degree k+1: vertices, face nodes, cell nodes."""
    points: np.ndarray          # (n_nodes, 2)
    cell_nodes: np.ndarray      # (NC, dim P_{k+1}) global node ids
    dirichlet: np.ndarray       # bool per node


def lagrange_nodes(mesh, degree):
    NV, NC, NF = mesh.num_vertices, mesh.num_cells, mesh.num_faces
    d = degree
    n_edge = d - 1
    n_int = max((d - 1) * (d - 2) // 2, 0)
    n_nodes = NV + NF * n_edge + NC * n_int
    points = np.zeros((n_nodes, 2))
    points[:NV] = mesh.vertices

    if n_edge:
        a = mesh.vertices[mesh.face_vertices[:, 0]]
        b = mesh.vertices[mesh.face_vertices[:, 1]]
        t = np.arange(1, d) / d
        pts = a[:, None, :] + t[None, :, None] * (b - a)[:, None, :]
        points[NV:NV + NF * n_edge] = pts.reshape(-1, 2)

    interior_idx = []
    if n_int:
        for i in range(1, d):
            for j in range(1, d - i):
                interior_idx.append((i, j))
        lam = np.array(interior_idx) / d    # (n_int, 2) barycentric (i,j)/d
        v0 = mesh.vertices[mesh.cells[:, 0]]
        e1 = mesh.vertices[mesh.cells[:, 1]] - v0
        e2 = mesh.vertices[mesh.cells[:, 2]] - v0
        pts = (v0[:, None, :] + lam[None, :, 0:1] * e1[:, None, :]
               + lam[None, :, 1:2] * e2[:, None, :])
        points[NV + NF * n_edge:] = pts.reshape(-1, 2)

    cell_nodes = np.zeros((NC, poly_dim(d)), dtype=np.int64)
    cell_nodes[:, :3] = mesh.cells
    col = 3
    if n_edge:
        for ell in range(3):
            f = mesh.cell_faces[:, ell]
            ids = NV + f[:, None] * n_edge + np.arange(n_edge)[None, :]
            cell_nodes[:, col:col + n_edge] = ids
            col += n_edge
    if n_int:
        ids = (NV + NF * n_edge + np.arange(NC)[:, None] * n_int
               + np.arange(n_int)[None, :])
        cell_nodes[:, col:] = ids

    dirichlet = np.zeros(n_nodes, dtype=bool)
    dir_faces = np.nonzero(mesh.face_labels == meshmod.DIRICHLET)[0]
    dirichlet[mesh.face_vertices[dir_faces].ravel()] = True
    if n_edge:
        for f in dir_faces:
            dirichlet[NV + f * n_edge:NV + (f + 1) * n_edge] = True
    return LagrangeNodes(points, cell_nodes, dirichlet)


class ConformingP1k:
    """Continuous piecewise polynomial of degree k+1 on the triangulation."""

    def __init__(self, space, node_values, nodes):
        self.space = space
        self.nodes = nodes
        self.node_values = node_values
        pts = nodes.points[nodes.cell_nodes]            # (NC, mk1, 2)
        vdm = space.cell_basis.values(pts)              # (NC, mk1, mk1)
        self.cell_coeffs = np.linalg.solve(
            vdm, node_values[nodes.cell_nodes][..., None])[..., 0]

    def values(self, pts, cells=None):
        if cells is None:
            cells = np.arange(self.space.mesh.num_cells)
        v = self.space.cell_basis.values(pts, cells)
        return np.einsum("...qi,...i->...q", v, self.cell_coeffs[cells])

    def gradients(self, pts, cells=None):
        if cells is None:
            cells = np.arange(self.space.mesh.num_cells)
        g = self.space.cell_basis.gradients(pts, cells)
        return np.einsum("...qid,...i->...qd", g, self.cell_coeffs[cells])


def nodal_average(space, cell_coeffs, dirichlet_data=None):
    """Continuous displacement: arithmetic node averages of the cell field.

    Dirichlet nodes carry `dirichlet_data` evaluated at the node (zero when
    None), which makes the result admissible for the homogeneous problem or
    for the shifted construction with inhomogeneous data.
    """
    mesh = space.mesh
    nodes = lagrange_nodes(mesh, space.k + 1)
    sums = np.zeros(len(nodes.points))
    counts = np.zeros(len(nodes.points))
    pts = nodes.points[nodes.cell_nodes]                # (NC, mk1, 2)
    vals = np.einsum("cqi,ci->cq", space.cell_basis.values(pts), cell_coeffs)
    np.add.at(sums, nodes.cell_nodes.ravel(), vals.ravel())
    np.add.at(counts, nodes.cell_nodes.ravel(), 1.0)
    node_values = sums / counts
    if dirichlet_data is None:
        node_values[nodes.dirichlet] = 0.0
    else:
        node_values[nodes.dirichlet] = \
            np.asarray(dirichlet_data(nodes.points[nodes.dirichlet]))
    return ConformingP1k(space, node_values, nodes)
