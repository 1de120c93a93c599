"""Orthonormal polynomial bases on cells and faces, and L2 projections.

Cell bases are built from monomials in centroid-centered coordinates scaled
by the cell diameter, orthonormalized against the exact monomial Gram matrix
(Cholesky), so conditioning does not degrade under refinement.  The
orthonormalization is triangular in the graded monomial order: the leading
``dim P_d`` functions of a degree-d' basis (d <= d') are exactly the
orthonormal basis of P_d, and L2 projection onto a lower degree is
coefficient truncation.

Face bases are scaled Legendre polynomials in the arc-length parameter.
"""

import numpy as np
from numpy.polynomial import legendre

from .quadrature import cell_quadrature, map_to_cells


def poly_dim(d):
    """dim P_d on a triangle; 0 for d < 0."""
    return 0 if d < 0 else (d + 1) * (d + 2) // 2


def monomial_exponents(d):
    """Exponent pairs (a, b) of x^a y^b graded by total degree."""
    out = []
    for tot in range(d + 1):
        for a in range(tot, -1, -1):
            out.append((a, tot - a))
    return np.array(out, dtype=np.int64)


class CellBasisSet:
    """L2(K)-orthonormal bases of degree `degree` on every cell of a mesh."""

    def __init__(self, mesh, degree):
        self.mesh = mesh
        self.degree = degree
        self.dim = poly_dim(degree)
        self.exponents = monomial_exponents(degree)
        self.centers = mesh.vertices[mesh.cells].mean(axis=1)
        self.scales = mesh.h_K.copy()

        rule = cell_quadrature(2 * degree)
        pts, w = map_to_cells(rule, mesh.vertices, mesh.cells, mesh.vertices)
        mono = self._monomials(pts, np.arange(mesh.num_cells))
        gram = np.einsum("cqi,cqj,cq->cij", mono, mono, w)
        L = np.linalg.cholesky(gram)
        # coeff[c] maps orthonormal-basis indices to monomial coefficients:
        # basis_j = sum_i coeff[c, i, j] * mono_i, upper triangular
        eye = np.broadcast_to(np.eye(self.dim), gram.shape)
        self.coeff = np.linalg.solve(np.transpose(L, (0, 2, 1)), eye)

    def _local(self, pts, cells):
        c = self.centers[cells]
        h = self.scales[cells]
        return (pts - c[..., None, :]) / h[..., None, None]

    def _monomials(self, pts, cells):
        xi = self._local(pts, cells)
        a = self.exponents[:, 0]
        b = self.exponents[:, 1]
        return (xi[..., 0:1] ** a) * (xi[..., 1:2] ** b)

    def _monomial_gradients(self, pts, cells):
        xi = self._local(pts, cells)
        h = self.scales[cells]
        a = self.exponents[:, 0]
        b = self.exponents[:, 1]
        x = xi[..., 0:1]
        y = xi[..., 1:2]
        with np.errstate(invalid="ignore"):
            gx = np.where(a > 0, a * x ** np.maximum(a - 1, 0) * y ** b, 0.0)
            gy = np.where(b > 0, b * x ** a * y ** np.maximum(b - 1, 0), 0.0)
        g = np.stack([gx, gy], axis=-1)
        return g / h[..., None, None, None]

    def values(self, pts, cells=None):
        """Basis values; pts (N, nq, 2) aligned with `cells` (default all)."""
        if cells is None:
            cells = np.arange(self.mesh.num_cells)
        return self._monomials(pts, cells) @ self.coeff[cells]

    def gradients(self, pts, cells=None):
        """Basis gradients, shape (N, nq, dim, 2)."""
        if cells is None:
            cells = np.arange(self.mesh.num_cells)
        g = self._monomial_gradients(pts, cells)
        return np.einsum("...qmd,...mj->...qjd", g, self.coeff[cells])

    def values_single(self, c, pts):
        """Values on one cell at (n, 2) points, shape (n, dim)."""
        return self.values(pts[None, :, :], np.array([c]))[0]

    def gradients_single(self, c, pts):
        return self.gradients(pts[None, :, :], np.array([c]))[0]


class FaceBasisSet:
    """L2(S)-orthonormal Legendre bases of degree `degree` on every face."""

    def __init__(self, mesh, degree):
        self.mesh = mesh
        self.degree = degree
        self.dim = degree + 1
        # basis_a(t) = sqrt((2a+1)/|S|) P_a(2t-1), t in [0,1] from the
        # lower- to the higher-numbered face vertex
        self.scale = 1.0 / np.sqrt(mesh.h_S)

    def ref_values(self, t):
        """Reference values sqrt(2a+1) P_a(2t-1), shape (nq, dim)."""
        t = np.asarray(t)
        vals = np.empty(t.shape + (self.dim,))
        for a in range(self.dim):
            c = np.zeros(a + 1)
            c[a] = np.sqrt(2 * a + 1)
            vals[..., a] = legendre.legval(2.0 * t - 1.0, c)
        return vals

    def values(self, t, faces=None):
        """Values at parameters t (nq,), shape (N, nq, dim)."""
        if faces is None:
            faces = np.arange(self.mesh.num_faces)
        return self.ref_values(t)[None, :, :] * \
            self.scale[faces][:, None, None]


def project_onto_cells(basis, f, exactness=None, rule_data=None):
    """L2 projection of a callable onto every cell basis.

    f maps points (..., 2) to scalars or to vectors (..., m); returns
    coefficients (NC, dim) or (NC, dim, m).  `rule_data` may supply
    precomputed (points, weights, basis values).
    """
    if rule_data is None:
        if exactness is None:
            exactness = 2 * basis.degree + 4
        rule = cell_quadrature(exactness)
        pts, w = map_to_cells(rule, basis.mesh.vertices, basis.mesh.cells,
                              basis.mesh.vertices)
        vals = basis.values(pts)
    else:
        pts, w, vals = rule_data
    fq = np.asarray(f(pts))
    if fq.ndim == pts.ndim - 1:
        return np.einsum("cq,cqi,cq->ci", fq, vals, w)
    return np.einsum("cqm,cqi,cq->cim", fq, vals, w)


def project_onto_faces(basis, f, exactness=None):
    """L2 projection of a callable onto every face basis, (NF, dim)."""
    from .quadrature import face_quadrature, map_to_segments
    if exactness is None:
        exactness = 2 * basis.degree + 4
    rule = face_quadrature(exactness)
    mesh = basis.mesh
    a = mesh.vertices[mesh.face_vertices[:, 0]]
    b = mesh.vertices[mesh.face_vertices[:, 1]]
    pts, w = map_to_segments(rule, a, b)
    vals = basis.values(rule.points)
    fq = np.asarray(f(pts))
    return np.einsum("fq,fqa,fq->fa", fq, vals, w)


def project_cell_single(basis, c, f, pts, w):
    """Projection on one cell with explicit quadrature (graded rules)."""
    vals = basis.values_single(c, pts)
    fq = np.asarray(f(pts))
    if fq.ndim == 1:
        return np.einsum("q,qi,q->i", fq, vals, w)
    return np.einsum("qm,qi,q->im", fq, vals, w)
