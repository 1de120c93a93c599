"""Shared test utilities: random polynomials and small custom meshes."""

import numpy as np
import numpy.polynomial.polynomial as npoly

from hhomin.mesh import DIRICHLET, NEUMANN, Mesh


def random_poly2d(rng, degree, scale=1.0):
    """Random bivariate polynomial of the given total degree.

    Returns (value, gradient) callables acting on (..., 2) arrays.
    """
    co = np.zeros((degree + 1, degree + 1))
    for i in range(degree + 1):
        for j in range(degree + 1 - i):
            co[i, j] = scale * rng.standard_normal()
    cx = npoly.polyder(co, axis=0)
    cy = npoly.polyder(co, axis=1)

    def value(p):
        return npoly.polyval2d(p[..., 0], p[..., 1], co)

    def grad(p):
        return np.stack([npoly.polyval2d(p[..., 0], p[..., 1], cx),
                         npoly.polyval2d(p[..., 0], p[..., 1], cy)],
                        axis=-1)

    return value, grad


def random_vector_poly2d(rng, degree, scale=1.0):
    """Random polynomial vector field with divergence, acting pointwise."""
    (v1, g1) = random_poly2d(rng, degree, scale)
    (v2, g2) = random_poly2d(rng, degree, scale)

    def value(p):
        return np.stack([v1(p), v2(p)], axis=-1)

    def div(p):
        return g1(p)[..., 0] + g2(p)[..., 1]

    return value, div


def square_mesh(labels=None):
    """Unit square split into two triangles along the (0,0)-(1,1) diagonal."""
    vertices = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    cells = np.array([[0, 1, 2], [0, 2, 3]])
    return Mesh(vertices, cells, boundary_labels=labels)


def mixed_square_mesh():
    """Unit square with Dirichlet on the bottom/left, Neumann elsewhere."""
    labels = {(0, 1): DIRICHLET, (0, 3): DIRICHLET,
              (1, 2): NEUMANN, (2, 3): NEUMANN}
    return square_mesh(labels)


def random_primal(space, rng, homogeneous=True):
    v = space.zero_primal()
    v.cell = rng.standard_normal(v.cell.shape)
    v.face = rng.standard_normal(v.face.shape)
    if homogeneous:
        v.face[space.dirichlet_faces] = 0.0
    return v


def random_dual(space, rng):
    t = space.zero_dual()
    t.cell = rng.standard_normal(t.cell.shape)
    t.face = rng.standard_normal(t.face.shape)
    t.face[space.neumann_faces] = 0.0
    return t


class ManufacturedP2:
    """Exact-solution bundle for the quadratic density (flux = gradient)."""

    def __init__(self, value, grad, f):
        self.u = value
        self.grad = grad
        self.flux = grad
        self.f = f
