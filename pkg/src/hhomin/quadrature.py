"""Quadrature rules on reference triangles and segments.

Cell rules are collapsed (Duffy-type) products of Gauss-Legendre and
Gauss-Jacobi points: all weights positive and any requested polynomial
exactness up to ``MAX_CELL_EXACTNESS`` is available.  Face rules are plain
Gauss-Legendre on the unit interval.
"""

import numpy as np
from functools import lru_cache
from scipy.special import roots_jacobi

# reference triangle: (0,0), (1,0), (0,1); reference segment: [0,1]
MAX_CELL_EXACTNESS = 40
MAX_FACE_EXACTNESS = 99


class QuadRule:
    """Positive-weight rule on the reference triangle or unit segment.

    points: (n, 2) reference coordinates for cells, (n,) parameters in
    [0, 1] for faces.  weights sum to the reference measure (1/2 for the
    triangle, 1 for the segment).
    """

    def __init__(self, points, weights, exactness):
        self.points = np.asarray(points, dtype=float)
        self.weights = np.asarray(weights, dtype=float)
        self.exactness = exactness

    def __len__(self):
        return len(self.weights)


@lru_cache(maxsize=None)
def cell_quadrature(exactness):
    """Rule on the reference triangle exact for total degree `exactness`."""
    if exactness < 0:
        raise ValueError("exactness must be nonnegative")
    if exactness > MAX_CELL_EXACTNESS:
        raise ValueError(
            f"cell quadrature of degree {exactness} not supported "
            f"(maximum {MAX_CELL_EXACTNESS})")
    n = exactness // 2 + 1
    # u-direction: Gauss-Legendre on [0,1]
    yu, wu = np.polynomial.legendre.leggauss(n)
    u = (yu + 1.0) / 2.0
    wu = wu / 2.0
    # v-direction: Gauss-Jacobi with weight (1-v) on [0,1]
    yv, wv = roots_jacobi(n, 1.0, 0.0)
    v = (yv + 1.0) / 2.0
    wv = wv / 4.0
    uu, vv = np.meshgrid(u, v, indexing="ij")
    x = uu * (1.0 - vv)
    y = vv
    w = np.outer(wu, wv)
    return QuadRule(np.column_stack([x.ravel(), y.ravel()]), w.ravel(),
                    exactness)


@lru_cache(maxsize=None)
def face_quadrature(exactness):
    """Gauss-Legendre rule on [0,1] exact for degree `exactness`."""
    if exactness < 0:
        raise ValueError("exactness must be nonnegative")
    if exactness > MAX_FACE_EXACTNESS:
        raise ValueError(
            f"face quadrature of degree {exactness} not supported "
            f"(maximum {MAX_FACE_EXACTNESS})")
    n = exactness // 2 + 1
    y, w = np.polynomial.legendre.leggauss(n)
    return QuadRule((y + 1.0) / 2.0, w / 2.0, exactness)


def map_to_cells(rule, vertices, cells, coords):
    """Map a reference-triangle rule to the physical cells.

    Returns (points, weights) of shape (NC, nq, 2) and (NC, nq); the
    weights include the affine Jacobian (twice the cell area).
    """
    v0 = coords[cells[:, 0]]
    e1 = coords[cells[:, 1]] - v0
    e2 = coords[cells[:, 2]] - v0
    x = rule.points[:, 0]
    y = rule.points[:, 1]
    pts = (v0[:, None, :] + x[None, :, None] * e1[:, None, :]
           + y[None, :, None] * e2[:, None, :])
    jac = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    w = rule.weights[None, :] * jac[:, None]
    return pts, w


def map_to_segments(rule, a, b):
    """Map a unit-interval rule to segments a->b.

    a, b: (N, 2) endpoints.  Returns (points, weights) of shape (N, nq, 2)
    and (N, nq) with arc-length weights.
    """
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    t = rule.points
    pts = a[:, None, :] + t[None, :, None] * (b - a)[:, None, :]
    length = np.linalg.norm(b - a, axis=-1)
    w = rule.weights[None, :] * length[:, None]
    return pts, w


def graded_triangle_rule(verts, rule, levels=50):
    """Composite rule on one triangle, geometrically graded to vertex 0.

    Used for integrands with a point singularity at the first vertex:
    the triangle is split into dyadic rings shrinking toward ``verts[0]``
    and the base rule is applied on each sub-triangle.  Returns physical
    (points, weights).
    """
    v0, v1, v2 = [np.asarray(v, dtype=float) for v in verts]
    tris = []
    s = 1.0
    for _ in range(levels):
        a, b = v0 + s * (v1 - v0), v0 + s * (v2 - v0)
        ah, bh = v0 + 0.5 * s * (v1 - v0), v0 + 0.5 * s * (v2 - v0)
        tris.append((ah, a, b))
        tris.append((ah, b, bh))
        s *= 0.5
    tris.append((v0, v0 + s * (v1 - v0), v0 + s * (v2 - v0)))
    pts, wts = [], []
    for (a, b, c) in tris:
        e1, e2 = b - a, c - a
        jac = e1[0] * e2[1] - e1[1] * e2[0]
        p = (a[None, :] + rule.points[:, :1] * e1[None, :]
             + rule.points[:, 1:] * e2[None, :])
        pts.append(p)
        wts.append(rule.weights * jac)
    return np.vstack(pts), np.concatenate(wts)


def graded_segment_rule(a, b, rule, levels=50):
    """Composite rule on segment a->b, geometrically graded toward ``a``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    pts, wts = [], []
    s = 1.0
    for _ in range(levels):
        lo, hi = a + 0.5 * s * (b - a), a + s * (b - a)
        p, w = map_to_segments(rule, lo[None, :], hi[None, :])
        pts.append(p[0])
        wts.append(w[0])
        s *= 0.5
    p, w = map_to_segments(rule, a[None, :], (a + s * (b - a))[None, :])
    pts.append(p[0])
    wts.append(w[0])
    return np.vstack(pts), np.concatenate(wts)
