import numpy as np
import pytest
from math import factorial
from scipy.integrate import quad

from hhomin.quadrature import (MAX_CELL_EXACTNESS, cell_quadrature,
                               face_quadrature, graded_segment_rule,
                               graded_triangle_rule, map_to_cells,
                               map_to_segments)


def reference_monomial_integral(a, b):
    # integral of x^a y^b over the unit reference triangle
    return factorial(a) * factorial(b) / factorial(a + b + 2)


@pytest.mark.parametrize("deg", [0, 1, 2, 3, 4, 5, 7, 10, 13, 16, 20, 25])
def test_cell_rule_exactness(deg):
    rule = cell_quadrature(deg)
    assert np.all(rule.weights > 0)
    for a in range(deg + 1):
        for b in range(deg + 1 - a):
            exact = reference_monomial_integral(a, b)
            got = np.sum(rule.weights
                         * rule.points[:, 0] ** a * rule.points[:, 1] ** b)
            assert abs(got - exact) <= 1e-13 * exact


def test_constant_integrates_to_half():
    rule = cell_quadrature(1)
    assert np.sum(rule.weights) == pytest.approx(0.5, abs=1e-15)


def test_x2y2_oracle():
    # frozen from the factorial formula: 2! 2! / 6! = 1/180
    rule = cell_quadrature(4)
    got = np.sum(rule.weights * rule.points[:, 0] ** 2
                 * rule.points[:, 1] ** 2)
    assert got == pytest.approx(1.0 / 180.0, rel=1e-14)


def test_degree_25_available():
    rule = cell_quadrature(25)
    assert rule.exactness == 25
    assert np.all(rule.weights > 0)


def test_exceeding_table_fails_loudly():
    with pytest.raises(ValueError, match=str(MAX_CELL_EXACTNESS)):
        cell_quadrature(MAX_CELL_EXACTNESS + 1)
    with pytest.raises(ValueError):
        cell_quadrature(-1)


@pytest.mark.parametrize("deg", [0, 1, 4, 9, 16, 31])
def test_face_rule_exactness(deg):
    rule = face_quadrature(deg)
    assert np.all(rule.weights > 0)
    for a in range(deg + 1):
        got = np.sum(rule.weights * rule.points ** a)
        assert got == pytest.approx(1.0 / (a + 1), rel=1e-13)


def test_map_to_cells_measures(lshape):
    rule = cell_quadrature(2)
    pts, w = map_to_cells(rule, lshape.vertices, lshape.cells,
                          lshape.vertices)
    assert w.sum() == pytest.approx(3.0, abs=1e-14)
    assert np.allclose(w.sum(axis=1), lshape.areas)


def test_map_to_segments_length():
    rule = face_quadrature(3)
    a = np.array([[0.0, 0.0]])
    b = np.array([[3.0, 4.0]])
    pts, w = map_to_segments(rule, a, b)
    assert w.sum() == pytest.approx(5.0, rel=1e-14)


def test_graded_triangle_rule_singular_integrand():
    # integral of r^(-1/2) over ((0,0),(1,0),(0,1)): in polar coordinates
    # the ray exits at R = 1/(cos+sin), radial part integrates to (2/3) R^1.5
    exact = quad(lambda t: (2.0 / 3.0) / (np.cos(t) + np.sin(t)) ** 1.5,
                 0.0, np.pi / 2.0, epsabs=1e-14)[0]
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    pts, w = graded_triangle_rule(verts, cell_quadrature(12))
    got = np.sum(w * np.sum(pts * pts, axis=1) ** -0.25)
    assert got == pytest.approx(exact, rel=1e-6)


def test_graded_segment_rule_singular_integrand():
    # integral of t^(-1/8) over [0,1] equals 8/7
    pts, w = graded_segment_rule(np.zeros(2), np.array([1.0, 0.0]),
                                 face_quadrature(8))
    got = np.sum(w * pts[:, 0] ** (-0.125))
    assert got == pytest.approx(8.0 / 7.0, rel=1e-9)
