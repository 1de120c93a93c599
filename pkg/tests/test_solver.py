import numpy as np
import pytest

from helpers import random_poly2d
from hhomin.energy import (LowerOrder, bingham_density, odp_density,
                           plaplace_density)
from hhomin.operators import interp_primal
from hhomin.solver import (DofMap, EnergyAssembler, assemble_energy_gradient,
                           assemble_hessian, check_euler_lagrange,
                           dirichlet_face_values, minimize,
                           solve_linear_quadratic)


def const_source(c):
    return lambda p: np.full(p.shape[:-1], float(c))


@pytest.mark.parametrize("k", [0, 1, 2])
def test_quadratic_newton_one_step_matches_direct(lshape1, space_of, k):
    space = space_of(lshape1, k)
    den = plaplace_density(2.0)
    lower = LowerOrder(space, const_source(1.0))
    u, rep = minimize(space, den, lower, 2.0, 1.0)
    assert rep.converged
    assert rep.iterations == 1
    direct = solve_linear_quadratic(space, den, lower, 2.0, 1.0)
    scale = 1.0 + np.abs(direct.cell).max()
    assert np.abs(u.cell - direct.cell).max() <= 1e-10 * scale
    assert np.abs(u.face - direct.face).max() <= 1e-10 * scale


def test_zero_source_zero_solution(lshape1, space_of):
    space = space_of(lshape1, 1)
    den = plaplace_density(4.0)
    lower = LowerOrder(space, const_source(0.0))
    v = space.zero_primal()
    _, g = assemble_energy_gradient(space, v, den, lower, 2.0, 1.0)
    assert np.abs(g).max() == 0.0


@pytest.mark.parametrize("den_factory", [
    lambda: plaplace_density(2.0),
    lambda: plaplace_density(4.0),
    lambda: bingham_density(1.0, 0.2, 1e-2),
    lambda: odp_density(1.0, 2.0, 0.0084)])
def test_gradient_and_hessian_against_differences(lshape1, space_of, rng,
                                                  den_factory):
    space = space_of(lshape1, 1)
    den = den_factory()
    lower = LowerOrder(space, const_source(1.0))
    dm = DofMap(space)
    asm = EnergyAssembler(space, den, lower, 2.0, 1.0)
    for _ in range(5):
        x = rng.standard_normal(dm.n_free) * 0.4
        v = dm.to_dofs(x)
        E, g = assemble_energy_gradient(space, v, den, lower, 2.0, 1.0, dm)
        d = rng.standard_normal(dm.n_free)
        d /= np.linalg.norm(d)
        t = 1e-6
        fd = (asm.energy(dm.to_dofs(x + t * d))
              - asm.energy(dm.to_dofs(x - t * d))) / (2 * t)
        assert abs(fd - g @ d) <= 1e-6 * (1 + abs(fd))
        H = assemble_hessian(space, v, den, lower, 2.0, 1.0, dm)
        _, gp = assemble_energy_gradient(space, dm.to_dofs(x + t * d), den,
                                         lower, 2.0, 1.0, dm)
        _, gm = assemble_energy_gradient(space, dm.to_dofs(x - t * d), den,
                                         lower, 2.0, 1.0, dm)
        hv = (gp - gm) / (2 * t)
        assert np.linalg.norm(H @ d - hv) <= 1e-5 * (1 + np.linalg.norm(hv))


def test_hessian_symmetry(lshape1, space_of, rng):
    space = space_of(lshape1, 1)
    den = plaplace_density(4.0)
    lower = LowerOrder(space, const_source(1.0))
    dm = DofMap(space)
    v = dm.to_dofs(rng.standard_normal(dm.n_free))
    H = assemble_hessian(space, v, den, lower, 2.0, 1.0, dm).toarray()
    assert np.abs(H - H.T).max() <= 1e-12 * (1 + np.abs(H).max())


def test_nonquadratic_stab_hessian_fd(lshape1, space_of, rng):
    # r = 4 exercises the state-dependent penalty Hessian
    space = space_of(lshape1, 1)
    den = plaplace_density(2.0)
    lower = LowerOrder(space, const_source(1.0))
    dm = DofMap(space)
    x = rng.standard_normal(dm.n_free) * 0.5
    d = rng.standard_normal(dm.n_free)
    d /= np.linalg.norm(d)
    t = 1e-6
    H = assemble_hessian(space, dm.to_dofs(x), den, lower, 4.0, 1.0, dm)
    _, gp = assemble_energy_gradient(space, dm.to_dofs(x + t * d), den,
                                     lower, 4.0, 1.0, dm)
    _, gm = assemble_energy_gradient(space, dm.to_dofs(x - t * d), den,
                                     lower, 4.0, 1.0, dm)
    hv = (gp - gm) / (2 * t)
    assert np.linalg.norm(H @ d - hv) <= 1e-5 * (1 + np.linalg.norm(hv))


def test_euler_lagrange_manufactured_polynomial(lshape1, space_of):
    # p = 2 with a quadratic exact solution: the interpolant is the exact
    # discrete minimizer and the face identity holds at machine precision
    space = space_of(lshape1, 1)
    den = plaplace_density(2.0)
    u_exact = lambda p: p[..., 0] ** 2 + p[..., 0] * p[..., 1]
    lower = LowerOrder(space, const_source(-2.0))   # f = -laplace(u)
    dvals = dirichlet_face_values(space, u_exact)
    u, rep = minimize(space, den, lower, 2.0, 1.0, dirichlet_values=dvals)
    assert rep.converged and rep.iterations <= 2
    want = interp_primal(space, u_exact)
    assert np.abs(u.cell - want.cell).max() <= 1e-10
    el = check_euler_lagrange(space, u, den, lower, 2.0, 1.0)
    assert el["max_rel"] <= 1e-12


@pytest.mark.parametrize("den_factory,name", [
    (lambda: plaplace_density(4.0), "plap4"),
    (lambda: bingham_density(1.0, 0.2, 1e-2), "bingham"),
    (lambda: odp_density(1.0, 2.0, 0.0084), "odp")])
def test_nonlinear_solves_and_equilibrium(lshape1, space_of, den_factory,
                                          name):
    space = space_of(lshape1, 1)
    den = den_factory()
    f = 10.0 if name != "odp" else 1.0
    lower = LowerOrder(space, const_source(f))
    u, rep = minimize(space, den, lower, 2.0, 1.0)
    assert rep.converged
    el = check_euler_lagrange(space, u, den, lower, 2.0, 1.0)
    assert el["max_rel"] <= 1e-7
    # an early iterate violates the equilibrium more than the solution
    u1, rep1 = minimize(space, den, lower, 2.0, 1.0, max_iter=1)
    el1 = check_euler_lagrange(space, u1, den, lower, 2.0, 1.0)
    assert el1["max_rel"] > el["max_rel"]


def test_energy_monotone_from_start(lshape1, space_of, rng):
    space = space_of(lshape1, 1)
    den = bingham_density(1.0, 0.2, 1e-2)
    lower = LowerOrder(space, const_source(10.0))
    dm = DofMap(space)
    asm = EnergyAssembler(space, den, lower, 2.0, 1.0)
    x0 = dm.to_dofs(rng.standard_normal(dm.n_free))
    E0 = asm.energy(x0)
    u, rep = minimize(space, den, lower, 2.0, 1.0, x0=x0)
    assert rep.converged
    assert rep.energy <= E0 + 1e-12 * (1 + abs(E0))


def test_warm_start_reduces_iterations(lshape1, space_of):
    space = space_of(lshape1, 1)
    den = plaplace_density(4.0)
    lower = LowerOrder(space, const_source(10.0))
    u, rep_cold = minimize(space, den, lower, 2.0, 1.0)
    _, rep_warm = minimize(space, den, lower, 2.0, 1.0, x0=u)
    assert rep_warm.iterations <= rep_cold.iterations


def test_dirichlet_values_fixed(lshape1, space_of):
    space = space_of(lshape1, 1)
    den = plaplace_density(2.0)
    data = lambda p: p[..., 0] + 0.5 * p[..., 1]
    lower = LowerOrder(space, const_source(0.0))
    dvals = dirichlet_face_values(space, data)
    u, rep = minimize(space, den, lower, 2.0, 1.0, dirichlet_values=dvals)
    assert np.abs(u.face[space.dirichlet_faces]
                  - dvals[space.dirichlet_faces]).max() == 0.0
