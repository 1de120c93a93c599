"""Acceptance suite: one test per criterion, each printing PASS/FAIL.

Run with `pytest tests/test_acceptance.py -v -s` to see one line per
criterion.  The uniform-rates mesh-size window is known red (the gap
decays faster than the window allows); the companion test checks the rate
against the dof count.
"""

import numpy as np
import pytest

from helpers import random_dual, random_poly2d, random_primal, \
    random_vector_poly2d
from hhomin.adaptivity import estimate, fit_rate, run_problem
from hhomin.basis import project_onto_cells
from hhomin.energy import (LowerOrder, bingham_density, discrete_dual_energy,
                           discrete_energy, odp_density, plaplace_density)
from hhomin.mesh import lshape_initial, refine_uniform
from hhomin.operators import (HHOSpace, divergence_reconstruction,
                              gradient_reconstruction, interp_dual,
                              interp_primal)
from hhomin.problems import make_problem
from hhomin.solver import (DofMap, EnergyAssembler, assemble_energy_gradient,
                           assemble_hessian, check_euler_lagrange, minimize,
                           solve_linear_quadratic)
from test_operators import discrete_ibp_sides, project_gradient

RNG_SEED = 424242


def report_line(name, ok, detail):
    print(f"\nACCEPTANCE {name}: {'PASS' if ok else 'FAIL'} - {detail}")


# -- expensive shared runs ---------------------------------------------------

def run_with_checks(problem, **kwargs):
    """Adaptive run recording equilibrium and divergence checks per level."""
    checks = []

    def on_level(level, space, u, lower, report, sigma0, v0, record):
        el = check_euler_lagrange(space, u, problem.density, lower,
                                  problem.r, problem.s)
        pts, w, vals = space.cell_rule_data(2 * space.k + 4)
        dv = sigma0.divergence(pts)
        fh = np.einsum("cqi,ci->cq", vals[:, :, :space.mk], lower.f_h)
        div_err = np.sqrt(float(np.einsum("cq,cq->", (dv + fh) ** 2, w)))
        checks.append({
            "level": level,
            "el_rel": el["max_rel"],
            "div_err": div_err,
            "f_scale": 1.0 + np.linalg.norm(lower.f_h),
            "identity": abs(report.gap - (report.energy_upper_mod
                                          - report.dual_value)),
            "identity_scale": 1.0 + abs(report.gap),
            "eta_min": float(report.eta.min()),
            "leb_ok": report.leb <= record.Ev0 + 1e-12,
        })

    result = run_problem(problem, on_level=on_level, **kwargs)
    return result, checks


@pytest.fixture(scope="module")
def bench_odp():
    return run_with_checks(make_problem("odp"), refine="adaptive",
                           max_ndof=800)


@pytest.fixture(scope="module")
def bench_bingham():
    return run_with_checks(make_problem("bingham", eps=1e-4),
                           refine="adaptive", max_ndof=20000)


@pytest.fixture(scope="module")
def bench_plaplace():
    return run_with_checks(make_problem("plaplace"), refine="adaptive",
                           max_ndof=4000)


@pytest.fixture(scope="module")
def uniform_runs():
    odp = run_problem(make_problem("odp"), refine="uniform", levels=5)
    bing = run_problem(make_problem("bingham", eps=1e-4), refine="uniform",
                       levels=5)
    return {"odp": odp, "bingham": bing}


# -- criteria ----------------------------------------------------------------

def test_commuting_properties():
    rng = np.random.default_rng(RNG_SEED)
    meshes = [lshape_initial(), refine_uniform(lshape_initial())]
    worst = 0.0
    for mesh in meshes:
        for k in (0, 1, 2):
            space = HHOSpace(mesh, k)
            for _ in range(50):
                v, gv = random_poly2d(rng, k + 3)
                vh = interp_primal(space, v)
                got = gradient_reconstruction(space, vh)
                want = project_gradient(space, gv)
                num = np.sqrt(np.sum((got - want) ** 2))
                den = np.sqrt(np.sum(want ** 2))
                worst = max(worst, num / den)

                tau, div = random_vector_poly2d(rng, k + 2)
                th = interp_dual(space, tau)
                gotd = divergence_reconstruction(space, th)
                wantd = project_onto_cells(
                    space.cell_basis, div,
                    rule_data=(space.cq_pts, space.cq_w,
                               space.cb_vals))[:, :space.mk]
                worst = max(worst, np.linalg.norm(gotd - wantd)
                            / np.linalg.norm(wantd))
    ok = worst <= 1e-11
    report_line("commuting-properties", ok,
                f"worst relative defect {worst:.2e} (tol 1e-11)")
    assert ok


def test_discrete_integration_by_parts():
    rng = np.random.default_rng(RNG_SEED)
    mesh = refine_uniform(lshape_initial())
    worst = 0.0
    for k in (0, 1, 2):
        space = HHOSpace(mesh, k)
        for _ in range(50):
            v = random_primal(space, rng)
            t = random_dual(space, rng)
            lhs, rhs = discrete_ibp_sides(space, v, t)
            worst = max(worst, abs(lhs - rhs) / (1.0 + abs(lhs)))
    ok = worst <= 1e-10
    report_line("discrete-integration-by-parts", ok,
                f"worst relative defect {worst:.2e} (tol 1e-10)")
    assert ok


def test_discrete_weak_duality():
    rng = np.random.default_rng(RNG_SEED)
    mesh = refine_uniform(lshape_initial())
    densities = [plaplace_density(2.0), plaplace_density(4.0),
                 bingham_density(1.0, 0.2, 1e-2),
                 odp_density(1.0, 2.0, 0.0084)]
    worst = -np.inf
    for k in (0, 1):
        space = HHOSpace(mesh, k)
        for den in densities:
            for _ in range(100):
                t = random_dual(space, rng)
                lower = LowerOrder.from_coeffs(
                    space, -divergence_reconstruction(space, t))
                v = random_primal(space, rng)
                Eh = discrete_energy(space, v, den, lower, 2.0, 1.0)
                Ehs = discrete_dual_energy(space, t, den, lower, 2.0, 1.0)
                scale = 1.0 + abs(Eh) + abs(Ehs)
                worst = max(worst, (Ehs - Eh) / scale)
    ok = worst <= 1e-10
    report_line("discrete-weak-duality", ok,
                f"max (dual - primal)/scale = {worst:.2e} over 800 pairs "
                f"(tol 1e-10)")
    assert ok


def test_equilibrium_and_flux_divergence(bench_odp, bench_bingham,
                                         bench_plaplace):
    worst_el = 0.0
    worst_div = 0.0
    for _, checks in (bench_odp, bench_bingham, bench_plaplace):
        for c in checks:
            worst_el = max(worst_el, c["el_rel"])
            worst_div = max(worst_div, c["div_err"] / c["f_scale"])
    ok = worst_el <= 1e-7 and worst_div <= 1e-8
    report_line("equilibrated-traces", ok,
                f"max face-identity residual {worst_el:.2e} (tol 1e-7), "
                f"max relative divergence misfit {worst_div:.2e} (tol 1e-8)")
    assert ok


def test_estimator_identity_and_sign(bench_odp, bench_bingham,
                                     bench_plaplace):
    worst_id = 0.0
    eta_min = 0.0
    leb_ok = True
    for _, checks in (bench_odp, bench_bingham, bench_plaplace):
        for c in checks:
            worst_id = max(worst_id, c["identity"] / c["identity_scale"])
            eta_min = min(eta_min, c["eta_min"])
            leb_ok = leb_ok and c["leb_ok"]
    ok = worst_id <= 1e-10 and eta_min >= 0.0 and leb_ok
    report_line("estimator-identity-sign", ok,
                f"identity defect {worst_id:.2e} (tol 1e-10), "
                f"min eta {eta_min:.2e}, LEB<=E(v0) everywhere: {leb_ok}")
    assert ok


def test_bingham_bracket(bench_bingham):
    result, _ = bench_bingham
    reference = -9.32049
    rows = [r for r in result.records if r.ndof >= 1000]
    bracket_ok = all(r.leb <= reference <= r.Ev0 for r in rows)
    final = [r for r in result.records if r.ndof >= 20000]
    gap_ok = bool(final) and final[0].gap <= 3e-2
    # the discrete energy itself enters the bracket once refined enough,
    # and the total gap shrinks from the coarsest to the finest level
    last = result.records[-1]
    eh_ok = last.leb <= last.Eh <= last.Ev0
    mono_ok = last.gap < result.records[0].gap
    ok = bracket_ok and gap_ok and eh_ok and mono_ok
    detail = (f"bracket holds on {len(rows)} levels with ndof>=1e3: "
              f"{bracket_ok}; gap at ndof={final[0].ndof}: "
              f"{final[0].gap:.2e} (tol 3e-2); Eh in final bracket: {eh_ok}; "
              f"gap decreased: {mono_ok}") if final else "no level >= 2e4"
    report_line("bingham-bracket", ok, detail)
    assert ok


def test_uniform_rates_window_in_mesh_size(uniform_runs):
    # KNOWN RED: this window encodes a mesh-size reading of the target
    # rate 2/3, but the duality gap of these benchmarks decays at rate
    # 2/3 against the dof count, i.e. ~ h^(4/3) (ndof ~ h^-2), so no
    # level range can land in the window.  The companion test below
    # checks the dof-count rate.  Kept as stated on purpose.
    slopes = {}
    for name, res in uniform_runs.items():
        h = [r.hmax for r in res.records]
        gap = [r.gap for r in res.records]
        slopes[name] = fit_rate(h, gap)
    ok = all(0.5 <= s <= 0.85 for s in slopes.values())
    report_line("uniform-rates-window", ok,
                f"slope of log(gap) vs log(h_max): odp {slopes['odp']:.3f}, "
                f"bingham {slopes['bingham']:.3f} (window [0.5, 0.85])")
    assert ok, (
        f"slopes in h {slopes} lie outside [0.5, 0.85]: the gap decays "
        "at rate 2/3 against ndof, i.e. ~h^(4/3), faster than the window "
        "allows; see the uniform-rates-vs-ndof line and the project notes")


def test_uniform_rates_in_dof_count(uniform_runs):
    slopes = {}
    for name, res in uniform_runs.items():
        nd = [r.ndof for r in res.records]
        gap = [r.gap for r in res.records]
        slopes[name] = fit_rate(nd, gap)
    ok = all(-0.95 <= s <= -0.5 for s in slopes.values())
    report_line("uniform-rates-vs-ndof", ok,
                f"slope of log(gap) vs log(ndof): odp {slopes['odp']:.3f}, "
                f"bingham {slopes['bingham']:.3f} "
                f"(target -2/3; window [-0.95, -0.5])")
    assert ok


def test_plaplace_adaptive_rates(bench_plaplace):
    result, _ = bench_plaplace
    nd = np.array([r.ndof for r in result.records])
    rhs = np.array([r.gap + r.osc for r in result.records])
    slope = fit_rate(nd, rhs)
    errs = {c: np.array([getattr(r, c) for r in result.records])
            for c in ("errW1p", "errFlux", "errQuasi")}
    mono = {c: bool(np.all(np.diff(v[-3:]) < 0)) for c, v in errs.items()}
    ok = slope <= -0.7 and all(mono.values())
    report_line("plaplace-adaptive-rates", ok,
                f"RHS slope vs ndof {slope:.2f} (tol <= -0.7); "
                f"errors decreasing on last 3 levels: {mono}")
    assert ok


def test_solver_quadratic_oracle():
    den = plaplace_density(2.0)
    mesh = refine_uniform(lshape_initial())
    worst = 0.0
    iters = []
    for k in (0, 1, 2):
        space = HHOSpace(mesh, k)
        lower = LowerOrder(space, lambda p: np.ones(p.shape[:-1]))
        u, rep = minimize(space, den, lower, 2.0, 1.0)
        iters.append(rep.iterations)
        direct = solve_linear_quadratic(space, den, lower, 2.0, 1.0)
        scale = 1.0 + np.abs(direct.cell).max()
        worst = max(worst,
                    np.abs(u.cell - direct.cell).max() / scale,
                    np.abs(u.face - direct.face).max() / scale)
    ok = all(i == 1 for i in iters) and worst <= 1e-10
    report_line("solver-quadratic-oracle", ok,
                f"newton iterations {iters} (want all 1), max deviation "
                f"from the direct solve {worst:.2e} (tol 1e-10)")
    assert ok


def test_derivative_checks():
    rng = np.random.default_rng(RNG_SEED)
    mesh = refine_uniform(lshape_initial())
    worst_g = 0.0
    worst_h = 0.0
    for den in (plaplace_density(4.0), bingham_density(1.0, 0.2, 1e-2),
                odp_density(1.0, 2.0, 0.0084)):
        space = HHOSpace(mesh, 1)
        lower = LowerOrder(space, lambda p: np.ones(p.shape[:-1]))
        dm = DofMap(space)
        asm = EnergyAssembler(space, den, lower, 2.0, 1.0)
        for _ in range(5):
            x = rng.standard_normal(dm.n_free) * 0.4
            v = dm.to_dofs(x)
            _, g = assemble_energy_gradient(space, v, den, lower, 2.0, 1.0,
                                            dm)
            d = rng.standard_normal(dm.n_free)
            d /= np.linalg.norm(d)
            t = 1e-6
            fd = (asm.energy(dm.to_dofs(x + t * d))
                  - asm.energy(dm.to_dofs(x - t * d))) / (2 * t)
            worst_g = max(worst_g, abs(fd - g @ d) / (1 + abs(fd)))
            H = assemble_hessian(space, v, den, lower, 2.0, 1.0, dm)
            _, gp = assemble_energy_gradient(space, dm.to_dofs(x + t * d),
                                             den, lower, 2.0, 1.0, dm)
            _, gm = assemble_energy_gradient(space, dm.to_dofs(x - t * d),
                                             den, lower, 2.0, 1.0, dm)
            hv = (gp - gm) / (2 * t)
            worst_h = max(worst_h, np.linalg.norm(H @ d - hv)
                          / (1 + np.linalg.norm(hv)))
    ok = worst_g <= 1e-6 and worst_h <= 1e-5
    report_line("derivative-checks", ok,
                f"gradient vs differences {worst_g:.2e} (tol 1e-6), "
                f"hessian-vector vs differences {worst_h:.2e} (tol 1e-5)")
    assert ok
