"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the lines are repeated in the
"acceptance criteria" section of the terminal summary.
"""
import time
from itertools import combinations

import numpy as np

from _fixtures import FIXTURES, PRODUCTS, discrete_poisson_data, fe_field, fixture, interior_points
from fosls.adapt import afem_run, mark_doerfler, mark_maximum, marking_gap
from fosls.fespace import make_product, make_space
from fosls.fields import Field
from fosls.lsq import (assemble, discrete_loss, error_norm, estimate, ls_value, quadrature_degrees,
                       residual_orthogonality, solve)
from fosls.manufactured import heat_sine, poisson_sine, wave_constant, wave_standing
from fosls.mesh import build_reference_mesh, entities, refine_uniform
from fosls.nnemu import basis_net, deep_lsq_solve, fosls_basis_net, nn_local_residual_sq, parallelize, \
    set_output_weights
from fosls.quadrature import collapsed_rule, segment_rule
from fosls.systems import ocp_poisson, poisson_helmholtz, recover_control

ENTITY = {"S1": "vertex", "RT0": "edge", "S0": "triangle"}
# recorded M / (d^2 sum s(i)) bounds on unit_square refinements
SIZE_CONSTANT = {"S1": 7.6, "RT0": 11.8, "S0": 3.0, "poisson": 10.4}


def numbered(n):
    def wrap(fn):
        fn.criterion_number = n
        return fn
    return wrap


def slope(h, v):
    return float(np.polyfit(np.log(h), np.log(v), 1)[0])


def mesh_for(tag, refine):
    name = "spacetime_rect" if tag in ("heat", "wave") else "unit_square"
    return refine_uniform(build_reference_mesh(name), refine)


def brute_ls(sys, P, c, degree):
    """LS functional integrated point by point with collapsed and Gauss-Legendre rules."""
    mesh = P.mesh
    rule, seg = collapsed_rule(degree), segment_rule(degree)
    total = 0.0
    for K in range(mesh.n_triangles):
        x = mesh.to_physical([K], rule.points)[0]
        R = sys.residual(P.evaluate(c, x, np.full(len(x), K)), x)
        total += 2 * mesh.areas[K] * rule.weights @ (R**2).sum(axis=1)
    if sys.n_trace:
        for e in np.flatnonzero(mesh.edge_labels == "initial"):
            a, b = mesh.vertices[mesh.edges[e]]
            x = a + seg.points.reshape(-1, 1) * (b - a)
            R = sys.trace_residual(P.evaluate(c, x, np.full(len(x), mesh.edge_tris[e, 0])), x)
            total += np.linalg.norm(b - a) * seg.weights @ (R**2).sum(axis=1)
    return total


@numbered(1)
def test_realization_identity(criterion):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst = 0.0
    for tag in PRODUCTS:
        P = make_product(mesh_for(tag, 2), tag)
        base = fosls_basis_net(P)
        x, tris = interior_points(P.mesh, 50, rng)
        for _ in range(20):
            c = rng.standard_normal(P.total_dim)
            nn = set_output_weights(base, c).realize(x)
            worst = max(worst, float(np.abs(nn - P.evaluate(c, x, tris)[:, :, 0]).max()))
    dt = time.perf_counter() - t0
    ok = criterion(1, "realization identity", worst <= 1e-12 and dt < 10,
                   f"max |NN - FE| = {worst:.2e}, {dt:.1f} s")
    assert ok


@numbered(2)
def test_depth_and_size_contracts(criterion):
    depths = {tag: fosls_basis_net(make_product(mesh_for(tag, 1), tag)).depth for tag in PRODUCTS}
    m1 = mesh_for("poisson", 1)
    s0_depth = basis_net(make_space(m1, "S0")).depth
    a, b = basis_net(make_space(m1, "S1")), basis_net(make_space(m1, "RT0"))
    additive = parallelize(a, b).size == a.size + b.size
    ratios = {}
    for kind in ("S1", "RT0", "S0", "poisson"):
        r = []
        for level in (1, 2, 3):
            m = mesh_for("poisson", level)
            if kind == "poisson":
                P = make_product(m, "poisson")
                s = sum(entities(m, f.entity_kind).multiplicity[f.dof_entities].sum() for f in P.spaces)
                r.append(fosls_basis_net(P).basis.size / (4 * s))
            else:
                V = make_space(m, kind)
                r.append(basis_net(V).size / (4 * entities(m, ENTITY[kind]).multiplicity[V.dof_entities].sum()))
        ratios[kind] = r
    stable = all(max(r) <= SIZE_CONSTANT[k] and max(r) / min(r) <= 1.1 for k, r in ratios.items())
    ok = all(d == 5 for d in depths.values()) and s0_depth == 3 and additive and stable
    detail = ", ".join(f"{k} {min(r):.2f}-{max(r):.2f}" for k, r in ratios.items())
    assert criterion(2, "depth/size contracts", ok, f"depths {sorted(set(depths.values()))}/{s0_depth}; {detail}")


@numbered(3)
def test_zero_generalization_gap(criterion):
    rng = np.random.default_rng(103)
    worst_gap, worst_oracle = 0.0, 0.0
    for name in FIXTURES:
        sys, P = fixture(name, refine=1)
        qd, td, exact = quadrature_degrees(sys)
        assert exact
        for c in (solve(assemble(sys, P)), rng.standard_normal(P.total_dim)):
            ref = ls_value(sys, P, c)
            scale = max(1.0, ref)
            worst_gap = max(worst_gap, abs(discrete_loss(sys, P, c, qd, td) - ref) / scale)
            worst_oracle = max(worst_oracle, abs(brute_ls(sys, P, c, max(qd, td) + 6) - ref) / scale)
    ok = worst_gap <= 1e-12 and worst_oracle <= 1e-12
    assert criterion(3, "zero generalization gap", ok, f"gap {worst_gap:.1e}, vs high-degree oracle {worst_oracle:.1e}")


@numbered(4)
def test_galerkin_optimality(criterion):
    rng = np.random.default_rng(104)
    worst_orth, violations = 0.0, 0
    for name in FIXTURES:
        sys, P = fixture(name, refine=2)
        ls = assemble(sys, P)
        u = solve(ls)
        worst_orth = max(worst_orth, residual_orthogonality(ls, u))
        base = ls_value(sys, P, u)
        for _ in range(20):
            d = rng.standard_normal(P.total_dim) * 10.0 ** rng.uniform(-4, 0)
            violations += ls_value(sys, P, u + d) < base
    ok = worst_orth <= 1e-8 and violations == 0
    assert criterion(4, "Galerkin optimality", ok, f"orthogonality {worst_orth:.1e}, {violations} violations")


@numbered(5)
def test_discrete_exactness(criterion):
    rng = np.random.default_rng(105)
    worst_ls, worst_c = 0.0, 0.0
    for name, refine in (("unit_square", 2), ("l_shape", 1)):
        P = make_product(refine_uniform(build_reference_mesh(name), refine), "poisson")
        c, f, g = discrete_poisson_data(P, rng, with_u=False)
        sys = poisson_helmholtz(f=f, g=g)
        u = solve(assemble(sys, P))
        worst_ls = max(worst_ls, ls_value(sys, P, u))
        worst_c = max(worst_c, float(np.abs(u - c).max()))
    ok = worst_ls <= 1e-18 and worst_c <= 1e-8
    assert criterion(5, "discrete exactness", ok, f"LS {worst_ls:.1e}, coefficient error {worst_c:.1e}")


@numbered(6)
def test_error_residual_equivalence(criterion):
    t0 = time.perf_counter()
    m = poisson_sine()
    hs, etas, errs = [], [], []
    for level in range(1, 6):
        P = make_product(mesh_for("poisson", level), "poisson")
        u = solve(assemble(m.system, P))
        hs.append(P.mesh.h_max)
        etas.append(estimate(m.system, P, u).eta)
        errs.append(error_norm(m.system, P, u, m.exact))
    dt = time.perf_counter() - t0
    ratio = np.array(etas) / np.array(errs)
    spread = ratio.max() / ratio.min() - 1
    se, sr = slope(hs, etas), slope(hs, errs)
    ok = spread < 0.2 and abs(se - 1) <= 0.15 and abs(sr - 1) <= 0.15 and dt < 60
    assert criterion(6, "error-residual equivalence", ok,
                     f"ratio {ratio.min():.3f}-{ratio.max():.3f}, slopes eta {se:.3f} error {sr:.3f}, {dt:.1f} s")


@numbered(7)
def test_afem_convergence(criterion):
    """Adaptive slope over the last 8 of 12 levels; uniform slope over the last 4 of 8 levels."""
    t0 = time.perf_counter()
    sys, m0 = poisson_helmholtz(f=1.0), build_reference_mesh("l_shape")
    adaptive = afem_run(sys, "poisson", m0, "doerfler", 0.5, max_levels=12)
    uniform = afem_run(sys, "poisson", m0, "uniform", max_levels=8)
    dt = time.perf_counter() - t0
    eta = adaptive.eta
    ra, ru = adaptive.rate(8), uniform.rate(4)
    ok = (len(eta) == 12 and np.all(np.diff(eta) < 0) and eta[-1] <= 0.1 * eta[0]
          and ra <= -0.45 and ru >= -0.40 and dt < 120)
    assert criterion(7, "AFEM convergence", ok,
                     f"eta {eta[0]:.3f} -> {eta[-1]:.4f}, adaptive {ra:.3f}, uniform {ru:.3f}, {dt:.1f} s")


@numbered(8)
def test_spacetime_heat(criterion):
    """Levels 3 to 6; the initial layer of exp(-pi^2 t) is unresolved on coarser meshes."""
    m = heat_sine()
    u1 = lambda x: np.exp(-np.pi**2 * x[:, 0]) * np.sin(np.pi * x[:, 1])
    u2 = lambda x: -np.pi * np.exp(-np.pi**2 * x[:, 0]) * np.cos(np.pi * x[:, 1])
    hs, interp, solver = [], [], []
    for level in range(3, 7):
        P = make_product(mesh_for("heat", level), "heat")
        hs.append(P.mesh.h_max)
        interp.append(ls_value(m.system, P, P.interpolate([u1, u2])))
        solver.append(ls_value(m.system, P, solve(assemble(m.system, P))))
    s = slope(hs, np.sqrt(interp))
    minimal = all(a <= b for a, b in zip(solver, interp))
    ok = abs(s - 1) <= 0.2 and minimal and np.all(np.diff(interp) < 0)
    assert criterion(8, "space-time heat", ok, f"interpolant residual slope {s:.3f}, solver <= interpolant: {minimal}")


@numbered(9)
def test_spacetime_wave(criterion):
    rng = np.random.default_rng(109)
    const, standing = wave_constant(), wave_standing()
    mesh = mesh_for("wave", 1)
    x, tris = interior_points(mesh, 10, rng)
    t0 = np.column_stack([np.zeros(20), np.linspace(0, 1, 20)])
    trivial = 0.0
    for man in (const, standing):
        trivial = max(trivial, float(np.abs(man.system.residual(man.exact(x), x)).max()),
                      float(np.abs(man.system.trace_residual(man.exact(t0), t0)).max()))
    # interpolant residual of the standing wave under refinement
    v = lambda x: np.sin(np.pi * x[:, 1]) * np.cos(np.pi * x[:, 0])
    s = lambda x: np.cos(np.pi * x[:, 1]) * np.sin(np.pi * x[:, 0])
    hs, res = [], []
    for level in range(1, 5):
        P = make_product(mesh_for("wave", level), "wave")
        hs.append(P.mesh.h_max)
        res.append(np.sqrt(ls_value(standing.system, P, P.interpolate([v, s]))))
    rate = slope(hs, res)
    # additivity with the initial trace counted once
    sys, P = fixture("wave", refine=2)
    c = rng.standard_normal(P.total_dim)
    add_est = abs(np.sum(estimate(sys, P, c).local ** 2) - brute_ls(sys, P, c, 6)) / max(1.0, ls_value(sys, P, c))
    local = error_norm(sys, P, c, local=True)
    add_norm = abs(np.sum(local**2) - error_norm(sys, P, c) ** 2) / max(1.0, np.sum(local**2))
    ok = trivial <= 1e-12 and np.all(np.diff(res) < 0) and rate > 0.8 and add_est <= 1e-12 and add_norm <= 1e-12
    assert criterion(9, "space-time wave", ok, f"exact residual {trivial:.1e}, interpolant slope {rate:.2f}, "
                                               f"additivity {max(add_est, add_norm):.1e}")


@numbered(10)
def test_ocp_consistency(criterion):
    rng = np.random.default_rng(110)
    lam = 0.5
    mesh = mesh_for("poisson", 2)
    Pp = make_product(mesh, "poisson")
    c, f, g = discrete_poisson_data(Pp, rng)
    z = fe_field(Pp, c, 0)
    P = make_product(mesh, "ocp_poisson")
    U = solve(assemble(ocp_poisson(lam, f=f, z=z, g_y=g), P))
    adj = float(np.abs(U[P.offsets[2]:]).max())  # adjoint block (p, sigma_p)
    q = float(np.abs(recover_control(P, U, lam)).max())

    rule = collapsed_rule(4)
    xq = mesh.to_physical(np.arange(mesh.n_triangles), rule.points).reshape(-1, 2)
    tq = np.repeat(np.arange(mesh.n_triangles), len(rule))
    wq = (2 * mesh.areas[:, None] * rule.weights[None, :]).reshape(-1)
    d_coeffs = np.zeros(Pp.total_dim)
    d_coeffs[:Pp.offsets[1]] = rng.standard_normal(Pp.offsets[1])
    direction = fe_field(Pp, d_coeffs, 0)

    def J(eps):
        qf = Field(lambda x: f(x) + eps * direction(x), 1, "f + eps d")
        y = solve(assemble(poisson_helmholtz(f=qf, g=g), Pp))
        diff = Pp.evaluate(y, xq, tq)[:, 0, 0] - z(xq)
        return 0.5 * wq @ diff**2 + 0.5 * lam * eps**2 * wq @ direction(xq) ** 2

    eps = 1e-4
    grad = abs(J(eps) - J(-eps)) / (2 * eps)
    ok = adj <= 1e-8 and q <= 1e-8 and grad <= 1e-6 and J(eps) >= J(0.0)
    assert criterion(10, "OCP consistency", ok, f"|P| {adj:.1e}, |q| {q:.1e}, FD gradient {grad:.1e}")


@numbered(11)
def test_deep_fem_equivalence(criterion):
    worst_ls, worst_eta = 0.0, 0.0
    for name in FIXTURES:
        sys, P = fixture(name, refine=2)
        fnet, ls_nn = deep_lsq_solve(sys, P)
        u = solve(assemble(sys, P))
        ls_fem = ls_value(sys, P, u)
        worst_ls = max(worst_ls, abs(ls_nn - ls_fem) / max(1.0, ls_fem))
        eta_nn = np.sqrt(nn_local_residual_sq(sys, fnet))
        worst_eta = max(worst_eta, float(np.abs(eta_nn - estimate(sys, P, u).local).max()))
    ok = worst_ls <= 1e-12 and worst_eta <= 1e-10
    assert criterion(11, "deep/FEM equivalence", ok, f"LS gap {worst_ls:.1e}, estimator gap {worst_eta:.1e}")


@numbered(12)
def test_marking_properties(criterion):
    rng = np.random.default_rng(112)
    failures = 0
    for trial in range(100):
        n = int(rng.integers(1, 13))
        eta = rng.exponential(size=n) * (rng.random(n) < 0.8)
        theta, sigma = rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95)
        marked = mark_doerfler(eta, theta)
        sq, total = eta**2, np.sum(eta**2)
        minimal = next(k for k in range(n + 1) if total == 0 or any(
            sq[list(s)].sum() >= theta * total for s in combinations(range(n), k)))
        failures += len(marked) != minimal
        failures += marking_gap(eta, marked, "doerfler", theta) < 0
        failures += marking_gap(eta, mark_maximum(eta, sigma), "maximum", sigma) < 0
    assert criterion(12, "marking properties", failures == 0, f"100 trials, {failures} failures")
