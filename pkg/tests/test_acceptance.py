"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` (the lines bypass capture).
"""
import itertools
import time

import numpy as np
import pytest

from conftest import star_edges
from hjnet.experiments import drift_family, linf_dependence_experiment, c2_dependence_experiment, ratio_summary
from hjnet.fokker_planck import Measure, MeasurePath, solve_fp
from hjnet.hamiltonian import constant_problem, quadratic_problem, single_control_problem, smoothed_density_coupling
from hjnet.hjb import solve_discounted, solve_ergodic
from hjnet.homogenization import (
    EffectiveQuery, LatticeSpec, build_lattice, effective_hamiltonian, kirchhoff_smooth_check,
    quadratic_cell_control, random_trig_field, rate_experiment, solve_cell_problem, solve_effective_pde,
)
from hjnet.mfg import solve_mfg, verify_time_holder
from hjnet.network import Mesh, build_network
from hjnet.transport import AtomizedMeasure, geodesic_distance, measure_distance, wasserstein1


@pytest.fixture
def report(capsys):
    def _report(k, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {k}: {detail}")
    return _report


def star():
    return build_network(star_edges())


def loop():
    return build_network([(0, 0, 1.0, 1.0, 0.5, 0.5)])


def smooth_cell_control():
    return quadratic_cell_control(
        21, 1.0,
        potential=lambda x: 0.5 * np.cos(2 * np.pi * x[0]),
        oscillation=lambda k, y: 0.5 * np.cos(2 * np.pi * y + k),
        drift_shift=lambda x, k, y: 0.3 * np.sin(2 * np.pi * x[0]) + 0 * y,
    )


def order(values):
    """Observed order from three successive halvings."""
    v = np.asarray(values, float)
    return float(np.log2(abs(v[0] - v[1]) / abs(v[1] - v[2])))


def test_1_effective_hamiltonian_oracle(report, rng):
    t0 = time.perf_counter()
    cc = smooth_cell_control()
    gaps = []
    for i in range(50):
        N = 1 + i % 2
        spec = LatticeSpec.from_epsilon(N, 0.25, (1.0,) if N == 1 else (1.0, 0.5))
        A = rng.normal(size=(N, N))
        q = EffectiveQuery(rng.uniform(0, 1, N), rng.normal(size=N), A + A.T)
        _, rho = solve_cell_problem(cc, spec, q, n=1024)
        gaps.append(abs(effective_hamiltonian(cc, spec, q, n_quad=1024) + rho))
    elapsed = time.perf_counter() - t0
    ok = max(gaps) <= 1e-5 and elapsed <= 120
    report(1, ok, f"max |Hbar + rho_cell| = {max(gaps):.2e} over 50 queries, {elapsed:.1f}s")
    assert ok


def test_2_trivial_ergodic_fixtures(report):
    worst = 0.0
    for net in (star(), loop()):
        mesh = Mesh.uniform(net, h_max=0.02)
        for c in (0.0, 0.7, -1.3):
            s = solve_ergodic(mesh, constant_problem(c), tol=1e-10)
            worst = max(worst, abs(s.rho - c), s.v.sup())
        V = lambda e, y: 0.4 * np.sin(3 * y + e)
        a = solve_ergodic(mesh, quadratic_problem(21, 1.0, potential=V), tol=1e-10)
        b = solve_ergodic(mesh, quadratic_problem(21, 1.0, potential=lambda e, y: V(e, y) + 0.25), tol=1e-10)
        worst = max(worst, abs(b.rho - a.rho - 0.25), (a.v - b.v).sup())
    ok = worst <= 1e-10
    report(2, ok, f"worst deviation {worst:.2e}")
    assert ok


def test_3_vanishing_discount(report):
    mesh = Mesh.uniform(loop(), n=200)
    cp = single_control_problem(lambda e, y: 0 * y, lambda e, y: np.cos(2 * np.pi * y))
    tol = 1e-10
    rho = solve_ergodic(mesh, cp, tol=tol).rho
    lams = np.array([1e-1, 1e-2, 1e-3])
    errs = np.array([abs(lam * solve_discounted(mesh, cp, lam=lam, tol=tol).v.values[0][0] - rho) for lam in lams])
    slope = float(np.polyfit(np.log(lams), np.log(errs), 1)[0])
    d = solve_ergodic(mesh, cp, mode="direct", tol=tol)
    v = solve_ergodic(mesh, cp, mode="vanishing", tol=tol)
    gap = abs(d.rho - v.rho)
    ok = slope >= 0.9 and gap <= 10 * tol
    report(3, ok, f"fitted order {slope:.3f}, |rho_direct - rho_vanishing| = {gap:.2e}")
    assert ok


def test_4_continuous_dependence(report):
    t0 = time.perf_counter()
    mesh = Mesh.uniform(star(), h_max=0.02)
    fam = drift_family()
    scales = (1e-1, 1e-2, 1e-3, 1e-4)
    c2 = {lam: ratio_summary(c2_dependence_experiment(mesh, fam, lam, scales)) for lam in (0.0, 0.1)}
    linf = np.array([linf_dependence_experiment(mesh, fam, lam, scales).column("ratio") for lam in (1e-1, 1e-2, 1e-3)])
    spread = float((linf.max(axis=0) / linf.min(axis=0)).max())
    elapsed = time.perf_counter() - t0
    bounded = all(s["bounded"] for s in c2.values())
    ok = bounded and spread <= 2 and elapsed <= 300
    detail = ", ".join(f"lam={lam}: max/median {s['max'] / s['median']:.3f}" for lam, s in c2.items())
    report(4, ok, f"C2 ratio {detail}; Linf ratio spread over lam {spread:.3f}; {elapsed:.1f}s")
    assert ok


def test_5_fp_conservation(report):
    net = star()
    mesh = Mesh(net, (160, 240, 112))
    assert mesh.n_nodes >= 500
    m0 = Measure.from_density(mesh, lambda a, y: np.where(a == 0, np.exp(-((y - 0.5) / 0.1) ** 2), 0.0) + 1e-3)
    path = solve_fp(mesh, lambda a, y: 1.5 * np.sin(2 * y + a), m0, T=1.0, dt=1e-4)
    steps = len(path) - 1
    merr = float(np.abs(path.masses() - 1).max())
    mind = path.min_density()
    ok = steps >= 10_000 and merr <= 1e-10 and mind >= -1e-12
    report(5, ok, f"{steps} steps on {mesh.n_nodes} nodes: max |mass - 1| = {merr:.2e}, min value = {mind:.2e}")
    assert ok


def _points(net, rng, n):
    out = []
    for _ in range(n):
        a = int(rng.integers(net.n_edges))
        out.append((a, float(rng.uniform(0, net.edges[a].length))))
    return out


def _enumerated(net, ps, ks, pt, kt, q):
    xs = [p for p, k in zip(ps, ks) for _ in range(k)]
    ys = [p for p, k in zip(pt, kt) for _ in range(k)]
    C = np.array([[geodesic_distance(net, x, y) for y in ys] for x in xs])
    perms = np.array(list(itertools.permutations(range(q))))
    return float(C[np.arange(q), perms].sum(axis=1).min() / q)


def test_6_wasserstein_oracle(report, rng):
    q = 6
    nets = (star(), loop())
    worst = 0.0
    for i in range(100):
        net = nets[i % 2]
        sizes = rng.integers(1, 6, size=2)
        comp = [np.diff(np.r_[0, np.sort(rng.choice(np.arange(1, q), s - 1, replace=False)), q]) for s in sizes]
        ps, pt = _points(net, rng, sizes[0]), _points(net, rng, sizes[1])
        got = wasserstein1(AtomizedMeasure(net, ps, comp[0] / q), AtomizedMeasure(net, pt, comp[1] / q))
        worst = max(worst, abs(got - _enumerated(net, ps, comp[0], pt, comp[1], q)))
    axiom = 0.0
    for i in range(100):
        net = nets[i % 2]
        ms = [AtomizedMeasure(net, _points(net, rng, 3), rng.dirichlet(np.ones(3))) for _ in range(3)]
        d = {(a, b): wasserstein1(ms[a], ms[b]) for a in range(3) for b in range(3)}
        axiom = max(axiom, d[0, 0], abs(d[0, 1] - d[1, 0]), d[0, 2] - d[0, 1] - d[1, 2], -min(d.values()))
    ok = worst <= 1e-9 and axiom <= 1e-9
    report(6, ok, f"max |flow - enumeration| = {worst:.2e}; worst axiom violation = {axiom:.2e}")
    assert ok


def test_7_mfg(report):
    mesh = Mesh.uniform(star(), h_max=0.05)
    cp = quadratic_problem(21, 1.0, potential=lambda e, y: 0.5 * np.sin(3 * y + e))
    F = smoothed_density_coupling(0.05, 0.2)
    bump = lambda edge: (lambda a, y: np.where(a == edge, np.exp(-((y - 0.5) / 0.16) ** 2), 0.0) + 0.01)
    m0 = Measure.from_density(mesh, bump(0))
    a = solve_mfg(mesh, cp, F, m0, T=1.0, dt=0.02, tol=1e-6, max_iter=50)
    other = Measure.from_density(mesh, bump(2))
    init = MeasurePath(a.times, [m0] + [other] * (len(a.times) - 1))
    b = solve_mfg(mesh, cp, F, m0, T=1.0, dt=0.02, tol=1e-6, max_iter=50, initial_path=init)
    gap = max(measure_distance(x, y) for x, y in zip(a.path.measures, b.path.measures))
    holder = verify_time_holder(a)
    ok = a.converged and b.converged and a.residual <= 1e-6 and gap <= 5e-6 and holder["passed"]
    report(7, ok, f"iterations {a.iterations}/{b.iterations}, residual {a.residual:.2e}, "
                  f"start gap {gap:.2e}, time exponent {holder['exponent']:.3f}")
    assert ok


def test_8_homogenization_rate(report):
    t0 = time.perf_counter()
    spec = LatticeSpec(1, 4, (1.0,), (0.5,))
    tab = rate_experiment(smooth_cell_control(), spec, (1 / 8, 1 / 16, 1 / 32, 1 / 64))
    elapsed = time.perf_counter() - t0
    ok = tab.decreasing and tab.slope > 0 and elapsed <= 600
    errs = ", ".join(f"{e:.2e}" for e in tab.errors)
    report(8, ok, f"E = [{errs}], fitted slope {tab.slope:.3f} (target 0.5), {elapsed:.1f}s")
    assert ok


def test_9_kirchhoff_smooth_fields(report, rng):
    worst = 0.0
    for i in range(20):
        N = 1 + i % 2
        lat = build_lattice(LatticeSpec.from_epsilon(N, 1 / 8, (1.0,) if N == 1 else (1.0, 0.5)))
        _, grad = random_trig_field(N, rng)
        worst = max(worst, kirchhoff_smooth_check(grad, lat))
    ok = worst <= 1e-12
    report(9, ok, f"max vertex residual {worst:.2e} over 20 fields")
    assert ok


def test_10_grid_convergence(report):
    cp = quadratic_problem(21, 1.0, potential=lambda e, y: np.sin(3 * y + e), drift_shift=lambda e, y: 0.3 + 0 * y)
    rhos = [solve_ergodic(Mesh.uniform(star(), h_max=h), cp).rho for h in (0.02, 0.01, 0.005)]
    spec = LatticeSpec(1, 4, (1.0,), (0.5,))
    us = [solve_effective_pde(smooth_cell_control(), spec, G).u for G in (64, 128, 256)]
    p_u = float(np.log2(np.abs(us[0] - us[1][::2]).max() / np.abs(us[1] - us[2][::2]).max()))
    p_rho = order(rhos)
    ok = p_rho >= 0.9 and p_u >= 1.9
    report(10, ok, f"rho order {p_rho:.3f}, effective solution order {p_u:.3f}")
    assert ok
