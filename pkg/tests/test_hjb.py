import itertools

import numpy as np
import pytest

from hjnet.errors import ModesDisagree, NonMonotoneScheme
from hjnet.hamiltonian import ControlProblem, constant_problem, quadratic_problem, single_control_problem
from hjnet.hjb import (
    assemble_linear_operator, discrete_operator, extrapolate_to_zero, solve_discounted, solve_ergodic,
    verify_comparison,
)
from hjnet.network import Mesh, integrate, mean_value


def fourier_problem():
    return single_control_problem(lambda e, y: 0.0 * y, lambda e, y: np.cos(2 * np.pi * y))


@pytest.mark.parametrize("c", [0.0, 0.7, -2.3])
def test_constant_data_ergodic(star, loop, c):
    for net in (star, loop):
        s = solve_ergodic(Mesh.uniform(net, h_max=0.05), constant_problem(c))
        assert s.rho == pytest.approx(c, abs=1e-10)
        assert s.v.sup() < 1e-10
        assert s.converged


def test_constant_data_discounted(star):
    s = solve_discounted(Mesh.uniform(star, h_max=0.05), constant_problem(0.5), lam=0.2)
    # -mu v'' - 0.5 + 0.2 v = 0
    assert (s.v - 2.5).sup() < 1e-10


def test_cost_shift_moves_rho_only(star):
    mesh = Mesh.uniform(star, h_max=0.02)
    base = quadratic_problem(21, 1.0, potential=lambda e, y: np.sin(3 * y + e))
    shifted = quadratic_problem(21, 1.0, potential=lambda e, y: np.sin(3 * y + e) + 0.4)
    a, b = solve_ergodic(mesh, base), solve_ergodic(mesh, shifted)
    assert b.rho - a.rho == pytest.approx(0.4, abs=1e-10)
    assert (a.v - b.v).sup() < 1e-10


def _symbol(h, mu=1.0):
    return mu * 4 * np.sin(np.pi * h) ** 2 / h**2


def test_fourier_discounted_matches_discrete_symbol(loop):
    mesh = Mesh.uniform(loop, n=64)
    lam = 0.3
    s = solve_discounted(mesh, fourier_problem(), lam=lam)
    exact = mesh.sample(lambda a, y: np.cos(2 * np.pi * y) / (_symbol(mesh.h[0]) + lam))
    assert (s.v - exact).sup() < 1e-12


def test_fourier_ergodic(loop):
    mesh = Mesh.uniform(loop, n=64)
    s = solve_ergodic(mesh, fourier_problem())
    exact = mesh.sample(lambda a, y: np.cos(2 * np.pi * y) / _symbol(mesh.h[0]))
    assert abs(s.rho) < 1e-12
    assert (s.v - exact).sup() < 1e-12


def test_star_linear_rho_is_weighted_average(star):
    # b = 0: integrating the equation against the vertex weights gives rho = average of f
    mesh = Mesh.uniform(star, h_max=0.01)
    f = lambda e, y: np.cos(2.0 * y + e)
    s = solve_ergodic(mesh, single_control_problem(lambda e, y: 0 * y, f))
    avg = integrate(mesh.sample(f, "piecewise")) / star.total_length
    assert s.rho == pytest.approx(avg, abs=1e-12)
    assert abs(mean_value(s.v)) < 1e-12
    assert s.kirchhoff_residual < 1e-10


def test_policy_iteration_equals_min_over_policies(segment):
    # v* = min over all policies of the linear solutions (monotone scheme)
    mesh = Mesh.uniform(segment, n=4)
    cp = ControlProblem([-1.0, 0.0, 1.0], lambda e, y, a: a * (1 + y), lambda e, y, a: 0.5 * a**2 + np.sin(3 * y))
    lam = 0.5
    sol = solve_discounted(mesh, cp, lam=lam)
    from hjnet.hjb import _Scheme, _solve

    scheme = _Scheme(mesh, cp)
    best = np.full(mesh.n_nodes, np.inf)
    for combo in itertools.product(range(3), repeat=mesh.counts[0] + 1):
        A, rhs = scheme.linear_system([np.array(combo)], lam)
        best = np.minimum(best, _solve(A, rhs, 1e-10))
    np.testing.assert_allclose(sol.v.to_vector(), best, atol=1e-12)


def test_nonmonotone_scheme_detected(segment):
    mesh = Mesh.uniform(segment, n=4)
    cp = quadratic_problem(5, 20.0)
    with pytest.raises(NonMonotoneScheme) as exc:
        solve_discounted(mesh, cp, lam=1.0)
    assert exc.value.required_h == pytest.approx(2 * 1.0 / 20.0)


def test_assembled_operator_is_m_matrix(star, rng):
    mesh = Mesh.uniform(star, h_max=0.05)
    g = [rng.uniform(-1, 1, n + 1) for n in mesh.counts]
    A = assemble_linear_operator(mesh, g, 0.1).toarray()
    off = A - np.diag(np.diag(A))
    assert np.all(off <= 1e-15)
    assert np.all(A.sum(axis=1) >= 0.1 * 0.999)


def test_comparison_principle(star):
    mesh = Mesh.uniform(star, h_max=0.05)
    cp = quadratic_problem(21, 1.0, potential=lambda e, y: np.cos(2 * y))
    lam = 0.5
    v = solve_discounted(mesh, cp, lam=lam).v
    assert verify_comparison(mesh, cp, lam, v - 1.0, v)
    assert verify_comparison(mesh, cp, lam, v, v + 0.3)
    # a pair whose residuals are not ordered
    w = mesh.sample(lambda a, y: 0.1 * np.sin(5 * y))
    assert not verify_comparison(mesh, cp, lam, v, v + w)
    r = discrete_operator(mesh, cp, lam, v)
    assert np.abs(r).max() < 1e-10


def test_discounted_bound(star):
    mesh = Mesh.uniform(star, h_max=0.05)
    cp = quadratic_problem(21, 1.0, potential=lambda e, y: np.cos(2 * y))
    for lam in (1.0, 0.1, 0.01):
        s = solve_discounted(mesh, cp, lam=lam)
        assert s.bound_ok


def test_vanishing_agrees_with_direct(star):
    mesh = Mesh.uniform(star, h_max=0.02)
    cp = quadratic_problem(21, 1.0, potential=lambda e, y: np.sin(3 * y + e))
    d = solve_ergodic(mesh, cp, mode="direct")
    v = solve_ergodic(mesh, cp, mode="vanishing")
    assert abs(d.rho - v.rho) < 1e-6
    assert (d.v - v.v).sup() < 1e-4
    solve_ergodic(mesh, cp, mode="both", tol=1e-6)


def test_modes_disagree_raised(star):
    mesh = Mesh.uniform(star, h_max=0.05)
    cp = quadratic_problem(21, 1.0, potential=lambda e, y: np.sin(3 * y + e))
    with pytest.raises(ModesDisagree):
        solve_ergodic(mesh, cp, mode="both", tol=1e-14, lambdas=(0.5, 0.4))


def test_extrapolation_exact_for_polynomials():
    xs = [0.1, 0.05, 0.025]
    ys = [3 + 2 * x - x**2 for x in xs]
    assert extrapolate_to_zero(xs, ys) == pytest.approx(3.0, abs=1e-13)


def test_one_sided_vertex_rows_converge_to_same_rho(star):
    cp = quadratic_problem(21, 1.0, potential=lambda e, y: np.sin(3 * y + e))
    fine = solve_ergodic(Mesh.uniform(star, h_max=0.0025), cp).rho
    gaps = []
    for h in (0.02, 0.01, 0.005):
        gaps.append(abs(solve_ergodic(Mesh.uniform(star, h_max=h), cp, vertex_scheme="one_sided").rho - fine))
    assert gaps[2] < gaps[0]
    assert gaps[2] < 5e-3


def test_ergodic_rho_self_convergence(star):
    cp = quadratic_problem(21, 1.0, potential=lambda e, y: np.sin(3 * y + e), drift_shift=lambda e, y: 0.3 + 0 * y)
    rhos = [solve_ergodic(Mesh.uniform(star, h_max=h), cp).rho for h in (0.02, 0.01, 0.005)]
    order = np.log2(abs(rhos[0] - rhos[1]) / abs(rhos[1] - rhos[2]))
    assert order >= 0.9


def test_unknown_mode(star):
    with pytest.raises(ValueError):
        solve_ergodic(Mesh.uniform(star, n=4), constant_problem(1.0), mode="bogus")


def test_fourier_ergodic_continuous_oracle(loop):
    # -v'' = cos(2 pi y) - rho with rho = 0: v = cos(2 pi y) / (4 pi^2)
    mesh = Mesh.uniform(loop, n=200)
    s = solve_ergodic(mesh, fourier_problem())
    exact = mesh.sample(lambda a, y: np.cos(2 * np.pi * y) / (4 * np.pi**2))
    assert abs(s.rho) < 1e-12
    assert (s.v - exact).sup() < 1e-5


def test_bound_attained_for_constant_cost(star):
    mesh = Mesh.uniform(star, h_max=0.05)
    s = solve_discounted(mesh, constant_problem(1.0), lam=0.5)
    assert (s.v - 2.0).sup() < 1e-12
    assert (s.v * 0.5).sup() == pytest.approx(1.0, abs=1e-12)
    assert s.bound_ok


def test_advected_loop_against_closed_form(loop):
    # -v'' - v' - sin(2 pi y) + 0.1 v = 0: trigonometric solution A sin + B cos
    k, lam = 2 * np.pi, 0.1
    M = np.array([[k**2 + lam, k], [-k, k**2 + lam]])
    A, B = np.linalg.solve(M, [1.0, 0.0])
    mesh = Mesh.uniform(loop, n=400)
    cp = single_control_problem(lambda e, y: 1.0 + 0 * y, lambda e, y: np.sin(k * y))
    s = solve_discounted(mesh, cp, lam=lam)
    exact = mesh.sample(lambda a, y: A * np.sin(k * y) + B * np.cos(k * y))
    assert (s.v - exact).sup() < 5e-4
