import numpy as np
import pytest

from hjnet.errors import InvalidEpsilon, KirchhoffWeightSumViolation
from hjnet.homogenization import (
    CellControl, EffectiveQuery, LatticeSpec, build_lattice, constant_cell_control, effective_hamiltonian,
    fit_power_law, kirchhoff_smooth_check, quadratic_cell_control, random_trig_field, rate_experiment,
    solve_cell_problem, solve_effective_pde, solve_lattice_hj,
)


def wavy(dim_shift=0.3):
    return quadratic_cell_control(
        21, 1.0,
        potential=lambda x: 0.5 * np.cos(2 * np.pi * x[0]),
        oscillation=lambda k, y: 0.5 * np.cos(2 * np.pi * y + k),
        drift_shift=lambda x, k, y: dim_shift * np.sin(2 * np.pi * x[0]) + 0 * y,
    )


def test_lattice_counts():
    one = build_lattice(LatticeSpec(1, 4, (1.0,), (0.5,)))
    assert one.network.n_vertices == 4 and one.network.n_edges == 4
    two = build_lattice(LatticeSpec(2, 3, (1.0, 1.0), (0.25, 0.25)))
    assert two.network.n_vertices == 9 and two.network.n_edges == 18
    assert all(len(inc) == 4 for inc in two.network.incidence)
    assert np.allclose(two.network.lengths, 1 / 3)


def test_epsilon_validation():
    with pytest.raises(InvalidEpsilon):
        LatticeSpec.from_epsilon(1, 0.3, (1.0,))
    with pytest.raises(InvalidEpsilon):
        LatticeSpec(1, 1, (1.0,), (0.5,))
    with pytest.raises(InvalidEpsilon):
        LatticeSpec.from_epsilon(1, -0.25, (1.0,))
    with pytest.raises(KirchhoffWeightSumViolation):
        LatticeSpec(2, 4, (1.0, 1.0), (0.5, 0.5))
    assert LatticeSpec.from_epsilon(2, 0.25, (1.0, 2.0)).gamma == (0.25, 0.125)


def test_query_validation():
    with pytest.raises(ValueError):
        EffectiveQuery([0, 0], [0, 0], [[1, 2], [0, 1]])
    with pytest.raises(ValueError):
        EffectiveQuery([0], [0, 0], np.eye(2))


def test_constant_hamiltonian_cell():
    spec = LatticeSpec(2, 4, (1.0, 1.0), (0.25, 0.25))
    q = EffectiveQuery([0.1, 0.2], [0.3, -0.4], np.zeros((2, 2)))
    assert effective_hamiltonian(constant_cell_control(0.7), spec, q) == pytest.approx(-0.7, abs=1e-12)
    v, rho = solve_cell_problem(constant_cell_control(0.7), spec, q, n=64)
    assert rho == pytest.approx(0.7, abs=1e-12) and v.sup() < 1e-12


def test_hessian_only_cell():
    # H = 0, X = diag(2, 4), mu = 1, gamma = 1/4: the average of -mu X_kk is -3
    spec = LatticeSpec(2, 4, (1.0, 1.0), (0.25, 0.25))
    q = EffectiveQuery([0, 0], [0, 0], np.diag([2.0, 4.0]))
    assert effective_hamiltonian(constant_cell_control(0.0), spec, q) == pytest.approx(-3.0, abs=1e-12)
    assert solve_cell_problem(constant_cell_control(0.0), spec, q, n=64)[1] == pytest.approx(3.0, abs=1e-12)


def test_abs_p_cell():
    # three controls give H = |p| - 1/2
    cc = CellControl([-1.0, 0.0, 1.0], lambda x, k, y, a: a + 0 * y, lambda x, k, y, a: 0.5 + 0 * a * y)
    spec = LatticeSpec(1, 4, (1.0,), (0.5,))
    q = EffectiveQuery([0.0], [1.0], [[0.0]])
    assert effective_hamiltonian(cc, spec, q) == pytest.approx(0.5, abs=1e-12)
    assert solve_cell_problem(cc, spec, q, n=64)[1] == pytest.approx(-0.5, abs=1e-12)


@pytest.mark.parametrize("dim", [1, 2])
def test_closed_form_matches_cell_solver(dim, rng):
    mu = (1.0,) if dim == 1 else (1.0, 0.5)
    spec = LatticeSpec.from_epsilon(dim, 0.25, mu)
    cc = wavy()
    for _ in range(4):
        x, P = rng.uniform(0, 1, dim), rng.uniform(-1, 1, dim)
        A = rng.normal(size=(dim, dim))
        q = EffectiveQuery(x, P, A + A.T)
        v, rho = solve_cell_problem(cc, spec, q, n=256)
        assert -rho == pytest.approx(effective_hamiltonian(cc, spec, q, n_quad=256), abs=1e-10)


def test_effective_hamiltonian_degenerate_elliptic():
    spec = LatticeSpec(2, 4, (1.0, 0.5), (0.25, 0.5))
    cc = wavy()
    base = np.array([[0.2, 0.1], [0.1, -0.3]])
    vals = [effective_hamiltonian(cc, spec, EffectiveQuery([0.3, 0.6], [0.2, 0.5], base + t * np.eye(2)), 128)
            for t in (0.0, 0.5, 1.0)]
    assert vals[0] > vals[1] > vals[2]


def test_effective_pde_constant_data():
    spec = LatticeSpec(2, 4, (1.0, 1.0), (0.25, 0.25))
    sol = solve_effective_pde(constant_cell_control(0.4), spec, 16)
    assert np.abs(sol.u - 0.4).max() < 1e-10
    assert sol.at(np.array([[0.13, 0.77]]))[0] == pytest.approx(0.4, abs=1e-10)


def test_effective_pde_x_independent():
    spec = LatticeSpec(1, 4, (1.0,), (0.5,))
    cc = quadratic_cell_control(21, 1.0, oscillation=lambda k, y: 0.5 * np.cos(2 * np.pi * y))
    sol = solve_effective_pde(cc, spec, 32, n_quad=64)
    hbar = effective_hamiltonian(cc, spec, EffectiveQuery([0.0], [0.0], [[0.0]]), n_quad=64)
    assert np.abs(sol.u + hbar).max() < 1e-10


def test_effective_pde_second_order():
    spec = LatticeSpec(1, 4, (1.0,), (0.5,))
    cc = wavy()
    us = [solve_effective_pde(cc, spec, G).u for G in (64, 128, 256)]
    d1 = np.abs(us[0] - us[1][::2]).max()
    d2 = np.abs(us[1] - us[2][::2]).max()
    assert np.log2(d1 / d2) >= 1.9


def test_lattice_constant_data():
    lat = build_lattice(LatticeSpec(2, 3, (1.0, 1.0), (0.25, 0.25)))
    sol = solve_lattice_hj(constant_cell_control(0.3), lat, n_per_edge=4)
    assert (sol.v - 0.3).sup() < 1e-12


@pytest.mark.parametrize("dim", [1, 2])
def test_smooth_fields_satisfy_kirchhoff(dim, rng):
    mu = (1.0,) if dim == 1 else (1.0, 0.5)
    lat = build_lattice(LatticeSpec.from_epsilon(dim, 1 / 8, mu))
    for _ in range(5):
        _, grad = random_trig_field(dim, rng)
        assert kirchhoff_smooth_check(grad, lat) <= 1e-12


def test_rate_experiment_decreasing():
    spec = LatticeSpec(1, 4, (1.0,), (0.5,))
    table = rate_experiment(wavy(), spec, (1 / 4, 1 / 8, 1 / 16, 1 / 32))
    assert table.decreasing
    assert table.slope > 0
    assert len(table.rows()) == 4


def test_power_law_fit():
    s, c = fit_power_law([0.1, 0.01, 0.001], [0.3 * 0.1**1.5, 0.3 * 0.01**1.5, 0.3 * 0.001**1.5])
    assert s == pytest.approx(1.5) and c == pytest.approx(0.3)


def test_kirchhoff_linear_and_product_fields():
    lat = build_lattice(LatticeSpec.from_epsilon(2, 1 / 8, (1.0, 1.0)))
    lin = lambda x: np.tile([0.7, -1.3], (np.atleast_2d(x).shape[0], 1))
    assert kirchhoff_smooth_check(lin, lat) == 0.0
    sc = lambda x: 2 * np.pi * np.c_[np.cos(2 * np.pi * x[:, 0]) * np.cos(2 * np.pi * x[:, 1]),
                                     -np.sin(2 * np.pi * x[:, 0]) * np.sin(2 * np.pi * x[:, 1])]
    assert kirchhoff_smooth_check(sc, lat) <= 1e-12


def test_zero_mean_oscillation_averages_out():
    # f = cos(2 pi y / eps), b = 0: the effective equation gives u = 0
    cc = CellControl([0.0], lambda x, k, y, a: 0 * y * a, lambda x, k, y, a: np.cos(2 * np.pi * y) + 0 * a)
    sups = []
    for M in (4, 8, 16):
        lat = build_lattice(LatticeSpec(1, M, (1.0,), (0.5,)))
        sups.append(solve_lattice_hj(cc, lat, n_per_edge=16).v.sup())
    assert sups[0] > sups[1] > sups[2]
    assert sups[2] < 1e-3


def test_x_only_data_matches_effective_solution():
    cc = quadratic_cell_control(21, 1.0, potential=lambda x: 0.5 * np.cos(2 * np.pi * x[0]))
    spec = LatticeSpec(1, 4, (1.0,), (0.5,))
    eff = solve_effective_pde(cc, spec, 256)
    errs = []
    for M in (8, 16):
        lat = build_lattice(spec.with_M(M))
        v = solve_lattice_hj(cc, lat).v.to_vector()[: lat.network.n_vertices]
        errs.append(np.abs(v - eff.at(lat.vertex_coords)).max())
    assert errs[1] < errs[0] and errs[1] < 0.05


def test_rate_constant_data_skips_fit():
    table = rate_experiment(constant_cell_control(0.2), LatticeSpec(1, 4, (1.0,), (0.5,)), (1 / 4, 1 / 8), G=16)
    assert np.all(table.errors < 1e-12) and np.isnan(table.slope)
