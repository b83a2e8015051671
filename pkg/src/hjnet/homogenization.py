"""Homogenization of viscous HJ equations on periodic lattice networks.

The lattice ``eps Z^N`` restricted to the unit torus carries edges of length
``eps`` in the directions ``e_k``; diffusion ``mu_k`` and Kirchhoff weight
``gamma_k`` depend on the direction only, with ``2 sum_k gamma_k mu_k = 1``.
On edge direction ``k`` the Hamiltonian is

    H_k(x, y, p) = max_a { -b(x, k, y, a) p - f(x, k, y, a) },   y in [0, 1],

with ``x`` the macroscopic point and ``y`` the position along the unit cell
edge.  Control data callables receive ``x`` as a sequence of ``N`` arrays
of shape ``(n, 1)``, the direction ``k``, ``y`` of shape ``(n, 1)`` and the
controls of shape ``(1, n_controls)``.

The corrector problem on the unit cell has no gradient of the corrector
inside ``H``, so the effective Hamiltonian is an explicit average

    Hbar(x, P, X) = sum_k gamma_k [ int_0^1 H_k(x, y, P_k) dy - mu_k X_kk ] / sum_k gamma_k.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InvalidEpsilon, KirchhoffWeightSumViolation, NoConvergence
from .hamiltonian import ControlProblem, single_control_problem
from .hjb import ErgodicSolution, solve_discounted, solve_ergodic
from .network import H1_TOL, Edge, Mesh, Network, build_network

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# lattice


@dataclass(frozen=True)
class LatticeSpec:
    dim: int
    M: int
    mu: tuple
    gamma: tuple

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError("lattice dimension must be 1 or 2")
        if int(self.M) != self.M or self.M < 2:
            raise InvalidEpsilon(f"need eps = 1/M with integer M >= 2, got M = {self.M}")
        object.__setattr__(self, "mu", tuple(float(m) for m in self.mu))
        object.__setattr__(self, "gamma", tuple(float(g) for g in self.gamma))
        if len(self.mu) != self.dim or len(self.gamma) != self.dim:
            raise ValueError("need one mu and one gamma per direction")
        total = 2 * sum(g * m for g, m in zip(self.gamma, self.mu))
        if abs(total - 1) > H1_TOL:
            raise KirchhoffWeightSumViolation("lattice vertex", total)

    @property
    def eps(self) -> float:
        return 1.0 / self.M

    @classmethod
    def from_epsilon(cls, dim: int, eps: float, mu: Sequence[float], gamma: Sequence[float] | None = None) -> "LatticeSpec":
        if eps <= 0:
            raise InvalidEpsilon(f"eps must be positive, got {eps}")
        M = round(1.0 / eps)
        if M < 2 or abs(1.0 / eps - M) > 1e-9 * M:
            raise InvalidEpsilon(f"eps = {eps} is not 1/M for an integer M >= 2")
        return cls(dim, int(M), tuple(mu), tuple(gamma) if gamma is not None else default_gamma(mu))

    def with_M(self, M: int) -> "LatticeSpec":
        return LatticeSpec(self.dim, M, self.mu, self.gamma)


def default_gamma(mu: Sequence[float]) -> tuple:
    """Equal shares ``gamma_k mu_k = 1 / (2N)``."""
    return tuple(1.0 / (2 * len(mu) * m) for m in mu)


@dataclass(frozen=True, eq=False)
class Lattice:
    spec: LatticeSpec
    network: Network
    vertex_coords: np.ndarray  # (n_vertices, N), multiples of eps in [0, 1)
    edge_direction: np.ndarray  # (n_edges,)
    edge_start: np.ndarray  # (n_edges, N), coordinates of the tail

    @property
    def eps(self) -> float:
        return self.spec.eps


def build_lattice(spec: LatticeSpec) -> Lattice:
    """Periodic lattice on the unit torus: ``M^N`` vertices, ``N M^N`` edges of length ``eps``."""
    N, M, eps = spec.dim, spec.M, spec.eps
    shape = (M,) * N
    multi = list(itertools.product(range(M), repeat=N))
    index = {m: i for i, m in enumerate(multi)}
    edges, dirs, starts = [], [], []
    for m in multi:
        for k in range(N):
            nb = list(m)
            nb[k] = (nb[k] + 1) % M
            edges.append(Edge(index[m], index[tuple(nb)], eps, spec.mu[k], spec.gamma[k], spec.gamma[k]))
            dirs.append(k)
            starts.append(np.array(m, float) * eps)
    net = build_network(edges, int(np.prod(shape)))
    coords = np.array(multi, float) * eps
    return Lattice(spec, net, coords, np.array(dirs), np.array(starts))


def cell_network(spec: LatticeSpec) -> Network:
    """Quotient of the unit lattice: one vertex and one unit loop per direction."""
    return build_network([Edge(0, 0, 1.0, spec.mu[k], spec.gamma[k], spec.gamma[k]) for k in range(spec.dim)], 1)


# ---------------------------------------------------------------------------
# control data


CellFn = Callable[[Sequence[np.ndarray], int, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class CellControl:
    controls: np.ndarray
    drift: CellFn
    cost: CellFn
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "controls", np.atleast_1d(np.asarray(self.controls, float)))

    def tables(self, x, k: int, y) -> tuple[np.ndarray, np.ndarray]:
        """Drift and cost, shape ``(n, n_controls)``; ``x`` holds one array (or scalar) per axis."""
        y = np.atleast_1d(np.asarray(y, float)).reshape(-1, 1)
        xs = [np.broadcast_to(np.asarray(c, float).reshape(-1, 1), y.shape) for c in x]
        a = self.controls[None, :]
        shape = (y.shape[0], a.shape[1])
        b = np.broadcast_to(np.asarray(self.drift(xs, k, y, a), float), shape)
        f = np.broadcast_to(np.asarray(self.cost(xs, k, y, a), float), shape)
        return b, f

    def hamiltonian(self, x, k: int, y, p) -> np.ndarray:
        b, f = self.tables(x, k, y)
        return (-b * np.asarray(p, float).reshape(-1, 1) - f).max(axis=1)


def quadratic_cell_control(n_controls: int = 21, amax: float = 1.0,
                           potential: Callable | None = None,
                           oscillation: Callable | None = None,
                           drift_shift: Callable | None = None) -> CellControl:
    """``b = a + drift_shift(x, k, y)``, ``f = a^2/2 + potential(x) + oscillation(k, y)``."""
    V = potential or (lambda x: 0.0 * x[0])
    g = oscillation or (lambda k, y: 0.0 * y)
    s = drift_shift or (lambda x, k, y: 0.0 * y)
    return CellControl(
        np.linspace(-amax, amax, n_controls),
        lambda x, k, y, a: a + s(x, k, y),
        lambda x, k, y, a: 0.5 * a**2 + V(x) + g(k, y),
        name="quadratic",
    )


def constant_cell_control(c: float) -> CellControl:
    return CellControl([0.0], lambda x, k, y, a: 0.0 * y, lambda x, k, y, a: c + 0.0 * y, name="constant")


# ---------------------------------------------------------------------------
# effective Hamiltonian and cell problem


@dataclass(frozen=True)
class EffectiveQuery:
    x: np.ndarray
    P: np.ndarray
    X: np.ndarray

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, float))
        P = np.atleast_1d(np.asarray(self.P, float))
        X = np.atleast_2d(np.asarray(self.X, float))
        if X.shape != (P.size, P.size) or x.size != P.size:
            raise ValueError("x, P and X dimensions disagree")
        if np.abs(X - X.T).max() > 1e-12:
            raise ValueError("X must be symmetric")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "X", X)


def _trapezoid(n: int) -> tuple[np.ndarray, np.ndarray]:
    y = np.linspace(0.0, 1.0, n + 1)
    w = np.full(n + 1, 1.0 / n)
    w[[0, -1]] *= 0.5
    return y, w


def effective_hamiltonian(cc: CellControl, spec: LatticeSpec, q: EffectiveQuery, n_quad: int = 1024) -> float:
    """Closed-form average over the cell edges (composite trapezoid in ``y``)."""
    y, w = _trapezoid(n_quad)
    num = 0.0
    for k in range(spec.dim):
        Hk = cc.hamiltonian(q.x, k, y, np.full(y.size, q.P[k]))
        num += spec.gamma[k] * (float(w @ Hk) - spec.mu[k] * q.X[k, k])
    return num / sum(spec.gamma)


def solve_cell_problem(cc: CellControl, spec: LatticeSpec, q: EffectiveQuery, n: int = 1024,
                       tol: float = 1e-10) -> tuple:
    """Corrector ``v`` (mean zero) and constant ``rho`` on the one-vertex cell network.

    Per loop ``k``: ``-mu_k v'' - mu_k X_kk + H_k(x, y, P_k) + rho = 0`` with
    the Kirchhoff condition at the vertex.  Delegates to the direct ergodic
    solver with a single control whose cost carries the known terms.
    """
    net = cell_network(spec)
    mesh = Mesh.uniform(net, n=n)

    def cost(e, y):
        H = cc.hamiltonian(q.x, e, y, np.full(np.size(y), q.P[e]))
        return spec.mu[e] * q.X[e, e] - H.reshape(np.shape(y))

    cp = single_control_problem(lambda e, y: 0.0 * y, cost)
    sol: ErgodicSolution = solve_ergodic(mesh, cp, mode="direct", tol=tol)
    return sol.v, sol.rho


# ---------------------------------------------------------------------------
# effective PDE on the torus


@dataclass(frozen=True, eq=False)
class EffectiveSolution:
    u: np.ndarray  # shape (G,) * N
    G: int
    residual: float
    iterations: int
    scheme: str
    method: str

    @property
    def h(self) -> float:
        return 1.0 / self.G

    def at(self, points: np.ndarray) -> np.ndarray:
        """Periodic multilinear interpolation at points of shape ``(n, N)``."""
        pts = np.atleast_2d(points) * self.G
        N = self.u.ndim
        base = np.floor(pts + 1e-9).astype(int)
        frac = np.clip(pts - base, 0.0, 1.0)
        out = np.zeros(pts.shape[0])
        for corner in itertools.product((0, 1), repeat=N):
            wgt = np.ones(pts.shape[0])
            idx = []
            for d, c in enumerate(corner):
                wgt *= frac[:, d] if c else 1 - frac[:, d]
                idx.append((base[:, d] + c) % self.G)
            out += wgt * self.u[tuple(idx)]
        return out


class _TorusScheme:
    def __init__(self, cc: CellControl, spec: LatticeSpec, G: int, n_quad: int, scheme: str):
        self.cc, self.spec, self.G, self.N = cc, spec, G, spec.dim
        self.h = 1.0 / G
        grids = np.meshgrid(*[np.arange(G) / G] * self.N, indexing="ij")
        self.x = [g.ravel() for g in grids]
        self.n = G**self.N
        self.wk = np.array(spec.gamma) / sum(spec.gamma)
        self.yq, self.wq = _trapezoid(n_quad)
        ids = np.arange(self.n).reshape((G,) * self.N)
        self.plus = [np.roll(ids, -1, axis=k).ravel() for k in range(self.N)]
        self.minus = [np.roll(ids, 1, axis=k).ravel() for k in range(self.N)]
        bmax = [max(float(np.abs(self._tables(k, q)[0]).max()) for q in range(self.yq.size)) for k in range(self.N)]
        centered = all(bm <= 2 * mu / self.h for bm, mu in zip(bmax, spec.mu))
        if scheme == "auto":
            scheme = "centered" if centered else "upwind"
        elif scheme == "centered" and not centered:
            raise ValueError("centered differences are not monotone at this resolution")
        self.scheme = scheme

    def _tables(self, k, q):
        y = np.full(self.n, self.yq[q])
        return self.cc.tables(self.x, k, y)

    def improve(self, u, policy=None):
        """Policy per (direction, quadrature point) and the linear coefficients it induces."""
        new = np.empty((self.N, self.yq.size, self.n), dtype=int)
        cb = np.zeros((self.N, self.n))
        cf = np.zeros((self.N, self.n))
        src = np.zeros(self.n)
        ham = np.zeros(self.n)
        rows = np.arange(self.n)
        for k in range(self.N):
            fwd = (u[self.plus[k]] - u) / self.h
            bwd = (u - u[self.minus[k]]) / self.h
            for q in range(self.yq.size):
                b, f = self._tables(k, q)
                if self.scheme == "centered":
                    D = 0.5 * (fwd + bwd)[:, None]
                else:
                    D = np.where(b > 0, fwd[:, None], bwd[:, None])
                vals = -b * D - f
                best = np.argmax(vals, axis=1)
                if policy is not None:
                    cur = policy[k, q]
                    vb, vc = vals[rows, best], vals[rows, cur]
                    best = np.where(vb > vc + 1e-13 * np.maximum(1.0, np.abs(vb)), best, cur)
                new[k, q] = best
                g = -b[rows, best]
                wq = self.wq[q] * self.wk[k]
                if self.scheme == "centered":
                    cb[k] += wq * 0.5 * g
                    cf[k] += wq * 0.5 * g
                else:
                    cb[k] += wq * np.maximum(g, 0.0)
                    cf[k] += wq * np.minimum(g, 0.0)
                src += wq * f[rows, best]
                ham += wq * vals[rows, best]
        return new, cb, cf, src, ham

    def matrix(self, cb, cf):
        h = self.h
        diag = np.ones(self.n)
        rows, cols, data = [], [], []
        for k in range(self.N):
            mu, w = self.spec.mu[k], self.wk[k]
            diag += cb[k] / h - cf[k] / h + 2 * w * mu / h**2
            rows += [np.arange(self.n), np.arange(self.n)]
            cols += [self.minus[k], self.plus[k]]
            data += [-cb[k] / h - w * mu / h**2, cf[k] / h - w * mu / h**2]
        rows.append(np.arange(self.n))
        cols.append(np.arange(self.n))
        data.append(diag)
        return sp.coo_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(self.n, self.n)).tocsc()

    def residual(self, u):
        _, _, _, _, ham = self.improve(u)
        lap = np.zeros(self.n)
        for k in range(self.N):
            lap += self.wk[k] * self.spec.mu[k] * (u[self.plus[k]] - 2 * u + u[self.minus[k]]) / self.h**2
        return u + ham - lap

    def solve_policy(self, cb, cf, src):
        return spla.spsolve(self.matrix(cb, cf), src)


def solve_effective_pde(cc: CellControl, spec: LatticeSpec, G: int, *, n_quad: int = 64, tol: float = 1e-8,
                        max_iter: int = 100, scheme: str = "auto", omega: float = 0.5) -> EffectiveSolution:
    """``u + Hbar(x, Du, D^2 u) = 0`` on the unit torus with ``G`` points per axis.

    Second differences are centered; first differences are centered when
    that keeps the scheme monotone (``scheme="auto"``) and upwinded per
    control otherwise.  Policy iteration is tried first, then a damped
    fixed point on the policy map.
    """
    ts = _TorusScheme(cc, spec, G, n_quad, scheme)
    u = np.zeros(ts.n)
    policy = None
    history = []
    for it in range(1, max_iter + 1):
        new, cb, cf, src, _ = ts.improve(u, policy)
        if policy is not None and np.array_equal(new, policy):
            break
        policy = new
        u = ts.solve_policy(cb, cf, src)
        history.append(float(np.abs(ts.residual(u)).max()))
    res = float(np.abs(ts.residual(u)).max())
    method = "howard"
    if res > tol:
        method = "fixed_point"
        for it2 in range(max_iter):
            _, cb, cf, src, _ = ts.improve(u)
            u = (1 - omega) * u + omega * ts.solve_policy(cb, cf, src)
            res = float(np.abs(ts.residual(u)).max())
            history.append(res)
            if res <= tol:
                break
        else:
            raise NoConvergence(history, "effective equation did not converge")
    return EffectiveSolution(u.reshape((G,) * spec.dim), G, res, len(history), ts.scheme, method)


# ---------------------------------------------------------------------------
# lattice problem and rate experiment


def lattice_problem(cc: CellControl, lattice: Lattice) -> ControlProblem:
    """Control data on the lattice edges: ``x`` along the edge, ``y = s / eps`` in the cell."""
    eps = lattice.eps
    dirs, starts = lattice.edge_direction, lattice.edge_start

    def point(e, y):
        k = int(dirs[e])
        x = [starts[e, j] + (y if j == k else 0.0 * y) for j in range(lattice.spec.dim)]
        return x, k, y / eps

    def drift(e, y, a):
        x, k, yc = point(e, y)
        return cc.drift(x, k, yc, a)

    def cost(e, y, a):
        x, k, yc = point(e, y)
        return cc.cost(x, k, yc, a)

    return ControlProblem(cc.controls, drift, cost, name=f"lattice[{cc.name}]")


def solve_lattice_hj(cc: CellControl, lattice: Lattice, n_per_edge: int = 16, tol: float = 1e-10):
    """Discounted problem with unit discount on the lattice network."""
    mesh = Mesh.uniform(lattice.network, n=n_per_edge)
    return solve_discounted(mesh, lattice_problem(cc, lattice), None, 1.0, tol=tol)


@dataclass
class RateTable:
    eps: np.ndarray
    errors: np.ndarray
    slope: float
    constant: float

    @property
    def decreasing(self) -> bool:
        return bool(np.all(np.diff(self.errors) < 0))

    def rows(self) -> list[dict]:
        return [{"eps": float(e), "error": float(E)} for e, E in zip(self.eps, self.errors)]


def fit_power_law(xs, ys) -> tuple[float, float]:
    """Least-squares slope and constant of ``log y`` against ``log x``."""
    xs, ys = np.asarray(xs, float), np.asarray(ys, float)
    keep = ys > 0
    if keep.sum() < 2:
        return math.nan, math.nan
    s, c = np.polyfit(np.log(xs[keep]), np.log(ys[keep]), 1)
    return float(s), float(math.exp(c))


def rate_experiment(cc: CellControl, spec: LatticeSpec, eps_list: Sequence[float] = (1 / 8, 1 / 16, 1 / 32, 1 / 64), *,
                    G: int | None = None, n_per_edge: int = 16, n_quad: int = 64, tol: float = 1e-10) -> RateTable:
    """Sup distance between lattice and effective solutions at the lattice vertices."""
    if G is None:
        G = 512 if spec.dim == 1 else 64
    eff = solve_effective_pde(cc, spec, G, n_quad=n_quad)
    errs = []
    for eps in eps_list:
        lat = build_lattice(LatticeSpec.from_epsilon(spec.dim, eps, spec.mu, spec.gamma))
        sol = solve_lattice_hj(cc, lat, n_per_edge, tol)
        uv = sol.v.to_vector()[: lat.network.n_vertices]
        errs.append(float(np.abs(uv - eff.at(lat.vertex_coords)).max()))
    errs = np.array(errs)
    if errs.max() <= 1e-12 * max(1.0, float(np.abs(eff.u).max())):  # roundoff only
        return RateTable(np.asarray(eps_list, float), errs, math.nan, math.nan)
    s, c = fit_power_law(eps_list, errs)
    return RateTable(np.asarray(eps_list, float), errs, s, c)


# ---------------------------------------------------------------------------
# Kirchhoff condition for smooth fields


def kirchhoff_smooth_check(grad: Callable[[np.ndarray], np.ndarray], lattice: Lattice) -> float:
    """Max over vertices of ``sum gamma mu (outward derivative)`` of a smooth field.

    ``grad`` maps points ``(n, N)`` to exact gradients ``(n, N)``.
    """
    net = lattice.network
    G = np.atleast_2d(grad(lattice.vertex_coords))
    res = np.zeros(net.n_vertices)
    for a, e in enumerate(net.edges):
        k = lattice.edge_direction[a]
        # outward derivative: -D_k g at the tail, +D_k g at the head
        res[e.tail] += e.gamma_tail * e.mu * (-G[e.tail, k])
        res[e.head] += e.gamma_head * e.mu * G[e.head, k]
    return float(np.abs(res).max())


def random_trig_field(dim: int, rng: np.random.Generator, n_terms: int = 4):
    """Random smooth periodic field; returns ``(value, gradient)`` callables."""
    freqs = rng.integers(-3, 4, size=(n_terms, dim))
    amps = rng.normal(size=n_terms)
    phases = rng.uniform(0, 2 * np.pi, size=n_terms)

    def value(x):
        x = np.atleast_2d(x)
        return (amps * np.sin(2 * np.pi * x @ freqs.T + phases)).sum(axis=1)

    def grad(x):
        x = np.atleast_2d(x)
        c = amps * np.cos(2 * np.pi * x @ freqs.T + phases)
        return 2 * np.pi * c @ freqs

    return value, grad
