"""Wasserstein-1 distance between discrete measures on a network.

The ground cost is the geodesic distance.  On a graph, W1 equals the
minimum-cost flow (Beckmann) problem: route the signed mass ``sigma - tau``
through the network, paying the length of every segment crossed.  The atoms
are inserted as extra nodes on their edges, so the flow problem is exact.
A bipartite transportation LP over atom pairs is kept as a cross-check.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .errors import InfeasibleTransport, NotLipschitz
from .network import GridFunction, Mesh, Network, geodesic_distance

MASS_TOL = 1e-9
_SNAP = 1e-12


@dataclass(frozen=True, eq=False)
class AtomizedMeasure:
    network: Network
    points: tuple  # (edge, abscissa) pairs
    masses: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.masses, float)
        if len(self.points) != m.size:
            raise ValueError("one mass per atom")
        if m.size == 0 or np.any(m < 0):
            raise ValueError("masses must be nonnegative and nonempty")
        pts = []
        for a, y in self.points:
            a, y = int(a), float(y)
            L = self.network.edges[a].length
            if not -_SNAP <= y <= L + _SNAP:
                raise ValueError(f"abscissa {y} outside edge {a}")
            pts.append((a, min(max(y, 0.0), L)))
        object.__setattr__(self, "points", tuple(pts))
        object.__setattr__(self, "masses", m)

    @property
    def total(self) -> float:
        return float(self.masses.sum())


def dirac(network: Network, point) -> AtomizedMeasure:
    return AtomizedMeasure(network, (point,), np.ones(1))


def atomize(m) -> AtomizedMeasure:
    """Atoms at the grid nodes with the mass of each cell, renormalized to one."""
    mesh = m.mesh
    cm = np.maximum(m.cell_masses, 0.0)
    keep = np.flatnonzero(cm > 0)
    pts = mesh.node_points()
    masses = cm[keep] / cm[keep].sum()
    return AtomizedMeasure(mesh.network, tuple(pts[i] for i in keep), masses)


# ---------------------------------------------------------------------------
# flow formulation


def _locate(net: Network, point, edge_points: list):
    a, y = point
    e = net.edges[a]
    if y <= _SNAP:
        return ("v", e.tail)
    if y >= e.length - _SNAP:
        return ("v", e.head)
    edge_points[a].add(y)
    return ("e", a, y)


def _flow_value(net: Network, supply_points, supply) -> float:
    """Minimum cost of routing ``supply`` (signed, sums to 0) through the network."""
    edge_points = [set() for _ in net.edges]
    keys = [_locate(net, p, edge_points) for p in supply_points]
    node_id = {("v", i): i for i in range(net.n_vertices)}
    tails, heads, lens = [], [], []
    for a, e in enumerate(net.edges):
        ys = sorted(edge_points[a])
        chain = [e.tail]
        for y in ys:
            key = ("e", a, y)
            node_id[key] = len(node_id)
            chain.append(node_id[key])
        chain.append(e.head)
        stops = [0.0] + ys + [e.length]
        for k in range(len(chain) - 1):
            if chain[k] == chain[k + 1]:
                continue  # loop edge without atoms
            tails.append(chain[k])
            heads.append(chain[k + 1])
            lens.append(stops[k + 1] - stops[k])
    n = len(node_id)
    b = np.zeros(n)
    np.add.at(b, [node_id[k] for k in keys], supply)
    if np.abs(b).max() <= 0:
        return 0.0
    return _beckmann(n, np.array(tails), np.array(heads), np.array(lens), b)


def _beckmann(n, tails, heads, lens, b) -> float:
    # rescale so that LP tolerances stay relative to the moved mass
    scale = float(np.abs(b).sum()) / 2
    if scale < 1e-15:
        return 0.0
    b = b / scale
    b = b - b.mean()  # exact balance after roundoff
    m = tails.size
    cols = np.arange(m)
    # net outflow of node i = sum over segments leaving minus entering
    D = sp.coo_matrix((np.r_[np.ones(m), -np.ones(m)], (np.r_[tails, heads], np.r_[cols, cols])),
                      shape=(n, m)).tocsr()
    A = sp.hstack([D, -D]).tocsr()
    c = np.r_[lens, lens]
    res = linprog(c, A_eq=A, b_eq=b, bounds=(0, None), method="highs-ds",
                  options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10})
    if res.status != 0:
        raise InfeasibleTransport(f"flow LP failed: {res.message}")
    return scale * float(c @ res.x)


def _coerce(x):
    if isinstance(x, AtomizedMeasure):
        return x
    if hasattr(x, "cell_masses"):
        return atomize(x)
    raise TypeError("expected an AtomizedMeasure or a Measure")


def wasserstein1(sigma, tau, method: str = "flow") -> float:
    """W1 distance with geodesic ground cost.

    ``method="flow"`` solves the min-cost flow on the network,
    ``method="bipartite"`` the transportation LP between the atoms.
    """
    sigma, tau = _coerce(sigma), _coerce(tau)
    if sigma.network is not tau.network:
        raise ValueError("measures live on different networks")
    if abs(sigma.total - tau.total) > MASS_TOL:
        raise InfeasibleTransport(f"masses differ: {sigma.total!r} vs {tau.total!r}")
    if method == "flow":
        pts = sigma.points + tau.points
        supply = np.r_[sigma.masses, -tau.masses * (sigma.total / tau.total)]
        return _flow_value(sigma.network, pts, supply)
    if method == "bipartite":
        return _bipartite(sigma, tau)
    raise ValueError(f"unknown method {method!r}")


def cost_matrix(sigma: AtomizedMeasure, tau: AtomizedMeasure) -> np.ndarray:
    net = sigma.network
    return np.array([[geodesic_distance(net, p, q) for q in tau.points] for p in sigma.points])


def _bipartite(sigma: AtomizedMeasure, tau: AtomizedMeasure) -> float:
    C = cost_matrix(sigma, tau)
    ns, nt = C.shape
    rows = sp.kron(sp.eye(ns), np.ones((1, nt)))
    cols = sp.kron(np.ones((1, ns)), sp.eye(nt))
    A = sp.vstack([rows, cols]).tocsr()
    b = np.r_[sigma.masses, tau.masses * (sigma.total / tau.total)]
    res = linprog(C.ravel(), A_eq=A, b_eq=b, bounds=(0, None), method="highs-ds",
                  options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10})
    if res.status != 0:
        raise InfeasibleTransport(f"transport LP failed: {res.message}")
    return float(C.ravel() @ res.x)


# ---------------------------------------------------------------------------
# measures on a common mesh


@lru_cache(maxsize=32)
def _mesh_flow_data(mesh: Mesh):
    i, j, l = mesh.segments
    keep = i != j
    return mesh.n_nodes, i[keep], j[keep], l[keep]


def measure_distance(m1, m2) -> float:
    """W1 between two measures on the same mesh (atoms at the grid nodes).

    Equivalent to ``wasserstein1(atomize(m1), atomize(m2))``; the flow graph
    is the mesh itself and is cached.
    """
    if m1.mesh is not m2.mesh:
        raise ValueError("measures live on different meshes")
    a = np.maximum(m1.cell_masses, 0.0)
    b = np.maximum(m2.cell_masses, 0.0)
    a, b = a / a.sum(), b / b.sum()
    d = a - b
    if np.abs(d).max() <= 0:
        return 0.0
    n, t, h, l = _mesh_flow_data(m1.mesh)
    return _beckmann(n, t, h, l, d)


# ---------------------------------------------------------------------------
# dual certificate


def lipschitz_constant(f: GridFunction) -> float:
    """Geodesic Lipschitz constant of the piecewise-linear interpolant of ``f``."""
    return max(float(np.abs(np.diff(v)).max()) / f.mesh.h[a] for a, v in enumerate(f.values))


def evaluate(f: GridFunction, points) -> np.ndarray:
    """Piecewise-linear interpolation of ``f`` at ``(edge, abscissa)`` points."""
    return np.array([np.interp(y, f.mesh.abscissae(a), f.values[a]) for a, y in points])


def wasserstein1_dual_check(sigma, tau, f: GridFunction, tol: float = 1e-9) -> float:
    """``int f d(sigma - tau)`` for a 1-Lipschitz test function ``f``.

    The value is a lower bound for W1 (weak duality).
    """
    sigma, tau = _coerce(sigma), _coerce(tau)
    if f.kind != "continuous":
        raise NotLipschitz("test function must be continuous across vertices")
    lip = lipschitz_constant(f)
    if lip > 1 + tol:
        raise NotLipschitz(f"test function has Lipschitz constant {lip:.6g} > 1")
    return float(evaluate(f, sigma.points) @ sigma.masses - evaluate(f, tau.points) @ tau.masses)
