"""Finite-volume Fokker-Planck evolution on networks.

Solved equation on every edge::

    dm/dt - mu m'' - (b m)' = 0

where ``b`` plays the role of ``dH/dp``; mass is transported with velocity
``-b``.  At a vertex the total outgoing flux vanishes and the edge traces are
proportional to the Kirchhoff weights, ``m|_alpha = gamma_alpha * w``.  The
unknown vector therefore stores ``w = m / gamma`` at each vertex and the
density at interior nodes (same layout as :class:`~hjnet.network.Mesh`).

Cells are the half-edge segments around each node, so ``mesh.measure_weights``
maps the unknowns to cell masses.  Each discrete flux leaves one cell and
enters its neighbour, which makes mass conservation structural.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InvariantViolation, LinearSolveFailure, NonConservativeAssembly
from .network import GridFunction, Mesh, integrate

logger = logging.getLogger(__name__)

MASS_TOL = 1e-10
NEG_TOL = 1e-12


class Measure:
    """A probability density on a mesh in Fokker-Planck layout."""

    def __init__(self, mesh: Mesh, vector: np.ndarray, *, check: bool = True):
        vec = np.array(vector, dtype=float)
        if vec.shape != (mesh.n_nodes,):
            raise ValueError(f"expected {mesh.n_nodes} unknowns, got {vec.shape}")
        vec.setflags(write=False)
        self.mesh = mesh
        self.vector = vec
        if check:
            self.check()

    @property
    def mass(self) -> float:
        return float(self.vector @ self.mesh.measure_weights)

    @property
    def density(self) -> GridFunction:
        """Edge-wise density; vertex traces are ``gamma * w``."""
        vals = []
        for a, idx in enumerate(self.mesh.node_indices):
            e = self.mesh.network.edges[a]
            v = self.vector[idx].copy()
            v[0] *= e.gamma_tail
            v[-1] *= e.gamma_head
            vals.append(v)
        return GridFunction(self.mesh, vals, "piecewise")

    @property
    def cell_masses(self) -> np.ndarray:
        return self.vector * self.mesh.measure_weights

    def check(self) -> None:
        if abs(self.mass - 1.0) > MASS_TOL:
            raise InvariantViolation(f"measure has mass {self.mass!r}")
        if self.vector.min() < -NEG_TOL:
            raise InvariantViolation(f"measure has negative entry {self.vector.min():.3e}")

    @classmethod
    def from_density(cls, mesh: Mesh, density, normalize: bool = True) -> "Measure":
        """Project a density (``callable(edge, y)`` or GridFunction) onto the vertex rule.

        Each vertex unknown is chosen so that the vertex cell keeps the mass
        of the sampled traces.  The total mass is rescaled to one when
        ``normalize`` is set (the factor is logged).
        """
        if isinstance(density, GridFunction):
            vals = density.values
        else:
            vals = mesh.sample(density, "piecewise").values
        net = mesh.network
        vec = np.zeros(mesh.n_nodes)
        num = np.zeros(net.n_vertices)
        for a, idx in enumerate(mesh.node_indices):
            e, h = net.edges[a], mesh.h[a]
            vec[idx[1:-1]] = vals[a][1:-1]
            num[e.tail] += 0.5 * h * vals[a][0]
            num[e.head] += 0.5 * h * vals[a][-1]
        vec[: net.n_vertices] = num / mesh.measure_weights[: net.n_vertices]
        if vec.min() < -NEG_TOL:
            raise InvariantViolation("initial density has negative values")
        vec = np.maximum(vec, 0.0)
        total = float(vec @ mesh.measure_weights)
        if normalize:
            if total <= 0:
                raise InvariantViolation("initial density has zero mass")
            if abs(total - 1) > 1e-12:
                logger.info("initial density normalized (mass was %.6g)", total)
            vec /= total
        return cls(mesh, vec)

    @classmethod
    def uniform(cls, mesh: Mesh) -> "Measure":
        return cls.from_density(mesh, lambda a, y: np.ones_like(y))

    @classmethod
    def from_masses(cls, mesh: Mesh, masses: np.ndarray) -> "Measure":
        return cls(mesh, np.asarray(masses, float) / mesh.measure_weights)

    def combine(self, other: "Measure", omega: float) -> "Measure":
        """Convex combination ``(1 - omega) self + omega other``."""
        return Measure(self.mesh, (1 - omega) * self.vector + omega * other.vector)

    def l2_norm(self) -> float:
        d = self.density
        return float(np.sqrt(integrate(d * d)))


@dataclass(frozen=True, eq=False)
class MeasurePath:
    times: np.ndarray
    measures: tuple
    drifts: tuple = field(default=(), repr=False)
    diagnostics: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        t = np.asarray(self.times, float)
        if t.ndim != 1 or len(t) != len(self.measures):
            raise ValueError("need one measure per time node")
        if np.any(np.diff(t) <= 0):
            raise ValueError("time grid must increase")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "measures", tuple(self.measures))

    def __len__(self) -> int:
        return len(self.measures)

    def __getitem__(self, k) -> Measure:
        return self.measures[k]

    @property
    def mesh(self) -> Mesh:
        return self.measures[0].mesh

    def combine(self, other: "MeasurePath", omega: float) -> "MeasurePath":
        if len(other) != len(self) or not np.allclose(other.times, self.times):
            raise ValueError("paths live on different time grids")
        return MeasurePath(self.times, [a.combine(b, omega) for a, b in zip(self.measures, other.measures)])

    @classmethod
    def constant(cls, m: Measure, times) -> "MeasurePath":
        return cls(times, [m] * len(times))

    def masses(self) -> np.ndarray:
        return np.array([m.mass for m in self.measures])

    def min_density(self) -> float:
        return float(min(m.vector.min() for m in self.measures))


def _edge_drift(mesh: Mesh, b) -> list[np.ndarray]:
    if b is None:
        return [np.zeros(n + 1) for n in mesh.counts]
    if isinstance(b, GridFunction):
        return [np.asarray(v) for v in b.values]
    if callable(b):
        return list(mesh.sample(b, "piecewise").values)
    return [np.full(n + 1, float(b)) for n in mesh.counts]


def assemble_fp_operator(mesh: Mesh, b=None) -> sp.csr_matrix:
    """Mass-rate matrix ``L`` with ``d/dt (cell masses) = L @ unknowns``.

    Interior fluxes (rightward) are ``mu (u_j - u_{j+1}) / h + c u_upwind``
    with velocity ``c = -b`` averaged to the half nodes; a vertex unknown
    enters the fluxes of each incident edge through its trace ``gamma * w``.
    Columns sum to zero.
    """
    net = mesh.network
    bv = _edge_drift(mesh, b)
    rows, cols, data = [], [], []
    for a, idx in enumerate(mesh.node_indices):
        e, h = net.edges[a], mesh.h[a]
        scale = np.ones(idx.size)
        scale[0], scale[-1] = e.gamma_tail, e.gamma_head
        c = -0.5 * (bv[a][:-1] + bv[a][1:])
        cp, cm = np.maximum(c, 0.0), np.maximum(-c, 0.0)
        left, right = idx[:-1], idx[1:]
        # flux J = (mu/h + cp) u_left - (mu/h + cm) u_right, from left to right
        kl = (e.mu / h + cp) * scale[:-1]
        kr = (e.mu / h + cm) * scale[1:]
        rows += [left, left, right, right]
        cols += [left, right, left, right]
        data += [-kl, kr, kl, -kr]
    L = sp.coo_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(mesh.n_nodes, mesh.n_nodes)).tocsr()
    colsum = np.abs(np.asarray(L.sum(axis=0))).max()
    if colsum > 1e-13 * max(1.0, abs(L).max()):
        raise NonConservativeAssembly(f"column sums reach {colsum:.3e}")
    return L


class _Stepper:
    def __init__(self, mesh: Mesh, L: sp.csr_matrix, dt: float):
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.W = mesh.measure_weights
        A = (sp.diags(self.W) - dt * L).tocsc()
        try:
            self.lu = spla.splu(A)
        except RuntimeError as exc:
            raise LinearSolveFailure(str(exc)) from exc
        self.A = A

    def __call__(self, vec: np.ndarray) -> np.ndarray:
        rhs = self.W * vec
        out = self.lu.solve(rhs)
        if not np.all(np.isfinite(out)):
            raise LinearSolveFailure("implicit step produced non-finite values")
        return out


def step_fp(state: Measure, operator: sp.csr_matrix, dt: float) -> Measure:
    """One implicit Euler step ``(M - dt L) u+ = M u``."""
    return Measure(state.mesh, _Stepper(state.mesh, operator, dt)(state.vector))


def _energy(mesh: Mesh, vec: np.ndarray) -> tuple[float, float]:
    """Squared L2 norm and squared edge-wise H1 seminorm of the density."""
    l2 = h1 = 0.0
    for a, idx in enumerate(mesh.node_indices):
        e, h = mesh.network.edges[a], mesh.h[a]
        u = vec[idx].copy()
        u[0] *= e.gamma_tail
        u[-1] *= e.gamma_head
        l2 += h * (np.sum(u**2) - 0.5 * (u[0] ** 2 + u[-1] ** 2))
        h1 += float(np.sum(np.diff(u) ** 2) / h)
    return float(l2), float(h1)


def solve_fp(mesh: Mesh, b, m0: Measure, T: float, dt: float) -> MeasurePath:
    """Implicit Euler path on ``[0, T]``.

    ``b`` is fixed (GridFunction, callable ``(edge, y)``, number or None) or a
    sequence with one entry per step, the entry ``k`` acting on
    ``[t_k, t_{k+1}]``.  Energy diagnostics (mass, L2, H1 per node and the
    discrete ``L2(0, T; H1)`` energy) are stored on the path.
    """
    if T < 0 or dt <= 0:
        raise ValueError("need T >= 0 and dt > 0")
    n_steps = int(round(T / dt))
    if abs(n_steps * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError("T must be a multiple of dt")
    times = np.arange(n_steps + 1) * dt
    per_step = isinstance(b, (list, tuple))
    if per_step and len(b) < n_steps:
        raise ValueError("need one drift per time step")
    vec = m0.vector.copy()
    out = [m0]
    stepper = None if per_step else _Stepper(mesh, assemble_fp_operator(mesh, b), dt)
    l2, h1 = _energy(mesh, vec)
    mass, l2s, h1s = [m0.mass], [l2], [h1]
    for k in range(n_steps):
        if per_step:
            stepper = _Stepper(mesh, assemble_fp_operator(mesh, b[k]), dt)
        vec = stepper(vec)
        m = Measure(mesh, vec, check=False)
        out.append(m)
        l2, h1 = _energy(mesh, vec)
        mass.append(m.mass)
        l2s.append(l2)
        h1s.append(h1)
    diag = {
        "mass": np.array(mass),
        "l2_sq": np.array(l2s),
        "h1_sq": np.array(h1s),
        "energy": float(dt * (np.sum(l2s[1:]) + np.sum(h1s[1:]))),
    }
    drifts = tuple(b[:n_steps]) if per_step else (b,)
    return MeasurePath(times, out, drifts, diag)


def holder_time_modulus(path: MeasurePath, max_nodes: int = 16, distance=None) -> tuple[float, float]:
    """Empirical time modulus of a measure path in the W1 distance.

    Uses up to ``max_nodes`` evenly spaced time nodes and all pairs between
    them.  Returns ``(C, exponent)``: ``C`` is the largest ratio
    ``W1 / |t - s|**0.5`` and ``exponent`` the least-squares slope of
    ``log W1`` against ``log |t - s|`` (NaN when every distance vanishes).
    """
    if len(path) < 2:
        return 0.0, float("nan")
    if distance is None:
        from .transport import measure_distance as distance
    sel = np.unique(np.linspace(0, len(path) - 1, min(max_nodes, len(path))).round().astype(int))
    gaps, dists = [], []
    for i, p in enumerate(sel):
        for q in sel[i + 1:]:
            gaps.append(path.times[q] - path.times[p])
            dists.append(distance(path[p], path[q]))
    gaps, dists = np.array(gaps), np.array(dists)
    C = float(np.max(dists / np.sqrt(gaps)))
    keep = dists > 1e-13
    if keep.sum() < 2:
        return C, float("nan")
    slope = np.polyfit(np.log(gaps[keep]), np.log(dists[keep]), 1)[0]
    return C, float(slope)


def stationary_residual(mesh: Mesh, b, m: Measure) -> float:
    """Sup norm of ``L @ u`` divided by the cell weights."""
    L = assemble_fp_operator(mesh, b)
    return float(np.abs(L @ m.vector / mesh.measure_weights).max())
