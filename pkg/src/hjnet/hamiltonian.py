"""Control-form Hamiltonians and coupling costs.

On edge ``alpha`` the Hamiltonian is ``H(x, p) = max_a { -b(x, a) p - f(x, a) }``
over a finite control set.  Drift and cost are callables
``fn(edge, y, a) -> array`` evaluated with ``y`` of shape ``(n, 1)`` and ``a``
of shape ``(1, n_controls)``; the result is broadcast to ``(n, n_controls)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import HypothesisViolation
from .network import GridFunction, Mesh, TAIL

EdgeFn = Callable[[int, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class ControlProblem:
    controls: np.ndarray
    drift: EdgeFn
    cost: EdgeFn
    K: float | None = None
    L: float | None = None
    name: str = "custom"

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.controls, dtype=float))
        c.setflags(write=False)
        object.__setattr__(self, "controls", c)

    @property
    def n_controls(self) -> int:
        return self.controls.size

    def tables(self, edge: int, y) -> tuple[np.ndarray, np.ndarray]:
        """Drift and cost on the grid ``y`` for every control, shape ``(len(y), n_controls)``."""
        yy = np.atleast_1d(np.asarray(y, dtype=float))[:, None]
        aa = self.controls[None, :]
        shape = (yy.shape[0], aa.shape[1])
        b = np.broadcast_to(np.asarray(self.drift(edge, yy, aa), float), shape)
        f = np.broadcast_to(np.asarray(self.cost(edge, yy, aa), float), shape)
        return b, f

    def check_hypotheses(self, mesh: Mesh) -> tuple[float, float]:
        """Sampled bound and Lipschitz constant of drift and cost on ``mesh``.

        Raises :class:`HypothesisViolation` when they exceed the declared
        ``K`` or ``L`` (with relative slack 1e-6 for ``L``).
        """
        kmax = lmax = 0.0
        for a in range(mesh.network.n_edges):
            b, f = self.tables(a, mesh.abscissae(a))
            kmax = max(kmax, float(np.abs(b).max()), float(np.abs(f).max()))
            for t in (b, f):
                lmax = max(lmax, float(np.abs(np.diff(t, axis=0)).max(initial=0.0)) / mesh.h[a])
        if self.K is not None and kmax > self.K * (1 + 1e-12):
            raise HypothesisViolation(f"|b|, |f| reach {kmax:.6g} > K = {self.K}")
        if self.L is not None and lmax > self.L * (1 + 1e-6):
            raise HypothesisViolation(f"Lipschitz quotient {lmax:.6g} > L = {self.L}")
        return kmax, lmax


def _point(x):
    edge, y = x
    return int(edge), float(y)


def _values(cp: ControlProblem, x, p):
    edge, y = _point(x)
    b, f = cp.tables(edge, [y])
    p = np.asarray(p, dtype=float)
    vals = -b[0] * p[..., None] - f[0]
    return b[0], vals


def eval_H(cp: ControlProblem, x, p):
    """``max_a {-b p - f}`` at the point ``x = (edge, y)``; ``p`` may be an array."""
    _, vals = _values(cp, x, p)
    return vals.max(axis=-1)


def argmax_index(cp: ControlProblem, x, p):
    _, vals = _values(cp, x, p)
    return np.argmax(vals, axis=-1)  # first maximizer = lowest index


def argmax_control(cp: ControlProblem, x, p):
    return cp.controls[argmax_index(cp, x, p)]


def dp_H(cp: ControlProblem, x, p):
    """Envelope derivative ``-b(x, a*)``; at a kink the lowest-index maximizer decides."""
    b, vals = _values(cp, x, p)
    return -b[np.argmax(vals, axis=-1)]


# ---------------------------------------------------------------------------
# named families


def constant_problem(c: float) -> ControlProblem:
    """One control, no drift, cost ``c``: ``H = -c``."""
    return ControlProblem(
        [0.0], lambda e, y, a: 0.0 * y, lambda e, y, a: c + 0.0 * y,
        K=abs(c), L=0.0, name="constant",
    )


def quadratic_problem(n_controls: int = 21, amax: float = 1.0,
                      potential: Callable[[int, np.ndarray], np.ndarray] | None = None,
                      drift_shift: Callable[[int, np.ndarray], np.ndarray] | None = None) -> ControlProblem:
    """``b = a + drift_shift``, ``f = a^2/2 + V``; ``H`` approximates ``p^2/2 - V`` for ``|p| <= amax``."""
    V = potential or (lambda e, y: 0.0 * y)
    S = drift_shift or (lambda e, y: 0.0 * y)
    return ControlProblem(
        np.linspace(-amax, amax, n_controls),
        lambda e, y, a: a + S(e, y),
        lambda e, y, a: 0.5 * a**2 + V(e, y),
        name="quadratic",
    )


def single_control_problem(drift: Callable[[int, np.ndarray], np.ndarray],
                           cost: Callable[[int, np.ndarray], np.ndarray]) -> ControlProblem:
    """Linear Hamiltonian ``H = -b(x) p - f(x)``."""
    return ControlProblem([0.0], lambda e, y, a: drift(e, y), lambda e, y, a: cost(e, y), name="single")


def table_problem(mesh: Mesh, controls, drift_tables, cost_tables) -> ControlProblem:
    """Drift and cost tabulated on the grid nodes of each edge, linearly interpolated."""
    controls = np.asarray(controls, float)
    B = [np.asarray(t, float) for t in drift_tables]
    F = [np.asarray(t, float) for t in cost_tables]

    def interp(tabs):
        def fn(e, y, a):
            xs = mesh.abscissae(e)
            yy = np.ravel(y)
            out = np.stack([np.interp(yy, xs, tabs[e][:, k]) for k in range(controls.size)], axis=1)
            return out

        return fn

    return ControlProblem(controls, interp(B), interp(F), name="table")


# ---------------------------------------------------------------------------
# coupling costs F[m]


@dataclass(frozen=True, eq=False)
class CouplingCost:
    """Nonlocal cost ``m -> F[m]`` from a small library of forms.

    ``kind`` is ``"zero"``, ``"smoothed_density"`` (strength ``c`` times a
    Gaussian of the geodesic distance with width ``eta``) or ``"potential"``
    (``V(x) * (1 + int g dm)``).
    """

    kind: str = "zero"
    strength: float = 0.0
    width: float = 0.1
    V: Callable[[int, np.ndarray], np.ndarray] | None = None
    g: Callable[[int, np.ndarray], np.ndarray] | None = None
    theta: float = 1.0
    _cache: dict = field(default_factory=dict, repr=False)

    def kernel(self, d):
        eta = self.width
        return np.exp(-0.5 * (d / eta) ** 2) / (math.sqrt(2 * math.pi) * eta)

    def lipschitz_constant(self, mesh: Mesh | None = None) -> float:
        """A constant ``C_F`` with ``|F[m1] - F[m2]| <= C_F W1(m1, m2)`` in sup norm."""
        if self.kind == "zero":
            return 0.0
        if self.kind == "smoothed_density":
            eta = self.width
            return abs(self.strength) * math.exp(-0.5) / (math.sqrt(2 * math.pi) * eta**2)
        if self.kind == "potential":
            if mesh is None:
                raise ValueError("potential coupling needs a mesh to bound V and Lip(g)")
            vmax = max(float(np.abs(np.asarray(self.V(a, mesh.abscissae(a)))).max())
                       for a in range(mesh.network.n_edges))
            lg = max(float(np.abs(np.diff(np.broadcast_to(self.g(a, mesh.abscissae(a)), mesh.abscissae(a).shape))).max(initial=0.0)) / mesh.h[a]
                     for a in range(mesh.network.n_edges))
            return vmax * lg
        raise ValueError(f"unknown coupling kind {self.kind!r}")

    def __call__(self, m) -> GridFunction:
        return coupling_eval(self, m)


def zero_coupling() -> CouplingCost:
    return CouplingCost("zero")


def smoothed_density_coupling(strength: float, width: float) -> CouplingCost:
    return CouplingCost("smoothed_density", strength=strength, width=width)


def potential_coupling(V, g=None) -> CouplingCost:
    return CouplingCost("potential", V=V, g=g or (lambda e, y: 0.0 * y))


def _edge_node_kernel(F: CouplingCost, mesh: Mesh) -> np.ndarray:
    key = ("K", id(mesh))
    if key not in F._cache:
        D = mesh.node_distances
        F._cache[key] = (mesh, F.kernel(D))
    return F._cache[key][1]


def coupling_eval(F: CouplingCost, m) -> GridFunction:
    """Evaluate ``F[m]`` on the grid of the measure ``m``."""
    mesh = m.mesh
    if F.kind == "zero":
        return mesh.constant(0.0)
    if F.kind == "smoothed_density":
        # node masses of m, then convolution with the geodesic kernel
        masses = m.vector * mesh.measure_weights
        vec = F.strength * (_edge_node_kernel(F, mesh) @ masses)
        return mesh.from_vector(vec)
    if F.kind == "potential":
        from .network import integrate

        dens = m.density
        gm = integrate(GridFunction(mesh, [np.broadcast_to(F.g(a, mesh.abscissae(a)), dens.values[a].shape) * dens.values[a]
                                           for a in range(mesh.network.n_edges)], "piecewise"))
        vals = [np.broadcast_to(F.V(a, mesh.abscissae(a)), (mesh.counts[a] + 1,)) * (1.0 + gm)
                for a in range(mesh.network.n_edges)]
        return GridFunction(mesh, vals, "piecewise")
    raise ValueError(f"unknown coupling kind {F.kind!r}")
