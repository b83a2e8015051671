"""Discounted and ergodic viscous HJ equations on networks.

Solved equation, edge by edge::

    -mu v'' + H(x, v') + F(x) + lam v + rho = 0,      H(x, p) = max_a {-b p - f}

with continuity at the vertices and the Kirchhoff condition
``sum gamma mu (outward derivative) = 0``.  In the discounted problem
``rho = 0``; in the ergodic problem ``lam = 0``, ``rho`` is unknown and the
mean of ``v`` vanishes.

Discretization: centered diffusion and upwind drift at interior nodes.  The
vertex row is the flux balance over the half cells ``[0, h/2]`` of the
incident edges: the one-sided Kirchhoff difference plus ``h/2`` times the
equation at the vertex (``vertex_scheme="balance"``).  The plain one-sided
Kirchhoff row is available as ``vertex_scheme="one_sided"``.  Every policy
gives an M-matrix, so policy iteration (Howard) over the finite control set
terminates.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    LinearSolveFailure,
    ModesDisagree,
    NonMonotoneScheme,
)
from .hamiltonian import ControlProblem
from .network import HEAD, TAIL, GridFunction, Mesh, center, mean_value

logger = logging.getLogger(__name__)

VERTEX_SCHEMES = ("balance", "one_sided")


def _edge_values(mesh: Mesh, F) -> list[np.ndarray]:
    """Per-edge node values of an optional source term (GridFunction, callable or scalar)."""
    if F is None:
        return [np.zeros(n + 1) for n in mesh.counts]
    if isinstance(F, GridFunction):
        return [np.asarray(v) for v in F.values]
    if isinstance(F, (list, tuple)):
        return [np.asarray(v, dtype=float) for v in F]
    if callable(F):
        return [np.broadcast_to(np.asarray(F(a, mesh.abscissae(a)), float), (mesh.counts[a] + 1,)).copy()
                for a in range(mesh.network.n_edges)]
    return [np.full(n + 1, float(F)) for n in mesh.counts]


def _vertex_weights(mesh: Mesh) -> np.ndarray:
    """``W_i = sum_ends gamma h / 2``: normalization of the balance rows."""
    W = np.zeros(mesh.network.n_vertices)
    for a, e in enumerate(mesh.network.edges):
        W[e.tail] += 0.5 * e.gamma_tail * mesh.h[a]
        W[e.head] += 0.5 * e.gamma_head * mesh.h[a]
    return W


def row_values(mesh: Mesh, vals: list[np.ndarray], vertex_scheme: str = "balance") -> np.ndarray:
    """Map per-edge node values to the right-hand side of the scheme's rows.

    Interior rows take the node value; balance vertex rows the
    ``gamma h/2``-weighted average of the incident endpoint values.
    """
    out = np.zeros(mesh.n_nodes)
    W = _vertex_weights(mesh)
    for a, idx in enumerate(mesh.node_indices):
        v = vals[a]
        out[idx[1:-1]] = v[1:-1]
        if vertex_scheme == "balance":
            e, h = mesh.network.edges[a], mesh.h[a]
            out[e.tail] += 0.5 * e.gamma_tail * h * v[0] / W[e.tail]
            out[e.head] += 0.5 * e.gamma_head * h * v[-1] / W[e.head]
    return out


def monotonicity_bound(mesh: Mesh, g: list[np.ndarray], vertex_scheme: str = "balance") -> None:
    """Raise :class:`NonMonotoneScheme` if a vertex row has a positive off-diagonal."""
    if vertex_scheme != "balance":
        return
    worst = np.inf
    for a, e in enumerate(mesh.network.edges):
        gmax = max(abs(float(g[a][0])), abs(float(g[a][-1])))
        if gmax > 0:
            worst = min(worst, 2 * e.mu / gmax)
        if gmax * mesh.h[a] > 2 * e.mu * (1 + 1e-12):
            raise NonMonotoneScheme(2 * e.mu / gmax)


def assemble_linear_operator(mesh: Mesh, g, lam: float = 0.0, vertex_scheme: str = "balance") -> sp.csr_matrix:
    """Matrix of ``-mu v'' + g v' + lam v`` with Kirchhoff vertex rows.

    ``g`` holds per-edge node values of the drift coefficient (a GridFunction,
    list of arrays or a scalar).  Interior drift is upwinded by the sign of
    ``g``; vertex rows follow ``vertex_scheme``.  The result is an M-matrix.
    """
    if vertex_scheme not in VERTEX_SCHEMES:
        raise ValueError(f"vertex_scheme must be one of {VERTEX_SCHEMES}")
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    gv = _edge_values(mesh, g)
    monotonicity_bound(mesh, gv, vertex_scheme)
    net = mesh.network
    W = _vertex_weights(mesh)
    rows, cols, data = [], [], []

    def put(r, c, d):
        rows.append(r)
        cols.append(c)
        data.append(d)

    for a, idx in enumerate(mesh.node_indices):
        e, h = net.edges[a], mesh.h[a]
        mu = e.mu
        gi = gv[a][1:-1]
        r = idx[1:-1]
        put(r, r, 2 * mu / h**2 + np.abs(gi) / h + lam)
        put(r, idx[:-2], -mu / h**2 - np.maximum(gi, 0) / h)
        put(r, idx[2:], -mu / h**2 - np.maximum(-gi, 0) / h)

        for end, vtx, nb, gam in ((TAIL, e.tail, idx[1], e.gamma_tail), (HEAD, e.head, idx[-2], e.gamma_head)):
            s = 1.0 / W[vtx]
            if vertex_scheme == "balance":
                gend = gv[a][0] if end == TAIL else gv[a][-1]
                sgn = -1.0 if end == TAIL else 1.0  # p = sgn * (v_vertex - v_nb) / h
                put([vtx], [vtx], [s * gam * (mu / h + sgn * gend / 2 + 0.5 * h * lam)])
                put([vtx], [nb], [s * gam * (-mu / h - sgn * gend / 2)])
            else:
                put([vtx], [vtx], [s * gam * mu / h])
                put([vtx], [nb], [-s * gam * mu / h])

    A = sp.coo_matrix(
        (np.concatenate([np.atleast_1d(d) for d in data]),
         (np.concatenate([np.atleast_1d(r) for r in rows]), np.concatenate([np.atleast_1d(c) for c in cols]))),
        shape=(mesh.n_nodes, mesh.n_nodes),
    )
    return A.tocsr()


# ---------------------------------------------------------------------------
# policy machinery


class _Scheme:
    """Tabulated control data and the per-node Hamiltonian on a mesh."""

    def __init__(self, mesh: Mesh, cp: ControlProblem, F=None, vertex_scheme: str = "balance"):
        if vertex_scheme not in VERTEX_SCHEMES:
            raise ValueError(f"vertex_scheme must be one of {VERTEX_SCHEMES}")
        self.mesh, self.cp, self.vertex_scheme = mesh, cp, vertex_scheme
        self.B, self.Fc = [], []
        for a in range(mesh.network.n_edges):
            b, f = cp.tables(a, mesh.abscissae(a))
            self.B.append(np.ascontiguousarray(b))
            self.Fc.append(np.ascontiguousarray(f))
        self.F = _edge_values(mesh, F)
        worst = np.inf
        for a, e in enumerate(mesh.network.edges):
            bmax = max(np.abs(self.B[a][0]).max(), np.abs(self.B[a][-1]).max())
            if vertex_scheme == "balance" and bmax * mesh.h[a] > 2 * e.mu * (1 + 1e-12):
                raise NonMonotoneScheme(2 * e.mu / bmax)
        self.rho_column = row_values(mesh, [np.ones(n + 1) for n in mesh.counts], vertex_scheme)

    def initial_policy(self) -> list[np.ndarray]:
        return [np.zeros(n + 1, dtype=int) for n in self.mesh.counts]

    def node_values(self, vec: np.ndarray):
        """For each edge: array ``(n+1, n_controls)`` of ``-b D_a v - f``."""
        out = []
        for a, idx in enumerate(self.mesh.node_indices):
            v, h = vec[idx], self.mesh.h[a]
            d = np.diff(v) / h
            fwd = np.append(d, d[-1])
            bwd = np.insert(d, 0, d[0])
            b = self.B[a]
            D = np.where(b > 0, fwd[:, None], bwd[:, None])
            D[0, :] = d[0]
            D[-1, :] = d[-1]
            out.append(-b * D - self.Fc[a])
        return out

    def improve(self, vec: np.ndarray, policy=None):
        vals = self.node_values(vec)
        new = []
        for a, q in enumerate(vals):
            best = np.argmax(q, axis=1)
            if policy is not None:
                cur = policy[a]
                qcur = q[np.arange(cur.size), cur]
                qbest = q[np.arange(cur.size), best]
                eps = 1e-13 * np.maximum(1.0, np.abs(qbest))
                best = np.where(qbest > qcur + eps, best, cur)
            new.append(best)
        return new

    def hamiltonian(self, vec: np.ndarray) -> list[np.ndarray]:
        return [q.max(axis=1) for q in self.node_values(vec)]

    def linear_system(self, policy, lam: float):
        g, f = [], []
        for a, pol in enumerate(policy):
            k = np.arange(pol.size)
            g.append(-self.B[a][k, pol])
            f.append(self.Fc[a][k, pol] - self.F[a])
        A = assemble_linear_operator(self.mesh, g, lam, self.vertex_scheme)
        return A, row_values(self.mesh, f, self.vertex_scheme)

    def drift(self, policy) -> GridFunction:
        """Controlled drift ``b(x, a*(x))`` at every edge node."""
        vals = [self.B[a][np.arange(p.size), p] for a, p in enumerate(policy)]
        return GridFunction(self.mesh, vals, "piecewise")

    def operator(self, vec: np.ndarray, lam: float, rho: float = 0.0) -> np.ndarray:
        """Nonlinear residual of every row: ``-mu v'' + H + F + lam v + rho``."""
        pol = self.improve(vec)
        A, rhs = self.linear_system(pol, lam)
        return A @ vec + rho * self.rho_column - rhs


def _solve(A, rhs, tol):
    try:
        x = spla.spsolve(A.tocsc(), rhs)
    except Exception as exc:  # pragma: no cover - scipy raises assorted types
        raise LinearSolveFailure(str(exc)) from exc
    if not np.all(np.isfinite(x)):
        raise LinearSolveFailure("linear solve returned non-finite values")
    res = np.abs(A @ x - rhs).max()
    scale = abs(A).max() * np.abs(x).max() + np.abs(rhs).max() + 1e-300
    if res > tol * scale:
        raise LinearSolveFailure(f"linear residual {res:.3e} exceeds {tol:g} (scale {scale:.3e})")
    return x


def _policy_key(policy) -> bytes:
    return b"".join(p.astype(np.int32).tobytes() for p in policy)


def _howard(scheme: _Scheme, solve_fixed, initial_policy, max_iter):
    policy = initial_policy or scheme.initial_policy()
    seen = {_policy_key(policy)}
    x = None
    for it in range(1, max_iter + 1):
        x = solve_fixed(policy)
        new = scheme.improve(x["vec"], policy)
        if all(np.array_equal(p, q) for p, q in zip(new, policy)):
            return x, policy, it, "converged"
        key = _policy_key(new)
        if key in seen:
            logger.warning("policy iteration cycled after %d iterations", it)
            return x, policy, it, "cycle"
        seen.add(key)
        policy = new
    return x, policy, max_iter, "max_iter"


# ---------------------------------------------------------------------------
# discounted problem


@dataclass(frozen=True, eq=False)
class DiscountedSolution:
    v: GridFunction
    lam: float
    residual: float
    iterations: int
    status: str
    policy: list = field(repr=False)
    drift: GridFunction = field(repr=False)
    K: float = np.nan

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    @property
    def dp_H(self) -> GridFunction:
        """Fokker-Planck coefficient ``dH/dp = -b(x, a*)``."""
        return -self.drift

    @property
    def bound_ok(self) -> bool:
        return self.lam * self.v.sup() <= self.K + 1e-6


def solve_discounted(mesh: Mesh, cp: ControlProblem, F=None, lam: float = 0.1, *,
                     tol: float = 1e-10, max_iter: int = 200, vertex_scheme: str = "balance",
                     initial_policy=None) -> DiscountedSolution:
    """Policy iteration for ``-mu v'' + H(x, v') + F + lam v = 0``.

    ``F`` is an optional source (GridFunction, ``callable(edge, y)`` or a
    number) added to the Hamiltonian.  A detected policy cycle returns the
    last iterate with ``status == "cycle"``.
    """
    if lam <= 0:
        raise ValueError("discount must be positive")
    scheme = _Scheme(mesh, cp, F, vertex_scheme)

    def fixed(policy):
        A, rhs = scheme.linear_system(policy, lam)
        return {"vec": _solve(A, rhs, tol)}

    x, policy, it, status = _howard(scheme, fixed, initial_policy, max_iter)
    vec = x["vec"]
    res = float(np.abs(scheme.operator(vec, lam)).max())
    K = max(max(np.abs(f).max() for f in scheme.Fc), 0.0) + max(np.abs(f).max() for f in scheme.F)
    return DiscountedSolution(mesh.from_vector(vec), lam, res, it, status, policy, scheme.drift(policy), float(K))


# ---------------------------------------------------------------------------
# ergodic problem


@dataclass(frozen=True, eq=False)
class ErgodicSolution:
    v: GridFunction
    rho: float
    residual: float
    kirchhoff_residual: float
    iterations: int
    status: str
    mode: str
    policy: list = field(repr=False, default=None)
    drift: GridFunction | None = field(repr=False, default=None)

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    @property
    def dp_H(self) -> GridFunction:
        return -self.drift


def _split_residual(mesh: Mesh, r: np.ndarray) -> tuple[float, float]:
    nv = mesh.network.n_vertices
    pde = float(np.abs(r[nv:]).max(initial=0.0))
    kir = float(np.abs(r[:nv]).max(initial=0.0))
    return pde, kir


def _ergodic_direct(mesh, cp, F, tol, max_iter, vertex_scheme, initial_policy):
    scheme = _Scheme(mesh, cp, F, vertex_scheme)
    w = mesh.weights / mesh.network.total_length
    n = mesh.n_nodes

    def fixed(policy):
        A, rhs = scheme.linear_system(policy, 0.0)
        M = sp.bmat([[A, sp.csr_matrix(scheme.rho_column[:, None])],
                     [sp.csr_matrix(w[None, :]), None]], format="csc")
        sol = _solve(M, np.append(rhs, 0.0), tol)
        return {"vec": sol[:n], "rho": float(sol[n])}

    x, policy, it, status = _howard(scheme, fixed, initial_policy, max_iter)
    vec, rho = x["vec"], x["rho"]
    pde, kir = _split_residual(mesh, scheme.operator(vec, 0.0, rho))
    return ErgodicSolution(mesh.from_vector(vec), rho, pde, kir, it, status, "direct",
                           policy, scheme.drift(policy))


def extrapolate_to_zero(xs, ys):
    """Neville polynomial extrapolation of ``ys(x)`` to ``x = 0`` (works on arrays)."""
    xs = list(map(float, xs))
    P = [np.asarray(y, dtype=float) for y in ys]
    n = len(xs)
    for k in range(1, n):
        P = [(xs[i + k] * P[i] - xs[i] * P[i + 1]) / (xs[i + k] - xs[i]) for i in range(n - k)]
    return P[0]


def _ergodic_vanishing(mesh, cp, F, tol, max_iter, vertex_scheme, lambdas):
    sols = [solve_discounted(mesh, cp, F, lam, tol=tol, max_iter=max_iter, vertex_scheme=vertex_scheme)
            for lam in lambdas]
    rhos = [lam * mean_value(s.v) for lam, s in zip(lambdas, sols)]
    rho = float(extrapolate_to_zero(lambdas, rhos))
    vs = [center(s.v).to_vector() for s in sols]
    vec = extrapolate_to_zero(lambdas, vs)
    v = center(mesh.from_vector(vec))
    scheme = _Scheme(mesh, cp, F, vertex_scheme)
    pde, kir = _split_residual(mesh, scheme.operator(v.to_vector(), 0.0, rho))
    status = "converged" if all(s.converged for s in sols) else sols[-1].status
    last = sols[-1]
    return ErgodicSolution(v, rho, pde, kir, sum(s.iterations for s in sols), status, "vanishing",
                           last.policy, last.drift)


def solve_ergodic(mesh: Mesh, cp: ControlProblem, F=None, *, mode: str = "direct",
                  tol: float = 1e-10, max_iter: int = 200, vertex_scheme: str = "balance",
                  lambdas=(1e-2, 5e-3, 2.5e-3), initial_policy=None) -> ErgodicSolution:
    """Ergodic pair ``(v, rho)`` with ``mean(v) = 0``.

    ``mode="direct"`` runs policy iteration on the system bordered by the
    mean-zero row (``rho`` is the multiplier).  ``mode="vanishing"`` solves the
    discounted problems for ``lambdas`` and extrapolates ``lam * v`` and the
    centered solutions to ``lam = 0``.  ``mode="both"`` runs the two and
    raises :class:`ModesDisagree` when the constants differ by more than
    ``10 * tol``.
    """
    if mode == "direct":
        return _ergodic_direct(mesh, cp, F, tol, max_iter, vertex_scheme, initial_policy)
    if mode == "vanishing":
        return _ergodic_vanishing(mesh, cp, F, tol, max_iter, vertex_scheme, lambdas)
    if mode == "both":
        d = _ergodic_direct(mesh, cp, F, tol, max_iter, vertex_scheme, initial_policy)
        v = _ergodic_vanishing(mesh, cp, F, tol, max_iter, vertex_scheme, lambdas)
        if abs(d.rho - v.rho) > 10 * tol:
            raise ModesDisagree(d, v, 10 * tol)
        return d
    raise ValueError(f"unknown mode {mode!r}")


def discrete_operator(mesh: Mesh, cp: ControlProblem, lam: float, w: GridFunction, F=None,
                      vertex_scheme: str = "balance") -> np.ndarray:
    """Row residuals ``-mu w'' + H(x, w') + F + lam w`` of the monotone scheme."""
    return _Scheme(mesh, cp, F, vertex_scheme).operator(w.to_vector(), lam)


def verify_comparison(mesh: Mesh, cp: ControlProblem, lam: float, u: GridFunction, v: GridFunction,
                      F=None, vertex_scheme: str = "balance", atol: float = 1e-12) -> bool:
    """Check the discrete comparison principle on a pair of grid functions.

    If one function is a supersolution relative to the other (its row
    residuals dominate everywhere) the function returns whether it also
    dominates pointwise.  When neither ordering of the residuals holds the
    hypotheses fail and the result is ``False``.
    """
    su = discrete_operator(mesh, cp, lam, u, F, vertex_scheme)
    sv = discrete_operator(mesh, cp, lam, v, F, vertex_scheme)
    uu, vv = u.to_vector(), v.to_vector()
    if np.all(sv >= su - atol):
        return bool(np.all(vv >= uu - atol))
    if np.all(su >= sv - atol):
        return bool(np.all(uu >= vv - atol))
    return False
