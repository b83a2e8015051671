"""Metric networks, per-edge grids and discrete calculus on them.

A network is a finite graph whose edges are segments ``[0, length]``.  Edge
``alpha`` runs from its ``tail`` vertex (abscissa 0) to its ``head`` vertex
(abscissa ``length``).  Loop edges (``tail == head``) are allowed and count
twice in every vertex sum, once per end.

Grid functions store one sample array per edge on a uniform grid.  For the
continuous class the endpoint samples of all edges meeting at a vertex agree;
for the piecewise class each edge keeps its own vertex trace.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Iterable, NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components, shortest_path

from .errors import (
    DisconnectedGraph,
    EdgeNotIncident,
    InvariantViolation,
    KirchhoffWeightSumViolation,
)

H1_TOL = 1e-12
TAIL, HEAD = 0, 1


@dataclass(frozen=True)
class Edge:
    tail: int
    head: int
    length: float
    mu: float
    gamma_tail: float
    gamma_head: float

    @property
    def is_loop(self) -> bool:
        return self.tail == self.head

    def gamma(self, end: int) -> float:
        return self.gamma_tail if end == TAIL else self.gamma_head

    def vertex(self, end: int) -> int:
        return self.tail if end == TAIL else self.head


class Incidence(NamedTuple):
    edge: int
    end: int  # TAIL or HEAD

    @property
    def sign(self) -> int:
        """n_{i alpha}: +1 when the vertex sits at abscissa length, -1 at 0."""
        return 1 if self.end == HEAD else -1


@dataclass(frozen=True, eq=False)
class Network:
    n_vertices: int
    edges: tuple[Edge, ...]

    @cached_property
    def incidence(self) -> tuple[tuple[Incidence, ...], ...]:
        inc: list[list[Incidence]] = [[] for _ in range(self.n_vertices)]
        for a, e in enumerate(self.edges):
            inc[e.tail].append(Incidence(a, TAIL))
            inc[e.head].append(Incidence(a, HEAD))
        return tuple(tuple(x) for x in inc)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def lengths(self) -> np.ndarray:
        return np.array([e.length for e in self.edges])

    @property
    def total_length(self) -> float:
        return float(self.lengths.sum())

    def kirchhoff_sums(self) -> np.ndarray:
        s = np.zeros(self.n_vertices)
        for i, inc in enumerate(self.incidence):
            for a, end in inc:
                e = self.edges[a]
                s[i] += e.gamma(end) * e.mu
        return s

    def incident_ends(self, vertex: int, edge: int) -> list[int]:
        return [end for a, end in self.incidence[vertex] if a == edge]

    @cached_property
    def vertex_distances(self) -> np.ndarray:
        """All-pairs geodesic distances between vertices."""
        n = self.n_vertices
        best: dict[tuple[int, int], float] = {}
        for e in self.edges:
            if e.is_loop:
                continue
            key = (min(e.tail, e.head), max(e.tail, e.head))
            best[key] = min(best.get(key, math.inf), e.length)
        if not best:
            return np.zeros((n, n))
        rows, cols = zip(*best)
        g = sp.coo_matrix((list(best.values()), (rows, cols)), shape=(n, n))
        return shortest_path(g.tocsr(), directed=False)

    def canonical_point(self, vertex: int) -> tuple[int, float]:
        """Lowest-index incident edge, at abscissa 0 or length."""
        a, end = min(self.incidence[vertex])
        return (a, 0.0 if end == TAIL else self.edges[a].length)

    def geodesic_distance(self, x: tuple[int, float], y: tuple[int, float]) -> float:
        return geodesic_distance(self, x, y)


def build_network(edges: Iterable, n_vertices: int | None = None) -> Network:
    """Validate an edge list and return an immutable :class:`Network`.

    ``edges`` holds :class:`Edge` objects, mappings with keys
    ``from, to, length, mu, gamma_from, gamma_to`` or equivalent tuples.
    The Kirchhoff weights must already satisfy ``sum gamma*mu = 1`` at every
    vertex; nothing is rescaled.
    """
    parsed = [_as_edge(e) for e in edges]
    if not parsed:
        raise InvariantViolation("network needs at least one edge")
    used = {v for e in parsed for v in (e.tail, e.head)}
    if n_vertices is None:
        n_vertices = max(used) + 1
    if min(used) < 0 or max(used) >= n_vertices:
        raise InvariantViolation("edge endpoint outside vertex range")
    for a, e in enumerate(parsed):
        if not (e.length > 0 and e.mu > 0 and e.gamma_tail > 0 and e.gamma_head > 0):
            raise InvariantViolation(f"edge {a}: length, mu and gammas must be positive")
    net = Network(n_vertices, tuple(parsed))

    rows = [e.tail for e in parsed]
    cols = [e.head for e in parsed]
    g = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n_vertices, n_vertices))
    ncomp, _ = connected_components(g, directed=False)
    if ncomp != 1:
        raise DisconnectedGraph(f"network has {ncomp} connected components")

    for i, s in enumerate(net.kirchhoff_sums()):
        if abs(s - 1.0) > H1_TOL:
            raise KirchhoffWeightSumViolation(i, float(s))
    return net


def _as_edge(e) -> Edge:
    if isinstance(e, Edge):
        return e
    if isinstance(e, dict):
        return Edge(
            int(e["from"]), int(e["to"]), float(e["length"]), float(e["mu"]),
            float(e["gamma_from"]), float(e["gamma_to"]),
        )
    t, h, length, mu, gt, gh = e
    return Edge(int(t), int(h), float(length), float(mu), float(gt), float(gh))


def load_network(path: str | Path) -> Network:
    """Read a network description (JSON or YAML).

    Expected layout::

        vertices: 3            # count, or a list of labels
        edges:
          - {from: 0, to: 1, length: 1.0, mu: 0.5, gamma_from: 2.0, gamma_to: 1.0}
    """
    text = Path(path).read_text()
    if str(path).endswith((".yaml", ".yml")):
        import yaml

        doc = yaml.safe_load(text)
    else:
        doc = json.loads(text)
    verts = doc.get("vertices")
    n = len(verts) if isinstance(verts, list) else verts
    return build_network(doc["edges"], n)


def network_to_dict(net: Network) -> dict:
    return {
        "vertices": net.n_vertices,
        "edges": [
            {"from": e.tail, "to": e.head, "length": e.length, "mu": e.mu,
             "gamma_from": e.gamma_tail, "gamma_to": e.gamma_head}
            for e in net.edges
        ],
    }


def geodesic_distance(net: Network, x: tuple[int, float], y: tuple[int, float]) -> float:
    """Shortest-path distance between two points given as ``(edge, abscissa)``."""
    (a, s), (b, t) = sorted([(int(x[0]), float(x[1])), (int(y[0]), float(y[1]))])  # exact symmetry
    ea, eb = net.edges[a], net.edges[b]
    D = net.vertex_distances
    best = abs(s - t) if a == b else math.inf
    for va, da in ((ea.tail, s), (ea.head, ea.length - s)):
        for vb, db in ((eb.tail, t), (eb.head, eb.length - t)):
            best = min(best, da + D[va, vb] + db)
    return float(best)


# ---------------------------------------------------------------------------
# grids


class Mesh:
    """Uniform per-edge grid on a network.

    Global numbering of the continuous unknowns: vertices first, then the
    interior nodes of each edge in order.  The same layout is used for the
    Fokker-Planck unknowns, where the vertex entries hold ``m / gamma``.
    """

    def __init__(self, network: Network, counts: Sequence[int]):
        counts = tuple(int(n) for n in counts)
        if len(counts) != network.n_edges or min(counts) < 2:
            raise ValueError("need one node count >= 2 per edge")
        self.network = network
        self.counts = counts
        self.h = network.lengths / np.array(counts)
        offs = np.cumsum([0] + [n - 1 for n in counts])
        self._offsets = network.n_vertices + offs[:-1]
        self.n_nodes = int(network.n_vertices + offs[-1])

    @classmethod
    def uniform(cls, network: Network, h_max: float | None = None, n: int | None = None) -> "Mesh":
        if n is not None:
            return cls(network, [n] * network.n_edges)
        if h_max is None:
            raise ValueError("give h_max or n")
        return cls(network, [max(2, math.ceil(e.length / h_max - 1e-9)) for e in network.edges])

    def refine(self, factor: int = 2) -> "Mesh":
        return Mesh(self.network, [n * factor for n in self.counts])

    def abscissae(self, a: int) -> np.ndarray:
        return np.linspace(0.0, self.network.edges[a].length, self.counts[a] + 1)

    def node_index(self, a: int) -> np.ndarray:
        e, n = self.network.edges[a], self.counts[a]
        idx = np.empty(n + 1, dtype=int)
        idx[0], idx[-1] = e.tail, e.head
        idx[1:-1] = self._offsets[a] + np.arange(n - 1)
        return idx

    @cached_property
    def node_indices(self) -> tuple[np.ndarray, ...]:
        return tuple(self.node_index(a) for a in range(self.network.n_edges))

    @cached_property
    def weights(self) -> np.ndarray:
        """Trapezoid quadrature weight of each global node (continuous class)."""
        w = np.zeros(self.n_nodes)
        for a, idx in enumerate(self.node_indices):
            q = np.full(idx.size, self.h[a])
            q[[0, -1]] *= 0.5
            np.add.at(w, idx, q)
        return w

    @cached_property
    def measure_weights(self) -> np.ndarray:
        """Mass carried by a unit entry of the Fokker-Planck unknown vector."""
        w = np.zeros(self.n_nodes)
        for a, idx in enumerate(self.node_indices):
            e = self.network.edges[a]
            q = np.full(idx.size, self.h[a])
            q[0] = 0.5 * self.h[a] * e.gamma_tail
            q[-1] = 0.5 * self.h[a] * e.gamma_head
            np.add.at(w, idx, q)
        return w

    def node_points(self) -> list[tuple[int, float]]:
        """A network point for every global node."""
        pts: list[tuple[int, float] | None] = [None] * self.n_nodes
        for v in range(self.network.n_vertices):
            pts[v] = self.network.canonical_point(v)
        for a, idx in enumerate(self.node_indices):
            y = self.abscissae(a)
            for j in range(1, idx.size - 1):
                pts[idx[j]] = (a, float(y[j]))
        return pts  # type: ignore[return-value]

    @cached_property
    def segments(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Consecutive node pairs ``(i, j, length)`` along every edge."""
        ii, jj, ll = [], [], []
        for a, idx in enumerate(self.node_indices):
            ii.append(idx[:-1])
            jj.append(idx[1:])
            ll.append(np.full(idx.size - 1, self.h[a]))
        return np.concatenate(ii), np.concatenate(jj), np.concatenate(ll)

    @cached_property
    def node_distances(self) -> np.ndarray:
        """Geodesic distance between every pair of global nodes."""
        i, j, l = self.segments
        keep = i != j
        g = sp.coo_matrix((l[keep], (i[keep], j[keep])), shape=(self.n_nodes,) * 2).tocsr()
        return shortest_path(g, directed=False)

    def sample(self, func: Callable[[int, np.ndarray], np.ndarray], kind: str = "continuous") -> "GridFunction":
        """Tabulate ``func(edge, y)`` on the grid."""
        vals = [np.broadcast_to(np.asarray(func(a, self.abscissae(a)), float), (self.counts[a] + 1,))
                for a in range(self.network.n_edges)]
        return GridFunction(self, vals, kind)

    def from_vector(self, vec: np.ndarray) -> "GridFunction":
        return GridFunction(self, [vec[idx] for idx in self.node_indices], "continuous")

    def constant(self, c: float) -> "GridFunction":
        return self.from_vector(np.full(self.n_nodes, float(c)))


CONT_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class GridFunction:
    mesh: Mesh
    values: tuple[np.ndarray, ...]
    kind: str = "continuous"

    def __post_init__(self):
        if self.kind not in ("continuous", "piecewise"):
            raise ValueError(f"unknown continuity class {self.kind!r}")
        vals = []
        for a, v in enumerate(self.values):
            arr = np.array(v, dtype=float)
            if arr.shape != (self.mesh.counts[a] + 1,):
                raise ValueError(f"edge {a}: expected {self.mesh.counts[a] + 1} samples")
            arr.setflags(write=False)
            vals.append(arr)
        object.__setattr__(self, "values", tuple(vals))
        if self.kind == "continuous":
            gap = self.vertex_mismatch()
            if gap > CONT_TOL * max(1.0, self.sup()):
                raise InvariantViolation(f"continuous grid function jumps by {gap:.3e} at a vertex")

    @property
    def network(self) -> Network:
        return self.mesh.network

    def vertex_mismatch(self) -> float:
        traces: dict[int, list[float]] = {}
        for a, e in enumerate(self.network.edges):
            traces.setdefault(e.tail, []).append(self.values[a][0])
            traces.setdefault(e.head, []).append(self.values[a][-1])
        return max((max(t) - min(t) for t in traces.values()), default=0.0)

    def to_vector(self) -> np.ndarray:
        """Global continuous vector; vertex entries are the mean of the traces."""
        out = np.zeros(self.mesh.n_nodes)
        cnt = np.zeros(self.mesh.n_nodes)
        for idx, v in zip(self.mesh.node_indices, self.values):
            np.add.at(out, idx, v)
            np.add.at(cnt, idx, 1)
        return out / cnt

    def sup(self) -> float:
        return max(float(np.abs(v).max()) for v in self.values)

    def _combine(self, other, op) -> "GridFunction":
        kind = self.kind
        if isinstance(other, GridFunction):
            if other.kind != "continuous":
                kind = "piecewise"
            vals = [op(u, v) for u, v in zip(self.values, other.values)]
        else:
            vals = [op(u, other) for u in self.values]
        return GridFunction(self.mesh, vals, kind)

    def __add__(self, other):
        return self._combine(other, np.add)

    __radd__ = __add__

    def __sub__(self, other):
        return self._combine(other, np.subtract)

    def __mul__(self, other):
        return self._combine(other, np.multiply)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0


def integrate(v: GridFunction) -> float:
    """Sum over edges of the trapezoid rule on ``[0, length]``."""
    total = 0.0
    for a, vals in enumerate(v.values):
        total += v.mesh.h[a] * (vals.sum() - 0.5 * (vals[0] + vals[-1]))
    return float(total)


def mean_value(v: GridFunction) -> float:
    """Integral divided by the total length of the network."""
    return integrate(v) / v.network.total_length


def center(v: GridFunction) -> GridFunction:
    return v - mean_value(v)


def outward_derivative(v: GridFunction, vertex: int, edge: int, *, order: int = 1, end: int | None = None) -> float:
    """Outward derivative of ``v`` at ``vertex`` along ``edge``.

    ``order=1`` is the two-point difference of the limit definition, ``order=2``
    the three-point one-sided stencil.  For a loop edge the end must be given.
    """
    ends = v.network.incident_ends(vertex, edge)
    if not ends:
        raise EdgeNotIncident(f"edge {edge} does not touch vertex {vertex}")
    if end is None:
        if len(ends) > 1:
            raise ValueError("loop edge: pass end=TAIL or end=HEAD")
        end = ends[0]
    elif end not in ends:
        raise EdgeNotIncident(f"edge {edge} end {end} is not at vertex {vertex}")
    w, h = v.values[edge], v.mesh.h[edge]
    if end == TAIL:
        if order == 1:
            return float((w[0] - w[1]) / h)
        return float((3 * w[0] - 4 * w[1] + w[2]) / (2 * h))
    if order == 1:
        return float((w[-1] - w[-2]) / h)
    return float((3 * w[-1] - 4 * w[-2] + w[-3]) / (2 * h))


def edge_derivatives(w: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    """First and second derivatives: centered inside, one-sided second order at the ends."""
    d1 = np.gradient(w, h, edge_order=2)
    d2 = np.empty_like(w)
    d2[1:-1] = (w[2:] - 2 * w[1:-1] + w[:-2]) / h**2
    if w.size >= 4:
        d2[0] = (2 * w[0] - 5 * w[1] + 4 * w[2] - w[3]) / h**2
        d2[-1] = (2 * w[-1] - 5 * w[-2] + 4 * w[-3] - w[-4]) / h**2
    else:
        d2[0], d2[-1] = d2[1], d2[-2]
    return d1, d2


def holder_seminorm(w: np.ndarray, h: float, sigma: float) -> float:
    """max over node pairs of |w(y) - w(z)| / |y - z|**sigma on one edge."""
    n = w.size
    best = 0.0
    for k in range(1, n):
        q = np.abs(w[k:] - w[:-k]).max() / (k * h) ** sigma
        best = max(best, float(q))
    return best


@dataclass(frozen=True)
class NormReport:
    sup_norm: float
    c1_norm: float
    c2_norm: float
    sigma: float
    holder: tuple[float, float, float]  # seminorms of v, dv, d2v (max over edges)

    @property
    def holder_seminorm(self) -> float:
        return self.holder[2]

    @property
    def c2_sigma_norm(self) -> float:
        return self.c2_norm + self.holder[2]


def norms(v: GridFunction, sigma: float = 1.0) -> NormReport:
    """Discrete C^0, C^1, C^2 norms summed over edges, plus per-edge Holder seminorms.

    Vertex mismatches of piecewise functions never enter the seminorms.
    """
    if not 0 < sigma <= 1:
        raise ValueError("sigma must lie in (0, 1]")
    s0 = s1 = s2 = 0.0
    hol = [0.0, 0.0, 0.0]
    for a, w in enumerate(v.values):
        h = v.mesh.h[a]
        d1, d2 = edge_derivatives(w, h)
        s0 += np.abs(w).max()
        s1 += np.abs(d1).max()
        s2 += np.abs(d2).max()
        for k, f in enumerate((w, d1, d2)):
            hol[k] = max(hol[k], holder_seminorm(f, h, sigma))
    return NormReport(float(s0), float(s0 + s1), float(s0 + s1 + s2), sigma, tuple(hol))


def sup_distance(u: GridFunction, v: GridFunction) -> float:
    return (u - v).sup()
