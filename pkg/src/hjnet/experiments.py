"""Continuous-dependence experiments for discounted and ergodic HJ problems.

Two problems with Hamiltonians ``H^i(x, p) + F^i(x)`` are solved on the same
mesh; the distance between their centered solutions is compared with the
size of the data perturbation

    R = max|b1 - b2| + max|f1 - f2| + max|F1 - F2|
        + Lip_(x,p)(H1 - H2) + Hol_theta(F1 - F2).

The harness only certifies that ``D / R`` stays bounded as the perturbation
shrinks; the constant itself is not computable.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .hamiltonian import ControlProblem
from .hjb import solve_discounted, solve_ergodic
from .network import GridFunction, Mesh, center, edge_derivatives, holder_seminorm, norms

Fn = Callable[..., np.ndarray]


def _zero_delta(t, e, y, a=None):
    return 0.0 * y


@dataclass(frozen=True, eq=False)
class PerturbationFamily:
    """Base data ``(b, f, F)`` and perturbations indexed by a scale ``t``.

    ``drift_delta(t, e, y, a)`` and ``cost_delta(t, e, y, a)`` are added to
    the base drift and cost, ``source_delta(t, e, y)`` to the base source.
    ``smooth=False`` marks families whose Hamiltonian gap is not
    ``C^{1,theta}``; the C^2 experiment refuses them.
    """

    name: str
    controls: np.ndarray
    drift: Fn
    cost: Fn
    source: Fn | None = None
    drift_delta: Fn = _zero_delta
    cost_delta: Fn = _zero_delta
    source_delta: Fn = _zero_delta
    theta: float = 1.0
    smooth: bool = True
    K: float | None = None
    L: float | None = None

    def base(self) -> tuple[ControlProblem, Fn]:
        src = self.source or (lambda e, y: 0.0 * y)
        return ControlProblem(self.controls, self.drift, self.cost, K=self.K, L=self.L, name=self.name), src

    def member(self, t: float) -> tuple[ControlProblem, Fn]:
        src = self.source or (lambda e, y: 0.0 * y)
        cp = ControlProblem(
            self.controls,
            lambda e, y, a: self.drift(e, y, a) + self.drift_delta(t, e, y, a),
            lambda e, y, a: self.cost(e, y, a) + self.cost_delta(t, e, y, a),
            K=self.K, L=self.L, name=f"{self.name}[t={t:g}]",
        )
        return cp, (lambda e, y: src(e, y) + self.source_delta(t, e, y))

    def gaps(self, mesh: Mesh, t: float, kbar: float, n_p: int = 41) -> dict:
        """Perturbation sizes on the mesh; the Hamiltonian gap uses ``|p| <= kbar``."""
        cp1, F1 = self.base()
        cp2, F2 = self.member(t)
        db = df = dF = ham = hol = 0.0
        p = np.linspace(-kbar, kbar, n_p)
        dp = p[1] - p[0] if n_p > 1 else 1.0
        for a in range(mesh.network.n_edges):
            y = mesh.abscissae(a)
            h = mesh.h[a]
            b1, f1 = cp1.tables(a, y)
            b2, f2 = cp2.tables(a, y)
            db = max(db, float(np.abs(b1 - b2).max()))
            df = max(df, float(np.abs(f1 - f2).max()))
            s1 = np.broadcast_to(F1(a, y), y.shape)
            s2 = np.broadcast_to(F2(a, y), y.shape)
            dF = max(dF, float(np.abs(s1 - s2).max()))
            hol = max(hol, holder_seminorm(s1 - s2, h, self.theta))
            # H1 - H2 on the (x, p) grid
            H1 = (-b1[:, None, :] * p[None, :, None] - f1[:, None, :]).max(axis=2)
            H2 = (-b2[:, None, :] * p[None, :, None] - f2[:, None, :]).max(axis=2)
            G = H1 - H2
            gx = np.diff(G, axis=0)[:, :-1] / h
            gp = np.diff(G, axis=1)[:-1, :] / dp
            ham = max(ham, float(np.sqrt(gx**2 + gp**2).max(initial=0.0)))
        return {"delta_b": db, "delta_f": df, "delta_F": dF, "ham_gap": ham, "F_gap": hol}


@dataclass
class ExperimentTable:
    columns: tuple
    rows: list = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=float)

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(self.columns))
            w.writeheader()
            for r in self.rows:
                w.writerow({k: r.get(k, "") for k in self.columns})


COLUMNS = ("t", "lam", "delta_b", "delta_f", "delta_F", "ham_gap", "F_gap", "D_C2", "D_Linf", "R", "ratio")


def _solve(mesh, cp, src, lam, tol):
    if lam > 0:
        return center(solve_discounted(mesh, cp, src, lam, tol=tol).v)
    return solve_ergodic(mesh, cp, src, tol=tol).v


def _max_gradient(v: GridFunction) -> float:
    return max(float(np.abs(edge_derivatives(w, v.mesh.h[a])[0]).max()) for a, w in enumerate(v.values))


def _sweep(mesh, fam, lam, scales, tol, c2: bool):
    cp1, F1 = fam.base()
    w1 = _solve(mesh, cp1, F1, lam, tol)
    g1 = _max_gradient(w1)
    table = ExperimentTable(COLUMNS)
    for t in scales:
        cp2, F2 = fam.member(t)
        w2 = _solve(mesh, cp2, F2, lam, tol)
        kbar = 1.1 * max(g1, _max_gradient(w2))
        gaps = fam.gaps(mesh, t, max(kbar, 1e-12))
        diff = w1 - w2
        rep = norms(diff)
        R = gaps["delta_b"] + gaps["delta_f"] + gaps["delta_F"]
        if c2:
            R += gaps["ham_gap"] + gaps["F_gap"]
        D = rep.c2_norm if c2 else diff.sup()
        row = {"t": t, "lam": lam, **gaps, "D_C2": rep.c2_norm, "D_Linf": diff.sup(), "R": R,
               "ratio": D / R if R > 0 else (0.0 if D == 0 else math.inf)}
        table.rows.append(row)
    return table


def c2_dependence_experiment(mesh: Mesh, fam: PerturbationFamily, lam: float, scales: Sequence[float],
                             tol: float = 1e-10) -> ExperimentTable:
    """Table of ``||w1 - w2||_C2`` against the full perturbation size, one row per scale.

    ``lam > 0`` solves discounted problems and centers them; ``lam == 0``
    solves the ergodic problems.
    """
    if not fam.smooth:
        raise ValueError(f"family {fam.name!r} does not satisfy the smoothness hypothesis of the C2 estimate")
    _check_scales(scales)
    return _sweep(mesh, fam, lam, scales, tol, True)


def linf_dependence_experiment(mesh: Mesh, fam: PerturbationFamily, lam: float, scales: Sequence[float],
                               tol: float = 1e-10) -> ExperimentTable:
    """Sup-norm variant: the Hamiltonian and Holder gaps are left out of ``R``."""
    _check_scales(scales)
    return _sweep(mesh, fam, lam, scales, tol, False)


def _check_scales(scales):
    s = np.asarray(scales, float)
    if s.size == 0 or np.any(s <= 0) or np.any(np.diff(s) >= 0):
        raise ValueError("scales must be positive and decreasing")


def ratio_summary(table: ExperimentTable) -> dict:
    r = table.column("ratio")
    finite = r[np.isfinite(r)]
    med = float(np.median(finite)) if finite.size else math.nan
    mx = float(finite.max()) if finite.size else math.nan
    return {"max": mx, "median": med, "bounded": bool(finite.size == r.size and mx <= 10 * med + 1e-300)}


def lambda_uniformity_probe(mesh: Mesh, cp: ControlProblem, F=None,
                            lambdas: Sequence[float] = (1.0, 0.3, 0.1, 0.03, 0.01, 0.003, 0.001),
                            tol: float = 1e-10) -> dict:
    """C^2 norm of the centered discounted solution over a range of discounts.

    ``passed`` holds when the largest norm is at most twice the smallest
    (or all norms sit at the roundoff floor of second differences).
    """
    vals, sups = [], []
    for lam in lambdas:
        v = solve_discounted(mesh, cp, F, lam, tol=tol).v
        sups.append(v.sup())
        vals.append(norms(center(v)).c2_norm)
    vals = np.array(vals)
    lo, hi = float(vals.min()), float(vals.max())
    floor = 1e-13 * max(1.0, max(sups)) / float(np.min(mesh.h)) ** 2
    passed = hi <= floor or hi <= 2 * lo
    return {"lambdas": list(map(float, lambdas)), "c2_norms": vals.tolist(), "max": hi, "min": lo, "passed": bool(passed)}


# ---------------------------------------------------------------------------
# shipped families


def _quadratic_base(n_controls=21, amax=1.0, potential=None):
    controls = np.linspace(-amax, amax, n_controls)
    V = potential or (lambda e, y: 0.3 * np.cos(2 * np.pi * y / 1.0 + e))
    return controls, (lambda e, y, a: a + 0.0 * y), (lambda e, y, a: 0.5 * a**2 + V(e, y))


def drift_family(n_controls: int = 21, amax: float = 1.0, potential=None) -> PerturbationFamily:
    """``b2 = b1 + t sin(2 pi y)``, cost and source fixed."""
    controls, b, f = _quadratic_base(n_controls, amax, potential)
    return PerturbationFamily(
        "drift", controls, b, f,
        drift_delta=lambda t, e, y, a: t * np.sin(2 * np.pi * y) + 0.0 * a,
    )


def cost_shift_family(n_controls: int = 21, amax: float = 1.0, potential=None) -> PerturbationFamily:
    """``f2 = f1 + t``: centered solutions coincide, the ergodic constant moves by ``t``."""
    controls, b, f = _quadratic_base(n_controls, amax, potential)
    return PerturbationFamily("cost_shift", controls, b, f, cost_delta=lambda t, e, y, a: t + 0.0 * y * a)


def identical_family(n_controls: int = 21, amax: float = 1.0, potential=None) -> PerturbationFamily:
    controls, b, f = _quadratic_base(n_controls, amax, potential)
    return PerturbationFamily("identical", controls, b, f)


def rough_source_family(theta: float = 0.5, n_controls: int = 21, amax: float = 1.0, potential=None) -> PerturbationFamily:
    """``F2 = F1 + t |sin(pi y)|^theta``: a Holder-only source perturbation."""
    controls, b, f = _quadratic_base(n_controls, amax, potential)
    return PerturbationFamily(
        "rough_source", controls, b, f,
        source_delta=lambda t, e, y: t * np.abs(np.sin(np.pi * y)) ** theta,
        theta=theta, smooth=False,
    )


FAMILIES = {
    "drift": drift_family,
    "cost_shift": cost_shift_family,
    "identical": identical_family,
    "rough_source": rough_source_family,
}
