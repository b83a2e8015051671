"""Quasi-stationary mean field games on networks.

At each time node ``t_k`` the agents solve the ergodic problem

    -mu u'' + H(x, u') + rho = F[m(t_k)],   mean(u) = 0,

and the population moves by the Fokker-Planck equation with coefficient
``dH/dp(x, u'(t_k))`` frozen on ``[t_k, t_{k+1}]``.  A solution is a fixed
point of the map ``path -> new path``; it is found by damped Picard
iteration measured in the sup over time of W1.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import MaxIterExceeded
from .fokker_planck import Measure, MeasurePath, holder_time_modulus, solve_fp
from .hamiltonian import ControlProblem, CouplingCost
from .hjb import ErgodicSolution, solve_ergodic
from .network import Mesh
from .transport import measure_distance

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class MFGSolution:
    times: np.ndarray
    hj: tuple  # ErgodicSolution per time node
    path: MeasurePath
    history: list = field(default_factory=list)
    converged: bool = False

    @property
    def rho(self) -> np.ndarray:
        return np.array([s.rho for s in self.hj])

    @property
    def iterations(self) -> int:
        return len(self.history)

    @property
    def residual(self) -> float:
        return self.history[-1]["step"] if self.history else float("nan")


def _time_grid(T: float, dt: float) -> np.ndarray:
    n = int(round(T / dt))
    if n < 1 or abs(n * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError("T must be a positive multiple of dt")
    return np.arange(n + 1) * dt


def _hj_slices(mesh: Mesh, cp: ControlProblem, F: CouplingCost, path: MeasurePath, tol: float):
    sols: list[ErgodicSolution] = []
    policy = None
    for m in path.measures:
        s = solve_ergodic(mesh, cp, -F(m), tol=tol, initial_policy=policy)
        sols.append(s)
        policy = s.policy
    return sols


def _apply(mesh, cp, F, path, m0, tol):
    sols = _hj_slices(mesh, cp, F, path, tol)
    dt = path.times[1] - path.times[0]
    T = path.times[-1]
    drifts = [s.dp_H for s in sols[:-1]]
    new = solve_fp(mesh, drifts, m0, T, dt)
    return new, sols


def mfg_map(mesh: Mesh, cp: ControlProblem, F: CouplingCost, path: MeasurePath, *, tol: float = 1e-10) -> MeasurePath:
    """One application of the fixed-point map; the new path starts from ``path[0]``."""
    return _apply(mesh, cp, F, path, path[0], tol)[0]


def solve_mfg(mesh: Mesh, cp: ControlProblem, F: CouplingCost, m0: Measure, T: float, dt: float, *,
              tol: float = 1e-6, max_iter: int = 50, omega: float = 0.5,
              initial_path: MeasurePath | None = None, hj_tol: float = 1e-10,
              raise_on_failure: bool = False) -> MFGSolution:
    """Damped Picard iteration ``p <- (1 - omega) p + omega T(p)``.

    Stops when the sup over time nodes of W1 between successive iterates is
    at most ``tol``.  Without convergence the last iterate is returned with
    ``converged=False`` (or :class:`MaxIterExceeded` is raised when
    ``raise_on_failure``).
    """
    if not 0 < omega <= 1:
        raise ValueError("omega must lie in (0, 1]")
    times = _time_grid(T, dt)
    path = initial_path if initial_path is not None else MeasurePath.constant(m0, times)
    if len(path) != len(times) or not np.allclose(path.times, times):
        raise ValueError("initial path must live on the time grid")
    history = []
    sols = None
    for it in range(1, max_iter + 1):
        image, sols = _apply(mesh, cp, F, path, m0, hj_tol)
        new = path.combine(image, omega)
        step = max(measure_distance(a, b) for a, b in zip(new.measures, path.measures))
        history.append({"iteration": it, "step": step, "rho0": sols[0].rho})
        logger.info("mfg iteration %d: W1 step %.3e", it, step)
        if it > 4 and step > history[-2]["step"] * (1 + 1e-9):
            logger.warning("fixed-point step increased at iteration %d", it)
        path = new
        if step <= tol:
            # final HJ fields consistent with the returned path
            sols = _hj_slices(mesh, cp, F, path, hj_tol)
            return MFGSolution(times, tuple(sols), path, history, True)
    sol = MFGSolution(times, tuple(_hj_slices(mesh, cp, F, path, hj_tol)), path, history, False)
    if raise_on_failure:
        raise MaxIterExceeded(sol)
    logger.warning("mfg iteration stopped after %d iterations (step %.3e)", max_iter, history[-1]["step"])
    return sol


def verify_time_holder(sol, threshold: float = 0.45) -> dict:
    """Fit the time modulus of the measure path; pass when the exponent is at least ``threshold``.

    A path that does not move (all distances zero) passes trivially.
    """
    path = sol.path if isinstance(sol, MFGSolution) else sol
    C, expo = holder_time_modulus(path)
    passed = bool(np.isnan(expo) or expo >= threshold)
    return {"C_W": C, "exponent": expo, "threshold": threshold, "passed": passed}
