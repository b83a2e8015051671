"""Exception hierarchy shared by the solvers and the command line runner."""


class HJNetError(Exception):
    """Base class for all package errors."""


class InvariantViolation(HJNetError):
    """A structural assumption on the data does not hold."""


class DisconnectedGraph(InvariantViolation):
    pass


class KirchhoffWeightSumViolation(InvariantViolation):
    def __init__(self, vertex, total):
        self.vertex = vertex
        self.total = total
        super().__init__(
            f"sum of gamma*mu at vertex {vertex} is {total!r}, expected 1"
        )


class EdgeNotIncident(HJNetError, ValueError):
    pass


class HypothesisViolation(InvariantViolation):
    """Control data exceed the declared bounds K or L."""


class InvalidEpsilon(HJNetError, ValueError):
    pass


class NotLipschitz(HJNetError, ValueError):
    pass


class InfeasibleTransport(HJNetError, ValueError):
    pass


class SolverFailure(HJNetError):
    """A numerical solve did not produce an acceptable answer."""


class NonMonotoneScheme(SolverFailure):
    def __init__(self, required_h, message=None):
        self.required_h = required_h
        super().__init__(
            message or f"scheme is not monotone; need h <= {required_h:.6g}"
        )


class LinearSolveFailure(SolverFailure):
    pass


class PolicyCycleDetected(SolverFailure):
    def __init__(self, best, message="policy iteration revisited a policy"):
        self.best = best
        super().__init__(message)


class ModesDisagree(SolverFailure):
    def __init__(self, direct, vanishing, tol):
        self.direct = direct
        self.vanishing = vanishing
        super().__init__(
            f"ergodic constants disagree: direct={direct.rho!r}, "
            f"vanishing discount={vanishing.rho!r} (tol {tol:g})"
        )


class NoConvergence(SolverFailure):
    def __init__(self, history, message="iteration did not converge"):
        self.history = list(history)
        super().__init__(f"{message}; last residual {self.history[-1] if self.history else float('nan'):.3e}")


class MaxIterExceeded(SolverFailure):
    def __init__(self, best, message="maximum number of iterations reached"):
        self.best = best
        super().__init__(message)


class NonConservativeAssembly(InvariantViolation):
    pass
