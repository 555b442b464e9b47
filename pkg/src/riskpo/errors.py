"""Exception hierarchy shared by all riskpo modules."""


class RiskPOError(Exception):
    """Base class for every error raised by riskpo."""


class UnstableMatrixError(RiskPOError):
    """A matrix required to be Schur stable has spectral radius >= 1."""


class IllConditionedError(RiskPOError):
    """A linear solve is numerically degenerate."""


class RiskInfeasibleError(RiskPOError):
    """``gamma**2 I - D^T P D`` (or its data-driven estimate) is not positive definite."""


class GammaTooSmallError(RiskPOError):
    """The game Riccati equation has no stabilizing solution at this gamma."""


class NoConvergenceError(RiskPOError):
    """An iteration hit its iteration cap before meeting its tolerance."""


class NotAdmissibleError(RiskPOError):
    """A feedback gain is stabilizing but violates the H-infinity bound."""


class NotStabilizableError(RiskPOError):
    """No stabilizing game solution exists even for a very large gamma."""


class InsufficientExcitationError(RiskPOError):
    """Sample moment matrices are singular; the data do not excite the system."""


class UnstableExplorationError(RiskPOError):
    """The exploratory closed loop blew up during simulation."""


class InfeasibleLMIError(RiskPOError):
    """The initial-gain LMIs have no strictly feasible point at the given margins.

    Attributes
    ----------
    best_margin : float
        Smallest ``lambda_max`` reached by the solver (positive means infeasible).
    """

    def __init__(self, message, best_margin):
        super().__init__(message)
        self.best_margin = best_margin


class StageError(RiskPOError):
    """A pipeline stage failed; ``stage`` names which one."""

    def __init__(self, stage, cause):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause
