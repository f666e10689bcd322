"""Exception and warning types raised across the package."""


class WPTError(Exception):
    """Base class for all package errors."""


# geometry
class NonPositiveDimension(WPTError, ValueError):
    pass


class DegenerateNormal(WPTError, ValueError):
    pass


class NonPositiveFrequency(WPTError, ValueError):
    pass


class CoincidentLoops(WPTError, ValueError):
    pass


class OverlappingElements(WPTError, ValueError):
    pass


class QuadratureNotConverged(WPTError, RuntimeError):
    pass


class InvalidScenario(WPTError, ValueError):
    pass


# circuit
class PassivityViolation(WPTError, ValueError):
    pass


class NonPositiveLoad(WPTError, ValueError):
    pass


class IndexOutOfRange(WPTError, IndexError):
    pass


class ZeroCoupling(WPTError, ValueError):
    """The port has no coupling to any other node (S_n = 0)."""


# sdr
class Infeasible(WPTError):
    """No current distribution can deliver power to the receiver."""


class SolverNumericalFailure(WPTError, RuntimeError):
    pass


class RankDeficient(WPTError, ValueError):
    pass


class ZeroVector(WPTError, ValueError):
    pass


class MissingDuals(WPTError, ValueError):
    pass


class NotTightWarning(UserWarning):
    """The relaxation is not tight; the reported efficiency is only an upper bound."""


# synthesis
class DeadPassiveNode(WPTError, ValueError):
    def __init__(self, nodes, message=None):
        self.nodes = list(nodes)
        super().__init__(message or f"passive node(s) {self.nodes} carry no current")


class NotCapacitive(WPTError, ValueError):
    """Raised when a reactance is inductive; carries the equivalent inductance."""

    def __init__(self, reactance, inductance):
        self.reactance = reactance
        self.inductance = inductance
        super().__init__(
            f"reactance {reactance:g} ohm is not capacitive "
            f"(equivalent inductance {inductance:.6g} H)"
        )


class SingularTransmitterLoss(WPTError, ValueError):
    pass


class NoImprovementWarning(UserWarning):
    pass


class VerificationFailed(WPTError, RuntimeError):
    pass


# oracle
class TooManyDimensions(WPTError, ValueError):
    pass


class DimensionMismatch(WPTError, ValueError):
    pass


# fields
class SingularPoint(WPTError, ValueError):
    pass
