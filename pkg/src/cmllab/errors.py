"""Exception hierarchy shared by all cmllab engines."""


class CmlError(Exception):
    """Base class for every error raised by cmllab."""


class ConfigError(CmlError, ValueError):
    """Invalid configuration or parameter value (CLI exit code 2)."""


class DomainError(CmlError, ValueError):
    """A point lies outside the domain of an operation."""


class SingularityError(CmlError, ValueError):
    """Derivative or Jacobian requested at a kink."""

    def __init__(self, message, coordinates=()):
        super().__init__(message)
        self.coordinates = tuple(coordinates)


class EscapeError(CmlError, RuntimeError):
    """A state left [0,1]^m during iteration (CLI exit code 3)."""

    def __init__(self, message, state=None, step_index=None):
        super().__init__(message)
        self.state = state
        self.step_index = step_index


class PreconditionError(CmlError, ValueError):
    """The inputs do not satisfy an operation's stated precondition."""


class CellMismatchError(PreconditionError):
    """A piece was handed to the affine branch of a cell it does not lie in."""


class HypothesisViolation(CmlError, ValueError):
    """Parameters violate the hypotheses of a closed-form lemma."""


class BracketError(CmlError, ValueError):
    """Bisection endpoints do not bracket a change of the predicate."""


class ComponentExplosion(CmlError, RuntimeError):
    """Curve iteration exceeded the configured component cap."""

    def __init__(self, message, forest=None):
        super().__init__(message)
        self.forest = forest
