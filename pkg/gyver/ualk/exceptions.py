from gyver.attrs import define


@define
class UalkError(Exception):
    msg: str

    def __str__(self) -> str:
        return self.msg


@define
class ArgumentError(UalkError, ValueError):
    pass


@define
class StateError(UalkError, RuntimeError):
    pass


@define
class ConvergenceError(UalkError, ArithmeticError):
    """Raised when an iterative solver exhausts its budget.
    `residual` is the last residual the solver attained."""

    residual: float


@define
class DecompositionError(UalkError, ArithmeticError):
    pass


@define
class BesselRangeError(UalkError, OverflowError):
    pass


@define
class EstimationError(UalkError, ValueError):
    pass


@define
class SingularityError(UalkError, ArithmeticError):
    norm: float


@define
class TrainingError(UalkError, ArithmeticError):
    epoch: int


@define
class EmptyCandidateError(UalkError, ValueError):
    pass


@define
class FormatError(UalkError, ValueError):
    location: str = ''


@define
class ConfigError(UalkError, ValueError):
    key: str = ''
