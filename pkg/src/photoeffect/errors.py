"""Exception hierarchy shared by all modules and mapped to CLI exit codes."""


class PhotoeffectError(Exception):
    """Base class for all package errors."""

    exit_code = 5


class InvalidInputError(PhotoeffectError, ValueError):
    """Malformed physical input (degenerate window, non-unit vector, ...)."""

    exit_code = 1


class ConfigError(PhotoeffectError):
    """Run configuration could not be parsed or validated."""

    exit_code = 1


class NoBoundStateError(PhotoeffectError):
    """The electronic Hamiltonian has no negative eigenvalue on the grid."""

    exit_code = 2


class OrthonormalityError(PhotoeffectError):
    """Photon pulses of a multi-pulse state are not orthonormal."""

    exit_code = 3

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


class NumericalError(PhotoeffectError):
    """Quadrature produced a non-finite or inconsistent value."""

    exit_code = 5


class ResolutionError(NumericalError):
    """Requested accuracy is out of reach on the current grid."""

    def __init__(self, message: str, suggestion: str = ""):
        super().__init__(message if not suggestion else f"{message} ({suggestion})")
        self.suggestion = suggestion


class BasisCoverageError(NumericalError):
    """A state is not represented by the computed eigenfunction basis."""

    def __init__(self, message: str, defect: float):
        super().__init__(message)
        self.defect = defect


class MissingChannelError(NumericalError):
    """A wave packet has a partial wave outside the computed set."""
