"""Exception types raised across the package."""


class DegenlabError(Exception):
    """Base class for all package errors."""


class SingularEvaluationError(DegenlabError, ValueError):
    """A coefficient term diverges at the requested time."""


class NotPSDError(DegenlabError, ValueError):
    """A matrix expected to be positive semidefinite has a negative eigenvalue."""


class OutOfRangeError(DegenlabError, ValueError):
    """An argument lies outside the admissible range of an inverse map."""


class FloorTooLargeError(DegenlabError, ValueError):
    """The splitting floor exceeds the smallest eigenvalue of the diffusion matrix."""


class QueryOutsideGridError(DegenlabError, ValueError):
    """A Monte Carlo query time is not present on the ensemble time grid."""


class AdmissibilityError(DegenlabError, ValueError):
    """A weight exponent lies outside the Muckenhoupt range."""


class ConfigError(DegenlabError, ValueError):
    """An experiment configuration failed validation."""
