"""Exception types raised across the package."""


class KilledSDEError(Exception):
    pass


class InvalidDomainError(KilledSDEError, ValueError):
    """Interval endpoints are out of order, non-finite where required, or unsupported."""


class ParameterError(KilledSDEError, ValueError):
    """A model or contract parameter lies outside its admissible range."""


class DomainViolationError(KilledSDEError, ValueError):
    """A state was evaluated at or beyond a boundary of the open domain."""


class BracketError(KilledSDEError, RuntimeError):
    """Root bracketing failed; indicates numerical breakdown, not bad input."""


class DifferentiationError(KilledSDEError, ValueError):
    """Drift derivative could not be evaluated to a finite value."""


class SpecViolationError(KilledSDEError, ValueError):
    """A barrier contract violates the ordering required by its closed form."""


class NonFiniteEstimatorError(KilledSDEError, FloatingPointError):
    def __init__(self, path_index, value):
        super().__init__(f"path {path_index} produced non-finite estimator {value!r}")
        self.path_index = path_index
        self.value = value


class ConfigError(KilledSDEError, ValueError):
    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
