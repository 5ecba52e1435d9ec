"""Exception hierarchy shared by all modules.

Each class carries the CLI exit code it maps to.
"""


class FastSlowError(Exception):
    exit_code = 3


class ConfigError(FastSlowError):
    exit_code = 2


class ExprSyntaxError(ConfigError):
    def __init__(self, message, offset, expected=()):
        self.offset = offset
        self.expected = tuple(expected)
        detail = f"{message} at offset {offset}"
        if self.expected:
            detail += ", expected " + " or ".join(repr(e) for e in self.expected)
        super().__init__(detail)


class NumericDomainError(FastSlowError):
    pass


class InvalidMapError(ConfigError):
    """The configured map or observable fails validation."""


class DegenerateOrbitError(FastSlowError):
    pass


class SpectralGapError(FastSlowError):
    pass


class DegenerateVarianceError(FastSlowError):
    pass


class DecompositionError(FastSlowError):
    pass


class InterfaceError(FastSlowError):
    pass


class PreconditionError(FastSlowError):
    pass


class ResourceError(FastSlowError):
    exit_code = 4


class InvalidDensityError(ConfigError):
    pass
