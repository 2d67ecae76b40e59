"""Exception hierarchy shared by every module."""


class SignMimicError(Exception):
    """Base class for all package errors."""


class ParseError(SignMimicError):
    """A document does not conform to its schema."""


class StructuralError(SignMimicError):
    """The skeleton graph is not a single tree."""


class ContractError(SignMimicError, ValueError):
    """An argument violates an operation's precondition."""


class IngestionError(SignMimicError):
    """A pose-estimator capture cannot be mapped onto the skeleton."""


class InstabilityError(SignMimicError, FloatingPointError):
    """Integration produced a non-finite value."""


class NumericalError(SignMimicError, FloatingPointError):
    """A learning update produced non-finite gradients or parameters."""


class ConfigError(SignMimicError):
    """A run or sweep configuration is invalid."""
