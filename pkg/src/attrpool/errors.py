class AttrPoolError(Exception):
    """Base class for all package errors."""


class DomainError(AttrPoolError, ValueError):
    """Input outside the domain of an operation."""


class SchemaError(AttrPoolError, ValueError):
    """Attribute schema or dimension mismatch."""


class FormatError(AttrPoolError, ValueError):
    """Malformed file contents."""


class ContractError(AttrPoolError, ValueError):
    """A cache or parameter set does not match the call it is used with."""


class CheckFailure(AttrPoolError):
    """A verification check (gradcheck, validation) did not pass."""


class TrainingDiverged(AttrPoolError, FloatingPointError):
    """Loss became non-finite during training."""
