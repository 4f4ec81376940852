"""Exception types shared across the package."""


class CacoError(Exception):
    """Base class for all package errors."""


class ContractError(CacoError):
    """A documented precondition was violated by the caller."""


class DimensionError(ContractError):
    """Operand shapes are incompatible."""


class ParameterError(ContractError):
    """A scalar parameter is outside its valid range."""


class DegenerateEmbeddingError(CacoError):
    """A vector with (near-)zero norm cannot be normalized."""


class NotWarmError(CacoError):
    """The categorical dictionary does not yet hold a full group per slot."""
