"""Exception hierarchy shared by all modules."""


class PLWError(Exception):
    """Base class for errors raised by this package."""


class DimensionError(PLWError, ValueError):
    """Operands live on different grids, segments or dimensions."""


class DomainError(PLWError, ValueError):
    """A point lies outside the domain of definition of an operator."""


class IterateEscaped(DomainError):
    """An iterate left the working ball or the domain box."""


class ContractViolation(PLWError, ArithmeticError):
    """A quantity that the theory guarantees nonzero vanished.

    Usually this means the operator's adjoint is broken or the configured
    cone constant is too small for the problem.
    """


class EstimationError(PLWError, RuntimeError):
    """A sampling estimator had no usable samples."""


class SolverError(PLWError, RuntimeError):
    """A sparse linear solve failed or missed its residual tolerance."""


class ConfigError(PLWError, ValueError):
    """Malformed or inconsistent experiment configuration."""
