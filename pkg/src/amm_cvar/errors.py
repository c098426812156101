"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of the operation."""


class PreconditionError(ValueError):
    """Inputs are individually valid but violate a joint precondition."""


class ContractError(ValueError):
    """Two objects that must agree (stream vs. params, shapes) do not."""


class NumericalError(ArithmeticError):
    """A numerical routine failed (singular system, non-finite objective)."""
