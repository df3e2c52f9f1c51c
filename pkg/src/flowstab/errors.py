"""Exception hierarchy shared by all flowstab modules."""


class FlowstabError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(FlowstabError, ValueError):
    """A field configuration or scenario violates an invariant."""


class DomainError(FlowstabError, ValueError):
    """A point or time lies outside the domain of a flow or formula."""

    def __init__(self, message, axis=None):
        super().__init__(message)
        self.axis = axis


class CapabilityError(FlowstabError):
    """Requested derivative order or feature exceeds what is supported."""


class CertificationError(FlowstabError):
    """A perturbation does not satisfy the requested hypothesis class."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class HypothesisError(FlowstabError):
    """Derived constants violate a side condition of a lemma."""


class IntegrationError(FlowstabError, RuntimeError):
    """The ODE integrator failed (step underflow, blowup, step budget)."""

    def __init__(self, message, last_time=None):
        super().__init__(message)
        self.last_time = last_time


class ConvergenceError(FlowstabError, RuntimeError):
    """A fixed-point iteration did not converge."""

    def __init__(self, message, residuals=()):
        super().__init__(message)
        self.residuals = list(residuals)


class DivergenceError(FlowstabError, RuntimeError):
    """A transported field grows instead of decaying."""

    def __init__(self, message, growth_rate=None):
        super().__init__(message)
        self.growth_rate = growth_rate


class UsageError(FlowstabError, ValueError):
    """Inputs are inconsistent with what the operation requires."""
