"""Flows of perturbed linear and monomial vector fields: closed forms, prolongations,
decay envelopes, weak-norm stability certificates and Lie-bracket inversion."""

__version__ = "0.1.0"

from .errors import (CapabilityError, CertificationError, ConvergenceError, DivergenceError,
                     DomainError, FlowstabError, HypothesisError, IntegrationError, UsageError,
                     ValidationError)
from .fields import (Family, FieldSpec, PerturbationKind, build_field, eval_field,
                     eval_field_jet, field_jets)
from .closed_form import (closed_form_flow, closed_form_jet, monomial_deriv_coeffs,
                          monomial_kth_derivative, binomial_derivative, picard_flow)
from .variational import (IntegratorConfig, Trajectory, finite_difference_jet, integrate_flow,
                          integrate_prolongation)
from .estimates import check_trajectory, derive_constants, envelope_for, envelopes_for
from .stability import CompactBox, decay_rate_fit, gas_certify, weak_norm
from .lie import invert_bracket, homotopy_residual, lie_bracket, pushforward
