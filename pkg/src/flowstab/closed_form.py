"""Closed-form flows of the unperturbed families and their derivatives.

All formulas are componentwise: every axis ``i`` evolves under the scalar
equation ``x' = alpha x + beta x**(1+m)``.  Parameters may therefore be
scalars or arrays broadcasting against ``x``.

* linear (``beta = 0``):     ``x exp(alpha t)``
* monomial (``alpha = 0``):  ``x (1 - m beta t x**m)**(-1/m)``
* Bernoulli:                 ``x exp(alpha t) (1 + (beta/alpha) x**m (1 - exp(alpha m t)))**(-1/m)``

The perturbed families with a componentwise perturbation admit an implicit
integral form of the same shape; :func:`picard_flow` solves it by fixed-point
iteration on a time grid.
"""
from dataclasses import dataclass, field
from math import ceil

import numpy as np
from scipy.integrate import cumulative_simpson

from .errors import CapabilityError, CertificationError, ConvergenceError, DomainError, \
    UsageError, ValidationError
from .fields import Family, eval_field, perturbation_value_jets

# below this value of |m beta t x**m| derivatives are summed as a binomial series
SERIES_RADIUS = 0.25


@dataclass(frozen=True)
class ScalarFlowParams:
    """Per-axis coefficients; each field may be a scalar or an ``n``-vector."""

    alpha: object = 0.0
    beta: object = 0.0
    m: object = 2

    def __post_init__(self):
        m = np.asarray(self.m)
        if np.any(m <= 0) or np.any(m % 2) or np.any(m != np.round(m)):
            raise ValidationError(f"m must be positive even integers, got {self.m}")

    @classmethod
    def from_profile(cls, profile):
        return cls(np.asarray(profile.alpha), np.asarray(profile.beta), np.asarray(profile.m))

    def arrays(self, x):
        x = np.asarray(x, dtype=float)
        a, b, m = np.broadcast_arrays(np.asarray(self.alpha, dtype=float),
                                      np.asarray(self.beta, dtype=float),
                                      np.asarray(self.m), x)[:3]
        return x, a, b, m.astype(np.int64)


@dataclass(frozen=True)
class DerivCoeffTable:
    k: int
    m: int
    coeffs: tuple

    def __getitem__(self, j):
        """Coefficient ``a_j`` for ``1 <= j <= k``."""
        return self.coeffs[j - 1]


def _finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise DomainError("non-finite input")


def linear_flow(alpha, x, t):
    x = np.asarray(x, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    _finite(x, alpha, t)
    return x * np.exp(alpha * t)


def _raise_radicand(w, what):
    bad = np.argwhere(np.atleast_1d(w) <= 0)
    if bad.size:
        axis = int(bad[0][-1])
        raise DomainError(f"{what}: radicand {np.atleast_1d(w).ravel()[axis]:.6g} <= 0 on axis {axis}"
                          " (flow blows up)", axis=axis)


def monomial_flow(p, x, t):
    x, _, beta, m = p.arrays(x)
    _finite(x, beta, t)
    w = 1.0 - m * beta * t * x ** m
    _raise_radicand(w, "monomial flow")
    return x * w ** (-1.0 / m)


def bernoulli_flow(p, x, t):
    x, alpha, beta, m = p.arrays(x)
    _finite(x, alpha, beta, t)
    if np.any(alpha == 0):
        raise UsageError("alpha = 0 has no Bernoulli form; use monomial_flow")
    w = 1.0 + (beta / alpha) * x ** m * (1.0 - np.exp(alpha * m * t))
    _raise_radicand(w, "Bernoulli flow")
    return x * np.exp(alpha * t) * w ** (-1.0 / m)


def monomial_deriv_coeffs(k, m):
    """Integer coefficients ``a_j`` of the ``k``-th derivative of the monomial flow.

    ``d^k/dx^k x w**(-1/m) = x**(1-k) w**(-1/m) sum_j a_j w**(-j)`` with
    ``w = 1 - m beta t x**m``.
    """
    if k < 1:
        raise ValidationError(f"derivative order must be >= 1, got {k}")
    m = int(m)
    row = [1]
    for kk in range(2, k + 1):
        new = []
        for j in range(1, kk + 1):
            v = 0
            if j <= kk - 1:
                v += row[j - 1] * (1 - kk - j * m)
            if j >= 2:
                v += row[j - 2] * (1 + (j - 1) * m)
            new.append(v)
        row = new
    return DerivCoeffTable(k, m, tuple(row))


def _falling(a, k):
    out = 1
    for j in range(k):
        out *= a - j
    return out


def _series_derivative(x, c, m, k):
    """k-th derivative of ``x (1 + c x**m)**(-1/m)`` by its binomial series.

    Used when ``|c x**m|`` is small, where the closed form cancels badly.
    """
    total = np.zeros_like(x)
    coef = np.ones_like(x)  # binom(-1/m, n) c**n
    n_min = ceil((k - 1) / m) + 3
    for n in range(60):
        if n > 0:
            coef = coef * (-1.0 / m - n + 1) / n * c
        e = 1 + m * n
        if e >= k:
            term = coef * _falling(e, k) * x ** (e - k)
            total = total + term
            if n >= n_min and np.all(np.abs(term) <= 1e-17 * np.maximum(np.abs(total), 1e-300)):
                break
    return total


def monomial_kth_derivative(p, x, t, k):
    x, _, beta, m = p.arrays(x)
    _finite(x, beta, t)
    if k < 1:
        raise ValidationError(f"derivative order must be >= 1, got {k}")
    u = -m * beta * t
    w = 1.0 + u * x ** m
    _raise_radicand(w, "monomial flow derivative")
    out = np.empty_like(x)
    small = np.abs(u * x ** m) < SERIES_RADIUS
    for mi in np.unique(m):
        sel = m == mi
        tab = monomial_deriv_coeffs(k, mi)
        s = sel & small
        if np.any(s):
            out[s] = _series_derivative(x[s], u[s], int(mi), k)
        d = sel & ~small
        if np.any(d):
            wd = w[d]
            acc = sum(a / wd ** j for j, a in enumerate(tab.coeffs, start=1))
            out[d] = x[d] ** (1 - k) * wd ** (-1.0 / mi) * acc
    return out


def binomial_derivative(p, x, t, k):
    """First or second derivative of the Bernoulli flow in ``x``."""
    if k not in (1, 2):
        raise CapabilityError(f"Bernoulli flow derivative of order {k} is not available (only 1, 2)")
    x, alpha, beta, m = p.arrays(x)
    _finite(x, alpha, beta, t)
    if np.any(alpha == 0):
        return monomial_kth_derivative(p, x, t, k)
    c = (beta / alpha) * (1.0 - np.exp(alpha * m * t))
    w = 1.0 + c * x ** m
    _raise_radicand(w, "Bernoulli flow derivative")
    e = np.exp(alpha * t)
    if k == 1:
        return e * w ** (-1.0 - 1.0 / m)
    return -(1 + m) * c * x ** (m - 1) * e * w ** (-2.0 - 1.0 / m)


# ---------------------------------------------------------------------------
# whole-field helpers


def closed_form_flow(f, x, t):
    """Flow of an unperturbed field, routing each axis to its exact formula."""
    if not f.is_zero_perturbation:
        raise UsageError("closed forms exist only for unperturbed fields")
    p = ScalarFlowParams.from_profile(f.profile)
    x, alpha, beta, m = p.arrays(x)
    out = np.empty_like(x)
    lin = beta == 0
    mono = (alpha == 0) & ~lin
    bern = ~lin & ~mono
    out[lin] = linear_flow(alpha[lin], x[lin], t)
    if np.any(mono):
        out[mono] = monomial_flow(ScalarFlowParams(0.0, beta[mono], m[mono]), x[mono], t)
    if np.any(bern):
        out[bern] = bernoulli_flow(ScalarFlowParams(alpha[bern], beta[bern], m[bern]), x[bern], t)
    return out


def closed_form_diagonal(f, x, t, k):
    """k-th derivative of each component of an unperturbed flow along its own axis."""
    if not f.is_zero_perturbation:
        raise UsageError("closed forms exist only for unperturbed fields")
    p = ScalarFlowParams.from_profile(f.profile)
    x, alpha, beta, m = p.arrays(x)
    out = np.zeros_like(x)
    lin = beta == 0
    if k == 1:
        out[lin] = np.exp(alpha[lin] * t)
    mono = (alpha == 0) & ~lin
    bern = ~lin & ~mono
    if np.any(mono):
        out[mono] = monomial_kth_derivative(ScalarFlowParams(0.0, beta[mono], m[mono]), x[mono], t, k)
    if np.any(bern):
        out[bern] = binomial_derivative(ScalarFlowParams(alpha[bern], beta[bern], m[bern]),
                                        x[bern], t, k)
    return out


def closed_form_jet(f, x, t, k):
    """Derivative tensors ``D^1 .. D^k`` of an unperturbed flow (diagonal tensors)."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    idx = np.arange(n)
    jets = []
    for l in range(1, k + 1):
        T = np.zeros((n,) + (n,) * l)
        T[(idx,) * (l + 1)] = closed_form_diagonal(f, x, t, l)
        jets.append(T)
    return jets


# ---------------------------------------------------------------------------
# implicit representation of componentwise-perturbed flows


@dataclass
class PicardReport:
    iterations: int
    residual: float
    residuals: list = field(default_factory=list)
    converged: bool = True


def picard_flow(f, x, t, tol=1e-12, max_iter=50, n_grid=2001, return_path=False):
    """Flow of a ``Y2``/``Y3`` field from its implicit integral form.

    Each axis satisfies

        psi_i(t) = x_i E_i(t) (R_i(t) - m_i x_i**m_i int_0^t psi_i**(-1-m_i) Z_i(psi) G_i(s) ds)**(-1/m_i)

    where ``E, R`` are the unperturbed Bernoulli (or monomial, when
    ``alpha_i = 0``) factors and ``G_i(s) = exp(alpha_i m_i s)``.  The
    iteration starts from the unperturbed closed form and is undamped; the
    integral uses cumulative Simpson quadrature on ``n_grid`` points.

    Returns ``(psi(t), report)``, or ``(times, path, report)`` with
    ``return_path``.
    """
    if f.family not in (Family.Y2, Family.Y3):
        raise UsageError(f"implicit representation is defined for Y2 and Y3, not {f.family.value}")
    if t < 0:
        raise DomainError("implicit representation is defined for t >= 0")
    z = f.perturbation
    if not f.is_zero_perturbation:
        cert = z.certificate
        if cert is None or not cert.classes["component_split"].satisfied:
            raise CertificationError("implicit representation needs a componentwise-certified "
                                     "perturbation", witness=None if cert is None else
                                     cert.classes["component_split"].witness)
    x = np.asarray(x, dtype=float)
    if x.shape != (f.n,):
        raise ValidationError(f"expected a point of dimension {f.n}")
    prof = f.profile
    alpha = np.asarray(prof.alpha)
    beta = np.asarray(prof.beta)
    m = np.asarray(prof.m)
    ts = np.linspace(0.0, t, n_grid)
    tt = ts[:, None]
    mono = alpha == 0
    safe_alpha = np.where(mono, 1.0, alpha)
    E = np.where(mono, 1.0, np.exp(alpha * tt))
    R = np.where(mono, 1.0 - m * beta * tt * x ** m,
                 1.0 + (beta / safe_alpha) * x ** m * (1.0 - np.exp(alpha * m * tt)))
    G = np.where(mono, 1.0, np.exp(alpha * m * tt))
    _raise_radicand(R.min(axis=0), "unperturbed flow")
    live = x != 0

    def update(path):
        radicand = R.copy()
        if not f.is_zero_perturbation:
            Z = perturbation_value_jets(z, prof, path, 0)[0]
            with np.errstate(divide="ignore", invalid="ignore"):
                integrand = np.where(live, path ** (-1.0 - m) * Z * G, 0.0)
            integral = cumulative_simpson(integrand, x=ts, axis=0, initial=0.0) if t > 0 \
                else np.zeros_like(integrand)
            radicand = radicand - m * x ** m * integral
        if np.any(radicand[:, live] <= 0):
            _raise_radicand(radicand.min(axis=0) + np.where(live, 0.0, 1.0), "implicit flow")
        return np.where(live, x * E * np.abs(radicand) ** (-1.0 / m), 0.0)

    path = np.where(live, x * E * R ** (-1.0 / m), 0.0)
    residuals = []
    for it in range(1, max_iter + 1):
        new = update(path)
        res = float(np.max(np.abs(new - path)))
        residuals.append(res)
        path = new
        if res <= tol:
            report = PicardReport(it, res, residuals, True)
            break
    else:
        raise ConvergenceError(f"implicit flow did not converge in {max_iter} iterations "
                               f"(last residual {residuals[-1]:.3g})", residuals)
    if return_path:
        return ts, path, report
    return path[-1], report


def field_residual(f, ts, path):
    """Max deviation of a sampled path from the ODE, by finite differences in time."""
    dp = np.gradient(path, ts, axis=0, edge_order=2)
    return float(np.max(np.abs(dp - eval_field(f, path))))
