"""Pushforward along flows, Lie brackets, the finite-time homotopy identity and bracket inversion.

Bracket convention: ``[X, Y](x) = DY(x) X(x) - DX(x) Y(x)``.  The sign ``sigma``
relating ``d/ds (phi_s)_* Z`` to ``[X, Z]`` is measured, not assumed: see
:func:`resolve_sign`.  All identities downstream carry ``sigma`` explicitly.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad_vec

from .closed_form import closed_form_diagonal, closed_form_flow
from .errors import (ConvergenceError, DivergenceError, DomainError, IntegrationError,
                     UsageError, ValidationError)
from .fields import FieldSpec, eval_field, field_jets
from .stability import decay_rate_fit
from .variational import IntegratorConfig, integrate_prolongation

FD_STEP = 1e-4
SIGN_STEP = 1e-3
SIGN_TOL = 1e-5


@dataclass(frozen=True)
class MonomialField:
    """``Z_i(x) = coeffs_i * x_i**powers_i`` (a right-hand side outside the catalog)."""

    coeffs: tuple
    powers: tuple

    def __post_init__(self):
        if len(self.coeffs) != len(self.powers):
            raise ValidationError("coeffs and powers differ in length")
        if any(int(p) != p or p < 0 for p in self.powers):
            raise ValidationError("powers must be nonnegative integers")

    @property
    def n(self):
        return len(self.coeffs)

    def __call__(self, X):
        X = np.asarray(X, dtype=float)
        return np.asarray(self.coeffs) * X ** np.asarray(self.powers)

    def jacobian(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        c = np.asarray(self.coeffs, dtype=float)
        p = np.asarray(self.powers)
        d = np.where(p > 0, c * p * X ** np.maximum(p - 1, 0), 0.0)
        J = np.zeros(X.shape + (X.shape[1],))
        idx = np.arange(X.shape[1])
        J[:, idx, idx] = d
        return J


@dataclass(frozen=True)
class FieldPair:
    X: FieldSpec
    Z: object

    def __post_init__(self):
        if _dim(self.Z) not in (None, self.X.n):
            raise ValidationError("X and Z have different dimensions")


def _dim(F):
    return getattr(F, "n", None)


def field_values(F, X):
    """Values of a catalog field, a :class:`MonomialField` or a vectorised callable at rows of ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if isinstance(F, FieldSpec):
        return eval_field(F, X)
    return np.asarray(F(X), dtype=float).reshape(X.shape)


def field_jacobian(F, X, h=1e-6):
    """Jacobians ``(N, n, n)``; central differences for plain callables."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if isinstance(F, FieldSpec):
        return field_jets(F, X, 1)[1]
    if hasattr(F, "jacobian"):
        return F.jacobian(X)
    N, n = X.shape
    J = np.empty((N, n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        J[:, :, j] = (field_values(F, X + e) - field_values(F, X - e)) / (2 * h)
    return J


def lie_bracket(X, Y, x):
    """``DY(x) X(x) - DX(x) Y(x)`` at a point or an ``(N, n)`` batch."""
    x = np.asarray(x, dtype=float)
    P = np.atleast_2d(x)
    out = (np.einsum("Nij,Nj->Ni", field_jacobian(Y, P), field_values(X, P))
           - np.einsum("Nij,Nj->Ni", field_jacobian(X, P), field_values(Y, P)))
    return out[0] if x.ndim == 1 else out


# ---------------------------------------------------------------------------
# pushforward


def _backward(X, P, t, cfg):
    """``(phi_{-t}(P), D phi_t at phi_{-t}(P))`` for the rows of ``P``."""
    if t == 0:
        return P.copy(), np.broadcast_to(np.eye(P.shape[1]), P.shape + (P.shape[1],)).copy()
    if X.is_zero_perturbation:
        Q = closed_form_flow(X, P, -t)
        d = closed_form_diagonal(X, Q, t, 1)
        J = np.zeros(P.shape + (P.shape[1],))
        idx = np.arange(P.shape[1])
        J[:, idx, idx] = d
        return Q, J
    try:
        tr = integrate_prolongation(X, P, 1, -t, cfg, t_eval=[0.0, -t])
    except IntegrationError as exc:
        raise DomainError(f"backward flow of X blows up before time {-t:.6g}: {exc}") from exc
    Q = tr.values[-1]
    Jinv = tr.tensors[0][-1]
    return Q, np.linalg.inv(Jinv)


def pushforward(X, Z, t, x, cfg=None):
    """``(phi_t)_* Z (x) = D phi_t(phi_{-t} x) Z(phi_{-t} x)`` for the flow ``phi`` of ``X``."""
    cfg = cfg or IntegratorConfig()
    x = np.asarray(x, dtype=float)
    P = np.atleast_2d(x)
    if P.shape[1] != X.n:
        raise ValidationError(f"point has dimension {P.shape[1]}, X has n={X.n}")
    Q, J = _backward(X, P, float(t), cfg)
    if not np.all(np.isfinite(Q)):
        raise DomainError("backward flow left the domain")
    out = np.einsum("Nij,Nj->Ni", J, field_values(Z, Q))
    return out[0] if x.ndim == 1 else out


# ---------------------------------------------------------------------------
# sign resolution

_SIGMA = None


@dataclass
class SignReport:
    sigma: int
    residual_plus: float
    residual_minus: float
    n_points: int


def desk_pair():
    """``X = x d/dx``, ``Z = x^2 d/dx`` on the line."""
    from .fields import build_field
    X = build_field({"family": "X1", "n": 1, "alpha": [1.0]}, certify=False)
    return X, MonomialField((1.0,), (2,))


def flow_pushforward_sign(X=None, Z=None, n_points=20, seed=0, box=1.0, cfg=None):
    """Measure ``sigma`` with ``d/ds (phi_s)_* Z |_{s=0} = sigma [X, Z]`` at random points."""
    if X is None:
        X, Z = desk_pair()
    rng = np.random.Generator(np.random.Philox(seed))
    P = rng.uniform(-box, box, size=(n_points, X.n))
    h = SIGN_STEP
    d = (pushforward(X, Z, h, P, cfg) - pushforward(X, Z, -h, P, cfg)) / (2 * h)
    br = lie_bracket(X, Z, P)
    rp = float(np.max(np.abs(d - br)))
    rm = float(np.max(np.abs(d + br)))
    if min(rp, rm) > SIGN_TOL * max(1.0, float(np.max(np.abs(br)))):
        raise ConvergenceError("neither sign reproduces the flow derivative of the pushforward",
                               residuals=[rp, rm])
    if abs(rp - rm) <= SIGN_TOL:
        raise UsageError("pair does not discriminate the sign (bracket vanishes on the sample)")
    return SignReport(1 if rp < rm else -1, rp, rm, n_points)


def resolve_sign(force=False, **kw):
    """Pinned ``sigma``; computed once from the flow-pushforward consistency check."""
    global _SIGMA
    if _SIGMA is None or force:
        _SIGMA = flow_pushforward_sign(**kw).sigma
    return _SIGMA


def pinned_sign():
    return _SIGMA


def _pin(sigma):
    global _SIGMA
    _SIGMA = sigma


# ---------------------------------------------------------------------------
# homotopy and inversion


def _stencil(P, h):
    """Rows ``P``, then ``P + h e_j`` and ``P - h e_j`` for each axis ``j``."""
    N, n = P.shape
    blocks = [P]
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        blocks += [P + e, P - e]
    return np.concatenate(blocks)


def _stencil_jacobian(V, N, n, h):
    J = np.empty((N, n, n))
    for j in range(n):
        plus = V[N * (1 + 2 * j):N * (2 + 2 * j)]
        minus = V[N * (2 + 2 * j):N * (3 + 2 * j)]
        J[:, :, j] = (plus - minus) / (2 * h)
    return J


def _integral(X, Z, P, t, quad_tol, cfg):
    """``int_0^t (phi_s)_* Z ds`` at the rows of ``P`` by adaptive vector quadrature."""
    if t == 0:
        return np.zeros_like(P), 0.0
    N, n = P.shape

    def g(s):
        return pushforward(X, Z, s, P, cfg).ravel()

    val, err = quad_vec(g, 0.0, float(t), epsabs=quad_tol * 1e-4, epsrel=1e-13, norm="max",
                        limit=2000)
    return val.reshape(N, n), float(err)


def _bracket_from_table(X, Y_stencil, P, h):
    N, n = P.shape
    DY = _stencil_jacobian(Y_stencil, N, n, h)
    Y = Y_stencil[:N]
    return (np.einsum("Nij,Nj->Ni", DY, field_values(X, P))
            - np.einsum("Nij,Nj->Ni", field_jacobian(X, P), Y))


def homotopy_residual(X, Z, t, x, quad_tol=1e-8, cfg=None, h=FD_STEP):
    """``|[X, Y_t](x) - sigma (Z(x) - (phi_t)_* Z(x))|`` with ``Y_t = -int_0^t (phi_s)_* Z ds``.

    With no pinned sign the smaller residual over ``sigma = +-1`` is returned
    and pins ``sigma`` when the two candidates are clearly separated.
    """
    x = np.asarray(x, dtype=float)
    P = np.atleast_2d(x)
    S = _stencil(P, h)
    I, _ = _integral(X, Z, S, t, quad_tol, cfg)
    lhs = _bracket_from_table(X, -I, P, h)
    rhs = field_values(Z, P) - pushforward(X, Z, t, P, cfg)
    if _SIGMA is not None:
        res = np.linalg.norm(lhs - _SIGMA * rhs, axis=1)
    else:
        rp = np.linalg.norm(lhs - rhs, axis=1)
        rm = np.linalg.norm(lhs + rhs, axis=1)
        lo, hi = min(rp.max(), rm.max()), max(rp.max(), rm.max())
        if hi > 10 * lo + 10 * quad_tol:
            _pin(1 if rp.max() < rm.max() else -1)
        res = rp if rp.max() <= rm.max() else rm
    return float(res[0]) if x.ndim == 1 else res


@dataclass
class InversionResult:
    samples: np.ndarray
    Y: np.ndarray
    residuals: np.ndarray
    sup_residual: float
    sigma: int
    T: float
    tail_bound: float
    decay_rate: float
    quad_error: float
    annotations: list = field(default_factory=list)

    def to_dict(self):
        return {"sup_residual": self.sup_residual, "sigma": self.sigma, "T": self.T,
                "tail_bound": self.tail_bound, "decay_rate": self.decay_rate,
                "quad_error": self.quad_error, "annotations": list(self.annotations)}


def pushforward_growth(X, Z, P, T, n_s=41, cfg=None):
    """Fitted exponential rate of ``s -> sup_P |(phi_s)_* Z|`` on ``[T/2, T]`` (positive = decay)."""
    ss = np.linspace(0.0, T, n_s)
    sup = np.array([np.max(np.linalg.norm(pushforward(X, Z, s, P, cfg), axis=1)) for s in ss])
    if np.all(sup == 0):
        return np.inf, ss, sup
    tail = ss >= T / 2
    fit = decay_rate_fit(ss[tail], np.maximum(sup[tail], 1e-300), "exponential")
    return fit.rate, ss, sup


def invert_bracket(X, Z, T=40.0, quad_tol=1e-8, samples=None, cfg=None, h=FD_STEP, sigma=None):
    """Tabulate ``Y = -sigma int_0^T (phi_s)_* Z ds`` on ``samples`` and report ``|[X, Y] - Z|``.

    Raises :class:`DivergenceError` when the pushforward grows on ``[T/2, T]``.
    """
    if samples is None:
        samples = np.linspace(-1.0, 1.0, 21)[:, None]
    P = np.atleast_2d(np.asarray(samples, dtype=float))
    if P.shape[1] != X.n:
        P = P.reshape(-1, X.n)
    if sigma is None:
        sigma = resolve_sign()
    notes = []
    rate, ss, sup = pushforward_growth(X, Z, P, T, cfg=cfg)
    if np.isfinite(rate) and rate < 0 and sup[-1] > sup[len(ss) // 2]:
        raise DivergenceError(f"pushforward grows like exp({-rate:.4g} s); the improper "
                              "integral diverges", growth_rate=float(-rate))
    if rate == np.inf:
        tail = 0.0
    elif rate > 0:
        tail = float(sup[-1] / rate)
    else:
        tail = np.inf
    if tail > quad_tol:
        notes.append(f"tail bound {tail:.3g} exceeds quad_tol {quad_tol:.3g}; increase T")
    S = _stencil(P, h)
    if rate == np.inf:
        I, err = np.zeros_like(S), 0.0
    else:
        I, err = _integral(X, Z, S, T, quad_tol, cfg)
    Yst = -sigma * I
    br = _bracket_from_table(X, Yst, P, h)
    res = np.linalg.norm(br - field_values(Z, P), axis=1)
    return InversionResult(P, Yst[:len(P)], res, float(res.max()), sigma, float(T), tail,
                           float(rate), err, notes)


__all__ = [
    "MonomialField", "FieldPair", "field_values", "field_jacobian", "lie_bracket", "pushforward",
    "flow_pushforward_sign", "resolve_sign", "pinned_sign", "homotopy_residual",
    "invert_bracket", "pushforward_growth", "InversionResult", "SignReport", "desk_pair",
]
