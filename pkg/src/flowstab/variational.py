"""Flows, prolongations (variational systems of every order) and finite-difference jets.

The order-``k`` derivative ``T_k = D^k psi_t(x)`` of a flow obeys

    d/dt T_1 = DY(psi) T_1
    d/dt T_k = DY(psi) T_k + G_k,

where ``G_k`` collects the higher field derivatives composed with lower flow
derivatives (Faa di Bruno).  :func:`integrate_prolongation` advances the base
point and ``T_1 .. T_k`` as one ODE system.
"""
from dataclasses import dataclass, field
from itertools import permutations, product
from math import factorial

import numpy as np

from . import _kernels as K
from .errors import CapabilityError, DomainError, IntegrationError, ValidationError
from .fields import K_MAX, field_jets


@dataclass(frozen=True)
class IntegratorConfig:
    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    h_init: float = 0.0
    h_min: float = 1e-14
    h_max: float = np.inf
    method: str = "dopri"
    fixed_h: float = 1e-3
    max_steps: int = 1_000_000

    def __post_init__(self):
        if self.method not in ("dopri", "rk4"):
            raise ValidationError(f"unknown integration method {self.method!r}")
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValidationError("tolerances must be positive")
        if not (0 < self.h_min <= self.h_max):
            raise ValidationError("step bounds must satisfy 0 < h_min <= h_max")
        if self.fixed_h <= 0:
            raise ValidationError("fixed step must be positive")


@dataclass(frozen=True)
class Jet:
    """Flow value and derivative tensors of orders ``1..k`` at one time."""

    value: np.ndarray
    tensors: tuple = ()

    @property
    def order(self):
        return len(self.tensors)


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    values: np.ndarray
    tensors: tuple = ()
    x0: np.ndarray = None
    meta: dict = field(default_factory=dict)

    @property
    def order(self):
        return len(self.tensors)

    def jet(self, i):
        return Jet(self.values[i], tuple(T[i] for T in self.tensors))

    @property
    def states(self):
        return [self.jet(i) for i in range(len(self.times))]

    @property
    def final(self):
        return self.jet(len(self.times) - 1)


_STATUS = {
    K.STEP_UNDERFLOW: "step size underflow",
    K.MAX_STEPS: "step budget exhausted",
    K.NON_FINITE: "non-finite state (blowup)",
}


def _time_grid(t_span, t_eval):
    if np.ndim(t_span) == 0:
        t0, t1 = 0.0, float(t_span)
    else:
        t0, t1 = (float(v) for v in t_span)
    if t0 != 0.0:
        raise ValidationError("trajectories start at t = 0")
    if t_eval is None:
        t_eval = np.linspace(0.0, t1, 101)
    t_eval = np.asarray(t_eval, dtype=float)
    d = np.diff(t_eval) * (1.0 if t1 >= 0 else -1.0)
    if np.any(d <= 0):
        raise ValidationError("evaluation times must be strictly monotone away from 0")
    return t_eval


def _check_status(status, t_reached):
    if status != K.OK:
        raise IntegrationError(f"integration failed: {_STATUS[status]} at t={t_reached:.6g}",
                               last_time=float(t_reached))


def _run(rhs_or_none, Y0, t_eval, cfg, P=None, use_numba=None):
    """Drive either the compiled catalog integrator or a Python right-hand side."""
    if rhs_or_none is None:
        out, t, steps, rej, status = K.integrate_catalog(
            Y0, t_eval, P, cfg.rel_tol, cfg.abs_tol,
            cfg.fixed_h if cfg.method == "rk4" else cfg.h_init,
            cfg.h_min, cfg.h_max, cfg.max_steps, method=cfg.method, use_numba=use_numba)
    elif cfg.method == "rk4":
        out, t, steps, rej, status = K.make_rk4(rhs_or_none)(Y0, t_eval, None, cfg.fixed_h)
    else:
        out, t, steps, rej, status = K.make_dopri(rhs_or_none)(
            Y0, t_eval, None, cfg.rel_tol, cfg.abs_tol, cfg.h_init, cfg.h_min, cfg.h_max,
            cfg.max_steps)
    _check_status(status, t)
    meta = {"steps": int(steps), "rejected": int(rej), "rel_tol": cfg.rel_tol,
            "abs_tol": cfg.abs_tol, "method": cfg.method}
    return out, meta


def integrate_flow(f, x0, t_span, cfg=None, t_eval=None, use_numba=None):
    """Trajectory of ``y' = f(y)`` from ``x0`` sampled at ``t_eval``.

    ``x0`` may be one point or an ``(N, n)`` batch; a batch is advanced with
    a shared step sequence and the trajectory values get shape ``(T, N, n)``.
    Negative end times integrate backwards.
    """
    cfg = cfg or IntegratorConfig()
    x0 = np.asarray(x0, dtype=float)
    if x0.shape[-1] != f.n:
        raise ValidationError(f"initial point has dimension {x0.shape[-1]}, field has n={f.n}")
    t_eval = _time_grid(t_span, t_eval)
    out, meta = _run(None, np.atleast_2d(x0), t_eval, cfg, P=f.params, use_numba=use_numba)
    values = out[:, 0, :] if x0.ndim == 1 else out
    return Trajectory(t_eval, values, (), x0, meta)


# ---------------------------------------------------------------------------
# prolongation


def compositions(k, l):
    """Ordered compositions of ``k`` into ``l`` positive parts."""
    if l == 1:
        yield (k,)
        return
    for first in range(1, k - l + 2):
        for rest in compositions(k - first, l - 1):
            yield (first,) + rest


def composition_weight(parts):
    """Weight making the ordered-composition sum agree with Faa di Bruno after symmetrization.

    Each set partition of ``k`` indices with block sizes ``parts`` contributes
    once; there are ``k! / prod(i_j!)`` ordered partitions per composition and
    each unordered one is counted ``l!`` times.
    """
    k = sum(parts)
    den = factorial(len(parts))
    for i in parts:
        den *= factorial(i)
    return factorial(k) / den


def _contract(D, Ts, n):
    """``D[T_1, ..., T_l]`` for batched tensors; lower indices appended in order."""
    N = D.shape[0]
    R = D.reshape(N, n, -1)
    for T in Ts:
        R = R.reshape(N, n, n, -1)
        R = np.swapaxes(R, 2, 3) @ T.reshape(N, 1, n, -1)
    return R.reshape(N, n, -1)


def _sym_batched(T):
    l = T.ndim - 2
    if l <= 1:
        return T
    acc = np.zeros_like(T)
    for perm in permutations(range(2, l + 2)):
        acc += np.transpose(T, (0, 1) + perm)
    return acc / factorial(l)


def _source(jets, flow, k, n):
    """Batched source term ``G_k``; ``flow[i]`` is ``T_{i+1}``."""
    N = jets[0].shape[0]
    G = np.zeros((N, n, n ** k))
    for l in range(2, k + 1):
        for parts in compositions(k, l):
            G += composition_weight(parts) * _contract(jets[l], [flow[i - 1] for i in parts], n)
    return _sym_batched(G.reshape((N, n) + (n,) * k))


def chain_source_term(field_jets_at_y, flow_jets, k):
    """Source tensor ``G_k`` of the order-``k`` variational equation at one point.

    ``field_jets_at_y[l]`` is ``D^l Y(y)`` (entries below order 2 are ignored)
    and ``flow_jets[i - 1]`` is ``D^i psi`` for ``i = 1 .. k - 1``.
    """
    n = np.asarray(field_jets_at_y[1]).shape[0] if len(field_jets_at_y) > 1 \
        else np.asarray(flow_jets[0]).shape[0]
    if k < 2:
        return np.zeros((n,) + (n,) * k)
    jets = [np.asarray(j)[None] for j in field_jets_at_y]
    flow = [np.asarray(t)[None] for t in flow_jets]
    return _source(jets, flow, k, n)[0]


def _layout(n, k):
    sizes = [n] + [n ** (l + 1) for l in range(1, k + 1)]
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    return sizes, offsets


def integrate_prolongation(f, x0, k, t_span, cfg=None, t_eval=None):
    """Jointly integrate the flow and its derivative tensors up to order ``k``.

    ``x0`` may be a single point or an ``(N, n)`` batch sharing one step
    sequence; batched results carry an extra axis after the time axis.
    """
    if k > K_MAX:
        raise CapabilityError(f"prolongation order {k} exceeds K_max={K_MAX}")
    if k < 1:
        raise ValidationError("prolongation order must be >= 1")
    cfg = cfg or IntegratorConfig()
    x0 = np.asarray(x0, dtype=float)
    n = f.n
    if x0.shape[-1] != n or x0.ndim > 2:
        raise ValidationError(f"initial point must have shape ({n},) or (N, {n})")
    X0 = np.atleast_2d(x0)
    N = X0.shape[0]
    t_eval = _time_grid(t_span, t_eval)
    sizes, off = _layout(n, k)

    def rhs(S, P, out):
        M = S.shape[0]
        y = S[:, :n]
        jets = field_jets(f, y, k)
        out[:, :n] = jets[0]
        flow = [S[:, off[l]:off[l + 1]].reshape((M, n) + (n,) * l) for l in range(1, k + 1)]
        DY = jets[1]
        for l in range(1, k + 1):
            d = np.einsum("Noj,Njr->Nor", DY, flow[l - 1].reshape(M, n, -1))
            if l >= 2:
                d = d + _source(jets, flow, l, n).reshape(M, n, -1)
            out[:, off[l]:off[l + 1]] = d.reshape(M, -1)

    S0 = np.zeros((N, off[-1]))
    S0[:, :n] = X0
    S0[:, off[1]:off[2]] = np.eye(n).ravel()
    out, meta = _run(rhs, S0, t_eval, cfg)
    T = len(t_eval)
    values = out[:, :, :n]
    tensors = tuple(out[:, :, off[l]:off[l + 1]].reshape((T, N, n) + (n,) * l)
                    for l in range(1, k + 1))
    if x0.ndim == 1:
        values = values[:, 0]
        tensors = tuple(Tl[:, 0] for Tl in tensors)
    return Trajectory(t_eval, values, tensors, x0, meta)


# ---------------------------------------------------------------------------
# finite-difference oracle

# central second-order stencils: offset multiples of h -> weight (before dividing by h**p)
_STENCILS = {
    0: {0: 1.0},
    1: {-1: -0.5, 1: 0.5},
    2: {-1: 1.0, 0: -2.0, 1: 1.0},
    3: {-2: -0.5, -1: 1.0, 1: -1.0, 2: 0.5},
    4: {-2: 1.0, -1: -4.0, 0: 6.0, 1: -4.0, 2: 1.0},
}

FD_STEP_FIRST = 1e-5
FD_STEP_HIGHER = 1e-2


def _multi_indices(n, l):
    return list(product(range(n), repeat=l))


def _stencil(counts, h):
    """Tensor-product stencil for the mixed partial with per-axis orders ``counts``."""
    axes = [list(_STENCILS[c].items()) for c in counts]
    scale = h ** sum(counts)
    for combo in product(*axes):
        offset = tuple(o for o, _ in combo)
        w = np.prod([wt for _, wt in combo]) / scale
        yield offset, w


def finite_difference_jet(f, x0, t, k, h=None, cfg=None, use_numba=None):
    """Central-difference derivative tensors of the time-``t`` flow map.

    Every mixed partial uses a tensor product of 1-D central stencils and is
    Richardson-extrapolated from steps ``h`` and ``h/2``.  All stencil points
    are integrated as one stacked system, so they share a step sequence.
    """
    if k > K_MAX:
        raise CapabilityError(f"finite-difference order {k} exceeds K_max={K_MAX}")
    cfg = cfg or IntegratorConfig()
    x0 = np.asarray(x0, dtype=float)
    n = f.n
    steps = {l: (h if h is not None else (FD_STEP_FIRST if l == 1 else FD_STEP_HIGHER))
             for l in range(1, k + 1)}
    points = {}
    plans = []
    for l in range(1, k + 1):
        for idx in _multi_indices(n, l):
            if tuple(sorted(idx)) != idx:
                continue
            counts = [idx.count(i) for i in range(n)]
            for hh in (steps[l], steps[l] / 2):
                terms = []
                for offset, w in _stencil(counts, hh):
                    pt = tuple(x0 + hh * np.asarray(offset, dtype=float))
                    points.setdefault(pt, len(points))
                    terms.append((points[pt], w))
                plans.append((l, idx, hh, terms))
    points.setdefault(tuple(x0), len(points))
    X = np.array(list(points.keys()))
    t_eval = np.array([float(t)]) if t != 0 else np.array([0.0])
    try:
        out, _ = _run(None, X, t_eval, cfg, P=f.params, use_numba=use_numba)
    except IntegrationError as exc:
        raise DomainError(f"a stencil point left the flow domain before t={t}: {exc}") from exc
    final = out[-1]
    if not np.all(np.isfinite(final)):
        raise DomainError("a stencil point blew up before the requested time")
    raw = {}
    for l, idx, hh, terms in plans:
        raw[(idx, hh)] = sum(w * final[p] for p, w in terms)
    tensors = []
    for l in range(1, k + 1):
        T = np.zeros((n,) + (n,) * l)
        hh = steps[l]
        for idx in _multi_indices(n, l):
            key = tuple(sorted(idx))
            T[(slice(None),) + idx] = (4.0 * raw[(key, hh / 2)] - raw[(key, hh)]) / 3.0
        tensors.append(T)
    return Jet(final[points[tuple(x0)]], tuple(tensors))
