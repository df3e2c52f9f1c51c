"""Weak C^r norms over compact sets, GAS-of-order-r certification and decay-rate fits."""
from dataclasses import dataclass, field

import numpy as np

from .errors import IntegrationError, UsageError, ValidationError
from .fields import K_MAX
from .tensors import batch_tensor_norm
from .variational import IntegratorConfig, integrate_prolongation


@dataclass(frozen=True)
class CompactBox:
    """Euclidean ball ``B(center, radius)`` sampled on a tensor-product grid.

    Grid nodes that fall outside the ball are projected radially onto its
    boundary, so the sphere is represented and every point of the ball lies
    within ``spacing * sqrt(n) / 2`` of a sample.
    """

    center: tuple
    radius: float
    grid_per_axis: int = 21

    def __post_init__(self):
        if not self.radius > 0:
            raise ValidationError("radius must be positive")
        if self.grid_per_axis < 3:
            raise ValidationError("grid_per_axis must be >= 3")
        object.__setattr__(self, "center", tuple(float(v) for v in np.atleast_1d(self.center)))

    @classmethod
    def ball(cls, n, radius, grid_per_axis=21):
        return cls((0.0,) * n, radius, grid_per_axis)

    @property
    def n(self):
        return len(self.center)

    @property
    def spacing(self):
        return 2.0 * self.radius / (self.grid_per_axis - 1)

    @property
    def covering_radius(self):
        return 0.5 * self.spacing * np.sqrt(self.n)

    def points(self):
        c = np.asarray(self.center)
        ax = np.linspace(-self.radius, self.radius, self.grid_per_axis)
        G = np.stack(np.meshgrid(*([ax] * self.n), indexing="ij"), axis=-1).reshape(-1, self.n)
        r = np.linalg.norm(G, axis=1)
        out = r > self.radius
        G[out] *= (self.radius / r[out])[:, None]
        G = np.unique(np.round(G, 14), axis=0)
        return G + c


def _jet_arrays(samples, r):
    """Stack an iterable of Jets into ``(values, [tensors...])``."""
    samples = list(samples)
    if not samples:
        raise UsageError("no samples")
    for s in samples:
        if len(s.tensors) < r:
            raise UsageError(f"sample carries derivatives up to order {len(s.tensors)}, need {r}")
    vals = np.array([np.asarray(s.value, dtype=float) for s in samples])
    tens = [np.array([s.tensors[l] for s in samples]) for l in range(r)]
    return vals, tens


def weak_norm(samples, r):
    """``sup_K max_{l <= r} |D^l f|`` approximated by the maximum over sample jets."""
    vals, tens = _jet_arrays(samples, r)
    return _weak_norm_arrays(vals, tens, r)


def _weak_norm_arrays(vals, tens, r, axis=None):
    """Order-wise maxima; ``vals`` is ``(..., N, n)`` with samples on axis -2."""
    per = [batch_tensor_norm(vals, 0).max(axis=-1)]
    for l in range(1, r + 1):
        T = tens[l - 1]
        per.append(batch_tensor_norm(T, l).max(axis=-1))
    per = np.array(per)
    if axis is None:
        return float(per.max())
    return per.max(axis=0)


@dataclass
class RateFit:
    model: str
    rate: float
    intercept: float
    goodness: float
    t_range: tuple = ()


def decay_rate_fit(t, values, model="exponential", t0=None):
    """Least-squares decay rate (positive for decay).

    ``exponential`` fits ``log v = c - rate t``, ``power`` fits
    ``log v = c - rate log t``.  ``goodness`` is the coefficient of
    determination on the log scale.
    """
    t = np.asarray(t, dtype=float)
    v = np.asarray(values, dtype=float)
    if t0 is not None:
        keep = t >= t0
        t, v = t[keep], v[keep]
    if model not in ("exponential", "power"):
        raise UsageError(f"unknown decay model {model!r}")
    if len(t) < 10:
        raise UsageError(f"need at least 10 samples, got {len(t)}")
    if np.any(v <= 0) or not np.all(np.isfinite(v)):
        raise UsageError("decay fit needs positive finite values")
    if model == "power" and np.any(t <= 0):
        raise UsageError("power fit needs t > 0")
    xs = t if model == "exponential" else np.log(t)
    ys = np.log(v)
    A = np.column_stack([np.ones_like(xs), xs])
    coef, *_ = np.linalg.lstsq(A, ys, rcond=None)
    resid = ys - A @ coef
    ss_tot = float(np.sum((ys - ys.mean()) ** 2))
    goodness = 1.0 if ss_tot == 0 else 1.0 - float(np.sum(resid ** 2)) / ss_tot
    return RateFit(model, float(-coef[1]), float(coef[0]), goodness, (float(t[0]), float(t[-1])))


@dataclass
class StabilityReport:
    field_id: str
    r: int
    times: np.ndarray
    norms: np.ndarray
    norms_upper: np.ndarray
    order_norms: np.ndarray
    epsilon_table: list
    envelope_a: tuple = ()
    envelope_b: np.ndarray = None
    fitted_rates: dict = field(default_factory=dict)
    verdict: str = "undetermined"
    annotations: list = field(default_factory=list)
    witness: dict = field(default_factory=dict)

    def T_K(self, eps):
        for e, T in self.epsilon_table:
            if e == eps:
                return T
        return first_time_below(self.times, self.norms, eps)

    def norm_at(self, t, upper=False):
        i = int(np.argmin(np.abs(self.times - t)))
        if not np.isclose(self.times[i], t, rtol=1e-12, atol=1e-12):
            raise UsageError(f"time {t} is not on the certification grid")
        return float((self.norms_upper if upper else self.norms)[i])

    def to_dict(self):
        return {
            "field_id": self.field_id,
            "r": self.r,
            "verdict": self.verdict,
            "epsilon_table": [[float(e), (None if T is None else float(T))]
                              for e, T in self.epsilon_table],
            "fitted_rates": {k: vars(v) for k, v in self.fitted_rates.items()},
            "final_norm": float(self.norms[-1]),
            "witness": self.witness,
            "annotations": list(self.annotations),
        }


def first_time_below(times, norms, eps):
    """First grid time after which every later norm is ``<= eps`` (``None`` if never)."""
    above = np.nonzero(np.asarray(norms) > eps)[0]
    if len(above) == 0:
        return float(times[0])
    i = above[-1] + 1
    return None if i >= len(times) else float(times[i])


def certification_times(t_max, n=200, t_first=1e-2, extra=()):
    """``0`` plus a geometric grid from ``t_first`` to ``t_max`` plus required times."""
    ts = np.concatenate([[0.0], np.geomspace(t_first, t_max, n), np.asarray(extra, dtype=float)])
    return np.unique(ts[ts <= t_max])


def _monotone_envelope(x0, tvals, norms0):
    """Separable majorant ``a(|x|) b(t)`` of ``|psi_t(x)|`` with ``a`` nondecreasing, ``b`` nonincreasing."""
    worst = norms0.max(axis=1)
    b = np.maximum.accumulate(worst[::-1])[::-1]
    b0 = b[0] if b[0] > 0 else 1.0
    b = b / b0
    radii = np.linalg.norm(x0, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(b[:, None] > 0, norms0 / b[:, None], 0.0)
    peak = ratio.max(axis=0)
    order = np.argsort(radii)
    rs = radii[order]
    a = np.maximum.accumulate(peak[order])
    rs_u, idx = np.unique(rs, return_index=True)
    a_u = np.maximum.reduceat(a, idx)
    if rs_u[0] > 0:
        rs_u = np.concatenate([[0.0], rs_u])
        a_u = np.concatenate([[0.0], a_u])
    return (rs_u, a_u), b


def gas_certify(f, K, r, t_max, eps_list=(), cfg=None, n_times=200, extra_times=(),
                field_id="field"):
    """Empirical GAS-of-order-``r`` certificate of the origin on ``K``.

    ``norms`` holds the grid maximum of ``max_{l<=r} |D^l psi_t|`` and drives
    the ``T_K(eps)`` table.  ``norms_upper`` adds a covering term
    ``covering_radius * max |D^{r+1} psi_t|`` bounding the true supremum over
    the ball when order ``r+1`` is available.
    """
    if K.n != f.n:
        raise UsageError(f"box dimension {K.n} does not match field dimension {f.n}")
    if not 0 <= r <= K_MAX:
        raise UsageError(f"order r must lie in 0..{K_MAX}")
    cfg = cfg or IntegratorConfig()
    X0 = K.points()
    ts = certification_times(t_max, n_times, extra=extra_times)
    k = min(r + 1, K_MAX)
    notes = []
    try:
        traj = integrate_prolongation(f, X0, k, t_max, cfg, t_eval=ts) if k > 0 else None
    except IntegrationError as exc:
        lt = exc.last_time if exc.last_time is not None else 0.0
        notes.append(f"integration failed at t = {lt:.6g}: {exc}; report truncated")
        ts = ts[ts < lt]
        if len(ts) < 2:
            raise
        traj = integrate_prolongation(f, X0, k, ts[-1], cfg, t_eval=ts)
    vals = np.asarray(traj.values)
    tens = [np.asarray(T) for T in traj.tensors]
    if vals.ndim == 2:
        vals = vals[:, None]
        tens = [T[:, None] for T in tens]
    order_norms = np.array([batch_tensor_norm(vals, 0).max(axis=1)]
                           + [batch_tensor_norm(tens[l - 1], l).max(axis=1)
                              for l in range(1, r + 1)])
    norms = order_norms.max(axis=0)
    per_point = [batch_tensor_norm(vals[-1], 0)] + [batch_tensor_norm(tens[l - 1][-1], l)
                                                    for l in range(1, r + 1)]
    lw = int(np.argmax([p.max() for p in per_point]))
    iw = int(np.argmax(per_point[lw]))
    witness = {"x": [float(v) for v in X0[iw]], "order": lw, "t": float(ts[-1]),
               "value": float(per_point[lw][iw])}
    if k > r:
        lip = batch_tensor_norm(tens[r], r + 1).max(axis=1)
        norms_upper = norms + K.covering_radius * lip
    else:
        norms_upper = norms.copy()
        notes.append(f"no covering term: order {r + 1} exceeds K_MAX")
    table = [(float(e), first_time_below(ts, norms, e)) for e in sorted(eps_list)]
    env = _monotone_envelope(X0, ts, batch_tensor_norm(vals, 0))
    fits = {}
    late = ts >= max(1.0, ts[1])
    for model in ("exponential", "power"):
        try:
            fits[model] = decay_rate_fit(ts[late], norms[late], model)
        except UsageError:
            pass
    if not notes and table and all(T is not None for _, T in table):
        verdict = f"GAS of order {r}"
    elif table and any(T is None for _, T in table):
        verdict = "not certified within horizon"
    else:
        verdict = "undetermined"
    return StabilityReport(field_id, r, ts, norms, norms_upper, order_norms, table,
                           env[0], env[1], fits, verdict, notes, witness)
