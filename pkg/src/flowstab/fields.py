"""Vector-field families and the closed catalog of certified perturbations.

Every field in this package has the componentwise form

    Y_i(x) = alpha_i x_i + beta_i x_i**(1 + m_i) + Z_i(x)

where the family decides which of the three terms are present:

======  ======  ==========  ==============
family  linear  monomial    perturbation
======  ======  ==========  ==============
X1      yes     -           zero
X2      -       yes         zero
X3      yes     yes         zero
Y1      yes     -           catalog
Y2      -       yes         catalog
Y3      yes     yes         catalog
======  ======  ==========  ==============

Coefficients are stored raw.  Extremal values (``a = min alpha``,
``b = max alpha``, ``a_prime = max(-beta)``, ``b_prime = min(-beta)``) are
properties computed on demand.
"""
from dataclasses import dataclass, field, replace
from enum import Enum
from itertools import product

import numpy as np

from . import _kernels as K
from ._symbolic import perturbation_jets
from .errors import CapabilityError, CertificationError, DomainError, ValidationError
from .tensors import tensor_norm

K_MAX = 4
N_MAX = 8
SAFETY_FACTOR = 1.05


class Family(str, Enum):
    X1 = "X1"
    X2 = "X2"
    X3 = "X3"
    Y1 = "Y1"
    Y2 = "Y2"
    Y3 = "Y3"

    @property
    def has_linear(self):
        return self in (Family.X1, Family.X3, Family.Y1, Family.Y3)

    @property
    def has_monomial(self):
        return self in (Family.X2, Family.X3, Family.Y2, Family.Y3)

    @property
    def perturbed(self):
        return self.value.startswith("Y")


class PerturbationKind(str, Enum):
    """Catalog of perturbations ``Z``.

    ``gamma`` is the amplitude, ``R`` is the identity or (when coupled) the
    cyclic shift ``(Rx)_i = x_{i+1 mod n}``, and ``s = |x|**2``.

    * ``Zero``:           ``Z = 0``
    * ``Bounded``:        ``Z = gamma R x s / (1 + s)**1.5``          (``|Z| <= gamma``)
    * ``LinearGrowth``:   ``Z = gamma R x s / (1 + s)``               (``|Z| <= gamma |x|``)
    * ``PowerInBall``:    ``Z = gamma R x s**(power/2)``              (``|Z| = gamma |x|**(1+power)``)
    * ``ComponentPower``: ``Z_i = gamma x_i**(2+m_i) / sqrt(1 + s_i)`` with
      ``s_i = x_i**2``, or ``s_i = s`` when coupled.
    """

    ZERO = "Zero"
    BOUNDED = "Bounded"
    LINEAR_GROWTH = "LinearGrowth"
    POWER_IN_BALL = "PowerInBall"
    COMPONENT_POWER = "ComponentPower"

    @property
    def code(self):
        return list(PerturbationKind).index(self)


# hypothesis classes a perturbation may be certified against
CLASS_LEMMAS = {
    "global_bounded": ("lemma1", "lemma4", "prop3"),
    "norm_split": ("lemma2", "lemma5", "lemma12", "lemma13", "prop3"),
    "norm_global": ("lemma3", "lemma6"),
    "component_split": ("lemma8", "lemma9", "lemma10", "lemma11", "prop5", "prop6"),
}


@dataclass(frozen=True)
class ClassCertificate:
    name: str
    satisfied: bool
    constants: tuple = ()
    inner: tuple = ()
    outer: tuple = ()
    exponent: int = 0
    method: str = "grid-oracle"
    witness: tuple = None
    reason: str = ""


@dataclass(frozen=True)
class Certificate:
    """Certified constants per hypothesis class, orders ``0..k_max``."""

    k_max: int
    classes: dict = field(default_factory=dict)
    safety_factor: float = SAFETY_FACTOR
    radius: float = 4.0

    def constants(self, cls):
        cert = self.classes.get(cls)
        if cert is None or not cert.satisfied:
            raise CertificationError(f"perturbation not certified for class {cls!r}",
                                     witness=None if cert is None else cert.witness)
        return cert.constants

    @property
    def verdict(self):
        lemmas = set()
        for name, cert in self.classes.items():
            if cert.satisfied:
                lemmas.update(CLASS_LEMMAS[name])
        return tuple(sorted(lemmas))


@dataclass(frozen=True)
class CoefficientProfile:
    n: int
    alpha: tuple
    beta: tuple
    m: tuple

    def __post_init__(self):
        if not isinstance(self.n, (int, np.integer)) or self.n < 1:
            raise ValidationError(f"dimension must be a positive integer, got {self.n!r}")
        if self.n > N_MAX:
            raise CapabilityError(f"dimension {self.n} exceeds the supported maximum {N_MAX}")
        for name in ("alpha", "beta", "m"):
            vals = getattr(self, name)
            if len(vals) != self.n:
                raise ValidationError(f"{name} has {len(vals)} entries, expected n={self.n}")
        for i, mi in enumerate(self.m):
            if int(mi) != mi or mi <= 0 or int(mi) % 2:
                raise ValidationError(f"m[{i}]={mi} is not a positive even integer")
        if not all(np.isfinite(self.alpha)) or not all(np.isfinite(self.beta)):
            raise ValidationError("coefficients must be finite")

    @property
    def a(self):
        return float(min(self.alpha))

    @property
    def b(self):
        return float(max(self.alpha))

    @property
    def a_prime(self):
        return float(max(-v for v in self.beta))

    @property
    def b_prime(self):
        return float(min(-v for v in self.beta))

    @property
    def m0(self):
        return int(min(self.m))

    @property
    def m0_prime(self):
        return int(max(self.m))


@dataclass(frozen=True)
class PerturbationSpec:
    kind: PerturbationKind = PerturbationKind.ZERO
    gamma: float = 0.0
    power: int = 2
    coupled: bool = False
    certificate: Certificate = None

    def __post_init__(self):
        if self.kind == PerturbationKind.ZERO and self.gamma != 0.0:
            object.__setattr__(self, "gamma", 0.0)
        if self.gamma < 0 or not np.isfinite(self.gamma):
            raise ValidationError(f"amplitude gamma must be finite and nonnegative, got {self.gamma}")
        if self.power <= 0 or self.power % 2:
            raise ValidationError(f"power must be a positive even integer, got {self.power}")

    def zero_exponent(self, profile):
        """Largest ``p`` with ``|Z(x)| = O(|x|**(1+p))`` at the origin."""
        if self.kind == PerturbationKind.POWER_IN_BALL:
            return self.power
        if self.kind == PerturbationKind.COMPONENT_POWER:
            return 1 + profile.m0
        return 2


@dataclass(frozen=True)
class FieldSpec:
    family: Family
    profile: CoefficientProfile
    perturbation: PerturbationSpec = PerturbationSpec()

    @property
    def n(self):
        return self.profile.n

    @property
    def params(self):
        """Parameter tuple understood by the compiled kernels."""
        p = self.profile
        z = self.perturbation
        return (
            np.asarray(p.alpha, dtype=np.float64),
            np.asarray(p.beta, dtype=np.float64),
            np.asarray(p.m, dtype=np.int64),
            int(z.kind.code),
            float(z.gamma),
            int(z.power),
            bool(z.coupled and p.n > 1) if z.kind != PerturbationKind.COMPONENT_POWER else bool(z.coupled),
        )

    @property
    def is_zero_perturbation(self):
        return self.perturbation.kind == PerturbationKind.ZERO or self.perturbation.gamma == 0.0


@dataclass(frozen=True)
class CertificationGrid:
    """Radial shells times a fixed set of directions.

    Radii are geometric on ``[r_min, 1)`` and linear on ``[1, r_out]``; the
    directions are the coordinate axes, the sign diagonals and
    ``n_random_dirs`` directions from a seeded Philox stream.
    """

    r_min: float = 1e-3
    r_out: float = 4.0
    n_inner: int = 30
    n_outer: int = 30
    n_random_dirs: int = 200
    seed: int = 0

    def radii(self):
        inner = np.geomspace(self.r_min, 1.0, self.n_inner, endpoint=False)
        outer = np.linspace(1.0, self.r_out, self.n_outer)
        return np.concatenate([inner, outer])

    def directions(self, n):
        dirs = [np.eye(n), -np.eye(n)]
        if n <= 4:
            signs = np.array(list(product((-1.0, 1.0), repeat=n)))
            dirs.append(signs / np.sqrt(n))
        rng = np.random.Generator(np.random.Philox(key=self.seed))
        g = rng.standard_normal((self.n_random_dirs, n))
        dirs.append(g / np.linalg.norm(g, axis=1, keepdims=True))
        return np.concatenate(dirs)

    def points(self, n):
        r = self.radii()
        d = self.directions(n)
        return (r[:, None, None] * d[None, :, :]).reshape(-1, n)


# ---------------------------------------------------------------------------
# construction


def _ints(v, n):
    if v is None:
        return tuple([2] * n)
    out = []
    for x in v:
        if float(x) != int(x):
            raise ValidationError(f"exponent {x} is not an integer")
        out.append(int(x))
    return tuple(out)


def build_field(config, certify=True, k_max=1, grid=None):
    """Validate a scenario-style description and return a :class:`FieldSpec`.

    ``config`` keys: ``family``, ``n`` (optional, inferred), ``alpha``, ``beta``,
    ``m`` and an optional ``perturbation`` mapping with ``kind``, ``gamma``,
    ``power`` and ``coupled``.
    """
    try:
        family = Family(config["family"])
    except (KeyError, ValueError):
        raise ValidationError(f"unknown or missing family {config.get('family')!r}") from None
    vecs = [config.get(k) for k in ("alpha", "beta", "m")]
    n = config.get("n")
    if n is None:
        lengths = [len(v) for v in vecs if v is not None]
        if not lengths:
            raise ValidationError("cannot infer dimension: give n or a coefficient vector")
        n = lengths[0]
    n = int(n)
    for name, v in zip(("alpha", "beta", "m"), vecs):
        if v is not None and len(v) != n:
            raise ValidationError(f"{name} has {len(v)} entries, expected n={n}")
    alpha, beta, m = vecs
    if family.has_linear:
        if alpha is None:
            raise ValidationError(f"family {family.value} requires alpha")
        if all(float(a) == 0.0 for a in alpha):
            raise ValidationError("linear coefficients must not all vanish")
    elif alpha is not None and any(float(a) != 0.0 for a in alpha):
        raise ValidationError(f"family {family.value} has no linear part")
    if family.has_monomial:
        if beta is None or m is None:
            raise ValidationError(f"family {family.value} requires beta and m")
        if any(float(v) > 0 for v in beta):
            raise ValidationError("monomial coefficients must satisfy beta_i <= 0")
    elif beta is not None and any(float(v) != 0.0 for v in beta):
        raise ValidationError(f"family {family.value} has no monomial part")
    profile = CoefficientProfile(
        n=n,
        alpha=tuple(float(v) for v in alpha) if family.has_linear else (0.0,) * n,
        beta=tuple(float(v) for v in beta) if family.has_monomial else (0.0,) * n,
        m=_ints(m, n),
    )
    pconf = config.get("perturbation") or {"kind": "Zero"}
    try:
        kind = PerturbationKind(pconf.get("kind", "Zero"))
    except ValueError:
        raise ValidationError(f"unknown perturbation kind {pconf.get('kind')!r}") from None
    if not family.perturbed and kind != PerturbationKind.ZERO:
        raise ValidationError(f"family {family.value} carries no perturbation")
    pert = PerturbationSpec(
        kind=kind,
        gamma=float(pconf.get("gamma", 0.0)),
        power=int(pconf.get("power", 2)),
        coupled=bool(pconf.get("coupled", False)),
    )
    if certify:
        cert = certify_constants(pert, profile, k_max, grid or CertificationGrid())
        pert = replace(pert, certificate=cert)
    return FieldSpec(family=family, profile=profile, perturbation=pert)


# ---------------------------------------------------------------------------
# evaluation


def _check_point(f, x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != f.n:
        raise ValidationError(f"point has dimension {x.shape[-1]}, field has n={f.n}")
    if not np.all(np.isfinite(x)):
        raise DomainError("non-finite input point")
    return x


def eval_field(f, x):
    """Field value at ``x`` (a single point or an ``(N, n)`` batch)."""
    x = _check_point(f, x)
    out = K.catalog_field(np.atleast_2d(x), f.params, use_numba=False)
    return out[0] if x.ndim == 1 else out


def _diag_jets(profile, X, order):
    alpha = np.asarray(profile.alpha)
    beta = np.asarray(profile.beta)
    m = np.asarray(profile.m)
    N, n = X.shape
    jets = [alpha * X + beta * X ** (1 + m)]
    idx = np.arange(n)
    for l in range(1, order + 1):
        # d^l/dx^l of x**(1+m) is (1+m)!/(1+m-l)! x**(1+m-l)
        coef = np.ones(n)
        for j in range(l):
            coef = coef * (1 + m - j)
        power = np.maximum(1 + m - l, 0)
        diag = beta * coef * X ** power
        if l == 1:
            diag = diag + alpha
        T = np.zeros((N, n) + (n,) * l)
        T[(slice(None), idx) + (idx,) * l] = diag
        jets.append(T)
    return jets


def field_jets(f, X, k):
    """Batched derivative tensors ``D^0 .. D^k`` of the field at the rows of ``X``."""
    if k > K_MAX:
        raise CapabilityError(f"derivative order {k} exceeds K_max={K_MAX}")
    X = np.atleast_2d(_check_point(f, X))
    jets = _diag_jets(f.profile, X, k)
    if not f.is_zero_perturbation:
        z = f.perturbation
        pj = perturbation_jets(z.kind.code, f.n, f.params[6], z.power, f.profile.m, z.gamma, X, k)
        jets = [d + p for d, p in zip(jets, pj)]
    jets[0] = K.catalog_field(X, f.params, use_numba=False)
    return jets


def eval_field_jet(f, x, k):
    """Derivative tensors ``D^0 .. D^k`` of the field at a single point."""
    x = _check_point(f, x)
    if x.ndim != 1:
        raise ValidationError("eval_field_jet takes a single point")
    return [d[0] for d in field_jets(f, x[None, :], k)]


def perturbation_value_jets(z, profile, X, k):
    """Derivative tensors of the perturbation alone."""
    coupled = bool(z.coupled and profile.n > 1) if z.kind != PerturbationKind.COMPONENT_POWER \
        else bool(z.coupled)
    return perturbation_jets(z.kind.code, profile.n, coupled, z.power, profile.m, z.gamma,
                             np.atleast_2d(X), k)


# ---------------------------------------------------------------------------
# certification



FAR_RADII = (1e2, 1e3, 1e4)


def _batched_norm(T):
    """tensor_norm applied to each leading slice of a batched tensor."""
    return np.array([tensor_norm(t) for t in T])


def _origin_witness(radius, ratio, r_min):
    """Index of a witness if the ratio keeps growing towards the origin."""
    near = (radius >= r_min) & (radius <= 3 * r_min)
    far = (radius >= 30 * r_min) & (radius <= 100 * r_min)
    if not near.any() or not far.any():
        return None
    near_max = ratio[near].max()
    far_max = ratio[far].max()
    if near_max > 1e-12 and near_max > 3.0 * far_max:
        return int(np.flatnonzero(near)[np.argmax(ratio[near])])
    return None


def _infinity_witness(radius, ratio):
    """Index of a witness if the ratio keeps growing between the two outermost shells."""
    outer = radius >= 0.5 * FAR_RADII[-1]
    mid = (radius >= 0.5 * FAR_RADII[-2]) & (radius <= 2 * FAR_RADII[-2])
    if not outer.any() or not mid.any():
        return None
    if ratio[outer].max() > 2.0 * ratio[mid].max() + 1e-12:
        return int(np.flatnonzero(outer)[np.argmax(ratio[outer])])
    return None


def _split_maxima(ratio, inside):
    inner = float(ratio[inside].max()) if inside.any() else 0.0
    outer = float(ratio[~inside].max()) if (~inside).any() else 0.0
    return inner, outer


def _certify_weighted(name, jets, X, weights, grid, p=0):
    """Certify ``|D^l Z| <= c_l * weight_l`` for ``l = 0..k_max``.

    ``weights(l, X)`` returns a list of ``(numerator, weight, radius)``
    triples, one per component group (a single group for norm classes).
    """
    inside = np.linalg.norm(X, axis=1) < 1.0
    inner, outer = [], []
    for l in range(len(jets)):
        li, lo = 0.0, 0.0
        for num, w, radius in weights(l, jets[l], X):
            zero_w = w == 0.0
            bad = zero_w & (num > 1e-14)
            if bad.any():
                j = int(np.flatnonzero(bad)[0])
                return ClassCertificate(name, False, exponent=p, witness=tuple(X[j]),
                                        reason=f"order {l} nonzero where the weight vanishes")
            ratio = np.where(zero_w, 0.0, num / np.where(zero_w, 1.0, w))
            j = _origin_witness(radius, ratio, grid.r_min)
            if j is not None:
                return ClassCertificate(name, False, exponent=p, witness=tuple(X[j]),
                                        reason=f"order {l} ratio diverges at the origin")
            j = _infinity_witness(np.linalg.norm(X, axis=1), ratio)
            if j is not None:
                return ClassCertificate(name, False, exponent=p, witness=tuple(X[j]),
                                        reason=f"order {l} ratio grows without bound")
            a, b = _split_maxima(ratio, inside)
            li, lo = max(li, a), max(lo, b)
        inner.append(li)
        outer.append(lo)
    inner = tuple(SAFETY_FACTOR * v for v in inner)
    outer = tuple(SAFETY_FACTOR * v for v in outer)
    consts = tuple(max(a, b) for a, b in zip(inner, outer))
    return ClassCertificate(name, True, consts, inner, outer, p, "grid-oracle")


def _norm_weights(p, split, global_bound=False):
    def weights(l, T, X):
        r = np.linalg.norm(X, axis=1)
        num = _batched_norm(T)
        if global_bound:
            w = np.ones_like(r)
        else:
            w_in = r ** (1 - l + p)
            w_out = r ** (1 - l) if split else w_in
            w = np.where(r < 1.0, w_in, w_out)
        return [(num, w, r)]
    return weights


def _component_weights(m):
    def weights(l, T, X):
        r = np.linalg.norm(X, axis=1)
        groups = []
        for i in range(X.shape[1]):
            num = np.linalg.norm(T[:, i].reshape(X.shape[0], -1), axis=1)
            xi = np.abs(X[:, i])
            if l <= 1 + m[i]:
                w = np.where(r < 1.0, xi ** (2 - l + m[i]), xi ** (1 - l + m[i]))
            else:
                w = np.ones_like(xi)
            groups.append((num, w, xi))
        return groups
    return weights


def _analytic(name, consts, p):
    consts = tuple(float(c) for c in consts)
    return ClassCertificate(name, True, consts, consts, consts, p, "analytic")


def certify_constants(z, profile, k_max, grid=None):
    """Certify growth constants ``c_0..c_{k_max}`` of ``z`` for every hypothesis class.

    Grid-oracle constants are the maximum of ``|D^l Z| / weight`` over the
    certification grid plus a few far shells, inflated by
    :data:`SAFETY_FACTOR`.  A ratio that keeps growing towards the origin or
    towards infinity marks the class as not satisfied, with a witness point.
    A few closed-form suprema are reported exactly and tagged ``analytic``.
    """
    grid = grid or CertificationGrid()
    if k_max > K_MAX:
        raise CapabilityError(f"certification order {k_max} exceeds K_max={K_MAX}")
    p = z.zero_exponent(profile)
    if z.kind == PerturbationKind.ZERO or z.gamma == 0.0:
        zeros = (0.0,) * (k_max + 1)
        classes = {name: _analytic(name, zeros, p) for name in CLASS_LEMMAS}
        return Certificate(k_max, classes, radius=grid.r_out)
    dirs = grid.directions(profile.n)
    far = np.concatenate([r * dirs for r in FAR_RADII])
    X = np.concatenate([grid.points(profile.n), far])
    jets = perturbation_value_jets(z, profile, X, k_max)
    classes = {
        "global_bounded": _certify_weighted("global_bounded", jets, X,
                                            _norm_weights(0, False, True), grid),
        "norm_split": _certify_weighted("norm_split", jets, X, _norm_weights(p, True), grid, p),
        "norm_global": _certify_weighted("norm_global", jets, X, _norm_weights(p, False), grid, p),
        "component_split": _certify_weighted("component_split", jets, X,
                                             _component_weights(profile.m), grid),
    }
    gb = classes["global_bounded"]
    if z.kind == PerturbationKind.BOUNDED and gb.satisfied:
        # |Z| = gamma r**3 / (1 + r**2)**1.5 increases to gamma
        classes["global_bounded"] = replace(gb, constants=(z.gamma,) + gb.constants[1:],
                                            method="analytic" if k_max == 0 else "mixed")
    if z.kind == PerturbationKind.POWER_IN_BALL and k_max <= 1:
        consts = (z.gamma, z.gamma * (1 + z.power))[: k_max + 1]
        classes["norm_global"] = _analytic("norm_global", consts, p)
    return Certificate(k_max, classes, radius=grid.r_out)
