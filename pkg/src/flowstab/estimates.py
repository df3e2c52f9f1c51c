"""Derived decay constants, lower/upper envelopes and trajectory checks.

Each lemma combines the coefficient extrema of the field with the certified
perturbation constants ``c_l`` into a handful of rates (``a0, b0, a1, b1``)
and sandwiches a flow quantity between two explicit functions of
``(t, |x|)``.  Envelopes know their validity domain; samples outside it are
skipped, never counted as passes.

Conventions: ``a, b`` are the raw extremes of ``alpha`` (so both are negative
for decaying linear parts); lemmas stated with magnitudes use
``a_mag = -a`` and ``b_mag = -b``.  ``a_prime = max(-beta)``,
``b_prime = min(-beta)``, ``m0 = min m``, ``m0_prime = max m``.
"""
from dataclasses import dataclass, field, replace

import numpy as np

from .closed_form import monomial_deriv_coeffs
from .errors import CertificationError, HypothesisError, UsageError
from .fields import Family
from .tensors import batch_tensor_norm

# lemma -> hypothesis class whose constants it consumes
LEMMA_CLASS = {
    "lemma1": "global_bounded",
    "lemma2": "norm_split",
    "lemma3": "norm_global",
    "lemma4": "global_bounded",
    "lemma5": "norm_split",
    "lemma6": "norm_global",
    "lemma7": None,
    "lemma8": "component_split",
    "lemma9": "component_split",
    "lemma10": "component_split",
    "lemma11": "component_split",
    "lemma12": "norm_split",
    "lemma13": "norm_split",
    "prop1": None,
    "prop2": None,
    "prop3": "norm_split",
    "prop4": None,
    "prop5": "component_split",
    "prop6": "component_split",
    "linear": None,
    "example1": None,
    "example2": None,
}

# families each check applies to
LEMMA_FAMILIES = {
    **{k: (Family.X1, Family.Y1) for k in ("lemma1", "lemma2", "lemma3", "lemma4", "lemma5",
                                           "lemma6", "lemma12", "lemma13", "prop3")},
    "lemma7": (Family.X2,),
    "prop2": (Family.X2,),
    "prop4": (Family.X2,),
    **{k: (Family.X2, Family.Y2) for k in ("lemma8", "lemma9", "prop5")},
    **{k: (Family.X3, Family.Y3) for k in ("lemma10", "lemma11", "prop6")},
    "prop1": tuple(Family),
    "linear": (Family.X1,),
    "example1": (Family.X3,),
    "example2": (Family.X3,),
}

# sign of the change that tightens an envelope, per lemma and constant
ADVERSE = {
    "lemma1": {"c0": -1},
    "lemma2": {"a0": +1, "b0": -1},
    "lemma3": {"c0": -1},
    "lemma4": {"a1": +1, "b1": -1},
    "lemma5": {"a1": +1, "b1": -1},
    "lemma6": {"c1": -1},
    "lemma7": {"a_prime": +1, "b_prime": -1},
    "lemma8": {"a0": -1, "b0": +1},
    "lemma9": {"a1": -1, "b1": +1},
    "lemma10": {"a0": -1, "b0": +1},
    "lemma11": {"a1": -1, "b1": +1},
    "lemma12": {"b0": +1},
    "lemma13": {"b1": +1},
}


@dataclass(frozen=True)
class DerivedConstants:
    lemma_id: str
    a: float
    b: float
    a_prime: float
    b_prime: float
    m0: int
    m0_prime: int
    m: tuple = ()
    c: tuple = ()
    p: int = 0
    a0: float = None
    b0: float = None
    a1: float = None
    b1: float = None
    a_mag: float = None
    b_mag: float = None
    n: int = 1
    conditions: dict = field(default_factory=dict)
    convention: str = "raw"
    corrupted: str = ""

    @property
    def c0(self):
        return self.c[0] if self.c else 0.0

    @property
    def c1(self):
        return self.c[1] if len(self.c) > 1 else 0.0


def _require(cond, name, detail):
    if not cond:
        raise HypothesisError(f"hypothesis {name} fails ({detail})")


def _class_constants(f, cls, k):
    if cls is None or f.is_zero_perturbation:
        return (0.0,) * (k + 1)
    cert = f.perturbation.certificate
    if cert is None:
        raise CertificationError("perturbation carries no certificate")
    c = cert.constants(cls)
    if len(c) < k + 1:
        raise CertificationError(f"certificate covers orders <= {len(c) - 1}, need {k}")
    return tuple(c)


def derive_constants(f, lemma_id, k=1):
    """Constants of ``lemma_id`` for field ``f`` (pure arithmetic on certified inputs)."""
    if lemma_id not in LEMMA_CLASS:
        raise UsageError(f"unknown check {lemma_id!r}")
    if f.family not in LEMMA_FAMILIES[lemma_id]:
        raise UsageError(f"{lemma_id} does not apply to family {f.family.value}")
    prof = f.profile
    cls = LEMMA_CLASS[lemma_id]
    if lemma_id == "prop3" and not f.is_zero_perturbation:
        cert = f.perturbation.certificate
        if cert is not None and not cert.classes["norm_split"].satisfied:
            cls = "global_bounded"
    c = _class_constants(f, cls, max(k, 1))
    base = dict(lemma_id=lemma_id, a=prof.a, b=prof.b, a_prime=prof.a_prime,
                b_prime=prof.b_prime, m0=prof.m0, m0_prime=prof.m0_prime, m=tuple(prof.m),
                c=c, p=f.perturbation.zero_exponent(prof), n=prof.n)
    conds = {}
    extra = {}
    c0, c1 = c[0], c[1]
    if lemma_id in ("lemma2", "lemma5"):
        extra.update(a0=prof.a - c0, b0=prof.b + c0)
    if lemma_id in ("lemma4", "lemma5"):
        extra.update(a1=prof.a - c1, b1=prof.b + c1)
    if lemma_id in ("lemma3", "lemma6"):
        conds["b < 0"] = prof.b < 0
        _require(conds["b < 0"], "b < 0", f"b = {prof.b}")
    if lemma_id in ("lemma7", "prop2", "prop4"):
        conds["b_prime >= 0"] = prof.b_prime >= 0
        if lemma_id == "prop2":
            conds["b_prime > 0"] = prof.b_prime > 0
            _require(conds["b_prime > 0"], "b_prime > 0", f"b_prime = {prof.b_prime}")
    if lemma_id in ("lemma8", "lemma9", "lemma10", "lemma11", "prop5", "prop6"):
        a0 = prof.a_prime + c0
        b0 = prof.b_prime - c0
        conds["b0 > 0"] = b0 > 0
        _require(conds["b0 > 0"], "b0 > 0", f"b0 = b_prime - c0 = {b0:.6g}")
        extra.update(a0=a0, b0=b0)
        if lemma_id in ("lemma9", "lemma11", "prop5", "prop6"):
            a1 = prof.a_prime * (1 + prof.m0) + c1
            b1 = prof.b_prime * (1 + prof.m0) - c1
            conds["b1 > 0"] = b1 > 0
            conds["b1 > a0 m0_prime"] = b1 > a0 * prof.m0_prime
            _require(conds["b1 > 0"], "b1 > 0", f"b1 = b_prime (1 + m0) - c1 = {b1:.6g}")
            if lemma_id == "prop5":
                _require(conds["b1 > a0 m0_prime"], "b1 > a0 m0_prime",
                         f"b1 = {b1:.6g}, a0 m0_prime = {a0 * prof.m0_prime:.6g}")
            extra.update(a1=a1, b1=b1)
    if lemma_id in ("lemma10", "lemma11", "prop6", "lemma12", "lemma13", "prop3"):
        a_mag, b_mag = -prof.a, -prof.b
        conds["b_mag > 0"] = b_mag > 0
        _require(conds["b_mag > 0"], "all alpha negative", f"max alpha = {prof.b}")
        extra.update(a_mag=a_mag, b_mag=b_mag)
        base["convention"] = "magnitude"
        if lemma_id in ("lemma12", "lemma13", "prop3"):
            b0 = b_mag - c0
            b1 = b_mag - c1
            conds["b0 > 0"] = b0 > 0
            _require(conds["b0 > 0"], "b0 > 0", f"b0 = b_mag - c0 = {b0:.6g}")
            extra.update(a0=a_mag + c0, b0=b0)
            if lemma_id in ("lemma13", "prop3"):
                conds["b1 > 0"] = b1 > 0
                _require(conds["b1 > 0"], "b1 > 0", f"b1 = b_mag - c1 = {b1:.6g}")
                extra.update(a1=a_mag + c1, b1=b1)
    return DerivedConstants(**base, **extra, conditions=conds)


def corrupt_constants(c, name, factor=0.2, direction=None):
    """Move one constant by ``factor * |value|`` in the direction that tightens the envelope."""
    if direction is None:
        try:
            direction = ADVERSE[c.lemma_id][name]
        except KeyError:
            raise UsageError(f"no adverse direction known for {name!r} in {c.lemma_id}") from None
    if name in ("c0", "c1"):
        idx = 0 if name == "c0" else 1
        v = c.c[idx]
        cc = list(c.c)
        cc[idx] = v + direction * factor * (abs(v) if v else 1.0)
        return replace(c, c=tuple(cc), corrupted=name)
    v = getattr(c, name)
    if v is None:
        raise UsageError(f"{c.lemma_id} has no constant {name!r}")
    return replace(c, **{name: v + direction * factor * (abs(v) if v else 1.0)}, corrupted=name)


# ---------------------------------------------------------------------------
# envelopes


@dataclass(frozen=True)
class EnvelopeDomain:
    n_max: int = None
    r_min: float = 0.0
    r_max: float = np.inf
    r_max_strict: bool = False
    t_min: float = 0.0
    description: str = ""

    def mask(self, t, r, n):
        if self.n_max is not None and n > self.n_max:
            return np.zeros(np.broadcast(t, r).shape, dtype=bool)
        r_ok = (r < self.r_max) if self.r_max_strict else (r <= self.r_max)
        return (t >= self.t_min) & (r >= self.r_min) & r_ok


@dataclass(frozen=True)
class Envelope:
    """``lower(t, r, axis) <= quantity <= upper(t, r, axis)`` on ``domain``.

    ``quantity`` is ``"flow"`` (``|psi_t(x)|``), ``"jet"`` (tensor norm of
    ``D^order psi_t(x)``) or ``"component"`` (``|psi_t(x)_i|`` against
    ``r = |x_i|``).
    """

    lemma_id: str
    display: str
    quantity: str
    order: int
    lower: object
    upper: object
    domain: EnvelopeDomain = EnvelopeDomain()
    annotations: tuple = ()


def _bernoulli(r, t, A, B, m):
    """Solution of ``y' = A y + B y**(1+m)``, ``y(0) = r``; ``inf`` after blowup."""
    r = np.asarray(r, dtype=float)
    t = np.asarray(t, dtype=float)
    if A == 0:
        rad = 1.0 - m * B * t * r ** m
        e = 1.0
    else:
        rad = 1.0 + (B / A) * r ** m * (1.0 - np.exp(A * m * t))
        e = np.exp(A * t)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(rad > 0, r * e * np.abs(rad) ** (-1.0 / m), np.inf)


def _affine(r, t, A, C):
    """Solution of ``y' = A y + C``, ``y(0) = r``."""
    if A == 0:
        return r + C * t
    return (r + C / A) * np.exp(A * t) - C / A


def _power_decay(r, t, coef, m, q):
    """``(1 + coef m t r**m)**(-q)``; ``inf`` once the base reaches zero (blowup)."""
    base = 1.0 + coef * m * t * np.asarray(r, dtype=float) ** m
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(base > 0, np.abs(base) ** (-q), np.inf)


def _zero(t, r, axis=None):
    return np.zeros(np.broadcast(t, r).shape)


def _inf(t, r, axis=None):
    return np.full(np.broadcast(t, r).shape, np.inf)


def _need_scalar(c, what):
    if c.n != 1:
        return EnvelopeDomain(n_max=1, description=f"{what}: norm form holds for n = 1")
    return None


def _envelopes(lemma_id, c, rho=2.0, r_min=0.05, t0=1.0, M=None, k=1):
    """All displays of ``lemma_id`` as a list of :class:`Envelope`."""
    a, b, p = c.a, c.b, c.p
    c0, c1 = c.c0, c.c1
    one_d = EnvelopeDomain(n_max=1, description="norm form valid for n = 1")
    out = []
    if lemma_id == "linear":
        out.append(Envelope(lemma_id, "Eq. (4)", "flow", 0,
                            lambda t, r, axis=None: r * np.exp(a * t),
                            lambda t, r, axis=None: r * np.exp(b * t)))
    elif lemma_id == "example1":
        mset = sorted(set(c.m))
        coef = c.a_prime / abs(a)

        def lo(t, r, axis=None):
            fac = np.min([(1.0 + coef * np.asarray(r, dtype=float) ** mi) ** (-1.0 / mi)
                          for mi in mset], axis=0)
            return r * np.exp(a * t) * fac

        out.append(Envelope(lemma_id, "Eq. (13)", "flow", 0, lo,
                            lambda t, r, axis=None: r * np.exp(b * t),
                            annotations=("lower bound |x| e^{at} replaced by |x| e^{at} "
                                         "min_i (1 + (a'/|a|)|x|^{m_i})^{-1/m_i}; the "
                                         "unscaled form fails whenever beta != 0",)))
    elif lemma_id == "example2":
        Ms = example2_constants(c, rho)
        for l in (1, 2):
            out.append(Envelope(lemma_id, "Example 2", "jet", l, _zero,
                                lambda t, r, axis=None, M=Ms[l]: M * np.exp(b * t),
                                EnvelopeDomain(r_max=rho, description=f"ball of radius {rho}")))
    elif lemma_id == "lemma1":
        out.append(Envelope(lemma_id, "Lemma 1", "flow", 0,
                            lambda t, r, axis=None: _affine(r, t, a, -c0),
                            lambda t, r, axis=None: _affine(r, t, b, c0),
                            annotations=("lower branch uses e^{at} (comparison solution); the "
                                         "printed form (|x| - c0/a) e^{bt} + c0/a mixes a and b",)))
    elif lemma_id in ("lemma2", "lemma12"):
        a0 = c.a - c0 if lemma_id == "lemma12" else c.a0
        b0 = -c.b0 if lemma_id == "lemma12" else c.b0
        out.append(Envelope(lemma_id, "Eq. (9)" if lemma_id == "lemma2" else "Lemma 12",
                            "flow", 0,
                            lambda t, r, axis=None: r * np.exp(a0 * t),
                            lambda t, r, axis=None: r * np.exp(b0 * t)))
    elif lemma_id == "lemma3":
        r_max = (abs(b) / c0) ** (1.0 / p) if c0 > 0 else np.inf
        out.append(Envelope(lemma_id, "Eq. (11)", "flow", 0,
                            lambda t, r, axis=None: _bernoulli(r, t, a, -c0, p),
                            lambda t, r, axis=None: _bernoulli(r, t, b, c0, p),
                            EnvelopeDomain(r_max=r_max, r_max_strict=True,
                                           description="|x|^p < |b|/c0 (upper comparison "
                                                       "solution stays finite)"),
                            ("upper bound uses 1 + (c0/b)|x|^m (1 - e^{bmt}); the printed "
                             "minus sign does not solve the comparison equation",)))
    elif lemma_id in ("lemma4", "lemma5", "lemma13"):
        a1 = c.a - c1 if lemma_id == "lemma13" else c.a1
        b1 = -c.b1 if lemma_id == "lemma13" else c.b1
        disp = {"lemma4": "Eq. (15)", "lemma5": "Eq. (18)", "lemma13": "Lemma 13"}[lemma_id]
        out.append(Envelope(lemma_id, disp, "jet", 1,
                            lambda t, r, axis=None: np.exp(a1 * t) + 0 * r,
                            lambda t, r, axis=None: np.exp(b1 * t) + 0 * r))
    elif lemma_id == "lemma6":
        r_max = (abs(b) / c0) ** (1.0 / p) if c0 > 0 else np.inf

        def log_db(t, r):
            s = (np.asarray(r, dtype=float) ** p / b) * (1.0 - np.exp(b * p * t))
            if c0 == 0:
                return s, True
            with np.errstate(invalid="ignore"):
                return np.log1p(c0 * s), False

        def up(t, r, axis=None):
            v, lim = log_db(t, r)
            expo = -c1 * v / p if lim else -c1 * v / (p * c0)
            return np.exp(b * t + expo)

        def lo(t, r, axis=None):
            v, lim = log_db(t, r)
            expo = c1 * v / p if lim else c1 * v / (p * c0)
            return np.exp(a * t + expo)

        out.append(Envelope(lemma_id, "Lemma 6", "jet", 1, lo, up,
                            EnvelopeDomain(r_max=r_max, r_max_strict=True,
                                           description="|x|^p < |b|/c0"),
                            ("both bounds rebuilt from the corrected flow envelope: upper "
                             "e^{bt} D^{-c1/(p c0)}, lower e^{at} D^{+c1/(p c0)}, "
                             "D = 1 + (c0/b)|x|^p (1 - e^{bpt})",)))
    elif lemma_id in ("lemma7", "prop2", "prop4"):
        m0, m1 = c.m0, c.m0_prime
        ap, bp = c.a_prime, c.b_prime
        out.append(Envelope("lemma7", "Eq. (20)", "flow", 0,
                            lambda t, r, axis=None: r * _power_decay(r, t, bp, m0, 1.0 / m0),
                            lambda t, r, axis=None: r * _power_decay(r, t, ap, m1, 1.0 / m1),
                            one_d))
        out.append(Envelope("lemma7", "Eq. (21)", "jet", 1,
                            lambda t, r, axis=None: _power_decay(r, t, bp, m0, 1 + 1.0 / m0),
                            lambda t, r, axis=None: _power_decay(r, t, ap, m1, 1 + 1.0 / m1),
                            one_d))
        if lemma_id != "lemma7" and bp > 0:
            for kk in range(1, k + 1):
                tab = monomial_deriv_coeffs(kk, m1)
                Mk = sum(abs(v) for v in tab.coeffs) * (m1 * bp) ** (-1 - 1.0 / m1) \
                    * r_min ** (-kk - m1)
                out.append(Envelope(
                    "prop2", "Eq. (22)", "jet", kk, _zero,
                    lambda t, r, axis=None, Mk=Mk: Mk * np.asarray(t, dtype=float) ** (-1 - 1.0 / m1)
                    + 0 * r,
                    EnvelopeDomain(n_max=1, r_min=r_min, r_max=rho, t_min=t0,
                                   description=f"n = 1, annulus {r_min} <= |x| <= {rho}, t >= {t0}"),
                    ("M_k = sum_j |a_j^k| (m b')^{-1-1/m} r_min^{-k-m}; a uniform constant "
                     "does not exist on a ball containing the origin",)))
        if lemma_id == "prop2":
            out = [e for e in out if e.lemma_id == "prop2"]
        elif lemma_id == "prop4":
            out = []
    elif lemma_id in ("lemma8", "lemma9", "prop5"):
        a0, b0 = c.a0, c.b0
        m0, m1 = c.m0, c.m0_prime
        if lemma_id == "lemma8":
            out.append(Envelope(lemma_id, "Eq. (24)", "flow", 0,
                                lambda t, r, axis=None: r * _power_decay(r, t, a0, m0, 1.0 / m0),
                                lambda t, r, axis=None: r * _power_decay(r, t, b0, m1, 1.0 / m1),
                                one_d))
            M0 = (b0 * m1) ** (-1.0 / m1) / r_min
            out.append(Envelope(lemma_id, "Eq. (25)", "flow", 0, _zero,
                                lambda t, r, axis=None: M0 * r * np.asarray(t, dtype=float) ** (-1.0 / m1),
                                EnvelopeDomain(n_max=1, r_min=r_min, r_max=rho, t_min=t0,
                                               description=f"n = 1, annulus {r_min} <= |x| <= {rho}"),
                                ("M0 = (b0 m)^{-1/m} / r_min",)))
            ms = c.m

            def lo_c(t, r, axis):
                mi = ms[axis]
                return r * _power_decay(r, t, a0, mi, 1.0 / mi)

            def up_c(t, r, axis):
                mi = ms[axis]
                return r * _power_decay(r, t, b0, mi, 1.0 / mi)

            out.append(Envelope(lemma_id, "Eq. (26)", "component", 0, lo_c, up_c))
        elif lemma_id == "lemma9":
            a1, b1 = c.a1, c.b1
            out.append(Envelope(lemma_id, "Eq. (27)", "jet", 1,
                                lambda t, r, axis=None: _power_decay(r, t, b0, m0, a1 / (b0 * m0)),
                                lambda t, r, axis=None: _power_decay(r, t, a0, m1, b1 / (a0 * m1)),
                                one_d))
            q = b1 / (a0 * m1)
            M1 = (a0 * m1 * r_min ** m1) ** (-q)
            out.append(Envelope(lemma_id, "Eq. (28)", "jet", 1, _zero,
                                lambda t, r, axis=None: M1 * np.asarray(t, dtype=float) ** (-q) + 0 * r,
                                EnvelopeDomain(n_max=1, r_min=r_min, r_max=rho, t_min=t0,
                                               description=f"n = 1, annulus {r_min} <= |x| <= {rho}"),
                                ("M1 = (a0 m r_min^m)^{-b1/(a0 m)}",)))
        else:
            q = c.b1 / (a0 * m1)
            out.append(_fitted(lemma_id, "Eq. (33)", k, M,
                               lambda t: np.asarray(t, dtype=float) ** (-q),
                               EnvelopeDomain(r_min=r_min, r_max=rho, t_min=t0,
                                              description=f"annulus {r_min} <= |x| <= {rho}, t >= {t0}")))
    elif lemma_id in ("lemma10", "lemma11", "prop6"):
        am, bm = c.a_mag, c.b_mag
        a0, b0 = c.a0, c.b0
        mm, mp = c.m0, c.m0_prime
        note = ("unnamed exponents m, m' taken as m0, m0'; coefficients stated as magnitudes "
                "-a <= alpha_i <= -b < 0",)
        if lemma_id == "lemma10":
            out.append(Envelope(lemma_id, "Lemma 10", "flow", 0,
                                lambda t, r, axis=None: _bernoulli(r, t, -am, -a0, mm),
                                lambda t, r, axis=None: _bernoulli(r, t, -bm, -b0, mp),
                                one_d, note))
            mset = sorted(set(c.m))
            c1r = min((1.0 + (a0 / am) * rho ** mi) ** (-1.0 / mi) for mi in mset)
            out.append(Envelope(lemma_id, "Eq. (30)", "flow", 0,
                                lambda t, r, axis=None: c1r * r * np.exp(-am * t),
                                lambda t, r, axis=None: r * np.exp(-bm * t),
                                EnvelopeDomain(r_max=rho, description=f"ball of radius {rho}"),
                                (f"c1 = min_i (1 + (a0/a) rho^m_i)^(-1/m_i) = {c1r:.6g}, c2 = 1",)))
        elif lemma_id == "lemma11":
            a1, b1 = c.a1, c.b1

            def lo(t, r, axis=None):
                u = 1.0 + (b0 / bm) * np.asarray(r, dtype=float) ** mm * (1.0 - np.exp(-bm * mm * t))
                return np.exp(-am * t) * u ** (-a1 / (b0 * mm))

            def up(t, r, axis=None):
                u = 1.0 + (a0 / am) * np.asarray(r, dtype=float) ** mp * (1.0 - np.exp(-am * mp * t))
                return np.exp(-bm * t) * u ** (-b1 / (a0 * mp))

            out.append(Envelope(lemma_id, "Lemma 11", "jet", 1, lo, up, one_d, note))
            out.append(Envelope(lemma_id, "Eq. (31)", "jet", 1, _zero,
                                lambda t, r, axis=None: np.exp(-bm * t) + 0 * r, one_d,
                                ("M1 = 1",)))
        else:
            out.append(_fitted(lemma_id, "Prop 6", k, M,
                               lambda t: np.exp(-bm * np.asarray(t, dtype=float)),
                               EnvelopeDomain(r_max=rho, description=f"ball of radius {rho}"),
                               ("bound M_k e^{-bt} without the |x| factor: derivatives do not "
                                "vanish at x = 0",)))
    elif lemma_id == "prop3":
        b1 = c.b1
        out.append(_fitted(lemma_id, "Eq. (32)", k, M,
                           lambda t: np.exp(-b1 * np.asarray(t, dtype=float)),
                           EnvelopeDomain(r_max=rho, description=f"ball of radius {rho}")))
    elif lemma_id == "prop1":
        raise UsageError("prop1 is a stability criterion; use stability.gas_certify")
    else:
        raise UsageError(f"no envelope for {lemma_id!r}")
    return out


def _fitted(lemma_id, display, k, M, profile, domain, notes=()):
    if M is None:
        raise UsageError(f"{lemma_id} needs a fitted constant M_k (see envelope_constant_Mk)")
    return Envelope(lemma_id, display, "jet", k, _zero,
                    lambda t, r, axis=None: M * profile(t) + 0 * np.asarray(r, dtype=float),
                    domain, tuple(notes) + (f"M_{k} = {M:.6g} fitted on calibration samples",))


def envelopes_for(lemma_id, c, **opts):
    """Every display of ``lemma_id`` built from constants ``c``."""
    return _envelopes(lemma_id, c, **opts)


def envelope_for(lemma_id, c, display=None, **opts):
    """One display of ``lemma_id`` (the first unless ``display`` names another)."""
    envs = _envelopes(lemma_id, c, **opts)
    if not envs:
        raise UsageError(f"{lemma_id} has no envelope display")
    if display is None:
        return envs[0]
    for e in envs:
        if e.display == display:
            return e
    raise UsageError(f"{lemma_id} has no display {display!r}")


def example2_constants(c, rho, n_grid=401):
    """Constants ``M_0, M_1, M_2`` with ``|D^l phi_t| <= M_l e^{bt}`` on ``B(0, rho)``.

    ``M_0 = rho`` and ``M_1 = 1`` follow from the first-derivative formula; ``M_2``
    is the grid maximum of ``(1+m) u x^(m-1) / (1 + u x^m)^(2+1/m)`` over
    ``0 <= x <= rho``, ``0 <= u <= |beta/alpha|``, inflated by 5%.
    """
    xs = np.linspace(0.0, rho, n_grid)
    best = 0.0
    # ratio |beta/alpha| is bounded by a_prime / |b|
    umax = c.a_prime / abs(c.b)
    us = np.linspace(0.0, umax, n_grid)
    X, U = np.meshgrid(xs, us)
    for mi in sorted(set(c.m)):
        v = (1 + mi) * U * X ** (mi - 1) / (1 + U * X ** mi) ** (2 + 1.0 / mi)
        best = max(best, float(v.max()))
    return {0: float(rho), 1: 1.0, 2: 1.05 * best}


# ---------------------------------------------------------------------------
# checks


@dataclass
class BoundReport:
    lemma_id: str
    display: str
    samples_checked: int = 0
    samples_skipped: int = 0
    violations: list = field(default_factory=list)
    max_violation_magnitude: float = 0.0
    annotations: tuple = ()

    @property
    def passed(self):
        return not self.violations

    def merge(self, other):
        self.samples_checked += other.samples_checked
        self.samples_skipped += other.samples_skipped
        self.violations.extend(other.violations)
        self.max_violation_magnitude = max(self.max_violation_magnitude,
                                           other.max_violation_magnitude)
        return self

    def to_dict(self, max_violations=20):
        return {
            "lemma_id": self.lemma_id,
            "display": self.display,
            "passed": self.passed,
            "samples_checked": self.samples_checked,
            "samples_skipped": self.samples_skipped,
            "violation_count": len(self.violations),
            "max_violation_magnitude": self.max_violation_magnitude,
            "violations": self.violations[:max_violations],
            "annotations": list(self.annotations),
        }


def default_slack(cfg=None):
    rel = 1e-10 if cfg is None else cfg.rel_tol
    return 1e-6 + 100.0 * rel


def _measure(e, traj):
    """``(measured, r, x0, axis)`` arrays shaped ``(T, N[, n])``."""
    vals = np.asarray(traj.values)
    x0 = np.atleast_2d(np.asarray(traj.x0, dtype=float))
    if vals.ndim == 2:
        vals = vals[:, None, :]
    T, N, n = vals.shape
    if e.quantity == "flow":
        return np.linalg.norm(vals, axis=2), np.broadcast_to(np.linalg.norm(x0, axis=1), (T, N)), None
    if e.quantity == "component":
        return np.abs(vals), np.broadcast_to(np.abs(x0), (T, N, n)), np.arange(n)
    if e.quantity == "jet":
        if traj.order < e.order:
            raise UsageError(f"{e.lemma_id} {e.display} needs jets of order {e.order}, "
                             f"trajectory has {traj.order}")
        Tk = np.asarray(traj.tensors[e.order - 1])
        if Tk.ndim == e.order + 2:
            Tk = Tk[:, None]
        return batch_tensor_norm(Tk, e.order), np.broadcast_to(np.linalg.norm(x0, axis=1), (T, N)), None
    raise UsageError(f"unknown quantity {e.quantity!r}")


_WHAT = {"flow_norm": ("flow", 0), "component": ("component", 0), "jet1_norm": ("jet", 1)}


def _parse_what(what):
    if what in _WHAT:
        return _WHAT[what]
    if isinstance(what, str) and what.startswith("jet") and what.endswith("_norm"):
        try:
            return "jet", int(what[3:-5])
        except ValueError:
            pass
    raise UsageError(f"unknown quantity selector {what!r}")


def check_trajectory(e, traj, what=None, slack=None):
    """Test every sample of ``traj`` against ``e``; samples outside the domain are skipped.

    ``what`` (``"flow_norm"``, ``"component"``, ``"jet1_norm"``, ``"jetk_norm"``
    with ``k`` an integer) must agree with the quantity the envelope bounds when
    given.
    """
    if what is not None and _parse_what(what) != (e.quantity, e.order):
        raise UsageError(f"{e.lemma_id} {e.display} bounds {e.quantity} of order {e.order}, "
                         f"not {what!r}")
    slack = default_slack() if slack is None else slack
    if len(traj.times) == 0:
        raise UsageError("empty trajectory")
    meas, r, axes = _measure(e, traj)
    x0 = np.atleast_2d(np.asarray(traj.x0, dtype=float))
    n = x0.shape[1]
    t = np.asarray(traj.times, dtype=float)
    rep = BoundReport(e.lemma_id, e.display, annotations=e.annotations)
    if e.quantity == "component":
        groups = [(meas[:, :, i], r[:, :, i], i) for i in range(n)]
    else:
        groups = [(meas, r, None)]
    for mg, rg, axis in groups:
        tt = np.broadcast_to(t[:, None], mg.shape)
        ok = e.domain.mask(tt, rg, n)
        rep.samples_skipped += int((~ok).sum())
        if not ok.any():
            continue
        # bounds may be singular outside the domain (t = 0 for power-law rates)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            lo = np.broadcast_to(e.lower(tt, rg, axis), mg.shape)
            up = np.broadcast_to(e.upper(tt, rg, axis), mg.shape)
        rep.samples_checked += int(ok.sum())
        below = ok & (mg < lo - slack)
        above = ok & (mg > up + slack)
        # an undefined bound inside the domain is reported, never silently passed
        undef = ok & (np.isnan(lo) | np.isnan(up) | np.isnan(mg))
        for side, mask, bound in (("lower", below, lo), ("upper", above, up),
                                  ("undefined", undef, np.where(np.isnan(lo), lo, up))):
            for i, j in zip(*np.nonzero(mask)):
                mag = float(abs(mg[i, j] - bound[i, j]))
                rep.violations.append({
                    "x": [float(v) for v in x0[j]], "t": float(t[i]), "axis": axis,
                    "measured": float(mg[i, j]), "bound": float(bound[i, j]), "side": side,
                    "magnitude": mag})
                rep.max_violation_magnitude = max(rep.max_violation_magnitude, mag)
    rep.violations.sort(key=lambda v: (v["t"], v["x"], v["side"]))
    return rep


def envelope_constant_Mk(trajs, k, rate_model, rate, t0=0.0, r_min=0.0, r_max=np.inf):
    """Smallest ``M`` with ``|D^k psi_t(x)| <= M profile(t)`` over all samples.

    ``rate_model`` is ``"exponential"`` (profile ``e^{-rate t}``) or
    ``"power"`` (profile ``t^{-rate}``).  Returns ``(M, (x0, t))`` for the
    attaining sample.
    """
    if rate_model not in ("exponential", "power"):
        raise UsageError(f"unknown rate model {rate_model!r}")
    best, where = -np.inf, None
    for tr in trajs:
        t = np.asarray(tr.times, dtype=float)
        sel = t >= t0
        if rate_model == "power":
            sel &= t > 0
        if not sel.any():
            continue
        x0 = np.atleast_2d(tr.x0)
        if k == 0:
            vals = np.asarray(tr.values)
            vals = vals[:, None] if vals.ndim == 2 else vals
            meas = np.linalg.norm(vals, axis=2)
        else:
            Tk = np.asarray(tr.tensors[k - 1])
            Tk = Tk[:, None] if Tk.ndim == k + 2 else Tk
            meas = batch_tensor_norm(Tk, k)
        prof = np.exp(-rate * t) if rate_model == "exponential" else \
            np.where(t > 0, t, 1.0) ** (-rate)
        ratio = meas / prof[:, None]
        rr = np.linalg.norm(x0, axis=1)
        keep = sel[:, None] & ((rr >= r_min) & (rr <= r_max))[None, :]
        if not keep.any():
            continue
        ratio = np.where(keep, ratio, -np.inf)
        i, j = np.unravel_index(np.argmax(ratio), ratio.shape)
        if ratio[i, j] > best:
            best, where = float(ratio[i, j]), (x0[j].copy(), float(t[i]))
    if where is None:
        raise UsageError("no samples to fit M_k")
    return best, where
