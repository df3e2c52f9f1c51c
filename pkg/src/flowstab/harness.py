"""Scenario files, the check registry, the check runner and time-series emission.

A scenario is a JSON document::

    {
      "name": "y2-component",
      "field": {"family": "Y2", "n": 1, "alpha": [0], "beta": [-1], "m": [2],
                "perturbation": {"kind": "ComponentPower", "gamma": 0.1}},
      "checks": ["lemma8", "lemma9"],
      "sampling": {"count": 20, "box": 1.5, "seed": 0, "t_max": 5.0, "n_times": 26},
      "integrator": {"rel_tol": 1e-10, "abs_tol": 1e-12},
      "options": {"rho": 1.5, "r_min": 0.05, "t0": 1.0, "k": 1},
      "output_dir": "out"
    }

Only ``field`` and ``checks`` are required.  Initial points are drawn from a
``numpy.random.Philox`` stream keyed by ``seed``: directions are standard
normals normalised to the unit sphere, radii are ``box * U**(1/n)``.
"""
import csv
import json
import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import __version__
from ._kernels import backend
from .errors import (CertificationError, FlowstabError, HypothesisError, UsageError,
                     ValidationError)
from .estimates import (LEMMA_FAMILIES, check_trajectory, corrupt_constants, default_slack,
                        derive_constants, envelope_constant_Mk, envelopes_for)
from .fields import K_MAX, build_field
from .stability import CompactBox, gas_certify
from .tensors import batch_tensor_norm
from .variational import IntegratorConfig, integrate_prolongation

REGISTRY = {
    "lemma1": "Lemma 1 (flow bound, globally bounded perturbation)",
    "lemma2": "Eq. (9)",
    "lemma3": "Eq. (11)",
    "lemma4": "Eq. (15)",
    "lemma5": "Eq. (18)",
    "lemma6": "Lemma 6 (derivative bound, global power perturbation)",
    "lemma7": "Eq. (20)–(21)",
    "lemma8": "Eq. (24)–(26)",
    "lemma9": "Eq. (27)–(28)",
    "lemma10": "Eq. (30)",
    "lemma11": "Eq. (31)",
    "lemma12": "Lemma 12 (flow decay, split perturbation)",
    "lemma13": "Lemma 13 (derivative decay, split perturbation)",
    "prop1": "Proposition 1 (GAS criterion)",
    "prop2": "Eq. (22)",
    "prop3": "Eq. (32)",
    "prop4": "Proposition 4 (GAS of order k, monomial fields)",
    "prop5": "Eq. (33)",
    "prop6": "Proposition 6 (derivative decay, linear plus monomial)",
}

FITTED = {"prop3": ("exponential", "b1"), "prop5": ("power", None), "prop6": ("exponential", "b_mag")}
STABILITY = ("prop1", "prop4")
FIT_MARGIN = 1.25
PRETTY_INDENT = 2


def _natural(s):
    return [int(t) if t.isdigit() else t for t in re.split(r"(\d+)", s)]


def list_checks():
    """Sorted ``(check id, reference)`` pairs."""
    return [(k, REGISTRY[k]) for k in sorted(REGISTRY, key=_natural)]


# ---------------------------------------------------------------------------
# scenario


@dataclass(frozen=True)
class Sampling:
    count: int = 20
    box: float = 1.5
    seed: int = 0
    t_max: float = 5.0
    n_times: int = 26

    def __post_init__(self):
        if self.count < 1 or self.n_times < 2:
            raise ValidationError("sampling needs count >= 1 and n_times >= 2")
        if not self.box > 0 or not self.t_max > 0:
            raise ValidationError("sampling box and t_max must be positive")


@dataclass(frozen=True)
class Scenario:
    field: dict
    checks: tuple
    sampling: Sampling = Sampling()
    integrator: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)
    output_dir: str = None
    name: str = "scenario"

    def __post_init__(self):
        unknown = [c for c in self.checks if c not in REGISTRY]
        if unknown:
            raise ValidationError(f"unknown check(s) {unknown}; see list-checks")
        if not self.checks:
            raise ValidationError("scenario selects no checks")

    @property
    def config(self):
        return IntegratorConfig(**self.integrator)

    def to_dict(self):
        d = asdict(self)
        d["checks"] = list(self.checks)
        return d


_TOP_KEYS = {"name", "field", "checks", "sampling", "integrator", "options", "output_dir"}


def _line_of(text, key):
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return None if m is None else text.count("\n", 0, m.start()) + 1


def scenario_from_dict(d, text=None, seed=None):
    def where(key):
        ln = _line_of(text, key) if text else None
        return f" (line {ln})" if ln else ""

    if not isinstance(d, dict):
        raise ValidationError("scenario must be a JSON object")
    extra = set(d) - _TOP_KEYS
    if extra:
        k = sorted(extra)[0]
        raise ValidationError(f"unknown scenario key {k!r}{where(k)}")
    for k in ("field", "checks"):
        if k not in d:
            raise ValidationError(f"scenario is missing {k!r}")
    checks = d["checks"]
    if isinstance(checks, str):
        checks = [checks]
    if checks == ["all"]:
        checks = [c for c, _ in list_checks()]
    try:
        samp = dict(d.get("sampling", {}))
        if seed is not None:
            samp["seed"] = seed
        sampling = Sampling(**samp)
    except TypeError as exc:
        raise ValidationError(f"bad sampling block{where('sampling')}: {exc}") from None
    try:
        IntegratorConfig(**d.get("integrator", {}))
    except TypeError as exc:
        raise ValidationError(f"bad integrator block{where('integrator')}: {exc}") from None
    try:
        return Scenario(dict(d["field"]), tuple(checks), sampling, dict(d.get("integrator", {})),
                        dict(d.get("options", {})), d.get("output_dir"),
                        d.get("name", "scenario"))
    except ValidationError as exc:
        raise ValidationError(f"{exc}{where('checks')}") from None


def load_scenario(path, seed=None):
    text = Path(path).read_text()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    return scenario_from_dict(d, text, seed)


def sample_points(n, count, box, seed, stream=0):
    """Philox-seeded points uniform in the ball of radius ``box``."""
    rng = np.random.Generator(np.random.Philox(key=seed, counter=[stream, 0, 0, 0]))
    d = rng.standard_normal((count, n))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = box * rng.uniform(size=count) ** (1.0 / n)
    return d * r[:, None]


# ---------------------------------------------------------------------------
# checks


@dataclass
class CheckResult:
    check_id: str
    reference: str
    status: str
    displays: list = field(default_factory=list)
    detail: dict = field(default_factory=dict)
    message: str = ""
    wall_clock: float = 0.0

    @property
    def failed(self):
        return self.status in ("fail", "error")

    def payload(self):
        return {"check_id": self.check_id, "reference": self.reference, "status": self.status,
                "message": self.message, "displays": self.displays, "detail": self.detail}


def _k_needed(envs):
    return max([e.order for e in envs] + [1])


def _opt(sc, name, default):
    return sc.options.get(name, default)


def _constants(sc, f, cid, k):
    """Derived constants, with the negative-control corruption of ``options.corrupt`` applied."""
    c = derive_constants(f, cid, k=k)
    name = dict(_opt(sc, "corrupt", {})).get(cid)
    if name:
        c = corrupt_constants(c, name, float(_opt(sc, "corrupt_factor", 0.2)))
    return c


def _run_envelopes(sc, f, cid):
    k = int(_opt(sc, "k", 1))
    c = _constants(sc, f, cid, k)
    env_opts = dict(rho=float(_opt(sc, "rho", sc.sampling.box)),
                    r_min=float(_opt(sc, "r_min", 0.05)), t0=float(_opt(sc, "t0", 1.0)), k=k)
    envs = envelopes_for(cid, c, **env_opts)
    cfg = sc.config
    X0 = sample_points(f.n, sc.sampling.count, sc.sampling.box, sc.sampling.seed)
    ts = np.linspace(0.0, sc.sampling.t_max, sc.sampling.n_times)
    traj = integrate_prolongation(f, X0, min(_k_needed(envs), K_MAX), sc.sampling.t_max, cfg,
                                  t_eval=ts)
    slack = default_slack(cfg)
    reports = [check_trajectory(e, traj, slack=slack) for e in envs]
    return c, reports


def _run_fitted(sc, f, cid):
    k = int(_opt(sc, "k", 1))
    c = _constants(sc, f, cid, k)
    model, rate_name = FITTED[cid]
    rate = getattr(c, rate_name) if rate_name else c.b1 / (c.a0 * c.m0_prime)
    rho = float(_opt(sc, "rho", sc.sampling.box))
    r_min = float(_opt(sc, "r_min", 0.05)) if cid == "prop5" else 0.0
    t0 = float(_opt(sc, "t0", 1.0)) if cid == "prop5" else 0.0
    cfg = sc.config
    ts = np.linspace(0.0, sc.sampling.t_max, sc.sampling.n_times)
    s = sc.sampling
    calib = integrate_prolongation(f, sample_points(f.n, s.count, s.box, s.seed, stream=1), k,
                                   s.t_max, cfg, t_eval=ts)
    M, where = envelope_constant_Mk([calib], k, model, rate, t0=t0, r_min=r_min, r_max=rho)
    M_used = FIT_MARGIN * M
    envs = envelopes_for(cid, c, rho=rho, r_min=r_min, t0=t0, M=M_used, k=k)
    valid = integrate_prolongation(f, sample_points(f.n, s.count, s.box, s.seed, stream=2), k,
                                   s.t_max, cfg, t_eval=ts)
    reports = [check_trajectory(e, valid, slack=default_slack(cfg)) for e in envs]
    fit = {"M_fitted": M, "M_used": M_used, "margin": FIT_MARGIN, "rate": rate, "model": model,
           "attained_at": {"x": [float(v) for v in where[0]], "t": where[1]}}
    return c, reports, fit


def _run_stability(sc, f, cid):
    r = 0 if cid == "prop1" else int(_opt(sc, "k", 1))
    rho = float(_opt(sc, "rho", sc.sampling.box))
    K = CompactBox.ball(f.n, rho, int(_opt(sc, "grid_per_axis", 11 if f.n > 1 else 41)))
    if "eps" in sc.options:
        eps = [float(e) for e in sc.options["eps"]]
    else:
        # thresholds relative to the weak norm of the identity on K
        start = rho if r == 0 else max(rho, 1.0)
        eps = [float(e) * start for e in _opt(sc, "eps_rel", [0.5, 0.1])]
    t_max = float(_opt(sc, "stability_t_max", max(sc.sampling.t_max, 100.0)))
    return gas_certify(f, K, r, t_max, eps, sc.config, field_id=sc.name)


def _constants_payload(c):
    d = {k: v for k, v in asdict(c).items() if v is not None}
    d["c"] = list(d.get("c", ()))
    d["m"] = list(d.get("m", ()))
    return d


def run_check(sc, f, cid):
    ref = REGISTRY[cid]
    t0 = time.perf_counter()
    res = CheckResult(cid, ref, "pass")
    try:
        if f.family not in LEMMA_FAMILIES[cid]:
            res.status = "not_applicable"
            res.message = f"{cid} does not apply to family {f.family.value}"
        elif cid in STABILITY:
            rep = _run_stability(sc, f, cid)
            res.detail = {"stability": rep.to_dict()}
            if not rep.verdict.startswith("GAS"):
                res.status = "fail"
                res.message = rep.verdict
        else:
            if cid in FITTED:
                c, reports, fit = _run_fitted(sc, f, cid)
                res.detail["fit"] = fit
            else:
                c, reports = _run_envelopes(sc, f, cid)
            res.detail["constants"] = _constants_payload(c)
            res.displays = [r.to_dict() for r in reports]
            if any(not r.passed for r in reports):
                res.status = "fail"
                res.message = "; ".join(f"{r.display}: {len(r.violations)} violation(s)"
                                        for r in reports if not r.passed)
            elif sum(r.samples_checked for r in reports) == 0:
                res.status = "not_applicable"
                res.message = "no sample fell inside any validity domain"
    except (HypothesisError, CertificationError) as exc:
        res.status = "hypothesis_unmet"
        res.message = str(exc)
    except FlowstabError as exc:
        res.status = "error"
        res.message = f"{type(exc).__name__}: {exc}"
    res.wall_clock = time.perf_counter() - t0
    return res


@dataclass
class RunReport:
    scenario: Scenario
    results: list
    environment: dict

    @property
    def exit_status(self):
        return 1 if any(r.failed for r in self.results) else 0

    def payload(self):
        return {"scenario": self.scenario.to_dict(), "environment": self.environment,
                "checks": [r.payload() for r in self.results],
                "summary": {r.check_id: r.status for r in self.results},
                "exit_status": self.exit_status}

    def timing(self):
        return {r.check_id: r.wall_clock for r in self.results}

    def write(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(
            json.dumps(self.payload(), indent=PRETTY_INDENT, sort_keys=True, default=_json_default)
            + "\n")
        (out / "timing.json").write_text(json.dumps(self.timing(), indent=PRETTY_INDENT) + "\n")
        return out


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")


def default_out_dir():
    return os.environ.get("FLOWSTAB_OUT", "flowstab_out")


def environment_stamp(sc):
    cfg = sc.config
    return {"version": __version__, "seed": sc.sampling.seed, "rel_tol": cfg.rel_tol,
            "abs_tol": cfg.abs_tol, "method": cfg.method, "backend": backend()}


def run(sc, jobs=1):
    """Execute every selected check; checks run concurrently up to ``jobs`` workers."""
    k_cert = max(int(sc.options.get("k", 1)), 1)
    f = build_field(sc.field, certify=True, k_max=k_cert)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(lambda c: run_check(sc, f, c), sc.checks))
    else:
        results = [run_check(sc, f, c) for c in sc.checks]
    return RunReport(sc, results, environment_stamp(sc))


def run_scenario(path, out_dir=None, jobs=1, seed=None):
    sc = load_scenario(path, seed)
    rep = run(sc, jobs)
    rep.write(out_dir or sc.output_dir or default_out_dir())
    return rep


# ---------------------------------------------------------------------------
# time series


def emit_timeseries(traj, path, index=None):
    """CSV with ``t``, state components and per-order jet norms (17 significant digits)."""
    t = np.asarray(traj.times)
    if len(t) == 0:
        raise UsageError("empty trajectory")
    vals = np.asarray(traj.values)
    tens = [np.asarray(T) for T in traj.tensors]
    if vals.ndim == 3:
        if index is None:
            raise UsageError("batched trajectory: pass the sample index to emit")
        vals = vals[:, index]
        tens = [T[:, index] for T in tens]
    n = vals.shape[1]
    header = ["t"] + [f"x{i + 1}" for i in range(n)] + [f"D{l}_norm" for l in range(1, len(tens) + 1)]
    cols = [t[:, None], vals] + [batch_tensor_norm(T, l)[:, None] for l, T in enumerate(tens, 1)]
    data = np.hstack(cols)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in data:
            w.writerow(["%.17g" % v for v in row])
    return Path(path)


def emit_for_scenario(sc, index, out_dir=None):
    f = build_field(sc.field, certify=False)
    k = int(sc.options.get("k", 1))
    X0 = sample_points(f.n, sc.sampling.count, sc.sampling.box, sc.sampling.seed)
    if not 0 <= index < len(X0):
        raise UsageError(f"trajectory id must lie in 0..{len(X0) - 1}")
    ts = np.linspace(0.0, sc.sampling.t_max, sc.sampling.n_times)
    traj = integrate_prolongation(f, X0[index], k, sc.sampling.t_max, sc.config, t_eval=ts)
    out = Path(out_dir or sc.output_dir or default_out_dir())
    out.mkdir(parents=True, exist_ok=True)
    return emit_timeseries(traj, out / f"trajectory_{index}.csv")
