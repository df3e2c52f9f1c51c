"""The nine acceptance criteria, one test each; every test prints a PASS/FAIL line."""
import json
from math import comb

import numpy as np
import pytest

from flowstab.closed_form import (ScalarFlowParams, closed_form_flow, monomial_deriv_coeffs,
                                  monomial_flow, picard_flow)
from flowstab.errors import DivergenceError
from flowstab.estimates import (check_trajectory, corrupt_constants, default_slack,
                                derive_constants, envelope_for, example2_constants)
from flowstab.fields import build_field
from flowstab.harness import run, run_scenario, sample_points, scenario_from_dict
from flowstab.lie import desk_pair, invert_bracket
from flowstab.stability import CompactBox, decay_rate_fit, gas_certify
from flowstab.variational import (IntegratorConfig, finite_difference_jet, integrate_flow,
                                  integrate_prolongation)


@pytest.fixture
def verdict(capsys):
    def emit(num, title, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {num} {'PASS' if ok else 'FAIL'}: {title} ({detail})")
        return ok
    return emit


def rng(stream):
    return np.random.Generator(np.random.Philox(key=2024, counter=[stream, 0, 0, 0]))


def test_1_closed_form_vs_integrator(verdict):
    g = rng(1)
    # pure relative error control: states decay to ~1e-6 over the horizon
    cfg = IntegratorConfig(rel_tol=1e-10, abs_tol=1e-20)
    worst = 0.0
    for kind in ("bernoulli", "monomial"):
        for _ in range(100):
            m = int(g.choice([2, 4]))
            beta = g.uniform(-2.0, 0.0)
            field = {"family": "X3", "n": 1, "alpha": [g.uniform(-3.0, -0.5)], "beta": [beta], "m": [m]}
            if kind == "monomial":
                field = {"family": "X2", "n": 1, "beta": [beta], "m": [m]}
            f = build_field(field)
            x0 = np.array([g.uniform(-2.0, 2.0)])
            t = g.uniform(0.0, 5.0)
            exact = closed_form_flow(f, x0, t)[0]
            num = integrate_flow(f, x0, t, cfg).final.value[0]
            worst = max(worst, abs(num - exact) / abs(exact))
    ok = verdict(1, "closed form vs integrator on 200 instances", worst <= 1e-8,
                 f"max relative disagreement {worst:.2e}, tolerance 1e-8")
    assert ok


def _central_kth(fn, x, k, h):
    return sum((-1) ** i * comb(k, i) * fn(x + (k / 2 - i) * h) for i in range(k + 1)) / h ** k


def test_2_derivative_recurrence(verdict):
    x, t, beta = 0.7, 1.0, -1.0
    worst, sums = 0.0, []
    for m in (2, 4):
        p = ScalarFlowParams(0.0, beta, m)
        flow = lambda y: monomial_flow(p, np.array([y]), t)[0]
        w = 1 - m * beta * t * x ** m
        for k in range(1, 5):
            a = monomial_deriv_coeffs(k, m)
            formula = x ** (1 - k) * w ** (-1 / m) * sum(a[j] * w ** (-j) for j in range(1, k + 1))
            h = 2e-2 if k > 1 else 1e-4
            d1, d2 = _central_kth(flow, x, k, h), _central_kth(flow, x, k, h / 2)
            fd = (4 * d2 - d1) / 3
            worst = max(worst, abs(fd - formula) / abs(formula))
            if k >= 2:
                sums.append(sum(a.coeffs))
    ok = worst <= 1e-4 and all(s == 0 for s in sums)
    verdict(2, "derivative coefficient recurrence vs finite differences, k <= 4, m in {2, 4}", ok,
            f"max relative error {worst:.2e}, coefficient sums {sorted(set(sums))}")
    assert ok


def _random_perturbed(g):
    n = int(g.integers(1, 4))
    family = str(g.choice(["Y2", "Y3"]))
    cfg = {"family": family, "n": n,
           "beta": list(g.uniform(-1.5, -0.3, n)), "m": [int(v) for v in g.choice([2, 4], n)],
           "perturbation": {"kind": str(g.choice(["Bounded", "LinearGrowth", "PowerInBall",
                                                   "ComponentPower"])),
                            "gamma": float(g.uniform(0.02, 0.2)),
                            "coupled": bool(g.integers(0, 2))}}
    if family == "Y3":
        cfg["alpha"] = list(g.uniform(-2.0, -0.5, n))
    return build_field(cfg, certify=False)


def test_3_prolongation_consistency(verdict):
    g = rng(3)
    worst = 0.0
    for _ in range(50):
        f = _random_perturbed(g)
        k = int(g.integers(1, 4))
        x0 = g.uniform(-1.0, 1.0, f.n)
        t = g.uniform(0.2, 2.0)
        jet = integrate_prolongation(f, x0, k, t, t_eval=[0.0, t]).final
        fd = finite_difference_jet(f, x0, t, k)
        for a, b in zip(jet.tensors, fd.tensors):
            worst = max(worst, float(np.max(np.abs(a - b))))
    ok = verdict(3, "prolongation vs finite-difference jets on 50 Y2/Y3 instances", worst <= 1e-4,
                 f"max absolute error {worst:.2e}, tolerance 1e-4")
    assert ok


ENVELOPE_CASES = {
    "lemma2": {"family": "Y1", "n": 1, "alpha": [-2.0],
               "perturbation": {"kind": "LinearGrowth", "gamma": 0.2}},
    "lemma3": {"family": "Y1", "n": 1, "alpha": [-2.0],
               "perturbation": {"kind": "PowerInBall", "gamma": 0.2, "power": 2}},
    "lemma4": {"family": "Y1", "n": 1, "alpha": [-1.5],
               "perturbation": {"kind": "Bounded", "gamma": 0.3}},
    "lemma6": {"family": "Y1", "n": 1, "alpha": [-2.0],
               "perturbation": {"kind": "PowerInBall", "gamma": 0.2, "power": 2}},
    "lemma7": {"family": "X2", "n": 1, "beta": [-1.0], "m": [2]},
    "prop2": {"family": "X2", "n": 1, "beta": [-0.8], "m": [4]},
    "lemma8": {"family": "Y2", "n": 1, "beta": [-1.0], "m": [2],
               "perturbation": {"kind": "ComponentPower", "gamma": 0.1}},
    "lemma9": {"family": "Y2", "n": 1, "beta": [-1.0], "m": [2],
               "perturbation": {"kind": "ComponentPower", "gamma": 0.1}},
    "lemma10": {"family": "Y3", "n": 1, "alpha": [-1.0], "beta": [-1.0], "m": [2],
                "perturbation": {"kind": "ComponentPower", "gamma": 0.1}},
    "lemma11": {"family": "Y3", "n": 1, "alpha": [-1.0], "beta": [-1.0], "m": [2],
                "perturbation": {"kind": "ComponentPower", "gamma": 0.1}},
}


def test_4_envelope_satisfaction(verdict):
    lines, ok = [], True
    for cid, field in ENVELOPE_CASES.items():
        sc = scenario_from_dict({"field": field, "checks": [cid],
                                 "sampling": {"count": 25, "box": 2.0, "seed": 11,
                                              "t_max": 5.0, "n_times": 41},
                                 "integrator": {"rel_tol": 1e-10, "abs_tol": 1e-12}})
        res = run(sc).results[0]
        checked = [d["samples_checked"] for d in res.displays]
        viol = sum(d["violation_count"] for d in res.displays)
        good = res.status == "pass" and viol == 0 and min(checked, default=0) >= 500
        ok &= good
        lines.append(f"{cid}: {viol} violations, min samples per display {min(checked, default=0)}")
    verdict(4, "envelope satisfaction, slack 1e-6 + 100 rel_tol", ok, "; ".join(lines))
    assert ok


def test_5_decay_rates(verdict):
    y1 = build_field({"family": "Y1", "n": 2, "alpha": [-2.0, -1.0],
                      "perturbation": {"kind": "Bounded", "gamma": 0.1}})
    c1 = derive_constants(y1, "lemma13")
    X0 = sample_points(2, 40, 1.5, 5)
    ts = np.linspace(1.0, 10.0, 46)
    tr = integrate_prolongation(y1, X0, 1, 10.0, t_eval=np.concatenate([[0.0], ts]))
    sup = np.linalg.norm(tr.tensors[0][1:], ord=2, axis=(2, 3)).max(axis=1)
    rate1 = decay_rate_fit(ts, sup, "exponential").rate
    ok1 = rate1 >= 0.9 * c1.b1

    y2 = build_field({"family": "Y2", "n": 1, "beta": [-1.0], "m": [2],
                      "perturbation": {"kind": "ComponentPower", "gamma": 0.05}})
    c2 = derive_constants(y2, "prop5")
    pred = c2.b1 / (c2.a0 * c2.m0_prime)
    # the window [1, 1e3] must start after the transient 1/(m b' |x|^m)
    X0 = sample_points(1, 40, 2.0, 5)
    X0 = X0[np.abs(X0[:, 0]) >= 1.0]
    ts = np.geomspace(1.0, 1e3, 61)
    tr = integrate_prolongation(y2, X0, 1, 1e3, t_eval=np.concatenate([[0.0], ts]))
    D = np.abs(tr.tensors[0][1:, :, 0, 0])
    slopes = [-decay_rate_fit(ts, D[:, j], "power").rate for j in range(len(X0))]
    ok2 = max(slopes) <= -0.9 * pred
    ok = ok1 and ok2
    verdict(5, "decay rates against predicted rates", ok,
            f"Y1 exponential rate {rate1:.4f} vs 0.9 b1 = {0.9 * c1.b1:.4f}; "
            f"Y2 log-log slope max {max(slopes):.4f} over {len(X0)} trajectories vs "
            f"-0.9 b1/(a0 m0') = {-0.9 * pred:.4f}")
    assert ok


def test_6_order_r_gas(verdict):
    f = build_field({"family": "X3", "n": 2, "alpha": [-1.0, -1.0], "beta": [-1.0, -1.0],
                     "m": [2, 2]})
    c = derive_constants(f, "example2")
    M = max(example2_constants(c, 2.0).values())
    eps = [2.0, 1.0, 0.5, 0.1, 0.05, 0.01, 1e-3]
    rep = gas_certify(f, CompactBox.ball(2, 2.0, 21), 2, 12.0, eps, extra_times=(5.0, 10.0))
    slack = default_slack()
    vals = {t: rep.norm_at(t) for t in (5.0, 10.0)}
    env = {t: M * np.exp(c.b * t) for t in (5.0, 10.0)}
    Ts = [rep.T_K(e) for e in eps]
    monotone = all(T is not None for T in Ts) and all(a >= b for a, b in zip(Ts[::-1], Ts[-2::-1]))
    ok = all(vals[t] <= env[t] + slack for t in vals) and monotone
    verdict(6, "order-2 GAS of the two-dimensional Bernoulli field on B(0, 2)", ok,
            ", ".join(f"t={t:g}: norm {vals[t]:.4e} (covered {rep.norm_at(t, upper=True):.4e}) "
                      f"<= M e^(bt) {env[t]:.4e}" for t in vals)
            + f"; T_K nonincreasing in eps: {monotone}")
    assert ok


def test_7_bracket_inversion(verdict):
    X, Z = desk_pair()
    res = invert_bracket(X, Z, T=40.0, quad_tol=1e-8, samples=np.linspace(-1, 1, 41)[:, None])
    Xm = build_field({"family": "X1", "n": 1, "alpha": [-1.0]}, certify=False)
    growth = None
    try:
        invert_bracket(Xm, Z, T=40.0, quad_tol=1e-8)
    except DivergenceError as exc:
        growth = exc.growth_rate
    ok = res.sup_residual <= 1e-6 and growth is not None and abs(growth - 1.0) <= 0.1
    verdict(7, "bracket inversion and divergence detection", ok,
            f"sup residual {res.sup_residual:.2e} with sigma {res.sigma:+d}; "
            f"divergent pair growth rate {growth}")
    assert ok


def test_8_picard(verdict):
    g = rng(8)
    worst, count, tries = 0.0, 0, 0
    while count < 20:
        tries += 1
        n = int(g.integers(1, 3))
        family = str(g.choice(["Y2", "Y3"]))
        cfg = {"family": family, "n": n, "beta": list(g.uniform(-1.5, -0.5, n)),
               "m": [int(v) for v in g.choice([2, 4], n)],
               "perturbation": {"kind": "ComponentPower", "gamma": float(g.uniform(0.01, 0.1))}}
        if family == "Y3":
            cfg["alpha"] = list(g.uniform(-1.5, -0.5, n))
        f = build_field(cfg)
        if not f.perturbation.certificate.classes["component_split"].satisfied:
            continue
        x0 = g.uniform(-1.5, 1.5, n)
        t = g.uniform(0.5, 3.0)
        v, rep = picard_flow(f, x0, t)
        ref = integrate_flow(f, x0, t).final.value
        worst = max(worst, float(np.max(np.abs(v - ref))))
        count += 1
    zero_err = 0.0
    for family in ("Y2", "Y3"):
        cfg = {"family": family, "n": 2, "beta": [-1.0, -0.5], "m": [2, 4],
               "perturbation": {"kind": "Zero"}}
        if family == "Y3":
            cfg["alpha"] = [-1.0, -0.7]
        f = build_field(cfg)
        x0 = np.array([0.9, -1.3])
        v, _ = picard_flow(f, x0, 2.0)
        zero_err = max(zero_err, float(np.max(np.abs(v - closed_form_flow(f, x0, 2.0)))))
    ok = worst <= 1e-6 and zero_err <= 1e-12
    verdict(8, "Picard iteration vs integrator and closed forms", ok,
            f"max error {worst:.2e} on {count} contraction-valid instances; "
            f"zero perturbation error {zero_err:.2e}")
    assert ok


def test_9_negative_control(verdict, tmp_path):
    field = {"family": "Y2", "n": 1, "beta": [-1.0], "m": [2],
             "perturbation": {"kind": "ComponentPower", "gamma": 0.1}}
    f = build_field(field)
    bad = corrupt_constants(derive_constants(f, "lemma8"), "b0", 0.2)
    X0 = sample_points(1, 25, 2.0, 0)
    traj = integrate_prolongation(f, X0, 1, 5.0, t_eval=np.linspace(0, 5, 26))
    rep = check_trajectory(envelope_for("lemma8", bad, "Eq. (24)"), traj)
    path = tmp_path / "neg.json"
    path.write_text(json.dumps({"field": field, "checks": ["lemma8"],
                                "options": {"corrupt": {"lemma8": "b0"}}}))
    status = run_scenario(path, tmp_path / "out").exit_status
    ok = len(rep.violations) >= 1 and status != 0
    verdict(9, "negative control, lemma 8 b0 raised by 20%", ok,
            f"{len(rep.violations)} violations, harness exit status {status}")
    assert ok
