import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, strategies as st

from flowstab.closed_form import ScalarFlowParams, monomial_kth_derivative
from flowstab.errors import CapabilityError, IntegrationError, ValidationError
from flowstab.fields import K_MAX, build_field, eval_field_jet
from flowstab.tensors import symmetry_residual
from flowstab.variational import (IntegratorConfig, chain_source_term, composition_weight,
                                  compositions, finite_difference_jet, integrate_flow,
                                  integrate_prolongation)

X1 = {"family": "X1", "n": 2, "alpha": [-1.0, -2.0]}
X2 = {"family": "X2", "n": 1, "beta": [-1.0], "m": [2]}


def field(cfg, k=0):
    return build_field(cfg, certify=False)


def y_field(kind, family, n, gamma=0.1, coupled=False):
    cfg = {"family": family, "n": n,
           "perturbation": {"kind": kind, "gamma": gamma, "coupled": coupled}}
    if family == "Y3":
        cfg["alpha"] = [-1.0 - 0.3 * i for i in range(n)]
    cfg["beta"] = [-1.0 - 0.5 * i for i in range(n)]
    cfg["m"] = [2 + 2 * (i % 2) for i in range(n)]
    return build_field(cfg, certify=False)


def test_flow_examples():
    f = field({"family": "X1", "n": 1, "alpha": [-1.0]})
    assert integrate_flow(f, np.array([1.0]), 1.0).final.value[0] == pytest.approx(math.exp(-1), rel=1e-9)
    g = field(X2)
    assert integrate_flow(g, np.array([1.0]), 1.0).final.value[0] == pytest.approx(3 ** -0.5, rel=1e-8)
    h = y_field("ComponentPower", "Y3", 2)
    tr = integrate_flow(h, np.zeros(2), 3.0)
    assert not np.any(tr.values)


def test_flow_blowup_reports_last_time():
    f = build_field({"family": "Y1", "n": 1, "alpha": [-1.0],
                     "perturbation": {"kind": "PowerInBall", "gamma": 1.0}}, certify=False)
    with pytest.raises(IntegrationError) as exc:
        integrate_flow(f, np.array([3.0]), 5.0)
    assert 0 < exc.value.last_time < 5.0


def test_time_grid_must_start_at_zero():
    with pytest.raises(ValidationError):
        integrate_flow(field(X2), np.array([1.0]), (1.0, 2.0))


def test_prolongation_linear():
    f = field(X1)
    tr = integrate_prolongation(f, np.array([0.4, -1.1]), 2, 2.0)
    for i, t in enumerate(tr.times):
        np.testing.assert_allclose(tr.tensors[0][i], np.diag(np.exp([-t, -2 * t])), rtol=1e-9, atol=1e-14)
    assert np.max(np.abs(tr.tensors[1])) < 1e-14


def test_prolongation_monomial_first_derivative():
    tr = integrate_prolongation(field(X2), np.array([0.7]), 1, 1.0)
    w = 1 + 2 * 0.49
    assert tr.final.tensors[0][0, 0] == pytest.approx(w ** -1.5, rel=1e-8)


@pytest.mark.parametrize("k", [2, 3, 4])
def test_prolongation_monomial_higher(k):
    tr = integrate_prolongation(field(X2), np.array([0.7]), k, 1.0)
    ref = monomial_kth_derivative(ScalarFlowParams(0.0, -1.0, 2), np.array([0.7]), 1.0, k)[0]
    assert tr.final.tensors[k - 1].ravel()[0] == pytest.approx(ref, rel=1e-7)


@pytest.mark.parametrize("kind,coupled", [("ComponentPower", True), ("Bounded", True),
                                          ("LinearGrowth", False), ("PowerInBall", True)])
def test_prolongation_matches_differences(kind, coupled):
    f = y_field(kind, "Y2", 2, coupled=coupled)
    x = np.array([0.6, -0.5])
    tr = integrate_prolongation(f, x, 3, 1.0)
    fd = finite_difference_jet(f, x, 1.0, 3)
    for a, b in zip(tr.final.tensors, fd.tensors):
        np.testing.assert_allclose(a, b, atol=1e-4)


def test_prolongation_capability():
    with pytest.raises(CapabilityError):
        integrate_prolongation(field(X2), np.array([0.5]), K_MAX + 1, 1.0)


def test_batch_equals_single():
    f = y_field("ComponentPower", "Y3", 2, coupled=True)
    X = np.array([[0.3, -0.2], [1.0, 0.4]])
    tb = integrate_prolongation(f, X, 2, 1.0)
    for j in range(2):
        ts = integrate_prolongation(f, X[j], 2, 1.0)
        np.testing.assert_allclose(tb.values[:, j], ts.values, atol=1e-12)
        np.testing.assert_allclose(tb.tensors[1][:, j], ts.tensors[1], atol=1e-12)


def test_identity_at_start():
    f = y_field("Bounded", "Y2", 2, coupled=True)
    tr = integrate_prolongation(f, np.array([0.5, 0.5]), 3, 1e-12, t_eval=[0.0, 1e-12])
    np.testing.assert_array_equal(tr.tensors[0][0], np.eye(2))
    assert not tr.tensors[1][0].any() and not tr.tensors[2][0].any()
    np.testing.assert_allclose(tr.tensors[0][1], np.eye(2), atol=1e-10)
    assert np.max(np.abs(tr.tensors[2][1])) < 1e-10


def test_zero_perturbation_stays_diagonal():
    f = field({"family": "X3", "n": 3, "alpha": [-1, -0.5, -2], "beta": [-1, -0.2, 0], "m": [2, 4, 2]})
    tr = integrate_prolongation(f, np.array([0.7, -1.2, 0.3]), 3, 2.0)
    cfg = IntegratorConfig()
    for l, T in enumerate(tr.tensors, 1):
        off = T.copy()
        idx = np.arange(3)
        off[(slice(None), idx) + (idx,) * l] = 0
        assert np.max(np.abs(off)) <= 10 * cfg.abs_tol


def test_compositions():
    assert sorted(compositions(3, 2)) == [(1, 2), (2, 1)]
    assert list(compositions(4, 4)) == [(1, 1, 1, 1)]
    # weights reproduce the Faa di Bruno / Bell-polynomial coefficients
    assert sum(composition_weight(p) for p in compositions(3, 2)) == 3
    assert sum(composition_weight(p) for p in compositions(4, 2)) == 7
    assert sum(composition_weight(p) for p in compositions(4, 3)) == 6


def test_source_term_small_orders():
    J = [np.zeros(1), np.array([[-2.0]]), np.array([[[5.0]]])]
    F = [np.array([[0.3]])]
    assert not chain_source_term(J, F, 1).any()
    assert chain_source_term(J, F, 2)[0, 0, 0] == pytest.approx(5.0 * 0.09)


def test_source_term_third_order_symbolic():
    x = sp.symbols("x")
    g = sp.Rational(7, 10) * x + sp.Rational(1, 3) * x ** 2 - sp.Rational(1, 5) * x ** 3
    y = sp.symbols("y")
    Y = -y ** 3 - sp.Rational(1, 2) * y ** 5
    comp = Y.subs(y, g)
    x0 = sp.Rational(2, 5)
    y0 = g.subs(x, x0)
    ref = sp.diff(comp, x, 3) - sp.diff(Y, y).subs(y, y0) * sp.diff(g, x, 3)
    ref = float(ref.subs(x, x0))
    jets = [np.array([float(Y.subs(y, y0))])] + [np.array(float(sp.diff(Y, y, l).subs(y, y0))).reshape((1,) * (l + 1)) for l in range(1, 4)]
    flow = [np.array(float(sp.diff(g, x, i).subs(x, x0))).reshape((1,) * (i + 1)) for i in (1, 2)]
    assert chain_source_term(jets, flow, 3).ravel()[0] == pytest.approx(ref, abs=1e-8)


def test_finite_difference_examples():
    f = field(X1)
    jet = finite_difference_jet(f, np.array([0.3, 0.8]), 1.0, 2)
    np.testing.assert_allclose(jet.tensors[0], np.diag(np.exp([-1.0, -2.0])), atol=1e-10)
    assert np.max(np.abs(jet.tensors[1])) < 1e-8
    g = field(X2)
    jet = finite_difference_jet(g, np.array([0.7]), 1.0, 3)
    ref = monomial_kth_derivative(ScalarFlowParams(0.0, -1.0, 2), np.array([0.7]), 1.0, 3)[0]
    assert jet.tensors[2].ravel()[0] == pytest.approx(ref, abs=1e-4)


@st.composite
def cases(draw):
    n = draw(st.integers(1, 3))
    family = draw(st.sampled_from(["Y1", "Y2", "Y3"]))
    kind = draw(st.sampled_from(["Bounded", "LinearGrowth", "PowerInBall", "ComponentPower"]))
    cfg = {"family": family, "n": n,
           "perturbation": {"kind": kind, "gamma": draw(st.floats(0, 0.2)),
                            "coupled": draw(st.booleans())}}
    if family != "Y2":
        cfg["alpha"] = draw(st.lists(st.floats(-2, -0.5), min_size=n, max_size=n))
    if family != "Y1":
        cfg["beta"] = draw(st.lists(st.floats(-1.5, -0.2), min_size=n, max_size=n))
        cfg["m"] = draw(st.lists(st.sampled_from([2, 4]), min_size=n, max_size=n))
    x0 = np.array(draw(st.lists(st.floats(-1, 1), min_size=n, max_size=n)))
    return build_field(cfg, certify=False), x0, draw(st.floats(0.1, 3.0))


@given(cases())
def test_variational_consistency(case):
    f, x0, t = case
    tr = integrate_prolongation(f, x0, 1, t, t_eval=[0.0, t])
    fd = finite_difference_jet(f, x0, t, 1)
    np.testing.assert_allclose(tr.final.tensors[0], fd.tensors[0], atol=1e-6)


@given(cases())
def test_jets_are_symmetric(case):
    f, x0, t = case
    tr = integrate_prolongation(f, x0, 3, t, t_eval=[0.0, t / 2, t])
    for T in tr.tensors:
        for i in range(len(tr.times)):
            assert symmetry_residual(T[i]) <= 1e-12 * max(1.0, np.max(np.abs(T[i])))
