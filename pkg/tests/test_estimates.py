import math
from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from flowstab.errors import HypothesisError, UsageError
from flowstab.estimates import (LEMMA_CLASS, check_trajectory, corrupt_constants, default_slack,
                                derive_constants, envelope_constant_Mk, envelope_for,
                                envelopes_for)
from flowstab.fields import build_field
from flowstab.harness import sample_points
from flowstab.variational import integrate_flow, integrate_prolongation


class _Cert:
    def __init__(self, c):
        self.c = c
        self.classes = {"norm_split": SimpleNamespace(satisfied=True)}

    def constants(self, cls):
        return self.c


def with_constants(f, c):
    """Same field data with certified constants replaced by ``c``."""
    pert = SimpleNamespace(certificate=_Cert(tuple(c)), zero_exponent=lambda prof: 2)
    return SimpleNamespace(family=f.family, profile=f.profile, is_zero_perturbation=False,
                           perturbation=pert, n=f.n)


def y(family, alpha=None, beta=None, m=None, kind="ComponentPower", gamma=0.05, coupled=False):
    cfg = {"family": family, "n": len(alpha or beta),
           "perturbation": {"kind": kind, "gamma": gamma, "coupled": coupled}}
    if alpha is not None:
        cfg["alpha"] = alpha
    if beta is not None:
        cfg["beta"], cfg["m"] = beta, m
    return build_field(cfg)


def sample_traj(f, k=1, count=100, box=1.5, t_max=5.0, n_times=26, seed=0):
    X0 = sample_points(f.n, count, box, seed)
    return integrate_prolongation(f, X0, k, t_max, t_eval=np.linspace(0, t_max, n_times))


Y1 = y("Y1", alpha=[-3.0, -1.0], kind="Bounded", gamma=0.1)
Y2_1D = y("Y2", beta=[-1.0], m=[2])
X2 = build_field({"family": "X2", "n": 1, "beta": [-1.0], "m": [2]})


def test_lemma2_arithmetic():
    c = derive_constants(with_constants(Y1, (0.5, 0.5)), "lemma2")
    assert (c.a, c.b) == (-3.0, -1.0)
    assert (c.a0, c.b0) == (-3.5, -0.5)


def test_lemma9_arithmetic():
    f = y("Y2", beta=[-2.0, -3.0], m=[2, 2])
    c = derive_constants(with_constants(f, (0.1, 0.1)), "lemma9")
    assert c.a_prime == 3.0 and c.b_prime == 2.0
    f = y("Y2", beta=[-2.0], m=[2])
    c = derive_constants(with_constants(f, (0.1, 0.1)), "lemma9")
    assert c.a1 == pytest.approx(6.1, abs=1e-15)
    assert c.conditions["b1 > 0"] and "b1 > a0 m0_prime" in c.conditions


def test_lemma8_hypothesis_error():
    with pytest.raises(HypothesisError, match="b0 > 0"):
        derive_constants(with_constants(Y2_1D, (1.0, 0.1)), "lemma8")
    with pytest.raises(HypothesisError):
        derive_constants(with_constants(Y2_1D, (1.5, 0.1)), "lemma8")


def test_unknown_and_mismatched():
    with pytest.raises(UsageError):
        derive_constants(Y1, "lemma99")
    with pytest.raises(UsageError):
        derive_constants(Y1, "lemma8")


def test_derivation_is_bit_identical():
    for lid in ("lemma2", "lemma4", "lemma5"):
        assert derive_constants(Y1, lid) == derive_constants(Y1, lid)
    assert derive_constants(Y2_1D, "lemma9") == derive_constants(Y2_1D, "lemma9")


def test_linear_envelope_tight():
    f = build_field({"family": "X1", "n": 2, "alpha": [-1.0, -1.0]})
    e = envelope_for("linear", derive_constants(f, "linear"))
    t = np.linspace(0, 3, 7)
    np.testing.assert_allclose(e.lower(t, 1.3), 1.3 * np.exp(-t), rtol=1e-15)
    np.testing.assert_allclose(e.upper(t, 1.3), 1.3 * np.exp(-t), rtol=1e-15)
    rep = check_trajectory(e, sample_traj(f, count=20), slack=1e-9)
    assert rep.passed and rep.samples_checked == 20 * 26


def test_monomial_flow_bounds_start_at_identity():
    e = envelope_for("lemma7", derive_constants(X2, "lemma7"), "Eq. (20)")
    r = np.array([0.1, 1.0, 2.5])
    np.testing.assert_array_equal(e.lower(0.0, r), r)
    np.testing.assert_array_equal(e.upper(0.0, r), r)


def test_monomial_derivative_upper_value():
    c = replace(derive_constants(Y2_1D, "lemma9"), a0=1.0, m0_prime=2)
    e = envelope_for("lemma9", c, "Eq. (27)")
    assert e.upper(1.0, 1.0) == pytest.approx(3.0 ** (-c.b1 / 2), rel=1e-14)


def test_display_lookup_error():
    with pytest.raises(UsageError):
        envelope_for("lemma7", derive_constants(X2, "lemma7"), "Eq. (99)")


@pytest.mark.parametrize("lid,f", [("lemma2", Y1), ("lemma4", Y1), ("lemma7", X2),
                                   ("lemma8", Y2_1D), ("lemma9", Y2_1D)])
def test_envelopes_hold_on_samples(lid, f):
    traj = sample_traj(f)
    for e in envelopes_for(lid, derive_constants(f, lid)):
        rep = check_trajectory(e, traj, slack=default_slack())
        assert rep.passed, (e.display, rep.violations[:3])
        assert rep.samples_checked > 0


def test_componentwise_bounds_any_dimension():
    f = y("Y2", beta=[-1.0, -0.5], m=[2, 4], gamma=0.05)
    e = envelope_for("lemma8", derive_constants(f, "lemma8"), "Eq. (26)")
    rep = check_trajectory(e, sample_traj(f), what="component")
    assert rep.passed and rep.samples_checked == 2 * 100 * 26


@pytest.mark.parametrize("lid,f,name", [("lemma2", Y1, "b0"), ("lemma7", X2, "b_prime"),
                                        ("lemma8", Y2_1D, "b0")])
def test_negative_controls(lid, f, name):
    bad = corrupt_constants(derive_constants(f, lid), name)
    traj = sample_traj(f)
    reps = [check_trajectory(e, traj) for e in envelopes_for(lid, bad)]
    assert any(not r.passed for r in reps)


def test_sign_flipped_rates():
    c = derive_constants(Y2_1D, "lemma8")
    traj = sample_traj(Y2_1D)
    # flipping the lower-bound rate turns decay into growth: caught
    e = envelope_for("lemma8", replace(c, a0=-c.a0), "Eq. (24)")
    assert not check_trajectory(e, traj).passed
    # flipping the upper-bound rate only loosens that side (blowup -> inf)
    e = envelope_for("lemma8", replace(c, b0=-c.b0), "Eq. (24)")
    rep = check_trajectory(e, traj)
    assert rep.passed and np.isinf(e.upper(10.0, 1.0))


def test_undefined_bound_is_a_violation():
    c = derive_constants(X2, "lemma7")
    e = envelope_for("lemma7", c, "Eq. (20)")
    e = replace(e, upper=lambda t, r, axis=None: np.full(np.broadcast(t, r).shape, np.nan))
    rep = check_trajectory(e, sample_traj(X2, count=5))
    assert not rep.passed and {v["side"] for v in rep.violations} == {"undefined"}


def test_violations_sorted_and_bounded():
    e = envelope_for("lemma8", corrupt_constants(derive_constants(Y2_1D, "lemma8"), "b0"), "Eq. (24)")
    rep = check_trajectory(e, sample_traj(Y2_1D))
    keys = [(v["t"], v["x"], v["side"]) for v in rep.violations]
    assert keys == sorted(keys)
    assert rep.max_violation_magnitude == max(v["magnitude"] for v in rep.violations)


def test_what_mismatch():
    e = envelope_for("lemma7", derive_constants(X2, "lemma7"), "Eq. (21)")
    with pytest.raises(UsageError):
        check_trajectory(e, sample_traj(X2), what="flow_norm")
    with pytest.raises(UsageError):
        check_trajectory(e, integrate_flow(X2, np.array([0.5]), 1.0))


def test_mk_linear():
    f = build_field({"family": "X1", "n": 1, "alpha": [-1.0]})
    M, (x0, t) = envelope_constant_Mk([sample_traj(f)], 1, "exponential", 1.0)
    assert M == pytest.approx(1.0, rel=1e-8)


def test_mk_power_finite():
    M, _ = envelope_constant_Mk([sample_traj(X2)], 1, "power", 0.5, t0=1.0, r_min=0.05)
    assert 0 < M < np.inf


def test_mk_empty():
    with pytest.raises(UsageError):
        envelope_constant_Mk([], 1, "exponential", 1.0)
    with pytest.raises(UsageError):
        envelope_constant_Mk([sample_traj(X2)], 1, "exponential", 1.0, r_min=10.0)


ORDER_CASES = [("linear", build_field({"family": "X1", "n": 1, "alpha": [-0.7]})),
               ("lemma2", Y1), ("lemma4", Y1), ("lemma5", Y1),
               ("lemma7", X2), ("lemma8", Y2_1D), ("lemma9", Y2_1D)]


@pytest.mark.parametrize("lid,f", ORDER_CASES)
def test_lower_below_upper_on_grid(lid, f):
    T, R = np.meshgrid(np.linspace(0, 10, 40), np.linspace(0.05, 2, 25), indexing="ij")
    for e in envelopes_for(lid, derive_constants(f, lid)):
        ok = e.domain.mask(T, R, 1)
        axis = 0 if e.quantity == "component" else None
        with np.errstate(all="ignore"):
            lo, up = e.lower(T, R, axis), e.upper(T, R, axis)
        assert np.all(np.broadcast_to(lo, T.shape)[ok] <= np.broadcast_to(up, T.shape)[ok] * (1 + 1e-12))


@given(st.floats(-3, -0.2), st.floats(0.0, 2.0), st.floats(0, 0.3))
def test_lemma2_arithmetic_property(alpha_lo, spread, c0):
    f = y("Y1", alpha=[alpha_lo, alpha_lo + spread * (-alpha_lo) / 2.0], kind="Bounded")
    c = derive_constants(with_constants(f, (c0, c0)), "lemma2")
    assert c.a0 == c.a - c0 and c.b0 == c.b + c0


def test_every_registered_lemma_has_a_class_entry():
    for i in range(1, 14):
        assert f"lemma{i}" in LEMMA_CLASS
