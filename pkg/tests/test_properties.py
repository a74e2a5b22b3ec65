import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from doasim.control import ControllerConfig, decode_agent, search_dim
from doasim.fracops import DERIVATIVE, INTEGRAL, FracOperator
from doasim.fuzzy import INPUT_DEFAULT, MIN_GAP, OUTPUT_DEFAULT, MembershipSet, RuleBase, decode_mf, encode_mf, infer
from doasim.pkpd import PatientProfile, PdParams, bis_of
from doasim.simloop import SimConfig, compute_metrics, run_sim

finite = st.floats(-1e3, 1e3, allow_nan=False)
unit = st.floats(-1.5, 1.5, allow_nan=False)
orders = st.floats(0.05, 1.95)


@given(e=unit, de=unit)
def test_fuzzy_antisymmetric_and_bounded(e, de):
    sets = (RuleBase.default(), MembershipSet(INPUT_DEFAULT), MembershipSet(INPUT_DEFAULT),
            MembershipSet(OUTPUT_DEFAULT))
    g = infer(e, de, *sets)
    h = infer(-e, -de, *sets)
    assert all(0 <= v <= 1 for v in g)
    assert np.max(np.abs(np.add(g, h) - 1)) < 1e-9


@given(arrays(np.float64, 9, elements=st.floats(-1, 1)))
def test_mf_encoding_is_ordered(v):
    geom = encode_mf(v)
    for s in (geom.error, geom.rate, geom.output):
        assert np.all(np.diff(s.centers) >= MIN_GAP - 1e-12)
    assert np.allclose(decode_mf(encode_mf(decode_mf(geom))), decode_mf(geom), atol=1e-12)


@given(order=orders, kind=st.sampled_from([INTEGRAL, DERIVATIVE]),
       xs=st.lists(finite, min_size=1, max_size=40), c=st.floats(-10, 10))
def test_fractional_operator_homogeneous(order, kind, xs, c):
    a = FracOperator(order, kind, 0.01, memory_len=16)
    b = FracOperator(order, kind, 0.01, memory_len=16)
    for x in xs:
        ya, yb = a.apply(c * x), b.apply(x)
    assert math.isclose(ya, c * yb, rel_tol=1e-9, abs_tol=1e-6)


@given(ce=st.floats(0, 100), ec50=st.floats(0.5, 10), gamma=st.floats(1, 5))
def test_bis_in_range(ce, ec50, gamma):
    b = bis_of(ce, PdParams(ec50=ec50, gamma=gamma))
    assert 0 <= b <= 100


@given(age=st.floats(18, 90), weight=st.floats(40, 140), height=st.floats(150, 200),
       sex=st.sampled_from(["male", "female"]))
def test_pk_rates_positive(age, weight, height, sex):
    pk = PatientProfile(1, age, weight, height, sex).pk
    assert min(pk.rates()) > 0


@given(variant=st.sampled_from(["pid", "fopid", "fofpid"]), data=st.data())
def test_decode_agent_total(variant, data):
    v = data.draw(arrays(np.float64, search_dim(variant), elements=st.floats(-0.5, 1.5)))
    cfg = decode_agent(v, variant)
    assert isinstance(cfg, ControllerConfig)


@given(arrays(np.float64, st.integers(2, 400), elements=st.floats(0, 100)), st.floats(0.5, 10))
def test_metric_identities(bis, tol):
    t = np.arange(len(bis)) * 0.01
    series = np.column_stack([t, bis])
    m = compute_metrics(series, SimConfig(settle_tol=tol))
    assert m.cost == m.iae + m.itae and m.iae >= 0 and m.itae >= 0
    wider = compute_metrics(series, SimConfig(settle_tol=tol * 1.5))
    if m.settled:
        assert wider.settled and wider.settling_time <= m.settling_time


@settings(max_examples=15, deadline=None)
@given(kp=st.floats(0, 2), ki=st.floats(0, 1), kd=st.floats(0, 1), alpha=orders, beta=orders)
def test_closed_loop_outputs_feasible(kp, ki, kd, alpha, beta):
    p = PatientProfile(1, 30, 70, 170, "male")
    rep = run_sim(p, ControllerConfig("fopid", kp=kp, ki=ki, kd=kd, alpha=alpha, beta=beta), SimConfig(horizon=3))
    assert np.all((rep.u >= 0) & (rep.u <= 200)) and np.all(np.isfinite(rep.bis))
    assert np.all((rep.bis > 0) & (rep.bis <= 100))
