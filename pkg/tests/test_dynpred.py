import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jmsl.core import SubjectRecord
from jmsl.dynpred import (
    PredictionRequest,
    conditional_random_effects,
    dynamic_risk,
    plan_for,
    predict_pairs,
    required_evaluations,
    sample_random_effects,
)
from jmsl.errors import NumericalError, PreconditionError
from jmsl.jointmodel import (
    FormSpec,
    JointModel,
    JointModelSpec,
    ParameterVector,
    PosteriorDraws,
    cumulative_hazard,
)
from jmsl.numerics import SplineBasis

BASE = SplineBasis((4.0, 8.0, 12.0, 16.0, 20.0), (0.0, 24.0), 3)


def model(**kw):
    return JointModel(JointModelSpec(**kw), BASE, ())


def theta(m, log_h=-3.0, alpha=0.0, beta=(2.0, -0.25), D=((0.8, -0.05), (-0.05, 0.04)), sigma=0.35):
    return ParameterVector(beta=beta, sigma=sigma, gamma_h0=np.full(m.n_baseline, log_h), gamma=[],
                           alpha=np.full(m.n_alpha, alpha), D=D if m.q else np.zeros((0, 0)), tau=1.0)


def record(T=20.0, event=0, times=None, values=None):
    times = np.arange(0.0, 15.0) if times is None else np.asarray(times, dtype=float)
    values = 2.0 - 0.25 * times if values is None else values
    return SubjectRecord(7, [], times, values, T, event)


def test_risk_zero_at_anchor():
    m = model()
    post = PosteriorDraws.from_theta(m, theta(m))
    res = dynamic_risk(post, PredictionRequest(record(), 5.0, (5.0, 6.0), mc_draws=20))
    assert res.risk[0] == 0.0 and res.risk[1] > 0


@pytest.mark.parametrize("t,u", [(0.0, 1.0), (2.0, 5.0), (5.0, 5.5), (10.0, 14.0), (12.5, 19.0)])
def test_constant_hazard_closed_form(t, u):
    h = 0.05
    m = model()
    post = PosteriorDraws.from_theta(m, theta(m, log_h=math.log(h)))
    res = dynamic_risk(post, PredictionRequest(record(), t, (u,), mc_draws=200, seed=3))
    expect = 1 - math.exp(-h * (u - t))
    assert abs(res.risk[0] - expect) <= 3 * res.se[0] + 1e-9


def test_varying_hazard_draws_average():
    m = model()
    hs = np.exp(np.linspace(-4, -2, 10))
    post = PosteriorDraws.from_theta(m, [theta(m, log_h=math.log(h)) for h in hs])
    res = dynamic_risk(post, PredictionRequest(record(), 3.0, (7.0,), mc_draws=200))
    expect = 1 - np.mean(np.exp(-hs * 4.0))
    assert abs(res.risk[0] - expect) <= 3 * res.se[0] + 1e-9


def test_no_random_effects_exact():
    m = model(random_effects=False, forms=(FormSpec("value"),))
    th = theta(m, alpha=0.4)
    th.gamma_h0 = np.linspace(-5, -2, m.n_baseline)
    post = PosteriorDraws.from_theta(m, th)
    for t, u in ((1.0, 4.0), (6.0, 13.0), (15.0, 23.0)):
        res = dynamic_risk(post, PredictionRequest(record(T=24.0), t, (u,), mc_draws=5))
        lam = cumulative_hazard(m, th, np.zeros(0), None, t, u)
        assert res.risk[0] == pytest.approx(1 - math.exp(-lam), abs=1e-10)
        assert res.se[0] < 1e-12


@settings(max_examples=20, deadline=None)
@given(st.floats(0.0, 14.0), st.lists(st.floats(0.0, 10.0), min_size=2, max_size=6), st.integers(0, 100))
def test_monotone_and_bounded(t, offsets, seed):
    m = model(forms=(FormSpec("value"),))
    post = PosteriorDraws.from_theta(m, theta(m, alpha=0.8))
    u = tuple(sorted(t + o for o in offsets))
    res = dynamic_risk(post, PredictionRequest(record(T=30.0), t, u, mc_draws=30, seed=seed))
    assert np.all((res.risk >= 0) & (res.risk <= 1))
    assert np.all(np.diff(res.risk) >= -1e-15)


def test_history_truncation_and_determinism():
    m = model()
    post = PosteriorDraws.from_theta(m, theta(m, alpha=0.9))
    full = record()
    cut = record(times=full.times[full.times <= 6.0], values=full.values[full.times <= 6.0])
    req = lambda r, s=1: PredictionRequest(r, 6.0, (7.0, 8.0), mc_draws=50, seed=s)
    a, b = dynamic_risk(post, req(full)), dynamic_risk(post, req(cut))
    assert np.array_equal(a.risk, b.risk) and np.array_equal(a.se, b.se)
    assert np.array_equal(dynamic_risk(post, req(full)).risk, a.risk)
    assert not np.array_equal(dynamic_risk(post, req(full, 2)).risk, a.risk)


def test_conjugate_random_effects_baseline_only():
    m = model()
    D = np.array([[0.8, -0.05], [-0.05, 0.04]])
    th = theta(m, alpha=0.0, D=D, sigma=0.5)
    r = record(T=10.0, times=[0.0], values=[3.0])
    z = np.array([1.0, 0.0])
    prec = np.outer(z, z) / 0.25 + np.linalg.inv(D)
    mean = np.linalg.solve(prec, z * (3.0 - 2.0) / 0.25)
    post = PosteriorDraws.from_theta(m, th)
    draws = sample_random_effects(post, r, 2.0, mc_draws=10_000, seed=0)
    np.testing.assert_allclose(draws.mean(axis=0), mean, atol=0.02)
    one = conditional_random_effects(m, th, r, 2.0, np.random.default_rng(0))
    assert one.shape == (2,)


def test_longer_survival_lowers_slope():
    m = model(forms=(FormSpec("value"),))
    post = PosteriorDraws.from_theta(m, theta(m, alpha=0.9))
    r = record(T=24.0, times=[0.0, 1.0, 2.0], values=[2.0, 1.75, 1.5])
    early = sample_random_effects(post, r, 2.0, anchor=3.0, mc_draws=5000, seed=1)
    late = sample_random_effects(post, r, 2.0, anchor=20.0, mc_draws=5000, seed=1)
    assert late[:, 1].mean() < early[:, 1].mean()


def test_errors():
    m = model()
    post = PosteriorDraws.from_theta(m, theta(m))
    with pytest.raises(PreconditionError):
        PredictionRequest(record(T=5.0), 5.0, (6.0,))
    with pytest.raises(PreconditionError):
        PredictionRequest(record(), 5.0, (4.0,))
    hot = PosteriorDraws.from_theta(m, theta(m, log_h=800.0))
    with pytest.raises(NumericalError, match="posterior draw 0"):
        dynamic_risk(hot, PredictionRequest(record(), 5.0, (6.0,), mc_draws=3))


def test_plans():
    r = record(T=9.0, event=1)
    assert required_evaluations("ibs", 4.0, 3.0, r) == ((4.0, 5.5), (4.0, 7.0))
    ev = record(T=5.2, event=1)
    assert required_evaluations("epce", 4.0, 3.0, ev, 0.001) == ((4.0, 5.2), (5.2, 5.2 + 0.001))
    cens = record(T=5.0, event=0)
    plan = required_evaluations("bs-model", 4.0, 3.0, cens)
    assert (5.0, 7.0) in plan and (4.0, 7.0) in plan
    central = required_evaluations("epce", 4.0, 3.0, ev, 0.001, "central")
    assert central == ((4.0, 5.2), (5.2 - 0.001, 5.2), (5.2 - 0.001, 5.2 + 0.001))
    assert len(plan_for(("ibs", "epce"), 4.0, 3.0, ev)) == 4
    with pytest.raises(PreconditionError):
        required_evaluations("auc", 4.0, 3.0, r)


def test_predict_pairs_groups_by_anchor():
    m = model()
    post = PosteriorDraws.from_theta(m, theta(m, alpha=0.5))
    r = record(T=5.2, event=1)
    pairs = plan_for(("ibs", "epce"), 4.0, 3.0, r)
    out = predict_pairs(post, r, 4.0, pairs, mc_draws=40)
    assert set(out) == set(pairs)
    direct = dynamic_risk(post, PredictionRequest(r, 4.0, (5.2, 5.5, 7.0), mc_draws=40))
    assert out[(4.0, 5.5)][0] == pytest.approx(direct.risk[1], abs=0)
