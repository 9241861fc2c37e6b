import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jmsl.core import Dataset, SubjectRecord, assign_folds
from jmsl.dynpred import plan_for, predict_pairs
from jmsl.errors import PlanError, PreconditionError, SpecError
from jmsl.jointmodel import JointModelSpec, MCMCConfig, fit_mcmc
from jmsl.simulate import ScenarioSpec, simulate_dataset
from jmsl.superlearn import (
    LandmarkBlock,
    ModelLibrary,
    PredictionCube,
    SuperLearnerConfig,
    build_panel,
    cv_predictions,
    discrete_super_learner,
    ensemble_combine,
    optimize_weights,
    standard_library,
    weights_from_logits,
)

PLAN = ("bs-model", "epce", "ibs")


def synthetic_block(T, delta, risk_fns, t=2.0, dt=3.0, eps=1e-3, scheme="forward"):
    """Block whose model l predicts ``risk_fns[l](i, a, u)`` for subject i."""
    raw = {}
    for i, (Ti, di) in enumerate(zip(T, delta)):
        rec = SubjectRecord(i, [], [0.0], [0.0], float(Ti), int(di))
        raw[i] = {p: np.array([f(i, *p) for f in risk_fns]) for p in plan_for(PLAN, t, dt, rec, eps, scheme)}
    return LandmarkBlock(t, dt, eps, scheme, tuple(range(len(T))), np.zeros(len(T), int), np.asarray(T, float),
                         np.asarray(delta, int), raw, len(risk_fns))


def const_hazard(h):
    hs = np.atleast_1d(h)
    hs = np.broadcast_to(hs, (10_000,)) if hs.size == 1 else hs
    return lambda i, a, u: 1.0 - math.exp(-hs[i] * (u - a))


def simulated_panel(n, seed, h_true=None):
    rng = np.random.default_rng(seed)
    h = rng.uniform(0.05, 0.5, n) if h_true is None else np.full(n, h_true)
    event = 2.0 + rng.exponential(1 / h)
    cens = 2.0 + rng.exponential(8.0, n)
    T = np.minimum(event, cens)
    return T, (event <= cens).astype(int), h


def test_library_validation():
    with pytest.raises(SpecError):
        ModelLibrary((("a", JointModelSpec()),))
    with pytest.raises(SpecError):
        ModelLibrary((("a", JointModelSpec()), ("a", JointModelSpec())))
    lib = standard_library()
    assert len(lib) == 6 and lib.names[4] == "nonlinear-slope"


def test_ensemble_combine_examples():
    block = synthetic_block([3.0, 7.0], [1, 0], [lambda i, a, u: 0.2, lambda i, a, u: 0.6])
    cube = PredictionCube(("m1", "m2"), {2.0: block})
    assert ensemble_combine(cube, [0.25, 0.75], 0, 2.0, (2.0, 5.0)) == pytest.approx(0.5, abs=1e-15)
    assert ensemble_combine(cube, [1.0, 0.0], 1, 2.0, (2.0, 5.0)) == 0.2
    with pytest.raises(PlanError):
        ensemble_combine(cube, [0.5, 0.5], 1, 2.0, (2.0, 9.0))
    with pytest.raises(PreconditionError):
        ensemble_combine(cube, [0.5, 0.6], 1, 2.0, (2.0, 5.0))


@given(st.floats(0, 1), st.lists(st.floats(0.01, 10), min_size=2, max_size=5))
def test_combination_of_agreeing_models(p, raw_w):
    w = np.array(raw_w) / sum(raw_w)
    block = synthetic_block([3.0], [1], [lambda i, a, u: p] * len(w))
    cube = PredictionCube(tuple(f"m{k}" for k in range(len(w))), {2.0: block})
    assert ensemble_combine(cube, w, 0, 2.0, (2.0, 3.5)) == pytest.approx(p, abs=1e-12)


def test_dsl_examples():
    assert discrete_super_learner(("a", "b", "c"), (0.07, 0.05, 0.06)) == "b"
    assert discrete_super_learner(("a", "b"), (0.05, 0.05)) == "a"


@given(st.lists(st.integers(-500, 500), min_size=2, max_size=8))
def test_dsl_invariant_under_monotone_transform(scores):
    names = tuple(f"m{k}" for k in range(len(scores)))
    s = np.array(scores) / 100.0
    assert discrete_super_learner(names, s) == discrete_super_learner(names, np.exp(2 * s) + 3)


def test_weights_softmax_first_logit_pinned():
    w = weights_from_logits([0.0, 0.0])
    np.testing.assert_allclose(w, [1 / 3] * 3)
    assert weights_from_logits([-30.0])[0] > 1 - 1e-12


@pytest.mark.parametrize("metric", ["ibs-ipcw", "ibs-model", "epce"])
def test_identical_models_degenerate(metric):
    T, d, h = simulated_panel(200, 0)
    block = synthetic_block(T, d, [const_hazard(h)] * 2)
    sol = optimize_weights(block, metric)
    assert sol.score == pytest.approx(block.score(metric, [1.0, 0.0]), abs=1e-12)
    assert abs(sol.weights.sum() - 1) < 1e-10 and np.all(sol.weights > 0)


def test_true_model_dominates_weights():
    # The rival predicts a window risk of 0.5 for everyone (constant hazard log 2 / dt).
    # Conditional risks at T~ are mixed with the same weights as the landmark
    # risks, which is not the conditional risk of the weighted mixture; the
    # population EPCE optimum of this setup is near 0.88 rather than 1.
    T, d, h = simulated_panel(4000, 1)
    block = synthetic_block(T, d, [const_hazard(math.log(2) / 3.0), const_hazard(h)])
    assert optimize_weights(block, "epce").weights[1] > 0.75
    assert optimize_weights(block, "ibs-ipcw").weights[1] > 0.9


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 4), st.sampled_from(["ibs-ipcw", "ibs-model", "epce"]))
def test_ensemble_never_worse_than_best_member(seed, L, metric):
    T, d, h = simulated_panel(80, seed)
    rng = np.random.default_rng(seed + 1)
    fns = [const_hazard(h * rng.uniform(0.3, 3.0, h.size)) for _ in range(L)]
    block = synthetic_block(T, d, fns)
    sol = optimize_weights(block, metric)
    assert sol.score <= block.model_scores(metric).min() + 1e-6
    assert abs(sol.weights.sum() - 1.0) < 1e-10


def test_central_scheme_block():
    T, d, h = simulated_panel(300, 3)
    fwd = synthetic_block(T, d, [const_hazard(h), const_hazard(2 * h)])
    cen = synthetic_block(T, d, [const_hazard(h), const_hazard(2 * h)], scheme="central")
    np.testing.assert_allclose(fwd.model_scores("epce"), cen.model_scores("epce"), rtol=1e-3)


def test_missing_plan_entries_are_reported():
    T, d, h = simulated_panel(50, 4)
    block = synthetic_block(T, d, [const_hazard(h)] * 2)
    for sid in block.ids:
        block.raw[sid] = {k: v for k, v in block.raw[sid].items() if k[0] == block.t}
    bare = LandmarkBlock(block.t, block.dt, block.epsilon, block.scheme, block.ids, block.fold, block.T,
                         block.delta, block.raw, 2)
    bare.score("ibs-ipcw", [0.5, 0.5])
    with pytest.raises(PlanError):
        bare.score("ibs-model", [0.5, 0.5])


def test_panel_layout():
    T, d, h = simulated_panel(150, 5)
    cube = PredictionCube(("a", "b", "c"), {2.0: synthetic_block(T, d, [const_hazard(h), const_hazard(h / 2),
                                                                         lambda i, a, u: 0.3])})
    cfg = SuperLearnerConfig(landmarks=(2.0,), dt=3.0, scores=("ibs-ipcw", "epce"))
    panel = build_panel(cube, cfg)
    assert len(panel.entries) == 2
    for e in panel.entries:
        assert len(e.model_scores) + 1 == 4
        assert e.dsl == min(e.model_scores, key=e.model_scores.get)
        assert e.esl_score <= min(e.model_scores.values()) + 1e-6
        assert abs(sum(e.weights.values()) - 1) < 1e-10


# --- fold fits --------------------------------------------------------------

@pytest.fixture(scope="module")
def tiny():
    data, _ = simulate_dataset(ScenarioSpec.standard("I", 60), seed=3)
    lib = ModelLibrary((("value", JointModelSpec()), ("none", JointModelSpec(random_effects=False))))
    cfg = SuperLearnerConfig(landmarks=(6.0,), dt=4.0, scores=("epce",), mc_draws=20,
                             mcmc=MCMCConfig(120, 60, 2), seed=9)
    return data, lib, cfg, assign_folds(data, 2, seed=1)


def test_cv_predictions_use_fold_excluded_fit(tiny):
    data, lib, cfg, folds = tiny
    cube = cv_predictions(lib, data, folds, cfg)
    block = cube.block(6.0)
    sid = next(i for i in folds.members(2) if data[i].obs_time > 6.0)
    post = fit_mcmc(lib.members[0][1], data.subset(folds.training(2)), cfg.fit_config(2, 0))
    rec = data[sid]
    pairs = plan_for(("epce",), 6.0, 4.0, rec)
    direct = predict_pairs(post, rec, 6.0, pairs, cfg.mc_draws, cfg.seed)
    for p in pairs:
        assert block.raw[sid][p][0] == direct[p][0]
    for i, rid in enumerate(block.ids):
        rec = data[rid]
        expect = 2 if (rec.event and rec.obs_time <= 10.0) else 1
        assert len(block.raw[rid]) == expect
        assert block.fold[i] == folds.fold_of[rid]


def test_cv_leakage(tiny):
    data, lib, cfg, folds = tiny
    base = cv_predictions(lib, data, folds, cfg).block(6.0)
    target = next(i for i in folds.members(1) if data[i].obs_time > 6.0)
    recs = []
    for r in data:
        if r.id == target:
            r = SubjectRecord(r.id, r.covariates, r.times, r.values + 1.0, r.obs_time, r.event)
        recs.append(r)
    moved = cv_predictions(lib, Dataset(tuple(recs)), folds, cfg).block(6.0)
    for rid in base.ids:
        same = all(np.array_equal(base.raw[rid][k], moved.raw[rid][k]) for k in base.raw[rid])
        if rid == target:
            assert not same
        elif folds.fold_of[rid] == 1:
            assert same
