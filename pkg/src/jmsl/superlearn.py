"""Cross-validated super learning over a library of joint models.

Each library member is fitted on V-1 folds and predicts the held-out fold.
For every landmark the held-out predictions form a :class:`LandmarkBlock`,
a set of (subject x model) probability matrices, one per quantity the
scores need. Ensemble predictions are convex combinations of the columns,
so every score of the ensemble is a cheap function of the weights.
"""
from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import Dataset, FoldAssignment
from .dynpred import DEFAULT_DRAWS, EPSILON, plan_for, predict_pairs
from .errors import DomainError, JMSLError, OptimizationError, PlanError, PreconditionError, SpecError
from .jointmodel import FormSpec, JointModelSpec, MCMCConfig, fit_mcmc
from .numerics import nelder_mead_min, softmax
from .simulate import NONLINEAR_BASIS
from .scoring import brier_ipcw, brier_model_based, epce_terms, ibs, reverse_km

log = logging.getLogger(__name__)

SCORES = ("ibs-ipcw", "ibs-model", "epce")
_PLAN = {"ibs-ipcw": "ibs", "ibs-model": "bs-model", "epce": "epce"}
VERTEX_LOGIT = 30.0


@dataclass(frozen=True)
class ModelLibrary:
    members: tuple  # ((name, JointModelSpec), ...)

    def __post_init__(self):
        object.__setattr__(self, "members", tuple((str(n), s) for n, s in self.members))
        names = self.names
        if len(names) < 2:
            raise SpecError("a library needs at least two models")
        if len(set(names)) != len(names):
            raise SpecError(f"library names must be unique, got {names}")
        for name, spec in self.members:
            if not isinstance(spec, JointModelSpec):
                raise SpecError(f"library member {name!r} is not a joint model spec")

    @property
    def names(self) -> tuple:
        return tuple(n for n, _ in self.members)

    def __len__(self):
        return len(self.members)


@dataclass(frozen=True)
class SuperLearnerConfig:
    landmarks: tuple = (16.0, 19.0)
    dt: float = 2.0
    scores: tuple = ("ibs-ipcw", "epce")
    epsilon: float = EPSILON
    scheme: str = "forward"
    mc_draws: int = DEFAULT_DRAWS
    mcmc: MCMCConfig = field(default_factory=MCMCConfig)
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "landmarks", tuple(float(t) for t in self.landmarks))
        object.__setattr__(self, "scores", tuple(self.scores))
        bad = set(self.scores) - set(SCORES)
        if bad or not self.scores:
            raise PreconditionError(f"unknown or missing scores {sorted(bad)}; choose from {SCORES}")
        if not self.dt > 0 or not self.epsilon > 0:
            raise PreconditionError("dt and epsilon must be positive")
        if self.scheme not in ("forward", "central"):
            raise PreconditionError(f"unknown difference scheme {self.scheme!r}")
        if self.workers < 1:
            raise PreconditionError("need at least one worker")

    @property
    def plan_metrics(self) -> tuple:
        return tuple(sorted({_PLAN[s] for s in self.scores}))

    def fit_config(self, fold: int, member: int) -> MCMCConfig:
        """Per-fit chain seed; fold 0 denotes the full-data refit."""
        seed = int(np.random.SeedSequence([self.seed, fold, member]).generate_state(1)[0])
        m = self.mcmc
        return MCMCConfig(m.iterations, m.burn_in, m.thin, seed, dict(m.fixed))


def default_workers() -> int:
    return max(1, int(os.environ.get("JMSL_WORKERS", "1")))


# ---------------------------------------------------------------------------
# prediction cube

@dataclass
class LandmarkBlock:
    """Held-out predictions of all models for the subjects at risk at ``t``."""

    t: float
    dt: float
    epsilon: float
    scheme: str
    ids: tuple
    fold: np.ndarray
    T: np.ndarray
    delta: np.ndarray
    raw: dict  # id -> {(anchor, target): risks over models}
    n_models: int

    def __post_init__(self):
        self._slots = self._build_slots()
        self._G = reverse_km(self.T, self.delta, self.t)

    def _build_slots(self) -> dict:
        n, L = len(self.ids), self.n_models
        t, dt, eps = self.t, self.dt, self.epsilon
        mid, end = t + dt / 2, t + dt
        nan = lambda: np.full((n, L), np.nan)
        s = {k: nan() for k in ("mid", "end", "re_mid", "re_end", "surv_T", "num", "surv_at")}
        s["width"] = np.full(n, eps)
        for i, sid in enumerate(self.ids):
            raw = self.raw[sid]
            get = lambda pair: raw.get(pair, np.full(L, np.nan))
            s["mid"][i], s["end"][i] = (get((t, mid))), (get((t, end)))
            Ti, di = float(self.T[i]), int(self.delta[i])
            if di == 0 and Ti <= end:
                s["re_end"][i] = (get((Ti, end)))
                if Ti <= mid:
                    s["re_mid"][i] = (get((Ti, mid)))
            T_tilde, d_tilde = min(Ti, end), int(di == 1 and Ti <= end)
            s["surv_T"][i] = 1.0 - (get((t, T_tilde)))
            if d_tilde:
                if self.scheme == "forward":
                    s["num"][i] = (get((T_tilde, T_tilde + eps)))
                    s["surv_at"][i] = 1.0
                else:
                    a = max(t, T_tilde - eps)
                    s["num"][i] = (get((a, T_tilde + eps)))
                    s["surv_at"][i] = 1.0 - (get((a, T_tilde)))
                    s["width"][i] = T_tilde + eps - a
        return s

    def combined(self, slot: str, weights, rows=None) -> np.ndarray:
        values = self._slots[slot]
        if rows is not None and np.isnan(values[rows]).any():
            raise PlanError(f"prediction cube lacks the {slot!r} evaluations at t={self.t}")
        return values @ np.asarray(weights, dtype=float)

    def score(self, metric: str, weights) -> float:
        """Score of the ``weights``-combined predictions."""
        w = np.asarray(weights, dtype=float)
        t, dt, T, d = self.t, self.dt, self.T, self.delta
        if metric == "ibs-ipcw":
            mid = brier_ipcw(T, d, self.combined("mid", w, ...), self._G, t, dt / 2, self.ids)
            end = brier_ipcw(T, d, self.combined("end", w, ...), self._G, t, dt, self.ids)
            return ibs(mid, end)
        if metric == "ibs-model":
            mid = brier_model_based(T, d, self.combined("mid", w, ...), self.combined("re_mid", w), t, dt / 2)
            end = brier_model_based(T, d, self.combined("end", w, ...), self.combined("re_end", w), t, dt)
            return ibs(mid, end)
        if metric == "epce":
            return self.epce_detail(w).value
        raise PreconditionError(f"unknown score {metric!r}")

    def epce_detail(self, weights):
        w = np.asarray(weights, dtype=float)
        event = (self.delta == 1) & (self.T <= self.t + self.dt)
        num = np.where(event, self.combined("num", w, event), 1.0)
        surv_at = np.where(event, self.combined("surv_at", w, event), 1.0)
        return epce_terms(self.T, self.delta, self.t, self.dt, self.combined("surv_T", w, ...), num,
                          self._slots["width"], surv_at, ids=self.ids)

    def model_scores(self, metric: str) -> np.ndarray:
        return np.array([self.score(metric, np.eye(self.n_models)[l]) for l in range(self.n_models)])


@dataclass
class PredictionCube:
    model_names: tuple
    blocks: dict  # landmark -> LandmarkBlock

    def block(self, t: float) -> LandmarkBlock:
        try:
            return self.blocks[float(t)]
        except KeyError:
            raise PlanError(f"no predictions stored for landmark {t}") from None


def ensemble_combine(cube: PredictionCube, weights, subject_id, landmark: float, pair) -> float:
    """``sum_l w_l pi_l`` for one stored evaluation ``pair = (anchor, target)``."""
    w = _check_simplex(weights, len(cube.model_names))
    try:
        values = cube.block(landmark).raw[subject_id][tuple(float(x) for x in pair)]
    except KeyError:
        raise PlanError(f"no prediction {pair} for subject {subject_id!r} at t={landmark}") from None
    return float(values @ w)


def _check_simplex(weights, L: int) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.shape != (L,) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-10:
        raise PreconditionError(f"weights must lie on the {L}-simplex, got {w}")
    return w


def _predict_job(args):
    """Fit one model on ``train`` and predict the ``held_out`` records."""
    name, spec, train, held_out, landmarks, dt, plan_metrics, eps, scheme, mc_draws, mcmc, seed = args
    post = fit_mcmc(spec, train, mcmc)
    out = {}
    for t in landmarks:
        out[t] = {}
        for rec in held_out:
            if rec.obs_time > t:
                pairs = plan_for(plan_metrics, t, dt, rec, eps, scheme)
                pred = predict_pairs(post, rec, t, pairs, mc_draws, seed)
                out[t][rec.id] = {k: v[0] for k, v in pred.items()}
    return out, dict(post.acceptance)


def _run_jobs(jobs, workers: int):
    """Run jobs in order; collects per-job errors instead of stopping at the first."""
    results, errors = [None] * len(jobs), []
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            futures = [pool.submit(_predict_job, job) for job in jobs]
            for k, fut in enumerate(futures):
                try:
                    results[k] = fut.result()
                except JMSLError as exc:
                    errors.append((k, exc))
    else:
        for k, job in enumerate(jobs):
            try:
                results[k] = _predict_job(job)
            except JMSLError as exc:
                errors.append((k, exc))
    return results, errors


def _assemble(names, per_model, data: Dataset, fold_of, config: SuperLearnerConfig) -> PredictionCube:
    blocks = {}
    for t in config.landmarks:
        recs = [r for r in data if r.obs_time > t]
        if not recs:
            raise DomainError(f"no subjects at risk at t={t}")
        raw = {}
        for r in recs:
            keys = set(per_model[0][t][r.id])
            raw[r.id] = {k: np.array([pm[t][r.id][k] for pm in per_model]) for k in sorted(keys)}
        blocks[t] = LandmarkBlock(
            t, config.dt, config.epsilon, config.scheme, tuple(r.id for r in recs),
            np.array([fold_of.get(r.id, 0) for r in recs]), np.array([r.obs_time for r in recs]),
            np.array([r.event for r in recs]), raw, len(names))
    return PredictionCube(tuple(names), blocks)


def cv_predictions(library: ModelLibrary, data: Dataset, folds: FoldAssignment,
                   config: SuperLearnerConfig) -> PredictionCube:
    """V x L fold fits; every subject is predicted by the fits that exclude it."""
    for t in config.landmarks:
        for v in range(1, folds.V + 1):
            if not any(data[i].obs_time > t for i in folds.members(v)):
                raise PreconditionError(f"fold {v} has no subjects at risk at t={t}")
    jobs, keys = [], []
    for v in range(1, folds.V + 1):
        train = data.subset(folds.training(v))
        held = [data[i] for i in folds.members(v)]
        for l, (name, spec) in enumerate(library.members):
            jobs.append((name, spec, train, held, config.landmarks, config.dt, config.plan_metrics,
                         config.epsilon, config.scheme, config.mc_draws, config.fit_config(v, l), config.seed))
            keys.append((v, l))
    results, errors = _run_jobs(jobs, config.workers)
    if errors:
        summary = "; ".join(f"fold {keys[k][0]} model {library.names[keys[k][1]]!r}: {exc}" for k, exc in errors)
        raise JMSLError(f"{len(errors)} fold fit(s) failed: {summary}")
    per_model = []
    for l in range(len(library)):
        merged = {t: {} for t in config.landmarks}
        for (v, ll), (res, _) in zip(keys, results):
            if ll == l:
                for t in config.landmarks:
                    merged[t].update(res[t])
        per_model.append(merged)
    return _assemble(library.names, per_model, data, folds.fold_of, config)


def holdout_predictions(library: ModelLibrary, train: Dataset, test: Dataset,
                     config: SuperLearnerConfig) -> PredictionCube:
    """Refit every member on all of ``train`` and predict ``test``."""
    jobs = [(name, spec, train, list(test), config.landmarks, config.dt, config.plan_metrics, config.epsilon,
             config.scheme, config.mc_draws, config.fit_config(0, l), config.seed)
            for l, (name, spec) in enumerate(library.members)]
    results, errors = _run_jobs(jobs, config.workers)
    if errors:
        summary = "; ".join(f"model {library.names[k]!r}: {exc}" for k, exc in errors)
        raise JMSLError(f"{len(errors)} full-data fit(s) failed: {summary}")
    return _assemble(library.names, [r for r, _ in results], test, {}, config)


# ---------------------------------------------------------------------------
# weights

@dataclass(frozen=True)
class WeightSolution:
    landmark: float
    metric: str
    weights: np.ndarray
    score: float
    diagnostics: dict

    def __post_init__(self):
        _check_simplex(self.weights, self.weights.size)


def weights_from_logits(z) -> np.ndarray:
    return softmax(np.concatenate(([0.0], np.asarray(z, dtype=float))))


def optimize_weights(block: LandmarkBlock, metric: str, tol: float = 1e-10,
                     max_iter: int = 4000) -> WeightSolution:
    """Minimize the ensemble score over the simplex from L+1 starts."""
    L = block.n_models

    def objective(z):
        val = block.score(metric, weights_from_logits(z))
        return val if np.isfinite(val) else np.inf

    starts = [np.zeros(L - 1)]
    for l in range(L):
        z = np.full(L - 1, -VERTEX_LOGIT)
        if l > 0:
            z[l - 1] = VERTEX_LOGIT
        starts.append(z)
    runs, best = [], None
    for z0 in starts:
        try:
            res = nelder_mead_min(objective, z0, tol=tol, max_iter=max_iter)
        except DomainError as exc:
            runs.append({"start": z0.tolist(), "error": str(exc)})
            continue
        runs.append({"start": z0.tolist(), "score": res.fun, "converged": res.converged, "nfev": res.nfev})
        if best is None or res.fun < best.fun:
            best = res
    if best is None:
        raise OptimizationError(f"every start gave a non-finite {metric} at t={block.t}: {runs}")
    w = weights_from_logits(best.x)
    return WeightSolution(block.t, metric, w, float(block.score(metric, w)), {"starts": runs})


def discrete_super_learner(names, scores) -> str:
    """Best-scoring member; ties go to the earlier library entry."""
    scores = np.asarray(scores, dtype=float)
    return names[int(np.argmin(scores))]


# ---------------------------------------------------------------------------
# panels

@dataclass(frozen=True)
class PanelEntry:
    landmark: float
    dt: float
    metric: str
    model_scores: dict
    esl_score: float
    weights: dict
    dsl: str
    dsl_with_esl: str
    largest_weight: str
    diagnostics: dict

    def as_dict(self) -> dict:
        return {"landmark": self.landmark, "dt": self.dt, "interval": [self.landmark, self.landmark + self.dt],
                "metric": self.metric, "model_scores": self.model_scores, "esl_score": self.esl_score,
                "weights": self.weights, "dsl": self.dsl, "dsl_with_esl": self.dsl_with_esl,
                "largest_weight": self.largest_weight, "diagnostics": self.diagnostics}


@dataclass(frozen=True)
class ScorePanel:
    model_names: tuple
    entries: tuple

    def entry(self, landmark: float, metric: str) -> PanelEntry:
        for e in self.entries:
            if e.landmark == float(landmark) and e.metric == metric:
                return e
        raise KeyError((landmark, metric))

    def weights(self, landmark: float, metric: str) -> np.ndarray:
        e = self.entry(landmark, metric)
        return np.array([e.weights[n] for n in self.model_names])

    def as_dict(self) -> dict:
        return {"models": list(self.model_names), "entries": [e.as_dict() for e in self.entries]}


def build_panel(cube: PredictionCube, config: SuperLearnerConfig) -> ScorePanel:
    names = cube.model_names
    entries = []
    for t in config.landmarks:
        block = cube.block(t)
        for metric in config.scores:
            scores = block.model_scores(metric)
            sol = optimize_weights(block, metric)
            dsl = discrete_super_learner(names, scores)
            with_esl = discrete_super_learner(names + ("eSL",), np.append(scores, sol.score))
            entries.append(PanelEntry(
                t, config.dt, metric, {n: float(s) for n, s in zip(names, scores)}, sol.score,
                {n: float(w) for n, w in zip(names, sol.weights)}, dsl, with_esl,
                names[int(np.argmax(sol.weights))], sol.diagnostics))
    return ScorePanel(names, tuple(entries))


def super_learn(library: ModelLibrary, data: Dataset, folds: FoldAssignment,
                config: SuperLearnerConfig) -> tuple[ScorePanel, PredictionCube]:
    cube = cv_predictions(library, data, folds, config)
    return build_panel(cube, config), cube


@dataclass(frozen=True)
class HoldoutScore:
    landmark: float
    metric: str
    model_scores: dict
    esl: float
    dsl: float
    oracle: float
    oracle_model: str


def evaluate_on_test(panel: ScorePanel, test_cube: PredictionCube,
                     config: SuperLearnerConfig) -> list[HoldoutScore]:
    """Score frozen training weights and the training dSL on a test cube."""
    out = []
    for t in config.landmarks:
        block = test_cube.block(t)
        if len(block.ids) == 0:
            raise DomainError(f"no test subjects at risk at t={t}")
        for metric in config.scores:
            entry = panel.entry(t, metric)
            scores = block.model_scores(metric)
            w = panel.weights(t, metric)
            k = int(np.argmin(scores))
            out.append(HoldoutScore(
                t, metric, {n: float(s) for n, s in zip(panel.model_names, scores)},
                float(block.score(metric, w)), float(scores[panel.model_names.index(entry.dsl)]),
                float(scores[k]), panel.model_names[k]))
    return out


def standard_library() -> ModelLibrary:
    """One member per simulated cell: {linear, spline} trajectory x {value, slope, area} form."""
    members = []
    for trajectory in ("linear", "spline"):
        for form in ("value", "slope", "area"):
            spline = NONLINEAR_BASIS if trajectory == "spline" else None
            name = f"{'linear' if trajectory == 'linear' else 'nonlinear'}-{form}"
            members.append((name, JointModelSpec(name=name, trajectory=trajectory, spline=spline,
                                                 forms=(FormSpec(form),))))
    return ModelLibrary(tuple(members))
