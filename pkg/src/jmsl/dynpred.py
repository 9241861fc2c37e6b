"""Dynamic conditional risk predictions from a fitted joint model.

For a subject event-free at ``anchor`` with biomarker history up to the
landmark ``t``, each posterior draw contributes a random-effects draw from

    p(b | y(<= t), T* > anchor, theta)
        ∝ N(y; eta, sigma) N(b; 0, D) exp(-Lambda(0, anchor))

and the survival ratio ``exp(-Lambda(anchor, u))``. The random effects are
drawn by an independence Metropolis-Hastings chain whose proposal is the
Gaussian longitudinal conditional, so the acceptance ratio involves only
the survival factor.
"""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .core import SubjectRecord, interval_outcome
from .errors import NumericalError, PreconditionError
from .jointmodel.mcmc import PosteriorDraws
from .jointmodel.model import JointModel, ParameterVector
from .numerics import gl_panel_nodes

DEFAULT_DRAWS = 200
INNER_STEPS = 25
EPSILON = 1e-3
METRICS = ("ibs", "bs-model", "epce")


@dataclass(frozen=True)
class PredictionRequest:
    record: SubjectRecord
    landmark: float
    points: tuple
    anchor: float | None = None  # survival conditioning time; defaults to the landmark
    mc_draws: int = DEFAULT_DRAWS
    seed: int = 0
    inner_steps: int = INNER_STEPS

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(float(u) for u in np.atleast_1d(self.points)))
        anchor = self.landmark if self.anchor is None else self.anchor
        object.__setattr__(self, "anchor", float(anchor))
        if not self.record.obs_time > self.landmark:
            raise PreconditionError(f"subject {self.record.id!r} is not at risk at t={self.landmark}")
        if self.anchor < self.landmark:
            raise PreconditionError(f"anchor {self.anchor} precedes the landmark {self.landmark}")
        if any(u < self.anchor for u in self.points):
            raise PreconditionError(f"evaluation points must be >= anchor {self.anchor}")
        if self.mc_draws < 1:
            raise PreconditionError("need at least one Monte Carlo draw")


@dataclass(frozen=True)
class PredictionResult:
    landmark: float
    anchor: float
    points: tuple
    risk: np.ndarray
    se: np.ndarray

    @property
    def survival(self) -> np.ndarray:
        return 1.0 - self.risk


def job_seed(seed: int, subject_id, landmark: float, anchor: float) -> np.random.SeedSequence:
    """Stream keyed by (seed, subject id, landmark, anchor); independent of job order."""
    bits = lambda x: struct.unpack("<Q", struct.pack("<d", float(x)))[0]
    return np.random.SeedSequence([seed, zlib.crc32(repr(subject_id).encode()), bits(landmark), bits(anchor)])


def draw_indices(n_stored: int, M: int) -> np.ndarray:
    """Evenly strided posterior-draw indices (cycled when M exceeds the store)."""
    return (np.arange(M) * n_stored) // M


class _Draws:
    """Posterior parameters for a set of draw indices, as stacked arrays."""

    def __init__(self, post: PosteriorDraws, idx: np.ndarray):
        self.beta = post.beta[idx]
        self.sigma = post.sigma[idx]
        self.gh0 = post.gamma_h0[idx]
        self.gamma = post.gamma[idx]
        self.alpha = post.alpha[idx]
        self.D = post.D[idx]

    @classmethod
    def from_theta(cls, theta: ParameterVector) -> "_Draws":
        obj = cls.__new__(cls)
        obj.beta, obj.sigma = theta.beta[None], np.array([theta.sigma])
        obj.gh0, obj.gamma, obj.alpha = theta.gamma_h0[None], theta.gamma[None], theta.alpha[None]
        obj.D = theta.D[None]
        return obj


class _Subject:
    """History designs of one subject at one landmark."""

    def __init__(self, model: JointModel, record: SubjectRecord, landmark: float):
        self.model = model
        times, values = record.history(landmark)
        self.y = values
        self.X, self.Z = model.long_design(times, record.covariates)
        self.w = record.covariates
        self.wh = model.hazard_covariates(record.covariates)

    def cumulative(self, dr: _Draws, b: np.ndarray, lo, hi) -> np.ndarray:
        """``Lambda(lo, hi)`` per draw, shape (M,) + shape of the bounds."""
        m = self.model
        lo, hi = np.broadcast_arrays(np.asarray(lo, dtype=float), np.asarray(hi, dtype=float))
        x, wts = gl_panel_nodes(lo, hi, m.split_width)
        B0 = m.baseline_design(x)
        XF, ZF = m.feature_design(x, self.w)
        lh = np.einsum("...p,mp->m...", B0, dr.gh0) + (dr.gamma @ self.wh)[(...,) + (None,) * x.ndim]
        feat = np.einsum("...ap,mp->m...a", XF, dr.beta)
        if m.q:
            feat = feat + np.einsum("...aq,mq->m...a", ZF, b)
        lh = lh + np.einsum("m...a,ma->m...", feat, dr.alpha)
        with np.errstate(over="ignore", invalid="ignore"):
            return np.sum(wts * np.exp(lh), axis=-1)


def _long_conditional(subj: _Subject, dr: _Draws):
    """Mean and precision Cholesky factor of b | y, theta (Gaussian part)."""
    s2 = dr.sigma ** 2
    Dinv = np.linalg.inv(dr.D)
    ZtZ = subj.Z.T @ subj.Z
    prec = ZtZ[None] / s2[:, None, None] + Dinv
    resid = subj.y[None, :] - dr.beta @ subj.X.T
    rhs = resid @ subj.Z / s2[:, None]
    L = np.linalg.cholesky(prec)
    mean = np.linalg.solve(prec, rhs[:, :, None])[..., 0]
    return mean, L


def _sample_b(subj: _Subject, dr: _Draws, anchor: float, rng: np.random.Generator, steps: int,
              draw_ids: np.ndarray) -> np.ndarray:
    M = len(dr.sigma)
    q = subj.model.q
    mean, L = _long_conditional(subj, dr)
    Lt = np.swapaxes(L, 1, 2)

    def propose():
        z = rng.standard_normal((M, q))
        return mean + np.linalg.solve(Lt, z[:, :, None])[..., 0]

    lam0 = subj.cumulative(dr, np.zeros((M, q)), 0.0, anchor)
    bad = ~np.isfinite(lam0)
    if bad.any():
        raise NumericalError(f"non-finite prediction target at b=0 for posterior draw {int(draw_ids[bad][0])}")
    b = propose()
    lam = subj.cumulative(dr, b, 0.0, anchor)
    for _ in range(steps):
        b_new = propose()
        lam_new = subj.cumulative(dr, b_new, 0.0, anchor)
        log_r = lam - lam_new
        acc = np.log(rng.random(M)) < np.where(np.isfinite(log_r), log_r, -np.inf)
        b = np.where(acc[:, None], b_new, b)
        lam = np.where(acc, lam_new, lam)
    return b


def conditional_random_effects(model: JointModel, theta: ParameterVector, record: SubjectRecord,
                               landmark: float, rng: np.random.Generator, anchor: float | None = None,
                               steps: int = INNER_STEPS) -> np.ndarray:
    """One draw of ``b`` given the history up to ``landmark`` and survival to ``anchor``."""
    anchor = landmark if anchor is None else anchor
    if not record.obs_time > landmark:
        raise PreconditionError(f"subject {record.id!r} is not at risk at t={landmark}")
    theta.validate()
    subj = _Subject(model, record, landmark)
    if model.q == 0:
        return np.zeros(0)
    return _sample_b(subj, _Draws.from_theta(theta), anchor, rng, steps, np.array([0]))[0]


def sample_random_effects(post: PosteriorDraws, record: SubjectRecord, landmark: float,
                          anchor: float | None = None, mc_draws: int = DEFAULT_DRAWS, seed: int = 0,
                          steps: int = INNER_STEPS) -> np.ndarray:
    """``mc_draws`` conditional random-effects draws, one per strided posterior draw."""
    anchor = landmark if anchor is None else anchor
    if not record.obs_time > landmark:
        raise PreconditionError(f"subject {record.id!r} is not at risk at t={landmark}")
    idx = draw_indices(len(post), mc_draws)
    if post.model.q == 0:
        return np.zeros((mc_draws, 0))
    rng = np.random.default_rng(job_seed(seed, record.id, landmark, anchor))
    subj = _Subject(post.model, record, landmark)
    return _sample_b(subj, _Draws(post, idx), anchor, rng, steps, idx)


def dynamic_risk(post: PosteriorDraws, request: PredictionRequest) -> PredictionResult:
    """``pi(u | anchor) = 1 - E exp(-Lambda(anchor, u))`` with MC standard errors."""
    model = post.model
    M = request.mc_draws
    idx = draw_indices(len(post), M)
    dr = _Draws(post, idx)
    subj = _Subject(model, request.record, request.landmark)
    rng = np.random.default_rng(job_seed(request.seed, request.record.id, request.landmark, request.anchor))
    if model.q:
        b = _sample_b(subj, dr, request.anchor, rng, request.inner_steps, idx)
    else:
        b = np.zeros((M, 0))
    u = np.array(request.points)
    lam = subj.cumulative(dr, b, np.full(u.shape, request.anchor), u)  # (M, K)
    ratio = np.exp(-lam)
    surv = ratio.mean(axis=0)
    se = ratio.std(axis=0, ddof=1) / np.sqrt(M) if M > 1 else np.zeros(u.shape)
    risk = np.where(u == request.anchor, 0.0, 1.0 - surv)
    return PredictionResult(request.landmark, request.anchor, request.points, risk, se)


def required_evaluations(metric: str, t: float, dt: float, record: SubjectRecord,
                         epsilon: float = EPSILON, scheme: str = "forward") -> tuple:
    """``(anchor, target)`` pairs a metric needs for one at-risk subject."""
    if metric not in METRICS:
        raise PreconditionError(f"unknown metric {metric!r}")
    if scheme not in ("forward", "central"):
        raise PreconditionError(f"unknown difference scheme {scheme!r}")
    mid, end = t + dt / 2, t + dt
    if metric == "ibs":
        return ((t, mid), (t, end))
    if metric == "bs-model":
        pairs = [(t, mid), (t, end)]
        T = record.obs_time
        if record.event == 0 and t < T <= end:
            pairs += [(T, s) for s in (mid, end) if T <= s]
        return tuple(pairs)
    T_tilde, d_tilde = interval_outcome(record, t, dt)
    pairs = [(t, T_tilde)]
    if d_tilde:
        if scheme == "forward":
            pairs.append((T_tilde, T_tilde + epsilon))
        else:
            a = max(t, T_tilde - epsilon)
            pairs += [(a, T_tilde), (a, T_tilde + epsilon)]
    return tuple(pairs)


def plan_for(metrics, t: float, dt: float, record: SubjectRecord, epsilon: float = EPSILON,
             scheme: str = "forward") -> tuple:
    """Union of the plans of several metrics, sorted and de-duplicated."""
    pairs = set()
    for metric in metrics:
        pairs.update(required_evaluations(metric, t, dt, record, epsilon, scheme))
    return tuple(sorted(pairs))


def predict_pairs(post: PosteriorDraws, record: SubjectRecord, landmark: float, pairs,
                  mc_draws: int = DEFAULT_DRAWS, seed: int = 0) -> dict:
    """Risk (and MC se) for every ``(anchor, target)`` pair; one job per anchor."""
    by_anchor: dict[float, list[float]] = {}
    for a, u in pairs:
        by_anchor.setdefault(float(a), []).append(float(u))
    out = {}
    for a, targets in sorted(by_anchor.items()):
        res = dynamic_risk(post, PredictionRequest(record, landmark, tuple(targets), anchor=a,
                                                   mc_draws=mc_draws, seed=seed))
        for u, r, s in zip(targets, res.risk, res.se):
            out[(a, u)] = (float(r), float(s))
    return out
