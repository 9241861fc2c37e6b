"""Per-subject model quantities, written for clarity rather than speed.

The MCMC sampler uses vectorized equivalents; tests check the two agree.
"""
from __future__ import annotations

import numpy as np
from scipy import stats

from ..core import SubjectRecord
from ..errors import DomainError
from ..numerics import gl_panel_nodes
from .model import JointModel, ParameterVector, PriorSpec


def _w(model: JointModel, w):
    if w is None:
        return np.zeros(len(model.covariate_names))
    return np.asarray(w, dtype=float)


def linear_predictor(model: JointModel, theta: ParameterVector, b, t, w=None):
    """``eta(t) = x(t) beta + z(t) b``; scalar or array ``t``."""
    x, z = model.long_design(t, _w(model, w))
    return x @ theta.beta + z @ np.asarray(b, dtype=float).reshape(-1)[:model.q]


def linear_predictor_slope(model: JointModel, theta: ParameterVector, b, t, w=None):
    dtb = model.time_basis_deriv(t)
    m = model.m
    b = np.asarray(b, dtype=float).reshape(-1)
    out = dtb @ theta.beta[:m]
    if model.q:
        out = out + dtb @ b
    return out


def association_features(model: JointModel, theta: ParameterVector, b, t, w=None) -> np.ndarray:
    """Un-weighted functional-form features, shape ``t.shape + (A,)``."""
    XF, ZF = model.feature_design(t, _w(model, w))
    b = np.asarray(b, dtype=float).reshape(-1)[:model.q]
    return XF @ theta.beta + ZF @ b


def functional_form(model: JointModel, theta: ParameterVector, b, t, w=None):
    """``f{H(t), b, alpha}``: the association term entering the log-hazard."""
    return association_features(model, theta, b, t, w) @ theta.alpha


def log_hazard(model: JointModel, theta: ParameterVector, b, w, t):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise DomainError(f"hazard evaluated at negative time {t}")
    w = _w(model, w)
    base = model.baseline_design(t) @ theta.gamma_h0
    cov = model.hazard_covariates(w) @ theta.gamma if model.n_gamma else 0.0
    return base + cov + functional_form(model, theta, b, t, w)


def cumulative_hazard(model: JointModel, theta: ParameterVector, b, w, t0, t1) -> float:
    if t0 < 0 or t0 > t1:
        raise DomainError(f"need 0 <= t0 <= t1, got t0={t0}, t1={t1}")
    if t0 == t1:
        return 0.0
    x, wt = gl_panel_nodes(t0, t1, model.split_width)
    return float(np.sum(wt * np.exp(log_hazard(model, theta, b, w, x))))


def log_likelihood_subject(model: JointModel, theta: ParameterVector, b, record: SubjectRecord) -> float:
    if not theta.sigma > 0:
        raise DomainError(f"sigma must be positive, got {theta.sigma}")
    eta = linear_predictor(model, theta, b, record.times, record.covariates)
    long_ll = float(np.sum(stats.norm.logpdf(record.values, eta, theta.sigma)))
    surv = -cumulative_hazard(model, theta, b, record.covariates, 0.0, record.obs_time)
    if record.event:
        surv += float(log_hazard(model, theta, b, record.covariates, record.obs_time))
    return long_ll + surv


def lkj_log_density(R: np.ndarray, shape: float) -> float:
    """Unnormalized LKJ log-density of a correlation matrix."""
    sign, logdet = np.linalg.slogdet(R)
    if sign <= 0:
        return -np.inf
    return (shape - 1.0) * logdet


def penalized_log_prior(gamma_h0, tau, K, rank) -> float:
    g = np.asarray(gamma_h0, dtype=float)
    return 0.5 * rank * np.log(tau) - 0.5 * tau * float(g @ K @ g)


def log_prior_terms(model: JointModel, priors: PriorSpec, theta: ParameterVector) -> dict[str, float]:
    """Each prior contribution separately.

    ``D`` is given independent inverse-Gamma priors on its variances and an
    LKJ prior on its correlation matrix; densities are with respect to
    (variances, correlations).
    """
    theta.validate()
    pen = model.penalty
    terms = {
        "beta": float(np.sum(stats.norm.logpdf(theta.beta, 0.0, priors.beta_sd))),
        "sigma2": float(stats.invgamma.logpdf(theta.sigma ** 2, priors.sigma2_shape,
                                              scale=priors.sigma2_rate)),
        "gamma_h0_penalty": penalized_log_prior(theta.gamma_h0, theta.tau, pen.K, pen.rank),
        "gamma_h0": float(np.sum(stats.norm.logpdf(theta.gamma_h0, 0.0, priors.gamma_h0_sd))),
        "gamma": float(np.sum(stats.norm.logpdf(theta.gamma, 0.0, priors.gamma_sd))),
        "alpha": float(np.sum(stats.norm.logpdf(theta.alpha, 0.0, priors.alpha_sd))),
        "tau": float(stats.gamma.logpdf(theta.tau, priors.tau_shape, scale=1.0 / priors.tau_rate)),
    }
    if theta.D.size:
        v = np.diag(theta.D)
        s = np.sqrt(v)
        R = theta.D / np.outer(s, s)
        terms["D_var"] = float(np.sum(stats.invgamma.logpdf(v, priors.D_shape, scale=priors.D_rate)))
        terms["D_corr"] = lkj_log_density(R, priors.lkj_shape)
    return terms


def log_prior(model: JointModel, priors: PriorSpec, theta: ParameterVector) -> float:
    return float(sum(log_prior_terms(model, priors, theta).values()))
