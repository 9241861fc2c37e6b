"""Metropolis-within-Gibbs sampler for the joint model.

Blocks per iteration:

* ``b_i`` for every subject at once: independent random walks whose shape is
  the conditional Gaussian precision of the longitudinal part;
* ``beta``: adaptive random walk, followed by a centred (interweaving) draw
  of the time-basis coefficients given ``beta + b_i`` when that is exact;
* ``log sigma``: adaptive random walk;
* ``(gamma_h0, gamma, alpha)``: one adaptive-covariance random walk;
* ``D``: inverse-Wishart independence proposal corrected to the
  inverse-Gamma/LKJ prior;
* ``tau``: exact Gamma full conditional.

Proposal scales adapt during burn-in (Robbins-Monro towards 0.234
acceptance, plus empirical covariances) and are frozen afterwards.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from ..core import Dataset
from ..errors import DomainError, InitializationError, PreconditionError
from ..numerics import gl_panel_nodes
from .likelihood import lkj_log_density
from .model import JointModel, JointModelSpec, ParameterVector, PriorSpec

TARGET_ACCEPT = 0.234
FIXABLE = ("beta", "sigma", "gamma_h0", "gamma", "alpha", "D", "tau")


@dataclass
class MCMCConfig:
    iterations: int = 6000
    burn_in: int = 3000
    thin: int = 3
    seed: int = 0
    fixed: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.iterations > self.burn_in >= 0:
            raise PreconditionError(f"need iterations > burn_in >= 0, got {self.iterations}, {self.burn_in}")
        if self.thin < 1:
            raise PreconditionError("thin must be >= 1")
        unknown = set(self.fixed) - set(FIXABLE)
        if unknown:
            raise PreconditionError(f"cannot fix unknown parameters {sorted(unknown)}")

    def as_dict(self) -> dict:
        return {"iterations": self.iterations, "burn_in": self.burn_in, "thin": self.thin, "seed": self.seed,
                "fixed": {k: np.asarray(v).tolist() for k, v in self.fixed.items()}}


@dataclass
class PosteriorDraws:
    """Retained MCMC samples. Leading axis of every array indexes draws."""

    model: JointModel
    beta: np.ndarray
    sigma: np.ndarray
    gamma_h0: np.ndarray
    gamma: np.ndarray
    alpha: np.ndarray
    D: np.ndarray
    tau: np.ndarray
    b: np.ndarray
    subject_ids: tuple = ()
    acceptance: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    PARAMS = ("beta", "sigma", "gamma_h0", "gamma", "alpha", "D", "tau", "b")

    def __post_init__(self):
        if len(self.sigma) == 0:
            raise PreconditionError("posterior has no draws")

    def __len__(self) -> int:
        return len(self.sigma)

    def theta(self, s: int) -> ParameterVector:
        return ParameterVector(self.beta[s], self.sigma[s], self.gamma_h0[s], self.gamma[s],
                               self.alpha[s], self.D[s], self.tau[s])

    def mean(self, name: str) -> np.ndarray:
        return getattr(self, name).mean(axis=0)

    def sd(self, name: str) -> np.ndarray:
        return getattr(self, name).std(axis=0, ddof=1)

    @classmethod
    def from_theta(cls, model: JointModel, thetas, n_subjects: int = 0) -> "PosteriorDraws":
        """A 'posterior' made of given parameter values (known-truth analyses)."""
        thetas = [thetas] if isinstance(thetas, ParameterVector) else list(thetas)
        stack = lambda name: np.array([np.asarray(getattr(t, name), dtype=float) for t in thetas])
        D = stack("D").reshape(len(thetas), model.q, model.q)
        return cls(model, stack("beta"), stack("sigma"), stack("gamma_h0"),
                   stack("gamma").reshape(len(thetas), model.n_gamma), stack("alpha"), D, stack("tau"),
                   np.zeros((len(thetas), n_subjects, model.q)), meta={"source": "fixed-theta"})


def batch_means_se(x: np.ndarray, n_batches: int = 20) -> np.ndarray:
    """Monte Carlo standard error of a chain mean by non-overlapping batch means."""
    x = np.asarray(x, dtype=float)
    size = len(x) // n_batches
    if size < 1:
        return x.std(axis=0, ddof=1) / np.sqrt(len(x))
    means = x[: size * n_batches].reshape(n_batches, size, *x.shape[1:]).mean(axis=1)
    return means.std(axis=0, ddof=1) / np.sqrt(n_batches)


class SubjectArrays:
    """Design arrays for every subject, stacked for vectorized likelihoods."""

    def __init__(self, model: JointModel, data: Dataset):
        n = len(data)
        self.n = n
        W = data.covariate_matrix
        counts = np.array([s.times.size for s in data])
        self.sidx = np.repeat(np.arange(n), counts)
        times = np.concatenate([s.times for s in data])
        self.y = np.concatenate([s.values for s in data])
        self.X, self.Z = model.long_design(times, W[self.sidx])
        q = model.q
        outer = self.Z[:, :, None] * self.Z[:, None, :]
        self.ZtZ = np.zeros((n, q, q))
        np.add.at(self.ZtZ, self.sidx, outer)
        self.T = data.obs_times
        self.delta = data.events.astype(float)
        self.Wh = model.hazard_covariates(W).reshape(n, model.n_gamma)
        self.B_T = model.baseline_design(self.T)
        self.XF_T, self.ZF_T = model.feature_design(self.T, W)
        nodes, self.wts = gl_panel_nodes(np.zeros(n), self.T, model.split_width)
        self.B_q = model.baseline_design(nodes)
        self.XF_q, self.ZF_q = model.feature_design(nodes, W[:, None, :])

    def fz_T(self, b):
        return np.matmul(self.ZF_T, b[:, :, None])[..., 0]

    def fz_q(self, b):
        n, G, A, q = self.ZF_q.shape
        return np.matmul(self.ZF_q.reshape(n, G * A, q), b[:, :, None]).reshape(n, G, A)

    def z_rows(self, b):
        return np.einsum("nq,nq->n", self.Z, b[self.sidx])


class _Adaptive:
    """Random-walk proposal with Robbins-Monro scale and empirical covariance."""

    def __init__(self, cov: np.ndarray, free: np.ndarray, empirical: bool = True):
        self.free = np.asarray(free, dtype=bool)
        self.empirical = empirical
        d = int(self.free.sum())
        self.d = d
        cov = np.atleast_2d(cov)[np.ix_(self.free, self.free)] if d else np.zeros((0, 0))
        self.chol = _safe_chol(cov)
        self.log_scale = np.log(2.38 / np.sqrt(max(d, 1)))
        self.history: list[np.ndarray] = []
        self.accepted = 0
        self.proposed = 0

    def propose(self, x, rng):
        step = np.zeros_like(x)
        if self.d:
            step[self.free] = np.exp(self.log_scale) * (self.chol @ rng.standard_normal(self.d))
        return x + step

    def adapt(self, accept_prob: float, it: int):
        self.log_scale += (accept_prob - TARGET_ACCEPT) / (it + 1) ** 0.6

    def record(self, x, it: int, burn_in: int):
        if it >= burn_in // 4:
            self.history.append(np.asarray(x)[self.free].copy())
        if self.empirical and it % 100 == 99 and len(self.history) >= 200 and self.d:
            emp = np.atleast_2d(np.cov(np.array(self.history[-2000:]), rowvar=False))
            self.chol = _safe_chol(emp + 1e-8 * np.mean(np.diag(emp)) * np.eye(self.d))


def _safe_chol(cov):
    if cov.size == 0:
        return cov
    cov = 0.5 * (cov + cov.T)
    jitter = 0.0
    for _ in range(10):
        try:
            return np.linalg.cholesky(cov + jitter * np.eye(len(cov)))
        except np.linalg.LinAlgError:
            jitter = max(1e-10, 10 * jitter) * max(1.0, np.abs(np.diag(cov)).max())
    return np.diag(np.sqrt(np.abs(np.diag(cov)) + 1e-8))


def _d_prior_log(D: np.ndarray, priors: PriorSpec) -> float:
    """Prior log-density of ``D`` w.r.t. its unique elements."""
    q = len(D)
    v = np.diag(D)
    if np.any(v <= 0):
        return -np.inf
    s = np.sqrt(v)
    R = D / np.outer(s, s)
    lp = float(np.sum(stats.invgamma.logpdf(v, priors.D_shape, scale=priors.D_rate)))
    lp += lkj_log_density(R, priors.lkj_shape)
    return lp - 0.5 * (q - 1) * float(np.sum(np.log(v)))


def _iw_log_kernel(D: np.ndarray, nu: float, psi: np.ndarray) -> float:
    sign, logdet = np.linalg.slogdet(D)
    if sign <= 0:
        return -np.inf
    return -0.5 * (nu + len(D) + 1) * logdet - 0.5 * float(np.trace(psi @ np.linalg.inv(D)))


class Sampler:
    def __init__(self, model: JointModel, data: Dataset, config: MCMCConfig, priors: PriorSpec):
        self.model = model
        self.data = data
        self.config = config
        self.priors = priors
        self.arr = SubjectArrays(model, data)
        self.rng = np.random.default_rng(config.seed)
        self.fixed = {k: np.asarray(v, dtype=float) for k, v in config.fixed.items()}
        pen = model.penalty
        self.K, self.rank = pen.K, pen.rank
        self.asis = model.q > 0 and not model.has_re_form and "beta" not in self.fixed
        self._init_state()

    # ---- likelihood pieces -------------------------------------------------
    def _lin_q(self, gh0, gamma):
        a = self.arr
        return a.B_q @ gh0 + (a.Wh @ gamma)[:, None], a.B_T @ gh0 + a.Wh @ gamma

    def _surv(self, lin_q, lin_T, Fq, FT, alpha):
        a = self.arr
        lh_q = lin_q + Fq @ alpha
        lh_T = lin_T + FT @ alpha
        with np.errstate(over="ignore", invalid="ignore"):
            cum = np.sum(a.wts * np.exp(lh_q), axis=1)
        out = a.delta * lh_T - cum
        return np.where(np.isfinite(out), out, -np.inf)

    def _refresh(self):
        a, s = self.arr, self
        s.r_base = a.y - a.X @ s.beta
        s.zb = a.z_rows(s.b) if s.model.q else np.zeros_like(a.y)
        s.ssr_i = np.bincount(a.sidx, (s.r_base - s.zb) ** 2, minlength=a.n)
        s.FqX, s.FTX = a.XF_q @ s.beta, a.XF_T @ s.beta
        if s.model.q:
            s.FqZ, s.FTZ = a.fz_q(s.b), a.fz_T(s.b)
        else:
            s.FqZ, s.FTZ = np.zeros_like(s.FqX), np.zeros_like(s.FTX)
        s.lin_q, s.lin_T = s._lin_q(s.gh0, s.gamma)
        s.surv_i = s._surv(s.lin_q, s.lin_T, s.FqX + s.FqZ, s.FTX + s.FTZ, s.alpha)

    # ---- initialization ----------------------------------------------------
    def _init_state(self):
        m, a, cfg = self.model, self.arr, self.fixed
        q = m.q
        beta, *_ = np.linalg.lstsq(a.X, a.y, rcond=None)
        resid = a.y - a.X @ beta
        s2 = max(float(np.var(resid)), 1e-4)
        b = np.zeros((a.n, q))
        D = np.eye(q) * s2
        if q:
            # two-stage: ridge-shrunk subject deviations, then refit beta and sigma
            prec = a.ZtZ / (0.5 * s2) + np.linalg.inv(np.eye(q) * s2 + 1e-6)[None]
            rhs = np.zeros((a.n, q))
            np.add.at(rhs, a.sidx, a.Z * resid[:, None] / (0.5 * s2))
            b = np.linalg.solve(prec, rhs[:, :, None])[..., 0]
            beta, *_ = np.linalg.lstsq(a.X, a.y - a.z_rows(b), rcond=None)
            D = np.cov(b, rowvar=False).reshape(q, q) + 1e-3 * np.eye(q)
            resid = a.y - a.X @ beta - a.z_rows(b)
            s2 = max(float(np.sum(resid ** 2) / max(resid.size - q, 1)), 1e-4)
        self.beta = cfg.get("beta", beta).astype(float).copy()
        self.sigma = float(cfg.get("sigma", np.sqrt(s2)))
        self.D = cfg.get("D", D).reshape(q, q).astype(float).copy()
        self.b = b
        self.tau = float(cfg.get("tau", self.priors.tau_shape / self.priors.tau_rate))
        self.gamma = cfg.get("gamma", np.zeros(m.n_gamma)).reshape(m.n_gamma).astype(float).copy()
        self.alpha = cfg.get("alpha", np.zeros(m.n_alpha)).reshape(m.n_alpha).astype(float).copy()
        self.gh0 = cfg.get("gamma_h0", self._null_hazard_fit()).astype(float).copy()
        self._refresh()
        self._check_finite()

        P, k, A = m.n_baseline, m.n_gamma, m.n_alpha
        free = np.concatenate([np.full(P, "gamma_h0" not in cfg), np.full(k, "gamma" not in cfg),
                               np.full(A, "alpha" not in cfg)])
        self.surv_prop = _Adaptive(self._surv_cov(), free)
        # beta moves given b; its conditional precision is the right shape, the
        # marginal (empirical) covariance is far too wide after centred steps
        xtx = a.X.T @ a.X / self.sigma ** 2 + np.eye(m.p) / self.priors.beta_sd ** 2
        self.beta_prop = _Adaptive(np.linalg.inv(xtx), np.full(m.p, "beta" not in cfg),
                                   empirical=not self.asis)
        self.sigma_prop = _Adaptive(np.array([[1.0 / max(a.y.size, 1)]]), np.array(["sigma" not in cfg]))
        self.b_log_scale = np.full(a.n, np.log(2.38 / np.sqrt(max(q, 1))))

    def _check_finite(self):
        checks = {
            "longitudinal (beta, sigma, b)": np.sum(self.ssr_i) if np.isfinite(self.sigma) else np.nan,
            "survival (gamma_h0, gamma, alpha)": np.sum(self.surv_i),
            "D": np.linalg.slogdet(self.D)[0] if self.model.q else 1.0,
        }
        for block, val in checks.items():
            if not np.isfinite(val) or (block == "D" and val <= 0):
                raise InitializationError(f"non-finite log-posterior at initialization in block {block}")
        if not self.sigma > 0:
            raise InitializationError("non-finite log-posterior at initialization in block sigma")

    def _null_hazard_fit(self) -> np.ndarray:
        """Penalized Newton fit of a spline hazard without the biomarker."""
        a, pr = self.arr, self.priors
        P = self.model.n_baseline
        rate = max(a.delta.sum(), 1.0) / max(a.T.sum(), 1e-8)
        g = np.full(P, np.log(rate))
        prec = self.tau * self.K + np.eye(P) / pr.gamma_h0_sd ** 2

        def objective(g):
            lh_q = a.B_q @ g
            with np.errstate(over="ignore"):
                e = a.wts * np.exp(lh_q)
            return float(np.sum(a.delta * (a.B_T @ g)) - e.sum() - 0.5 * g @ prec @ g), e

        f, e = objective(g)
        for _ in range(100):
            grad = a.delta @ a.B_T - np.einsum("ng,ngp->p", e, a.B_q) - prec @ g
            hess = -np.einsum("ng,ngp,ngr->pr", e, a.B_q, a.B_q) - prec
            step = np.linalg.solve(-hess, grad)
            t = 1.0
            while True:
                f_new, e_new = objective(g + t * step)
                if f_new >= f - 1e-12 or t < 1e-8:
                    break
                t *= 0.5
            g, f, e = g + t * step, f_new, e_new
            if np.max(np.abs(t * step)) < 1e-8:
                break
        return g

    def _surv_cov(self) -> np.ndarray:
        a, pr, m = self.arr, self.priors, self.model
        Fq = self.FqX + self.FqZ
        n, G = a.wts.shape
        U = np.concatenate([a.B_q, np.broadcast_to(a.Wh[:, None, :], (n, G, m.n_gamma)), Fq], axis=2)
        lh = self.lin_q + Fq @ self.alpha
        with np.errstate(over="ignore"):
            e = a.wts * np.exp(lh)
        info = np.einsum("ng,ngi,ngj->ij", e, U, U)
        P = m.n_baseline
        prior = np.zeros_like(info)
        prior[:P, :P] = self.tau * self.K + np.eye(P) / pr.gamma_h0_sd ** 2
        idx = np.arange(P, P + m.n_gamma)
        prior[idx, idx] = 1 / pr.gamma_sd ** 2
        idx = np.arange(P + m.n_gamma, info.shape[0])
        prior[idx, idx] = 1 / pr.alpha_sd ** 2
        return np.linalg.inv(info + prior)

    # ---- block updates -----------------------------------------------------
    def update_b(self, it: int, adapting: bool):
        a, m, rng = self.arr, self.model, self.rng
        q = m.q
        Dinv = np.linalg.inv(self.D)
        prec = a.ZtZ / self.sigma ** 2 + Dinv[None]
        L = np.linalg.cholesky(prec)
        z = rng.standard_normal((a.n, q))
        step = np.linalg.solve(np.swapaxes(L, 1, 2), z[:, :, None])[..., 0]
        b_new = self.b + np.exp(self.b_log_scale)[:, None] * step
        zb_new = a.z_rows(b_new)
        ssr_new = np.bincount(a.sidx, (self.r_base - zb_new) ** 2, minlength=a.n)
        FqZ_new, FTZ_new = a.fz_q(b_new), a.fz_T(b_new)
        surv_new = self._surv(self.lin_q, self.lin_T, self.FqX + FqZ_new, self.FTX + FTZ_new, self.alpha)
        prior_old = -0.5 * np.einsum("ni,ij,nj->n", self.b, Dinv, self.b)
        prior_new = -0.5 * np.einsum("ni,ij,nj->n", b_new, Dinv, b_new)
        log_r = (-(ssr_new - self.ssr_i) / (2 * self.sigma ** 2) + surv_new - self.surv_i
                 + prior_new - prior_old)
        acc_prob = np.exp(np.minimum(log_r, 0.0))
        acc = rng.random(a.n) < acc_prob
        if acc.any():
            self.b[acc] = b_new[acc]
            rows = acc[a.sidx]
            self.zb[rows] = zb_new[rows]
            self.ssr_i[acc] = ssr_new[acc]
            self.FqZ[acc] = FqZ_new[acc]
            self.FTZ[acc] = FTZ_new[acc]
            self.surv_i[acc] = surv_new[acc]
        if adapting:
            self.b_log_scale += (acc_prob - TARGET_ACCEPT) / (it + 1) ** 0.6
        return acc.mean()

    def _beta_prior(self, beta):
        return -0.5 * float(beta @ beta) / self.priors.beta_sd ** 2

    def update_beta(self, it: int, adapting: bool):
        prop = self.beta_prop
        if not prop.d:
            return np.nan
        a = self.arr
        beta_new = prop.propose(self.beta, self.rng)
        r_new = a.y - a.X @ beta_new
        ssr_new = np.bincount(a.sidx, (r_new - self.zb) ** 2, minlength=a.n)
        FqX_new, FTX_new = a.XF_q @ beta_new, a.XF_T @ beta_new
        surv_new = self._surv(self.lin_q, self.lin_T, FqX_new + self.FqZ, FTX_new + self.FTZ, self.alpha)
        log_r = (-(ssr_new.sum() - self.ssr_i.sum()) / (2 * self.sigma ** 2)
                 + surv_new.sum() - self.surv_i.sum()
                 + self._beta_prior(beta_new) - self._beta_prior(self.beta))
        acc_prob = float(np.exp(min(log_r, 0.0))) if np.isfinite(log_r) else 0.0
        accepted = self.rng.random() < acc_prob
        if accepted:
            self.beta = beta_new
            self.r_base, self.ssr_i, self.FqX, self.FTX, self.surv_i = r_new, ssr_new, FqX_new, FTX_new, surv_new
        prop.proposed += 1
        prop.accepted += accepted
        if adapting:
            prop.adapt(acc_prob, it)
            prop.record(self.beta, it, self.config.burn_in)
        return float(accepted)

    def update_beta_centred(self):
        """Exact draw of the time-basis coefficients given ``beta + b_i``."""
        m, n = self.model.q, self.arr.n
        c = self.beta[:m] + self.b
        Dinv = np.linalg.inv(self.D)
        prec = n * Dinv + np.eye(m) / self.priors.beta_sd ** 2
        cov = np.linalg.inv(prec)
        mean = cov @ (Dinv @ c.sum(axis=0))
        new = mean + np.linalg.cholesky(0.5 * (cov + cov.T)) @ self.rng.standard_normal(m)
        self.beta = self.beta.copy()
        self.beta[:m] = new
        self.b = c - new
        self._refresh()

    def update_sigma(self, it: int, adapting: bool):
        prop = self.sigma_prop
        if not prop.d:
            return np.nan
        N, pr = self.arr.y.size, self.priors
        ssr = self.ssr_i.sum()

        def target(log_s):
            s2 = np.exp(2 * log_s)
            return (-N * log_s - ssr / (2 * s2)
                    + stats.invgamma.logpdf(s2, pr.sigma2_shape, scale=pr.sigma2_rate) + 2 * log_s)

        cur = np.array([np.log(self.sigma)])
        new = prop.propose(cur, self.rng)
        log_r = target(new[0]) - target(cur[0])
        acc_prob = float(np.exp(min(log_r, 0.0))) if np.isfinite(log_r) else 0.0
        accepted = self.rng.random() < acc_prob
        if accepted:
            self.sigma = float(np.exp(new[0]))
        prop.proposed += 1
        prop.accepted += accepted
        if adapting:
            prop.adapt(acc_prob, it)
            prop.record(np.array([np.log(self.sigma)]), it, self.config.burn_in)
        return float(accepted)

    def _surv_prior(self, gh0, gamma, alpha):
        pr = self.priors
        return (0.5 * self.rank * np.log(self.tau) - 0.5 * self.tau * float(gh0 @ self.K @ gh0)
                - 0.5 * float(gh0 @ gh0) / pr.gamma_h0_sd ** 2
                - 0.5 * float(gamma @ gamma) / pr.gamma_sd ** 2
                - 0.5 * float(alpha @ alpha) / pr.alpha_sd ** 2)

    def update_survival(self, it: int, adapting: bool):
        prop = self.surv_prop
        if not prop.d:
            return np.nan
        P, k = self.model.n_baseline, self.model.n_gamma
        cur = np.concatenate([self.gh0, self.gamma, self.alpha])
        new = prop.propose(cur, self.rng)
        gh0, gamma, alpha = new[:P], new[P:P + k], new[P + k:]
        lin_q, lin_T = self._lin_q(gh0, gamma)
        surv_new = self._surv(lin_q, lin_T, self.FqX + self.FqZ, self.FTX + self.FTZ, alpha)
        log_r = (surv_new.sum() - self.surv_i.sum()
                 + self._surv_prior(gh0, gamma, alpha) - self._surv_prior(self.gh0, self.gamma, self.alpha))
        acc_prob = float(np.exp(min(log_r, 0.0))) if np.isfinite(log_r) else 0.0
        accepted = self.rng.random() < acc_prob
        if accepted:
            self.gh0, self.gamma, self.alpha = gh0, gamma, alpha
            self.lin_q, self.lin_T, self.surv_i = lin_q, lin_T, surv_new
        prop.proposed += 1
        prop.accepted += accepted
        if adapting:
            prop.adapt(acc_prob, it)
            prop.record(np.concatenate([self.gh0, self.gamma, self.alpha]), it, self.config.burn_in)
        return float(accepted)

    def update_D(self):
        q, n = self.model.q, self.arr.n
        nu0, psi0 = q + 1.0, 1e-3 * np.eye(q)
        S = self.b.T @ self.b
        D_new = stats.invwishart.rvs(df=nu0 + n, scale=psi0 + S, random_state=self.rng)
        D_new = np.atleast_2d(D_new)
        D_new = 0.5 * (D_new + D_new.T)
        log_r = (_d_prior_log(D_new, self.priors) - _iw_log_kernel(D_new, nu0, psi0)
                 - _d_prior_log(self.D, self.priors) + _iw_log_kernel(self.D, nu0, psi0))
        if np.isfinite(log_r) and np.log(self.rng.random()) < log_r:
            self.D = D_new
            return 1.0
        return 0.0

    def update_tau(self):
        shape, rate = tau_conditional(self.gh0, self.K, self.rank, self.priors)
        self.tau = float(self.rng.gamma(shape, 1.0 / rate))

    # ---- driver ------------------------------------------------------------
    def run(self) -> PosteriorDraws:
        cfg, m = self.config, self.model
        keep = [it for it in range(cfg.burn_in, cfg.iterations) if (it - cfg.burn_in) % cfg.thin == 0]
        S = len(keep)
        out = {
            "beta": np.empty((S, m.p)), "sigma": np.empty(S), "gamma_h0": np.empty((S, m.n_baseline)),
            "gamma": np.empty((S, m.n_gamma)), "alpha": np.empty((S, m.n_alpha)),
            "D": np.empty((S, m.q, m.q)), "tau": np.empty(S), "b": np.empty((S, self.arr.n, m.q)),
        }
        acc = {k: [] for k in ("b", "beta", "sigma", "survival", "D")}
        fixed = self.fixed
        s = 0
        for it in range(cfg.iterations):
            adapting = it < cfg.burn_in
            rates = {}
            if m.q:
                rates["b"] = self.update_b(it, adapting)
            rates["beta"] = self.update_beta(it, adapting)
            if self.asis:
                self.update_beta_centred()
            rates["sigma"] = self.update_sigma(it, adapting)
            rates["survival"] = self.update_survival(it, adapting)
            if m.q and "D" not in fixed:
                rates["D"] = self.update_D()
            if "tau" not in fixed:
                self.update_tau()
            if not adapting:
                for k, v in rates.items():
                    if not np.isnan(v):
                        acc[k].append(v)
            if s < S and it == keep[s]:
                out["beta"][s], out["sigma"][s], out["gamma_h0"][s] = self.beta, self.sigma, self.gh0
                out["gamma"][s], out["alpha"][s], out["D"][s] = self.gamma, self.alpha, self.D
                out["tau"][s], out["b"][s] = self.tau, self.b
                s += 1
        acceptance = {k: float(np.mean(v)) for k, v in acc.items() if v}
        meta = {**cfg.as_dict(), "n_subjects": self.arr.n, "model": m.spec.name}
        return PosteriorDraws(m, **out, subject_ids=tuple(self.data.ids), acceptance=acceptance, meta=meta)


def tau_conditional(gamma_h0, K, rank, priors: PriorSpec) -> tuple[float, float]:
    """Shape and rate of the Gamma full conditional of the smoothing parameter."""
    g = np.asarray(gamma_h0, dtype=float)
    return priors.tau_shape + 0.5 * rank, priors.tau_rate + 0.5 * float(g @ K @ g)


def sample_tau(gamma_h0, K, rank, priors: PriorSpec, rng: np.random.Generator, size=None):
    shape, rate = tau_conditional(gamma_h0, K, rank, priors)
    return rng.gamma(shape, 1.0 / rate, size=size)


def fit_mcmc(spec: JointModelSpec | JointModel, data: Dataset, config: MCMCConfig | None = None,
             priors: PriorSpec | None = None) -> PosteriorDraws:
    """Sample the joint posterior of all parameters and random effects."""
    if len(data) == 0:
        raise PreconditionError("cannot fit a model to an empty dataset")
    config = config or MCMCConfig()
    model = spec if isinstance(spec, JointModel) else JointModel.from_data(spec, data)
    priors = priors or model.spec.priors
    if "sigma" in config.fixed and not float(np.asarray(config.fixed["sigma"])) > 0:
        raise DomainError("fixed sigma must be positive")
    return Sampler(model, data, config, priors).run()
