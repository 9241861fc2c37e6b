"""Joint model specification and the design matrices it induces.

The longitudinal mean is ``eta(t) = x(t) @ beta + z(t) @ b`` with
``x(t) = [time basis, longitudinal covariates]`` and ``z(t)`` the time basis
(or nothing when random effects are switched off). Every functional form is
linear in ``(beta, b)``, so the association term of the hazard is
``alpha @ (XF(t) @ beta + ZF(t) @ b)`` for form-specific designs ``XF, ZF``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from ..core import Dataset
from ..errors import DomainError, SpecError, UnsupportedOperationError
from ..numerics import SplineBasis, penalty_matrix

TRAJECTORIES = ("linear", "spline")
FORM_KINDS = ("value", "slope", "area", "random-effects")


class ExtrapolationWarning(UserWarning):
    """A trajectory spline was evaluated beyond its boundary knots."""


@dataclass(frozen=True)
class FormSpec:
    kind: str = "value"
    window: float | None = None  # area only; None averages over (0, t)

    def __post_init__(self):
        if self.kind not in FORM_KINDS:
            raise SpecError(f"unknown functional form {self.kind!r}")
        if self.window is not None and not self.window > 0:
            raise SpecError(f"area window must be positive, got {self.window}")

    @property
    def label(self) -> str:
        if self.kind != "area":
            return self.kind
        return "area(t)" if self.window is None else f"area({self.window:g})"


@dataclass(frozen=True)
class PriorSpec:
    beta_sd: float = 10.0
    gamma_sd: float = 10.0
    alpha_sd: float = 10.0
    gamma_h0_sd: float = 10.0
    sigma2_shape: float = 0.01
    sigma2_rate: float = 0.01
    D_shape: float = 0.01
    D_rate: float = 0.01
    lkj_shape: float = 2.0
    tau_shape: float = 5.0
    tau_rate: float = 0.05

    def __post_init__(self):
        for name, val in self.__dict__.items():
            if not (np.isfinite(val) and val > 0):
                raise SpecError(f"prior hyperparameter {name} must be positive, got {val}")


@dataclass(frozen=True)
class JointModelSpec:
    name: str = "jm"
    trajectory: str = "linear"
    spline: SplineBasis | None = None
    long_covariates: tuple[str, ...] = ()
    forms: tuple[FormSpec, ...] = (FormSpec("value"),)
    hazard_covariates: tuple[str, ...] = ()
    baseline_degree: int = 3
    baseline_interior_knots: int = 5
    penalty_order: int = 2
    random_effects: bool = True
    priors: PriorSpec = field(default_factory=PriorSpec)

    def __post_init__(self):
        object.__setattr__(self, "long_covariates", tuple(self.long_covariates))
        object.__setattr__(self, "hazard_covariates", tuple(self.hazard_covariates))
        object.__setattr__(self, "forms", tuple(self.forms))
        if self.trajectory not in TRAJECTORIES:
            raise SpecError(f"unknown trajectory {self.trajectory!r}")
        if self.trajectory == "spline":
            if self.spline is None:
                raise SpecError("spline trajectory needs a SplineBasis")
            if self.spline.degree < 1 and any(f.kind == "slope" for f in self.forms):
                raise SpecError("slope form needs a differentiable trajectory basis")
        if any(f.kind == "random-effects" for f in self.forms) and not self.random_effects:
            raise SpecError("random-effects form needs random effects")
        if self.baseline_degree + self.baseline_interior_knots + 1 <= self.penalty_order:
            raise SpecError("baseline spline too small for the penalty order")


@dataclass
class ParameterVector:
    """One value of every model parameter; ``sigma`` is the residual sd."""

    beta: np.ndarray
    sigma: float
    gamma_h0: np.ndarray
    gamma: np.ndarray
    alpha: np.ndarray
    D: np.ndarray
    tau: float

    def __post_init__(self):
        self.beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        self.gamma_h0 = np.atleast_1d(np.asarray(self.gamma_h0, dtype=float))
        self.gamma = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        self.alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        self.D = np.atleast_2d(np.asarray(self.D, dtype=float)) if np.size(self.D) else np.zeros((0, 0))
        self.sigma = float(self.sigma)
        self.tau = float(self.tau)

    def validate(self):
        if not self.sigma > 0:
            raise DomainError(f"sigma must be positive, got {self.sigma}")
        if not self.tau > 0:
            raise DomainError(f"tau must be positive, got {self.tau}")
        if self.D.size:
            if not np.allclose(self.D, self.D.T):
                raise DomainError("D must be symmetric")
            if np.any(np.linalg.eigvalsh(self.D) <= 0):
                raise DomainError("D must be positive definite")
        return self

    def copy(self) -> "ParameterVector":
        return ParameterVector(self.beta.copy(), self.sigma, self.gamma_h0.copy(), self.gamma.copy(),
                               self.alpha.copy(), self.D.copy(), self.tau)


def baseline_basis_from_data(data: Dataset, degree: int = 3, n_interior: int = 5) -> SplineBasis:
    """Boundary at 0 and the 99th percentile of observed times; interior
    knots at equally spaced quantiles of the observed event times."""
    T = data.obs_times
    hi = float(np.quantile(T, 0.99))
    ev = T[data.events == 1]
    probs = np.arange(1, n_interior + 1) / (n_interior + 1)
    knots = np.quantile(ev, probs) if ev.size >= n_interior else hi * probs
    knots = np.unique(np.clip(knots, 1e-6 * hi, hi * (1 - 1e-6)))
    if knots.size < n_interior or np.any(np.diff(knots) < 1e-6 * hi):
        knots = hi * probs
    return SplineBasis(tuple(knots), (0.0, hi), degree)


@dataclass(frozen=True)
class JointModel:
    """A specification resolved against a dataset's covariates and times."""

    spec: JointModelSpec
    baseline: SplineBasis
    covariate_names: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))
        for name in (*self.spec.long_covariates, *self.spec.hazard_covariates):
            if name not in self.covariate_names:
                raise SpecError(f"covariate {name!r} not in dataset columns {self.covariate_names}")
        if self.baseline.num_basis <= self.spec.penalty_order:
            raise SpecError("baseline spline too small for the penalty order")

    @classmethod
    def from_data(cls, spec: JointModelSpec, data: Dataset) -> "JointModel":
        basis = baseline_basis_from_data(data, spec.baseline_degree, spec.baseline_interior_knots)
        return cls(spec, basis, data.covariate_names)

    # dimensions
    @property
    def m(self) -> int:
        return 2 if self.spec.trajectory == "linear" else self.spec.spline.num_basis

    @property
    def p(self) -> int:
        return self.m + len(self.spec.long_covariates)

    @property
    def q(self) -> int:
        return self.m if self.spec.random_effects else 0

    @property
    def n_alpha(self) -> int:
        return sum(self.q if f.kind == "random-effects" else 1 for f in self.spec.forms)

    @property
    def n_gamma(self) -> int:
        return len(self.spec.hazard_covariates)

    @property
    def n_baseline(self) -> int:
        return self.baseline.num_basis

    @property
    def penalty(self):
        return penalty_matrix(self.n_baseline, self.spec.penalty_order)

    @property
    def split_width(self) -> float:
        """Hazard integrals longer than this use two quadrature panels."""
        return 0.5 * self.baseline.boundary[1]

    @property
    def has_re_form(self) -> bool:
        return any(f.kind == "random-effects" for f in self.spec.forms)

    def _cov_index(self, names) -> list[int]:
        return [self.covariate_names.index(n) for n in names]

    def long_covariates(self, w) -> np.ndarray:
        return np.asarray(w, dtype=float)[..., self._cov_index(self.spec.long_covariates)]

    def hazard_covariates(self, w) -> np.ndarray:
        return np.asarray(w, dtype=float)[..., self._cov_index(self.spec.hazard_covariates)]

    # time bases
    def time_basis(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.spec.trajectory == "linear":
            return np.stack([np.ones_like(t), t], axis=-1)
        lo, hi = self.spec.spline.boundary
        if np.any((t < lo) | (t > hi)):
            warnings.warn(f"trajectory evaluated outside [{lo}, {hi}]; clamping", ExtrapolationWarning,
                          stacklevel=2)
        return self.spec.spline.evaluate(t)

    def time_basis_deriv(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.spec.trajectory == "linear":
            return np.stack([np.zeros_like(t), np.ones_like(t)], axis=-1)
        if self.spec.spline.degree < 1:
            raise UnsupportedOperationError("slope of a piecewise-constant trajectory")
        return self.spec.spline.derivative(t)

    def time_basis_area(self, t, window=None) -> np.ndarray:
        """Average of the time basis over ``(max(0, t - window), t)``; at t=0 the value."""
        t = np.asarray(t, dtype=float)
        lo = np.zeros_like(t) if window is None else np.maximum(t - window, 0.0)
        width = t - lo
        if self.spec.trajectory == "linear":
            return np.stack([np.ones_like(t), 0.5 * (lo + t)], axis=-1)
        basis = self.spec.spline
        integral = basis.integral(t) - basis.integral(lo)
        safe = np.where(width > 0, width, 1.0)[..., None]
        return np.where(width[..., None] > 0, integral / safe, basis.evaluate(t))

    # designs
    def long_design(self, t, w) -> tuple[np.ndarray, np.ndarray]:
        """``x(t)`` of shape (..., p) and ``z(t)`` of shape (..., q)."""
        tb = self.time_basis(t)
        wl = np.broadcast_to(self.long_covariates(w), tb.shape[:-1] + (len(self.spec.long_covariates),))
        x = np.concatenate([tb, wl], axis=-1)
        z = tb if self.spec.random_effects else tb[..., :0]
        return x, z

    def feature_design(self, t, w) -> tuple[np.ndarray, np.ndarray]:
        """Association designs ``XF`` (..., A, p) and ``ZF`` (..., A, q)."""
        t = np.asarray(t, dtype=float)
        wl = self.long_covariates(w)
        nl = len(self.spec.long_covariates)
        xs, zs = [], []
        for form in self.spec.forms:
            if form.kind == "random-effects":
                xs.append(np.zeros(t.shape + (self.q, self.p)))
                zs.append(np.broadcast_to(np.eye(self.q), t.shape + (self.q, self.q)))
                continue
            if form.kind == "value":
                tb, cov = self.time_basis(t), wl
            elif form.kind == "slope":
                tb, cov = self.time_basis_deriv(t), np.zeros(nl)
            else:
                tb, cov = self.time_basis_area(t, form.window), wl
            cov = np.broadcast_to(cov, tb.shape[:-1] + (nl,))
            xs.append(np.concatenate([tb, cov], axis=-1)[..., None, :])
            zs.append((tb if self.spec.random_effects else tb[..., :0])[..., None, :])
        return np.concatenate(xs, axis=-2), np.concatenate(zs, axis=-2)

    def baseline_design(self, t) -> np.ndarray:
        return self.baseline.evaluate(t)

    def with_spec(self, **changes) -> "JointModel":
        return JointModel(replace(self.spec, **changes), self.baseline, self.covariate_names)
