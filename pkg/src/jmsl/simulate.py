"""Synthetic joint longitudinal/survival data from six generating models.

Cells cross a linear or nonlinear (quadratic B-spline) subject trajectory
with a value, slope or area association. All cells share one baseline
hazard so that with ``alpha = 0`` they generate identical event-time laws.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .core import Dataset, SubjectRecord
from .errors import CalibrationError, PreconditionError, SpecError
from .numerics import SplineBasis, brent_root, gl_panel_nodes

HORIZON = 25.0
TRAJECTORIES = ("linear", "nonlinear")
FORMS = ("value", "slope", "area")
CELLS = tuple(f"{t}-{f}" for t in TRAJECTORIES for f in FORMS)
CENSORING = ("random-uniform", "informative", "none")

NONLINEAR_BASIS = SplineBasis((8.0, 16.0), (0.0, HORIZON), 2)
# log h0(t) = -6 + 0.2 t as a degree-1 spline on [0, horizon]
BASELINE_BASIS = SplineBasis((), (0.0, HORIZON), 1)
BASELINE_CONST = -6.0
BASELINE_COEF = (0.0, 0.2 * HORIZON)


def _linear_D() -> np.ndarray:
    sd = np.sqrt([0.8, 0.04])
    corr = np.array([[1.0, -0.3], [-0.3, 1.0]])
    return corr * np.outer(sd, sd)


@dataclass(frozen=True)
class GeneratorSpec:
    trajectory: str
    functional_form: str
    beta: tuple
    D: tuple
    sigma: float
    alpha: float
    baseline_const: float = BASELINE_CONST
    baseline_coef: tuple = BASELINE_COEF
    gamma: tuple = ()
    schedule: tuple = tuple(float(v) for v in range(int(HORIZON)))
    horizon: float = HORIZON

    def __post_init__(self):
        object.__setattr__(self, "beta", tuple(float(v) for v in self.beta))
        object.__setattr__(self, "D", tuple(tuple(float(v) for v in row) for row in np.atleast_2d(self.D)))
        object.__setattr__(self, "schedule", tuple(float(v) for v in self.schedule))
        if self.trajectory not in TRAJECTORIES or self.functional_form not in FORMS:
            raise SpecError(f"unknown generator cell {self.trajectory}-{self.functional_form}")
        dim = 2 if self.trajectory == "linear" else NONLINEAR_BASIS.num_basis
        D = self.D_matrix
        if len(self.beta) != dim or D.shape != (dim, dim):
            raise SpecError(f"{self.label}: beta and D must have dimension {dim}")
        if not np.allclose(D, D.T) or np.any(np.linalg.eigvalsh(D) <= 0):
            raise SpecError(f"{self.label}: D must be symmetric positive-definite")
        if not self.sigma >= 0:
            raise SpecError(f"{self.label}: sigma must be non-negative")
        if len(self.baseline_coef) != BASELINE_BASIS.num_basis:
            raise SpecError(f"{self.label}: need {BASELINE_BASIS.num_basis} baseline coefficients")

    @property
    def label(self) -> str:
        return f"{self.trajectory}-{self.functional_form}"

    @property
    def D_matrix(self) -> np.ndarray:
        return np.array(self.D, dtype=float)

    # subject-level trajectory pieces; ``c`` are the subject coefficients beta + b
    def basis(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.trajectory == "linear":
            return np.stack([np.ones_like(t), t], axis=-1)
        return NONLINEAR_BASIS.evaluate(t)

    def eta(self, c, t):
        return self.basis(t) @ c

    def feature(self, c, t):
        t = np.asarray(t, dtype=float)
        if self.functional_form == "value":
            return self.eta(c, t)
        if self.trajectory == "linear":
            return np.full(t.shape, c[1]) if self.functional_form == "slope" else c[0] + 0.5 * c[1] * t
        if self.functional_form == "slope":
            return NONLINEAR_BASIS.derivative(t) @ c
        safe = np.where(t > 0, t, 1.0)
        return np.where(t > 0, (NONLINEAR_BASIS.integral(t) @ c) / safe, self.eta(c, t))

    def log_baseline(self, t):
        return self.baseline_const + BASELINE_BASIS.evaluate(t) @ np.asarray(self.baseline_coef)

    def log_hazard(self, c, w, t):
        cov = float(np.dot(self.gamma, w)) if len(self.gamma) else 0.0
        return self.log_baseline(t) + cov + self.alpha * self.feature(c, t)

    def cumulative_hazard(self, c, w, t: float) -> float:
        if t <= 0:
            return 0.0
        x, wt = gl_panel_nodes(0.0, t, 0.5 * self.horizon)
        return float(np.sum(wt * np.exp(self.log_hazard(c, w, x))))


def default_generators() -> dict[str, GeneratorSpec]:
    lin = dict(beta=(2.0, -0.25), D=_linear_D(), sigma=0.35)
    nl = dict(beta=(2.0, 0.0, 0.4, 0.825, 1.5), D=np.diag([0.6, 0.2, 0.2, 0.2, 0.3]), sigma=0.35)
    alphas = {"value": 0.9, "slope": 2.5, "area": 0.9}
    out = {}
    for traj, kw in (("linear", lin), ("nonlinear", nl)):
        for form in FORMS:
            g = GeneratorSpec(traj, form, alpha=alphas[form], **kw)
            out[g.label] = g
    return out


@dataclass(frozen=True)
class SubjectTruth:
    id: int
    cell: str
    b: np.ndarray
    event_time: float  # inf when beyond the horizon
    censor_time: float


@dataclass(frozen=True)
class CensoringSpec:
    kind: str = "random-uniform"
    parameter: float | None = None  # uniform upper bound, or informative hazard scale

    def __post_init__(self):
        if self.kind not in CENSORING:
            raise SpecError(f"unknown censoring mechanism {self.kind!r}")


def informative_censoring_hazard(eta, scale: float):
    """Censoring hazard ``scale * exp(0.5 * eta)``."""
    if not scale > 0:
        raise PreconditionError(f"censoring scale must be positive, got {scale}")
    return scale * np.exp(0.5 * np.asarray(eta, dtype=float))


def _invert(cumulative, target: float, horizon: float) -> float:
    """Smallest t with cumulative(t) = target, or inf beyond ``horizon``."""
    if cumulative(horizon) < target:
        return math.inf
    hi = min(1.0, horizon)
    while cumulative(hi) < target:
        hi = min(2.0 * hi, horizon)
    return brent_root(lambda s: cumulative(s) - target, 0.0, hi, tol=1e-10)


def _censoring_cumulative(gen: GeneratorSpec, c, t: float) -> float:
    """``int_0^t exp(0.5 eta(s)) ds``: the informative censoring hazard at unit scale."""
    if t <= 0:
        return 0.0
    x, wt = gl_panel_nodes(0.0, t, 0.5 * gen.horizon)
    return float(np.sum(wt * np.exp(0.5 * gen.eta(c, x))))


def _latent(gen: GeneratorSpec, rng: np.random.Generator):
    dim = len(gen.beta)
    b = rng.multivariate_normal(np.zeros(dim), gen.D_matrix, method="cholesky")
    w = rng.standard_normal(len(gen.gamma))
    c = np.asarray(gen.beta) + b
    e = -math.log(rng.uniform())
    T = _invert(lambda s: gen.cumulative_hazard(c, w, s), e, gen.horizon)
    return b, w, c, T


def simulate_subject(gen: GeneratorSpec, rng: np.random.Generator, subject_id=0,
                     censoring: CensoringSpec = CensoringSpec("none")) -> tuple[SubjectRecord, SubjectTruth]:
    """One subject: random effects, event time by inversion, censoring, visits."""
    b, w, c, T = _latent(gen, rng)
    if censoring.kind == "none":
        C = math.inf
    elif censoring.parameter is None:
        raise PreconditionError("censoring parameter has not been calibrated")
    elif censoring.kind == "random-uniform":
        C = float(rng.uniform(0.0, censoring.parameter))
    else:
        e = -math.log(rng.uniform()) / censoring.parameter
        C = _invert(lambda s: _censoring_cumulative(gen, c, s), e, gen.horizon)
    obs = min(T, C, gen.horizon)
    event = int(T <= min(C, gen.horizon))
    times = np.array([s for s in gen.schedule if s < obs] or [0.0])
    values = gen.eta(c, times) + gen.sigma * rng.standard_normal(times.size)
    record = SubjectRecord(subject_id, w, times, values, obs, event)
    return record, SubjectTruth(subject_id, gen.label, b, T, C)


@dataclass(frozen=True)
class ScenarioSpec:
    scenario: str
    n: int
    mixture: tuple  # ((cell label, count), ...)
    censoring: str
    target_censoring_rate: float = 0.45
    generators: dict = field(default_factory=default_generators, compare=False, hash=False)
    censoring_parameter: float | None = None
    calibration_seed: int = 20_231

    def __post_init__(self):
        object.__setattr__(self, "mixture", tuple((str(k), int(v)) for k, v in self.mixture))
        if sum(v for _, v in self.mixture) != self.n:
            raise SpecError(f"mixture counts sum to {sum(v for _, v in self.mixture)}, not n={self.n}")
        unknown = [k for k, _ in self.mixture if k not in self.generators]
        if unknown:
            raise SpecError(f"mixture names unknown generator cells {unknown}")
        if self.censoring not in CENSORING:
            raise SpecError(f"unknown censoring mechanism {self.censoring!r}")

    @classmethod
    def standard(cls, scenario: str, n: int, **kw) -> "ScenarioSpec":
        """Scenario I (balanced), II (nonlinear-slope heavy) or III (I with informative censoring)."""
        if scenario not in ("I", "II", "III"):
            raise SpecError(f"unknown scenario {scenario!r}")
        if n < len(CELLS):
            raise SpecError(f"need n >= {len(CELLS)}, got {n}")
        share = {c: 1 / 6 for c in CELLS}
        if scenario == "II":
            share = {c: (0.6 if c == "nonlinear-slope" else 0.08) for c in CELLS}
        counts = _apportion(share, n)
        censoring = "informative" if scenario == "III" else "random-uniform"
        return cls(scenario, n, tuple(counts.items()), censoring, **kw)

    def with_n(self, n: int) -> "ScenarioSpec":
        share = {k: v / self.n for k, v in self.mixture}
        return replace(self, n=n, mixture=tuple(_apportion(share, n).items()))

    def calibrated(self) -> "ScenarioSpec":
        if self.censoring == "none" or self.censoring_parameter is not None:
            return self
        return replace(self, censoring_parameter=tune_censoring(self))


def _apportion(share: dict, n: int) -> dict:
    """Largest-remainder rounding of ``n * share``; ties go to earlier cells."""
    raw = {k: v * n for k, v in share.items()}
    counts = {k: int(math.floor(v + 1e-9)) for k, v in raw.items()}
    order = sorted(share, key=lambda k: -(raw[k] - counts[k]))
    for k in order[: n - sum(counts.values())]:
        counts[k] += 1
    return counts


def _censoring_rate(kind: str, param: float, x: np.ndarray, beyond: np.ndarray, g: np.ndarray) -> float:
    """Expected censoring fraction of a latent batch for a given parameter."""
    if kind == "random-uniform":
        p = np.minimum(1.0, x / param)
    else:
        p = -np.expm1(-param * g)
    return float(np.mean(np.where(beyond, 1.0, p)))


@lru_cache(maxsize=32)
def _latent_batch(mixture: tuple, censoring: str, generators: tuple, seed: int):
    gens = dict(generators)
    x, beyond, g = [], [], []
    i = 0
    for cell, count in mixture:
        gen = gens[cell]
        for _ in range(count):
            rng = np.random.default_rng(np.random.SeedSequence([seed, 7, i]))
            i += 1
            _, _, c, T = _latent(gen, rng)
            xi = min(T, gen.horizon)
            x.append(xi)
            beyond.append(T > gen.horizon)
            g.append(_censoring_cumulative(gen, c, xi) if censoring == "informative" else 0.0)
    return np.array(x), np.array(beyond), np.array(g)


def tune_censoring(spec: ScenarioSpec, rng: np.random.Generator | None = None, batch: int = 5000) -> float:
    """Censoring parameter giving the target expected censoring rate.

    Event times of a latent batch are drawn once; the censoring rate is then
    an explicit function of the parameter (uniform bound ``c`` or
    informative hazard scale), solved by bisection on the log scale.
    """
    target = spec.target_censoring_rate
    if not 0.05 < target < 0.95:
        raise PreconditionError(f"target censoring rate must lie in (0.05, 0.95), got {target}")
    if spec.censoring == "none":
        raise PreconditionError("no censoring mechanism to calibrate")
    seed = spec.calibration_seed if rng is None else int(rng.integers(2 ** 31))
    gens = tuple(sorted(spec.generators.items()))
    x, beyond, g = _latent_batch(spec.with_n(batch).mixture, spec.censoring, gens, seed)
    floor = float(np.mean(beyond))
    if floor >= target:
        raise CalibrationError(
            f"{floor:.3f} of subjects survive the horizon, above the target censoring rate {target}")
    rate = lambda log_p: _censoring_rate(spec.censoring, math.exp(log_p), x, beyond, g)
    # uniform: rate falls with c; informative: rate rises with the scale
    sign = -1.0 if spec.censoring == "random-uniform" else 1.0
    f = lambda log_p: sign * (rate(log_p) - target)
    lo, hi = -10.0, 10.0
    if f(lo) > 0 or f(hi) < 0:
        raise CalibrationError(f"censoring rate {rate(lo):.3f}..{rate(hi):.3f} never brackets {target}")
    return math.exp(brent_root(f, lo, hi, tol=1e-10))


def simulate_dataset(spec: ScenarioSpec, seed: int, stream: int = 0) -> tuple[Dataset, list[SubjectTruth]]:
    """Subjects ordered by mixture cell; subject ``i`` draws from its own
    stream ``SeedSequence([seed, stream, i])``."""
    spec = spec.calibrated()
    cens = CensoringSpec(spec.censoring, spec.censoring_parameter)
    records, truth = [], []
    i = 0
    for cell, count in spec.mixture:
        gen = spec.generators[cell]
        for _ in range(count):
            rng = np.random.default_rng(np.random.SeedSequence([seed, stream, i]))
            rec, tr = simulate_subject(gen, rng, subject_id=i + 1, censoring=cens)
            records.append(rec)
            truth.append(tr)
            i += 1
    n_cov = {len(spec.generators[c].gamma) for c, _ in spec.mixture}
    if len(n_cov) != 1:
        raise SpecError("all generator cells must share the covariate dimension")
    names = tuple(f"w{k + 1}" for k in range(n_cov.pop()))
    return Dataset(tuple(records), names), truth


def censoring_rate(data: Dataset) -> float:
    return float(1.0 - data.events.mean())
