"""Numerical kernels: B-splines, quadrature, root finding, penalties,
simplex reparameterization, derivative-free minimization and MVN draws.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy import optimize

from .errors import (
    BracketError,
    DomainError,
    NotPositiveDefiniteError,
    UnsupportedOperationError,
)

GL_NODES = 15


@dataclass(frozen=True)
class SplineBasis:
    """B-spline basis on ``[boundary[0], boundary[1]]``.

    ``interior`` holds the interior knots; the boundary knots are repeated
    ``degree + 1`` times to form the full knot vector.
    """

    interior: tuple[float, ...]
    boundary: tuple[float, float]
    degree: int = 3
    knot_vector: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        interior = tuple(float(k) for k in self.interior)
        lo, hi = float(self.boundary[0]), float(self.boundary[1])
        object.__setattr__(self, "interior", interior)
        object.__setattr__(self, "boundary", (lo, hi))
        if self.degree < 0:
            raise DomainError(f"degree must be non-negative, got {self.degree}")
        if not lo < hi:
            raise DomainError(f"boundary must satisfy lo < hi, got {(lo, hi)}")
        knots = np.array((lo, *interior, hi))
        if np.any(np.diff(knots) <= 0):
            raise DomainError(f"knots must be strictly increasing inside the boundary: {knots}")
        kv = np.concatenate(([lo] * (self.degree + 1), interior, [hi] * (self.degree + 1)))
        object.__setattr__(self, "knot_vector", kv)

    @property
    def num_basis(self) -> int:
        return len(self.interior) + self.degree + 1

    def greville(self) -> np.ndarray:
        """Knot averages; coefficients ``a + b * greville`` reproduce ``a + b t``."""
        kv, k = self.knot_vector, self.degree
        if k == 0:
            return 0.5 * (kv[:-1] + kv[1:])
        return np.array([kv[i + 1:i + k + 1].mean() for i in range(self.num_basis)])

    def evaluate(self, t, clamp: bool = True) -> np.ndarray:
        """Basis matrix of shape ``t.shape + (num_basis,)``.

        With ``clamp`` the argument is clipped into the boundary interval,
        so the spline is constant-extrapolated.
        """
        t = np.asarray(t, dtype=float)
        lo, hi = self.boundary
        if clamp:
            t = np.clip(t, lo, hi)
        return _basis_matrix(self.knot_vector, self.degree, t, self.degree + 1)

    def derivative(self, t, clamp: bool = True) -> np.ndarray:
        """First derivative of each basis function; zero outside the boundary."""
        if self.degree == 0:
            raise UnsupportedOperationError("degree-0 B-splines have no derivative")
        t = np.asarray(t, dtype=float)
        lo, hi = self.boundary
        outside = (t < lo) | (t > hi)
        tc = np.clip(t, lo, hi)
        kv, k = self.knot_vector, self.degree
        lower = _basis_matrix(kv, k - 1, tc, k + 1)  # num_basis + 1 functions
        left = kv[k:k + self.num_basis] - kv[:self.num_basis]
        right = kv[k + 1:k + 1 + self.num_basis] - kv[1:1 + self.num_basis]
        cl = np.divide(k, left, out=np.zeros_like(left), where=left > 0)
        cr = np.divide(k, right, out=np.zeros_like(right), where=right > 0)
        d = lower[..., :-1] * cl - lower[..., 1:] * cr
        if clamp:
            d = np.where(outside[..., None], 0.0, d)
        return d

    def integral(self, t) -> np.ndarray:
        """``int_lo^t B_p(s) ds`` for each basis function, exact.

        Uses the degree+1 basis on the knot vector with one extra boundary
        repeat; beyond the boundary the integrand is the clamped (constant)
        basis, matching ``evaluate``.
        """
        t = np.asarray(t, dtype=float)
        lo, hi = self.boundary
        k, n = self.degree, self.num_basis
        kv = self.knot_vector
        ext = np.concatenate(([lo], kv, [hi]))
        upper = _basis_matrix(ext, k + 1, np.clip(t, lo, hi), k + 2)  # n + 1 functions
        tail = np.cumsum(upper[..., ::-1], axis=-1)[..., ::-1]  # sum over i >= j
        scale = (kv[k + 1:k + 1 + n] - kv[:n]) / (k + 1)
        out = tail[..., 1:] * scale
        out = out + np.maximum(t - hi, 0.0)[..., None] * self.evaluate(hi)
        return out - np.maximum(lo - t, 0.0)[..., None] * self.evaluate(lo)


def _basis_matrix(kv: np.ndarray, degree: int, t: np.ndarray, end_mult: int) -> np.ndarray:
    """All degree-``degree`` B-splines on knot vector ``kv`` at points ``t``.

    ``end_mult`` is the multiplicity of each boundary knot in ``kv``; it fixes
    the range of non-degenerate knot spans.
    """
    n_funcs = len(kv) - degree - 1
    flat = t.reshape(-1)
    span_lo = end_mult - 1
    span_hi = len(kv) - end_mult - 1
    span = np.searchsorted(kv, flat, side="right") - 1
    span = np.clip(span, span_lo, span_hi)
    m = flat.size
    N = np.zeros((m, degree + 1))
    N[:, 0] = 1.0
    left = np.zeros((m, degree + 1))
    right = np.zeros((m, degree + 1))
    for j in range(1, degree + 1):
        left[:, j] = flat - kv[span + 1 - j]
        right[:, j] = kv[span + j] - flat
        saved = np.zeros(m)
        for r in range(j):
            temp = N[:, r] / (right[:, r + 1] + left[:, j - r])
            N[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        N[:, j] = saved
    out = np.zeros((m, n_funcs))
    cols = span[:, None] - degree + np.arange(degree + 1)
    np.put_along_axis(out, cols, N, axis=1)
    return out.reshape(t.shape + (n_funcs,))


def _check_inside(basis: SplineBasis, t):
    t = np.asarray(t, dtype=float)
    lo, hi = basis.boundary
    bad = (t < lo) | (t > hi) | ~np.isfinite(t)
    if np.any(bad):
        raise DomainError(f"t={np.atleast_1d(t)[np.atleast_1d(bad)][0]!r} outside boundary [{lo}, {hi}]")
    return t


def bspline_eval(basis: SplineBasis, t) -> np.ndarray:
    """Evaluate the basis at ``t`` (scalar or array) inside the boundary."""
    return basis.evaluate(_check_inside(basis, t), clamp=False)


def bspline_deriv(basis: SplineBasis, t) -> np.ndarray:
    return basis.derivative(_check_inside(basis, t), clamp=False)


@lru_cache(maxsize=8)
def _leggauss(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gl_nodes(a, b, n: int = GL_NODES):
    """Nodes and weights for ``int_a^b`` (broadcasting over array ``a``, ``b``).

    Returns arrays of shape ``broadcast(a, b).shape + (n,)``.
    """
    a = np.asarray(a, dtype=float)[..., None]
    b = np.asarray(b, dtype=float)[..., None]
    x, w = _leggauss(n)
    half = 0.5 * (b - a)
    return 0.5 * (a + b) + half * x, half * w


def gl_panel_nodes(a, b, split_above: float, n: int = GL_NODES):
    """Like :func:`gl_nodes` but with two panels where ``b - a > split_above``.

    Always returns ``2 * n`` nodes; single-panel intervals get zero weights
    on the unused half so results stack across subjects.
    """
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    mid = 0.5 * (a + b)
    two = (b - a) > split_above
    x1, w1 = gl_nodes(a, np.where(two, mid, b), n)
    x2, w2 = gl_nodes(np.where(two, mid, b), b, n)
    w2 = np.where(two[..., None], w2, 0.0)
    return np.concatenate([x1, x2], axis=-1), np.concatenate([w1, w2], axis=-1)


def gauss_legendre(f: Callable, a: float, b: float, nodes: int = GL_NODES) -> float:
    """``nodes``-point Gauss-Legendre approximation of the integral of ``f``.

    ``f`` is called once with the vector of nodes.
    """
    if a > b:
        raise DomainError(f"integration bounds reversed: a={a} > b={b}")
    x, w = gl_nodes(a, b, nodes)
    return float(np.sum(w * np.asarray(f(x), dtype=float)))


def brent_root(f: Callable[[float], float], lo: float, hi: float, tol: float = 1e-10) -> float:
    flo, fhi = f(lo), f(hi)
    if flo == 0.0:
        return float(lo)
    if fhi == 0.0:
        return float(hi)
    if flo * fhi > 0:
        raise BracketError(f"no sign change on [{lo}, {hi}]: f(lo)={flo}, f(hi)={fhi}")
    return float(optimize.brentq(f, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps, maxiter=500))


def softmax(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise DomainError(f"softmax needs finite input, got {v}")
    e = np.exp(v - v.max())
    return e / e.sum()


@dataclass
class MinimizeResult:
    x: np.ndarray
    fun: float
    converged: bool
    nit: int
    nfev: int

    def __iter__(self):
        return iter((self.x, self.fun))


def nelder_mead_min(objective: Callable, x0: Sequence[float], tol: float = 1e-8,
                    max_iter: int = 2000) -> MinimizeResult:
    """Nelder-Mead minimization; non-finite objective values count as +inf."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    f0 = float(objective(x0))
    if not np.isfinite(f0):
        raise DomainError(f"objective is not finite at x0={x0}")

    def safe(x):
        val = float(objective(x))
        return val if np.isfinite(val) else np.inf

    res = optimize.minimize(
        safe, x0, method="Nelder-Mead",
        options={"xatol": tol, "fatol": tol, "maxiter": max_iter,
                 "maxfev": 4 * max_iter, "adaptive": x0.size > 3},
    )
    x, fun = np.asarray(res.x, dtype=float), float(res.fun)
    if not fun <= f0:
        x, fun = x0, f0
    return MinimizeResult(x, fun, bool(res.success), int(res.nit), int(res.nfev))


@dataclass(frozen=True)
class PenaltyMatrix:
    order: int
    dim: int
    K: np.ndarray
    rank: int


def penalty_matrix(P: int, r: int) -> PenaltyMatrix:
    if r < 1 or P <= r:
        raise DomainError(f"need P > r >= 1, got P={P}, r={r}")
    delta = np.diff(np.eye(P), n=r, axis=0)
    K = delta.T @ delta
    return PenaltyMatrix(order=r, dim=P, K=K, rank=P - r)


def cholesky(cov) -> np.ndarray:
    cov = np.asarray(cov, dtype=float)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(f"covariance is not positive definite: {cov.tolist()}") from exc


def mvn_sample(mean, covariance, rng: np.random.Generator, size=None) -> np.ndarray:
    mean = np.asarray(mean, dtype=float)
    L = cholesky(covariance)
    shape = (mean.size,) if size is None else (*np.atleast_1d(size), mean.size)
    z = rng.standard_normal(shape)
    return mean + z @ L.T
