"""Proper scoring rules for interval risk predictions.

All functions take arrays over the subjects at risk at the landmark ``t``:
observed times ``T``, event indicators ``delta`` and predicted risks
``pi(s | t)``. Probabilities are never altered; logarithms see values
clamped into ``[1e-12, 1]``, except exact zeros, which give an infinite
score and are reported.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, PlanError, PreconditionError, UndefinedWeightError

LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class CensoringCurve:
    """Reverse Kaplan-Meier ``G(s | t) = Pr(C > s | C > t)``, a right-continuous step function."""

    anchor: float
    times: np.ndarray
    values: np.ndarray

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        k = np.searchsorted(self.times, s, side="right")
        return np.where(k == 0, 1.0, self.values[np.maximum(k - 1, 0)]) if self.times.size else np.ones_like(s)

    def left(self, s):
        """``G(s-)``: the value just before any jump at ``s``."""
        s = np.asarray(s, dtype=float)
        k = np.searchsorted(self.times, s, side="left")
        return np.where(k == 0, 1.0, self.values[np.maximum(k - 1, 0)]) if self.times.size else np.ones_like(s)


def reverse_km(T, delta, t: float) -> CensoringCurve:
    """Product-limit estimate of the censoring survival among subjects with ``T > t``.

    Censorings are the events here. At a tie, subjects with an observed event
    at the same time stay in the censoring risk set.
    """
    T = np.asarray(T, dtype=float)
    delta = np.asarray(delta, dtype=int)
    keep = T > t
    if not keep.any():
        raise DomainError(f"no subjects at risk at t={t}")
    T, delta = T[keep], delta[keep]
    jumps = np.unique(T[delta == 0])
    at_risk = np.array([(T >= s).sum() for s in jumps])
    cens = np.array([((T == s) & (delta == 0)).sum() for s in jumps])
    values = np.cumprod(1.0 - cens / at_risk) if jumps.size else np.zeros(0)
    return CensoringCurve(float(t), jumps, values)


def _window(T, delta, t, dt):
    T = np.asarray(T, dtype=float)
    delta = np.asarray(delta, dtype=int)
    if np.any(T <= t):
        raise PreconditionError(f"every subject must be at risk at t={t}")
    if not dt > 0:
        raise PreconditionError("window length must be positive")
    end = t + dt
    event_in = (T <= end) & (delta == 1)
    censored_in = (T <= end) & (delta == 0)
    survivor = T > end
    return T, event_in, censored_in, survivor


def ipcw_weights(T, delta, G: CensoringCurve, t: float, dt: float, ids=None) -> np.ndarray:
    """``W_i``: events in the window by ``1/G(T_i-)``, survivors by ``1/G(t+dt)``, censored 0."""
    T, event_in, censored_in, survivor = _window(T, delta, t, dt)
    g_event = G.left(T)
    g_end = float(G(t + dt))
    need_event = event_in & (g_event <= 0)
    if need_event.any() or (survivor.any() and g_end <= 0):
        bad = np.flatnonzero(need_event | (survivor & (g_end <= 0)))[0]
        who = ids[bad] if ids is not None else bad
        raise UndefinedWeightError(f"censoring survival estimate is 0 where subject {who!r} needs a weight")
    W = np.zeros(T.size)
    W[event_in] = 1.0 / g_event[event_in]
    W[survivor] = 1.0 / g_end
    return W


def brier_ipcw(T, delta, risk, G: CensoringCurve, t: float, dt: float, ids=None) -> float:
    """IPCW Brier score of ``risk = pi(t + dt | t)``."""
    risk = np.asarray(risk, dtype=float)
    W = ipcw_weights(T, delta, G, t, dt, ids)
    outcome = (np.asarray(T, dtype=float) <= t + dt).astype(float)
    return float(np.sum(W * (outcome - risk) ** 2) / risk.size)


def brier_model_based(T, delta, risk, risk_reanchored, t: float, dt: float) -> float:
    """Brier score mixing both outcomes for subjects censored in the window.

    ``risk_reanchored[i] = pi(t + dt | T_i)`` is only read for those subjects.
    """
    risk = np.asarray(risk, dtype=float)
    T, event_in, censored_in, survivor = _window(T, delta, t, dt)
    re = np.asarray(risk_reanchored, dtype=float) if risk_reanchored is not None else np.full(T.size, np.nan)
    if np.any(np.isnan(re[censored_in])):
        raise PlanError("re-anchored prediction missing for a subject censored in the window")
    contrib = np.where(event_in, (1 - risk) ** 2, 0.0)
    contrib = np.where(survivor, risk ** 2, contrib)
    mix = re * (1 - risk) ** 2 + (1 - re) * risk ** 2
    contrib = np.where(censored_in, mix, contrib)
    return float(contrib.mean())


def ibs(bs_mid: float, bs_end: float, dt: float | None = None) -> float:
    """Simpson approximation of the window-averaged Brier score (``BS(t, t) = 0``)."""
    for v in (bs_mid, bs_end):
        if not 0.0 <= v <= 1.0:
            raise DomainError(f"Brier scores must lie in [0, 1], got {v}")
    return (4.0 * bs_mid + bs_end) / 6.0  # 2/3 mid + 1/6 end, with fewer roundings


def _safe_log(p):
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(p <= 0, -np.inf, np.log(np.clip(p, LOG_FLOOR, 1.0)))


@dataclass(frozen=True)
class EPCEResult:
    value: float
    contributions: np.ndarray
    infinite: tuple  # subjects whose prediction made the score infinite


def epce_terms(T, delta, t: float, dt: float, surv_T, hazard_num, hazard_width, surv_at=None,
               ids=None) -> EPCEResult:
    """Expected predictive cross-entropy from survival predictions.

    ``surv_T[i] = pi_s(T~_i | t)``. For subjects with an event in the window the
    hazard at ``T~_i`` is approximated by ``hazard_num[i] / (hazard_width[i] * surv_at[i])``:
    with the forward scheme ``hazard_num = 1 - pi_s(T~+eps | T~)``, width ``eps``
    and ``surv_at = 1``; the central scheme uses ``pi_s(. | T~-eps)`` terms.
    """
    T, event_in, _, _ = _window(T, delta, t, dt)
    surv_T = np.asarray(surv_T, dtype=float)
    hazard_num = np.asarray(hazard_num, dtype=float)
    hazard_width = np.broadcast_to(np.asarray(hazard_width, dtype=float), T.shape)
    surv_at = np.ones(T.size) if surv_at is None else np.asarray(surv_at, dtype=float)
    log_h = np.where(event_in, _safe_log(hazard_num) - np.log(hazard_width) - _safe_log(surv_at), 0.0)
    contrib = -(log_h + _safe_log(surv_T))
    bad = np.flatnonzero(~np.isfinite(contrib))
    who = tuple(ids[k] if ids is not None else int(k) for k in bad)
    return EPCEResult(float(contrib.mean()), contrib, who)


def epce(T, delta, t: float, dt: float, surv_T, hazard_num, hazard_width, surv_at=None) -> float:
    return epce_terms(T, delta, t, dt, surv_T, hazard_num, hazard_width, surv_at).value


def epce_forward(T, delta, t, dt, surv_T, surv_eps, eps) -> float:
    """Forward difference: ``h(T~) ~ {1 - pi_s(T~ + eps | T~)} / eps``."""
    if not eps > 0:
        raise PreconditionError("epsilon must be positive")
    return epce(T, delta, t, dt, surv_T, 1.0 - np.asarray(surv_eps, dtype=float), eps)


def epce_central(T, delta, t, dt, surv_T, surv_a_T, surv_a_Te, width) -> float:
    """Central difference anchored at ``a = max(t, T~ - eps)``:
    ``h(T~) ~ {1 - pi_s(T~ + eps | a)} / {(T~ + eps - a) pi_s(T~ | a)}``."""
    return epce(T, delta, t, dt, surv_T, 1.0 - np.asarray(surv_a_Te, dtype=float), width, surv_a_T)
