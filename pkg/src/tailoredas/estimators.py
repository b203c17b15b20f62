"""Time-varying TPR/TNR estimators for interval-censored biopsy data.

KR-I (the interval-censoring estimator) builds two kernel weight vectors:

* TNR weights smooth *observed negative biopsies* around ``s + tau``;
* TPR weights smooth *adjacent negative-positive pairs* ``(t_prev, t_curr)``
  around ``(s, s + tau)`` with a bivariate kernel. Pairs are observed no
  matter what happened earlier, so immediate dropout after a positive
  biopsy does not bias them.

Both vectors are normalized to sample mean one, so ``TPR = E_n[1{d=1} W1]``
and ``TNR = E_n[1{d=-1} W_-1]`` are convex combinations.

Two baselines are provided for comparison: IPCW, which treats the first
positive biopsy time as a right-censored event time, and KR-CS, a
panel-status kernel estimator that ignores dropout.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import Dataset
from .errors import DegenerateWindow, EmptyData, GZero, NoMeasurement, ZeroPrevalence
from .kernels import EPANECHNIKOV, KernelSpec, default_bandwidths, kernel_1d, kernel_2d

log = logging.getLogger(__name__)

XI_BOUNDS = (0.05, 20.0)


@dataclass(frozen=True)
class EstimatorConfig:
    """Landmarks, horizon and smoothing choices shared by all estimators.

    Explicit ``h`` / ``htilde`` override the bandwidth rule. In ``"scaled"``
    mode the rule is multiplied by the sd of the observed biopsy times;
    ``"raw"`` applies ``n**-1/5`` and ``n**-1/6`` on the time axis as is.
    """

    landmarks: tuple[float, ...] = (12.0, 24.0, 36.0, 48.0)
    tau: float = 12.0
    kernel: KernelSpec = EPANECHNIKOV
    bandwidth_mode: str = "scaled"
    h: float | None = None
    htilde: float | None = None
    xi_bounds: tuple[float, float] = XI_BOUNDS

    def __post_init__(self):
        if self.bandwidth_mode not in ("scaled", "raw"):
            raise ValueError("bandwidth_mode must be 'scaled' or 'raw'")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if not self.landmarks or any(t <= 0 for t in self.landmarks):
            raise ValueError("landmarks must be a non-empty list of positive times")
        lo, hi = self.xi_bounds
        if not 0 < lo <= hi:
            raise ValueError("xi bounds must satisfy 0 < lower <= upper")
        object.__setattr__(self, "landmarks", tuple(float(t) for t in self.landmarks))

    def bandwidths(self, data: Dataset) -> tuple[float, float]:
        scale = data.biopsy_time_scale() if self.bandwidth_mode == "scaled" else 1.0
        h, ht = default_bandwidths(data.n, scale)
        return (self.h or h, self.htilde or ht)


@dataclass(frozen=True)
class WeightVector:
    """Per-subject weights with sample mean one.

    ``mass`` is the total (dimensionless) kernel mass behind the weights and
    serves as an effective sample size.
    """

    values: np.ndarray
    landmark: float
    tau: float
    kind: str  # "positive-pair", "negative-biopsy", "ipcw-case", "ipcw-control"
    mass: float

    def __len__(self):
        return self.values.size


@dataclass(frozen=True)
class MetricEstimate:
    value: float
    landmark: float | None
    method: str
    ess: float
    landmarks_used: tuple[float, ...] = field(default=())

    def __float__(self):
        return float(self.value)


def _normalize(num: np.ndarray, landmark, tau, kind, mass) -> WeightVector:
    total = num.sum()
    if not total > 0:
        raise DegenerateWindow(f"no {kind} kernel mass near landmark {landmark} (tau={tau})")
    values = num * (num.size / total)
    values.setflags(write=False)
    return WeightVector(values, float(landmark), float(tau), kind, float(mass))


# ---------------------------------------------------------------------------
# KR-I weights
# ---------------------------------------------------------------------------


def tnr_numerators(data: Dataset, s: float, tau: float, h: float, kernel: KernelSpec = EPANECHNIKOV):
    """Per-subject ``sum_k (1 - Delta_k) K_h(N_k - s - tau)`` and its kernel mass."""
    u = (data.biopsy_time - (s + tau)) / h
    k = kernel_1d(kernel, u) * (data.biopsy_result == 0)
    num = np.bincount(data.biopsy_subject, weights=k, minlength=data.n) / h
    return num, float(k.sum())


def tnr_weights(data: Dataset, s: float, tau: float, h: float, kernel: KernelSpec = EPANECHNIKOV) -> WeightVector:
    num, mass = tnr_numerators(data, s, tau, h, kernel)
    return _normalize(num, s, tau, "negative-biopsy", mass)


def pair_kernel(data: Dataset, s: float, tau: float, htilde: float, kernel: KernelSpec = EPANECHNIKOV):
    """Unscaled bivariate kernel of every adjacent pair around ``(s, s + tau)``."""
    return kernel_2d(kernel, (data.pair_curr - s - tau) / htilde, (data.pair_prev - s) / htilde)


def tpr_numerators(data: Dataset, s: float, tau: float, htilde: float, kernel: KernelSpec = EPANECHNIKOV):
    k = pair_kernel(data, s, tau, htilde, kernel) * (data.pair_result == 1)
    num = np.bincount(data.pair_subject, weights=k, minlength=data.n) / htilde**2
    return num, float(k.sum())


def tpr_weights(data: Dataset, s: float, tau: float, htilde: float, kernel: KernelSpec = EPANECHNIKOV) -> WeightVector:
    num, mass = tpr_numerators(data, s, tau, htilde, kernel)
    return _normalize(num, s, tau, "positive-pair", mass)


# ---------------------------------------------------------------------------
# Rule evaluation helpers
# ---------------------------------------------------------------------------


def decisions_at(rule, data: Dataset, s: float, needed: np.ndarray | None = None) -> np.ndarray:
    """Decisions of ``rule`` at landmark ``s``; 0 where not needed.

    A subject is needed when it carries positive weight. Needed subjects
    without a covariate measurement at or before ``s`` are an error.
    """
    Z = data.features(s)
    needed = np.ones(data.n, dtype=bool) if needed is None else np.asarray(needed, dtype=bool)
    rows = np.flatnonzero(needed)
    if rows.size and np.isnan(Z[rows]).any():
        bad = rows[np.isnan(Z[rows]).any(axis=1)][0]
        raise NoMeasurement(
            f"subject {data.records[bad].id} has weight at landmark {s} but no covariate measurement"
        )
    out = np.zeros(data.n, dtype=int)
    if rows.size:
        out[rows] = rule.decide(Z[rows])
    return out


def weighted_fraction(decisions: np.ndarray, weights: WeightVector, target: int) -> float:
    w = weights.values
    total = w.sum()
    return float(w[decisions == target].sum() / total)


def estimate_tnr(rule, data: Dataset, s: float, tau: float, h: float, kernel: KernelSpec = EPANECHNIKOV) -> MetricEstimate:
    w = tnr_weights(data, s, tau, h, kernel)
    d = decisions_at(rule, data, s, w.values > 0)
    return MetricEstimate(weighted_fraction(d, w, -1), float(s), "KR-I", w.mass)


def estimate_tpr(rule, data: Dataset, s: float, tau: float, htilde: float, kernel: KernelSpec = EPANECHNIKOV) -> MetricEstimate:
    w = tpr_weights(data, s, tau, htilde, kernel)
    d = decisions_at(rule, data, s, w.values > 0)
    return MetricEstimate(weighted_fraction(d, w, 1), float(s), "KR-I", w.mass)


def estimate_prevalence(data: Dataset, s: float, tau: float, htilde: float, kernel: KernelSpec = EPANECHNIKOV) -> MetricEstimate:
    """Share of local pair mass at ``(s, s + tau)`` carried by negative-positive pairs.

    Given a pair observed at ``(s, s + tau)`` whose first member is negative,
    the second is positive with probability ``P(T <= s + tau | T > s)``.
    """
    k = pair_kernel(data, s, tau, htilde, kernel)
    denom = k.sum()
    if not denom > 0:
        raise DegenerateWindow(f"no adjacent-pair mass near ({s}, {s + tau})")
    return MetricEstimate(float(k[data.pair_result == 1].sum() / denom), float(s), "KR-I", float(denom))


def xi_from_ratio(rho: float, r: float, bounds: tuple[float, float] = XI_BOUNDS) -> float:
    """TNR weight ``(1 - rho) / (rho * r)`` for a cost-benefit ratio ``r``, clipped to ``bounds``."""
    if not r > 0:
        raise ValueError(f"cost-benefit ratio must be positive, got {r}")
    if not 0 <= rho <= 1:
        raise ValueError(f"prevalence must lie in [0, 1], got {rho}")
    if rho == 0:
        raise ZeroPrevalence("prevalence estimate is 0; the TNR weight is unbounded")
    xi = (1.0 - rho) / (rho * r)
    lo, hi = bounds
    return float(min(max(xi, lo), hi))


def estimate_value(
    rule,
    data: Dataset,
    landmarks: Sequence[float],
    xi: Sequence[float],
    tau: float,
    h: float,
    htilde: float,
    kernel: KernelSpec = EPANECHNIKOV,
) -> MetricEstimate:
    """Landmark average of ``TPR + xi * TNR``. Degenerate landmarks are skipped."""
    if len(xi) != len(landmarks):
        raise ValueError("need one xi per landmark")
    total, used, ess = 0.0, [], 0.0
    for s, x in zip(landmarks, xi):
        try:
            tpr = estimate_tpr(rule, data, s, tau, htilde, kernel)
            tnr = estimate_tnr(rule, data, s, tau, h, kernel)
        except DegenerateWindow as exc:
            log.warning("skipping landmark %s: %s", s, exc)
            continue
        total += tpr.value + x * tnr.value
        ess += tpr.ess + tnr.ess
        used.append(float(s))
    if not used:
        raise DegenerateWindow("every landmark window is degenerate")
    return MetricEstimate(total / len(used), None, "KR-I", ess, tuple(used))


# ---------------------------------------------------------------------------
# Kaplan-Meier and IPCW
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StepFunction:
    """Right-continuous step function: ``values[i]`` holds on ``[times[i], times[i+1])``
    and ``initial`` before ``times[0]``."""

    times: np.ndarray
    values: np.ndarray
    initial: float = 1.0

    def _at(self, idx):
        out = np.concatenate([[self.initial], self.values])[np.asarray(idx) + 1]
        return out if np.ndim(out) else float(out)

    def __call__(self, t):
        return self._at(np.searchsorted(self.times, t, side="right") - 1)

    def left(self, t):
        """Left limit ``f(t-)``."""
        return self._at(np.searchsorted(self.times, t, side="left") - 1)


def kaplan_meier(times, events) -> StepFunction:
    """Product-limit survival estimate; ``events`` flags observed events."""
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=bool)
    if times.size == 0:
        raise EmptyData("Kaplan-Meier needs at least one observation")
    uniq, d = np.unique(times[events], return_counts=True)
    if uniq.size == 0:
        return StepFunction(np.empty(0), np.empty(0))
    at_risk = times.size - np.searchsorted(np.sort(times), uniq, side="left")
    surv = np.cumprod(1.0 - d / at_risk)
    return StepFunction(uniq, surv)


def followup(data: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """``(end, progressed)``: end is the first positive biopsy time when
    progressed, otherwise the last observed biopsy time."""
    return data.followup_end.copy(), data.progressed.copy()


def km_censoring(data: Dataset) -> StepFunction:
    """Kaplan-Meier estimate of the censoring survival ``G(t) = P(C > t)``."""
    end, progressed = followup(data)
    return kaplan_meier(end, ~progressed)


def km_event(data: Dataset) -> StepFunction:
    """Kaplan-Meier of the first-positive-biopsy time, treated as right censored."""
    end, progressed = followup(data)
    return kaplan_meier(end, progressed)


def ipcw_weights(data: Dataset, s: float, tau: float, G: StepFunction | None = None) -> tuple[WeightVector, WeightVector]:
    """Case and control weights of the right-censoring baseline.

    Cases have their first positive biopsy in ``(s, s + tau]`` and weigh
    ``1 / G(T*)``; controls are followed past ``s + tau`` and weigh
    ``1 / G(s + tau)``.
    """
    G = km_censoring(data) if G is None else G
    end, progressed = followup(data)
    case = progressed & (end > s) & (end <= s + tau)
    control = end > s + tau
    case_num = np.zeros(data.n)
    if case.any():
        g = np.asarray(G(end[case]), dtype=float)
        if np.any(g <= 0):
            raise GZero(f"censoring survival is 0 at a case time in ({s}, {s + tau}]")
        case_num[case] = 1.0 / g
    ctrl_num = np.zeros(data.n)
    if control.any():
        g = float(G(s + tau))
        if g <= 0:
            raise GZero(f"censoring survival is 0 at {s + tau}")
        ctrl_num[control] = 1.0 / g
    return (
        _normalize(case_num, s, tau, "ipcw-case", case.sum()),
        _normalize(ctrl_num, s, tau, "ipcw-control", control.sum()),
    )


def ipcw_tpr_tnr(rule, data: Dataset, s: float, tau: float, G: StepFunction | None = None) -> tuple[float, float]:
    cases, controls = ipcw_weights(data, s, tau, G)
    d = decisions_at(rule, data, s, (cases.values > 0) | (controls.values > 0))
    return weighted_fraction(d, cases, 1), weighted_fraction(d, controls, -1)


def ipcw_prevalence(data: Dataset, s: float, tau: float, S: StepFunction | None = None) -> float:
    """``1 - S(s + tau) / S(s)`` from the Kaplan-Meier of the first positive biopsy time."""
    S = km_event(data) if S is None else S
    at_s = float(S(s))
    if at_s <= 0:
        raise DegenerateWindow(f"no subject known to be event-free at {s}")
    return 1.0 - float(S(s + tau)) / at_s


# ---------------------------------------------------------------------------
# KR-CS: panel-status kernel estimator without dropout adjustment
# ---------------------------------------------------------------------------


def panel_cdf(decisions: np.ndarray | None, data: Dataset, t: float, h: float, kernel: KernelSpec = EPANECHNIKOV, target: int = 1):
    """Kernel estimate of ``P(d = target, T <= t)`` (all subjects when ``decisions`` is None)."""
    k = kernel_1d(kernel, (data.biopsy_time - t) / h)
    denom = k.sum()
    if not denom > 0:
        raise DegenerateWindow(f"no biopsy mass near t={t}")
    pos = k * (data.biopsy_result == 1)
    if decisions is not None:
        pos = pos * (decisions[data.biopsy_subject] == target)
    return float(pos.sum() / denom)


def krcs_tpr(rule, data: Dataset, s: float, tau: float, h: float, kernel: KernelSpec = EPANECHNIKOV) -> MetricEstimate:
    """TPR from increments of kernel-smoothed panel-status curves on ``(s, s + tau]``."""
    d = decisions_at(rule, data, s, _near_biopsy(data, (s, s + tau), h))
    num = panel_cdf(d, data, s + tau, h, kernel) - panel_cdf(d, data, s, h, kernel)
    den = panel_cdf(None, data, s + tau, h, kernel) - panel_cdf(None, data, s, h, kernel)
    if not den > 0:
        raise DegenerateWindow(f"panel-status curve does not increase on ({s}, {s + tau}]")
    return MetricEstimate(float(min(max(num / den, 0.0), 1.0)), float(s), "KR-CS", den)


def _near_biopsy(data: Dataset, centers, h) -> np.ndarray:
    near = np.zeros(data.n, dtype=bool)
    for c in centers:
        inside = (np.abs(data.biopsy_time - c) < h) & (data.biopsy_result == 1)
        near[data.biopsy_subject[inside]] = True
    return near


# ---------------------------------------------------------------------------
# Per-landmark weight bundles (shared by evaluation and learning)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LandmarkWeights:
    """Weights of one landmark for a TPR-type and a TNR-type term.

    ``positive``/``negative`` are None when the window is degenerate.
    """

    landmark: float
    positive: WeightVector | None
    negative: WeightVector | None
    rho: float | None
    reason: str = ""

    @property
    def usable(self) -> bool:
        return self.positive is not None and self.negative is not None


def kri_landmark_weights(data: Dataset, config: EstimatorConfig) -> list[LandmarkWeights]:
    h, ht = config.bandwidths(data)
    out = []
    for s in config.landmarks:
        try:
            pos = tpr_weights(data, s, config.tau, ht, config.kernel)
            neg = tnr_weights(data, s, config.tau, h, config.kernel)
            rho = estimate_prevalence(data, s, config.tau, ht, config.kernel).value
            out.append(LandmarkWeights(s, pos, neg, rho))
        except DegenerateWindow as exc:
            out.append(LandmarkWeights(s, None, None, None, str(exc)))
    return out


def ipcw_landmark_weights(data: Dataset, config: EstimatorConfig) -> list[LandmarkWeights]:
    G = km_censoring(data)
    S = km_event(data)
    out = []
    for s in config.landmarks:
        try:
            cases, controls = ipcw_weights(data, s, config.tau, G)
            rho = ipcw_prevalence(data, s, config.tau, S)
            out.append(LandmarkWeights(s, cases, controls, rho))
        except (DegenerateWindow, GZero) as exc:
            out.append(LandmarkWeights(s, None, None, None, str(exc)))
    return out


def landmark_weights(data: Dataset, config: EstimatorConfig, method: str) -> list[LandmarkWeights]:
    if method == "kr-i":
        return kri_landmark_weights(data, config)
    if method == "ipcw":
        return ipcw_landmark_weights(data, config)
    raise ValueError(f"no weight bundle for method {method!r}")


def xi_vector(bundle: Sequence[LandmarkWeights], r: float, bounds=XI_BOUNDS) -> list[float | None]:
    """``xi`` per landmark from each landmark's prevalence; None where unavailable."""
    out = []
    for lw in bundle:
        if lw.rho is None or lw.rho == 0:
            out.append(None)
        else:
            out.append(xi_from_ratio(lw.rho, r, bounds))
    return out


def value_from_weights(rule, data: Dataset, bundle: Sequence[LandmarkWeights], xi: Sequence[float | None]) -> float:
    """``mean_j (TPR_j + xi_j TNR_j)`` over usable landmarks of a weight bundle."""
    total, used = 0.0, 0
    for lw, x in zip(bundle, xi):
        if not lw.usable or x is None:
            continue
        need = (lw.positive.values > 0) | (lw.negative.values > 0)
        d = decisions_at(rule, data, lw.landmark, need)
        total += weighted_fraction(d, lw.positive, 1) + x * weighted_fraction(d, lw.negative, -1)
        used += 1
    if not used:
        raise DegenerateWindow("every landmark window is degenerate")
    return total / used


def nan_if_none(x) -> float:
    return math.nan if x is None else float(x)
