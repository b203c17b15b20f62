"""Learning stabilized biopsy rules by weighted surrogate-loss minimization.

Maximizing the landmark-averaged ``TPR + xi * TNR`` is a weighted
classification problem. With

    W+ = [W1 - xi W-1]_+ ,   W- = [W1 - xi W-1]_-

the logistic relaxation is

    J^-1 sum_j E_n[ W+ phi(f(Z_j)) + W- phi(-f(Z_j)) ] + lam ||coef||^2

with ``phi(u) = log(1 + exp(-u))`` and a linear score ``f``. OSF-I takes
the weights from the interval-censoring kernel estimator; OSF-R takes them
from the IPCW right-censoring baseline.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.special import expit

from .data import Dataset
from .errors import DegenerateWindow, LengthMismatch, NoConvergence, NoMeasurement
from .estimators import (
    EstimatorConfig,
    LandmarkWeights,
    WeightVector,
    landmark_weights,
    value_from_weights,
    xi_vector,
)
from .rules import LinearRule

log = logging.getLogger(__name__)

METHODS = {"osf-i": "kr-i", "osf-r": "ipcw"}


@dataclass(frozen=True)
class FitConfig:
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    r: float | None = None
    xi: tuple[float, ...] | None = None
    lambda_grid: tuple[float, ...] = (1e-3, 1e-2, 1e-1)
    folds: int = 5
    surrogate: str = "logistic"
    max_iter: int = 5000
    tol: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if (self.r is None) == (self.xi is None):
            raise ValueError("give exactly one of a cost-benefit ratio r or an explicit xi vector")
        if self.r is not None and not self.r > 0:
            raise ValueError("r must be positive")
        if self.xi is not None:
            if len(self.xi) != len(self.estimator.landmarks):
                raise ValueError("xi needs one entry per landmark")
            if any(x < 0 for x in self.xi):
                raise ValueError("xi entries must be non-negative")
            object.__setattr__(self, "xi", tuple(float(x) for x in self.xi))
        if not self.lambda_grid or any(lam <= 0 for lam in self.lambda_grid):
            raise ValueError("lambda grid entries must be positive")
        if self.folds < 2:
            raise ValueError("need at least 2 folds")
        if self.surrogate != "logistic":
            raise ValueError("only the logistic surrogate is implemented")

    @property
    def landmarks(self):
        return self.estimator.landmarks

    @property
    def tau(self):
        return self.estimator.tau


# ---------------------------------------------------------------------------
# Surrogate objective
# ---------------------------------------------------------------------------


def surrogate_weights(w1, wm1, xi: float) -> tuple[np.ndarray, np.ndarray]:
    """Positive and negative parts of ``W1 - xi * W-1``."""
    a = np.asarray(w1.values if isinstance(w1, WeightVector) else w1, dtype=float)
    b = np.asarray(wm1.values if isinstance(wm1, WeightVector) else wm1, dtype=float)
    if a.shape != b.shape:
        raise LengthMismatch(f"weight vectors differ in length: {a.shape} vs {b.shape}")
    diff = a - xi * b
    return np.maximum(diff, 0.0), np.maximum(-diff, 0.0)


@dataclass(frozen=True)
class SurrogateProblem:
    """Stacked (subject, landmark) rows with nonzero surrogate weight.

    ``Z`` is already standardized with ``mean``/``sd``; ``scale`` is
    ``1 / (J n)`` so that the data term equals the landmark-averaged
    sample mean.
    """

    Z: np.ndarray
    wplus: np.ndarray
    wminus: np.ndarray
    scale: float
    mean: np.ndarray
    sd: np.ndarray
    landmarks: tuple[float, ...]

    @property
    def n_params(self) -> int:
        return self.Z.shape[1] + 1


def build_problem(data: Dataset, bundle: Sequence[LandmarkWeights], xi: Sequence[float | None]) -> SurrogateProblem:
    if len(xi) != len(bundle):
        raise LengthMismatch("need one xi per landmark")
    rows_z, rows_p, rows_m, used = [], [], [], []
    for lw, x in zip(bundle, xi):
        if not lw.usable or x is None:
            log.warning("landmark %s skipped in fitting: %s", lw.landmark, lw.reason or "no xi")
            continue
        wp, wm = surrogate_weights(lw.positive, lw.negative, x)
        keep = (wp + wm) > 0
        Z = data.features(lw.landmark)[keep]
        if np.isnan(Z).any():
            raise NoMeasurement(f"weighted subject without covariates at landmark {lw.landmark}")
        rows_z.append(Z)
        rows_p.append(wp[keep])
        rows_m.append(wm[keep])
        used.append(lw.landmark)
    if not used:
        raise DegenerateWindow("no landmark has usable weights")
    Z = np.concatenate(rows_z)
    mean = Z.mean(axis=0)
    sd = Z.std(axis=0)
    sd = np.where(sd > 1e-12, sd, 1.0)
    return SurrogateProblem(
        Z=(Z - mean) / sd,
        wplus=np.concatenate(rows_p),
        wminus=np.concatenate(rows_m),
        scale=1.0 / (len(used) * data.n),
        mean=mean,
        sd=sd,
        landmarks=tuple(used),
    )


def _scores(theta, Z):
    return theta[0] + (Z * theta[1:]).sum(axis=1)


def surrogate_loss(theta, problem: SurrogateProblem, lam: float) -> float:
    """Weighted logistic loss plus ``lam * ||coef||^2`` (intercept unpenalized)."""
    theta = np.asarray(theta, dtype=float)
    f = _scores(theta, problem.Z)
    data_term = (problem.wplus * np.logaddexp(0.0, -f) + problem.wminus * np.logaddexp(0.0, f)).sum()
    return float(problem.scale * data_term + lam * (theta[1:] ** 2).sum())


def surrogate_gradient(theta, problem: SurrogateProblem, lam: float) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    f = _scores(theta, problem.Z)
    df = problem.scale * (problem.wminus * expit(f) - problem.wplus * expit(-f))
    grad = np.empty_like(theta)
    grad[0] = df.sum()
    grad[1:] = (problem.Z * df[:, None]).sum(axis=0) + 2.0 * lam * theta[1:]
    return grad


@dataclass
class SolveResult:
    theta: np.ndarray
    loss: float
    iterations: int
    grad_norm: float
    history: list[float]


def _curvature(problem: SurrogateProblem, lam: float) -> np.ndarray:
    """Diagonal bound on the Hessian (``phi'' <= 1/4``), used to precondition steps."""
    w = problem.scale * (problem.wplus + problem.wminus) / 4.0
    diag = np.empty(problem.n_params)
    diag[0] = w.sum()
    diag[1:] = (problem.Z**2 * w[:, None]).sum(axis=0) + 2.0 * lam
    return np.maximum(diag, 1e-12)


def minimize(problem: SurrogateProblem, lam: float, max_iter: int = 5000, tol: float = 1e-6) -> SolveResult:
    """Diagonally scaled gradient descent from zero with Armijo backtracking.

    Steps follow ``-D grad`` with ``D`` the inverse of a diagonal Hessian
    bound, which keeps heavy penalties from stalling the intercept. Trial
    step lengths are Barzilai-Borwein in the scaled metric; backtracking
    halves them until sufficient decrease, so accepted iterates never
    increase the objective. Stops when the gradient norm is below ``tol``.
    """
    D = 1.0 / _curvature(problem, lam)
    theta = np.zeros(problem.n_params)
    loss = surrogate_loss(theta, problem, lam)
    grad = surrogate_gradient(theta, problem, lam)
    step = 1.0
    history = [loss]
    for it in range(max_iter):
        gnorm = float(np.sqrt((grad**2).sum()))
        if gnorm <= tol:
            return SolveResult(theta, loss, it, gnorm, history)
        direction = D * grad
        decrease = float((grad * direction).sum())
        while True:
            cand = theta - step * direction
            cand_loss = surrogate_loss(cand, problem, lam)
            if cand_loss <= loss - 1e-4 * step * decrease:
                break
            step *= 0.5
            if step < 1e-30:
                raise NoConvergence(f"line search failed at iteration {it} (gradient norm {gnorm:.3g})")
        if cand_loss == loss and np.array_equal(cand, theta):
            raise NoConvergence(f"no progress at iteration {it} (gradient norm {gnorm:.3g})")
        cand_grad = surrogate_gradient(cand, problem, lam)
        s = cand - theta
        y = cand_grad - grad
        sy = float((s * y).sum())
        step = float((s * s / D).sum()) / sy if sy > 0 else 2.0 * step
        theta, loss, grad = cand, cand_loss, cand_grad
        history.append(loss)
    gnorm = float(np.sqrt((grad**2).sum()))
    if gnorm <= tol:
        return SolveResult(theta, loss, max_iter, gnorm, history)
    raise NoConvergence(f"gradient norm {gnorm:.3g} above tolerance {tol} after {max_iter} iterations")


def rule_from_solution(
    problem: SurrogateProblem,
    result: SolveResult,
    landmarks=(),
    tau=None,
    xi=(),
    meta: dict | None = None,
) -> LinearRule:
    return LinearRule(
        intercept=result.theta[0],
        coef=result.theta[1:],
        mean=problem.mean,
        sd=problem.sd,
        landmarks=tuple(landmarks),
        tau=tau,
        xi=tuple(xi),
        meta=dict(meta or {}),
    )


# ---------------------------------------------------------------------------
# Cross-validation
# ---------------------------------------------------------------------------


@dataclass
class _Fold:
    train: Dataset
    valid: Dataset
    train_bundle: list[LandmarkWeights]
    valid_bundle: list[LandmarkWeights]


class CVPlan:
    """Subject-level K-fold splits with weight bundles computed once.

    Weights do not depend on ``xi`` or ``lam``, so a plan can score many
    ``(xi, lam)`` combinations on the same folds.
    """

    def __init__(self, data: Dataset, config: FitConfig, method: str = "osf-i"):
        self.config = config
        self.method = method
        evaluator = METHODS[method]
        perm = np.random.default_rng(config.seed).permutation(data.n)
        self.folds: list[_Fold] = []
        for k, valid_idx in enumerate(np.array_split(perm, config.folds)):
            train_idx = np.concatenate([f for j, f in enumerate(np.array_split(perm, config.folds)) if j != k])
            train = data.subset(np.sort(train_idx))
            valid = data.subset(np.sort(valid_idx))
            try:
                tb = landmark_weights(train, config.estimator, evaluator)
                vb = landmark_weights(valid, config.estimator, evaluator)
            except (ValueError, DegenerateWindow) as exc:
                log.warning("fold %d unusable: %s", k, exc)
                continue
            self.folds.append(_Fold(train, valid, tb, vb))

    def scores(self, xi: Sequence[float | None], grid: Sequence[float] | None = None) -> np.ndarray:
        """Mean validation value per grid entry (NaN where every fold failed)."""
        grid = self.config.lambda_grid if grid is None else grid
        out = np.full(len(grid), np.nan)
        problems = []
        for fold in self.folds:
            try:
                problems.append((fold, build_problem(fold.train, fold.train_bundle, xi)))
            except (DegenerateWindow, NoMeasurement) as exc:
                log.warning("fold skipped: %s", exc)
        for g, lam in enumerate(grid):
            vals = []
            for fold, problem in problems:
                try:
                    res = minimize(problem, lam, self.config.max_iter, self.config.tol)
                    rule = rule_from_solution(problem, res)
                    vals.append(value_from_weights(rule, fold.valid, fold.valid_bundle, xi))
                except (DegenerateWindow, NoConvergence, NoMeasurement) as exc:
                    log.warning("lambda=%g fold skipped: %s", lam, exc)
            if vals:
                out[g] = float(np.mean(vals))
        return out

    def select(self, xi: Sequence[float | None], grid: Sequence[float] | None = None) -> float:
        grid = list(self.config.lambda_grid if grid is None else grid)
        return choose_lambda(grid, self.scores(xi, grid))


def choose_lambda(grid: Sequence[float], scores: np.ndarray) -> float:
    """Highest score wins; ties go to the larger penalty."""
    if np.all(np.isnan(scores)):
        raise DegenerateWindow("cross-validation failed for every lambda")
    best = np.nanmax(scores)
    return max(lam for lam, sc in zip(grid, scores) if not np.isnan(sc) and sc == best)


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------


@dataclass
class FitOutcome:
    rule: LinearRule
    lam: float
    xi: list[float | None]
    train_value: float
    cv_scores: np.ndarray | None = None


def resolve_xi(config: FitConfig, bundle: Sequence[LandmarkWeights]) -> list[float | None]:
    if config.xi is not None:
        return list(config.xi)
    return xi_vector(bundle, config.r, config.estimator.xi_bounds)


def fit(
    data: Dataset,
    config: FitConfig,
    method: str = "osf-i",
    lam: float | None = None,
    bundle: Sequence[LandmarkWeights] | None = None,
    plan: CVPlan | None = None,
) -> FitOutcome:
    """Fit a linear rule with OSF-I (``"osf-i"``) or the OSF-R baseline (``"osf-r"``).

    ``xi`` comes from the config, or from the method's own prevalence
    estimate and ``config.r``. With ``lam=None`` and more than one grid
    value, the penalty is chosen by cross-validated estimated value.
    """
    if method not in METHODS:
        raise ValueError(f"method must be one of {sorted(METHODS)}")
    if bundle is None:
        bundle = landmark_weights(data, config.estimator, METHODS[method])
    xi = resolve_xi(config, bundle)
    scores = None
    if lam is None:
        if len(config.lambda_grid) == 1:
            lam = config.lambda_grid[0]
        else:
            plan = plan or CVPlan(data, config, method)
            scores = plan.scores(xi)
            lam = choose_lambda(config.lambda_grid, scores)
    problem = build_problem(data, bundle, xi)
    res = minimize(problem, lam, config.max_iter, config.tol)
    h, ht = config.estimator.bandwidths(data)
    rule = rule_from_solution(
        problem,
        res,
        landmarks=config.landmarks,
        tau=config.tau,
        xi=xi,
        meta={
            "method": method,
            "lambda": lam,
            "r": config.r,
            "iterations": res.iterations,
            "h": h,
            "htilde": ht,
            "n": data.n,
        },
    )
    value = value_from_weights(rule, data, bundle, xi)
    return FitOutcome(rule, lam, xi, value, scores)


def fit_rule(data: Dataset, config: FitConfig, lam: float | None = None) -> LinearRule:
    """OSF-I rule."""
    return fit(data, config, "osf-i", lam).rule


def fit_osf_r(data: Dataset, config: FitConfig, lam: float | None = None) -> LinearRule:
    """OSF-R rule: same objective with IPCW weights from the first positive biopsy time."""
    return fit(data, config, "osf-r", lam).rule


def cross_validate(data: Dataset, config: FitConfig, method: str = "osf-i") -> float:
    bundle = landmark_weights(data, config.estimator, METHODS[method])
    return CVPlan(data, config, method).select(resolve_xi(config, bundle))


def with_r(config: FitConfig, r: float) -> FitConfig:
    return replace(config, r=r, xi=None)
