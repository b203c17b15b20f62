"""Synthetic surveillance cohorts.

Covariates follow ``W_l(t) = a0_l + a1_l log(t / nu)`` with
``(a0_l, a1_l)`` bivariate normal and are measured with Gaussian noise.
Scenario 1 draws event times from a proportional-hazards model with a
time-varying linear predictor (numerical inversion of the cumulative
hazard); scenario 2 uses a closed-form transformation with quadratic terms.
Censoring is uniform and biopsies follow a jittered schedule whose minimum
spacing is ``tgap``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .data import CovariateTrajectory, Dataset, FullSubject, observe
from .errors import InvalidGap

BASELINES = ("weibull", "verbatim")


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: int = 1
    n: int = 500
    tgap: float = 24.0
    seed: int = 0
    n_covariates: int = 4
    coef_mean: tuple[float, float] = (-0.1, -0.1)
    coef_cov: tuple[tuple[float, float], tuple[float, float]] = ((0.82**2, -0.005), (-0.005, 0.13**2))
    noise_var: float = 0.1
    nu: float = 30.0
    nu_scale: float = 15.0
    nu_shape: float = 1.4
    censor_range: tuple[float, float] = (12.0, 150.0)
    censoring: bool = True
    beta: tuple[float, ...] = (0.0, -0.7, 0.8, -1.3)
    curvature: float = 0.1
    gamma_floor: float = 0.05
    baseline: str = "weibull"
    first_biopsy_min: float = 12.0
    horizon: float = 150.0
    landmarks: tuple[float, ...] = (12.0, 24.0, 36.0, 48.0)
    miss_prob: float = 0.0
    dropout: bool = True
    t_eps: float = 1e-3
    t_max: float = 1e4

    def __post_init__(self):
        if self.scenario not in (1, 2):
            raise ValueError(f"scenario must be 1 or 2, got {self.scenario}")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not self.tgap > 0:
            raise InvalidGap("tgap must be positive")
        if self.baseline not in BASELINES:
            raise ValueError(f"baseline must be one of {BASELINES}")
        if len(self.beta) != self.n_covariates:
            raise ValueError("beta needs one coefficient per covariate")
        if self.scenario == 2 and self.n_covariates < 2:
            raise ValueError("scenario 2 uses the first two covariates")
        cov = np.asarray(self.coef_cov, dtype=float)
        if not np.allclose(cov, cov.T) or np.any(np.linalg.eigvalsh(cov) <= 0):
            raise ValueError("coef_cov must be symmetric positive definite")
        if not 0 <= self.miss_prob < 1:
            raise ValueError("miss_prob must lie in [0, 1)")

    @property
    def noise_sd(self) -> float:
        return math.sqrt(self.noise_var)


def subject_rng(seed: int, subject_id: int) -> np.random.Generator:
    """Independent stream per subject, so generation order never matters."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(subject_id)]))


def gen_covariates(config: ScenarioConfig, rng: np.random.Generator) -> CovariateTrajectory:
    chol = np.linalg.cholesky(np.asarray(config.coef_cov, dtype=float))
    z = rng.standard_normal((config.n_covariates, 2))
    a = np.asarray(config.coef_mean) + z @ chol.T
    return CovariateTrajectory(a0=a[:, 0], a1=a[:, 1], noise_sd=config.noise_sd, nu=config.nu)


# ---------------------------------------------------------------------------
# Scenario 1: proportional hazards with time-varying covariates
# ---------------------------------------------------------------------------


def baseline_hazard(t, config: ScenarioConfig):
    t = np.asarray(t, dtype=float)
    if config.baseline == "verbatim":
        # t/nu * (t/nu_scale)^(nu_shape - 1), read literally
        return (t / config.nu) * (t / config.nu_scale) ** (config.nu_shape - 1.0)
    return (config.nu_shape / config.nu_scale) * (t / config.nu_scale) ** (config.nu_shape - 1.0)


def hazard(t, a0, a1, config: ScenarioConfig):
    """Subject hazards. ``a0``, ``a1`` have shape ``(n, L)``; ``t`` broadcasts
    against ``(n, ...)``."""
    a0 = np.atleast_2d(a0)
    a1 = np.atleast_2d(a1)
    beta = np.asarray(config.beta, dtype=float)
    b0 = a0 @ beta
    b1 = a1 @ beta
    t = np.asarray(t, dtype=float)
    extra = (1,) * (t.ndim - 1) if t.ndim else ()
    b0 = b0.reshape(b0.shape + extra)
    b1 = b1.reshape(b1.shape + extra)
    return baseline_hazard(t, config) * np.exp(b0 + b1 * np.log(t / config.nu))


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)
_GRID_CELLS = 600


def _integrate_log(a0, a1, lo, hi, config):
    """8-point Gauss-Legendre of the hazard over [lo, hi] in u = log t.

    ``lo`` and ``hi`` have shape ``(n, k)``; returns ``(n, k)``.
    """
    ulo, uhi = np.log(lo), np.log(hi)
    half = 0.5 * (uhi - ulo)
    mid = 0.5 * (uhi + ulo)
    u = mid[..., None] + half[..., None] * _GL_NODES
    t = np.exp(u)
    vals = hazard(t, a0, a1, config) * t
    return half * (vals * _GL_WEIGHTS).sum(axis=-1)


def _hazard_grid(config: ScenarioConfig) -> np.ndarray:
    return np.geomspace(config.t_eps, config.t_max, _GRID_CELLS + 1)


def cumulative_hazard(t, a0, a1, config: ScenarioConfig) -> np.ndarray:
    """``Lambda(t) = int_{t_eps}^t hazard``; ``t`` has shape ``(n, k)``."""
    a0 = np.atleast_2d(a0)
    a1 = np.atleast_2d(a1)
    t = np.asarray(t, dtype=float).reshape(a0.shape[0], -1)
    grid = _hazard_grid(config)
    cum = _grid_cumulative(a0, a1, config, grid)
    cell = np.clip(np.searchsorted(grid, t, side="right") - 1, 0, _GRID_CELLS - 1)
    base = np.take_along_axis(cum, cell, axis=1)
    return base + _integrate_log(a0, a1, grid[cell], np.maximum(t, config.t_eps), config)


def _grid_cumulative(a0, a1, config, grid):
    n = a0.shape[0]
    lo = np.broadcast_to(grid[:-1], (n, _GRID_CELLS))
    hi = np.broadcast_to(grid[1:], (n, _GRID_CELLS))
    pieces = _integrate_log(a0, a1, lo, hi, config)
    return np.concatenate([np.zeros((n, 1)), np.cumsum(pieces, axis=1)], axis=1)


def invert_cumulative_hazard(a0, a1, targets, config: ScenarioConfig, tol: float = 1e-8) -> np.ndarray:
    """Solve ``Lambda_i(T) = targets[i, j]`` for every subject i and draw j.

    The hazard is integrated cell by cell on a geometric grid, the bracketing
    cell is located, and bisection (with quadrature of the partial cell)
    narrows the root to ``tol`` months. Targets beyond ``Lambda(t_max)``
    return ``t_max``.
    """
    a0 = np.atleast_2d(a0)
    a1 = np.atleast_2d(a1)
    n = a0.shape[0]
    targets = np.asarray(targets, dtype=float).reshape(n, -1)
    grid = _hazard_grid(config)
    cum = _grid_cumulative(a0, a1, config, grid)
    cell = np.empty(targets.shape, dtype=int)
    for i in range(n):
        cell[i] = np.searchsorted(cum[i], targets[i], side="right") - 1
    beyond = cell >= _GRID_CELLS
    cell = np.clip(cell, 0, _GRID_CELLS - 1)
    lo = grid[cell]
    hi = grid[cell + 1]
    remaining = targets - np.take_along_axis(cum, cell, axis=1)
    anchor = lo.copy()
    while np.max(hi - lo) > tol:
        mid = 0.5 * (lo + hi)
        below = _integrate_log(a0, a1, anchor, mid, config) < remaining
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    out = 0.5 * (lo + hi)
    out[beyond] = config.t_max
    return out


def gen_event_scenario1(trajectory: CovariateTrajectory, config: ScenarioConfig, rng) -> float:
    e = rng.standard_exponential()
    return float(invert_cumulative_hazard(trajectory.a0, trajectory.a1, [[e]], config)[0, 0])


# ---------------------------------------------------------------------------
# Scenario 2: closed-form transformation with quadratic terms
# ---------------------------------------------------------------------------


def scenario2_shape(a1, config: ScenarioConfig):
    a1 = np.atleast_2d(a1)
    beta = np.asarray(config.beta, dtype=float)
    gamma = config.nu_shape + a1 @ beta + config.curvature * (a1[:, 0] + a1[:, 1]) ** 2
    return np.maximum(gamma, config.gamma_floor)


def scenario2_event_time(a0, a1, ttilde, config: ScenarioConfig):
    """``12 + nu * (ttilde / nu_shape * gamma * exp(-eta))**(1/gamma)``, per subject."""
    a0 = np.atleast_2d(a0)
    beta = np.asarray(config.beta, dtype=float)
    gamma = scenario2_shape(a1, config)
    eta = a0 @ beta + config.curvature * (a0[:, 0] + a0[:, 1]) ** 2
    ttilde = np.asarray(ttilde, dtype=float).reshape(a0.shape[0], -1)
    base = (ttilde / config.nu_shape) * gamma[:, None] * np.exp(-eta)[:, None]
    return 12.0 + config.nu * base ** (1.0 / gamma[:, None])


def gen_event_scenario2(trajectory: CovariateTrajectory, config: ScenarioConfig, rng) -> float:
    ttilde = rng.standard_exponential()
    return float(scenario2_event_time(trajectory.a0, trajectory.a1, [[ttilde]], config)[0, 0])


# ---------------------------------------------------------------------------
# Censoring and biopsy schedule
# ---------------------------------------------------------------------------


def gen_censoring(config: ScenarioConfig, rng) -> float:
    lo, hi = config.censor_range
    c = rng.uniform(lo, hi)
    return c if config.censoring else math.inf


def gen_biopsy_schedule(config: ScenarioConfig, rng) -> np.ndarray:
    """First biopsy on ``[12, 3 tgap]``, then gaps on ``[tgap, 3 tgap]``
    until the previous biopsy plus ``tgap`` passes the horizon."""
    gap = config.tgap
    if 3 * gap < config.first_biopsy_min:
        raise InvalidGap(
            f"tgap={gap} leaves an empty first-biopsy interval [{config.first_biopsy_min}, {3 * gap}]"
        )
    times = [rng.uniform(config.first_biopsy_min, 3 * gap)]
    while times[-1] + gap <= config.horizon:
        times.append(rng.uniform(times[-1] + gap, times[-1] + 3 * gap))
    return np.array(times)


# ---------------------------------------------------------------------------
# Whole cohorts
# ---------------------------------------------------------------------------


@dataclass
class _Draws:
    traj: list = field(default_factory=list)
    u: list = field(default_factory=list)
    censor: list = field(default_factory=list)
    schedule: list = field(default_factory=list)
    flags: list = field(default_factory=list)
    noise: list = field(default_factory=list)


def _draw_subjects(config: ScenarioConfig, ids) -> _Draws:
    draws = _Draws()
    L = config.n_covariates
    n_lm = len(config.landmarks)
    for sid in ids:
        rng = subject_rng(config.seed, sid)
        traj = gen_covariates(config, rng)
        draws.traj.append(traj)
        draws.u.append(rng.standard_exponential())
        draws.censor.append(gen_censoring(config, rng))
        sched = gen_biopsy_schedule(config, rng)
        draws.schedule.append(sched)
        if config.miss_prob > 0:
            draws.flags.append((rng.uniform(size=sched.size) >= config.miss_prob).astype(int))
        else:
            draws.flags.append(np.ones(sched.size, dtype=int))
        draws.noise.append(rng.standard_normal((n_lm, L)))
    return draws


def event_times(trajectories, u, config: ScenarioConfig) -> np.ndarray:
    """Vectorised event times for the given trajectories and unit-exponential draws."""
    a0 = np.array([t.a0 for t in trajectories])
    a1 = np.array([t.a1 for t in trajectories])
    u = np.asarray(u, dtype=float).reshape(len(trajectories), 1)
    if config.scenario == 1:
        return invert_cumulative_hazard(a0, a1, u, config)[:, 0]
    return scenario2_event_time(a0, a1, u, config)[:, 0]


def simulate_subjects(config: ScenarioConfig, id_offset: int = 0) -> list[FullSubject]:
    ids = range(id_offset, id_offset + config.n)
    draws = _draw_subjects(config, ids)
    T = event_times(draws.traj, draws.u, config)
    lm = np.asarray(config.landmarks, dtype=float)
    subjects = []
    for k, sid in enumerate(ids):
        traj = draws.traj[k]
        covs = traj.latent(lm) + traj.noise_sd * draws.noise[k] if lm.size else np.empty((0, config.n_covariates))
        subjects.append(
            FullSubject(
                trajectory=traj,
                event_time=float(T[k]),
                censor_time=float(draws.censor[k]),
                biopsy_times=draws.schedule[k],
                miss_flags=draws.flags[k],
                covariate_times=lm,
                covariate_values=covs,
                id=sid,
            )
        )
    return subjects


def simulate_dataset(config: ScenarioConfig, id_offset: int = 0) -> tuple[list[FullSubject], Dataset]:
    """Generate a cohort and its observed counterpart.

    Covariates are measured at every landmark with fresh noise. Observed
    records keep the true ``(T, C)`` in their truth block for oracle use.
    """
    full = simulate_subjects(config, id_offset=id_offset)
    observed = Dataset([observe(s, dropout=config.dropout) for s in full])
    return full, observed


def population_event_times(config: ScenarioConfig, n: int, seed: int) -> np.ndarray:
    """True event times of a large reference population (no schedule or censoring)."""
    rng = np.random.default_rng(seed)
    chol = np.linalg.cholesky(np.asarray(config.coef_cov, dtype=float))
    z = rng.standard_normal((n, config.n_covariates, 2))
    a = np.asarray(config.coef_mean) + z @ chol.T
    u = rng.standard_exponential(n)
    if config.scenario == 1:
        out = np.empty(n)
        for start in range(0, n, 2000):
            sl = slice(start, start + 2000)
            out[sl] = invert_cumulative_hazard(a[sl, :, 0], a[sl, :, 1], u[sl, None], config)[:, 0]
        return out
    return scenario2_event_time(a[:, :, 0], a[:, :, 1], u[:, None], config)[:, 0]


def with_overrides(config: ScenarioConfig, **kw) -> ScenarioConfig:
    return replace(config, **kw)
