"""Rule evaluation (observed-data evaluators and the oracle), bootstrap
intervals, and the Monte Carlo experiment runner.

Two experiment modes are supported:

``"learning"``
    Each replication simulates a training set, fits every method for every
    cost-benefit ratio ``r`` and scores the rules on one shared test set.
``"estimation"``
    A single OSF-R rule is trained once on a ``train_tgap`` cohort. Each
    replication simulates a fresh evaluation cohort and scores the rule with
    every evaluator, so observed-data estimates can be compared with the
    oracle computed from the true event times.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable, Sequence

import numpy as np

from .data import Dataset
from .errors import (
    DegenerateWindow,
    EmptyStratum,
    GZero,
    NoConvergence,
    NoMeasurement,
    StatisticFailure,
    TailoredASError,
    ZeroPrevalence,
)
from .estimators import (
    EstimatorConfig,
    decisions_at,
    krcs_tpr,
    landmark_weights,
    panel_cdf,
    tnr_weights,
    weighted_fraction,
    xi_from_ratio,
)
from .kernels import KernelSpec
from .policy import CVPlan, FitConfig, choose_lambda, fit, resolve_xi
from .reports import EvaluationReport, LandmarkRow, fmt
from .simulation import ScenarioConfig, population_event_times, simulate_dataset

log = logging.getLogger(__name__)

EVALUATORS = ("kr-i", "kr-cs", "ipcw", "oracle")
LABELS = {"kr-i": "KR-I", "kr-cs": "KR-CS", "ipcw": "IPCW", "oracle": "oracle"}


class MissingTruth(ValueError):
    """The oracle evaluator needs true event times."""


# ---------------------------------------------------------------------------
# Oracle
# ---------------------------------------------------------------------------


def true_prevalence(event_times, s: float, tau: float) -> float:
    """``P(s < T <= s + tau | T > s)`` from a sample of event times."""
    T = np.asarray(event_times, dtype=float)
    at_risk = T > s
    if not at_risk.any():
        raise EmptyStratum(f"no subject at risk at {s}")
    return float((T[at_risk] <= s + tau).mean())


def xi_reference(event_times, landmarks, tau: float, r: float, bounds=(0.05, 20.0)) -> list[float]:
    """``xi`` per landmark from the true conditional prevalence."""
    return [xi_from_ratio(true_prevalence(event_times, s, tau), r, bounds) for s in landmarks]


def oracle_metrics(rule, data: Dataset, landmarks: Sequence[float], tau: float, xi: Sequence[float | None] | None = None) -> EvaluationReport:
    """True TPR/TNR of ``rule`` among the subjects of ``data``.

    Cases at landmark ``s`` have ``s < T <= s + tau``; controls have
    ``T > s + tau``. A landmark without cases or controls is skipped.
    """
    if not data.has_truth:
        raise MissingTruth("oracle evaluation needs true event times (truth blocks)")
    T = data.event_time
    xi = _xi_list(xi, landmarks)
    rows, skipped = [], {}
    for s, x in zip(landmarks, xi):
        cases = (T > s) & (T <= s + tau)
        controls = T > s + tau
        if not cases.any() or not controls.any():
            msg = f"landmark {s}: {int(cases.sum())} cases, {int(controls.sum())} controls"
            log.warning("oracle skips %s", msg)
            skipped[float(s)] = msg
            rows.append(LandmarkRow.missing(float(s), x))
            continue
        d = decisions_at(rule, data, s, cases | controls)
        tpr = float((d[cases] == 1).mean())
        tnr = float((d[controls] == -1).mean())
        rho = cases.sum() / (cases | controls).sum()
        rows.append(LandmarkRow.make(float(s), tpr, tnr, rho, x, float((cases | controls).sum())))
    if len(skipped) == len(rows):
        raise EmptyStratum("no landmark has both cases and controls")
    return EvaluationReport("oracle", float(tau), rows, skipped)


def _xi_list(xi, landmarks) -> list[float | None]:
    if xi is None or len(xi) == 0:
        return [None] * len(landmarks)
    if len(xi) != len(landmarks):
        raise ValueError("need one xi per landmark")
    return list(xi)


# ---------------------------------------------------------------------------
# Observed-data evaluators
# ---------------------------------------------------------------------------


class Evaluator:
    """An evaluator bound to one dataset.

    Rule-independent pieces (kernel weights, censoring estimates, strata)
    are computed once so that many rules can be scored cheaply.
    """

    def __init__(self, data: Dataset, name: str, config: EstimatorConfig):
        if name not in EVALUATORS:
            raise ValueError(f"evaluator must be one of {EVALUATORS}")
        if name == "oracle" and not data.has_truth:
            raise MissingTruth("oracle evaluation needs true event times (truth blocks)")
        self.data = data
        self.name = name
        self.config = config
        self.bundle = None
        if name in ("kr-i", "ipcw"):
            self.bundle = landmark_weights(data, config, name)
        elif name == "kr-cs":
            self.h, _ = config.bandwidths(data)
            self.bundle = []
            for s in config.landmarks:
                try:
                    neg = tnr_weights(data, s, config.tau, self.h, config.kernel)
                    f_s = panel_cdf(None, data, s, self.h, config.kernel)
                    f_st = panel_cdf(None, data, s + config.tau, self.h, config.kernel)
                    rho = (f_st - f_s) / (1.0 - f_s) if f_s < 1 else math.nan
                    self.bundle.append((neg, min(max(rho, 0.0), 1.0), None))
                except DegenerateWindow as exc:
                    self.bundle.append((None, math.nan, str(exc)))

    def prevalence(self) -> list[float | None]:
        """Per-landmark prevalence as seen by this evaluator."""
        if self.name == "oracle":
            T = self.data.event_time
            out = []
            for s in self.config.landmarks:
                try:
                    out.append(true_prevalence(T, s, self.config.tau))
                except EmptyStratum:
                    out.append(None)
            return out
        if self.name == "kr-cs":
            return [None if math.isnan(rho) else rho for _, rho, _ in self.bundle]
        return [lw.rho for lw in self.bundle]

    def xi_for(self, r: float) -> list[float | None]:
        out = []
        for rho in self.prevalence():
            try:
                out.append(None if rho is None else xi_from_ratio(rho, r, self.config.xi_bounds))
            except ZeroPrevalence:
                out.append(None)
        return out

    def report(self, rule, xi: Sequence[float | None] | None = None) -> EvaluationReport:
        cfg = self.config
        xi = _xi_list(xi, cfg.landmarks)
        if self.name == "oracle":
            return oracle_metrics(rule, self.data, cfg.landmarks, cfg.tau, xi)
        rows, skipped = [], {}
        for j, (s, x) in enumerate(zip(cfg.landmarks, xi)):
            try:
                tpr, tnr, rho, ess = self._landmark(rule, j, s)
            except (DegenerateWindow, GZero) as exc:
                log.warning("%s skips landmark %s: %s", LABELS[self.name], s, exc)
                skipped[float(s)] = str(exc)
                rows.append(LandmarkRow.missing(float(s), x))
                continue
            rows.append(LandmarkRow.make(float(s), tpr, tnr, rho, x, ess))
        if len(skipped) == len(rows):
            raise DegenerateWindow(f"{LABELS[self.name]} is degenerate at every landmark")
        return EvaluationReport(LABELS[self.name], float(cfg.tau), rows, skipped)

    def _landmark(self, rule, j, s):
        if self.name == "kr-cs":
            neg, rho, reason = self.bundle[j]
            if neg is None:
                raise DegenerateWindow(reason)
            tpr = krcs_tpr(rule, self.data, s, self.config.tau, self.h, self.config.kernel)
            d = decisions_at(rule, self.data, s, neg.values > 0)
            return tpr.value, weighted_fraction(d, neg, -1), rho, tpr.ess + neg.mass
        lw = self.bundle[j]
        if not lw.usable:
            raise DegenerateWindow(lw.reason)
        d = decisions_at(rule, self.data, s, (lw.positive.values > 0) | (lw.negative.values > 0))
        tpr = weighted_fraction(d, lw.positive, 1)
        tnr = weighted_fraction(d, lw.negative, -1)
        return tpr, tnr, lw.rho, lw.positive.mass + lw.negative.mass


def evaluate(
    rule,
    data: Dataset,
    evaluator: str,
    config: EstimatorConfig,
    xi: Sequence[float | None] | None = None,
    r: float | None = None,
) -> EvaluationReport:
    """Score ``rule`` on ``data`` with one evaluator.

    ``xi`` defaults to the evaluator's own prevalence combined with ``r``
    when ``r`` is given, else to the ``xi`` stored with the rule.
    """
    ev = Evaluator(data, evaluator, config)
    if xi is None:
        if r is not None:
            xi = ev.xi_for(r)
        elif len(getattr(rule, "xi", ())) == len(config.landmarks):
            xi = list(rule.xi)
    return ev.report(rule, xi)


# ---------------------------------------------------------------------------
# Bootstrap
# ---------------------------------------------------------------------------


def bootstrap_ci(
    statistic: Callable[[Dataset], float],
    data: Dataset,
    B: int = 1000,
    seed: int = 0,
    level: float = 0.95,
    max_fail: float = 0.10,
) -> tuple[float, float]:
    """Percentile interval from ``B`` subject-level resamples.

    Resamples on which the statistic fails (degenerate windows and the like)
    are dropped; more than ``max_fail`` of them raises StatisticFailure.
    """
    if B < 2:
        raise ValueError("need at least 2 bootstrap resamples")
    rng = np.random.default_rng(seed)
    vals, failed = [], 0
    for _ in range(B):
        idx = rng.integers(0, data.n, data.n)
        try:
            v = float(statistic(data.subset(idx)))
        except (TailoredASError, ValueError, LookupError) as exc:
            log.debug("bootstrap resample failed: %s", exc)
            failed += 1
            continue
        if math.isnan(v):
            failed += 1
        else:
            vals.append(v)
    if failed > max_fail * B or not vals:
        raise StatisticFailure(f"{failed} of {B} bootstrap resamples failed")
    alpha = (1.0 - level) / 2.0
    lo, hi = np.percentile(vals, [100 * alpha, 100 * (1 - alpha)], method="inverted_cdf")
    return float(lo), float(hi)


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------


def _tuple(x, cast=float):
    if isinstance(x, (list, tuple)):
        return tuple(cast(v) for v in x)
    return (cast(x),)


@dataclass(frozen=True)
class ExperimentConfig:
    """Monte Carlo comparison settings.

    ``scenario`` and ``tgap`` accept a single value or a list; the runner
    loops over every combination. ``scenario_options`` are passed to
    :class:`ScenarioConfig` (e.g. ``{"baseline": "verbatim"}``).
    """

    scenario: tuple[int, ...] = (1,)
    tgap: tuple[float, ...] = (48.0,)
    n_train: int = 500
    n_test: int = 1000
    r: tuple[float, ...] = (2.0, 4.0, 6.0, 8.0)
    methods: tuple[str, ...] = ("osf-i", "osf-r")
    evaluators: tuple[str, ...] = ("oracle",)
    replications: int = 100
    seed: int = 0
    bootstrap: int = 0
    mode: str = "learning"
    train_tgap: float = 24.0
    estimation_r: tuple[float, ...] = (3.0, 2.0)
    landmarks: tuple[float, ...] = (12.0, 24.0, 36.0, 48.0)
    tau: float = 12.0
    kernel: str = "epanechnikov"
    kernel_order: int = 2
    bandwidth_mode: str = "scaled"
    h: float | None = None
    htilde: float | None = None
    lambda_grid: tuple[float, ...] = (1e-3, 1e-2, 1e-1)
    folds: int = 5
    reference_n: int = 50_000
    scenario_options: dict = field(default_factory=dict, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "scenario", _tuple(self.scenario, int))
        object.__setattr__(self, "tgap", _tuple(self.tgap))
        object.__setattr__(self, "r", _tuple(self.r))
        object.__setattr__(self, "methods", _tuple(self.methods, str))
        object.__setattr__(self, "evaluators", _tuple(self.evaluators, str))
        object.__setattr__(self, "landmarks", _tuple(self.landmarks))
        object.__setattr__(self, "lambda_grid", _tuple(self.lambda_grid))
        object.__setattr__(self, "estimation_r", _tuple(self.estimation_r))
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        if self.n_test < 1 or self.n_train < 2:
            raise ValueError("need n_test >= 1 and n_train >= 2")
        if any(s not in (1, 2) for s in self.scenario):
            raise ValueError("scenario must be 1 or 2")
        if any(m not in ("osf-i", "osf-r") for m in self.methods):
            raise ValueError("methods must be drawn from osf-i, osf-r")
        if any(e not in EVALUATORS for e in self.evaluators):
            raise ValueError(f"evaluators must be drawn from {EVALUATORS}")
        if self.mode not in ("learning", "estimation"):
            raise ValueError("mode must be 'learning' or 'estimation'")
        if self.bootstrap and self.bootstrap < 2:
            raise ValueError("bootstrap needs B >= 2 (or 0 to disable)")
        unknown = set(self.scenario_options) - {f.name for f in fields(ScenarioConfig)}
        if unknown:
            raise ValueError(f"unknown scenario options: {sorted(unknown)}")
        self.estimator_config()

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown experiment config keys: {sorted(unknown)}")
        return cls(**obj)

    def to_dict(self) -> dict:
        out = asdict(self)
        for k, v in out.items():
            if isinstance(v, tuple):
                out[k] = list(v)
        return out

    def estimator_config(self) -> EstimatorConfig:
        return EstimatorConfig(
            landmarks=self.landmarks,
            tau=self.tau,
            kernel=KernelSpec(self.kernel, self.kernel_order),
            bandwidth_mode=self.bandwidth_mode,
            h=self.h,
            htilde=self.htilde,
        )

    def fit_config(self, r: float, seed: int) -> FitConfig:
        return FitConfig(
            estimator=self.estimator_config(),
            r=r,
            lambda_grid=self.lambda_grid,
            folds=self.folds,
            seed=seed,
        )

    def settings(self) -> list[tuple[int, float]]:
        return [(s, g) for s in self.scenario for g in self.tgap]


def derive_seed(*keys) -> int:
    """Deterministic 63-bit seed from integer keys."""
    ints = [int(round(k * 1000)) if isinstance(k, float) else int(k) for k in keys]
    return int(np.random.SeedSequence(ints).generate_state(1, dtype=np.uint64)[0] >> 1)


def _scenario(cfg: ExperimentConfig, scenario: int, tgap: float, n: int, seed: int) -> ScenarioConfig:
    return ScenarioConfig(
        scenario=scenario,
        n=n,
        tgap=tgap,
        seed=seed,
        landmarks=cfg.landmarks,
        **cfg.scenario_options,
    )


# Per-process caches: each worker builds the shared test set and reference
# prevalences at most once per setting.
_CACHE: dict = {}


def _cached(key, build):
    if key not in _CACHE:
        _CACHE[key] = build()
    return _CACHE[key]


def reference_xi(cfg: ExperimentConfig, scenario: int, r: float) -> list[float]:
    def build():
        sc = _scenario(cfg, scenario, 24.0, 1, 0)
        return population_event_times(sc, cfg.reference_n, derive_seed(cfg.seed, scenario, 7))

    T = _cached(("population", cfg.seed, scenario, cfg.reference_n, repr(sorted(cfg.scenario_options.items()))), build)
    return xi_reference(T, cfg.landmarks, cfg.tau, r)


def _evaluators(cfg: ExperimentConfig, data: Dataset) -> dict[str, Evaluator]:
    est = cfg.estimator_config()
    out = {}
    for name in cfg.evaluators:
        try:
            out[name] = Evaluator(data, name, est)
        except (DegenerateWindow, GZero) as exc:
            log.warning("evaluator %s unavailable: %s", name, exc)
    return out


def _failed(base: dict, cfg: ExperimentConfig, evaluators=None) -> list[dict]:
    return [{**base, "evaluator": LABELS[e], "status": "failed"} for e in (evaluators or cfg.evaluators)]


def _score_rows(base: dict, evaluators: dict, cfg: ExperimentConfig, rule, xi, boot_seed) -> list[dict]:
    rows = []
    for name in cfg.evaluators:
        ev = evaluators.get(name)
        if ev is None:
            rows.extend(_failed(base, cfg, [name]))
            continue
        try:
            rep = ev.report(rule, xi)
        except (DegenerateWindow, EmptyStratum, NoMeasurement) as exc:
            log.warning("evaluation failed: %s", exc)
            rows.extend(_failed(base, cfg, [name]))
            continue
        ci = (math.nan, math.nan)
        if cfg.bootstrap:
            try:
                ci = bootstrap_ci(
                    lambda d: Evaluator(d, name, ev.config).report(rule, xi).value,
                    ev.data,
                    cfg.bootstrap,
                    derive_seed(boot_seed, EVALUATORS.index(name)),
                )
            except StatisticFailure as exc:
                log.warning("bootstrap failed: %s", exc)
        for rec in rep.records():
            rec = {**base, "evaluator": rec.pop("method"), **rec, "status": "ok"}
            if rec["landmark"] == "all":
                rec["value_lo"], rec["value_hi"] = ci
            rows.append(rec)
    return rows


def _learning_task(cfg: ExperimentConfig, scenario: int, tgap: float, rep: int) -> list[dict]:
    test = _cached(
        ("test", cfg, scenario, tgap),
        lambda: _evaluators(cfg, simulate_dataset(_scenario(cfg, scenario, tgap, cfg.n_test, derive_seed(cfg.seed, scenario, tgap, 1)))[1]),
    )
    _, train = simulate_dataset(_scenario(cfg, scenario, tgap, cfg.n_train, derive_seed(cfg.seed, scenario, tgap, 2, rep)))
    rows = []
    for m, method in enumerate(cfg.methods):
        cv_seed = derive_seed(cfg.seed, scenario, tgap, 3, rep, m)
        base_cfg = cfg.fit_config(cfg.r[0], cv_seed)
        bundle = plan = None
        for r in cfg.r:
            base = {
                "scenario": scenario,
                "tgap": tgap,
                "replication": rep,
                "method": method.upper(),
                "r": r,
            }
            fc = replace(base_cfg, r=r)
            try:
                if bundle is None:
                    bundle = landmark_weights(train, fc.estimator, "kr-i" if method == "osf-i" else "ipcw")
                if plan is None and len(cfg.lambda_grid) > 1:
                    plan = CVPlan(train, fc, method)
                outcome = fit(train, fc, method, bundle=bundle, plan=plan)
            except (DegenerateWindow, NoConvergence, NoMeasurement, GZero, ValueError) as exc:
                log.warning("replication %d %s r=%g failed: %s", rep, method, r, exc)
                rows.extend(_failed(base, cfg))
                continue
            base["lambda"] = outcome.lam
            rows.extend(_score_rows(base, test, cfg, outcome.rule, reference_xi(cfg, scenario, r), derive_seed(cfg.seed, rep, m, r)))
    return rows


def _estimation_r(cfg: ExperimentConfig, scenario: int) -> float:
    """Cost-benefit ratio of the fixed rule (one entry per scenario)."""
    return cfg.estimation_r[min(scenario, len(cfg.estimation_r)) - 1]


def _estimation_rule(cfg: ExperimentConfig, scenario: int):
    r = _estimation_r(cfg, scenario)

    def build():
        _, train = simulate_dataset(_scenario(cfg, scenario, cfg.train_tgap, cfg.n_train, derive_seed(cfg.seed, scenario, 4)))
        fc = cfg.fit_config(r, derive_seed(cfg.seed, scenario, 5))
        return fit(train, fc, "osf-r"), r

    return _cached(("rule", cfg, scenario), build)


def _estimation_task(cfg: ExperimentConfig, scenario: int, tgap: float, rep: int) -> list[dict]:
    (outcome, r) = _estimation_rule(cfg, scenario)
    _, data = simulate_dataset(_scenario(cfg, scenario, tgap, cfg.n_test, derive_seed(cfg.seed, scenario, tgap, 6, rep)))
    base = {"scenario": scenario, "tgap": tgap, "replication": rep, "method": "OSF-R", "r": r, "lambda": outcome.lam}
    return _score_rows(base, _evaluators(cfg, data), cfg, outcome.rule, reference_xi(cfg, scenario, r), derive_seed(cfg.seed, rep, 9))


def _run_task(args) -> list[dict]:
    cfg, scenario, tgap, rep = args
    task = _learning_task if cfg.mode == "learning" else _estimation_task
    try:
        return task(cfg, scenario, tgap, rep)
    except (TailoredASError, ValueError, LookupError) as exc:
        log.warning("replication %d failed: %s", rep, exc)
        base = {"scenario": scenario, "tgap": tgap, "replication": rep}
        if cfg.mode == "estimation":
            return _failed({**base, "method": "OSF-R", "r": _estimation_r(cfg, scenario)}, cfg)
        return [row for m in cfg.methods for r in cfg.r for row in _failed({**base, "method": m.upper(), "r": r}, cfg)]


METRIC_COLUMNS = (
    "scenario", "tgap", "replication", "method", "r", "lambda", "evaluator",
    "landmark", "tau", "tpr", "tnr", "rho", "xi", "value", "ess", "value_lo", "value_hi", "status",
)
SUMMARY_COLUMNS = (
    "scenario", "tgap", "method", "r", "evaluator", "landmark", "n_ok", "n_failed",
    "tpr_mean", "tpr_sd", "tnr_mean", "tnr_sd", "value_mean", "value_sd",
    "tpr_abs_err", "tnr_abs_err", "value_abs_err",
)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    metrics: list[dict]
    summary: list[dict]

    def metrics_csv(self) -> str:
        return _to_csv(self.metrics, METRIC_COLUMNS)

    def summary_csv(self) -> str:
        return _to_csv(self.summary, SUMMARY_COLUMNS)

    def lookup(self, **key) -> list[dict]:
        return [row for row in self.summary if all(row[k] == v for k, v in key.items())]


def _to_csv(rows, columns) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for row in rows:
        w.writerow({k: fmt(row.get(k)) for k in columns})
    return buf.getvalue()


def run_experiment(cfg: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """Run every (setting, replication) task and summarize.

    Tasks are independent and seeded by their keys, and results are
    collected in task order, so output does not depend on ``threads``.
    """
    tasks = [(cfg, s, g, rep) for s, g in cfg.settings() for rep in range(cfg.replications)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (4 * threads))))
    else:
        chunks = [_run_task(t) for t in tasks]
    metrics = [row for chunk in chunks for row in chunk]
    return ExperimentResult(cfg, metrics, summarize(metrics))


def summarize(metrics: list[dict]) -> list[dict]:
    """Means and sds across replications, plus mean absolute error against
    the oracle for the same rule and replication.

    For per-landmark rows the reference is the oracle at that landmark; for
    the aggregate row it is the oracle averaged over the landmarks the
    evaluator actually used.
    """
    by_rule: dict[tuple, dict] = {}
    for row in metrics:
        if row.get("status") == "ok" and row["landmark"] != "all":
            by_rule.setdefault(_rule_key(row) + (row["evaluator"],), {})[row["landmark"]] = row
    groups: dict[tuple, list[dict]] = {}
    failed: dict[tuple, set] = {}
    for row in metrics:
        if row.get("status") != "ok":
            key = (row.get("scenario"), row.get("tgap"), row.get("method"), row.get("r"), row.get("evaluator"))
            failed.setdefault(key, set()).add(row.get("replication"))
            continue
        groups.setdefault(_group_key(row), []).append(row)
    out = []
    for key, rows in groups.items():
        rec = dict(zip(("scenario", "tgap", "method", "r", "evaluator", "landmark"), key))
        rec["n_ok"] = len(rows)
        rec["n_failed"] = len(failed.get(key[:5], ()))
        refs = [_oracle_reference(row, by_rule) for row in rows]
        for m in ("tpr", "tnr", "value"):
            vals = np.array([row[m] for row in rows], dtype=float)
            vals = vals[~np.isnan(vals)]
            rec[f"{m}_mean"] = float(vals.mean()) if vals.size else math.nan
            rec[f"{m}_sd"] = float(vals.std(ddof=1)) if vals.size > 1 else math.nan
            errs = [abs(row[m] - ref[m]) for row, ref in zip(rows, refs) if ref is not None]
            errs = [e for e in errs if not math.isnan(e)]
            rec[f"{m}_abs_err"] = float(np.mean(errs)) if errs else math.nan
        out.append(rec)
    return out


def _oracle_reference(row, by_rule) -> dict | None:
    oracle = by_rule.get(_rule_key(row) + ("oracle",))
    if oracle is None:
        return None
    if row["landmark"] != "all":
        return oracle.get(row["landmark"])
    own = by_rule.get(_rule_key(row) + (row["evaluator"],), {})
    used = [lm for lm, r in own.items() if not math.isnan(r["tpr"])]
    refs = [oracle.get(lm) for lm in used]
    if not refs or any(r is None or math.isnan(r["tpr"]) for r in refs):
        return None
    return {m: float(np.mean([r[m] for r in refs])) for m in ("tpr", "tnr", "value")}


def _rule_key(row):
    return (row["scenario"], row["tgap"], row["replication"], row["method"], row["r"])


def _group_key(row):
    return (row["scenario"], row["tgap"], row["method"], row["r"], row["evaluator"], row["landmark"])


def write_experiment(result: ExperimentResult, out_dir, manifest: dict | None = None) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "metrics.csv"), "w", newline="") as fh:
        fh.write(result.metrics_csv())
    with open(os.path.join(out_dir, "summary.csv"), "w", newline="") as fh:
        fh.write(result.summary_csv())
    if manifest is not None:
        with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
