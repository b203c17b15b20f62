"""Command-line interface: simulate, fit, evaluate, compare.

Exit codes: 0 success, 2 usage or input error, 3 degenerate estimation,
4 optimizer did not converge.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
from importlib import metadata

import numpy as np
import scipy

from .data import read_jsonl, write_jsonl
from .errors import (
    DegenerateWindow,
    EmptyStratum,
    GZero,
    NoConvergence,
    NoMeasurement,
    ZeroPrevalence,
)
from .estimators import EstimatorConfig
from .evaluation import EVALUATORS, Evaluator, ExperimentConfig, MissingTruth, run_experiment, write_experiment
from .kernels import KernelSpec
from .policy import FitConfig, fit
from .rules import LinearRule
from .simulation import ScenarioConfig, simulate_dataset

log = logging.getLogger("tailoredas")

EXIT_USAGE = 2
EXIT_DEGENERATE = 3
EXIT_NO_CONVERGENCE = 4


class UsageError(Exception):
    """Bad flags or unreadable inputs (exit 2)."""


def version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        from . import __version__

        return __version__


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers, got {text!r}")


def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("estimation options")
    g.add_argument("--kernel", default="epanechnikov", choices=["epanechnikov", "biweight"], help="kernel family")
    g.add_argument("--kernel-order", type=int, default=2, choices=[2, 4], help="kernel order")
    g.add_argument(
        "--bandwidth-mode",
        default="scaled",
        choices=["scaled", "raw"],
        help="scaled: n^-1/5 and n^-1/6 times the sd of observed biopsy times; raw: on the time axis as is",
    )
    g.add_argument("--h", type=float, default=None, help="explicit bandwidth for negative-biopsy weights")
    g.add_argument("--htilde", type=float, default=None, help="explicit bandwidth for adjacent-pair weights")
    g.add_argument("--landmarks", type=_float_list, default=[12.0, 24.0, 36.0, 48.0], help="decision times (months)")
    g.add_argument("--tau", type=float, default=12.0, help="horizon to the next biopsy decision (months)")
    g.add_argument("--threads", type=int, default=1, help="maximum worker processes")
    g.add_argument("--seed", type=int, default=None, help="master random seed")
    g.add_argument("--log-level", default="WARNING", help="logging level")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tailoredas", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {version()}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic cohort (JSON lines)")
    p.add_argument("--scenario", type=int, choices=[1, 2], required=True)
    p.add_argument("--n", type=int, required=True, help="number of subjects")
    p.add_argument("--tgap", type=float, required=True, help="minimum gap between biopsies (months)")
    p.add_argument("--out", required=True, help="output dataset file")
    p.add_argument("--no-censoring", action="store_true", help="set every censoring time to infinity")
    p.add_argument("--baseline", choices=["weibull", "verbatim"], default="weibull", help="scenario-1 baseline hazard")
    p.add_argument("--miss-prob", type=float, default=0.0, help="probability that a scheduled biopsy is missed")
    _common(p)

    p = sub.add_parser("fit", help="learn a stabilized biopsy rule")
    p.add_argument("--data", required=True, help="dataset file (JSON lines)")
    p.add_argument("--method", choices=["osf-i", "osf-r"], default="osf-i")
    p.add_argument("--r", type=float, default=None, help="cost-benefit ratio")
    p.add_argument("--xi", type=_float_list, default=None, help="explicit TNR weights, one per landmark")
    p.add_argument("--lambda", dest="lam", type=float, default=None, help="fixed penalty (skips cross-validation)")
    p.add_argument("--lambda-grid", type=_float_list, default=[1e-3, 1e-2, 1e-1])
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--max-iter", type=int, default=5000)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--out", required=True, help="output rule file (JSON)")
    _common(p)

    p = sub.add_parser("evaluate", help="estimate TPR, TNR and value of a rule")
    p.add_argument("--rule", required=True, help="rule file (JSON)")
    p.add_argument("--data", required=True, help="dataset file (JSON lines)")
    p.add_argument("--evaluator", choices=list(EVALUATORS), default="kr-i")
    p.add_argument("--r", type=float, default=None, help="derive xi from the evaluator's prevalence")
    p.add_argument("--xi", type=_float_list, default=None, help="explicit TNR weights, one per landmark")
    p.add_argument("--out", required=True, help="output CSV")
    _common(p)

    p = sub.add_parser("compare", help="run a Monte Carlo method comparison")
    p.add_argument("--config", required=True, help="experiment config (JSON)")
    p.add_argument("--out", required=True, help="output directory")
    _common(p)
    return parser


# ---------------------------------------------------------------------------


def _require_file(path: str) -> None:
    if not os.path.isfile(path):
        raise UsageError(f"input file not found: {path}")


def _check_output(path: str) -> None:
    """Fail fast if an output cannot be created, before any computation."""
    parent = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(parent):
        raise UsageError(f"output location does not exist: {parent}")


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _manifest(args, inputs: dict[str, str], outputs: list[str], extra: dict | None = None) -> dict:
    flags = {k: v for k, v in vars(args).items() if k not in ("func",)}
    return {
        "command": args.command,
        "argv": sys.argv[1:],
        "flags": flags,
        "seed": getattr(args, "seed", None),
        "inputs": {name: {"path": p, "sha256": _sha256(p)} for name, p in inputs.items()},
        "outputs": outputs,
        "versions": {
            "artifact": version(),
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        **(extra or {}),
    }


def _write_manifest(path: str, manifest: dict) -> None:
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _estimator_config(args) -> EstimatorConfig:
    try:
        return EstimatorConfig(
            landmarks=tuple(args.landmarks),
            tau=args.tau,
            kernel=KernelSpec(args.kernel, args.kernel_order),
            bandwidth_mode=args.bandwidth_mode,
            h=args.h,
            htilde=args.htilde,
        )
    except ValueError as exc:
        raise UsageError(str(exc))


def _load_dataset(path: str):
    _require_file(path)
    try:
        return read_jsonl(path)
    except (ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"cannot parse dataset {path}: {exc}")


def _fmt_list(xs) -> str:
    return ", ".join("NA" if x is None else f"{x:.4g}" for x in xs)


# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    _check_output(args.out)
    seed = 0 if args.seed is None else args.seed
    try:
        config = ScenarioConfig(
            scenario=args.scenario,
            n=args.n,
            tgap=args.tgap,
            seed=seed,
            censoring=not args.no_censoring,
            baseline=args.baseline,
            miss_prob=args.miss_prob,
            landmarks=tuple(args.landmarks),
        )
    except ValueError as exc:
        raise UsageError(str(exc))
    _, data = simulate_dataset(config)
    write_jsonl(data, args.out)
    _write_manifest(args.out + ".manifest.json", _manifest(args, {}, [args.out], {"scenario_config": config.__dict__}))
    progressed = float(np.mean(data.progressed))
    print(f"wrote {data.n} subjects to {args.out} (observed progression {progressed:.3f})")
    return 0


def cmd_fit(args) -> int:
    if (args.r is None) == (args.xi is None):
        raise UsageError("give exactly one of --r or --xi")
    _check_output(args.out)
    data = _load_dataset(args.data)
    est = _estimator_config(args)
    try:
        config = FitConfig(
            estimator=est,
            r=args.r,
            xi=None if args.xi is None else tuple(args.xi),
            lambda_grid=tuple(args.lambda_grid),
            folds=args.folds,
            max_iter=args.max_iter,
            tol=args.tol,
            seed=0 if args.seed is None else args.seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc))
    outcome = fit(data, config, args.method, lam=args.lam)
    outcome.rule.save(args.out)
    _write_manifest(args.out + ".manifest.json", _manifest(args, {"data": args.data}, [args.out]))
    print(f"lambda: {outcome.lam:g}")
    for s, x in zip(est.landmarks, outcome.xi):
        print(f"xi[{s:g}]: {'NA' if x is None else f'{x:.6g}'}")
    print(f"training value: {outcome.train_value:.6f}")
    return 0


def cmd_evaluate(args) -> int:
    if args.r is not None and args.xi is not None:
        raise UsageError("give at most one of --r or --xi")
    _check_output(args.out)
    _require_file(args.rule)
    try:
        rule = LinearRule.load(args.rule)
    except (ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"cannot parse rule {args.rule}: {exc}")
    data = _load_dataset(args.data)
    est = _estimator_config(args)
    if args.xi is not None and len(args.xi) != len(est.landmarks):
        raise UsageError("--xi needs one value per landmark")
    if rule.n_features != data.n_covariates + 1:
        raise UsageError(f"rule expects {rule.n_features} features; dataset provides {data.n_covariates + 1}")
    try:
        ev = Evaluator(data, args.evaluator, est)
    except MissingTruth as exc:
        raise UsageError(f"{exc}: {args.data}")
    xi = args.xi
    if xi is None and args.r is not None:
        xi = ev.xi_for(args.r)
    if xi is None and len(rule.xi) == len(est.landmarks):
        xi = list(rule.xi)
    report = ev.report(rule, xi)
    report.write_csv(args.out)
    _write_manifest(args.out + ".manifest.json", _manifest(args, {"rule": args.rule, "data": args.data}, [args.out]))
    print(report.to_csv(), end="")
    return 0


def cmd_compare(args) -> int:
    _require_file(args.config)
    _check_output(args.out)
    try:
        with open(args.config) as fh:
            obj = json.load(fh)
        if args.seed is not None:
            obj["seed"] = args.seed
        cfg = ExperimentConfig.from_dict(obj)
    except (ValueError, TypeError) as exc:
        raise UsageError(f"cannot parse config {args.config}: {exc}")
    if args.threads < 1:
        raise UsageError("--threads must be at least 1")
    result = run_experiment(cfg, threads=args.threads)
    manifest = _manifest(
        args,
        {"config": args.config},
        ["metrics.csv", "summary.csv"],
        {"experiment": cfg.to_dict()},
    )
    write_experiment(result, args.out, manifest)
    n_failed = sum(1 for row in result.metrics if row.get("status") != "ok")
    print(f"wrote {len(result.metrics)} metric rows ({n_failed} failed) to {args.out}")
    return 0


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "evaluate": cmd_evaluate, "compare": cmd_compare}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DegenerateWindow, EmptyStratum, ZeroPrevalence, GZero, NoMeasurement) as exc:
        print(f"degenerate estimation: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except NoConvergence as exc:
        print(f"no convergence: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
