"""Tailored active-surveillance biopsy rules from interval-censored data.

Kernel estimators of time-varying TPR/TNR that handle interval censoring
and immediate dropout, a surrogate-loss learner for stabilized decision
rules, the simulation scenarios used to study them, and a CLI.
"""

from .data import Dataset, SubjectRecord, read_jsonl, write_jsonl
from .estimators import EstimatorConfig, estimate_prevalence, estimate_tnr, estimate_tpr, estimate_value
from .evaluation import ExperimentConfig, bootstrap_ci, evaluate, oracle_metrics, run_experiment
from .kernels import KernelSpec
from .policy import FitConfig, fit, fit_osf_r, fit_rule
from .rules import ConstantRule, LinearRule
from .simulation import ScenarioConfig, simulate_dataset

__version__ = "0.1.0"
