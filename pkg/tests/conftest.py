import numpy as np
import pytest

from tailoredas.data import Dataset, SubjectRecord, Truth
from tailoredas.simulation import ScenarioConfig, simulate_dataset

LANDMARKS = (12.0, 24.0, 36.0, 48.0)

_ACCEPTANCE_LINES: list[str] = []


def record(biopsies, covariates=None, sid=0, truth=None, dropout=True):
    """Build a record from ``[(time, result), ...]`` (baseline added if absent)."""
    times = [t for t, _ in biopsies]
    results = [d for _, d in biopsies]
    if covariates is None:
        covariates = [(t, [0.0]) for t in LANDMARKS]
    ctimes = [t for t, _ in covariates]
    cvals = [v for _, v in covariates]
    if truth is not None:
        truth = Truth(*truth)
    return SubjectRecord(sid, times, results, ctimes, cvals, truth, dropout)


def dataset(*biopsy_lists, **kw):
    return Dataset([record(b, sid=i, **kw) for i, b in enumerate(biopsy_lists)])


@pytest.fixture(scope="session")
def scenario1_small():
    _, data = simulate_dataset(ScenarioConfig(scenario=1, n=300, tgap=12.0, seed=11))
    return data


@pytest.fixture(scope="session")
def scenario1_dense():
    _, data = simulate_dataset(ScenarioConfig(scenario=1, n=800, tgap=6.0, seed=5, censoring=False))
    return data


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def acceptance_line():
    def emit(number: int, ok: bool, detail: str) -> str:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        print(line)
        _ACCEPTANCE_LINES.append(line)
        return line

    return emit


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
