import hashlib
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tailoredas.data import CovariateTrajectory, record_to_json
from tailoredas.errors import InvalidGap
from tailoredas.simulation import (
    ScenarioConfig,
    cumulative_hazard,
    gen_biopsy_schedule,
    gen_censoring,
    gen_covariates,
    gen_event_scenario2,
    invert_cumulative_hazard,
    population_event_times,
    scenario2_event_time,
    simulate_dataset,
    simulate_subjects,
    subject_rng,
)

S1 = ScenarioConfig(scenario=1)
S2 = ScenarioConfig(scenario=2)


def digest(data) -> str:
    blob = json.dumps([record_to_json(r) for r in data.records], sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def test_covariates_deterministic():
    a = gen_covariates(S1, np.random.default_rng(3))
    b = gen_covariates(S1, np.random.default_rng(3))
    assert np.array_equal(a.a0, b.a0) and np.array_equal(a.a1, b.a1)
    assert a.n_covariates == 4
    assert a.noise_sd == pytest.approx(math.sqrt(0.1))


@pytest.mark.parametrize("baseline", ["weibull", "verbatim"])
def test_constant_covariates_match_closed_form(baseline):
    cfg = ScenarioConfig(baseline=baseline)
    a0 = np.array([[0.2, -0.4, 0.3, 0.1]])
    a1 = np.zeros((1, 4))
    b0 = float((a0 @ np.array(cfg.beta))[0])
    E = np.array([[0.05, 0.4, 1.0, 2.5]])
    k, scale, nu, eps = cfg.nu_shape, cfg.nu_scale, cfg.nu, cfg.t_eps
    if baseline == "weibull":
        closed = scale * (E * math.exp(-b0) + (eps / scale) ** k) ** (1 / k)
    else:
        c = (k + 1) * nu * scale ** (k - 1)
        closed = (c * E * math.exp(-b0) + eps ** (k + 1)) ** (1 / (k + 1))
    T = invert_cumulative_hazard(a0, a1, E, cfg)
    np.testing.assert_allclose(T, closed, atol=1e-6)


def test_cumulative_hazard_matches_quadrature():
    from scipy.integrate import quad

    from tailoredas.simulation import hazard

    a0 = np.array([[0.1, -0.3, 0.2, 0.4]])
    a1 = np.array([[0.05, -0.1, 0.2, -0.15]])
    for t in (5.0, 24.0, 100.0):
        ref, _ = quad(lambda u: float(hazard(np.array([u]), a0, a1, S1)[0]), S1.t_eps, t, limit=200)
        assert float(cumulative_hazard([[t]], a0, a1, S1)[0, 0]) == pytest.approx(ref, rel=1e-7)


def test_event_time_monotone_in_draw():
    traj = gen_covariates(S1, np.random.default_rng(8))
    E = np.sort(np.random.default_rng(1).exponential(size=50))
    T = invert_cumulative_hazard(traj.a0, traj.a1, E[None, :], S1)[0]
    assert np.all(np.diff(T) > 0)


def test_event_time_distribution_for_fixed_trajectory():
    traj = gen_covariates(S1, np.random.default_rng(21))
    E = np.random.default_rng(2).exponential(size=100_000)
    T = invert_cumulative_hazard(traj.a0, traj.a1, E[None, :], S1)[0]
    for t in (24.0, 48.0):
        lam = float(cumulative_hazard([[t]], traj.a0, traj.a1, S1)[0, 0])
        assert abs((T <= t).mean() - (1 - math.exp(-lam))) < 0.02


def test_scenario2_formula_and_bound():
    traj = CovariateTrajectory(a0=[0.3, -0.2, 0.1, 0.5], a1=[0.1, 0.2, -0.1, 0.0])
    beta = np.array(S2.beta)
    gamma = 1.4 + traj.a1 @ beta + 0.1 * (traj.a1[0] + traj.a1[1]) ** 2
    eta = traj.a0 @ beta + 0.1 * (traj.a0[0] + traj.a0[1]) ** 2
    q = -np.log1p(-np.linspace(0.01, 0.99, 25))  # Exp(1) quantiles
    ref = [12 + 30 * (x / 1.4 * gamma * math.exp(-eta)) ** (1 / gamma) for x in q]
    got = scenario2_event_time(traj.a0, traj.a1, q[None, :], S2)[0]
    np.testing.assert_allclose(got, ref, rtol=0, atol=1e-9)
    assert scenario2_event_time(traj.a0, traj.a1, [[1e-300]], S2)[0, 0] == pytest.approx(12.0)
    rng = np.random.default_rng(0)
    assert all(gen_event_scenario2(traj, S2, rng) >= 12 for _ in range(200))


def test_scenario2_shape_clipped():
    from tailoredas.simulation import scenario2_shape

    gamma = scenario2_shape(np.array([[0.0, 10.0, -10.0, 10.0]]), S2)
    assert gamma[0] == S2.gamma_floor


def test_censoring_range_and_mean():
    rng = np.random.default_rng(4)
    C = np.array([gen_censoring(S1, rng) for _ in range(100_000)])
    assert C.min() >= 12 and C.max() <= 150
    assert abs(C.mean() - 81) < 0.5
    assert gen_censoring(ScenarioConfig(censoring=False), rng) == math.inf
    assert gen_censoring(S1, np.random.default_rng(9)) == gen_censoring(S1, np.random.default_rng(9))


@settings(max_examples=300)
@given(st.floats(4, 60), st.integers(0, 2**32 - 1))
def test_schedule_invariants(tgap, seed):
    cfg = ScenarioConfig(tgap=tgap)
    N = gen_biopsy_schedule(cfg, np.random.default_rng(seed))
    assert 12 <= N[0] <= 3 * tgap
    gaps = np.diff(N)
    assert np.all(gaps >= tgap) and np.all(gaps <= 3 * tgap)
    # stops exactly when the previous biopsy plus tgap passes 150
    assert N[-1] + tgap > 150
    assert np.all(N[:-1] + tgap <= 150)


def test_schedule_tgap_24():
    rng = np.random.default_rng(0)
    for _ in range(500):
        N = gen_biopsy_schedule(ScenarioConfig(tgap=24.0), rng)
        assert 12 <= N[0] <= 72
        assert np.all((np.diff(N) >= 24) & (np.diff(N) <= 72))
        assert N[-1] > 126 and np.all(N[:-1] <= 126)


def test_invalid_gap():
    with pytest.raises(InvalidGap):
        gen_biopsy_schedule(ScenarioConfig(tgap=2.0), np.random.default_rng(0))
    with pytest.raises(InvalidGap):
        ScenarioConfig(tgap=0.0)


def test_config_validation():
    with pytest.raises(ValueError):
        ScenarioConfig(scenario=3)
    with pytest.raises(ValueError):
        ScenarioConfig(coef_cov=((1.0, 2.0), (2.0, 1.0)))
    with pytest.raises(ValueError):
        ScenarioConfig(beta=(1.0,))


def test_dataset_reproducible():
    cfg = ScenarioConfig(scenario=1, n=500, tgap=24.0, seed=17)
    assert digest(simulate_dataset(cfg)[1]) == digest(simulate_dataset(cfg)[1])
    assert digest(simulate_dataset(cfg)[1]) != digest(simulate_dataset(ScenarioConfig(n=500, seed=18))[1])


def test_subject_streams_independent_of_cohort_size():
    a = simulate_subjects(ScenarioConfig(n=10, seed=3))
    b = simulate_subjects(ScenarioConfig(n=25, seed=3))
    for x, y in zip(a, b):
        assert x.event_time == y.event_time
        assert np.array_equal(x.biopsy_times, y.biopsy_times)
    r1 = subject_rng(3, 4).random()
    assert r1 == subject_rng(3, 4).random() != subject_rng(3, 5).random()


@pytest.mark.parametrize("scenario", [1, 2])
def test_event_rate_by_60_months(scenario):
    full, _ = simulate_dataset(ScenarioConfig(scenario=scenario, n=1000, seed=1))
    rate = np.mean([s.event_time <= 60 for s in full])
    assert 0 < rate < 1


def test_uncensored_records_end_in_positive_or_schedule_end():
    full, data = simulate_dataset(ScenarioConfig(n=300, tgap=6.0, seed=2, censoring=False))
    for s, rec in zip(full, data.records):
        assert rec.progressed or rec.biopsy_times[-1] == s.biopsy_times[-1]


def test_observed_records_are_valid(scenario1_small):
    for rec in scenario1_small.records:
        assert rec.biopsy_results.sum() <= 1
        assert rec.biopsy_results[-1] == rec.biopsy_results.max()
        assert rec.truth is not None
        assert rec.covariate_times.tolist() == list(S1.landmarks)


def test_missing_biopsies_switch():
    full, data = simulate_dataset(ScenarioConfig(n=200, seed=4, miss_prob=0.5))
    assert any(s.miss_flags.min() == 0 for s in full)
    assert data.n == 200


def test_population_times_reproducible():
    a = population_event_times(S2, 1000, 5)
    b = population_event_times(S2, 1000, 5)
    assert np.array_equal(a, b) and a.min() >= 12
