import dataclasses
import logging
import math

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from tailoredas.data import Dataset, observe
from tailoredas.errors import DegenerateWindow, EmptyData, GZero, ZeroPrevalence
from tailoredas.estimators import (
    EstimatorConfig,
    StepFunction,
    estimate_prevalence,
    estimate_tnr,
    estimate_tpr,
    estimate_value,
    ipcw_prevalence,
    ipcw_tpr_tnr,
    ipcw_weights,
    kaplan_meier,
    km_censoring,
    krcs_tpr,
    landmark_weights,
    tnr_weights,
    tpr_weights,
    value_from_weights,
    xi_from_ratio,
    xi_vector,
)
from tailoredas.evaluation import evaluate, oracle_metrics
from tailoredas.kernels import EPANECHNIKOV
from tailoredas.rules import ConstantRule, LinearRule
from tailoredas.simulation import ScenarioConfig, simulate_subjects

from conftest import dataset

YES, NO = ConstantRule(1), ConstantRule(-1)
S, TAU, H = 12.0, 12.0, 4.0


def monthly_cohort(n, seed):
    """Biopsies every month, no censoring, no dropout."""
    full = simulate_subjects(ScenarioConfig(n=n, seed=seed, censoring=False))
    full = [dataclasses.replace(s, biopsy_times=np.arange(1.0, 151.0), miss_flags=None) for s in full]
    return Dataset([observe(s, dropout=False) for s in full])


RULE = LinearRule(0.0, [0.0, 1.0, -1.0, 1.0, 0.0])


# --- KR-I weights -----------------------------------------------------------


def test_tnr_weight_single_subject():
    w = tnr_weights(dataset([(24, 0)]), S, TAU, H)
    assert w.values.tolist() == [1.0]
    assert w.kind == "negative-biopsy"


def test_tnr_weights_hand_computed():
    w = tnr_weights(dataset([(24, 0)], [(60, 0)]), S, TAU, H)
    assert w.values.tolist() == pytest.approx([2.0, 0.0], abs=1e-15)
    assert w.mass == pytest.approx(0.75)


def test_tnr_positive_biopsies_ignored():
    w = tnr_weights(dataset([(24, 0)], [(24, 1)]), S, TAU, H)
    assert w.values.tolist() == [2.0, 0.0]


def test_tnr_degenerate():
    with pytest.raises(DegenerateWindow):
        tnr_weights(dataset([(60, 0)], [(80, 0)]), S, TAU, H)


def test_tpr_weight_single_pair():
    w = tpr_weights(dataset([(12, 0), (24, 1)]), S, TAU, H)
    assert w.values.tolist() == [1.0]


def test_tpr_negative_pairs_get_zero():
    w = tpr_weights(dataset([(12, 0), (24, 1)], [(12, 0), (24, 0)]), S, TAU, H)
    assert w.values.tolist() == [2.0, 0.0]


def test_tpr_weights_hand_computed():
    w = tpr_weights(dataset([(12, 0), (24, 1)], [(40, 0), (70, 1)]), S, TAU, H)
    assert w.values.tolist() == pytest.approx([2.0, 0.0], abs=1e-15)


def test_tpr_degenerate():
    with pytest.raises(DegenerateWindow):
        tpr_weights(dataset([(12, 0), (24, 0)]), S, TAU, H)


def test_weights_normalized(scenario1_small):
    cfg = EstimatorConfig()
    for lw in landmark_weights(scenario1_small, cfg, "kr-i") + landmark_weights(scenario1_small, cfg, "ipcw"):
        for w in (lw.positive, lw.negative):
            if w is not None:
                assert abs(w.values.mean() - 1) < 1e-10
                assert w.values.min() >= 0


# --- TPR / TNR / prevalence -------------------------------------------------


def test_trivial_rules(scenario1_small):
    h, ht = EstimatorConfig().bandwidths(scenario1_small)
    assert estimate_tpr(YES, scenario1_small, 24, 12, ht).value == 1.0
    assert estimate_tpr(NO, scenario1_small, 24, 12, ht).value == 0.0
    assert estimate_tnr(NO, scenario1_small, 24, 12, h).value == 1.0
    assert estimate_tnr(YES, scenario1_small, 24, 12, h).value == 0.0


@settings(max_examples=40, suppress_health_check=[HealthCheck.function_scoped_fixture], deadline=None)
@given(
    st.floats(-2, 2),
    st.lists(st.floats(-3, 3), min_size=5, max_size=5),
    st.sampled_from([12.0, 24.0, 36.0]),
)
def test_complementarity_and_range(scenario1_small, b, coef, s):
    rule = LinearRule(b, coef, mean=scenario1_small.features(s).mean(axis=0))
    h, ht = EstimatorConfig().bandwidths(scenario1_small)
    tpr = estimate_tpr(rule, scenario1_small, s, 12, ht).value
    tnr = estimate_tnr(rule, scenario1_small, s, 12, h).value
    assert 0 <= tpr <= 1 and 0 <= tnr <= 1
    assert abs(tpr + estimate_tpr(-rule, scenario1_small, s, 12, ht).value - 1) <= 1e-12
    assert abs(tnr + estimate_tnr(-rule, scenario1_small, s, 12, h).value - 1) <= 1e-12


def test_prevalence_extremes():
    assert estimate_prevalence(dataset([(12, 0), (24, 1)], [(11, 0), (25, 1)]), S, TAU, H).value == 1.0
    assert estimate_prevalence(dataset([(12, 0), (24, 0)], [(11, 0), (25, 0)]), S, TAU, H).value == 0.0
    with pytest.raises(DegenerateWindow):
        estimate_prevalence(dataset([(60, 0)]), S, TAU, H)


def test_prevalence_in_unit_interval(scenario1_small):
    _, ht = EstimatorConfig().bandwidths(scenario1_small)
    for s in (12, 24, 36, 48):
        assert 0 <= estimate_prevalence(scenario1_small, s, 12, ht).value <= 1


def test_xi_from_ratio():
    assert xi_from_ratio(0.2, 4) == 1.0
    assert xi_from_ratio(0.5, 2) == 0.5
    with pytest.raises(ZeroPrevalence):
        xi_from_ratio(0.0, 4)
    assert xi_from_ratio(1.0, 4) == 0.05  # clipped from 0
    assert xi_from_ratio(0.001, 1) == 20.0
    assert xi_from_ratio(0.001, 1, bounds=(0.01, 1000)) == pytest.approx(999.0)
    with pytest.raises(ValueError):
        xi_from_ratio(0.5, 0)


def test_estimate_value_identities(scenario1_dense):
    data = scenario1_dense
    h, ht = EstimatorConfig().bandwidths(data)
    lms = (12.0, 24.0, 36.0, 48.0)
    for rule in (YES, NO):
        assert estimate_value(rule, data, lms, [1.0] * 4, 12, h, ht).value == pytest.approx(1.0, abs=1e-12)
    xi = [0.4, 0.7, 1.1, 2.0]
    got = estimate_value(RULE, data, lms, xi, 12, h, ht)
    by_hand = np.mean(
        [
            estimate_tpr(RULE, data, s, 12, ht).value + x * estimate_tnr(RULE, data, s, 12, h).value
            for s, x in zip(lms, xi)
        ]
    )
    assert got.value == by_hand
    assert got.landmarks_used == lms


def test_value_skips_degenerate_landmark(caplog):
    data = dataset([(12, 0), (24, 1)], [(12, 0), (24, 0)])
    with caplog.at_level(logging.WARNING):
        got = estimate_value(YES, data, [12.0, 100.0], [1.0, 1.0], 12, H, H)
    assert got.landmarks_used == (12.0,)
    assert "skipping landmark 100.0" in caplog.text
    with pytest.raises(DegenerateWindow):
        estimate_value(YES, data, [100.0], [1.0], 12, H, H)


def test_value_from_weights_matches_estimate_value(scenario1_dense):
    cfg = EstimatorConfig()
    h, ht = cfg.bandwidths(scenario1_dense)
    bundle = landmark_weights(scenario1_dense, cfg, "kr-i")
    xi = xi_vector(bundle, 4.0)
    a = value_from_weights(RULE, scenario1_dense, bundle, xi)
    b = estimate_value(RULE, scenario1_dense, cfg.landmarks, xi, 12, h, ht).value
    assert a == pytest.approx(b, abs=1e-12)


# --- Kaplan-Meier and IPCW --------------------------------------------------


def test_km_no_censoring():
    G = km_censoring(dataset([(10, 1)], [(20, 1)], [(30, 1)]))
    assert G(5) == 1.0 and G(29.9) == 1.0


def test_km_hand_computed():
    G = km_censoring(dataset([(10, 0)], [(20, 0)], [(30, 0)]))
    assert G(15) == pytest.approx(2 / 3, abs=1e-15)
    assert G(25) == pytest.approx(1 / 3, abs=1e-15)
    assert G(30) == 0.0
    assert G.left(20) == pytest.approx(2 / 3)


def test_km_single_subject():
    G = km_censoring(dataset([(10, 0)]))
    assert G.times.tolist() == [10.0]
    assert G(9.9) == 1.0 and G(10) == 0.0


def test_km_against_product_limit_by_hand():
    times = np.array([3.0, 5.0, 5.0, 8.0, 10.0, 12.0])
    events = np.array([1, 1, 0, 1, 0, 1], dtype=bool)
    S = kaplan_meier(times, events)
    expected = {2.9: 1.0, 3: 5 / 6, 5: 5 / 6 * 4 / 5, 8: 5 / 6 * 4 / 5 * 2 / 3, 12: 0.0}
    for t, v in expected.items():
        assert S(t) == pytest.approx(v)
    with pytest.raises(EmptyData):
        kaplan_meier([], [])


def test_step_function_vectorised():
    f = StepFunction(np.array([1.0, 2.0]), np.array([0.5, 0.25]))
    assert np.asarray(f([0.0, 1.0, 1.5, 3.0])).tolist() == [1.0, 0.5, 0.5, 0.25]


def test_ipcw_trivial_rule(scenario1_small):
    tpr, tnr = ipcw_tpr_tnr(YES, scenario1_small, 24, 12)
    assert tpr == 1.0 and tnr == 0.0


def test_ipcw_weights_hand_computed():
    # censored at 10, event at 20, follow-up past 24 for the third
    data = dataset([(10, 0)], [(20, 1)], [(30, 0)])
    cases, controls = ipcw_weights(data, 12, 12)
    # G jumps at 10 (1 of 3) and 30: G(20) = 2/3, G(24) = 2/3
    assert cases.values.tolist() == pytest.approx([0, 3, 0])
    assert controls.values.tolist() == pytest.approx([0, 0, 3])


def test_ipcw_gzero():
    data = dataset([(10, 0)], [(20, 1)])
    G = StepFunction(np.array([15.0]), np.array([0.0]))
    with pytest.raises(GZero):
        ipcw_weights(data, 12, 12, G)


def test_ipcw_prevalence_from_km():
    data = dataset([(20, 1)], [(30, 0)], [(40, 1)], [(50, 0)])
    # S(12) = 1, S(24) = 3/4
    assert ipcw_prevalence(data, 12, 12) == pytest.approx(0.25)


def test_monthly_ipcw_matches_oracle():
    data = monthly_cohort(1000, 0)
    orc = oracle_metrics(RULE, data, [12, 24, 36, 48], 12)
    for row in orc.rows:
        tpr, tnr = ipcw_tpr_tnr(RULE, data, row.landmark, 12)
        assert abs(tpr - row.tpr) <= 0.05
        assert abs(tnr - row.tnr) <= 0.05


# --- KR-CS ------------------------------------------------------------------


def test_krcs_trivial_rule():
    data = monthly_cohort(300, 1)
    h, _ = EstimatorConfig().bandwidths(data)
    for s in (12, 24, 36):
        assert krcs_tpr(YES, data, s, 12, h).value == 1.0
        assert krcs_tpr(NO, data, s, 12, h).value == 0.0


def test_krcs_degenerate_under_dropout(scenario1_dense):
    # positives leave the study, so the positive share of biopsies falls
    # after the first round and the increment is not positive
    h, _ = EstimatorConfig().bandwidths(scenario1_dense)
    with pytest.raises(DegenerateWindow):
        krcs_tpr(YES, scenario1_dense, 12, 12, h)


def test_krcs_degenerate():
    with pytest.raises(DegenerateWindow):
        krcs_tpr(YES, dataset([(100, 0)]), 12, 12, 4.0)


def test_krcs_agrees_with_kri_without_dropout():
    # landmark-averaged TPR; single early landmarks carry smoothing bias
    cfg = EstimatorConfig()
    gaps = []
    for seed in range(3):
        data = monthly_cohort(2000, seed)
        gaps.append(evaluate(RULE, data, "kr-cs", cfg).tpr - evaluate(RULE, data, "kr-i", cfg).tpr)
    assert abs(np.mean(gaps)) <= 0.05
    assert max(abs(g) for g in gaps) <= 0.05


def test_config_validation():
    with pytest.raises(ValueError):
        EstimatorConfig(bandwidth_mode="adaptive")
    with pytest.raises(ValueError):
        EstimatorConfig(tau=0)
    with pytest.raises(ValueError):
        EstimatorConfig(landmarks=())
    cfg = EstimatorConfig(h=3.0, htilde=5.0)
    assert cfg.bandwidths(dataset([(12, 0)], [(24, 0)])) == (3.0, 5.0)


def test_raw_bandwidth_mode(scenario1_small):
    h, ht = EstimatorConfig(bandwidth_mode="raw").bandwidths(scenario1_small)
    assert h == pytest.approx(300**-0.2) and ht == pytest.approx(300 ** (-1 / 6))
    h2, _ = EstimatorConfig().bandwidths(scenario1_small)
    assert h2 == pytest.approx(h * scenario1_small.biopsy_time_scale())


def test_kernel_choice_is_used(scenario1_small):
    from tailoredas.kernels import KernelSpec

    a = tnr_weights(scenario1_small, 24, 12, 10.0, EPANECHNIKOV)
    b = tnr_weights(scenario1_small, 24, 12, 10.0, KernelSpec("biweight"))
    assert not np.allclose(a.values, b.values)
    assert math.isclose(b.values.mean(), 1.0, abs_tol=1e-12)
