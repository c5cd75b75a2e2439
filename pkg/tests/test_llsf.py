from dataclasses import replace

import numpy as np
import pytest

from vcsel_rul.dataset import build_samples
from vcsel_rul.errors import DataError, UsageError
from vcsel_rul.llsf import fit_line, llsf_evaluate, llsf_predict_rul, llsf_predict_samples
from vcsel_rul.synth import (
    DeviceRecord,
    GeneratorConfig,
    OperatingConditions,
    detect_failure,
    generate_fleet,
    simulate_device,
)

CONDITIONS = OperatingConditions(6.0, 140.0, 10.0, 125.0, 35.4, 88.0)


def _closed_form(t, p):
    n = t.size
    sx, sy, sxx, sxy = t.sum(), p.sum(), (t * t).sum(), (t * p).sum()
    slope = (n * sxy - sx * sy) / (n * sxx - sx * sx)
    return slope, (sy - slope * sx) / n


@pytest.mark.parametrize("seed", range(5))
def test_fit_matches_normal_equations(seed):
    rng = np.random.default_rng(seed)
    t = np.sort(rng.uniform(0, 3000, 25))
    p = 2.0 - 1e-4 * t + rng.normal(0, 0.01, t.size)
    fit = fit_line(t, p)
    slope, intercept = _closed_form(t, p)
    assert fit.slope == pytest.approx(slope, rel=1e-10)
    assert fit.intercept == pytest.approx(intercept, rel=1e-10)
    assert fit.n_points == 25


def test_fit_needs_two_distinct_times():
    with pytest.raises(UsageError):
        fit_line([1.0], [1.0])
    with pytest.raises(UsageError):
        fit_line([5.0, 5.0], [1.0, 0.9])


def test_exact_on_linear_truth():
    t = np.arange(0.0, 300.0, 50.0)
    p = 2.0 * (1.0 - 2.5e-4 * t)
    # threshold 1.6 reached at 800 h
    assert abs(llsf_predict_rul(t, p, 250.0, 1.6) - 550.0) < 1e-6


def test_non_degrading_fit_predicts_cap():
    t = np.arange(0.0, 300.0, 50.0)
    assert llsf_predict_rul(t, np.full(t.size, 2.0), 250.0, 1.6) == 5000.0
    assert llsf_predict_rul(t, 2.0 + 1e-4 * t, 250.0, 1.6, rul_cap_h=4000.0) == 4000.0


def test_crossing_already_passed_predicts_zero():
    t = np.arange(0.0, 300.0, 50.0)
    p = 2.0 * (1.0 - 1e-3 * t)
    assert llsf_predict_rul(t, p, 250.0, 1.6) == 0.0


def test_linear_devices_have_zero_error():
    fleet = []
    for i, slope in enumerate((2.1e-4, 1.5e-4, 1.1e-4)):
        times = [50.0 * k for k in range(41)]
        power = [2.0 * (1.0 - slope * t) for t in times]
        stop = next(k for k, p in enumerate(power) if p <= 2.0 * (1.0 - 0.2)) + 1
        record = DeviceRecord(f"D{i:04d}", CONDITIONS, times[:stop], power[:stop], censored=False)
        record.failure_time_h = detect_failure(record)
        fleet.append(record)
    samples = build_samples(fleet)
    pred = llsf_predict_samples(samples, fleet)
    errors = pred - np.array([s.rul_h for s in samples])
    assert np.max(np.abs(errors)) < 1e-6


def test_missing_device_is_data_error():
    fleet = generate_fleet(GeneratorConfig(device_count=20, master_seed=1))
    samples = build_samples(fleet)
    with pytest.raises(DataError):
        llsf_predict_samples(samples, [r for r in fleet if r.device_id != samples[0].device_id])


def test_llsf_evaluate_report():
    fleet = generate_fleet(GeneratorConfig(device_count=20, master_seed=1))
    samples = build_samples(fleet)
    report = llsf_evaluate(samples, fleet)
    assert report.n == len(samples)
    assert report.metadata == {"method": "llsf"}
    assert all(0.0 <= p <= 5000.0 for _, p in report.pairs)


def _power_law_fleet(time_exponent):
    cfg = replace(GeneratorConfig(noise_std_relative=0.0), time_exponent=time_exponent)
    fleet = []
    for i, t_f in enumerate((1200.0, 1500.0, 2100.0)):
        rate = cfg.drop_fraction / t_f**time_exponent
        fleet.append(simulate_device(f"D{i:04d}", CONDITIONS, 2.0, rate, cfg))
    assert not any(r.censored for r in fleet)
    return fleet


def test_straight_line_overestimates_accelerating_decay():
    fleet = _power_law_fleet(1.5)
    samples = build_samples(fleet)
    errors = llsf_predict_samples(samples, fleet) - np.array([s.rul_h for s in samples])
    assert errors.mean() > 0.0
    assert np.all(errors >= -1e-6)


def test_straight_line_underestimates_decelerating_decay():
    fleet = _power_law_fleet(0.7)
    samples = build_samples(fleet)
    errors = llsf_predict_samples(samples, fleet) - np.array([s.rul_h for s in samples])
    assert errors.mean() < 0.0
    assert np.all(errors <= 1e-6)


def test_llsf_evaluate_is_deterministic():
    fleet = generate_fleet(GeneratorConfig(device_count=20, master_seed=2))
    samples = build_samples(fleet)
    first, second = llsf_evaluate(samples, fleet), llsf_evaluate(samples, fleet)
    assert first.pairs == second.pairs
    assert first.summary() == second.summary()
