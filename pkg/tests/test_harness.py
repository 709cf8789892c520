import math

import numpy as np
import pytest

from conftest import flagship_dict
from crosslight.config import from_dict
from crosslight.errors import CalibrationError
from crosslight.harness import (
    STEP_COLUMNS,
    Draws,
    TraceLog,
    calibrate_noise,
    compute_metrics,
    poisson_arrivals,
    run_scenario,
    stream_rng,
    sweep,
)


class TestPoisson:
    def test_zero_rate(self):
        assert np.all(poisson_arrivals(0, 1.0, np.random.default_rng(0), 1000) == 0)

    def test_mean_and_dispersion(self):
        x = poisson_arrivals(700, 1.0, np.random.default_rng(11), 1_000_000)
        mean = x.mean()
        assert abs(mean - 0.1944) <= 0.002
        assert abs(x.var() / mean - 1) <= 0.02

    def test_same_stream_same_draws(self):
        a = poisson_arrivals(700, 1.0, stream_rng(9, "arrivals", 0), 100)
        b = poisson_arrivals(700, 1.0, stream_rng(9, "arrivals", 0), 100)
        assert np.array_equal(a, b)

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            poisson_arrivals(-1, 1.0, np.random.default_rng(0))


class TestCalibrateNoise:
    def test_zero_power(self):
        assert calibrate_noise([0.5, 0.2], 0.0) == 0.0

    def test_hand_value(self):
        assert calibrate_noise(np.full(100, 0.5), 0.00394) == pytest.approx(math.sqrt(0.00394 * 0.25))
        assert calibrate_noise(np.full(100, 0.5), 0.00394) == pytest.approx(0.03138, abs=5e-6)

    def test_square_root_scaling(self):
        ref = np.linspace(0.1, 0.9, 50)
        assert calibrate_noise(ref, 0.004) == pytest.approx(2 * calibrate_noise(ref, 0.001))

    def test_all_zero_reference(self):
        with pytest.raises(CalibrationError):
            calibrate_noise(np.zeros(10), 0.01)

    def test_empty(self):
        with pytest.raises(CalibrationError):
            calibrate_noise([], 0.01)


def test_stream_isolation():
    base = from_dict(flagship_dict())
    noisy = from_dict(flagship_dict(noise={"meas_power_frac": 0.01, "process_power_frac": 0.001}))
    a, b = Draws.for_config(base), Draws.for_config(noisy)
    assert np.array_equal(a.arrivals, b.arrivals)
    assert np.array_equal(a.measurement, b.measurement)
    other = from_dict(flagship_dict(seed=2))
    assert not np.array_equal(a.arrivals, Draws.for_config(other).arrivals)


def test_trace_shape_and_invariants(flagship):
    tr = run_scenario(flagship).trace
    assert len(tr) == flagship.n_steps
    assert list(tr.columns) == list(STEP_COLUMNS)
    assert np.all(np.diff(tr["t"]) > 0)
    for i in (1, 2):
        assert np.all(tr[f"q{i}"] >= 0)
        assert np.all((tr[f"o_true{i}"] >= 0) & (tr[f"o_true{i}"] <= 1))
        assert np.all((tr[f"o_meas{i}"] >= 0) & (tr[f"o_meas{i}"] <= 1))
        assert np.all(tr[f"z{i}"] >= flagship.min_green_s)
    assert np.all(tr["z1"] + tr["z2"] <= flagship.cycle_time_s * (1 + 1e-12))


@pytest.mark.parametrize("noise", [{}, {"process_power_frac": 0.001, "meas_power_frac": 0.002}])
def test_conservation_ledger(noise):
    cfg = from_dict(flagship_dict(noise=noise))
    tr = run_scenario(cfg).trace
    for i, p in enumerate(cfg.pairs, start=1):
        inflow = p.initial_queue + np.cumsum(tr[f"arrivals{i}"] + tr[f"pnoise_q{i}"] + tr[f"qcorr{i}"])
        outflow = np.cumsum(tr[f"departures{i}"]) + tr[f"q{i}"]
        scale = np.maximum(1.0, np.abs(inflow))
        assert np.max(np.abs(inflow - outflow) / scale) <= 1e-12


def test_deterministic_mode_ignores_seed():
    a = run_scenario(from_dict(flagship_dict(arrival_mode="deterministic", seed=1))).trace
    b = run_scenario(from_dict(flagship_dict(arrival_mode="deterministic", seed=2))).trace
    assert a.equals(b)


def test_same_seed_bit_identical(flagship):
    a = run_scenario(flagship).trace
    b = run_scenario(flagship).trace
    assert a.equals(b)
    assert all(a[c].tobytes() == b[c].tobytes() for c in STEP_COLUMNS)


def test_fixed_point_under_constant_traffic():
    cfg = from_dict(flagship_dict(arrival_mode="deterministic", attack={"enabled": False}))
    tr = run_scenario(cfg).trace
    z = tr["z1"][tr.boundary_rows()]
    d_o = tr.delta_o(0)
    hits = np.flatnonzero(d_o == 0)
    if hits.size:
        assert np.all(z[hits[0] + 1 :] == z[hits[0] + 1])
    assert np.all(np.abs(np.diff(z[10:])) < 0.5)


def _metric_trace(alarm_at=None, n=1800):
    cols = {c: np.zeros(n) for c in STEP_COLUMNS}
    cols["t"] = np.arange(1, n + 1, dtype=float)
    cols["z1"][:] = 20.0
    cols["q1"][:] = 50.0
    if alarm_at is not None:
        cols["threshold_alarm"][round(alarm_at) - 1] = 1.0
    return TraceLog(cols)


def test_metrics_no_alarm(flagship):
    m = compute_metrics(_metric_trace(), flagship)
    assert m.detection_latency_s is None and m.false_positive_rate == 0 and not m.detected


def test_metrics_latency(flagship):
    m = compute_metrics(_metric_trace(alarm_at=480), flagship)
    assert m.detection_latency_s == 60.0


def test_metrics_false_positive(flagship):
    # cycles 5 and 6 precede the attack, but the sample at t = 420 s ends
    # cycle 6 and is already attacked, so only cycle 5 is benign
    m = compute_metrics(_metric_trace(alarm_at=330), flagship)
    assert m.benign_cycles == 1 and m.false_alarm_cycles == 1
    assert m.false_positive_rate == 1.0
    benign = flagship.replace(attack=flagship.attack.__class__(enabled=False))
    m = compute_metrics(_metric_trace(alarm_at=330), benign)
    assert m.benign_cycles == 25 and m.false_positive_rate == pytest.approx(1 / 25)


def test_sweep_singleton_equals_run(flagship):
    (item,) = sweep([flagship])
    assert item.status == "ok"
    assert item.metrics == run_scenario(flagship).metrics


def test_sweep_worker_count_independent():
    cfgs = [from_dict(flagship_dict(seed=s)) for s in range(4)]
    one = sweep(cfgs, parallelism=1)
    many = sweep(cfgs, parallelism=3)
    assert [it.index for it in many] == [0, 1, 2, 3]
    assert [it.metrics for it in one] == [it.metrics for it in many]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_sweep_reports_failures_per_item(flagship):
    bad = flagship.replace(pairs=(flagship.pairs[0].__class__(intensity_vph=700, k=math.inf), flagship.pairs[1]))
    items = sweep([flagship, bad])
    assert [it.status for it in items] == ["ok", "error"]
    assert items[1].error
