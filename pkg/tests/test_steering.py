import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rfiqkd.steering import (
    MAX_BIREFRINGENCE_QBER,
    HandMotionParams,
    HandTrace,
    MotionSegment,
    TrackingLoopConfig,
    ccdf_max_deviation,
    coupling_efficiency,
    max_deviation,
    run_tracking,
    simulate_hand_trace,
    steering_birefringence,
)


def test_coupling_efficiency_gaussian_fwhm():
    assert coupling_efficiency(0.0) == 1.0
    assert coupling_efficiency(0.05) == pytest.approx(0.5)
    assert coupling_efficiency(0.1) == pytest.approx(1 / 16)
    np.testing.assert_allclose(coupling_efficiency(np.array([0.0, 0.05])), [1.0, 0.5])
    with pytest.raises(ValueError):
        coupling_efficiency(-0.1)


def test_hand_trace_deterministic_and_seeded():
    a = simulate_hand_trace(2.0, HandMotionParams(seed=3))
    b = simulate_hand_trace(2.0, HandMotionParams(seed=3))
    c = simulate_hand_trace(2.0, HandMotionParams(seed=4))
    assert np.array_equal(a.tilt, b.tilt)
    assert not np.array_equal(a.tilt, c.tilt)
    assert a.tilt.shape == (2000, 2) and a.dt == pytest.approx(1e-3)


def test_ou_stationary_spread():
    p = HandMotionParams(mean_reversion=2.0, volatility=0.06, drift_amplitude=0.0, jerk_rate=0.0, seed=1)
    tr = simulate_hand_trace(600.0, p)
    # stationary sd = vol / sqrt(2 kappa) = 0.03 deg
    assert tr.tilt.std(axis=0) == pytest.approx([0.03, 0.03], rel=0.15)


def test_segments_are_applied():
    p = HandMotionParams(volatility=0.0, drift_amplitude=0.0, jerk_rate=0.0, segments=(MotionSegment(0.5, 1.0, tilt_x=2.0, axial=30.0),))
    tr = simulate_hand_trace(2.0, p)
    assert tr.tilt[0, 0] == 0.0
    assert tr.tilt[-1, 0] == pytest.approx(2.0)
    assert tr.axial[-1] == pytest.approx(30.0)
    assert tr.tilt[750, 0] == pytest.approx(1.0, abs=0.01)


def test_invalid_params():
    with pytest.raises(ValueError):
        HandMotionParams(volatility=-1.0)
    with pytest.raises(ValueError):
        TrackingLoopConfig(gain=0.0)
    with pytest.raises(ValueError):
        simulate_hand_trace(0.0, HandMotionParams())


def test_max_deviation_on_ramp():
    t = np.arange(100) * 1e-3
    tr = HandTrace(t, np.column_stack([t * 10.0, np.zeros(100)]), np.zeros(100))
    dev = max_deviation(tr, 0.01)
    np.testing.assert_allclose(dev, 0.1)
    with pytest.raises(ValueError):
        max_deviation(tr, 1.0)


def test_ccdf_ordering_across_windows():
    tr = simulate_hand_trace(60.0, HandMotionParams(seed=0))
    grid = np.linspace(0.0, 0.5, 51)
    curves = [ccdf_max_deviation(tr, w, grid)[1] for w in (0.042, 0.1, 0.3)]
    for c in curves:
        assert c[0] == 1.0
        assert np.all(np.diff(c) <= 0)
    assert np.all(curves[0] <= curves[1] + 1e-12) and np.all(curves[1] <= curves[2] + 1e-12)
    assert curves[0][10] < curves[2][10]


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**16))
def test_ccdf_bounded(seed):
    tr = simulate_hand_trace(1.0, HandMotionParams(seed=seed))
    _, c = ccdf_max_deviation(tr, 0.05)
    assert np.all((c >= 0) & (c <= 1))


def test_tracking_holds_static_offset():
    p = HandMotionParams(volatility=0.0, drift_amplitude=0.0, jerk_rate=0.0, segments=(MotionSegment(0.0, 0.0, tilt_x=2.0),))
    st_ = run_tracking(simulate_hand_trace(1.0, p), TrackingLoopConfig(psd_noise=0.0))
    assert st_.tx_mirror[-1, 0] == pytest.approx(2.0, abs=1e-6)
    assert st_.rx_mirror[-1, 0] == pytest.approx(1.0, abs=1e-6)
    assert st_.efficiency[-1] == pytest.approx(1.0)


def test_mirror_saturates_at_range():
    p = HandMotionParams(volatility=0.0, drift_amplitude=0.0, jerk_rate=0.0, segments=(MotionSegment(0.0, 0.0, tilt_x=6.0),))
    st_ = run_tracking(simulate_hand_trace(1.0, p), TrackingLoopConfig(psd_noise=0.0))
    assert np.abs(st_.tx_mirror).max() == pytest.approx(4.0)
    assert st_.error_magnitude[-1] == pytest.approx(2.0)
    assert st_.efficiency[-1] < 1e-100


def test_lock_time_blanks_link():
    st_ = run_tracking(simulate_hand_trace(1.0, HandMotionParams()), TrackingLoopConfig(lock_time=0.5))
    assert np.all(st_.efficiency[st_.t < 0.5] == 0.0)
    assert np.all(st_.tx_mirror[st_.t < 0.5] == 0.0)
    assert st_.window_efficiency(0.0, 0.4) == 0.0
    assert st_.window_efficiency(0.6, 0.4) > 0.5


def test_tracking_requires_matching_sample_rate():
    tr = simulate_hand_trace(0.1, HandMotionParams(dt=2e-3))
    with pytest.raises(ValueError):
        run_tracking(tr, TrackingLoopConfig())


def test_default_loop_meets_budget():
    tr = simulate_hand_trace(60.0, HandMotionParams(seed=9))
    st_ = run_tracking(tr, TrackingLoopConfig(seed=9))
    assert np.mean(st_.error_magnitude < 0.1) >= 0.95
    assert st_.efficiency.mean() >= 0.85


def test_steering_trace_csv(tmp_path):
    st_ = run_tracking(simulate_hand_trace(0.01, HandMotionParams()), TrackingLoopConfig())
    text = st_.to_csv(tmp_path / "s.csv", header_comment="seed=0")
    lines = text.splitlines()
    assert lines[0] == "# seed=0"
    assert lines[1].split(",") == list(st_.COLUMNS)
    assert len(lines) == 12


def test_birefringence_budget():
    ret, _ = steering_birefringence([4.0, 4.0], [4.0, 4.0])
    # all four mirror angles at full deflection add 3% to the key-basis error
    assert (1 - np.cos(np.deg2rad(ret))) / 2 == pytest.approx(MAX_BIREFRINGENCE_QBER)
    assert steering_birefringence([0.0, 0.0])[0] == 0.0
    small, _ = steering_birefringence([1.0, 0.0])
    assert 0 < small < ret / 10
