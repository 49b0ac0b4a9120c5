import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import skew

from sideslip.evaluation import Regime, lateral_acceleration
from sideslip.simulator import (
    SAMPLE_PERIOD,
    ManeuverKind,
    ManeuverSpec,
    ReferenceLog,
    SensorFrame,
    SensorLog,
    SensorNoiseSpec,
    StratificationError,
    Trajectory,
    build_suite,
    friction_circle_histogram,
    harsh_maneuvers,
    max_lateral_acceleration,
    normal_maneuvers,
    sideslip_histogram,
    simulate,
    simulate_suite,
    split_dataset,
    wheel_speeds_from_state,
)
from sideslip.vehicle import G, LowSpeedError, TireModel, VehicleParams, VehicleState, velocity_derivative

PARAMS = VehicleParams()
QUIET = SensorNoiseSpec.noise_free()


def _slalom(amplitude=0.03, speed=15.0, duration=6.0, freq=0.5):
    return ManeuverSpec(ManeuverKind.SLALOM, amplitude, freq, speed, duration)


# Maneuver spec ------------------------------------------------------------

@pytest.mark.parametrize("kwargs", [
    dict(duration=0.0), dict(target_speed=0.5), dict(steer_amplitude=2.0),
    dict(steer_frequency=-1.0), dict(speed_profile=((0.0, 5.0), (0.0, 6.0))),
    dict(speed_profile=((0.0, 5.0), (10.0, 0.2))),
])
def test_maneuver_spec_validation(kwargs):
    base = dict(kind="slalom", steer_amplitude=0.05, steer_frequency=0.5, target_speed=10.0, duration=5.0)
    base.update(kwargs)
    with pytest.raises(ValueError):
        ManeuverSpec(**base)


def test_steering_programs():
    step = ManeuverSpec("step_steer", 0.04, 0.0, 10.0, 5.0)
    assert step.steering(0.98) == 0.0 and step.steering(1.0) == 0.04
    ramp = ManeuverSpec("ramp_steer", 0.1, 0.25, 10.0, 10.0)
    assert ramp.steering(2.0) == pytest.approx(0.05) and ramp.steering(8.0) == 0.1
    assert _slalom(0.03, freq=0.5).steering(0.5) == pytest.approx(0.03)


def test_speed_reference_interpolates_knots():
    spec = ManeuverSpec("city_profile", 0.01, 0.1, 10.0, 20.0, ((0.0, 5.0), (10.0, 15.0), (20.0, 15.0)))
    assert spec.speed_reference(5.0) == pytest.approx((10.0, 1.0))
    assert spec.speed_reference(15.0) == (15.0, 0.0)
    assert spec.speed_reference(-1.0) == (5.0, 0.0)


def test_maneuver_spec_dict_round_trip():
    spec = ManeuverSpec("city_profile", 0.01, 0.1, 10.0, 20.0, ((0.0, 5.0), (20.0, 15.0)))
    assert ManeuverSpec.from_dict(spec.to_dict()) == spec


def test_noise_spec_rejects_negative_sigma():
    with pytest.raises(ValueError):
        SensorNoiseSpec(sigma_ay=-0.1)


# simulate ----------------------------------------------------------------------

def test_unexcited_step_steer_has_no_side_slip():
    sensor, ref = simulate(ManeuverSpec("step_steer", 0.0, 0.0, 12.0, 4.0), PARAMS, QUIET)
    assert np.all(ref.beta == 0.0)
    assert np.all(lateral_acceleration(ref) == 0.0)
    assert np.all(sensor.ay == 0.0)


def test_output_length_and_spacing():
    sensor, ref = simulate(_slalom(duration=3.0), PARAMS, SensorNoiseSpec(seed=3))
    assert len(sensor) == len(ref) == int(round(3.0 / SAMPLE_PERIOD)) + 1
    np.testing.assert_allclose(np.diff(sensor.t), SAMPLE_PERIOD, atol=1e-12)
    np.testing.assert_array_equal(sensor.t, ref.t)


def test_simulate_is_deterministic():
    noise = SensorNoiseSpec(seed=42)
    a = simulate(_slalom(), PARAMS, noise)
    b = simulate(_slalom(), PARAMS, noise)
    assert a[0] == b[0] and a[1] == b[1]
    c = simulate(_slalom(), PARAMS, SensorNoiseSpec(seed=43))
    assert not c[0] == a[0]
    assert c[1] == a[1]


def test_reference_beta_is_atan2_of_velocities():
    _, ref = simulate(_slalom(0.08, 20.0), PARAMS, QUIET)
    np.testing.assert_array_equal(ref.beta, np.arctan2(ref.vy, ref.vx))
    assert np.all(ref.theta == 0) and np.all(ref.phi == 0)
    assert np.abs(ref.beta).max() > 0.005


def test_noise_free_sensors_equal_true_quantities():
    sensor, ref = simulate(_slalom(0.05, 18.0), PARAMS, QUIET)
    np.testing.assert_array_equal(sensor.yaw_rate, ref.psi_rate)
    np.testing.assert_array_equal(sensor.delta, [_slalom(0.05, 18.0).steering(t) for t in ref.t])
    for k in (10, 100, 250):
        wheels = wheel_speeds_from_state(VehicleState(vx=ref.vx[k], vy=ref.vy[k], yaw_rate=ref.psi_rate[k]),
                                         sensor.delta[k], PARAMS)
        np.testing.assert_allclose([sensor.w_fl[k], sensor.w_fr[k], sensor.w_rl[k], sensor.w_rr[k]], wheels,
                                   rtol=1e-15)


def test_accelerations_are_body_frame_specific_forces():
    spec = _slalom(0.05, 18.0)
    sensor, ref = simulate(spec, PARAMS, QUIET)
    for k in (7, 120, 290):
        vx, vy, r = ref.vx[k], ref.vy[k], ref.psi_rate[k]
        v_ref, slope = spec.speed_reference(ref.t[k])
        fx = PARAMS.mass * (slope + 3.0 * (v_ref - vx))
        dvx, dvy, _ = velocity_derivative(vx, vy, r, sensor.delta[k], fx, PARAMS, TireModel.PACEJKA)
        assert sensor.ax[k] == pytest.approx(dvx - r * vy, abs=1e-12)
        assert sensor.ay[k] == pytest.approx(dvy + r * vx, abs=1e-12)


def test_noise_statistics():
    spec = ManeuverSpec("step_steer", 0.0, 0.0, 12.0, 60.0)
    noise = SensorNoiseSpec(sigma_ay=0.1, bias_ay=0.2, sigma_yaw_rate=0.0, bias_yaw_rate=0.01, seed=5)
    sensor, _ = simulate(spec, PARAMS, noise)
    assert np.mean(sensor.ay) == pytest.approx(0.2, abs=0.01)
    assert np.std(sensor.ay) == pytest.approx(0.1, rel=0.05)
    np.testing.assert_allclose(sensor.yaw_rate, 0.01, atol=1e-15)


def test_simulation_aborts_below_minimum_speed():
    with pytest.raises(LowSpeedError):
        simulate(ManeuverSpec("step_steer", 0.5, 0.0, 1.0, 5.0), PARAMS, QUIET)


def test_tuned_harsh_slalom_hits_target_band():
    spec = harsh_maneuvers(0, 1, 10.0, PARAMS)[0]
    assert spec.kind is ManeuverKind.SLALOM
    peak = max_lateral_acceleration(spec, PARAMS)
    assert 0.80 <= peak <= 0.90


# Wheel speeds ------------------------------------------------------------------

def test_straight_wheel_speeds():
    w = wheel_speeds_from_state(VehicleState(vx=10.0), 0.0, PARAMS)
    np.testing.assert_allclose(w, [31.645569620253166] * 4, rtol=1e-15)
    assert round(w[0], 4) == 31.6456


def test_left_turn_outer_wheels_faster():
    fl, fr, rl, rr = wheel_speeds_from_state(VehicleState(vx=10.0, vy=0.1, yaw_rate=0.3), 0.05, PARAMS)
    assert fr > fl and rr > rl


@given(st.floats(min_value=1.0, max_value=40.0), st.floats(min_value=-2.0, max_value=2.0),
       st.floats(min_value=-1.0, max_value=1.0))
def test_no_steer_no_yaw_front_equals_rear(vx, vy, _):
    fl, fr, rl, rr = wheel_speeds_from_state(VehicleState(vx=vx, vy=vy), 0.0, PARAMS)
    assert fl == rl and fr == rr


def test_wheel_speeds_low_speed_error():
    with pytest.raises(LowSpeedError):
        wheel_speeds_from_state(VehicleState(vx=0.3), 0.0, PARAMS)


# Histograms ---------------------------------------------------------------------

def _sensor_log(ax, ay):
    n = len(ax)
    z = np.zeros(n)
    return SensorLog(np.arange(n) * SAMPLE_PERIOD, np.asarray(ax, float), np.asarray(ay, float), z, z, z, z, z, z)


def test_friction_circle_single_centre_frame():
    counts, edges = friction_circle_histogram(_sensor_log([0.0], [0.0]), 11)
    assert counts.sum() == 1 and counts[5, 5] == 1
    assert edges[0] == pytest.approx(-1.1) and edges[-1] == pytest.approx(1.1)


def test_friction_circle_empty_is_zero_grid():
    counts, _ = friction_circle_histogram(_sensor_log([], []), 4)
    assert counts.shape == (4, 4) and counts.sum() == 0


def test_friction_circle_rejects_zero_bins():
    with pytest.raises(ValueError):
        friction_circle_histogram(_sensor_log([0.0], [0.0]), 0)


@settings(max_examples=50)
@given(st.lists(st.tuples(st.floats(-30, 30), st.floats(-30, 30)), max_size=60), st.integers(1, 40))
def test_friction_circle_conserves_count(samples, bins):
    ax = [s[0] for s in samples]
    ay = [s[1] for s in samples]
    counts, _ = friction_circle_histogram(_sensor_log(ax, ay), bins)
    assert counts.sum() == len(samples)


def test_straight_driving_mass_stays_near_origin():
    sensor, _ = simulate(ManeuverSpec("step_steer", 0.0, 0.0, 10.0, 20.0), PARAMS, SensorNoiseSpec(seed=1))
    counts, edges = friction_circle_histogram(sensor, 22)
    centres = 0.5 * (edges[1:] + edges[:-1])
    occupied = np.argwhere(counts > 0)
    assert np.all(np.abs(centres[occupied]) <= 0.1)
    assert np.abs(sensor.ay).max() / G < 5 * 0.05 / G + 1e-3


def _reference_log(beta):
    beta = np.asarray(beta, float)
    z = np.zeros(len(beta))
    return ReferenceLog(np.arange(len(beta)) * SAMPLE_PERIOD, z, z, z + 10, z, z, z, z, z, z, z, beta)


def test_sideslip_histogram_zero_log_single_bin():
    counts, edges = sideslip_histogram(_reference_log(np.zeros(17)), 0.01)
    assert counts.tolist() == [17]
    assert edges[0] <= 0.0 < edges[1]


@given(st.lists(st.floats(-0.4, 0.4), max_size=80), st.floats(0.001, 0.2))
def test_sideslip_histogram_conserves_count(beta, width):
    counts, edges = sideslip_histogram(_reference_log(beta), width)
    assert counts.sum() == len(beta)
    assert len(edges) == len(counts) + 1


def test_slalom_histogram_is_near_symmetric():
    _, ref = simulate(_slalom(0.05, 18.0, duration=20.0, freq=0.5), PARAMS, QUIET)
    counts, edges = sideslip_histogram(ref, 0.001)
    centres = 0.5 * (edges[1:] + edges[:-1])
    assert abs(skew(np.repeat(centres, counts))) < 0.2
    assert abs(skew(ref.beta)) < 0.2


# Log containers --------------------------------------------------------------------

def test_log_indexing_and_frames():
    sensor, _ = simulate(_slalom(duration=1.0), PARAMS, QUIET)
    frame = sensor[3]
    assert isinstance(frame, SensorFrame) and frame.t == pytest.approx(0.06)
    assert SensorLog.from_frames(list(sensor)) == sensor
    assert SensorLog.concat([sensor[:10], sensor[10:]]) == sensor


def test_log_rejects_ragged_columns():
    with pytest.raises(ValueError):
        SensorLog(*([np.zeros(3)] * 8 + [np.zeros(2)]))


# Suites --------------------------------------------------------------------------------

def test_normal_suite_stays_normal():
    specs = normal_maneuvers(1, 4, 20.0, PARAMS)
    trajs = simulate_suite(specs, PARAMS, 1)
    assert all(t.label is Regime.NORMAL for t in trajs)
    assert all(t.max_ay_g < 0.5 for t in trajs)


def test_benchmark_suite_composition():
    specs = build_suite("benchmark", 0, PARAMS, count=10, duration=5.0)
    kinds = [s.kind for s in specs]
    assert kinds[:8] == [ManeuverKind.CITY_PROFILE] * 8
    assert all(k is not ManeuverKind.CITY_PROFILE for k in kinds[8:])
    with pytest.raises(ValueError):
        build_suite("nope", 0, PARAMS)


def test_suite_noise_seeds_are_distinct():
    specs = [_slalom(duration=1.0)] * 2
    a, b = simulate_suite(specs, PARAMS, 9)
    assert a.reference == b.reference
    assert not a.sensor == b.sensor
    assert (a.name, b.name) == ("traj_000", "traj_001")


# Split -------------------------------------------------------------------------------------

def _labelled(n_normal, n_dynamic):
    sensor, ref = simulate(ManeuverSpec("step_steer", 0.0, 0.0, 10.0, 0.1), PARAMS, QUIET)
    out = []
    for i in range(n_normal + n_dynamic):
        label = Regime.NORMAL if i < n_normal else Regime.DYNAMIC
        out.append(Trajectory(f"t{i:02d}", sensor, ref, label=label, max_ay_g=0.0))
    return out


def test_split_exact_counts():
    trajs = _labelled(10, 10)
    train, test = split_dataset(trajs, 0.8, seed=3)
    count = lambda ts, lab: sum(t.label is lab for t in ts)
    assert (count(train, Regime.NORMAL), count(train, Regime.DYNAMIC)) == (8, 8)
    assert (count(test, Regime.NORMAL), count(test, Regime.DYNAMIC)) == (2, 2)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 12), st.integers(2, 12), st.floats(0.05, 0.95), st.integers(0, 2**32))
def test_split_is_stratified_partition(n_normal, n_dynamic, ratio, seed):
    trajs = _labelled(n_normal, n_dynamic)
    train, test = split_dataset(trajs, ratio, seed)
    names_train = {t.name for t in train}
    names_test = {t.name for t in test}
    assert not names_train & names_test
    assert names_train | names_test == {t.name for t in trajs}
    n_norm_train = sum(t.label is Regime.NORMAL for t in train)
    assert n_norm_train == math.floor(ratio * n_normal + 0.5)
    assert split_dataset(trajs, ratio, seed)[0] == train


def test_split_requires_two_per_label():
    with pytest.raises(StratificationError):
        split_dataset(_labelled(5, 1), 0.8, 0)
    with pytest.raises(ValueError):
        split_dataset(_labelled(5, 5), 1.0, 0)
