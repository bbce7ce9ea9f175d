import numpy as np
import pytest

from softtouch.control import (
    ActuatorState,
    ControlContractError,
    ControllerConfig,
    OBJECT_PROFILES,
    PlantModel,
    PoseController,
    RampController,
    ScheduleController,
    SSIMController,
    TactilePlant,
    TrajectoryLog,
    convergence_summary,
    get_object_profile,
    plant_step,
    pose_controller_step,
    ramp_command,
    ramp_motor,
    run_closed_loop,
    ssim_controller_step,
)
from softtouch.imaging import PROCESSED_STAGE
from softtouch.sensor import EdgePose


class TestActuatorState:
    def test_increment_clamps_to_range(self):
        state = ActuatorState(u=100.0)
        state.request_increment(-500.0)
        state.reach_setpoint()
        assert state.u == 0.0
        state.request_increment(1e9)
        state.reach_setpoint()
        assert state.u == 19000.0

    def test_increment_before_settle_raises(self):
        state = ActuatorState()
        state.request_increment(10.0)
        with pytest.raises(ControlContractError):
            state.request_increment(10.0)
        state.reach_setpoint()
        state.request_increment(10.0)  # fine again after settling


class TestPlantModel:
    def test_depth_law_matches_closed_form(self):
        # direct formula oracle over a sweep of motor commands
        plant = OBJECT_PROFILES["prism_20"]
        for u in np.linspace(0.0, 19000.0, 100):
            expected = min(max(plant.depth_gain * (u - plant.contact_onset_u), 0.0),
                           plant.max_depth)
            assert plant.depth(u) == pytest.approx(expected)

    def test_onset_boundary(self, sensor, rest_processed):
        plant = TactilePlant.for_object("prism_20", sensor)
        state = ActuatorState(u=plant.plant.contact_onset_u)
        depth, image = plant_step(state, plant)
        assert depth == 0.0
        assert image.stage == PROCESSED_STAGE
        np.testing.assert_array_equal(image.pixels, rest_processed.pixels)
        assert state.settled

    def test_full_command_clamps_at_max_depth(self):
        plant, _ = get_object_profile("prism_30")
        assert plant.depth(19000.0) == plant.max_depth

    def test_unknown_object_rejected(self):
        with pytest.raises(ValueError):
            get_object_profile("banana")

    def test_profiles_have_distinct_onsets(self):
        onsets = [p.contact_onset_u for p in OBJECT_PROFILES.values()]
        assert len(set(onsets)) == len(onsets)

    def test_soft_object_deepens_slowest(self):
        gains = {name: p.depth_gain for name, p in OBJECT_PROFILES.items()}
        assert gains["soft_irregular"] == min(gains.values())

    def test_validation(self):
        with pytest.raises(ValueError):
            PlantModel("x", 0.0, depth_gain=0.0)


class TestControllerSteps:
    def test_ssim_at_setpoint(self):
        cfg = ControllerConfig(gain=100.0, setpoint=0.7)
        assert ssim_controller_step(0.7, cfg) == 0.0

    def test_ssim_literal_sign_convention(self):
        cfg = ControllerConfig(gain=100.0, setpoint=0.7, feedback_sign=1)
        assert ssim_controller_step(0.2, cfg) == pytest.approx(-50.0)

    def test_ssim_stable_sign_convention(self):
        cfg = ControllerConfig(gain=100.0, setpoint=0.7, feedback_sign=-1)
        assert ssim_controller_step(0.2, cfg) == pytest.approx(50.0)

    def test_ssim_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            ssim_controller_step(2.5, ControllerConfig())

    def test_pose_at_setpoint(self):
        cfg = ControllerConfig(setpoint_z=1.5)
        assert pose_controller_step(1.5, cfg) == 0.0

    def test_pose_arithmetic(self):
        cfg = ControllerConfig(gain=100.0, setpoint_z=3.0, feedback_sign=-1)
        assert pose_controller_step(1.0, cfg) == pytest.approx(200.0)

    def test_pose_controller_holds_when_gated(self):
        controller = PoseController(ControllerConfig(setpoint_z=2.0))
        assert controller.step(0.0, 0.1, None) == 0.0

    def test_config_validation(self):
        with pytest.raises(ValueError):
            ControllerConfig(gain=-1.0)
        with pytest.raises(ValueError):
            ControllerConfig(setpoint=2.5)
        with pytest.raises(ValueError):
            ControllerConfig(setpoint_z=5.0)
        with pytest.raises(ValueError):
            ControllerConfig(feedback_sign=0)


class TestClosedLoop:
    def test_zero_gain_holds_position(self, sensor):
        plant = TactilePlant.for_object("prism_40", sensor)
        cfg = ControllerConfig()

        class Hold:
            def step(self, t, e, pose):
                return 0.0

        log = run_closed_loop(Hold(), plant, duration=3.0, cfg=cfg, u0=500.0)
        assert np.all(log.u_array() == 500.0)

    def test_row_count_is_floor_duration_over_cycle(self, sensor):
        plant = TactilePlant.for_object("prism_40", sensor)
        cfg = ControllerConfig(cycle_time=0.15)
        log = run_closed_loop(SSIMController(cfg), plant, duration=2.0, cfg=cfg)
        assert len(log) == int(2.0 / 0.15)

    def test_converges_to_setpoint(self, sensor):
        cfg = ControllerConfig()
        plant = TactilePlant.for_object("prism_40", sensor)
        log = run_closed_loop(SSIMController(cfg), plant, duration=36.0, cfg=cfg)
        summary = convergence_summary(log, cfg)
        assert summary["converged"]
        assert abs(summary["final_e"] - 0.7) < 0.05

    def test_u_stays_in_actuator_range(self, sensor):
        cfg = ControllerConfig(gain=5000.0)
        plant = TactilePlant.for_object("prism_20", sensor)
        log = run_closed_loop(SSIMController(cfg), plant, duration=10.0, cfg=cfg)
        u = log.u_array()
        assert u.min() >= 0.0 and u.max() <= 19000.0

    def test_rejects_nonpositive_duration(self, sensor):
        plant = TactilePlant.for_object("prism_20", sensor)
        cfg = ControllerConfig()
        with pytest.raises(ValueError):
            run_closed_loop(SSIMController(cfg), plant, duration=0.0, cfg=cfg)


class TestRamp:
    def test_ramp_law_endpoint(self):
        # 1 percent per second for 10 s from rest reaches 1900 counts
        assert ramp_command(0.0, 0.01, 10.0) == pytest.approx(1900.0)
        assert ramp_command(18000.0, 0.01, 10.0) == 19000.0

    def test_log_follows_ramp_law(self, sensor):
        plant = TactilePlant.for_object("prism_40", sensor)
        cfg = ControllerConfig(cycle_time=0.1)
        log = ramp_motor(0.01, 5.0, plant, cfg=cfg)
        for t, u in zip(log.t_array(), log.u_array()):
            assert u == pytest.approx(ramp_command(0.0, 0.01, t), abs=1e-6)

    def test_u_strictly_increasing_until_clamp(self, sensor):
        plant = TactilePlant.for_object("prism_40", sensor)
        cfg = ControllerConfig()
        log = ramp_motor(0.2, 8.0, plant, cfg=cfg)
        u = log.u_array()
        du = np.diff(u)
        clamp_idx = np.argmax(u >= 19000.0)
        assert np.all(du[:clamp_idx] > 0)
        assert np.all(u <= 19000.0)

    def test_deformation_monotone_once_in_contact(self, sensor):
        plant = TactilePlant.for_object("prism_40", sensor)
        cfg = ControllerConfig()
        log = ramp_motor(0.02, 15.0, plant, cfg=cfg)
        depth = np.array([plant.depth(u) for u in log.u_array()])
        e = log.e_array()
        in_contact = depth > 0
        assert np.all(np.diff(e[in_contact]) >= -1e-9)

    def test_rejects_nonpositive_rate(self, sensor):
        with pytest.raises(ValueError):
            RampController(0.0)


class TestScheduleController:
    def test_phase_handoff(self):
        class Const:
            def __init__(self, v):
                self.v = v

            def step(self, t, e, pose):
                return self.v

        sched = ScheduleController([(0.0, Const(1.0)), (5.0, Const(2.0))])
        assert sched.step(0.0, 0.0, None) == 1.0
        assert sched.step(4.9, 0.0, None) == 1.0
        assert sched.step(5.0, 0.0, None) == 2.0

    def test_must_start_at_zero(self):
        with pytest.raises(ValueError):
            ScheduleController([(1.0, SSIMController(ControllerConfig()))])


class TestTrajectoryLog:
    def test_csv_round_trip(self, tmp_path):
        log = TrajectoryLog()
        log.append(0.0, 0.0, 0.1, None, gated=True)
        log.append(0.15, 12.5, 0.55, np.array([1.0, 2.0, -1.0, 3.0, 10.0]), gated=False)
        path = tmp_path / "log.csv"
        log.to_csv(path)
        back = TrajectoryLog.from_csv(path)
        assert back.t == log.t
        assert back.u == log.u
        assert back.e_ssim == log.e_ssim
        assert back.gated == log.gated
        assert back.pose[0] is None
        np.testing.assert_array_equal(back.pose[1], log.pose[1])

    def test_csv_header(self, tmp_path):
        log = TrajectoryLog()
        log.append(0.0, 0.0, 0.0, None, True)
        path = tmp_path / "log.csv"
        log.to_csv(path)
        header = path.read_text().splitlines()[0]
        assert header == "t,u,e_ssim,z_hat,x_hat,phi_hat,psi_hat,theta_hat,gated"

    def test_pose_array_nan_where_absent(self):
        log = TrajectoryLog()
        log.append(0.0, 0.0, 0.1, None, True)
        log.append(0.1, 1.0, 0.6, np.ones(5), False)
        pose = log.pose_array()
        assert np.isnan(pose[0]).all()
        assert np.all(pose[1] == 1.0)


def test_plant_step_respects_pose_override(sensor):
    plant = TactilePlant.for_object("prism_20", sensor)
    state = ActuatorState(u=5000.0)
    depth_a, img_a = plant_step(state, plant)
    state_b = ActuatorState(u=5000.0)
    depth_b, img_b = plant_step(state_b, plant,
                                object_pose_params=EdgePose(x=-3.0, theta=30.0))
    assert depth_a == depth_b
    assert not np.array_equal(img_a.pixels, img_b.pixels)
