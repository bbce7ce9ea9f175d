"""Single-motor grasp plant and tactile feedback controllers.

The hand is abstracted to one degree of actuation: a motor command
``u`` in counts, clamped to [0, 19000].  Actuation uses set-point
increments: each control cycle requests one increment of the encoder
set point and waits for it to be reached before the next cycle may act.
Requesting a second increment before the previous one settles is a
contract violation and raises.

A held object is a :class:`PlantModel` mapping the motor command to
contact depth on the fingertip: zero below the contact onset, then
linear in ``u`` up to a maximum depth.  Each built-in object profile
couples that law with a fixed edge pose presented to the fingertip, so
stepping the plant synthesizes the tactile image the camera would see.

Two proportional controllers close the loop on that image:

* the deformation controller drives ``1 - SSIM`` against the reference
  image toward a set point ``r``:   du = sign * gain * (e - r)
* the depth controller drives the regressor's depth estimate toward a
  set point ``r_z`` in mm:          du = sign * gain * (z - r_z)

With the convention that increasing ``u`` closes the hand and deepens
contact, stable regulation needs ``feedback_sign = -1``, the default;
``+1`` is kept available for the sign convention as written above.
Pose estimates are only trusted when the contact is firm enough,
``1 - SSIM > gate_threshold``; lighter contacts log an absent estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .imaging import TactileImage, deformation, preprocess
from .posenet import PoseModel
from .sensor import EdgePose, SensorConfig

U_MAX_DEFAULT = 19000.0


class ControlContractError(RuntimeError):
    """Raised when the increment-then-settle actuation contract is broken."""


@dataclass
class ActuatorState:
    """Motor command with set-point-increment semantics."""

    u: float = 0.0
    u_max: float = U_MAX_DEFAULT
    pending_setpoint: float = 0.0
    settled: bool = True

    def __post_init__(self):
        self.u = float(np.clip(self.u, 0.0, self.u_max))
        self.pending_setpoint = self.u

    def request_increment(self, du: float) -> None:
        """Move the set point by ``du`` counts, clamped to [0, u_max]."""
        if not self.settled:
            raise ControlContractError(
                "increment requested before the previous set point was reached"
            )
        self.pending_setpoint = float(np.clip(self.u + du, 0.0, self.u_max))
        self.settled = False

    def reach_setpoint(self) -> float:
        """Drive the motor to the pending set point; returns the new u."""
        self.u = self.pending_setpoint
        self.settled = True
        return self.u


@dataclass(frozen=True)
class PlantModel:
    """Contact depth law of one held object.

    depth(u) = clamp(depth_gain * (u - contact_onset_u), 0, max_depth)
    """

    object_id: str
    contact_onset_u: float
    depth_gain: float
    max_depth: float = 3.0

    def __post_init__(self):
        if self.depth_gain <= 0:
            raise ValueError("depth_gain must be positive")
        if self.max_depth <= 0:
            raise ValueError("max_depth must be positive")

    def depth(self, u: float) -> float:
        return float(np.clip(self.depth_gain * (u - self.contact_onset_u),
                             0.0, self.max_depth))


# Square prisms of three widths plus an irregular soft object.  Wider
# objects meet the closing hand earlier (smaller onset); the soft object
# deepens contact more slowly per count.
OBJECT_PROFILES = {
    "prism_20": PlantModel("prism_20", contact_onset_u=2000.0, depth_gain=0.0015),
    "prism_30": PlantModel("prism_30", contact_onset_u=1400.0, depth_gain=0.0015),
    "prism_40": PlantModel("prism_40", contact_onset_u=800.0, depth_gain=0.0015),
    "soft_irregular": PlantModel("soft_irregular", contact_onset_u=1600.0,
                                 depth_gain=0.0008),
}

# Edge pose each object presents to the fingertip (z comes from the plant).
OBJECT_POSES = {
    "prism_20": EdgePose(x=0.5),
    "prism_30": EdgePose(x=1.0, theta=10.0),
    "prism_40": EdgePose(x=-1.5, theta=-20.0),
    "soft_irregular": EdgePose(x=0.5, theta=5.0, phi=1.0, psi=2.0),
}


def get_object_profile(object_id: str) -> tuple[PlantModel, EdgePose]:
    if object_id not in OBJECT_PROFILES:
        raise ValueError(
            f"unknown object {object_id!r}; choose from {sorted(OBJECT_PROFILES)}"
        )
    return OBJECT_PROFILES[object_id], OBJECT_POSES[object_id]


@dataclass(frozen=True)
class ControllerConfig:
    """Gains, set points and loop timing shared by both controllers."""

    gain: float = 100.0
    setpoint: float = 0.7          # deformation set point r
    setpoint_z: float = 2.0        # depth set point r_z, mm
    feedback_sign: int = -1
    cycle_time: float = 0.15       # s per control cycle
    gate_threshold: float = 0.45   # pose estimates need 1 - SSIM above this

    def __post_init__(self):
        # gain 0 is tolerated so a dead loop can be run and flagged as
        # non-convergent rather than rejected up front
        if self.gain < 0:
            raise ValueError("gain must be non-negative")
        if not 0.0 < self.setpoint < 2.0:
            raise ValueError("deformation set point must lie in (0, 2)")
        if not 0.0 <= self.setpoint_z <= 3.0:
            raise ValueError("depth set point must lie in [0, 3] mm")
        if self.feedback_sign not in (-1, 1):
            raise ValueError("feedback_sign must be -1 or +1")
        if self.cycle_time <= 0:
            raise ValueError("cycle_time must be positive")


def ssim_controller_step(e, cfg: ControllerConfig) -> float:
    """Proportional increment from the deformation error e - r."""
    value = getattr(e, "value", e)
    if not 0.0 <= value <= 2.0:
        raise ValueError(f"deformation value {value} outside [0, 2]")
    return cfg.feedback_sign * cfg.gain * (value - cfg.setpoint)


def pose_controller_step(z: float, cfg: ControllerConfig) -> float:
    """Proportional increment from the estimated depth error z - r_z."""
    if not math.isfinite(z):
        raise ValueError(f"depth estimate must be finite, got {z}")
    return cfg.feedback_sign * cfg.gain * (z - cfg.setpoint_z)


class SSIMController:
    """Regulates the contact deformation measure at ``cfg.setpoint``."""

    def __init__(self, cfg: ControllerConfig):
        self.cfg = cfg

    def step(self, t: float, e: float, pose_estimate) -> float:
        return ssim_controller_step(e, self.cfg)


class PoseController:
    """Regulates the estimated contact depth at ``r_z``.

    Holds position when the reliability gate withholds the estimate.
    """

    def __init__(self, cfg: ControllerConfig, setpoint_z: float | None = None):
        self.cfg = cfg if setpoint_z is None else replace(cfg, setpoint_z=setpoint_z)

    def step(self, t: float, e: float, pose_estimate) -> float:
        if pose_estimate is None:
            return 0.0
        return pose_controller_step(float(pose_estimate[1]), self.cfg)


class RampController:
    """Open-loop ramp: a fixed increment of rate * u_max per second."""

    def __init__(self, rate: float, u_max: float = U_MAX_DEFAULT):
        if rate <= 0:
            raise ValueError("ramp rate must be positive")
        self.rate = rate
        self.u_max = u_max
        self._du = None

    def bind_cycle(self, cycle_time: float) -> "RampController":
        self._du = self.rate * self.u_max * cycle_time
        return self

    def step(self, t: float, e: float, pose_estimate) -> float:
        if self._du is None:
            raise ValueError("ramp controller was not bound to a cycle time")
        return self._du


class ScheduleController:
    """Delegates to a sequence of (start_time, controller) phases."""

    def __init__(self, phases):
        self.phases = sorted(phases, key=lambda p: p[0])
        if not self.phases or self.phases[0][0] > 0.0:
            raise ValueError("the schedule must start at t = 0")

    def step(self, t: float, e: float, pose_estimate) -> float:
        active = self.phases[0][1]
        for start, controller in self.phases:
            if t >= start:
                active = controller
            else:
                break
        return active.step(t, e, pose_estimate)


def ramp_command(u_start: float, rate: float, t: float,
                 u_max: float = U_MAX_DEFAULT) -> float:
    """Open-loop ramp law u(t) = u_start + rate * u_max * t, clamped."""
    return float(np.clip(u_start + rate * u_max * t, 0.0, u_max))


@dataclass
class TrajectoryLog:
    """Per-cycle record of a control run.

    Pose columns hold NaN where the reliability gate withheld the
    estimate; ``gated`` is True on those rows.  CSV serialization writes
    absent estimates as empty fields, deterministically.
    """

    t: list = field(default_factory=list)
    u: list = field(default_factory=list)
    e_ssim: list = field(default_factory=list)
    pose: list = field(default_factory=list)     # (5,) arrays or None
    gated: list = field(default_factory=list)

    COLUMNS = ("t", "u", "e_ssim", "z_hat", "x_hat", "phi_hat", "psi_hat",
               "theta_hat", "gated")

    def append(self, t: float, u: float, e: float, pose, gated: bool) -> None:
        self.t.append(float(t))
        self.u.append(float(u))
        self.e_ssim.append(float(e))
        self.pose.append(None if pose is None else np.asarray(pose, dtype=np.float64))
        self.gated.append(bool(gated))

    def __len__(self) -> int:
        return len(self.t)

    def extend(self, other: "TrajectoryLog") -> None:
        self.t.extend(other.t)
        self.u.extend(other.u)
        self.e_ssim.extend(other.e_ssim)
        self.pose.extend(other.pose)
        self.gated.extend(other.gated)

    def u_array(self) -> np.ndarray:
        return np.asarray(self.u)

    def e_array(self) -> np.ndarray:
        return np.asarray(self.e_ssim)

    def t_array(self) -> np.ndarray:
        return np.asarray(self.t)

    def pose_array(self) -> np.ndarray:
        """(n, 5) with NaN rows where the estimate was absent."""
        out = np.full((len(self.t), 5), np.nan)
        for i, p in enumerate(self.pose):
            if p is not None:
                out[i] = p
        return out

    def z_hat_array(self) -> np.ndarray:
        return self.pose_array()[:, 1]

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(",".join(self.COLUMNS) + "\n")
            for i in range(len(self.t)):
                p = self.pose[i]
                if p is None:
                    pose_cols = [""] * 5
                else:
                    # CSV order: z, x, phi, psi, theta after the scalars.
                    pose_cols = [repr(float(p[1])), repr(float(p[0])),
                                 repr(float(p[2])), repr(float(p[3])),
                                 repr(float(p[4]))]
                row = [repr(float(self.t[i])), repr(float(self.u[i])),
                       repr(float(self.e_ssim[i]))] + pose_cols + [
                       "true" if self.gated[i] else "false"]
                fh.write(",".join(row) + "\n")

    @classmethod
    def from_csv(cls, path) -> "TrajectoryLog":
        log = cls()
        with open(path) as fh:
            header = fh.readline().strip().split(",")
            if tuple(header) != cls.COLUMNS:
                raise ValueError(f"unexpected trajectory columns: {header}")
            for line in fh:
                parts = line.rstrip("\n").split(",")
                t, u, e = float(parts[0]), float(parts[1]), float(parts[2])
                gated = parts[8] == "true"
                if parts[3] == "":
                    pose = None
                else:
                    z, x, phi, psi, theta = (float(v) for v in parts[3:8])
                    pose = np.array([x, z, phi, psi, theta])
                log.append(t, u, e, pose, gated)
        return log


class TactilePlant:
    """Couples an object profile with the simulated fingertip.

    Holds the reference image of the undeformed membrane and renders the
    tactile consequences of a motor command.  Control runs default to
    noise-free synthesis; pass a noise_seed factory to add per-cycle
    sensor noise.
    """

    def __init__(self, plant: PlantModel, pose: EdgePose,
                 sensor: SensorConfig = SensorConfig(), noise_seed_fn=None):
        self.plant = plant
        self.pose = pose
        self.sensor = sensor
        self.noise_seed_fn = noise_seed_fn
        self.reference = preprocess(sensor.reference(), threshold=False)

    @classmethod
    def for_object(cls, object_id: str, sensor: SensorConfig = SensorConfig(),
                   noise_seed_fn=None) -> "TactilePlant":
        plant, pose = get_object_profile(object_id)
        return cls(plant, pose, sensor, noise_seed_fn)

    def depth(self, u: float) -> float:
        return self.plant.depth(u)

    def sense_raw(self, u: float, cycle: int = 0) -> tuple[float, TactileImage]:
        depth = self.plant.depth(u)
        seed = self.noise_seed_fn(cycle) if self.noise_seed_fn else None
        raw = self.sensor.synthesize(replace(self.pose, z=depth), noise_seed=seed)
        return depth, raw


def plant_step(state: ActuatorState, plant: TactilePlant,
               object_pose_params: EdgePose | None = None,
               cycle: int = 0) -> tuple[float, TactileImage]:
    """Settle the pending set point and sense the resulting contact.

    Returns the contact depth and the processed grayscale image used by
    the deformation measure.  ``object_pose_params`` overrides the
    plant's built-in edge pose.
    """
    if object_pose_params is not None:
        plant = TactilePlant(plant.plant, object_pose_params, plant.sensor,
                             plant.noise_seed_fn)
    state.reach_setpoint()
    depth, raw = plant.sense_raw(state.u, cycle)
    return depth, preprocess(raw, threshold=False)


def run_closed_loop(controller, plant: TactilePlant, duration: float,
                    cfg: ControllerConfig, model: PoseModel | None = None,
                    u0: float = 0.0, u_max: float = U_MAX_DEFAULT) -> TrajectoryLog:
    """Run a fixed-cycle feedback loop against the simulated plant.

    Each cycle: settle the actuator, acquire the tactile image, compute
    the deformation measure (and the pose estimate when a model is
    given and the gate passes), ask the controller for an increment and
    request it.  Logs one row per cycle, floor(duration / cycle_time)
    rows in total; the logged u is the command under which that cycle's
    image was taken.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    if isinstance(controller, RampController):
        controller.bind_cycle(cfg.cycle_time)
    if isinstance(controller, ScheduleController):
        for _, sub in controller.phases:
            if isinstance(sub, RampController):
                sub.bind_cycle(cfg.cycle_time)
    n_cycles = int(math.floor(duration / cfg.cycle_time))
    state = ActuatorState(u=u0, u_max=u_max)
    log = TrajectoryLog()
    for k in range(n_cycles):
        t = k * cfg.cycle_time
        state.reach_setpoint()
        depth, raw = plant.sense_raw(state.u, cycle=k)
        gray = preprocess(raw, threshold=False)
        e = deformation(gray, plant.reference).value
        estimate = None
        if model is not None and e > cfg.gate_threshold:
            estimate = model.predict(preprocess(raw, threshold=True))
        log.append(t, state.u, e, estimate, gated=estimate is None)
        du = controller.step(t, e, estimate)
        state.request_increment(du)
    return log


def ramp_motor(rate: float, duration: float, plant: TactilePlant,
               cfg: ControllerConfig = ControllerConfig(),
               model: PoseModel | None = None, u_start: float = 0.0,
               u_max: float = U_MAX_DEFAULT) -> TrajectoryLog:
    """Open-loop motor ramp at ``rate`` (fraction of u_max per second).

    Logs the deformation measure and gated pose estimates along
    u(t) = u_start + rate * u_max * t, clamped.
    """
    controller = RampController(rate, u_max=u_max)
    return run_closed_loop(controller, plant, duration, cfg, model=model,
                           u0=u_start, u_max=u_max)


def convergence_summary(log: TrajectoryLog, cfg: ControllerConfig,
                        tolerance: float = 0.05, cycle_budget: int = 200,
                        final_window: int = 10, du_tolerance: float = 1.0) -> dict:
    """Judge set-point regulation on a deformation-control log.

    Convergence means the deformation error stays inside ``tolerance``
    from some cycle within ``cycle_budget`` to the end of the run, and
    the motor increments over the last ``final_window`` cycles stay
    below ``du_tolerance`` counts.
    """
    e = log.e_array()
    u = log.u_array()
    inside = np.abs(e - cfg.setpoint) < tolerance
    settle_cycle = None
    for k in range(len(inside)):
        if inside[k:].all():
            settle_cycle = k
            break
    final_du = float(np.abs(np.diff(u[-(final_window + 1):])).max()) if len(u) > final_window else float("inf")
    converged = (settle_cycle is not None and settle_cycle <= cycle_budget
                 and final_du < du_tolerance)
    return {
        "converged": bool(converged),
        "settle_cycle": settle_cycle,
        "final_e": float(e[-1]),
        "final_u": float(u[-1]),
        "max_final_du": final_du,
    }
