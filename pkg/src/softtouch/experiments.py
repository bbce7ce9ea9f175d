"""Experiment harness: configs, artifacts, runners and plots.

Wires the sensor, imaging, regression and control modules into the
standard experiment set:

* ``exp1``          deformation-controlled grasp closure on each object
* ``collect``       labelled contact dataset (stage 1 of the pose study)
* ``train``         pose regressor training (stage 2)
* ``eval``          held-out MAE report (stage 3)
* ``exp3a``         deformation-controlled closure, then an open-loop
                    motor ramp with pose estimates logged
* ``exp3b``         closure, then depth-estimate control stepping
                    through five set points

Every run resolves a single JSON config (sections per module; built-in
defaults, overridden by an optional config file, overridden by explicit
arguments), writes the resolved config and seed next to its outputs,
and emits CSV logs plus plot images.  Runs are deterministic from
(config, seed): repeated runs produce byte-identical CSVs.

Artifacts live under one output root: ``dataset/`` from collect,
``model.npz`` and ``training_log.csv`` from train, ``eval_report.json``
from eval, and a timestamped directory per experiment run.  The stages
of the pose study check for their upstream artifacts and fail naming
the missing file.
"""

from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from scipy import stats

from . import __version__, control, posenet
from .sensor import EdgePose, MembraneParams, SensorConfig

OUT_ROOT_ENV = "SOFTTOUCH_OUT"

EXPERIMENTS = ("exp1", "exp2_collect", "exp2_train", "exp2_eval", "exp3a", "exp3b")


@dataclass
class ExperimentSpec:
    """One experiment invocation: what to run, from what, into where."""

    experiment: str
    seed: int = 0
    config_path: str | None = None
    output_dir: str | None = None
    profile: str = "desk"

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(
                f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}"
            )


def default_config(profile: str = "desk") -> dict:
    """Built-in configuration, sections per module."""
    if profile not in ("desk", "paper"):
        raise ValueError(f"profile must be 'desk' or 'paper', got {profile!r}")
    network = (posenet.NetworkConfig.desk_profile() if profile == "desk"
               else posenet.NetworkConfig.paper_profile())
    plants = {}
    for name, p in control.OBJECT_PROFILES.items():
        pose = control.OBJECT_POSES[name]
        plants[name] = {
            "contact_onset_u": p.contact_onset_u,
            "depth_gain": p.depth_gain,
            "max_depth": p.max_depth,
            "pose": {"x": pose.x, "y": pose.y, "phi": pose.phi,
                     "psi": pose.psi, "theta": pose.theta},
        }
    return {
        "profile": profile,
        "sensor": {
            "pitch": 2.0,
            "pin_radius": 0.375,
            "resolution": [480, 270],
            "px_per_mm": 24.0,
            "noise_sigma": 2.0 / 255.0,
            "falloff_radius": 5.0,
            "max_depth": 3.0,
            "shear_coupling": 0.5,
            "pad_depth": 10.0,
        },
        "imaging": {"ssim_window": 7},
        "posenet": {
            "n_samples": 2500 if profile == "desk" else 10000,
            "network": network.to_dict(),
        },
        "control": {
            "gain": 100.0,
            "setpoint": 0.7,
            "feedback_sign": -1,
            "cycle_time": 0.15,
            "gate_threshold": 0.45,
            "u_max": 19000.0,
            "sensor_noise_sigma": 0.0,
        },
        "plant": plants,
        "exp1": {
            "objects": sorted(control.OBJECT_PROFILES),
            "duration": 36.0,
            "tolerance": 0.05,
            "cycle_budget": 200,
        },
        "exp3a": {
            "object": "prism_20",
            "ssim_duration": 20.0,
            "ramp_rate": 0.01,
            "ramp_duration": 40.0,
        },
        "exp3b": {
            "object": "prism_20",
            "ssim_duration": 20.0,
            "setpoints": [1.0, 1.5, 2.0, 2.5, 3.0],
            "dwell": 20.0,
            "depth_tolerance": 0.25,
        },
    }


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def resolve_config(config_path=None, profile: str = "desk", seed: int = 0) -> dict:
    """Defaults for the profile, overridden by the config file, plus seed."""
    config = default_config(profile)
    if config_path is not None:
        path = Path(config_path)
        if not path.exists():
            raise FileNotFoundError(f"missing config file: {path}")
        with open(path) as fh:
            config = _deep_merge(config, json.load(fh))
    config["seed"] = int(seed)
    config["posenet"]["network"]["seed"] = int(seed)
    return config


def sensor_from_config(config: dict) -> SensorConfig:
    s = config["sensor"]
    membrane = MembraneParams(
        falloff_radius=s["falloff_radius"], max_depth=s["max_depth"],
        shear_coupling=s["shear_coupling"], pad_depth=s["pad_depth"],
    )
    return SensorConfig(
        pitch=s["pitch"], pin_radius=s["pin_radius"],
        resolution=tuple(s["resolution"]), px_per_mm=s["px_per_mm"],
        noise_sigma=s["noise_sigma"], membrane=membrane,
    )


def controller_config(config: dict, **overrides) -> control.ControllerConfig:
    c = config["control"]
    values = dict(gain=c["gain"], setpoint=c["setpoint"],
                  feedback_sign=c["feedback_sign"], cycle_time=c["cycle_time"],
                  gate_threshold=c["gate_threshold"])
    values.update(overrides)
    return control.ControllerConfig(**values)


def plant_for_object(config: dict, object_id: str) -> control.TactilePlant:
    plants = config["plant"]
    if object_id not in plants:
        raise ValueError(f"unknown object {object_id!r}; config defines {sorted(plants)}")
    spec = plants[object_id]
    model = control.PlantModel(object_id, spec["contact_onset_u"],
                               spec["depth_gain"], spec["max_depth"])
    pose = EdgePose(z=0.0, **spec["pose"])
    sensor = sensor_from_config(config)
    noise_sigma = config["control"].get("sensor_noise_sigma", 0.0)
    noise_fn = None
    if noise_sigma > 0.0:
        seed = config["seed"]
        object_key = sum(ord(ch) for ch in object_id)
        noise_fn = lambda cycle: (seed, object_key, cycle)
        sensor = SensorConfig(**{**_sensor_kwargs(sensor), "noise_sigma": noise_sigma})
    return control.TactilePlant(model, pose, sensor, noise_seed_fn=noise_fn)


def _sensor_kwargs(sensor: SensorConfig) -> dict:
    return dict(pitch=sensor.pitch, pin_radius=sensor.pin_radius,
                resolution=sensor.resolution, px_per_mm=sensor.px_per_mm,
                noise_sigma=sensor.noise_sigma, membrane=sensor.membrane)


def output_root(out_dir=None) -> Path:
    root = Path(out_dir) if out_dir else Path(os.environ.get(OUT_ROOT_ENV, "runs"))
    root.mkdir(parents=True, exist_ok=True)
    return root


def make_run_dir(root: Path, name: str) -> Path:
    stamp = datetime.now().strftime("%Y%m%d_%H%M%S_%f")
    run_dir = root / f"{name}_{stamp}"
    run_dir.mkdir(parents=True)
    return run_dir


def write_manifest(run_dir: Path, config: dict, experiment: str) -> None:
    manifest = {
        "experiment": experiment,
        "seed": config["seed"],
        "package_version": __version__,
        "config": config,
    }
    with open(run_dir / "resolved_config.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def _plot_series(run_dir: Path, name: str, log: control.TrajectoryLog,
                 setpoint: float | None = None,
                 z_setpoints: list | None = None) -> None:
    t = log.t_array()
    pose = log.pose_array()
    fig, axes = plt.subplots(3, 1, figsize=(8, 9), sharex=True)
    axes[0].plot(t, log.u_array(), lw=1.2)
    axes[0].set_ylabel("motor command u (counts)")
    axes[1].plot(t, log.e_array(), lw=1.2, color="tab:orange")
    if setpoint is not None:
        axes[1].axhline(setpoint, color="gray", ls="--", lw=0.8)
    axes[1].set_ylabel("deformation 1 - SSIM")
    labels = ["x (mm)", "z (mm)", "phi (deg)", "psi (deg)", "theta (deg)"]
    for i, lab in enumerate(labels):
        axes[2].plot(t, pose[:, i], lw=1.0, label=lab)
    if z_setpoints:
        for r in z_setpoints:
            axes[2].axhline(r, color="gray", ls=":", lw=0.6)
    axes[2].set_ylabel("estimated edge pose")
    axes[2].set_xlabel("time (s)")
    axes[2].legend(loc="upper left", fontsize=8, ncol=3)
    fig.tight_layout()
    fig.savefig(run_dir / f"{name}.png", dpi=110)
    plt.close(fig)


def exp1(config: dict, out_dir=None) -> dict:
    """Deformation-controlled closure on every object profile.

    Writes one trajectory CSV and plot per object plus a summary with
    the settle cycle, final deformation and final motor command; flags
    the run as failed if any object misses the convergence criteria.
    """
    root = output_root(out_dir)
    run_dir = make_run_dir(root, "exp1")
    write_manifest(run_dir, config, "exp1")
    cfg = controller_config(config)
    e1 = config["exp1"]
    summary = {"objects": {}, "run_dir": str(run_dir)}
    all_ok = True
    for object_id in e1["objects"]:
        plant = plant_for_object(config, object_id)
        log = control.run_closed_loop(control.SSIMController(cfg), plant,
                                      e1["duration"], cfg,
                                      u_max=config["control"]["u_max"])
        log.to_csv(run_dir / f"{object_id}.csv")
        _plot_series(run_dir, object_id, log, setpoint=cfg.setpoint)
        verdict = control.convergence_summary(
            log, cfg, tolerance=e1["tolerance"], cycle_budget=e1["cycle_budget"])
        summary["objects"][object_id] = verdict
        all_ok = all_ok and verdict["converged"]
    summary["all_converged"] = all_ok
    with open(run_dir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    return summary


def dataset_dir(root: Path) -> Path:
    return root / "dataset"


def model_path(root: Path) -> Path:
    return root / "model.npz"


def collect_stage(config: dict, out_dir=None) -> Path:
    """Stage 1: synthesize the labelled contact dataset."""
    root = output_root(out_dir)
    target = dataset_dir(root)
    sensor = sensor_from_config(config)
    posenet.collect_dataset(config["posenet"]["n_samples"], target,
                            seed=config["seed"], sensor=sensor)
    write_manifest(target, config, "exp2_collect")
    return target


def train_stage(config: dict, out_dir=None) -> Path:
    """Stage 2: train the pose regressor on the collected dataset."""
    root = output_root(out_dir)
    source = dataset_dir(root)
    if not (source / "manifest.jsonl").exists():
        raise FileNotFoundError(
            f"missing dataset manifest {source / 'manifest.jsonl'}; run collect first"
        )
    network = posenet.NetworkConfig.from_dict(config["posenet"]["network"])
    model = posenet.train(source, network)
    target = model_path(root)
    posenet.save_model(model, target)
    with open(root / "training_log.csv", "w") as fh:
        fh.write("epoch,train_loss,val_loss\n")
        for row in model.history:
            fh.write(f"{row['epoch']},{row['train_loss']!r},{row['val_loss']!r}\n")
    fig, ax = plt.subplots(figsize=(6, 4))
    epochs = [row["epoch"] for row in model.history]
    ax.plot(epochs, [row["train_loss"] for row in model.history], label="train")
    ax.plot(epochs, [row["val_loss"] for row in model.history], label="validation")
    ax.set_xlabel("epoch")
    ax.set_ylabel("MSE (normalized targets)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(root / "training_curve.png", dpi=110)
    plt.close(fig)
    write_manifest(root, config, "exp2_train")
    return target


def eval_stage(config: dict, out_dir=None, oracle: bool = False) -> posenet.EvalReport:
    """Stage 3: held-out MAE report in physical units.

    ``oracle=True`` feeds the labels back as predictions, a sanity mode
    whose MAE is exactly zero.
    """
    root = output_root(out_dir)
    source = dataset_dir(root)
    mpath = model_path(root)
    if not (source / "manifest.jsonl").exists():
        raise FileNotFoundError(
            f"missing dataset manifest {source / 'manifest.jsonl'}; run collect first"
        )
    if not mpath.exists():
        raise FileNotFoundError(f"missing model file {mpath}; run train first")
    model = posenet.load_model(mpath)
    images, labels, _ = posenet.load_dataset(source)
    if images.shape[0] != model.dataset_size:
        raise ValueError("dataset size changed since training; refusing to evaluate")
    idx = model.test_indices
    test_images, test_labels = images[idx], labels[idx]
    if oracle:
        report = posenet.evaluate(None, test_images, test_labels,
                                  predictions=test_labels)
        predictions = test_labels
    else:
        predictions = model.predict(test_images)
        report = posenet.evaluate(None, test_images, test_labels,
                                  predictions=predictions)
    with open(root / "eval_report.json", "w") as fh:
        json.dump({"oracle": oracle, **report.to_dict()}, fh, indent=2, sort_keys=True)
    with open(root / "eval_table.txt", "w") as fh:
        fh.write(report.as_table() + "\n")
    fig, axes = plt.subplots(1, 5, figsize=(16, 3.2))
    for i, c in enumerate(posenet.POSE_COMPONENTS):
        axes[i].plot(test_labels[:, i], predictions[:, i], ".", ms=2, alpha=0.6)
        lo, hi = test_labels[:, i].min(), test_labels[:, i].max()
        axes[i].plot([lo, hi], [lo, hi], "k--", lw=0.8)
        axes[i].set_title(c)
        axes[i].set_xlabel("label")
    axes[0].set_ylabel("prediction")
    fig.tight_layout()
    fig.savefig(root / "eval_scatter.png", dpi=110)
    plt.close(fig)
    return report


def _require_model(root: Path) -> posenet.PoseModel:
    mpath = model_path(root)
    if not mpath.exists():
        raise FileNotFoundError(f"missing model file {mpath}; run train first")
    return posenet.load_model(mpath)


def exp3a(config: dict, out_dir=None) -> dict:
    """Closure under deformation control, then a slow open-loop ramp.

    The log records the deformation measure and the gated pose
    estimates; the summary reports the saturation statistics (Spearman
    rank correlation of per-step |de| against depth, and the linear fit
    of the depth estimate against true depth over the contact region).
    """
    root = output_root(out_dir)
    model = _require_model(root)
    run_dir = make_run_dir(root, "exp3a")
    write_manifest(run_dir, config, "exp3a")
    cfg = controller_config(config)
    e3 = config["exp3a"]
    plant = plant_for_object(config, e3["object"])
    u_max = config["control"]["u_max"]
    schedule = control.ScheduleController([
        (0.0, control.SSIMController(cfg)),
        (e3["ssim_duration"], control.RampController(e3["ramp_rate"], u_max=u_max)),
    ])
    duration = e3["ssim_duration"] + e3["ramp_duration"]
    log = control.run_closed_loop(schedule, plant, duration, cfg, model=model,
                                  u_max=u_max)
    log.to_csv(run_dir / "trajectory.csv")
    _plot_series(run_dir, "trajectory", log, setpoint=cfg.setpoint)

    summary = {"run_dir": str(run_dir), **saturation_stats(log, plant)}
    summary["gate_consistent"] = bool(all(
        (log.pose[i] is None) == (log.e_ssim[i] <= cfg.gate_threshold)
        for i in range(len(log))
    ))
    summary["passed"] = bool(
        summary["spearman_abs_de_vs_depth"] < 0.0
        and summary["z_hat_r_squared"] >= 0.9
        and summary["gate_consistent"]
    )
    with open(run_dir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    return summary


def saturation_stats(log: control.TrajectoryLog, plant: control.TactilePlant) -> dict:
    """Saturation contrast of the two feedback signals along a ramp.

    Over the contact region (true depth > 0), the per-step change of the
    deformation measure shrinks with depth while the depth estimate
    stays approximately affine in true depth.
    """
    u = log.u_array()
    depth = np.array([plant.depth(v) for v in u])
    e = log.e_array()
    z_hat = log.z_hat_array()

    de = np.abs(np.diff(e))
    mid_depth = depth[1:]
    contact_steps = mid_depth > 0
    rho = float(stats.spearmanr(mid_depth[contact_steps], de[contact_steps]).statistic)

    valid = (depth > 0) & np.isfinite(z_hat)
    if valid.sum() >= 3:
        slope, intercept = np.polyfit(depth[valid], z_hat[valid], 1)
        fitted = slope * depth[valid] + intercept
        resid = z_hat[valid] - fitted
        total = z_hat[valid] - z_hat[valid].mean()
        r2 = float(1.0 - (resid @ resid) / (total @ total))
    else:
        slope, r2 = float("nan"), float("nan")
    return {
        "spearman_abs_de_vs_depth": rho,
        "z_hat_r_squared": r2,
        "z_hat_fit_slope": float(slope),
        "n_contact_steps": int(contact_steps.sum()),
    }


def exp3b(config: dict, out_dir=None) -> dict:
    """Closure under deformation control, then depth-estimate control
    stepping through the configured set points.

    The summary reports, per set point, the steady-state depth estimate
    (mean over the final quarter of the dwell) and the plateau motor
    mean; the run passes when every plateau lands within the configured
    tolerance and the motor means increase strictly with the set point.
    """
    root = output_root(out_dir)
    model = _require_model(root)
    run_dir = make_run_dir(root, "exp3b")
    write_manifest(run_dir, config, "exp3b")
    cfg = controller_config(config)
    e3 = config["exp3b"]
    plant = plant_for_object(config, e3["object"])
    u_max = config["control"]["u_max"]
    setpoints = list(e3["setpoints"])
    dwell = e3["dwell"]
    phases = [(0.0, control.SSIMController(cfg))]
    for i, r_z in enumerate(setpoints):
        phases.append((e3["ssim_duration"] + i * dwell,
                       control.PoseController(cfg, setpoint_z=r_z)))
    duration = e3["ssim_duration"] + dwell * len(setpoints)
    log = control.run_closed_loop(control.ScheduleController(phases), plant,
                                  duration, cfg, model=model, u_max=u_max)
    log.to_csv(run_dir / "trajectory.csv")
    _plot_series(run_dir, "trajectory", log, setpoint=cfg.setpoint,
                 z_setpoints=setpoints)

    t = log.t_array()
    z_hat = log.z_hat_array()
    u = log.u_array()
    plateaus = []
    for i, r_z in enumerate(setpoints):
        start = e3["ssim_duration"] + i * dwell
        end = start + dwell
        tail = (t >= start + 0.75 * dwell) & (t < end)
        tail_z = z_hat[tail]
        z_mean = float(np.nanmean(tail_z)) if np.isfinite(tail_z).any() else float("nan")
        plateaus.append({
            "setpoint_z": r_z,
            "z_hat_mean": z_mean,
            "z_true_mean": float(np.mean([plant.depth(v) for v in u[tail]])),
            "u_mean": float(u[tail].mean()),
            "abs_error": abs(z_mean - r_z),
        })
    u_means = [p["u_mean"] for p in plateaus]
    passed = (all(p["abs_error"] < e3["depth_tolerance"] for p in plateaus)
              and all(b > a for a, b in zip(u_means, u_means[1:])))
    summary = {
        "run_dir": str(run_dir),
        "plateaus": plateaus,
        "u_means_strictly_increasing": bool(all(b > a for a, b in zip(u_means, u_means[1:]))),
        "passed": bool(passed),
    }
    with open(run_dir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    return summary


def run_experiment(spec: ExperimentSpec):
    """Dispatch one experiment from its spec; returns its summary/report."""
    config = resolve_config(spec.config_path, profile=spec.profile, seed=spec.seed)
    if spec.experiment == "exp1":
        return exp1(config, spec.output_dir)
    if spec.experiment == "exp2_collect":
        return collect_stage(config, spec.output_dir)
    if spec.experiment == "exp2_train":
        return train_stage(config, spec.output_dir)
    if spec.experiment == "exp2_eval":
        return eval_stage(config, spec.output_dir)
    if spec.experiment == "exp3a":
        return exp3a(config, spec.output_dir)
    if spec.experiment == "exp3b":
        return exp3b(config, spec.output_dir)
    raise ValueError(f"unknown experiment {spec.experiment!r}")
