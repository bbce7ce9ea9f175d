"""Grasp closure controlled by the estimated contact depth.

After an initial light closure under deformation control, the loop
switches to the pose regressor's depth estimate and steps it through a
schedule of set points.  The deformation measure saturates at depth,
but the depth estimate stays linear, so the motor equilibrates at a
distinct command for every set point.

Pose estimates are trusted only while the contact is firm enough
(1 - SSIM above the reliability gate); lighter contacts log an absent
estimate.

This demo trains a quick reduced regressor first (a few minutes); with
an existing full model from the CLI pipeline, point --model at it:

    python demos/05_pose_controlled_grasp.py [--model runs/study/model.npz]
"""

import argparse
import time
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from softtouch.control import (
    ControllerConfig,
    PoseController,
    ScheduleController,
    SSIMController,
    TactilePlant,
    run_closed_loop,
)
from softtouch.imaging import preprocess
from softtouch.posenet import NetworkConfig, load_model, train, _rng
from softtouch.sensor import SensorConfig, sample_pose, sample_shear

OUT = Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)


def quick_model():
    sensor = SensorConfig()
    n = 700
    print(f"training a reduced regressor on {n} fresh contacts...")
    images = np.empty((n, 135, 240), dtype=np.float32)
    labels = np.empty((n, 5))
    for i in range(n):
        rng = _rng(55, i, 0)
        pose = sample_pose(rng)
        raw = sensor.synthesize(pose, sample_shear(rng), noise_seed=(55, i, 1))
        images[i] = preprocess(raw, threshold=True).pixels
        labels[i] = pose.labels()
    t0 = time.time()
    model = train((images, labels), NetworkConfig(epochs=12, lr_decay_at=10, seed=0))
    print(f"  trained in {time.time() - t0:.0f}s")
    return model


parser = argparse.ArgumentParser()
parser.add_argument("--model", default=None, help="path to a trained model.npz")
args = parser.parse_args()
model = load_model(args.model) if args.model else quick_model()

cfg = ControllerConfig()
plant = TactilePlant.for_object("prism_20")
setpoints = [1.0, 1.5, 2.0, 2.5, 3.0]
phases = [(0.0, SSIMController(cfg))]
for i, r_z in enumerate(setpoints):
    phases.append((20.0 + i * 20.0, PoseController(cfg, setpoint_z=r_z)))
log = run_closed_loop(ScheduleController(phases), plant, duration=120.0,
                      cfg=cfg, model=model)

t = log.t_array()
z_hat = log.z_hat_array()
z_true = np.array([plant.depth(u) for u in log.u_array()])
fig, axes = plt.subplots(3, 1, figsize=(8, 8), sharex=True)
axes[0].plot(t, log.u_array())
axes[0].set_ylabel("motor command u")
axes[1].plot(t, log.e_array(), color="tab:orange")
axes[1].axhline(cfg.gate_threshold, color="gray", ls=":", lw=0.8)
axes[1].set_ylabel("deformation 1 - SSIM")
axes[2].plot(t, z_hat, label="estimated depth")
axes[2].plot(t, z_true, ls="--", label="true depth")
for r_z in setpoints:
    axes[2].axhline(r_z, color="gray", ls=":", lw=0.5)
axes[2].set_ylabel("depth (mm)")
axes[2].set_xlabel("time (s)")
axes[2].legend(fontsize=8)
fig.tight_layout()
fig.savefig(OUT / "pose_controlled_grasp.png", dpi=120)
print(f"wrote {OUT / 'pose_controlled_grasp.png'}")

for i, r_z in enumerate(setpoints):
    window = (t >= 20.0 + i * 20.0 + 15.0) & (t < 20.0 + (i + 1) * 20.0)
    print(f"set point {r_z:.1f} mm: steady estimate "
          f"{np.nanmean(z_hat[window]):.2f} mm at u = {log.u_array()[window].mean():6.0f}")
