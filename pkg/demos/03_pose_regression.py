"""Training the edge-pose regressor on synthetic contacts.

Each labelled sample is a thresholded tactile image of an edge pressed
at a random pose (horizontal offset, depth, roll, pitch, yaw), with an
unlabelled shear perturbation standing in for the membrane's memory of
the approach motion.  A small convolutional network regresses the five
labelled components, trained from scratch with minibatch gradient
descent.

This demo runs a reduced version (600 samples, 8 epochs, a couple of
minutes on one core) and prints the error table.  The full desk-profile
study is the CLI pipeline:

    softtouch collect --out runs/study
    softtouch train   --out runs/study
    softtouch eval    --out runs/study

Run:  python demos/03_pose_regression.py
"""

import time
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from softtouch.imaging import preprocess
from softtouch.posenet import NetworkConfig, evaluate, train, _rng
from softtouch.sensor import SensorConfig, sample_pose, sample_shear

OUT = Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

sensor = SensorConfig()
n = 600
print(f"synthesizing {n} labelled contacts...")
images = np.empty((n, 135, 240), dtype=np.float32)
labels = np.empty((n, 5))
t0 = time.time()
for i in range(n):
    rng = _rng(99, i, 0)
    pose = sample_pose(rng)
    shear = sample_shear(rng)
    raw = sensor.synthesize(pose, shear, noise_seed=(99, i, 1))
    images[i] = preprocess(raw, threshold=True).pixels
    labels[i] = pose.labels()
print(f"  done in {time.time() - t0:.0f}s")

config = NetworkConfig(epochs=8, learning_rate=0.02, lr_decay_at=6, seed=0)
print("training (8 epochs, desk architecture)...")
t0 = time.time()
model = train((images, labels), config)
print(f"  done in {time.time() - t0:.0f}s")

idx = model.test_indices
report = evaluate(model, images[idx], labels[idx])
print()
print(report.as_table())
print()
print("a full run (2500 samples, 40 epochs) roughly halves these errors")

fig, ax = plt.subplots(figsize=(6, 4))
epochs = [h["epoch"] for h in model.history]
ax.plot(epochs, [h["train_loss"] for h in model.history], label="train")
ax.plot(epochs, [h["val_loss"] for h in model.history], label="validation")
ax.set_xlabel("epoch")
ax.set_ylabel("MSE (normalized targets)")
ax.legend()
fig.tight_layout()
fig.savefig(OUT / "training_curve.png", dpi=120)
print(f"wrote {OUT / 'training_curve.png'}")
