"""Synthetic tactile images from the simulated fingertip.

The fingertip's compliant pad carries a 5x9 array of white marker pins
imaged by an internal camera.  Pressing a straight edge into the pad
drags the markers toward the contact line, piles them up against it,
and pushes them toward the camera so they magnify and grow.  This
script renders the undeformed membrane and a handful of contacts across
the pose space, then shows the two processed views the rest of the
stack consumes: the grayscale image for the deformation measure and the
thresholded image for the pose regressor.

Run:  python demos/01_tactile_images.py
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from softtouch.imaging import preprocess
from softtouch.sensor import EdgePose, SensorConfig, ShearPerturbation

OUT = Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

sensor = SensorConfig()

contacts = [
    ("rest", EdgePose(), None),
    ("light touch, z = 1 mm", EdgePose(x=0.5, z=1.0), None),
    ("deep touch, z = 3 mm", EdgePose(x=0.5, z=3.0), None),
    ("offset edge, x = -4 mm", EdgePose(x=-4.0, z=2.0), None),
    ("yawed edge, theta = 35 deg", EdgePose(z=2.0, theta=35.0), None),
    ("pitched edge, psi = 9 deg", EdgePose(z=2.0, psi=9.0), None),
    ("sheared approach", EdgePose(x=0.5, z=2.0),
     ShearPerturbation(dx=1.8, dy=-1.5)),
]

fig, axes = plt.subplots(3, len(contacts), figsize=(3.2 * len(contacts), 8))
for col, (title, pose, shear) in enumerate(contacts):
    raw = sensor.synthesize(pose) if shear is None else sensor.synthesize(pose, shear)
    gray = preprocess(raw, threshold=False)
    binary = preprocess(raw, threshold=True)
    for row, img in enumerate((raw, gray, binary)):
        axes[row, col].imshow(img.pixels, cmap="gray", vmin=0, vmax=1)
        axes[row, col].set_xticks([])
        axes[row, col].set_yticks([])
    axes[0, col].set_title(title, fontsize=9)
axes[0, 0].set_ylabel("raw 480x270")
axes[1, 0].set_ylabel("processed grayscale")
axes[2, 0].set_ylabel("processed thresholded")
fig.tight_layout()
fig.savefig(OUT / "tactile_images.png", dpi=120)
print(f"wrote {OUT / 'tactile_images.png'}")

field = sensor.synthesize(EdgePose(x=0.5, z=3.0))
print(f"raw frame: {field.width}x{field.height}, "
      f"intensities in [{field.pixels.min():.2f}, {field.pixels.max():.2f}]")
print("deeper contact moves markers further and grows their discs; the")
print("thresholded view keeps only the bright marker cores.")
