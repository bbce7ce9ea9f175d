"""Adaptive grasp closure from the deformation measure alone.

The single-motor hand closes on a held object by incrementing its
encoder set point each cycle with a proportional controller on the
contact deformation error, du = -gain * (e - r).  The hand stops by
itself where the membrane deformation reaches the set point, whatever
the object's size or stiffness: the four built-in object profiles come
to rest at four different motor commands but the same contact.

Run:  python demos/04_grasp_closure.py
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from softtouch.control import (
    ControllerConfig,
    OBJECT_PROFILES,
    SSIMController,
    TactilePlant,
    convergence_summary,
    run_closed_loop,
)

OUT = Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

cfg = ControllerConfig()
fig, axes = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
for object_id in sorted(OBJECT_PROFILES):
    plant = TactilePlant.for_object(object_id)
    log = run_closed_loop(SSIMController(cfg), plant, duration=36.0, cfg=cfg)
    summary = convergence_summary(log, cfg)
    print(f"{object_id:15s} settled at cycle {summary['settle_cycle']:3d}, "
          f"u = {summary['final_u']:6.0f} counts, "
          f"deformation = {summary['final_e']:.3f}")
    axes[0].plot(log.t_array(), log.u_array(), label=object_id)
    axes[1].plot(log.t_array(), log.e_array(), label=object_id)

axes[1].axhline(cfg.setpoint, color="gray", ls="--", lw=0.8)
axes[0].set_ylabel("motor command u (counts)")
axes[1].set_ylabel("deformation 1 - SSIM")
axes[1].set_xlabel("time (s)")
axes[0].legend(fontsize=8)
fig.tight_layout()
fig.savefig(OUT / "grasp_closure.png", dpi=120)
print(f"wrote {OUT / 'grasp_closure.png'}")
