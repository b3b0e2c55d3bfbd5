"""Reward rate as a function of the threshold for one- and two-stage models.

Shows where the optimum sits and when a drift change between stages creates
a second local maximum.  Run with ``python3 demos/reward_landscape.py``.
"""
import numpy as np

from msddm import ModelSpec, RewardConfig, StageTheta, optimize_threshold, reward_curve, two_stage_spec

cfg = RewardConfig(t_nd=0.3, z_min=0.01, z_max=0.15, resolution=300)

cases = {
    "single stage, a=0.5": ModelSpec(0.0, (StageTheta(0.5, 0.1, 1.0),)),
    "fast then slow (0.5 -> 0.1 at t=0.15)": two_stage_spec(0.5, 0.1, 0.1, 0.15),
    "slow then fast (0.1 -> 0.5 at t=0.15)": two_stage_spec(0.1, 0.5, 0.1, 0.15),
}

for name, spec in cases.items():
    opt = optimize_threshold(spec, cfg)
    peaks = ", ".join(f"z={z:.4f} (RR={r:.4f})" for z, r in opt.local_maxima) or "none"
    print(f"{name}\n  local maxima: {peaks}\n  best: z*={opt.z_star:.4f}\n")

# a coarse text sketch of the bimodal curve
zs, rr = reward_curve(cases["slow then fast (0.1 -> 0.5 at t=0.15)"], cfg)
lo, hi = np.nanmin(rr), np.nanmax(rr)
for z, r in zip(zs[::15], rr[::15]):
    bar = "#" * int(50 * (r - lo) / (hi - lo))
    print(f"z={z:.3f} {bar}")
