"""
Two-stage training on procedural images
=======================================

Train the Baseline (every branch on, L1 loss), fine-tune the routed model
on top of it, then compare both against bicubic upsampling on held-out
images.  The defaults are short so the script finishes in a couple of
minutes; pass larger step counts for the full toy run, e.g.

    python3 demos/toy_training.py 1000 500
"""

import sys
import time

import numpy as np

from tadt import toy_config
from tadt.training.data import toy_dataset
from tadt.training.evaluate import evaluate
from tadt.training.train import train

base_steps = int(sys.argv[1]) if len(sys.argv) > 1 else 150
tadt_steps = int(sys.argv[2]) if len(sys.argv) > 2 else 75

cfg = toy_config()
cfg.train.steps, cfg.train.tadt_steps = base_steps, tadt_steps
images = toy_dataset(cfg.train.toy_images, cfg.train.toy_min_size, cfg.train.toy_max_size)
held_out = toy_dataset(8, cfg.train.toy_min_size, cfg.train.toy_max_size, seed=777)
print(f"{len(images)} training images, {len(held_out)} held out")

# %%
# Stage one: the Baseline.
t0 = time.time()
base = train("baseline", cfg, images=images)
print(f"baseline: {base.step} steps in {time.time() - t0:.0f}s, "
      f"last-50 L1 {np.mean([h['l1'] for h in base.history[-50:]]):.4f}")

# %%
# Stage two: the router is added and trained jointly with the network.
# During training routes are sampled; the number of active branches is
# logged per step.
t0 = time.time()
routed = train("tadt", cfg, images=images, baseline=base.model)
active = [h["active_branches"] for h in routed.history]
print(f"routed: {routed.step} steps in {time.time() - t0:.0f}s, "
      f"mean sampled branches {np.mean(active):.2f} of {cfg.backbone.routing_length}")

# %%
# Held-out PSNR at x2 and x4.  Thresholded routing at evaluation time.
ev = evaluate(base.model, held_out, 2.0, "baseline")
print(f"x2 bicubic  {ev['bicubic_psnr']:.2f} dB")
print(f"x2 baseline {ev['psnr']:.2f} dB")
for s in (2.0, 4.0):
    ev = evaluate(routed.model, held_out, s, "threshold")
    print(f"x{s:g} routed   {ev['psnr']:.2f} dB  (bicubic {ev['bicubic_psnr']:.2f})  "
          f"beta {ev['mean_beta']:.3f}  branches {ev['mean_active_branches']:.2f}  "
          f"FLOPs {ev['mean_dynamic_flops'] / ev['mean_static_flops']:.3f} of static")
