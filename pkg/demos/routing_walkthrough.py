"""
Routing, step by step
=====================

Build a small routed network, look at what the controller produces for one
image at a few scales, and confirm that a partially routed forward pass is
the same computation as the dense one with the skipped branches zeroed.

Run with ``python3 demos/routing_walkthrough.py``.
"""

import numpy as np

from tadt import SRNetwork, tiny_config
from tadt import tensor as T
from tadt.backbone import sliceable_projection
from tadt.tensor import Tensor

rng = np.random.default_rng(0)

# %%
# A tiny configuration: two groups of 16 channels, so the routing vector has
# 4 * 2 = 8 entries, one per attention branch per group.
cfg = tiny_config()
print("routing length:", cfg.backbone.routing_length)

with T.default_dtype(np.float64):
    net = SRNetwork(cfg, seed=1, with_router=True)
img = Tensor(rng.random((1, 3, 16, 16)), dtype=np.float64)

# %%
# The controller returns per-branch logits e, a scale-driven intensity beta,
# the modulated probabilities p, and the routing r.  At evaluation time r is
# p thresholded at one half.
for s in (1.5, 2.0, 3.0, 4.0):
    dec = net.router(img, s, "eval")
    print(f"s={s:3.1f}  beta={dec.beta.item():.3f}  p={np.round(dec.probs.data[0], 2)}  "
          f"r={dec.routes.data[0].astype(int)}")

# %%
# The sliced projection only touches the rows of W that belong to active
# branches.  Compare with the dense product where skipped branch outputs
# are zero blocks.
o = [rng.standard_normal((64, 4)) for _ in range(4)]
w = rng.standard_normal((16, 16))
r = np.array([1, 0, 1, 0])
sliced = sliceable_projection([Tensor(o[j], dtype=np.float64) if r[j] else None for j in range(4)],
                              Tensor(w, dtype=np.float64), r).data
dense = np.concatenate([o[j] * r[j] for j in range(4)], axis=1) @ w
print("sliced == dense:", np.array_equal(sliced, dense))

# %%
# The same holds for the whole backbone: the executed (sliced) pass matches
# the dense reference pass bit for bit.
r = rng.integers(0, 2, cfg.backbone.routing_length)
a = net.backbone(img, r).data
b = net.backbone(img, r, dense=True).data
print("routing", r, "-> backbone outputs identical:", np.array_equal(a, b))

# %%
# With every branch on, the routed backbone is exactly the Baseline.
print("all-on == ungated:", np.array_equal(net.backbone(img, np.ones(8, dtype=int)).data,
                                           net.backbone(img).data))
