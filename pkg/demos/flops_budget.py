"""
Where the FLOPs go
==================

Count the cost of one forward pass analytically, check the count against an
instrumented run, and see how much turning attention branches off saves.

Convention: one multiply-accumulate is two FLOPs; softmax, normalisation and
activations cost one FLOP per output value.
"""

import numpy as np

from tadt import count_flops, full_config, measure_flops, tiny_config, toy_config

# %%
# The analytic count and the instrumented measurement agree exactly on the
# matmul/conv part.
cfg = tiny_config()
r = np.array([1, 0, 1, 1, 0, 0, 1, 0])
counted = count_flops(cfg, r, 12, 12, 2.0, include_router=True).matmul_conv_flops()
measured = measure_flops(cfg, r, 12, 12, 2.0, include_router=True)
print(f"counted {counted:,}  measured {measured:,}")

# %%
# Breakdown for the toy model on a 48x48 input, all branches on.
rep = count_flops(toy_config(), np.ones(8), 48, 48, 2.0)
print(rep.pretty())

# %%
# Dynamic cost as branches are switched off.  Attention is only part of
# each block (the MLP and convolutions always run), so the saving per
# branch depends on the window size.
toy = toy_config()
n = toy.backbone.routing_length
for k in range(n + 1):
    routes = np.array([1] * k + [0] * (n - k))
    rep = count_flops(toy, routes, 48, 48, 2.0)
    print(f"{k} active branches: {rep.dynamic_for_r / rep.static_all_on:6.3f} of static")

# %%
# Full-size configuration on a 1020x768 input at x2.  Published GFLOPs
# figures use an unstated convention, so expect a different absolute value.
big = count_flops(full_config(), np.ones(32), 1020, 768, 2.0)
print(f"full configuration: {big.static_all_on / 1e9:,.0f} GFLOPs")
