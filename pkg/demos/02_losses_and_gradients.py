"""The training objectives, their closed forms, and exact gradients.

Shows the classification loss against its uniform-logit closed form,
the continuity (similarity) and shape (second-difference) structural
terms, and a finite-difference check of the analytic gradients.
"""

import math

import numpy as np

from lanegrid import GridTarget, LossConfig, cls_loss, shp_loss, sim_loss, total_loss
from lanegrid.autodiff import Tape, Tensor, grad_check
from lanegrid.losses import expected_locations

C, h, w = 2, 5, 8
rng = np.random.default_rng(0)

# uniform logits: cross entropy has the closed form C*h*ln(w+1)
target = GridTarget(rng.integers(1, w + 2, size=(C, h)), w)
uniform = np.zeros((C, h, w + 1))
print(f"cls_loss(uniform) = {cls_loss(uniform, target).item():.6f}")
print(f"C*h*ln(w+1)       = {C * h * math.log(w + 1):.6f}")

# identical rows: zero similarity loss; straight lanes: zero shape loss
rows_equal = np.tile(rng.normal(size=(C, 1, w + 1)), (1, h, 1))
print(f"\nsim_loss(identical rows) = {sim_loss(rows_equal).item()}")

straight = np.zeros((1, 4, w + 1))
for j, cell in enumerate((2, 4, 6, 8)):  # equally spaced: straight line
    straight[0, j, cell - 1] = 40.0
print(f"shp_loss(straight lane)  = {shp_loss(straight).item():.2e}")
print(f"expected locations       = {np.round(expected_locations(straight).data, 3)}")

# gradients flow through softmax, expectation, and the L1 terms
p = Tensor(rng.normal(size=(C, h, w + 1)), requires_grad=True)
cfg = LossConfig()  # alpha = beta = lambda = 1, the paper defaults
with Tape() as tape:
    loss = total_loss(p, target, cfg)
grad = tape.backward(loss)[p]
print(f"\ntotal_loss = {loss.item():.4f}; gradient shape {grad.shape}")

err = grad_check(lambda z: total_loss(z, target, cfg), p, epsilon=1e-4)
print(f"max relative error vs central finite differences: {err:.2e}")
