"""Train the toy model end to end and score it with both benchmark metrics.

Small by design (a few hundred scenes, a CPU, a couple of minutes) so the
whole pipeline is observable: generate -> train with the combined loss ->
decode by expectation -> point accuracy + rasterized-IoU F1.

For the larger pinned experiment that also compares against the
regression head and the structural-loss ablation, run the acceptance
suite instead: pytest tests/test_acceptance.py -s
"""

import time

import numpy as np

from lanegrid import LossConfig, Model, ModelConfig, RowAnchorGrid, SceneParams, generate_scene
from lanegrid.metrics import metric_report
from lanegrid.model import OptimizerConfig
from lanegrid.train import TrainSettings, fit, predict_lanes, total_step_count

grid = RowAnchorGrid(64, 160, tuple(range(24, 64, 5)), 20, 2)
params = SceneParams(seed=0)

n_train, n_eval, epochs, batch = 200, 50, 12, 8
scenes = [generate_scene(params, i, row_anchors=grid.row_anchors) for i in range(n_train + n_eval)]
train_scenes, eval_scenes = scenes[:n_train], scenes[n_train:]

model = Model(ModelConfig(64, 160, grid, seed=2))
print(f"model: {model.num_parameters:,} parameters")

settings = TrainSettings(
    epochs=epochs,
    batch_size=batch,
    optimizer=OptimizerConfig(
        kind="sgd", learning_rate=0.05, cosine_decay=True,
        total_steps=total_step_count(n_train, batch, epochs),
    ),
    loss=LossConfig(),  # alpha = beta = lambda = 1
    shuffle_seed=3,
)

start = time.time()
history = fit(model, train_scenes, settings,
              log=lambda r: print(f"epoch {r['epoch']:2d}  cls {r['cls']:7.3f}  "
                                  f"sim {r['sim']:7.3f}  shp {r['shp']:6.3f}  seg {r['seg']:5.3f}"))
print(f"trained in {time.time() - start:.0f}s")

preds = [predict_lanes(model, img, decode="expectation") for img, _ in eval_scenes]
gts = [lanes for _, lanes in eval_scenes]
report = metric_report(preds, gts, grid, pixel_threshold=20.0, width_px=30.0)
total = report["total"]
print(f"\nheld-out point accuracy: {total['accuracy']:.4f}")
print(f"held-out F1 (30 px masks, IoU > 0.5): {total['f1']:.4f} "
      f"(P {total['precision']:.4f} / R {total['recall']:.4f})")
print("worst scene:", report["worst_scenes"][0])
