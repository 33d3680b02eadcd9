"""Row-anchor lane detection at desk scale.

Lane detection as per-row cell classification with global features:
grid encoding/decoding, the classification + structural + auxiliary
segmentation objectives with exact gradients, a toy trainable model,
a deterministic synthetic scene generator, and the two benchmark
metrics (point accuracy and rasterized-IoU F1).
"""

from .errors import DataError
from .grid import (
    GridTarget,
    LanePolyline,
    LaneSet,
    LocationMatrix,
    RowAnchorGrid,
    cell_of_x,
    culane_grid,
    decode_argmax,
    decode_expectation,
    encode_targets,
    formulation_cost,
    locations_to_lanes,
    segmentation_cost,
    tusimple_grid,
    x_of_cell,
)
from .losses import (
    LossConfig,
    cls_loss,
    expected_locations,
    seg_loss,
    shp_loss,
    sim_loss,
    structural_loss,
    total_loss,
)
from .metrics import (
    MatchResult,
    culane_f1,
    metric_report,
    rasterize_lane,
    topk_cell_accuracy,
    tusimple_accuracy,
)
from .model import (
    Checkpoint,
    Model,
    ModelConfig,
    Optimizer,
    OptimizerConfig,
    load_checkpoint,
    model_from_checkpoint,
    save_checkpoint,
    train_step,
)
from .synth import (
    AugmentParams,
    SceneParams,
    augment,
    generate_scene,
    ingest_tusimple,
    read_dataset,
    render_seg_target,
    write_dataset,
)

__version__ = "0.1.0"
