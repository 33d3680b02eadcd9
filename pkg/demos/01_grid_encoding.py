"""Row-anchor grid walkthrough: encoding lanes to cells and back.

A lane is a polyline in pixel space. The grid quantizes it: at each of h
predefined image rows, the lane's x lands in one of w cells (or the extra
"no lane" class). Decoding inverts the map through cell centers, so the
round-trip error is bounded by half a cell width.
"""

import numpy as np

from lanegrid import (
    LanePolyline,
    LaneSet,
    RowAnchorGrid,
    cell_of_x,
    decode_argmax,
    decode_expectation,
    encode_targets,
    locations_to_lanes,
    x_of_cell,
)

grid = RowAnchorGrid(
    image_height=64,
    image_width=160,
    row_anchors=tuple(range(24, 64, 5)),
    num_cells=20,
    num_lanes=2,
)
print(f"grid: {grid.num_anchors} anchors x {grid.num_cells} cells, "
      f"background class = {grid.background_class}")
print(f"cell width: {grid.image_width / grid.num_cells:.1f} px")
print(f"x=83.0 -> cell {cell_of_x(83.0, grid)}; cell 11 center -> x={x_of_cell(11, grid)}")

# a gently curving lane and a straight one
ys = np.linspace(20, 63, 30)
curved = LanePolyline(np.column_stack([40 + 0.012 * (ys - 63) ** 2, ys]))
straight = LanePolyline(np.column_stack([np.full_like(ys, 110.0), ys]))
lanes = LaneSet((curved, straight))

target = encode_targets(lanes, grid)
print("\nencoded classes (row = lane, col = anchor):")
print(target.classes)

# fake a perfectly confident prediction and decode it both ways
logits = np.where(target.onehot() > 0, 40.0, 0.0)
hard = decode_argmax(logits, grid)
soft = decode_expectation(logits, grid)
print("\nargmax locations:     ", np.round(hard.locations[0], 2))
print("expectation locations:", np.round(soft.locations[0], 2))

recovered = locations_to_lanes(hard, grid)
xs, mask = recovered.lanes[0].x_at(np.asarray(grid.row_anchors))
orig, _ = curved.x_at(np.asarray(grid.row_anchors))
err = np.abs(xs[mask] - orig[mask])
print(f"\nround-trip |x error|: max {err.max():.2f} px "
      f"(bound: half cell = {grid.image_width / grid.num_cells / 2:.1f} px)")
