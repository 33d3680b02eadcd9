"""Synthetic scenes: occlusions, distractors, and the augmentation rule.

Generates a few scenes as PPM files you can open directly. Occlusion
rectangles hide pixels but never move the ground truth, which is exactly
the "no visual clue" regime the global-feature formulation targets.
Augmentation rotates/shifts image and labels together, then extends each
lane to the image boundary to preserve lane structure.
"""

import os

import numpy as np

from lanegrid import AugmentParams, SceneParams, augment, generate_scene
from lanegrid.cli import draw_lanes
from lanegrid.ppm import write_ppm

OUT = os.path.join(os.path.dirname(__file__), "out")
os.makedirs(OUT, exist_ok=True)

anchors = tuple(range(24, 64, 5))
params = SceneParams(seed=7, occlusion_count=(2, 4), distractor_count=(1, 3))

for index in range(3):
    image, lanes = generate_scene(params, index, row_anchors=anchors)
    rgb = np.repeat(image[:, :, None], 3, axis=2)
    draw_lanes(rgb, lanes)
    path = os.path.join(OUT, f"scene_{index}.ppm")
    write_ppm(path, rgb)
    present = sum(lane is not None for lane in lanes.lanes)
    print(f"{path}: {present} labeled lanes (occluders and distractors unlabeled)")

aug = AugmentParams(rotation_degrees=(-12.0, 12.0), shift_x=(-20.0, 20.0),
                    shift_y=(-8.0, 8.0), seed=1)
image, lanes = generate_scene(params, 0, row_anchors=anchors)
warped, moved = augment(image, lanes, aug, index=0)
rgb = np.repeat(warped[:, :, None], 3, axis=2)
draw_lanes(rgb, moved)
path = os.path.join(OUT, "scene_0_augmented.ppm")
write_ppm(path, rgb)
for i, lane in enumerate(moved.lanes):
    if lane is None:
        continue
    x, y = lane.points[-1]
    print(f"augmented lane {i}: lowest point ({x:.1f}, {y:.1f}) sits on the frame edge")
print(f"{path}: rotated+shifted scene with lanes extended to the boundary")
