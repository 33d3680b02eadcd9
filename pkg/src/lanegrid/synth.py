"""Deterministic synthetic lane scenes, augmentation, and annotation I/O.

Scenes are grayscale: quadratic lanes drawn bright on a dark noisy
background, with optional occlusion rectangles that overwrite pixels but
never the geometric labels — occluded anchors keep their ground truth, so
a model can only solve them from surrounding context. Every output is a
pure function of (params, index); distinct indices use independent RNG
streams, so generation order and thread count never matter.

Annotations use the TuSimple record convention: one JSON object per line
with `h_samples` (rows), `lanes` (per-lane x lists aligned to h_samples,
-2 where the lane is absent), and `raw_file` (relative image path).
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DataError
from .grid import LanePolyline, LaneSet
from .parallel import ordered_map
from .ppm import read_pixmap, write_pgm

ANNOTATION_FILE = "annotations.jsonl"
ABSENT_X = -2


@dataclass(frozen=True)
class SceneParams:
    """Knobs for the generator; (seed, index) fully determine a scene."""

    image_height: int = 64
    image_width: int = 160
    num_lanes: int = 2
    curvature: tuple[float, float] = (-0.002, 0.002)  # quadratic coeff, px/px^2
    slope: tuple[float, float] = (-0.35, 0.35)  # px/px at the bottom row
    brightness: tuple[float, float] = (0.65, 1.0)
    lane_width: tuple[float, float] = (2.0, 4.0)  # half-width of drawn band, px
    distractor_count: tuple[int, int] = (0, 2)  # unlabeled lane-like clutter
    occlusion_count: tuple[int, int] = (0, 3)
    occlusion_size: tuple[int, int] = (8, 28)  # rectangle side length, px
    noise_sigma: float = 0.05
    seed: int = 0

    def __post_init__(self):
        for name in ("curvature", "slope", "brightness", "lane_width",
                     "distractor_count", "occlusion_count", "occlusion_size"):
            lo, hi = getattr(self, name)
            if hi < lo:
                raise ValueError(f"{name} range ({lo}, {hi}) is not well-ordered")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.num_lanes < 1:
            raise ValueError("need at least one lane")


@dataclass(frozen=True)
class AugmentParams:
    """Rotation about the image center followed by a shift; seeded."""

    rotation_degrees: tuple[float, float] = (-6.0, 6.0)
    shift_x: tuple[float, float] = (-16.0, 16.0)
    shift_y: tuple[float, float] = (-6.4, 6.4)
    seed: int = 0

    def __post_init__(self):
        for name in ("rotation_degrees", "shift_x", "shift_y"):
            lo, hi = getattr(self, name)
            if hi < lo:
                raise ValueError(f"{name} range ({lo}, {hi}) is not well-ordered")
        lo, hi = self.rotation_degrees
        if lo <= -30.0 or hi >= 30.0:
            raise ValueError("rotation range must stay inside (-30, 30) degrees")


def _rng(seed: int, index: int) -> np.random.Generator:
    # independent stream per index: SeedSequence over (seed, index)
    return np.random.default_rng([int(seed), int(index)])


def generate_scene(params: SceneParams, index: int, row_anchors=None):
    """Render one scene; returns (image (H, W) float in [0,1], LaneSet).

    Lanes are x(y) = a*(y-H)^2 + b*(y-H) + c clipped to the frame. When
    row_anchors is given, a lane whose in-bounds part crosses fewer than 2
    anchors is dropped from the LaneSet; otherwise the floor is 2 points.
    Distractors are lane-like strokes that never enter the labels, drawn
    before the true lanes so real lanes stay on top; a model has to use
    scene structure, not local brightness, to reject them. Occlusions
    overwrite pixels only, never the polylines.
    """
    rng = _rng(params.seed, index)
    hgt, wid = params.image_height, params.image_width

    image = np.clip(
        0.08 + rng.normal(0.0, params.noise_sigma, size=(hgt, wid)), 0.0, 1.0
    )

    n_distract = int(rng.integers(params.distractor_count[0], params.distractor_count[1] + 1))
    for _ in range(n_distract):
        base = rng.uniform(0.05 * wid, 0.95 * wid)
        a = rng.uniform(*params.curvature)
        b = rng.uniform(*params.slope)
        y_lo = rng.uniform(0.1 * hgt, 0.6 * hgt)
        y_hi = rng.uniform(y_lo + 0.25 * hgt, hgt)
        bright = rng.uniform(*params.brightness)
        half_width = rng.uniform(*params.lane_width)
        ys = np.arange(math.ceil(y_lo), min(int(y_hi) + 1, hgt), dtype=np.float64)
        xs = a * (ys - hgt) ** 2 + b * (ys - hgt) + base
        keep = (xs >= 0.0) & (xs < wid)
        ys, xs = ys[keep], xs[keep]
        if ys.size == 0:
            continue
        rows = ys.astype(int)
        band = np.abs(np.arange(wid)[None, :] - xs[:, None]) <= half_width
        strip = image[rows]
        strip[band] = bright
        image[rows] = strip

    n = params.num_lanes
    spacing = wid / (n + 1)
    kept = []
    for lane_idx in range(n):
        base = spacing * (lane_idx + 1) + rng.uniform(-0.3, 0.3) * spacing
        a = rng.uniform(*params.curvature)
        b = rng.uniform(*params.slope)
        y_top = rng.uniform(0.15 * hgt, 0.45 * hgt)
        bright = rng.uniform(*params.brightness)
        half_width = rng.uniform(*params.lane_width)

        ys = np.arange(math.ceil(y_top), hgt, dtype=np.float64)
        xs = a * (ys - hgt) ** 2 + b * (ys - hgt) + base

        # keep the contiguous in-bounds run that reaches the bottom
        inb = (xs >= 0.0) & (xs < wid)
        cut = np.nonzero(~inb)[0]
        start = cut[-1] + 1 if cut.size else 0
        ys, xs = ys[start:], xs[start:]

        if row_anchors is not None and ys.size:
            anchors = np.asarray(row_anchors, dtype=np.float64)
            crossings = int(np.sum((anchors >= ys[0]) & (anchors <= ys[-1])))
            if crossings < 2:
                continue
        if ys.size < 2:
            continue

        rows = ys.astype(int)
        band = np.abs(np.arange(wid)[None, :] - xs[:, None]) <= half_width
        strip = image[rows]
        strip[band] = bright
        image[rows] = strip
        kept.append(LanePolyline(np.column_stack([xs, ys])))

    count = int(rng.integers(params.occlusion_count[0], params.occlusion_count[1] + 1))
    for _ in range(count):
        ow = int(rng.integers(params.occlusion_size[0], params.occlusion_size[1] + 1))
        oh = int(rng.integers(params.occlusion_size[0], params.occlusion_size[1] + 1))
        oy = int(rng.integers(0, max(hgt - oh, 1)))
        ox = int(rng.integers(0, max(wid - ow, 1)))
        image[oy : oy + oh, ox : ox + ow] = rng.uniform(0.2, 0.5)

    return image, LaneSet.from_unordered(kept, params.num_lanes)


def render_seg_target(lanes: LaneSet, height: int, width: int, half_width: float = 3.0) -> np.ndarray:
    """Per-pixel class map from lane geometry: 0 background, slot index 1..C.

    A pixel belongs to lane i when its column is within half_width of the
    lane's center at that row; later slots overwrite earlier ones where
    bands overlap. Derived from labels, not from the rendered image, so
    occlusions do not blank it.
    """
    target = np.zeros((height, width), dtype=np.int64)
    for i, lane in enumerate(lanes.lanes):
        if lane is None:
            continue
        ys = np.arange(math.ceil(lane.y_min), math.floor(lane.y_max) + 1, dtype=np.float64)
        ys = ys[(ys >= 0) & (ys < height)]
        if ys.size == 0:
            continue
        xs, _ = lane.x_at(ys)
        rows = ys.astype(int)
        band = np.abs(np.arange(width)[None, :] - xs[:, None]) <= half_width
        strip = target[rows]
        strip[band] = i + 1
        target[rows] = strip
    return target


def affine_points(points: np.ndarray, theta_rad: float, dx: float, dy: float, center) -> np.ndarray:
    """Rotate (x, y) points about `center`, then shift. Forward map."""
    pts = np.asarray(points, dtype=np.float64)
    cx, cy = center
    cos_t, sin_t = math.cos(theta_rad), math.sin(theta_rad)
    rel_x = pts[:, 0] - cx
    rel_y = pts[:, 1] - cy
    out = np.empty_like(pts)
    out[:, 0] = cos_t * rel_x - sin_t * rel_y + cx + dx
    out[:, 1] = sin_t * rel_x + cos_t * rel_y + cy + dy
    return out


def _extend_to_boundary(points: np.ndarray, height: int, width: int) -> np.ndarray:
    """Linearly extend the bottom end segment until it exits the frame."""
    (x0, y0), (x1, y1) = points[-2], points[-1]
    dx, dy = x1 - x0, y1 - y0  # dy > 0 by the polyline invariant
    ts = [(height - 1 - y1) / dy]
    if dx > 0:
        ts.append((width - 1 - x1) / dx)
    elif dx < 0:
        ts.append((0.0 - x1) / dx)
    t = min(ts)
    if t <= 1e-9:
        return points
    tip = np.array([[x1 + t * dx, y1 + t * dy]])
    return np.vstack([points, tip])


def augment(image: np.ndarray, lanes: LaneSet, params: AugmentParams, index: int):
    """Structure-preserving augmentation of one scene.

    The image is resampled bilinearly (zero fill) under the same rotation +
    shift that transforms the lane points, then each surviving lane is
    linearly extended from its bottom segment until it leaves the frame.
    Points that land outside are clipped away; lanes left with fewer than
    2 points are dropped.
    """
    rng = _rng(params.seed, index)
    theta = math.radians(rng.uniform(*params.rotation_degrees))
    dx = rng.uniform(*params.shift_x)
    dy = rng.uniform(*params.shift_y)

    hgt, wid = image.shape
    center = ((wid - 1) / 2.0, (hgt - 1) / 2.0)

    # ndimage maps output index (y, x) back to input: build the inverse map
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    rot_yx = np.array([[cos_t, sin_t], [-sin_t, cos_t]])
    inv = rot_yx.T
    center_yx = np.array([center[1], center[0]])
    shift_yx = np.array([dy, dx])
    offset = center_yx - inv @ (center_yx + shift_yx)
    warped = ndimage.affine_transform(
        image, inv, offset=offset, order=1, mode="constant", cval=0.0
    )

    new_lanes = []
    for lane in lanes.lanes:
        if lane is None:
            continue
        pts = affine_points(lane.points, theta, dx, dy, center)
        inb = (pts[:, 0] >= 0) & (pts[:, 0] < wid) & (pts[:, 1] >= 0) & (pts[:, 1] < hgt)
        pts = pts[inb]
        if pts.shape[0] < 2 or np.any(np.diff(pts[:, 1]) <= 0):
            continue
        pts = _extend_to_boundary(pts, hgt, wid)
        new_lanes.append(LanePolyline(pts))
    return warped, LaneSet.from_unordered(new_lanes, lanes.num_slots)


def laneset_to_record(lanes: LaneSet, h_samples, raw_file: str) -> dict:
    """TuSimple-style record: per-lane x at each sample row, -2 when absent."""
    rows = np.asarray(h_samples, dtype=np.float64)
    lane_lists = []
    for lane in lanes.lanes:
        if lane is None:
            lane_lists.append([ABSENT_X] * len(rows))
            continue
        xs, mask = lane.x_at(rows)
        lane_lists.append(
            [int(round(x)) if m else ABSENT_X for x, m in zip(xs, mask)]
        )
    return {
        "h_samples": [int(y) for y in rows],
        "lanes": lane_lists,
        "raw_file": raw_file,
    }


def laneset_from_record(record: dict) -> tuple[str, LaneSet]:
    """Rebuild (raw_file, LaneSet) from one annotation record."""
    try:
        rows = np.asarray(record["h_samples"], dtype=np.float64)
        lane_lists = record["lanes"]
        raw_file = record["raw_file"]
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"bad annotation record: {exc}") from exc
    lanes = []
    for xs in lane_lists:
        if len(xs) != len(rows):
            raise DataError(
                f"lane has {len(xs)} x values for {len(rows)} h_samples"
            )
        pts = [(float(x), float(y)) for x, y in zip(xs, rows) if x >= 0]
        lanes.append(LanePolyline(np.array(pts)) if len(pts) >= 2 else None)
    return raw_file, LaneSet(tuple(lanes))


def write_dataset(params: SceneParams, n_scenes: int, out_dir, h_samples) -> None:
    """Generate scenes to PGM files plus one JSONL annotation file."""
    os.makedirs(out_dir, exist_ok=True)
    anchors = np.asarray(h_samples, dtype=np.float64)

    def build(index):
        return generate_scene(params, index, row_anchors=anchors)

    scenes = ordered_map(build, range(n_scenes))
    records = []
    for index, (image, lanes) in enumerate(scenes):
        name = f"scene_{index:05d}.pgm"
        write_pgm(os.path.join(out_dir, name), image)
        records.append(laneset_to_record(lanes, anchors, name))
    with open(os.path.join(out_dir, ANNOTATION_FILE), "w") as f:
        for record in records:
            f.write(json.dumps(record) + "\n")


def read_dataset(dir_path):
    """Load (image, LaneSet) pairs; empty list when no annotations exist."""
    ann_path = os.path.join(dir_path, ANNOTATION_FILE)
    if not os.path.exists(ann_path):
        return []
    out = []
    for line_no, line in enumerate(open(ann_path), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{ann_path}:{line_no}: corrupt record: {exc}") from exc
        try:
            raw_file, lanes = laneset_from_record(record)
        except DataError as exc:
            raise DataError(f"{ann_path}:{line_no}: {exc}") from exc
        out.append((read_pixmap(os.path.join(dir_path, raw_file)), lanes))
    return out


def ingest_tusimple(annotation_file):
    """Parse a TuSimple-convention annotation file.

    Returns a list of (image path, LaneSet); lanes with fewer than 2
    non-negative points are dropped (absent slot). Malformed lines raise
    DataError naming the line number.
    """
    out = []
    for line_no, line in enumerate(open(annotation_file), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{annotation_file}:{line_no}: corrupt record: {exc}") from exc
        try:
            raw_file, lanes = laneset_from_record(record)
        except DataError as exc:
            raise DataError(f"{annotation_file}:{line_no}: {exc}") from exc
        out.append((raw_file, lanes))
    return out
