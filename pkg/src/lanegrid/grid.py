"""Row-anchor grid geometry, target encoding, and prediction decoding.

Lanes live in pixel coordinates (x right, y down). A grid divides each of h
predefined row anchors into w cells plus one extra "no lane here" class, so
classifier output for one image is a (C, h, w+1) logit tensor. Cell indices
are 1-based everywhere in this API: lane cells are 1..w and the background
class is w+1. Prediction tensors are plain float ndarrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RowAnchorGrid:
    """Geometry bundle: image size, row anchors, cell count, lane count."""

    image_height: int
    image_width: int
    row_anchors: tuple[float, ...]
    num_cells: int
    num_lanes: int

    def __post_init__(self):
        anchors = tuple(float(y) for y in self.row_anchors)
        object.__setattr__(self, "row_anchors", anchors)
        if len(anchors) < 3:
            raise ValueError("need at least 3 row anchors (second-order loss)")
        if any(b <= a for a, b in zip(anchors, anchors[1:])):
            raise ValueError("row anchors must be strictly increasing")
        if anchors[0] < 0 or anchors[-1] >= self.image_height:
            raise ValueError(f"row anchors must lie in [0, {self.image_height})")
        if self.num_cells < 2:
            raise ValueError("need at least 2 gridding cells")
        if self.num_lanes < 1:
            raise ValueError("need at least 1 lane slot")

    @property
    def num_anchors(self) -> int:
        return len(self.row_anchors)

    @property
    def background_class(self) -> int:
        # 1-based class index of "no lane in this row"
        return self.num_cells + 1

    def scaled_to(self, height: int, width: int) -> "RowAnchorGrid":
        """Proportionally rescale anchors to a different working resolution."""
        fy = height / self.image_height
        return RowAnchorGrid(
            image_height=height,
            image_width=width,
            row_anchors=tuple(y * fy for y in self.row_anchors),
            num_cells=self.num_cells,
            num_lanes=self.num_lanes,
        )


def tusimple_grid() -> RowAnchorGrid:
    # 1280x720 images, anchors every 10 px from 160 to 710, 100 cells, 5 lanes
    return RowAnchorGrid(720, 1280, tuple(range(160, 711, 10)), 100, 5)


def culane_grid() -> RowAnchorGrid:
    # 1640x590 images, anchors every 10 px from 260 to 530, 150 cells, 4 lanes
    return RowAnchorGrid(590, 1640, tuple(range(260, 531, 10)), 150, 4)


@dataclass(frozen=True, eq=False)
class LanePolyline:
    """Continuous lane geometry: (N, 2) array of (x, y), y strictly increasing."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
            raise ValueError(f"polyline needs an (N>=2, 2) array, got {pts.shape}")
        if np.any(np.diff(pts[:, 1]) <= 0):
            raise ValueError("polyline y coordinates must be strictly increasing")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def y_min(self) -> float:
        return float(self.points[0, 1])

    @property
    def y_max(self) -> float:
        return float(self.points[-1, 1])

    def x_at(self, rows) -> tuple[np.ndarray, np.ndarray]:
        """Interpolate x at the given rows; mask is False outside the span."""
        rows = np.asarray(rows, dtype=np.float64)
        mask = (rows >= self.y_min) & (rows <= self.y_max)
        xs = np.interp(rows, self.points[:, 1], self.points[:, 0])
        return xs, mask


@dataclass(frozen=True, eq=False)
class LaneSet:
    """Up to C lanes by slot; None marks an absent slot."""

    lanes: tuple

    def __post_init__(self):
        object.__setattr__(self, "lanes", tuple(self.lanes))
        for lane in self.lanes:
            if lane is not None and not isinstance(lane, LanePolyline):
                raise TypeError("LaneSet entries must be LanePolyline or None")

    @property
    def num_slots(self) -> int:
        return len(self.lanes)

    @property
    def present(self) -> list[int]:
        return [i for i, lane in enumerate(self.lanes) if lane is not None]

    @staticmethod
    def from_unordered(polylines, num_lanes: int) -> "LaneSet":
        """Assign lanes to slots 1..C ordered left-to-right.

        Ordering key is each lane's x at the lowest row reached by all of
        them (clamped into each lane's own span), so crossing lanes at the
        horizon do not scramble the slots.
        """
        lanes = [p for p in polylines if p is not None]
        if len(lanes) > num_lanes:
            raise ValueError(f"{len(lanes)} lanes for {num_lanes} slots")
        if lanes:
            y_eval = min(lane.y_max for lane in lanes)
            keys = []
            for lane in lanes:
                y = min(max(y_eval, lane.y_min), lane.y_max)
                keys.append(float(lane.x_at(np.array([y]))[0][0]))
            lanes = [lane for _, lane in sorted(zip(keys, lanes), key=lambda kv: kv[0])]
        slots = list(lanes) + [None] * (num_lanes - len(lanes))
        return LaneSet(tuple(slots))


@dataclass(frozen=True, eq=False)
class GridTarget:
    """Per (lane, anchor) class index in 1..w+1; w+1 means no lane."""

    classes: np.ndarray
    num_cells: int

    def __post_init__(self):
        cls = np.asarray(self.classes, dtype=np.int64)
        if cls.ndim != 2:
            raise ValueError(f"target classes must be (C, h), got {cls.shape}")
        if np.any(cls < 1) or np.any(cls > self.num_cells + 1):
            raise ValueError(f"target classes must lie in [1, {self.num_cells + 1}]")
        cls.setflags(write=False)
        object.__setattr__(self, "classes", cls)

    def onehot(self) -> np.ndarray:
        """(C, h, w+1) one-hot view of the stored class indices."""
        c, h = self.classes.shape
        out = np.zeros((c, h, self.num_cells + 1))
        idx = self.classes - 1
        out[np.arange(c)[:, None], np.arange(h)[None, :], idx] = 1.0
        return out


@dataclass(frozen=True, eq=False)
class LocationMatrix:
    """Continuous cell-index locations (C, h) with a presence mask."""

    locations: np.ndarray
    presence: np.ndarray

    def __post_init__(self):
        loc = np.asarray(self.locations, dtype=np.float64)
        pres = np.asarray(self.presence, dtype=bool)
        if loc.shape != pres.shape or loc.ndim != 2:
            raise ValueError("locations and presence must both be (C, h)")
        loc.setflags(write=False)
        pres.setflags(write=False)
        object.__setattr__(self, "locations", loc)
        object.__setattr__(self, "presence", pres)


def cell_of_x(x: float, grid: RowAnchorGrid) -> int:
    """Map a pixel column to its 1-based cell index.

    Cells are half-open: cell k covers [(k-1)*W/w, k*W/w).
    """
    if not 0 <= x < grid.image_width:
        raise ValueError(f"x={x} outside [0, {grid.image_width})")
    k = int(np.floor(x * grid.num_cells / grid.image_width)) + 1
    return min(k, grid.num_cells)


def x_of_cell(k: float, grid: RowAnchorGrid) -> float:
    """Pixel column of a (possibly fractional) cell index: its cell center."""
    if not 1 <= k <= grid.num_cells:
        raise ValueError(f"cell index {k} outside [1, {grid.num_cells}]")
    return (k - 0.5) * grid.image_width / grid.num_cells


def check_prediction(p: np.ndarray, grid: RowAnchorGrid) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    want = (grid.num_lanes, grid.num_anchors, grid.num_cells + 1)
    if p.shape != want:
        raise ValueError(f"prediction shape {p.shape}, grid wants {want}")
    if not np.all(np.isfinite(p)):
        raise FloatingPointError("prediction tensor contains NaN/Inf")
    return p


def encode_targets(lanes: LaneSet, grid: RowAnchorGrid) -> GridTarget:
    """Quantize lane polylines into per-anchor cell classes.

    Rows outside a lane's vertical span, and absent slots, get the
    background class w+1.
    """
    if lanes.num_slots > grid.num_lanes:
        raise ValueError(f"{lanes.num_slots} lane slots for grid with {grid.num_lanes}")
    anchors = np.asarray(grid.row_anchors)
    classes = np.full((grid.num_lanes, grid.num_anchors), grid.background_class, dtype=np.int64)
    for i, lane in enumerate(lanes.lanes):
        if lane is None:
            continue
        xs, mask = lane.x_at(anchors)
        for j in np.nonzero(mask)[0]:
            classes[i, j] = cell_of_x(xs[j], grid)
    return GridTarget(classes, grid.num_cells)


def decode_argmax(p: np.ndarray, grid: RowAnchorGrid) -> LocationMatrix:
    """Hard decoding: peak cell per (lane, anchor), background excluded.

    An entry is absent when the maximum over all w+1 classes falls on the
    background class; ties resolve toward the smaller index, so a tie with
    background counts as present.
    """
    p = check_prediction(p, grid)
    w = grid.num_cells
    full = np.argmax(p, axis=2)  # 0-based; w is background
    presence = full != w
    peak = np.argmax(p[:, :, :w], axis=2) + 1.0
    locations = np.where(presence, peak, np.nan)
    return LocationMatrix(locations, presence)


def decode_expectation(p: np.ndarray, grid: RowAnchorGrid) -> LocationMatrix:
    """Soft decoding: probability-weighted mean cell index.

    Presence uses the same background-vs-lane argmax rule as decode_argmax;
    where present, the location is sum_k k * softmax(lane logits)_k with the
    background class excluded from the softmax.
    """
    p = check_prediction(p, grid)
    w = grid.num_cells
    full = np.argmax(p, axis=2)
    presence = full != w
    lane_logits = p[:, :, :w]
    shifted = lane_logits - lane_logits.max(axis=2, keepdims=True)
    e = np.exp(shifted)
    prob = e / e.sum(axis=2, keepdims=True)
    expect = prob @ np.arange(1, w + 1, dtype=np.float64)
    locations = np.where(presence, expect, np.nan)
    return LocationMatrix(locations, presence)


def locations_to_lanes(loc: LocationMatrix, grid: RowAnchorGrid) -> LaneSet:
    """Lift decoded cell locations back to pixel-space polylines.

    Present anchors of one lane are joined in anchor order; a lane with
    fewer than 2 present anchors becomes an absent slot.
    """
    if loc.locations.shape != (grid.num_lanes, grid.num_anchors):
        raise ValueError(
            f"location matrix {loc.locations.shape} does not match grid "
            f"({grid.num_lanes}, {grid.num_anchors})"
        )
    anchors = np.asarray(grid.row_anchors)
    slots = []
    for i in range(grid.num_lanes):
        js = np.nonzero(loc.presence[i])[0]
        if js.size < 2:
            slots.append(None)
            continue
        xs = np.array([x_of_cell(loc.locations[i, j], grid) for j in js])
        slots.append(LanePolyline(np.column_stack([xs, anchors[js]])))
    return LaneSet(tuple(slots))


def formulation_cost(grid: RowAnchorGrid) -> int:
    """Classification count of the row-anchor formulation: C * h * (w+1)."""
    return grid.num_lanes * grid.num_anchors * (grid.num_cells + 1)


def segmentation_cost(height: int, width: int, num_lanes: int) -> int:
    """Classification count of per-pixel segmentation: H * W * (C+1)."""
    return int(height) * int(width) * (int(num_lanes) + 1)
