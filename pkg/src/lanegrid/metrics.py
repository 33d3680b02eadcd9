"""Benchmark metrics: point accuracy, rasterized-IoU F1, cell accuracy.

Lane matching is always an exhaustive search over one-to-one assignments;
with at most 5 lane slots that is exact and leaves no greedy-order
ambiguity. Rasterization is defined by true Euclidean distance to the
polyline, so a brute-force per-pixel scan is the reference the vectorized
implementation must match exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations

import numpy as np

from .grid import GridTarget, LanePolyline, LaneSet, RowAnchorGrid
from .parallel import ordered_map


@dataclass(frozen=True, eq=False)
class MatchResult:
    """One scene's matching outcome."""

    tp: int
    fp: int
    fn: int
    iou: np.ndarray  # (n_pred, n_gt)
    assignment: tuple  # ((pred_idx, gt_idx), ...) pairs that were compared


def _best_assignment(score: np.ndarray) -> tuple[float, tuple]:
    """Exhaustive one-to-one assignment maximizing total score.

    score is (n_rows, n_cols); returns (best total, ((row, col), ...)).
    """
    n_rows, n_cols = score.shape
    if n_rows == 0 or n_cols == 0:
        return 0.0, ()
    best_total, best_pairs = -np.inf, ()
    if n_rows <= n_cols:
        for perm in permutations(range(n_cols), n_rows):
            total = sum(score[r, c] for r, c in enumerate(perm))
            if total > best_total:
                best_total = total
                best_pairs = tuple((r, c) for r, c in enumerate(perm))
    else:
        for perm in permutations(range(n_rows), n_cols):
            total = sum(score[r, c] for c, r in enumerate(perm))
            if total > best_total:
                best_total = total
                best_pairs = tuple((r, c) for c, r in enumerate(perm))
    return float(best_total), best_pairs


def _present_lanes(lanes: LaneSet) -> list[LanePolyline]:
    return [lane for lane in lanes.lanes if lane is not None]


def scene_point_counts(
    pred: LaneSet, gt: LaneSet, grid: RowAnchorGrid, pixel_threshold: float
) -> tuple[int, int]:
    """(correct, total ground-truth points) for one scene.

    A predicted point is correct when the matched lane covers the same
    anchor row and |x_pred - x_gt| < pixel_threshold; matching maximizes
    the total number of correct points.
    """
    anchors = np.asarray(grid.row_anchors)
    gt_lanes = _present_lanes(gt)
    pred_lanes = _present_lanes(pred)
    gt_samples = [lane.x_at(anchors) for lane in gt_lanes]
    total = int(sum(mask.sum() for _, mask in gt_samples))
    if not gt_lanes or not pred_lanes:
        return 0, total
    pred_samples = [lane.x_at(anchors) for lane in pred_lanes]
    counts = np.zeros((len(gt_lanes), len(pred_lanes)))
    for gi, (gx, gmask) in enumerate(gt_samples):
        for pi, (px, pmask) in enumerate(pred_samples):
            hit = gmask & pmask & (np.abs(px - gx) < pixel_threshold)
            counts[gi, pi] = hit.sum()
    best, _ = _best_assignment(counts)
    return int(best), total


def tusimple_accuracy(preds, gts, grid: RowAnchorGrid, pixel_threshold: float = 20.0) -> float:
    """Sum of correctly placed points over the sum of ground-truth points."""
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} predictions for {len(gts)} ground truths")
    if pixel_threshold <= 0:
        raise ValueError("pixel_threshold must be > 0")
    counts = ordered_map(
        lambda pair: scene_point_counts(pair[0], pair[1], grid, pixel_threshold),
        zip(preds, gts),
    )
    correct = sum(c for c, _ in counts)
    total = sum(t for _, t in counts)
    return correct / total if total else 1.0


def rasterize_lane(lane, width_px: float, height: int, width: int) -> np.ndarray:
    """Boolean mask: pixel centers within width_px/2 of the polyline.

    Pixel (row r, col c) has its center at (x=c, y=r). None or an absent
    lane gives an all-false mask.
    """
    if width_px <= 0:
        raise ValueError("width_px must be > 0")
    mask = np.zeros((height, width), dtype=bool)
    if lane is None:
        return mask
    pts = lane.points
    ys, xs = np.mgrid[0:height, 0:width]
    px = xs.astype(np.float64)
    py = ys.astype(np.float64)
    limit = (width_px / 2.0) ** 2
    best = np.full((height, width), np.inf)
    for (ax, ay), (bx, by) in zip(pts[:-1], pts[1:]):
        vx, vy = bx - ax, by - ay
        denom = vx * vx + vy * vy
        t = ((px - ax) * vx + (py - ay) * vy) / denom
        t = np.clip(t, 0.0, 1.0)
        ex = px - (ax + t * vx)
        ey = py - (ay + t * vy)
        d2 = ex * ex + ey * ey
        best = np.minimum(best, d2)
    np.less_equal(best, limit, out=mask)
    return mask


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    inter = np.logical_and(a, b).sum()
    union = np.logical_or(a, b).sum()
    return float(inter / union) if union else 0.0


def scene_match(
    pred: LaneSet,
    gt: LaneSet,
    width_px: float,
    iou_threshold: float,
    height: int,
    width: int,
) -> MatchResult:
    """Rasterize both sides, match one-to-one by total IoU, then threshold.

    Matched pairs with IoU strictly above the threshold are true positives;
    remaining predictions are false positives and remaining ground-truth
    lanes false negatives.
    """
    pred_masks = [rasterize_lane(lane, width_px, height, width) for lane in _present_lanes(pred)]
    gt_masks = [rasterize_lane(lane, width_px, height, width) for lane in _present_lanes(gt)]
    iou = np.zeros((len(pred_masks), len(gt_masks)))
    for pi, pm in enumerate(pred_masks):
        for gi, gm in enumerate(gt_masks):
            iou[pi, gi] = mask_iou(pm, gm)
    _, pairs = _best_assignment(iou)
    tp = sum(1 for pi, gi in pairs if iou[pi, gi] > iou_threshold)
    return MatchResult(
        tp=tp,
        fp=len(pred_masks) - tp,
        fn=len(gt_masks) - tp,
        iou=iou,
        assignment=pairs,
    )


def culane_f1(
    preds,
    gts,
    width_px: float = 30.0,
    iou_threshold: float = 0.5,
    height: int = 590,
    width: int = 1640,
):
    """Aggregate precision/recall/F1 over scenes; returns per-scene matches.

    Degenerate conventions: a zero denominator makes precision or recall 0,
    and F1 is 0 when precision + recall is 0.
    """
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} predictions for {len(gts)} ground truths")
    if width_px <= 0:
        raise ValueError("width_px must be > 0")
    results = ordered_map(
        lambda pair: scene_match(pair[0], pair[1], width_px, iou_threshold, height, width),
        zip(preds, gts),
    )
    tp = sum(r.tp for r in results)
    fp = sum(r.fp for r in results)
    fn = sum(r.fn for r in results)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1, results


def topk_cell_accuracy(p: np.ndarray, target: GridTarget, k: int) -> float:
    """Fraction of non-background anchors whose peak cell is within k-1 cells.

    The peak is the argmax over all w+1 classes; predicting background for
    a lane anchor counts as wrong at every k. k=1 is plain classification
    accuracy on the non-background entries. Vacuously 1.0 with no entries.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    p = np.asarray(p, dtype=np.float64)
    c, h = target.classes.shape
    if p.shape[:2] != (c, h):
        raise ValueError(f"prediction {p.shape} does not match target {(c, h)}")
    w = target.num_cells
    lane_anchor = target.classes != w + 1
    if not lane_anchor.any():
        return 1.0
    peak = np.argmax(p, axis=2) + 1  # 1-based; w+1 is background
    hit = (peak != w + 1) & (np.abs(peak - target.classes) < k)
    return float(hit[lane_anchor].sum() / lane_anchor.sum())


def metric_report(
    preds,
    gts,
    grid: RowAnchorGrid,
    pixel_threshold: float = 20.0,
    width_px: float = 30.0,
    iou_threshold: float = 0.5,
    categories=None,
    worst: int = 5,
) -> dict:
    """Structured report: totals, optional per-category splits, worst scenes.

    Categories are pass-through labels used only for grouping.
    """
    height, width = grid.image_height, grid.image_width
    precision, recall, f1, matches = culane_f1(
        preds, gts, width_px, iou_threshold, height, width
    )
    counts = ordered_map(
        lambda pair: scene_point_counts(pair[0], pair[1], grid, pixel_threshold),
        zip(preds, gts),
    )
    accuracy = (
        sum(c for c, _ in counts) / sum(t for _, t in counts)
        if sum(t for _, t in counts)
        else 1.0
    )

    def scene_f1(m: MatchResult) -> float:
        p = m.tp / (m.tp + m.fp) if m.tp + m.fp else 0.0
        r = m.tp / (m.tp + m.fn) if m.tp + m.fn else 0.0
        return 2 * p * r / (p + r) if p + r else 0.0

    scene_scores = []
    for idx, (m, (c, t)) in enumerate(zip(matches, counts)):
        scene_scores.append(
            {
                "scene": idx,
                "f1": scene_f1(m),
                "accuracy": c / t if t else 1.0,
                "tp": m.tp,
                "fp": m.fp,
                "fn": m.fn,
            }
        )
    report = {
        "total": {
            "accuracy": accuracy,
            "precision": precision,
            "recall": recall,
            "f1": f1,
            "scenes": len(matches),
        },
        "worst_scenes": sorted(scene_scores, key=lambda s: (s["f1"], s["accuracy"]))[:worst],
    }
    if categories is not None:
        if len(categories) != len(matches):
            raise ValueError("one category label per scene required")
        by_cat: dict[str, dict] = {}
        for label, m, (c, t) in zip(categories, matches, counts):
            slot = by_cat.setdefault(label, {"tp": 0, "fp": 0, "fn": 0, "correct": 0, "total": 0})
            slot["tp"] += m.tp
            slot["fp"] += m.fp
            slot["fn"] += m.fn
            slot["correct"] += c
            slot["total"] += t
        out = {}
        for label, s in sorted(by_cat.items()):
            p = s["tp"] / (s["tp"] + s["fp"]) if s["tp"] + s["fp"] else 0.0
            r = s["tp"] / (s["tp"] + s["fn"]) if s["tp"] + s["fn"] else 0.0
            out[label] = {
                "accuracy": s["correct"] / s["total"] if s["total"] else 1.0,
                "precision": p,
                "recall": r,
                "f1": 2 * p * r / (p + r) if p + r else 0.0,
            }
        report["per_category"] = out
    return report
