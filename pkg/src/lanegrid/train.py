"""Deterministic training loop and model-to-lanes prediction helpers.

fit() owns the epoch/batch plumbing: per-epoch deterministic shuffling,
optional structure-preserving augmentation, target (re-)encoding, and one
line of loss components per epoch. Everything is a pure function of the
model seed, the data, and the settings; no wall-clock state leaks into the
trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .grid import LaneSet, RowAnchorGrid, decode_argmax, decode_expectation, encode_targets, locations_to_lanes
from .losses import LossConfig, shp_loss
from .model import (
    HEAD_CLASSIFICATION,
    HEAD_REGRESSION_NORM,
    Model,
    Optimizer,
    OptimizerConfig,
    decode_regression,
    train_step,
)
from .synth import AugmentParams, augment, render_seg_target

DECODE_ARGMAX = "argmax"
DECODE_EXPECTATION = "expectation"


@dataclass(frozen=True)
class TrainSettings:
    epochs: int = 30
    batch_size: int = 8
    optimizer: OptimizerConfig = OptimizerConfig(cosine_decay=False)
    loss: LossConfig = LossConfig()
    augment_params: AugmentParams | None = None
    seg_half_width: float = 3.0
    shuffle_seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


def _prepare_scene(model: Model, grid: RowAnchorGrid, image, lanes, settings, aug_index):
    if settings.augment_params is not None:
        image, lanes = augment(image, lanes, settings.augment_params, aug_index)
    target = encode_targets(lanes, grid)
    seg_target = None
    if model.config.aux_segmentation and model.config.head == HEAD_CLASSIFICATION:
        seg_target = render_seg_target(
            lanes, model.config.input_height, model.config.input_width,
            half_width=settings.seg_half_width,
        )
    return image, target, seg_target


def fit(model: Model, scenes, settings: TrainSettings, log=None) -> list[dict]:
    """Train in place; returns one record of loss components per epoch.

    scenes is a sequence of (image, LaneSet). With augmentation enabled each
    scene gets a fresh deterministic draw every epoch (stream index is
    epoch * len(scenes) + scene position).
    """
    scenes = list(scenes)
    if not scenes:
        raise ValueError("no training scenes")
    grid = model.config.grid
    if settings.optimizer.cosine_decay and settings.optimizer.total_steps <= 0:
        raise ValueError("cosine decay needs total_steps")
    optimizer = Optimizer(settings.optimizer)
    shuffle_rng = np.random.default_rng(settings.shuffle_seed)
    history = []
    step = 0
    for epoch in range(settings.epochs):
        order = shuffle_rng.permutation(len(scenes))
        sums = {"cls": 0.0, "sim": 0.0, "shp": 0.0, "seg": 0.0, "total": 0.0}
        batches = 0
        for lo in range(0, len(order), settings.batch_size):
            chunk = order[lo : lo + settings.batch_size]
            batch = []
            for pos in chunk:
                image, lanes = scenes[pos]
                batch.append(
                    _prepare_scene(
                        model, grid, image, lanes, settings,
                        aug_index=epoch * len(scenes) + int(pos),
                    )
                )
            components = train_step(model, batch, optimizer, settings.loss, step)
            for key in sums:
                sums[key] += components[key]
            batches += 1
            step += 1
        record = {"epoch": epoch}
        record.update({key: sums[key] / batches for key in sums})
        history.append(record)
        if log is not None:
            log(record)
    return history


def total_step_count(n_scenes: int, batch_size: int, epochs: int) -> int:
    per_epoch = (n_scenes + batch_size - 1) // batch_size
    return per_epoch * epochs


def predict_locations(model: Model, image, decode: str = DECODE_EXPECTATION):
    """Decode one image to a LocationMatrix using the configured head."""
    out = model.predict(image)
    grid = model.config.grid
    if model.config.head == HEAD_CLASSIFICATION:
        if decode == DECODE_ARGMAX:
            return decode_argmax(out, grid)
        if decode == DECODE_EXPECTATION:
            return decode_expectation(out, grid)
        raise ValueError(f"unknown decode {decode!r}")
    return decode_regression(out, grid, normalized=model.config.head == HEAD_REGRESSION_NORM)


def predict_lanes(model: Model, image, decode: str = DECODE_EXPECTATION) -> LaneSet:
    return locations_to_lanes(predict_locations(model, image, decode), model.config.grid)


def mean_second_difference(model: Model, images) -> float:
    """Mean |second-order difference| of expected locations over images.

    Straightness diagnostic for the structural-loss ablation; defined for
    the classification head only.
    """
    if model.config.head != HEAD_CLASSIFICATION:
        raise ValueError("second-difference diagnostic needs the classification head")
    grid = model.config.grid
    denom = grid.num_lanes * (grid.num_anchors - 2)
    values = [shp_loss(model.predict(image)).item() / denom for image in images]
    return float(np.mean(values))
