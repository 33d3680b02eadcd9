"""Toy backbone + group-classification head, optimizer, checkpoints.

The backbone is a stack of stride-2 3x3 conv+relu stages; the final feature
map is flattened into one global feature vector and a single linear layer
emits all C*h*(w+1) logits at once, so every output sees the whole image.
A training-only auxiliary segmentation head (1x1 conv + nearest upsample)
taps the second stage. A regression head variant exists as an ablation
comparator: one continuous location plus a 2-way presence logit per
(lane, anchor).

Everything is float64 and seeded; a fixed seed gives a bitwise-reproducible
training trajectory on one thread.
"""

from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .errors import DataError
from .grid import GridTarget, LocationMatrix, RowAnchorGrid
from . import losses as losses_mod

CHECKPOINT_MAGIC = b"LANEGRID"
CHECKPOINT_VERSION = 1

HEAD_CLASSIFICATION = "classification"
HEAD_REGRESSION = "regression"
HEAD_REGRESSION_NORM = "regression-norm"
_HEADS = (HEAD_CLASSIFICATION, HEAD_REGRESSION, HEAD_REGRESSION_NORM)


@dataclass(frozen=True)
class ModelConfig:
    input_height: int
    input_width: int
    grid: RowAnchorGrid
    channels: tuple[int, ...] = (8, 16, 32, 32)
    seed: int = 0
    aux_segmentation: bool = True
    head: str = HEAD_CLASSIFICATION

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        stride = 2 ** len(self.channels)
        if self.input_height % stride or self.input_width % stride:
            raise ValueError(
                f"input {self.input_height}x{self.input_width} not divisible "
                f"by total backbone stride {stride}"
            )
        if self.head not in _HEADS:
            raise ValueError(f"unknown head {self.head!r}, want one of {_HEADS}")

    def to_dict(self) -> dict:
        return {
            "input_height": self.input_height,
            "input_width": self.input_width,
            "grid": {
                "image_height": self.grid.image_height,
                "image_width": self.grid.image_width,
                "row_anchors": list(self.grid.row_anchors),
                "num_cells": self.grid.num_cells,
                "num_lanes": self.grid.num_lanes,
            },
            "channels": list(self.channels),
            "seed": self.seed,
            "aux_segmentation": self.aux_segmentation,
            "head": self.head,
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        g = d["grid"]
        return ModelConfig(
            input_height=int(d["input_height"]),
            input_width=int(d["input_width"]),
            grid=RowAnchorGrid(
                image_height=int(g["image_height"]),
                image_width=int(g["image_width"]),
                row_anchors=tuple(g["row_anchors"]),
                num_cells=int(g["num_cells"]),
                num_lanes=int(g["num_lanes"]),
            ),
            channels=tuple(d["channels"]),
            seed=int(d["seed"]),
            aux_segmentation=bool(d["aux_segmentation"]),
            head=str(d["head"]),
        )


@dataclass(frozen=True)
class Checkpoint:
    version: int
    config: ModelConfig
    step: int
    params: dict  # name -> float64 ndarray


class Model:
    """Parameter container plus the forward pass."""

    def __init__(self, config: ModelConfig, params: dict | None = None):
        self.config = config
        if params is None:
            params = self._init_params(config)
        self.params = {name: self._as_param(name, arr) for name, arr in params.items()}

    @staticmethod
    def _as_param(name, arr):
        if isinstance(arr, Tensor):
            arr = arr.data
        return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=True, name=name)

    @staticmethod
    def _init_params(cfg: ModelConfig) -> dict:
        """Fan-in scaled uniform init from one seeded generator."""
        rng = np.random.default_rng(cfg.seed)
        params: dict[str, np.ndarray] = {}

        def uniform(name, shape, fan_in):
            bound = 1.0 / math.sqrt(fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape)

        cin = 1
        for i, cout in enumerate(cfg.channels):
            uniform(f"conv{i}_w", (cout, cin, 3, 3), cin * 9)
            uniform(f"conv{i}_b", (cout,), cin * 9)
            cin = cout

        stride = 2 ** len(cfg.channels)
        fh = cfg.input_height // stride
        fw = cfg.input_width // stride
        flat = cfg.channels[-1] * fh * fw
        grid = cfg.grid
        if cfg.head == HEAD_CLASSIFICATION:
            out_dim = grid.num_lanes * grid.num_anchors * (grid.num_cells + 1)
        else:
            out_dim = grid.num_lanes * grid.num_anchors * 3
        uniform("head_w", (flat, out_dim), flat)
        uniform("head_b", (out_dim,), flat)

        if cfg.aux_segmentation:
            tap_channels = cfg.channels[min(1, len(cfg.channels) - 1)]
            uniform("seg_w", (grid.num_lanes + 1, tap_channels, 1, 1), tap_channels)
            uniform("seg_b", (grid.num_lanes + 1,), tap_channels)
        return params

    @property
    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def _check_image(self, image) -> Tensor:
        if isinstance(image, Tensor):
            data = image.data
        else:
            data = np.asarray(image, dtype=np.float64)
            if data.ndim == 2:
                data = data[None, :, :]
            image = Tensor(data)
        if data.shape != (1, self.config.input_height, self.config.input_width):
            raise ValueError(
                f"image shape {data.shape}, model wants "
                f"(1, {self.config.input_height}, {self.config.input_width})"
            )
        if data.min() < 0.0 or data.max() > 1.0:
            raise ValueError("image values must lie in [0, 1]")
        return image

    def forward(self, image, mode: str = "train"):
        """Run the backbone and head.

        Returns (P, seg_logits) for the classification head or
        (reg_out, seg_logits) for the regression heads; seg_logits is None
        unless mode == "train" and the aux head is enabled.
        """
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        x = self._check_image(image)
        p = self.params
        taps = []
        for i in range(len(self.config.channels)):
            x = ad.relu(ad.conv2d(x, p[f"conv{i}_w"], p[f"conv{i}_b"], stride=2, padding=1))
            taps.append(x)

        c, fh, fw = x.shape
        flat = ad.reshape(x, (1, c * fh * fw))
        out = ad.add(ad.matmul(flat, p["head_w"]), ad.reshape(p["head_b"], (1, -1)))
        grid = self.config.grid
        if self.config.head == HEAD_CLASSIFICATION:
            out = ad.reshape(out, (grid.num_lanes, grid.num_anchors, grid.num_cells + 1))
        else:
            out = ad.reshape(out, (grid.num_lanes, grid.num_anchors, 3))

        seg_logits = None
        if mode == "train" and self.config.aux_segmentation:
            tap = taps[min(1, len(taps) - 1)]
            seg = ad.conv2d(tap, p["seg_w"], p["seg_b"], stride=1, padding=0)
            factor = self.config.input_height // tap.shape[1]
            seg_logits = ad.upsample_nearest(seg, factor)
        return out, seg_logits

    def predict(self, image) -> np.ndarray:
        """Eval-mode forward without gradient recording; plain ndarray out."""
        out, _ = self.forward(image, mode="eval")
        return out.data

    def replace_params(self, new_params: dict):
        self.params = {name: self._as_param(name, arr) for name, arr in new_params.items()}


def regression_loss(reg_out, target: GridTarget, normalized: bool) -> Tensor:
    """L1 on present locations plus 2-way presence cross entropy, both summed.

    Location targets are the integer cell indices; the normalized variant
    trains against cell/w so the regression range is (0, 1].
    """
    c, h, three = reg_out.shape
    if three != 3:
        raise ValueError(f"regression output must be (C, h, 3), got {reg_out.shape}")
    w = target.num_cells
    present = (target.classes != w + 1).astype(np.float64)
    loc_target = np.where(present > 0, target.classes.astype(np.float64), 0.0)
    if normalized:
        loc_target = loc_target / w

    loc = ad.reshape(ad.narrow(reg_out, 2, 0, 1), (c, h))
    diff = ad.abs(ad.sub(loc, Tensor(loc_target)))
    l1 = ad.sum(ad.mul(diff, Tensor(present)))

    pres_logits = ad.narrow(reg_out, 2, 1, 2)
    pres_onehot = np.zeros((c, h, 2))
    pres_onehot[:, :, 1] = present
    pres_onehot[:, :, 0] = 1.0 - present
    ce = ad.scale(ad.sum(ad.mul(ad.log_softmax_lastdim(pres_logits), Tensor(pres_onehot))), -1.0)
    return ad.add(l1, ce)


def decode_regression(reg_out: np.ndarray, grid: RowAnchorGrid, normalized: bool) -> LocationMatrix:
    """Turn regression-head output into a LocationMatrix."""
    reg_out = np.asarray(reg_out, dtype=np.float64)
    loc = reg_out[:, :, 0] * (grid.num_cells if normalized else 1.0)
    loc = np.clip(loc, 1.0, grid.num_cells)
    presence = reg_out[:, :, 2] > reg_out[:, :, 1]
    return LocationMatrix(np.where(presence, loc, np.nan), presence)


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "sgd"  # "sgd" (momentum) or "adam"
    learning_rate: float = 0.05
    momentum: float = 0.9
    cosine_decay: bool = True
    total_steps: int = 0  # required when cosine_decay
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.kind!r}")
        if self.cosine_decay and self.total_steps <= 0:
            raise ValueError("cosine_decay needs total_steps > 0")


class Optimizer:
    def __init__(self, cfg: OptimizerConfig):
        self.cfg = cfg
        self.state: dict[str, dict] = {}

    def learning_rate_at(self, step: int) -> float:
        lr = self.cfg.learning_rate
        if self.cfg.cosine_decay:
            t = min(step, self.cfg.total_steps) / self.cfg.total_steps
            lr = lr * 0.5 * (1.0 + math.cos(math.pi * t))
        return lr

    def apply(self, params: dict, grads: dict, step: int) -> dict:
        """One update; returns the new name -> ndarray map."""
        lr = self.learning_rate_at(step)
        cfg = self.cfg
        new_params = {}
        for name, param in params.items():
            g = grads[name]
            slot = self.state.setdefault(name, {})
            if cfg.kind == "sgd":
                v = slot.get("v")
                v = g if v is None else cfg.momentum * v + g
                slot["v"] = v
                new_params[name] = param.data - lr * v
            else:
                m = slot.get("m", np.zeros_like(g))
                v = slot.get("v", np.zeros_like(g))
                m = cfg.beta1 * m + (1 - cfg.beta1) * g
                v = cfg.beta2 * v + (1 - cfg.beta2) * g * g
                slot["m"], slot["v"] = m, v
                mhat = m / (1 - cfg.beta1 ** (step + 1))
                vhat = v / (1 - cfg.beta2 ** (step + 1))
                new_params[name] = param.data - lr * mhat / (np.sqrt(vhat) + cfg.eps)
        return new_params


def train_step(
    model: Model,
    batch,
    optimizer: Optimizer,
    loss_cfg: losses_mod.LossConfig,
    step: int,
):
    """One optimization step over a batch of (image, GridTarget, seg_target).

    Loss components are summed per scene as the formulas state, averaged
    over the batch for the update, and returned for logging. Aborts with
    FloatingPointError on any non-finite loss or gradient.
    """
    if not batch:
        raise ValueError("empty batch")
    sums = {"cls": 0.0, "sim": 0.0, "shp": 0.0, "seg": 0.0}
    regression = model.config.head != HEAD_CLASSIFICATION
    with Tape() as tape:
        total = None
        for image, target, seg_target in batch:
            out, seg_logits = model.forward(image, mode="train")
            if regression:
                scene_loss = regression_loss(
                    out, target, normalized=model.config.head == HEAD_REGRESSION_NORM
                )
                sums["cls"] += scene_loss.item()
            else:
                cls = losses_mod.cls_loss(out, target)
                scene_loss = cls
                sums["cls"] += cls.item()
                if loss_cfg.alpha_structural != 0.0:
                    sim = losses_mod.sim_loss(
                        out, on_probabilities=loss_cfg.sim_on_probabilities
                    )
                    shp = losses_mod.shp_loss(out)
                    sums["sim"] += sim.item()
                    sums["shp"] += shp.item()
                    structural = ad.add(sim, ad.scale(shp, loss_cfg.lambda_shape))
                    scene_loss = ad.add(scene_loss, ad.scale(structural, loss_cfg.alpha_structural))
                if seg_logits is not None and seg_target is not None and loss_cfg.beta_segmentation != 0.0:
                    seg = losses_mod.seg_loss(seg_logits, seg_target)
                    sums["seg"] += seg.item()
                    scene_loss = ad.add(scene_loss, ad.scale(seg, loss_cfg.beta_segmentation))
            total = scene_loss if total is None else ad.add(total, scene_loss)
        objective = ad.scale(total, 1.0 / len(batch))
        grads_by_tensor = tape.backward(objective)

    grads = {}
    for name, param in model.params.items():
        g = grads_by_tensor.get(param)
        if g is None:
            g = np.zeros_like(param.data)
        elif not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r} at step {step}")
        grads[name] = g

    model.replace_params(optimizer.apply(model.params, grads, step))
    n = len(batch)
    components = {k: v / n for k, v in sums.items()}
    components["total"] = objective.item()
    return components


def save_checkpoint(model: Model, step: int, path) -> None:
    """Versioned binary: magic, version, config JSON, parameter records."""
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    config_blob = json.dumps(
        {"model": model.config.to_dict(), "step": int(step)}, sort_keys=True
    ).encode("utf-8")
    buf.write(struct.pack("<I", len(config_blob)))
    buf.write(config_blob)
    buf.write(struct.pack("<I", len(model.params)))
    for name, param in model.params.items():
        encoded = name.encode("utf-8")
        buf.write(struct.pack("<H", len(encoded)))
        buf.write(encoded)
        arr = param.data
        buf.write(struct.pack("<I", arr.ndim))
        for dim in arr.shape:
            buf.write(struct.pack("<I", dim))
        buf.write(arr.astype("<f8").tobytes())
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def load_checkpoint(path) -> Checkpoint:
    """Parse and validate a checkpoint; truncated or alien files never
    yield a partial result."""
    with open(path, "rb") as f:
        blob = f.read()
    view = io.BytesIO(blob)

    def take(n, what):
        chunk = view.read(n)
        if len(chunk) != n:
            raise DataError(f"truncated checkpoint: short read in {what}")
        return chunk

    if take(len(CHECKPOINT_MAGIC), "magic") != CHECKPOINT_MAGIC:
        raise DataError("not a lanegrid checkpoint (bad magic)")
    (version,) = struct.unpack("<I", take(4, "version"))
    if version != CHECKPOINT_VERSION:
        raise DataError(f"checkpoint version {version} unsupported (want {CHECKPOINT_VERSION})")
    (cfg_len,) = struct.unpack("<I", take(4, "config length"))
    try:
        meta = json.loads(take(cfg_len, "config").decode("utf-8"))
        config = ModelConfig.from_dict(meta["model"])
        step = int(meta["step"])
    except (KeyError, ValueError, TypeError) as exc:
        raise DataError(f"bad checkpoint config block: {exc}") from exc
    (count,) = struct.unpack("<I", take(4, "parameter count"))
    params = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2, "name length"))
        name = take(name_len, "name").decode("utf-8")
        (rank,) = struct.unpack("<I", take(4, "rank"))
        dims = tuple(struct.unpack("<I", take(4, "dim"))[0] for _ in range(rank))
        n = int(np.prod(dims)) if dims else 1
        data = np.frombuffer(take(8 * n, f"data of {name}"), dtype="<f8").reshape(dims)
        params[name] = data.astype(np.float64)
    if view.read(1):
        raise DataError("trailing bytes after checkpoint payload")
    return Checkpoint(version=version, config=config, step=step, params=params)


def model_from_checkpoint(ckpt: Checkpoint) -> Model:
    return Model(ckpt.config, params=ckpt.params)
