"""Command-line front end: synth / train / eval / infer / bench / sweep.

One JSON config document drives every command; flags override file values
and the effective merged config is echoed beside the outputs of any
command that writes files. Exit codes: 0 ok, 1 usage or config error,
2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
import time

import numpy as np

from .errors import DataError
from .grid import (
    RowAnchorGrid,
    culane_grid,
    encode_targets,
    formulation_cost,
    segmentation_cost,
    tusimple_grid,
)
from .losses import LossConfig
from .metrics import metric_report, topk_cell_accuracy
from .model import (
    Model,
    ModelConfig,
    OptimizerConfig,
    load_checkpoint,
    model_from_checkpoint,
    save_checkpoint,
)
from .ppm import read_pixmap, write_ppm
from .synth import AugmentParams, SceneParams, generate_scene, read_dataset, write_dataset
from .train import TrainSettings, fit, predict_lanes, total_step_count

DEFAULT_CONFIG = {
    "seed": 0,
    "grid": {
        "image_height": 64,
        "image_width": 160,
        "row_anchors": list(range(24, 64, 5)),
        "num_cells": 20,
        "num_lanes": 2,
    },
    "model": {
        "channels": [8, 16, 32, 32],
        "aux_segmentation": True,
        "head": "classification",
    },
    "scene": {
        "n_scenes": 500,
        "curvature": [-0.002, 0.002],
        "slope": [-0.35, 0.35],
        "brightness": [0.65, 1.0],
        "lane_width": [2.0, 4.0],
        "distractor_count": [0, 2],
        "occlusion_count": [0, 3],
        "occlusion_size": [8, 28],
        "noise_sigma": 0.05,
    },
    "augment": {
        "enabled": False,
        "rotation_degrees": [-6.0, 6.0],
        "shift_x": [-16.0, 16.0],
        "shift_y": [-6.4, 6.4],
    },
    "train": {
        "epochs": 30,
        "batch_size": 8,
        "optimizer": "sgd",
        "learning_rate": 0.05,
        "momentum": 0.9,
        "cosine_decay": True,
    },
    "loss": {
        "alpha": 1.0,
        "beta": 1.0,
        "lambda": 1.0,
        "sim_on_probabilities": False,
    },
    "eval": {
        "decode": "expectation",
        "pixel_threshold": 20.0,
        "mask_width": 30.0,
        "iou_threshold": 0.5,
    },
}


class UsageError(Exception):
    pass


def merge_config(base: dict, override: dict, path: str = "") -> dict:
    """Deep-merge override into base; unknown keys are usage errors."""
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise UsageError(f"unknown config key: {where}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise UsageError(f"config key {where} must be an object")
            out[key] = merge_config(base[key], value, where)
        else:
            out[key] = value
    return out


def load_config(path: str | None, overrides: dict | None = None) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        try:
            with open(path) as f:
                file_cfg = json.load(f)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: bad config JSON: {exc}") from exc
        if not isinstance(file_cfg, dict):
            raise DataError(f"{path}: config root must be an object")
        cfg = merge_config(cfg, file_cfg)
    if overrides:
        cfg = merge_config(cfg, overrides)
    return cfg


def flag_overrides(args) -> dict:
    """Translate CLI flags into a config override tree."""
    over: dict = {}

    def put(section, key, value):
        if value is not None:
            over.setdefault(section, {})[key] = value

    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    put("model", "head", getattr(args, "head", None))
    put("eval", "decode", getattr(args, "decode", None))
    put("loss", "alpha", getattr(args, "alpha", None))
    put("loss", "beta", getattr(args, "beta", None))
    put("loss", "lambda", getattr(args, "lambda_shape", None))
    cells = getattr(args, "cells", None)
    if cells is not None and "," not in str(cells):
        put("grid", "num_cells", int(cells))
    put("scene", "n_scenes", getattr(args, "scenes", None))
    put("train", "epochs", getattr(args, "epochs", None))
    put("train", "batch_size", getattr(args, "batch", None))
    put("train", "learning_rate", getattr(args, "lr", None))
    if getattr(args, "augment", False):
        over.setdefault("augment", {})["enabled"] = True
    return over


def grid_from(cfg: dict) -> RowAnchorGrid:
    g = cfg["grid"]
    return RowAnchorGrid(
        image_height=g["image_height"],
        image_width=g["image_width"],
        row_anchors=tuple(g["row_anchors"]),
        num_cells=g["num_cells"],
        num_lanes=g["num_lanes"],
    )


def scene_params_from(cfg: dict) -> SceneParams:
    s = cfg["scene"]
    g = cfg["grid"]
    return SceneParams(
        image_height=g["image_height"],
        image_width=g["image_width"],
        num_lanes=g["num_lanes"],
        curvature=tuple(s["curvature"]),
        slope=tuple(s["slope"]),
        brightness=tuple(s["brightness"]),
        lane_width=tuple(s["lane_width"]),
        distractor_count=tuple(s["distractor_count"]),
        occlusion_count=tuple(s["occlusion_count"]),
        occlusion_size=tuple(s["occlusion_size"]),
        noise_sigma=s["noise_sigma"],
        seed=cfg["seed"],
    )


def augment_params_from(cfg: dict) -> AugmentParams | None:
    a = cfg["augment"]
    if not a["enabled"]:
        return None
    return AugmentParams(
        rotation_degrees=tuple(a["rotation_degrees"]),
        shift_x=tuple(a["shift_x"]),
        shift_y=tuple(a["shift_y"]),
        seed=cfg["seed"] + 1,
    )


def model_config_from(cfg: dict) -> ModelConfig:
    m = cfg["model"]
    g = cfg["grid"]
    return ModelConfig(
        input_height=g["image_height"],
        input_width=g["image_width"],
        grid=grid_from(cfg),
        channels=tuple(m["channels"]),
        seed=cfg["seed"] + 2,
        aux_segmentation=m["aux_segmentation"],
        head=m["head"],
    )


def loss_config_from(cfg: dict) -> LossConfig:
    l = cfg["loss"]
    return LossConfig(
        lambda_shape=l["lambda"],
        alpha_structural=l["alpha"],
        beta_segmentation=l["beta"],
        sim_on_probabilities=l["sim_on_probabilities"],
    )


def train_settings_from(cfg: dict, n_scenes: int) -> TrainSettings:
    t = cfg["train"]
    total = total_step_count(n_scenes, t["batch_size"], t["epochs"])
    optimizer = OptimizerConfig(
        kind=t["optimizer"],
        learning_rate=t["learning_rate"],
        momentum=t["momentum"],
        cosine_decay=t["cosine_decay"],
        total_steps=total if t["cosine_decay"] else 0,
    )
    return TrainSettings(
        epochs=t["epochs"],
        batch_size=t["batch_size"],
        optimizer=optimizer,
        loss=loss_config_from(cfg),
        augment_params=augment_params_from(cfg),
        shuffle_seed=cfg["seed"] + 3,
    )


def echo_config(cfg: dict, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.json"), "w") as f:
        json.dump(cfg, f, indent=2, sort_keys=True)
        f.write("\n")


# --- commands ---------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = load_config(args.config, flag_overrides(args))
    params = scene_params_from(cfg)
    grid = grid_from(cfg)
    write_dataset(params, cfg["scene"]["n_scenes"], args.out, grid.row_anchors)
    echo_config(cfg, args.out)
    print(f"wrote {cfg['scene']['n_scenes']} scenes to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config, flag_overrides(args))
    scenes = read_dataset(args.data)
    if not scenes:
        raise DataError(f"no scenes found in {args.data}")
    model = Model(model_config_from(cfg))
    settings = train_settings_from(cfg, len(scenes))
    os.makedirs(args.out, exist_ok=True)
    echo_config(cfg, args.out)
    log_path = os.path.join(args.out, "log.jsonl")
    with open(log_path, "w") as log_file:

        def log(record):
            line = json.dumps(record, sort_keys=True)
            log_file.write(line + "\n")
            print(line)

        history = fit(model, scenes, settings, log=log)
    ckpt_path = os.path.join(args.out, "model.ckpt")
    save_checkpoint(model, total_step_count(len(scenes), settings.batch_size, settings.epochs), ckpt_path)
    print(f"checkpoint: {ckpt_path} (final total loss {history[-1]['total']:.4f})")
    return 0


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    model = model_from_checkpoint(ckpt)
    scenes = read_dataset(args.data)
    if not scenes:
        raise DataError(f"no scenes found in {args.data}")
    cfg = load_config(args.config, flag_overrides(args))
    decode = cfg["eval"]["decode"]
    preds = [predict_lanes(model, img, decode=decode) for img, _ in scenes]
    gts = [lanes for _, lanes in scenes]
    report = metric_report(
        preds,
        gts,
        model.config.grid,
        pixel_threshold=cfg["eval"]["pixel_threshold"],
        width_px=cfg["eval"]["mask_width"],
        iou_threshold=cfg["eval"]["iou_threshold"],
    )
    text = json.dumps(report, indent=2, sort_keys=True)
    print(text)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text + "\n")
    return 0


LANE_COLORS = [(0.1, 0.9, 0.2), (0.95, 0.3, 0.2), (0.2, 0.4, 1.0), (1.0, 0.8, 0.1), (0.9, 0.2, 0.9)]


def draw_lanes(rgb: np.ndarray, lanes, colors=LANE_COLORS) -> None:
    height, width, _ = rgb.shape
    for i, lane in enumerate(lanes.lanes):
        if lane is None:
            continue
        color = colors[i % len(colors)]
        pts = lane.points
        for a, b in zip(pts[:-1], pts[1:]):
            n = int(max(abs(b[0] - a[0]), abs(b[1] - a[1]))) * 2 + 2
            ts = np.linspace(0.0, 1.0, n)
            xs = np.rint(a[0] + ts * (b[0] - a[0])).astype(int)
            ys = np.rint(a[1] + ts * (b[1] - a[1])).astype(int)
            keep = (xs >= 0) & (xs < width) & (ys >= 0) & (ys < height)
            rgb[ys[keep], xs[keep]] = color


def cmd_infer(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    model = model_from_checkpoint(ckpt)
    image = read_pixmap(args.image)
    if image.ndim == 3:
        image = image.mean(axis=2)
    cfg = load_config(args.config, flag_overrides(args))
    lanes = predict_lanes(model, image, decode=cfg["eval"]["decode"])
    rgb = np.repeat(image[:, :, None], 3, axis=2)
    draw_lanes(rgb, lanes)
    write_ppm(args.out, rgb)
    present = sum(1 for lane in lanes.lanes if lane is not None)
    print(f"{args.out}: {present} lane(s) drawn")
    return 0


def cmd_bench(args) -> int:
    cfg = load_config(args.config, flag_overrides(args))
    rows = [
        ("CULane  (C=4, h=28, w=150)", culane_grid(), (288, 800)),
        ("TuSimple(C=5, h=56, w=100)", tusimple_grid(), (288, 800)),
        ("current config", grid_from(cfg), (cfg["grid"]["image_height"], cfg["grid"]["image_width"])),
    ]
    print(f"{'setup':<28} {'row-anchor':>12} {'segmentation':>14}")
    for name, grid, (h, w) in rows:
        print(
            f"{name:<28} {formulation_cost(grid):>12,} "
            f"{segmentation_cost(h, w, grid.num_lanes):>14,}"
        )
    model = Model(model_config_from(cfg))
    image = np.zeros((cfg["grid"]["image_height"], cfg["grid"]["image_width"]))
    model.predict(image)  # warm up
    t0 = time.perf_counter()
    runs = 100
    for _ in range(runs):
        model.predict(image)
    mean_ms = (time.perf_counter() - t0) / runs * 1e3
    print(f"toy model eval forward: {mean_ms:.2f} ms (mean over {runs} runs; informational only)")
    return 0


def cmd_sweep(args) -> int:
    cfg = load_config(args.config, flag_overrides(args))
    cells_list = [int(c) for c in args.cells.split(",")] if args.cells else [25, 50, 100, 200]
    params = scene_params_from(cfg)
    base_grid = grid_from(cfg)
    n = cfg["scene"]["n_scenes"]
    holdout = max(n // 5, 1)
    scenes = [generate_scene(params, i, row_anchors=base_grid.row_anchors) for i in range(n + holdout)]
    train_scenes, eval_scenes = scenes[:n], scenes[n:]
    results = []
    for cells in cells_list:
        sweep_cfg = merge_config(cfg, {"grid": {"num_cells": cells}})
        grid = grid_from(sweep_cfg)
        model = Model(model_config_from(sweep_cfg))
        settings = train_settings_from(sweep_cfg, len(train_scenes))
        fit(model, train_scenes, settings)
        topk = {k: [] for k in (1, 2, 3)}
        preds = []
        for img, lanes in eval_scenes:
            p = model.predict(img)
            target = encode_targets(lanes, grid)
            for k in topk:
                topk[k].append(topk_cell_accuracy(p, target, k))
            preds.append(predict_lanes(model, img, decode=sweep_cfg["eval"]["decode"]))
        gts = [lanes for _, lanes in eval_scenes]
        rep = metric_report(preds, gts, grid, pixel_threshold=sweep_cfg["eval"]["pixel_threshold"])
        results.append(
            {
                "cells": cells,
                "top1": float(np.mean(topk[1])),
                "top2": float(np.mean(topk[2])),
                "top3": float(np.mean(topk[3])),
                "accuracy": rep["total"]["accuracy"],
            }
        )
    print(f"{'cells':>6} {'top1':>8} {'top2':>8} {'top3':>8} {'accuracy':>9}")
    for r in results:
        print(f"{r['cells']:>6} {r['top1']:>8.4f} {r['top2']:>8.4f} {r['top3']:>8.4f} {r['accuracy']:>9.4f}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        echo_config(cfg, args.out)
        with open(os.path.join(args.out, "sweep.json"), "w") as f:
            json.dump(results, f, indent=2, sort_keys=True)
            f.write("\n")
    return 0


# --- parser -----------------------------------------------------------------

class Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        raise UsageError(message)


def add_common(sub, *names):
    flags = {
        "config": lambda: sub.add_argument("--config", help="JSON config file"),
        "seed": lambda: sub.add_argument("--seed", type=int, help="master RNG seed"),
        "head": lambda: sub.add_argument(
            "--head", choices=["classification", "regression", "regression-norm"]
        ),
        "decode": lambda: sub.add_argument("--decode", choices=["argmax", "expectation"]),
        "loss": lambda: (
            sub.add_argument("--alpha", type=float, help="structural loss coefficient"),
            sub.add_argument("--beta", type=float, help="segmentation loss coefficient"),
            sub.add_argument("--lambda", dest="lambda_shape", type=float, help="shape loss coefficient"),
        ),
        "cells": lambda: sub.add_argument("--cells", help="gridding cells (sweep: comma list)"),
        "train": lambda: (
            sub.add_argument("--epochs", type=int),
            sub.add_argument("--batch", type=int),
            sub.add_argument("--lr", type=float),
            sub.add_argument("--augment", action="store_true", help="enable augmentation"),
        ),
        "scenes": lambda: sub.add_argument("--scenes", type=int, help="scene count"),
    }
    for name in names:
        flags[name]()


def build_parser() -> Parser:
    parser = Parser(prog="lanegrid", description=__doc__)
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    add_common(p, "config", "seed", "scenes")
    p.set_defaults(fn=cmd_synth)

    p = commands.add_parser("train", help="train a model on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    add_common(p, "config", "seed", "head", "decode", "loss", "train")
    p.set_defaults(fn=cmd_train)

    p = commands.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="also write the report here")
    add_common(p, "config", "decode")
    p.set_defaults(fn=cmd_eval)

    p = commands.add_parser("infer", help="overlay predictions on one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    add_common(p, "config", "decode")
    p.set_defaults(fn=cmd_infer)

    p = commands.add_parser("bench", help="cost arithmetic and toy latency")
    add_common(p, "config", "seed")
    p.set_defaults(fn=cmd_bench)

    p = commands.add_parser("sweep", help="train across gridding-cell counts")
    p.add_argument("--out", help="write sweep.json here")
    add_common(p, "config", "seed", "cells", "scenes", "train", "loss")
    p.set_defaults(fn=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError) as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return 1
    except (DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FloatingPointError as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
