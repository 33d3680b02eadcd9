"""Model, optimizer, train_step, and checkpoint tests."""

import numpy as np
import pytest

from lanegrid import autodiff as ad
from lanegrid.errors import DataError
from lanegrid.grid import GridTarget, RowAnchorGrid, encode_targets
from lanegrid.losses import LossConfig, total_loss
from lanegrid.model import (
    Checkpoint,
    Model,
    ModelConfig,
    Optimizer,
    OptimizerConfig,
    decode_regression,
    load_checkpoint,
    model_from_checkpoint,
    regression_loss,
    save_checkpoint,
    train_step,
)
from lanegrid.synth import SceneParams, generate_scene, render_seg_target
from lanegrid.train import TrainSettings, fit

GRID = RowAnchorGrid(64, 160, tuple(range(24, 64, 5)), 20, 2)


def desk_model(seed=0, aux=True, head="classification"):
    return Model(ModelConfig(64, 160, GRID, seed=seed, aux_segmentation=aux, head=head))


def micro_setup(seed=0):
    grid = RowAnchorGrid(8, 16, (2.0, 3.0, 4.0, 5.0, 6.0), 8, 2)
    cfg = ModelConfig(8, 16, grid, channels=(2, 3), seed=seed, aux_segmentation=True)
    return Model(cfg), grid


def scene_batch(n=2, seed=0):
    params = SceneParams(seed=seed)
    batch = []
    for i in range(n):
        img, lanes = generate_scene(params, i, row_anchors=GRID.row_anchors)
        target = encode_targets(lanes, GRID)
        seg = render_seg_target(lanes, 64, 160)
        batch.append((img, target, seg))
    return batch


# --- forward contracts ------------------------------------------------------

def test_forward_shapes_and_aux():
    net = desk_model()
    img = np.random.default_rng(0).uniform(size=(64, 160))
    p, seg = net.forward(img, mode="train")
    assert p.shape == (2, 8, 21)
    assert seg.shape == (3, 64, 160)
    p2, seg2 = net.forward(img, mode="eval")
    assert seg2 is None
    assert np.array_equal(p.data, p2.data)  # deterministic forward


def test_forward_input_validation():
    net = desk_model()
    with pytest.raises(ValueError):
        net.forward(np.zeros((32, 160)))
    with pytest.raises(ValueError):
        net.forward(np.full((64, 160), 1.5))
    with pytest.raises(ValueError):
        net.forward(np.zeros((64, 160)), mode="test")
    with pytest.raises(ValueError):
        ModelConfig(63, 160, GRID)  # not divisible by stride


def test_aux_head_does_not_affect_eval_outputs():
    img = np.random.default_rng(1).uniform(size=(64, 160))
    with_aux = desk_model(seed=4, aux=True)
    without = desk_model(seed=4, aux=False)
    # shared layers draw identical init values; seg params are drawn last
    for name, p in without.params.items():
        assert np.array_equal(p.data, with_aux.params[name].data)
    assert np.array_equal(with_aux.predict(img), without.predict(img))


def test_parameter_budget_under_one_million():
    assert desk_model().num_parameters < 1_000_000


# --- end-to-end gradients ---------------------------------------------------

def test_end_to_end_gradient_check_micro_config():
    net, grid = micro_setup(seed=3)
    rng = np.random.default_rng(5)
    img = rng.uniform(0.1, 0.9, size=(8, 16))
    target = GridTarget(rng.integers(1, grid.num_cells + 2, size=(2, 5)), grid.num_cells)
    seg_target = rng.integers(0, 3, size=(8, 16))
    cfg = LossConfig()

    def loss_with(name, z):
        saved = net.params[name]
        net.params = dict(net.params, **{name: z})
        try:
            p, seg = net.forward(img, mode="train")
            return total_loss(p, target, cfg, seg, seg_target)
        finally:
            net.params = dict(net.params, **{name: saved})

    for name in net.params:
        err = ad.grad_check(lambda z, n=name: loss_with(n, z), net.params[name], epsilon=1e-4)
        assert err < 1e-3, f"{name}: {err}"


# --- training behaviour -----------------------------------------------------

def test_zero_learning_rate_keeps_parameters():
    net = desk_model(seed=1)
    before = {k: v.data.copy() for k, v in net.params.items()}
    opt = Optimizer(OptimizerConfig(kind="sgd", learning_rate=0.0, cosine_decay=False))
    train_step(net, scene_batch(2), opt, LossConfig(), step=0)
    for k, v in net.params.items():
        assert np.array_equal(v.data, before[k])


def test_alpha_beta_zero_is_pure_classification():
    net = desk_model(seed=2)
    opt = Optimizer(OptimizerConfig(kind="sgd", learning_rate=0.01, cosine_decay=False))
    comps = train_step(
        net, scene_batch(2), opt,
        LossConfig(alpha_structural=0.0, beta_segmentation=0.0), step=0,
    )
    assert comps["sim"] == 0.0 and comps["shp"] == 0.0 and comps["seg"] == 0.0
    assert np.isclose(comps["total"], comps["cls"])


def overfit(head, steps=50):
    net = desk_model(seed=6, aux=False, head=head)
    batch = scene_batch(4, seed=9)
    if head != "classification":
        batch = [(img, tgt, None) for img, tgt, _ in batch]
    opt = Optimizer(OptimizerConfig(kind="adam", learning_rate=0.003, cosine_decay=False))
    cfg = LossConfig(alpha_structural=0.0, beta_segmentation=0.0)
    first = train_step(net, batch, opt, cfg, 0)["total"]
    last = first
    for step in range(1, steps):
        last = train_step(net, batch, opt, cfg, step)["total"]
    return first, last


def test_overfit_smoke_classification():
    first, last = overfit("classification")
    assert last < 0.10 * first, (first, last)


def test_overfit_smoke_regression():
    first, last = overfit("regression")
    assert last < 0.10 * first, (first, last)


def test_training_trajectory_bitwise_reproducible():
    def trajectory():
        net = desk_model(seed=7)
        scenes = [
            generate_scene(SceneParams(seed=8), i, row_anchors=GRID.row_anchors)
            for i in range(8)
        ]
        settings = TrainSettings(
            epochs=2, batch_size=4,
            optimizer=OptimizerConfig(kind="sgd", learning_rate=0.02, cosine_decay=False),
            loss=LossConfig(), shuffle_seed=11,
        )
        fit(net, scenes, settings)
        return net

    a, b = trajectory(), trajectory()
    for name in a.params:
        assert np.array_equal(a.params[name].data, b.params[name].data), name


def test_nonfinite_loss_aborts_training():
    # alternating +/-1e308 head biases overflow the adjacent-row difference
    net = desk_model(seed=1)
    bias = net.params["head_b"].data.copy()
    bias[0::2] = 1e308
    bias[1::2] = -1e308
    net.params = dict(
        net.params, head_b=ad.Tensor(bias, requires_grad=True, name="head_b")
    )
    opt = Optimizer(OptimizerConfig(kind="sgd", learning_rate=0.01, cosine_decay=False))
    with np.errstate(all="ignore"), pytest.raises(FloatingPointError):
        train_step(net, scene_batch(1), opt, LossConfig(), 0)


# --- regression head --------------------------------------------------------

def test_regression_head_shape_and_decode():
    net = desk_model(head="regression", aux=False)
    img = np.random.default_rng(3).uniform(size=(64, 160))
    out, seg = net.forward(img, mode="train")
    assert out.shape == (2, 8, 3)
    assert seg is None  # regression comparator has no aux branch
    loc = decode_regression(out.data, GRID, normalized=False)
    assert loc.locations.shape == (2, 8)
    sel = loc.presence
    assert np.all(loc.locations[sel] >= 1.0) and np.all(loc.locations[sel] <= 20.0)


def test_regression_norm_scales_targets():
    # saturated outputs: normalized head emitting cell/w must give zero L1
    target = GridTarget(np.array([[4, 8], [12, 16]]), 20)
    out = np.zeros((2, 2, 3))
    out[:, :, 0] = target.classes / 20.0
    out[:, :, 2] = 50.0  # presence logit says "lane"
    value = regression_loss(ad.Tensor(out), target, normalized=True).item()
    assert value < 1e-12
    # the plain head would be off by (1 - 1/w) * cell on every anchor
    plain = regression_loss(ad.Tensor(out), target, normalized=False).item()
    assert plain > 1.0


def test_regression_loss_gradient():
    rng = np.random.default_rng(13)
    target = GridTarget(rng.integers(1, 22, size=(2, 8)), 20)
    x = ad.Tensor(rng.normal(size=(2, 8, 3)) + 0.3)
    err = ad.grad_check(lambda z: regression_loss(z, target, False), x, epsilon=1e-4)
    assert err < 1e-4


# --- optimizer ---------------------------------------------------------------

def test_cosine_decay_schedule():
    opt = Optimizer(OptimizerConfig(kind="sgd", learning_rate=0.1, cosine_decay=True, total_steps=100))
    assert np.isclose(opt.learning_rate_at(0), 0.1)
    assert np.isclose(opt.learning_rate_at(50), 0.05)
    assert opt.learning_rate_at(100) < 1e-12
    with pytest.raises(ValueError):
        OptimizerConfig(kind="sgd", cosine_decay=True, total_steps=0)
    with pytest.raises(ValueError):
        OptimizerConfig(kind="rmsprop", cosine_decay=False)


def test_adam_step_matches_reference():
    # one Adam step against the textbook update computed by hand
    p0 = np.array([1.0, -2.0])
    g = np.array([0.5, 0.25])
    cfg = OptimizerConfig(kind="adam", learning_rate=0.1, cosine_decay=False)
    opt = Optimizer(cfg)
    params = {"w": ad.Tensor(p0, requires_grad=True, name="w")}
    new = opt.apply(params, {"w": g}, step=0)["w"]
    m = 0.1 * g
    v = 0.001 * g * g
    mhat = m / 0.1
    vhat = v / 0.001
    expect = p0 - 0.1 * mhat / (np.sqrt(vhat) + 1e-8)
    assert np.allclose(new, expect, atol=1e-12)


# --- checkpoints -------------------------------------------------------------

def test_checkpoint_roundtrip_bitwise(tmp_path):
    net = desk_model(seed=9)
    a = tmp_path / "a.ckpt"
    b = tmp_path / "b.ckpt"
    save_checkpoint(net, 17, a)
    ck = load_checkpoint(a)
    assert ck.step == 17 and ck.version == 1
    save_checkpoint(model_from_checkpoint(ck), ck.step, b)
    assert a.read_bytes() == b.read_bytes()


def test_checkpoint_bad_files(tmp_path):
    net = desk_model(seed=9)
    path = tmp_path / "m.ckpt"
    save_checkpoint(net, 3, path)
    blob = path.read_bytes()

    truncated = tmp_path / "t.ckpt"
    truncated.write_bytes(blob[: len(blob) // 2])
    with pytest.raises(DataError):
        load_checkpoint(truncated)

    alien = tmp_path / "alien.ckpt"
    alien.write_bytes(b"GARBAGE" + blob)
    with pytest.raises(DataError):
        load_checkpoint(alien)

    versioned = tmp_path / "v.ckpt"
    bad = bytearray(blob)
    bad[8] = 99  # bump the little-endian version field
    versioned.write_bytes(bytes(bad))
    with pytest.raises(DataError, match="version"):
        load_checkpoint(versioned)
