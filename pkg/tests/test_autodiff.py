"""Tensor/Tape engine tests; finite differences are the reference."""

import numpy as np
import pytest

from lanegrid import autodiff as ad
from lanegrid.autodiff import Tape, Tensor


def rng(seed=0):
    return np.random.default_rng(seed)


def away_from_kinks(arr, margin=5e-2):
    # push values out of the |x| < margin band where abs/relu are non-smooth
    return arr + np.sign(arr) * margin + (arr == 0) * margin


def test_sum_backward_is_ones():
    x = Tensor(rng().normal(size=(3, 4)), requires_grad=True)
    with Tape() as tape:
        out = ad.sum(x)
    grads = tape.backward(out)
    assert np.array_equal(grads[x], np.ones((3, 4)))


def test_softmax_nll_gradient_identity():
    # d/dx of -log softmax(x)[target] is softmax(x) - onehot
    x = Tensor(rng(1).normal(size=(5,)), requires_grad=True)
    onehot = np.zeros(5)
    onehot[2] = 1.0
    with Tape() as tape:
        loss = ad.scale(ad.sum(ad.mul(ad.log_softmax_lastdim(x), Tensor(onehot))), -1.0)
    g = tape.backward(loss)[x]
    soft = np.exp(x.data - x.data.max())
    soft /= soft.sum()
    assert np.allclose(g, soft - onehot, atol=1e-12)


def test_grad_check_abs_sub_composition():
    x = Tensor(away_from_kinks(rng(2).normal(size=(3, 4))))
    err = ad.grad_check(lambda z: ad.sum(ad.abs(ad.sub(z, 0.75))), x, epsilon=1e-4)
    assert err < 1e-4


@pytest.mark.parametrize(
    "name,fn",
    [
        ("add", lambda z: ad.sum(ad.add(z, 2.5))),
        ("sub_scalar", lambda z: ad.sum(ad.sub(1.5, z))),
        ("mul", lambda z: ad.sum(ad.mul(z, z))),
        ("scale", lambda z: ad.sum(ad.scale(z, -3.0))),
        ("mean", lambda z: ad.mean(ad.mul(z, z))),
        ("abs", lambda z: ad.sum(ad.abs(z))),
        ("relu", lambda z: ad.sum(ad.relu(z))),
        ("softmax", lambda z: ad.sum(ad.mul(ad.softmax_lastdim(z), Tensor(rng(7).normal(size=(4, 6)))))),
        ("log_softmax", lambda z: ad.sum(ad.mul(ad.log_softmax_lastdim(z), Tensor(rng(8).normal(size=(4, 6)))))),
        ("reshape", lambda z: ad.sum(ad.mul(ad.reshape(z, (6, 4)), Tensor(rng(9).normal(size=(6, 4)))))),
        ("transpose", lambda z: ad.sum(ad.mul(ad.transpose(z, (1, 0)), Tensor(rng(10).normal(size=(6, 4)))))),
        ("narrow", lambda z: ad.sum(ad.abs(ad.narrow(z, 1, 1, 3)))),
        ("sum_axis", lambda z: ad.sum(ad.mul(ad.sum(z, axis=1), Tensor(rng(11).normal(size=(4,)))))),
    ],
)
def test_grad_check_elementwise_ops(name, fn):
    x = Tensor(away_from_kinks(rng(3).normal(size=(4, 6))))
    assert ad.grad_check(fn, x, epsilon=1e-4) < 1e-4, name


def test_grad_check_matmul():
    b = Tensor(rng(4).normal(size=(5, 2)))
    x = Tensor(rng(5).normal(size=(3, 5)))
    assert ad.grad_check(lambda z: ad.sum(ad.abs(ad.matmul(z, b))), x) < 1e-4
    # and with respect to the right operand
    a = Tensor(rng(6).normal(size=(3, 5)))
    y = Tensor(rng(7).normal(size=(5, 2)))
    assert ad.grad_check(lambda z: ad.sum(ad.abs(ad.matmul(a, z))), y) < 1e-4


def test_grad_check_conv2d_all_operands():
    x = Tensor(rng(8).normal(size=(2, 6, 8)))
    w = Tensor(rng(9).normal(size=(3, 2, 3, 3)))
    b = Tensor(rng(10).normal(size=(3,)))
    target = rng(11).normal(size=(3, 3, 4))

    def loss_wrt_x(z):
        return ad.sum(ad.mul(ad.conv2d(z, w, b, stride=2, padding=1), Tensor(target)))

    def loss_wrt_w(z):
        return ad.sum(ad.mul(ad.conv2d(x, z, b, stride=2, padding=1), Tensor(target)))

    def loss_wrt_b(z):
        return ad.sum(ad.mul(ad.conv2d(x, w, z, stride=2, padding=1), Tensor(target)))

    assert ad.grad_check(loss_wrt_x, x) < 1e-4
    assert ad.grad_check(loss_wrt_w, w) < 1e-4
    assert ad.grad_check(loss_wrt_b, b) < 1e-4


def test_grad_check_upsample():
    x = Tensor(rng(12).normal(size=(2, 3, 4)))
    target = rng(13).normal(size=(2, 6, 8))
    fn = lambda z: ad.sum(ad.mul(ad.upsample_nearest(z, 2), Tensor(target)))
    assert ad.grad_check(fn, x) < 1e-4


def test_conv2d_matches_direct_convolution():
    # independent oracle: explicit loops over output positions
    r = rng(14)
    x = r.normal(size=(2, 7, 9))
    w = r.normal(size=(4, 2, 3, 3))
    stride, pad = 2, 1
    out = ad.conv2d(Tensor(x), Tensor(w), stride=stride, padding=pad).data
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    ho = (xp.shape[1] - 3) // stride + 1
    wo = (xp.shape[2] - 3) // stride + 1
    expect = np.zeros((4, ho, wo))
    for co in range(4):
        for i in range(ho):
            for j in range(wo):
                patch = xp[:, i * stride : i * stride + 3, j * stride : j * stride + 3]
                expect[co, i, j] = np.sum(patch * w[co])
    assert np.allclose(out, expect, atol=1e-12)
    assert out.shape == expect.shape


def test_softmax_properties():
    x = rng(15).normal(size=(3, 7)) * 50  # large values stress stability
    y = ad.softmax_lastdim(Tensor(x)).data
    assert np.all(np.abs(y.sum(axis=-1) - 1.0) < 1e-9)
    shifted = ad.softmax_lastdim(Tensor(x + 123.0)).data
    assert np.all(np.abs(y - shifted) < 1e-9)


def test_backward_deterministic():
    def build():
        x = Tensor(rng(16).normal(size=(4, 4)), requires_grad=True)
        with Tape() as tape:
            h = ad.relu(ad.matmul(x, x))
            loss = ad.sum(ad.abs(h))
        return tape.backward(loss)[x]

    g1, g2 = build(), build()
    assert np.array_equal(g1, g2)


def test_shape_mismatch_raises():
    with pytest.raises(ValueError):
        ad.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))
    with pytest.raises(ValueError):
        ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))
    with pytest.raises(ValueError):
        ad.narrow(Tensor(np.zeros((2, 3))), 1, 2, 2)


def test_nonfinite_forward_raises():
    with pytest.raises(FloatingPointError):
        Tensor(np.array([1.0, np.nan]))
    big = Tensor(np.full((2, 2), 1e308))
    with np.errstate(over="ignore"), pytest.raises(FloatingPointError):
        ad.mul(big, big)  # overflows to inf


def test_backward_needs_scalar():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with Tape() as tape:
        y = ad.mul(x, x)
    with pytest.raises(ValueError):
        tape.backward(y)


def test_nested_tape_rejected():
    with Tape():
        with pytest.raises(RuntimeError):
            Tape().__enter__()
