import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evfocal import nn
from evfocal.depthnet import (DepthNet, DepthNetConfig, TrainConfig, augment, finetune, fit, loss,
                              rotate_flip, train)

from oracles import central_difference, two_loop_mean

SMALL = DepthNetConfig(input_channels=2, base_channels=4, depth_levels=2, image_size=8)


def _toy_dataset(n, cfg=SMALL, seed=0):
    """Targets are a fixed linear function of the input so a net can fit them."""
    rng = np.random.default_rng(seed)
    S = cfg.image_size
    data = []
    for _ in range(n):
        x = rng.uniform(-1, 1, size=(cfg.input_channels, S, S))
        data.append((x, 1.0 + 0.5 * x[0] - 0.25 * x[-1]))
    return data


def test_config_validation():
    with pytest.raises(ValueError):
        DepthNetConfig(image_size=60)
    with pytest.raises(ValueError):
        DepthNetConfig(kernel_size=4)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)


def test_output_and_bottleneck_shapes_desk_scale():
    cfg = DepthNetConfig(base_channels=4)
    out, bott = DepthNet(cfg)(np.zeros((2, 5, 64, 64)), return_bottleneck=True)
    assert out.shape == (2, 1, 64, 64)
    assert bott.shape == (2, 64, 4, 4)
    assert DepthNetConfig().bottleneck_shape() == (512, 4, 4)


def test_bottleneck_shape_at_full_scale():
    cfg = DepthNetConfig(image_size=256)
    assert cfg.bottleneck_shape() == (512, 16, 16)
    assert cfg.widths() == [32, 64, 128, 256, 512]


def test_rejects_wrong_input_shape():
    with pytest.raises(ValueError):
        DepthNet(SMALL)(np.zeros((1, 3, 8, 8)))
    with pytest.raises(ValueError):
        DepthNet(SMALL)(np.zeros((1, 2, 16, 16)))


def test_zero_initialized_output_layer_gives_zero():
    net = DepthNet(SMALL, seed=1)
    net.params["out.w"].data[:] = 0
    pred = net.predict(np.random.default_rng(0).normal(size=(3, 2, 8, 8)))
    assert np.array_equal(pred, np.zeros((3, 8, 8)))


def test_zero_output_layer_predicts_its_bias():
    net = DepthNet(SMALL, seed=1)
    net.params["out.w"].data[:] = 0
    net.params["out.b"].data[:] = 1.7
    pred = net.predict(np.random.default_rng(0).normal(size=(2, 8, 8)))
    assert np.array_equal(pred, np.full((8, 8), 1.7))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_loss_matches_two_loop_oracle(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(5, 6)), rng.normal(size=(5, 6))
    assert loss(a, b) == pytest.approx(two_loop_mean(a, b, lambda d: d * d), rel=1e-12)
    assert loss(a, a) == 0.0


def test_constant_difference_loss():
    assert loss(np.full((3, 7), 1.5), np.ones((3, 7))) == 0.25


def test_rotate_flip_identities():
    a = np.arange(2 * 16, dtype=float).reshape(2, 4, 4)
    assert np.array_equal(rotate_flip(a, 0, False), a)
    assert np.array_equal(rotate_flip(rotate_flip(a, 2, False), 2, False), a)
    assert np.array_equal(rotate_flip(a, 4, False), a)
    assert np.array_equal(rotate_flip(rotate_flip(a, 0, True), 0, True), a)
    assert np.array_equal(rotate_flip(rotate_flip(a, 1, False), 3, False), a)
    with pytest.raises(ValueError):
        rotate_flip(np.zeros((3, 4)), 1, False)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(0, 3), st.booleans())
def test_pixelwise_metrics_invariant_under_rotation(seed, k, flip):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(6, 6)), rng.normal(size=(6, 6))
    ra, rb = rotate_flip(a, k, flip), rotate_flip(b, k, flip)
    assert np.mean(np.abs(ra - rb)) == pytest.approx(np.mean(np.abs(a - b)), rel=1e-12)
    assert loss(ra, rb) == pytest.approx(loss(a, b), rel=1e-12)


def test_augment_applies_the_same_transform_to_stack_and_target():
    rng = np.random.default_rng(0)
    gt = rng.normal(size=(8, 8))
    stack = np.stack([gt, 2 * gt])
    for seed in range(8):
        s, g = augment(stack, gt, seed)
        assert np.array_equal(s[0], g) and np.array_equal(s[1], 2 * g)


def test_end_to_end_gradient_matches_finite_differences():
    cfg = DepthNetConfig(input_channels=2, base_channels=2, depth_levels=2, image_size=8)
    net = DepthNet(cfg, seed=3)
    rng = np.random.default_rng(3)
    x, y = rng.normal(size=(1, 2, 8, 8)), rng.normal(size=(1, 1, 8, 8))
    f = lambda: nn.mse_loss(net(x), y)
    f().backward()
    for name in ("head.w", "enc2.w", "mid1.b", "dec1.w", "out.b"):
        p = net.params[name]
        flat = p.data.reshape(-1)
        for i in range(min(4, flat.size)):
            fd = central_difference(lambda: float(f().data), flat, i, eps=1e-6)
            assert abs(fd - p.grad.reshape(-1)[i]) <= 1e-6 * max(1, abs(fd)), name


def test_overfits_a_small_dataset():
    data = _toy_dataset(4)
    res = train(data, TrainConfig(epochs=150, lr=1e-2, batch_size=4, augment=False), SMALL)
    first, last = res.history[0]["loss"], res.history[-1]["loss"]
    assert last < 0.1 * first


def test_single_sample_overfits_in_500_steps():
    res = train(_toy_dataset(1), TrainConfig(epochs=500, lr=1e-3, batch_size=1, augment=False),
                SMALL)
    assert res.step_losses[-1] < 1e-3


def test_zero_learning_rate_leaves_weights_unchanged():
    net = DepthNet(SMALL, seed=2)
    before = {k: v.copy() for k, v in net.state_dict().items()}
    res = fit(net, _toy_dataset(3), TrainConfig(epochs=3, lr=0.0, augment=False))
    assert all(np.array_equal(before[k], v) for k, v in net.state_dict().items())
    train_losses = [r["loss"] for r in res.history]
    assert train_losses == [train_losses[0]] * 3


def test_training_is_deterministic():
    cfg = TrainConfig(epochs=3, lr=1e-3, batch_size=2, seed=5)
    a = train(_toy_dataset(5), cfg, SMALL)
    b = train(_toy_dataset(5), cfg, SMALL)
    assert a.step_losses == b.step_losses
    assert all(np.array_equal(a.net.state_dict()[k], b.net.state_dict()[k]) for k in a.net.params)


def test_zero_epoch_finetune_returns_identical_weights():
    net = DepthNet(SMALL, seed=4)
    tuned = finetune(net, _toy_dataset(2), TrainConfig(epochs=0)).net
    assert tuned is not net
    assert all(np.array_equal(net.state_dict()[k], tuned.state_dict()[k]) for k in net.params)


def test_history_rows_and_validation_split():
    res = train(_toy_dataset(4), TrainConfig(epochs=2, lr=1e-3), SMALL, val=_toy_dataset(2, seed=1))
    assert [(r["epoch"], r["split"]) for r in res.history] == [(0, "train"), (0, "val"),
                                                              (1, "train"), (1, "val")]


def test_smoothed_training_loss_decreases():
    res = train(_toy_dataset(8), TrainConfig(epochs=40, lr=3e-3, batch_size=4), SMALL)
    losses = np.array(res.step_losses)
    window = 10
    smooth = np.convolve(losses, np.ones(window) / window, mode="valid")
    assert smooth[-1] < 0.5 * smooth[0]


def test_empty_dataset_rejected():
    with pytest.raises(ValueError):
        train([], TrainConfig(), SMALL)


def test_float32_forward_agrees_with_float64():
    net64 = DepthNet(SMALL, seed=6)
    net32 = DepthNet.from_state(DepthNetConfig(**{**SMALL.__dict__, "dtype": "float32"}), net64.state_dict())
    x = np.random.default_rng(1).normal(size=(2, 8, 8))
    assert np.allclose(net32.predict(x.astype("float32")), net64.predict(x), atol=1e-5)
