import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pggan import losses as L
from pggan import ops
from pggan.masks import InfeasibleMaskError, MaskSpec, apply_mask, corrupt, make_masks
from pggan.networks import DiscriminatorOutput
from pggan.tensor import GradTape, Tensor
from pggan.training import (NonFiniteLossError, StaleGradientError, TrainConfig, TrainState, default_net_config,
                            fit, route_and_apply, sample_batch, train_step)
from pggan.data import Dataset


def score(v, n=4):
    return Tensor(np.full((n, 1, 1, 1), v))


def tiny_state(disc="pggan", seed=0, **cfg):
    net = default_net_config("dres", disc, 32, base_channels=4, disc_channels=4, num_residual=2)
    config = replace(TrainConfig(batch_size=2), **cfg)
    return TrainState.create(net, config, seed)


def tiny_data(n=8, seed=0):
    rng = np.random.default_rng(seed)
    return Dataset(rng.uniform(-1, 1, size=(n, 3, 32, 32)).astype(np.float32), "test", seed)


# ---------------------------------------------------------------------------
# masks

def test_central_square_geometry():
    m = make_masks(MaskSpec("central_square", (0.25, 0.25)), 1, 64, 64, np.random.default_rng(0))[0, 0]
    rows, cols = np.nonzero(m)
    assert (rows.min(), rows.max(), cols.min(), cols.max()) == (16, 47, 16, 47)
    assert m.sum() == 32 * 32


@pytest.mark.parametrize("kind", ["central_square", "random_rect", "free_blob"])
def test_mask_invariants(kind):
    spec = MaskSpec(kind, (0.1, 0.3))
    masks = make_masks(spec, 6, 32, 32, np.random.default_rng(1))
    assert set(np.unique(masks)) <= {0.0, 1.0}
    frac = masks.mean(axis=(1, 2, 3))
    assert np.all(frac >= 0.1 - 1e-9) and np.all(frac <= 0.3 + 1e-9)
    again = make_masks(spec, 6, 32, 32, np.random.default_rng(1))
    np.testing.assert_array_equal(masks, again)


def test_infeasible_mask_rejected():
    with pytest.raises(InfeasibleMaskError):
        make_masks(MaskSpec("central_square", (0.3, 0.31)), 1, 4, 4, np.random.default_rng(0))
    with pytest.raises(ValueError):
        MaskSpec("central_square", (0.0, 0.5))


def test_corrupt_extremes_and_composite():
    x = np.random.default_rng(0).uniform(-1, 1, size=(2, 3, 8, 8))
    full = corrupt(x, np.ones((2, 1, 8, 8)), fill=0.0)
    np.testing.assert_array_equal(full.x_corrupted, 0.0)
    empty = corrupt(x, np.zeros((2, 1, 8, 8)))
    np.testing.assert_array_equal(empty.x_corrupted, x)
    b = apply_mask(x, MaskSpec(), np.random.default_rng(0))
    y = np.random.default_rng(1).uniform(-1, 1, size=x.shape)
    comp = b.composite(y)
    keep = np.broadcast_to(b.mask == 0, x.shape)
    np.testing.assert_array_equal(comp[keep], x[keep])
    np.testing.assert_array_equal(comp[~keep], y[~keep])
    with pytest.raises(ValueError):
        apply_mask(x * 3, MaskSpec(), np.random.default_rng(0))


def test_mask_spec_text_round_trip():
    for text in ("central_square:0.25:0", "free_blob:0.1-0.3:0.5"):
        assert str(MaskSpec.parse(text)) == text


# ---------------------------------------------------------------------------
# losses

def test_reconstruction_examples():
    x = np.random.default_rng(0).uniform(-1, 1, size=(2, 3, 4, 4))
    assert L.reconstruction_loss(x, x).item() == 0.0
    assert L.reconstruction_loss(x + 0.5, x).item() == 0.5
    y = np.random.default_rng(1).normal(size=(2, 1, 2, 2))
    x = np.random.default_rng(2).normal(size=(2, 1, 2, 2))
    brute = sum(abs(y[n, c, i, j] - x[n, c, i, j]) for n in range(2) for c in range(1) for i in range(2)
                for j in range(2)) / 8
    assert L.reconstruction_loss(y, x).item() == pytest.approx(brute, abs=1e-15)
    with pytest.raises(ValueError):
        L.reconstruction_loss(y, x[:1])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**16))
def test_reconstruction_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    y, x = rng.normal(size=(2, 3, 4, 4)), rng.normal(size=(2, 3, 4, 4))
    perm = rng.permutation(y.size)
    a = L.reconstruction_loss(y, x).item()
    b = L.reconstruction_loss(y.ravel()[perm].reshape(y.shape), x.ravel()[perm].reshape(x.shape)).item()
    assert a == pytest.approx(b, rel=1e-12)


def test_adversarial_examples():
    assert L.discriminator_loss(score(0.5), score(0.5)).item() == pytest.approx(2 * math.log(2), abs=1e-12)
    assert L.generator_adversarial_loss(score(0.5)).item() == pytest.approx(math.log(2), abs=1e-12)
    assert L.discriminator_loss(score(1 - 1e-9), score(1e-9)).item() < 1e-6
    # saturated scores stay finite thanks to the log floor
    assert np.isfinite(L.discriminator_loss(score(0.0), score(1.0)).item())


@settings(max_examples=30, deadline=None)
@given(st.floats(0.001, 0.999), st.floats(0.001, 0.999))
def test_adversarial_non_negative(r, f):
    assert L.discriminator_loss(score(r), score(f)).item() >= 0
    assert L.generator_adversarial_loss(score(f)).item() >= 0


def test_adversarial_losses_per_head():
    real = DiscriminatorOutput(score(0.5), None)
    fake = DiscriminatorOutput(score(0.5), None)
    adv = L.adversarial_losses(real, fake)
    assert adv.d_patch is None and adv.g_patch is None
    assert adv.d_global.item() == pytest.approx(2 * math.log(2))


def test_joint_loss_examples():
    assert L.joint_loss(0.2, 0.7, 0.7) == pytest.approx(0.2025, abs=1e-12)
    assert L.joint_loss(0.3, 5.0, 9.0, L.LossWeights(1, 0, 0)) == 0.3
    rng = np.random.default_rng(0)
    a, b, c, d = rng.normal(size=4)
    f = lambda v: L.joint_loss(v, b, c)  # noqa: E731
    # affine in each argument: f(a) + f(d) = f((a+d)/2) * 2
    assert f(a) + f(d) == pytest.approx(2 * f((a + d) / 2), abs=1e-12)
    with pytest.raises(ValueError):
        L.LossWeights(-0.1, 0.5, 0.6)


# ---------------------------------------------------------------------------
# routing and steps

def _disc_backward(state, loss_names, x):
    disc = state.discriminator
    disc.zero_grad()
    with GradTape() as tape:
        out = disc(x)
        fake = disc(np.zeros_like(x))
        adv = L.adversarial_losses(out, fake)
        terms = [getattr(adv, n) for n in loss_names]
        total = terms[0] if len(terms) == 1 else ops.add(*terms)
    tape.backward(total)
    return {k: (None if p.grad is None else p.grad.copy()) for k, p in disc.params.items()}


def test_patch_loss_only_leaves_global_head_unchanged():
    state = tiny_state(seed=1)
    x = tiny_data().images[:2]
    # warm the optimizer so momentum is non-zero everywhere
    _disc_backward(state, ["d_global", "d_patch"], x)
    route_and_apply(state, "discriminator")
    before = {k: p.data.copy() for k, p in state.discriminator.params.items()}
    grads = _disc_backward(state, ["d_patch"], x)
    assert all(grads[k] is None for k in before if k.startswith("global."))
    route_and_apply(state, "discriminator")
    for k, p in state.discriminator.params.items():
        if k.startswith("global."):
            assert np.array_equal(p.data, before[k]), k
        elif k.startswith(("patch.", "trunk.")):
            assert not np.array_equal(p.data, before[k]), k


def test_generator_phase_leaves_discriminator_unchanged():
    state = tiny_state()
    before = {k: p.data.copy() for k, p in state.discriminator.params.items()}
    batch = sample_batch(state, tiny_data())
    with GradTape() as tape:
        y = state.generator(batch.x_corrupted)
        out = state.discriminator(batch.composite(y))
        loss = L.generator_adversarial_loss(out.global_score)
    tape.backward(loss)
    route_and_apply(state, "generator")
    for k, p in state.discriminator.params.items():
        np.testing.assert_array_equal(p.data, before[k])


def test_route_without_grads_rejected():
    state = tiny_state()
    with pytest.raises(StaleGradientError):
        route_and_apply(state, "discriminator")
    with pytest.raises(ValueError):
        route_and_apply(state, "critic")


def test_train_step_report_and_determinism():
    data = tiny_data()
    a, b = tiny_state(seed=3), tiny_state(seed=3)
    ra, rb = fit(a, data, 3), fit(b, data, 3)
    assert [r.values() for r in ra] == [r.values() for r in rb]
    assert all(np.isfinite(r.values()).all() for r in ra)
    assert ra[-1].step == 2 and a.step == 3


def test_pure_l1_when_adversarial_weights_zero():
    state = tiny_state(weights=L.LossWeights(1.0, 0.0, 0.0))
    before = {k: p.data.copy() for k, p in state.discriminator.params.items()}
    batch = sample_batch(state, tiny_data())
    r = train_step(state, batch)
    assert r.l_joint == pytest.approx(r.l_rec, abs=1e-7)
    # the discriminator moved only in its own phase, never in the generator phase
    d_after_d_phase = {k: p.data.copy() for k, p in state.discriminator.params.items()}
    assert any(not np.array_equal(before[k], d_after_d_phase[k]) for k in before)


def test_l1_regression_decreases_on_constant_dataset():
    images = np.stack([np.full((3, 32, 32), v, np.float32) for v in (-0.6, -0.2, 0.3, 0.7)])
    data = Dataset(images, "const", 0)
    net = default_net_config("dres", "pggan", 32, base_channels=4, disc_channels=4, num_residual=2)
    net["discriminator"] = None
    state = TrainState.create(net, TrainConfig(batch_size=4, lr_g=1e-3), 0)
    reports = fit(state, data, 200)
    assert reports[-1].l_rec < reports[0].l_rec


def test_nan_step_rolls_back():
    state = tiny_state()
    batch = sample_batch(state, tiny_data())
    snap = {k: p.data.copy() for k, p in state.all_params().items()}
    batch.x_corrupted = batch.x_corrupted.copy()
    batch.x_corrupted[0, 0, 0, 0] = np.nan
    with pytest.raises(NonFiniteLossError):
        train_step(state, batch)
    assert state.step == 0 and not state.history
    for k, p in state.all_params().items():
        np.testing.assert_array_equal(p.data, snap[k])
