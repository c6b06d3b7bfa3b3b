"""Training state, gradient routing and the alternating GAN step."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from . import losses as L
from .adam import AdamState, adam_step
from .masks import ImageBatch, MaskSpec, apply_mask
from .networks import Network, build_discriminator, build_generator, init_network
from .tensor import GradTape

log = logging.getLogger(__name__)

PHASE_GROUPS = {
    "generator": ("generator",),
    "discriminator": ("shared", "global", "patch"),
}


class NonFiniteLossError(FloatingPointError):
    pass


class StaleGradientError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    weights: L.LossWeights = L.LossWeights()
    lr_g: float = 2e-4
    lr_d: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 8
    mask: MaskSpec = MaskSpec()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mask"] = str(self.mask)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["weights"] = L.LossWeights(**d["weights"])
        d["mask"] = MaskSpec.parse(d["mask"])
        return cls(**d)


@dataclass
class LossReport:
    step: int
    l_rec: float
    l_g_adv: float
    l_p_adv: float
    l_joint: float
    d_global: float = 0.0
    d_patch: float = 0.0

    def values(self) -> tuple:
        return (self.l_rec, self.l_g_adv, self.l_p_adv, self.l_joint, self.d_global, self.d_patch)


def default_net_config(variant="dres", disc="pggan", image_size=32, in_channels=3, base_channels=16,
                       disc_channels=16, num_residual=4, shared_depth=3, upsample="iconv",
                       encoder_norm=False) -> dict:
    return {
        "generator": {"variant": variant, "in_channels": in_channels, "base_channels": base_channels,
                      "num_residual": num_residual, "upsample": upsample, "encoder_norm": encoder_norm},
        "discriminator": {"kind": disc, "in_channels": in_channels, "base_channels": disc_channels,
                          "shared_depth": shared_depth, "image_size": image_size},
    }


@dataclass
class TrainState:
    generator: Network
    discriminator: Optional[Network]
    net_config: dict
    config: TrainConfig = TrainConfig()
    adam: AdamState = field(default_factory=AdamState)
    step: int = 0
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    history: list = field(default_factory=list)

    @classmethod
    def create(cls, net_config: dict, config: TrainConfig = TrainConfig(), seed: int = 0,
               dtype=np.float32) -> "TrainState":
        seeds = np.random.SeedSequence(seed).spawn(3)
        gen = init_network(build_generator(**net_config["generator"]), np.random.default_rng(seeds[0]), dtype)
        disc = None
        if net_config.get("discriminator"):
            disc = init_network(build_discriminator(**net_config["discriminator"]),
                                np.random.default_rng(seeds[1]), dtype)
        return cls(gen, disc, net_config, config, rng=np.random.default_rng(seeds[2]))

    def networks(self) -> list:
        return [n for n in (self.generator, self.discriminator) if n is not None]

    def all_params(self) -> dict:
        out = {}
        for net in self.networks():
            out.update(net.params)
        return out

    def snapshot(self):
        return ({k: p.data.copy() for k, p in self.all_params().items()}, self.adam.copy())

    def restore(self, snap) -> None:
        data, adam = snap
        for k, p in self.all_params().items():
            p.data = data[k]
            p.grad = None
        self.adam = adam


def route_and_apply(state: TrainState, phase: str) -> None:
    """Apply Adam to the parameter groups owned by ``phase`` and clear their grads.

    The discriminator phase expects grads from backward of
    ``d_global + d_patch``: unshared global-head layers then only see the
    global loss, unshared patch-head layers only the patch loss, and the
    shared trunk sees their sum.
    """
    if phase not in PHASE_GROUPS:
        raise ValueError(f"phase must be one of {sorted(PHASE_GROUPS)}, got {phase!r}")
    groups = PHASE_GROUPS[phase]
    params = [p for net in state.networks() for p in net.parameters() if p.group in groups]
    if not any(p.grad is not None for p in params):
        raise StaleGradientError(f"no gradients available for the {phase} phase; run backward first")
    cfg = state.config
    lr = cfg.lr_g if phase == "generator" else cfg.lr_d
    adam_step(state.adam, params, lr, cfg.beta1, cfg.beta2, cfg.eps)
    for p in params:
        p.grad = None


def _value(t) -> float:
    return 0.0 if t is None else float(t.item())


def _check_finite(values, what: str) -> None:
    if not np.all(np.isfinite(values)):
        raise NonFiniteLossError(f"non-finite {what}: {values}")


def train_step(state: TrainState, batch: ImageBatch, weights: Optional[L.LossWeights] = None) -> LossReport:
    """One discriminator update followed by one generator update.

    On a non-finite loss or parameter the state is rolled back and
    :class:`NonFiniteLossError` raised.
    """
    w = weights or state.config.weights
    gen, disc = state.generator, state.discriminator
    snap = state.snapshot()
    for net in state.networks():
        net.zero_grad()
    try:
        g_tape = GradTape()
        with g_tape:
            y = gen(batch.x_corrupted)
            fake = batch.composite(y)

        d_global = d_patch = None
        if disc is not None:
            with GradTape() as d_tape:
                real_out = disc(batch.x)
                fake_out = disc(fake.detach())
                adv = L.adversarial_losses(real_out, fake_out)
                d_global, d_patch = adv.d_global, adv.d_patch
                d_total = L.joint_loss(None, d_global, d_patch, L.LossWeights(0.0, 1.0, 1.0))
            _check_finite([_value(d_global), _value(d_patch)], "discriminator loss")
            d_tape.backward(d_total)
            d_tape.reset()
            route_and_apply(state, "discriminator")

        with g_tape:
            l_rec = L.reconstruction_loss(y, batch.x)
            g_global = g_patch = None
            if disc is not None:
                fake_out = disc(fake)
                g_global = L.generator_adversarial_loss(fake_out.global_score) if fake_out.global_score is not None else None
                g_patch = L.generator_adversarial_loss(fake_out.patch_score) if fake_out.patch_score is not None else None
            total = L.joint_loss(l_rec, g_global, g_patch, w)
        report = LossReport(state.step, _value(l_rec), _value(g_global), _value(g_patch), _value(total),
                            _value(d_global), _value(d_patch))
        _check_finite(report.values(), "loss")
        g_tape.backward(total)
        g_tape.reset()
        route_and_apply(state, "generator")
        if disc is not None:
            disc.zero_grad()
        _check_finite([float(np.sum(p.data)) for p in state.all_params().values()], "parameter")
    except NonFiniteLossError:
        state.restore(snap)
        raise
    state.step += 1
    state.history.append(report)
    return report


def sample_batch(state: TrainState, dataset) -> ImageBatch:
    """Draw images and masks from the state's RNG, so resumed runs replay identically."""
    idx = state.rng.integers(0, len(dataset), size=state.config.batch_size)
    x = dataset.images[idx]
    return apply_mask(x, state.config.mask, state.rng)


def fit(state: TrainState, dataset, steps: int,
        on_step: Optional[Callable[[TrainState, LossReport, ImageBatch], None]] = None) -> list:
    """Run ``steps`` training steps; returns their loss reports."""
    reports = []
    for _ in range(steps):
        batch = sample_batch(state, dataset)
        report = train_step(state, batch)
        reports.append(report)
        if on_step is not None:
            on_step(state, report, batch)
    return reports
