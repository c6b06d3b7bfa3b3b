"""Reconstruction, adversarial and joint losses."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from . import ops
from .networks import DiscriminatorOutput
from .tensor import Tensor

LOG_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    rec: float = 0.995
    g_adv: float = 0.0025
    p_adv: float = 0.0025

    def __post_init__(self):
        if min(self.rec, self.g_adv, self.p_adv) < 0:
            raise ValueError(f"loss weights must be non-negative, got {self}")


@dataclass
class AdversarialLosses:
    d_global: Optional[Tensor]
    d_patch: Optional[Tensor]
    g_global: Optional[Tensor]
    g_patch: Optional[Tensor]


def reconstruction_loss(y, x) -> Tensor:
    """Mean absolute error over all samples, channels and pixels."""
    y = y if isinstance(y, Tensor) else Tensor(y)
    x_shape = x.shape
    if y.shape != tuple(x_shape):
        raise ValueError(f"reconstruction_loss shape mismatch: y {list(y.shape)} vs x {list(x_shape)}")
    return ops.mean(ops.absolute(ops.sub(y, x)))


def discriminator_loss(real_score, fake_score, eps: float = LOG_EPS) -> Tensor:
    """-[log D(x) + log(1 - D(G(x~)))], minibatch means."""
    real_term = ops.mean(ops.log(real_score, floor=eps))
    fake_term = ops.mean(ops.log(ops.sub(1.0, fake_score), floor=eps))
    return ops.mul(ops.add(real_term, fake_term), -1.0)


def generator_adversarial_loss(fake_score, eps: float = LOG_EPS) -> Tensor:
    """Non-saturating generator objective -log D(G(x~))."""
    return ops.mul(ops.mean(ops.log(fake_score, floor=eps)), -1.0)


def adversarial_losses(real: DiscriminatorOutput, fake: DiscriminatorOutput) -> AdversarialLosses:
    """Per-head discriminator and generator losses; ``None`` for an absent head."""
    out = {}
    for head in ("global", "patch"):
        r = getattr(real, f"{head}_score")
        f = getattr(fake, f"{head}_score")
        out[f"d_{head}"] = discriminator_loss(r, f) if r is not None else None
        out[f"g_{head}"] = generator_adversarial_loss(f) if f is not None else None
    return AdversarialLosses(**out)


def joint_loss(l_rec, l_g_adv, l_p_adv, w: LossWeights = LossWeights()):
    """rec*L_rec + g_adv*L_g_adv + p_adv*L_p_adv; ``None`` terms are skipped."""
    terms = [(w.rec, l_rec), (w.g_adv, l_g_adv), (w.p_adv, l_p_adv)]
    result = None
    for weight, value in terms:
        if value is None:
            continue
        term = ops.mul(value, weight) if isinstance(value, Tensor) else weight * value
        if result is None:
            result = term
        elif isinstance(result, Tensor) or isinstance(term, Tensor):
            result = ops.add(result, term)
        else:
            result = result + term
    return result
