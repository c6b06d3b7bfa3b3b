"""Adam with bias correction, applied to arbitrary parameter subsets."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .tensor import Parameter


@dataclass
class AdamState:
    """First/second moments and step count, keyed by parameter name.

    Counts are kept per parameter so that disjoint subsets (generator vs.
    discriminator groups) advance independently.
    """

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: dict = field(default_factory=dict)

    def copy(self) -> "AdamState":
        return AdamState(
            {k: a.copy() for k, a in self.m.items()},
            {k: a.copy() for k, a in self.v.items()},
            dict(self.t),
        )


def adam_step(
    state: AdamState,
    params: Iterable[Parameter],
    lr: float = 2e-4,
    beta1: float = 0.5,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Update ``params`` in place from their ``.grad``.

    Parameters without a gradient are skipped entirely: no data change and
    no moment or step-count update, so disjoint parameter subsets advance
    independently.
    """
    for p in params:
        if p.grad is None:
            continue
        g = p.grad
        m = state.m.get(p.name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        else:
            v = state.v[p.name]
        t = state.t.get(p.name, 0) + 1

        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        update = lr * m_hat / (np.sqrt(v_hat) + eps)
        p.data = (p.data - update).astype(p.data.dtype, copy=False)

        state.m[p.name] = m.astype(p.data.dtype, copy=False)
        state.v[p.name] = v.astype(p.data.dtype, copy=False)
        state.t[p.name] = t
