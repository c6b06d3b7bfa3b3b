"""Central finite-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import GradTape, Tensor, no_grad


@dataclass
class GradCheckResult:
    name: str
    max_rel_error: float
    checked: int

    def ok(self, tol: float) -> bool:
        return self.max_rel_error < tol


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-10) -> float:
    """Norm-wise relative error ``|a - n| / max(|a|, |n|, floor)``."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(n), floor)
    return float(np.linalg.norm(a - n) / scale)


def check_gradients(
    loss_fn: Callable[[], Tensor],
    tensors: Sequence[Tensor],
    names: Optional[Sequence[str]] = None,
    step: float = 1e-4,
    max_coords: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> list[GradCheckResult]:
    """Compare tape gradients of ``loss_fn()`` with central differences.

    ``tensors`` must require grad and hold float64 data. When ``max_coords``
    is given only that many randomly chosen coordinates per tensor are
    perturbed; the error is measured over those coordinates.
    """
    rng = rng or np.random.default_rng(0)
    names = names or [f"input{i}" for i in range(len(tensors))]
    for t in tensors:
        t.data = np.ascontiguousarray(t.data)
        t.grad = None
    with GradTape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    tape.reset()

    results = []
    for name, t in zip(names, tensors):
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        if max_coords is None or max_coords >= flat.size:
            idx = np.arange(flat.size)
        else:
            idx = rng.choice(flat.size, size=max_coords, replace=False)
        numeric = np.empty(len(idx))
        with no_grad():
            for k, i in enumerate(idx):
                orig = flat[i]
                flat[i] = orig + step
                up = loss_fn().item()
                flat[i] = orig - step
                down = loss_fn().item()
                flat[i] = orig
                numeric[k] = (up - down) / (2 * step)
        err = relative_error(analytic.reshape(-1)[idx], numeric)
        results.append(GradCheckResult(name, err, len(idx)))
    return results
