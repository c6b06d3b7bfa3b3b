"""Hole masks and corrupted-image batches."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import ops
from .tensor import Tensor

MASK_KINDS = ("central_square", "random_rect", "free_blob")


class InfeasibleMaskError(ValueError):
    pass


@dataclass(frozen=True)
class MaskSpec:
    kind: str = "central_square"
    area: tuple = (0.25, 0.25)  # hole fraction range [lo, hi]
    fill: float = 0.0

    def __post_init__(self):
        if self.kind not in MASK_KINDS:
            raise ValueError(f"mask kind must be one of {MASK_KINDS}, got {self.kind!r}")
        lo, hi = self.area
        if not 0.0 < lo <= hi < 1.0:
            raise ValueError(f"mask area range must satisfy 0 < lo <= hi < 1, got {self.area}")

    @classmethod
    def parse(cls, text: str) -> "MaskSpec":
        """Parse ``kind[:lo[-hi]][:fill]``, e.g. ``central_square:0.25`` or ``free_blob:0.1-0.3``."""
        parts = text.split(":")
        kind = parts[0]
        area = (0.25, 0.25)
        if len(parts) > 1 and parts[1]:
            bounds = [float(v) for v in parts[1].split("-")]
            area = (bounds[0], bounds[-1])
        fill = float(parts[2]) if len(parts) > 2 else 0.0
        return cls(kind, area, fill)

    def __str__(self) -> str:
        lo, hi = self.area
        area = f"{lo:g}" if lo == hi else f"{lo:g}-{hi:g}"
        return f"{self.kind}:{area}:{self.fill:g}"


@dataclass
class ImageBatch:
    """Ground truth ``x``, binary ``mask`` (1 = hole), corrupted ``x_corrupted``.

    ``y`` holds the generator output once computed. Arrays are [N, C, H, W]
    with the mask broadcast over channels as [N, 1, H, W].
    """

    x: np.ndarray
    mask: np.ndarray
    x_corrupted: np.ndarray
    y: Optional[np.ndarray] = None

    def composite(self, y=None):
        """Known pixels from the input, hole pixels from ``y``."""
        y = self.y if y is None else y
        if isinstance(y, Tensor):
            return ops.add(ops.mul(y, self.mask), self.x_corrupted * (1 - self.mask))
        return self.x_corrupted * (1 - self.mask) + y * self.mask


def corrupt(x: np.ndarray, mask: np.ndarray, fill: float = 0.0) -> ImageBatch:
    mask = np.broadcast_to(mask, (x.shape[0], 1) + x.shape[2:]).astype(x.dtype)
    x_corrupted = x * (1 - mask) + np.asarray(fill, dtype=x.dtype) * mask
    return ImageBatch(x, mask, x_corrupted)


def _square_sides(size_h: int, size_w: int, lo: float, hi: float) -> list:
    area = size_h * size_w
    return [s for s in range(1, min(size_h, size_w) + 1) if lo - 1e-12 <= s * s / area <= hi + 1e-12]


def _central_square(h, w, spec, rng):
    lo, hi = spec.area
    sides = _square_sides(h, w, lo, hi)
    if not sides:
        raise InfeasibleMaskError(f"no square hole in a {h}x{w} image has area fraction in {spec.area}")
    frac = lo if lo == hi else rng.uniform(lo, hi)
    target = round(math.sqrt(frac * h * w))
    side = min(sides, key=lambda s: (abs(s - target), s))
    m = np.zeros((h, w))
    top, left = (h - side) // 2, (w - side) // 2
    m[top:top + side, left:left + side] = 1
    return m


def _random_rect(h, w, spec, rng):
    lo, hi = spec.area
    area = h * w
    for _ in range(1000):
        frac = rng.uniform(lo, hi)
        aspect = math.exp(rng.uniform(math.log(0.5), math.log(2.0)))
        rh = max(1, min(h, round(math.sqrt(frac * area * aspect))))
        rw = max(1, min(w, round(frac * area / rh)))
        if lo - 1e-12 <= rh * rw / area <= hi + 1e-12:
            top = int(rng.integers(0, h - rh + 1))
            left = int(rng.integers(0, w - rw + 1))
            m = np.zeros((h, w))
            m[top:top + rh, left:left + rw] = 1
            return m
    raise InfeasibleMaskError(f"no rectangle in a {h}x{w} image has area fraction in {spec.area}")


def _free_blob(h, w, spec, rng):
    lo, hi = spec.area
    area = h * w
    lo_px, hi_px = math.ceil(lo * area - 1e-9), math.floor(hi * area + 1e-9)
    if lo_px > hi_px or hi_px < 1:
        raise InfeasibleMaskError(f"no pixel count in a {h}x{w} image has area fraction in {spec.area}")
    target = int(rng.integers(max(lo_px, 1), hi_px + 1))
    m = np.zeros((h, w))
    start = (int(rng.integers(h)), int(rng.integers(w)))
    m[start] = 1
    frontier = [start]
    seen = {start}
    filled = 1
    # random-frontier growth keeps the hole one connected region
    while filled < target:
        k = int(rng.integers(len(frontier)))
        r, c = frontier[k]
        grown = False
        for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            nr, nc = r + dr, c + dc
            if 0 <= nr < h and 0 <= nc < w and (nr, nc) not in seen and rng.random() < 0.5:
                seen.add((nr, nc))
                m[nr, nc] = 1
                frontier.append((nr, nc))
                filled += 1
                grown = True
                break
        if not grown and all(
            not (0 <= r + dr < h and 0 <= c + dc < w) or (r + dr, c + dc) in seen
            for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1))
        ):
            frontier[k] = frontier[-1]
            frontier.pop()
    return m


_MAKERS = {"central_square": _central_square, "random_rect": _random_rect, "free_blob": _free_blob}


def make_masks(spec: MaskSpec, n: int, h: int, w: int, rng: np.random.Generator, dtype=np.float32) -> np.ndarray:
    """``n`` binary masks of shape [n, 1, h, w]."""
    out = np.empty((n, 1, h, w), dtype=dtype)
    for i in range(n):
        out[i, 0] = _MAKERS[spec.kind](h, w, spec, rng)
    return out


def apply_mask(x: np.ndarray, spec: MaskSpec, rng: np.random.Generator) -> ImageBatch:
    """Draw masks for ``x`` [N, C, H, W] and fill the holes."""
    x = np.asarray(x)
    if x.min(initial=0.0) < -1.0 or x.max(initial=0.0) > 1.0:
        raise ValueError("images must be normalised to [-1, 1]")
    n, _, h, w = x.shape
    return corrupt(x, make_masks(spec, n, h, w, rng, x.dtype), spec.fill)
