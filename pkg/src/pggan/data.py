"""Datasets: image folders and procedural textures, normalised to [-1, 1]."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional

import numpy as np
from PIL import Image, UnidentifiedImageError

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".ppm", ".pgm", ".pnm", ".jpg", ".jpeg", ".bmp"}
PROCEDURAL_KINDS = ("stripes", "gradients", "checkerboards", "blobs", "textures", "mixed")


@dataclass
class Dataset:
    images: np.ndarray  # [M, C, H, W] in [-1, 1]
    source: str
    seed: int = 0
    skipped: int = 0
    names: Optional[list] = None

    def __len__(self) -> int:
        return self.images.shape[0]

    def order(self, epoch: int = 0) -> np.ndarray:
        return np.random.default_rng([self.seed, epoch, 0]).permutation(len(self))

    def batches(self, batch_size: int, epoch: int = 0) -> Iterator[np.ndarray]:
        """Seed-deterministic shuffled batches for one epoch (last one may be short)."""
        idx = self.order(epoch)
        for i in range(0, len(idx), batch_size):
            yield self.images[idx[i:i + batch_size]]

    def checksum(self, batch_size: int = 8) -> str:
        first = next(self.batches(batch_size))
        return hashlib.sha256(np.ascontiguousarray(first).tobytes()).hexdigest()

    def split(self, n_holdout: int) -> tuple:
        """Deterministic (train, held-out) split."""
        idx = np.random.default_rng([self.seed, 0, 1]).permutation(len(self))
        hold, train = idx[:n_holdout], idx[n_holdout:]
        mk = lambda ix: Dataset(self.images[np.sort(ix)], self.source, self.seed)  # noqa: E731
        return mk(train), mk(hold)


# ----------------------------------------------------------------------------
# image files

def to_unit_range(u8: np.ndarray) -> np.ndarray:
    return u8.astype(np.float32) / np.float32(127.5) - np.float32(1.0)


def to_uint8(x: np.ndarray) -> np.ndarray:
    return np.clip(np.rint((np.asarray(x, dtype=np.float64) + 1.0) * 127.5), 0, 255).astype(np.uint8)


def read_image(path, image_size: Optional[int] = None, channels: int = 3) -> np.ndarray:
    """Read an 8-bit image as [C, H, W] in [-1, 1], center-cropped and resized if asked."""
    with Image.open(path) as im:
        im = im.convert("RGB" if channels == 3 else "L")
        if image_size is not None:
            w, h = im.size
            if min(w, h) < image_size:
                raise ValueError(f"{path}: {w}x{h} is smaller than {image_size}")
            side = min(w, h)
            left, top = (w - side) // 2, (h - side) // 2
            im = im.crop((left, top, left + side, top + side))
            if side != image_size:
                im = im.resize((image_size, image_size), Image.BILINEAR)
        arr = np.asarray(im, dtype=np.uint8)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return to_unit_range(arr.transpose(2, 0, 1))


def write_image(path, x: np.ndarray) -> None:
    """Write [C, H, W] in [-1, 1] as 8-bit PNG or PPM (by suffix)."""
    arr = to_uint8(x).transpose(1, 2, 0)
    if arr.shape[2] == 1:
        arr = arr[:, :, 0]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path)


def load_folder(path, image_size: int, seed: int = 0, channels: int = 3) -> Dataset:
    files = sorted(p for p in Path(path).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    images, names, skipped = [], [], 0
    for f in files:
        try:
            images.append(read_image(f, image_size, channels))
            names.append(f.name)
        except (UnidentifiedImageError, OSError, ValueError) as exc:
            skipped += 1
            log.warning("skipping %s: %s", f, exc)
    if skipped:
        log.warning("%d unreadable or undersized image(s) skipped in %s", skipped, path)
    if not images:
        raise ValueError(f"no usable images in {path}")
    return Dataset(np.stack(images), str(path), seed, skipped, names)


# ----------------------------------------------------------------------------
# procedural textures

def _colours(rng, n=2):
    return rng.uniform(-1, 1, size=(n, 3, 1, 1))


def _grid(size):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    return yy, xx


def stripes(rng, size):
    yy, xx = _grid(size)
    theta = rng.uniform(0, np.pi)
    period = rng.uniform(8.0, 16.0)
    phase = rng.uniform(0, 2 * np.pi)
    s = np.sin(2 * np.pi * (xx * np.cos(theta) + yy * np.sin(theta)) / period + phase)
    c = _colours(rng)
    return c[0] * (1 + s) / 2 + c[1] * (1 - s) / 2


def gradients(rng, size):
    yy, xx = _grid(size)
    theta = rng.uniform(0, 2 * np.pi)
    t = ((xx - size / 2) * np.cos(theta) + (yy - size / 2) * np.sin(theta)) / size + 0.5
    t = np.clip(t, 0, 1)
    c = _colours(rng)
    return c[0] * t + c[1] * (1 - t)


def checkerboards(rng, size):
    yy, xx = _grid(size)
    period = int(rng.integers(6, 13))
    oy, ox = rng.integers(0, 2 * period, size=2)
    s = ((np.floor((yy + oy) / period) + np.floor((xx + ox) / period)) % 2) * 2 - 1
    c = _colours(rng)
    return c[0] * (1 + s) / 2 + c[1] * (1 - s) / 2


def blobs(rng, size):
    yy, xx = _grid(size)
    field = np.zeros((size, size))
    for _ in range(int(rng.integers(3, 7))):
        cy, cx = rng.uniform(0, size, size=2)
        r = rng.uniform(size / 10, size / 4)
        field += rng.choice([-1.0, 1.0]) * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r * r))
    t = 1 / (1 + np.exp(-3 * field))
    c = _colours(rng)
    return c[0] * t + c[1] * (1 - t)


_GENERATORS = {"stripes": stripes, "gradients": gradients, "checkerboards": checkerboards, "blobs": blobs}
_MIXES = {
    "textures": ("stripes", "gradients", "checkerboards"),
    "mixed": ("stripes", "gradients", "checkerboards", "blobs"),
}


def procedural(kind: str, count: int, image_size: int, seed: int = 0) -> Dataset:
    """``count`` procedurally generated RGB images; ``textures`` and ``mixed`` cycle several kinds."""
    if kind not in PROCEDURAL_KINDS:
        raise ValueError(f"unknown procedural kind {kind!r}; choose from {PROCEDURAL_KINDS}")
    if count < 1:
        raise ValueError("procedural dataset needs count >= 1")
    kinds = _MIXES.get(kind, (kind,))
    rng = np.random.default_rng([seed, image_size, PROCEDURAL_KINDS.index(kind)])
    images = np.empty((count, 3, image_size, image_size), dtype=np.float32)
    for i in range(count):
        images[i] = np.clip(_GENERATORS[kinds[i % len(kinds)]](rng, image_size), -1, 1)
    return Dataset(images, f"{kind}:{count}", seed)


def load_dataset(source: str, image_size: int, seed: int = 0, count: int = 256) -> Dataset:
    """Folder path, or ``kind[:count]`` for a procedural dataset."""
    path = Path(source)
    if path.is_dir():
        return load_folder(path, image_size, seed)
    kind, _, n = source.partition(":")
    if kind in PROCEDURAL_KINDS:
        return procedural(kind, int(n) if n else count, image_size, seed)
    raise ValueError(f"dataset source {source!r} is neither a directory nor a procedural spec {PROCEDURAL_KINDS}")
