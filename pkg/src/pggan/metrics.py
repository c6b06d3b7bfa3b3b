"""Image quality metrics (PSNR, SSIM, mean L1/L2) and dataset-level reports."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .masks import ImageBatch, MaskSpec, apply_mask

PSNR_CAP_DB = 99.0
COLUMNS = ("L1 Loss", "L2 Loss", "psnr(dB)", "ssim")


def _check_same(y, x):
    y = np.asarray(y, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if y.shape != x.shape:
        raise ValueError(f"shape mismatch: {y.shape} vs {x.shape}")
    return y, x


def psnr(y, x, max_value: float = 1.0) -> float:
    """10*log10(max^2 / MSE) in dB; identical inputs give ``PSNR_CAP_DB``."""
    y, x = _check_same(y, x)
    mse = float(np.mean((y - x) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return 10.0 * math.log10(max_value**2 / mse)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = g.size
    rows = sliding_window_view(img, k, axis=0) @ g
    return sliding_window_view(rows, k, axis=1) @ g


def ssim(y, x, max_value: float = 1.0, window_size: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean SSIM over all valid Gaussian windows, averaged over channels.

    Accepts [H, W] or [C, H, W].
    """
    y, x = _check_same(y, x)
    if y.ndim == 2:
        y, x = y[None], x[None]
    if min(y.shape[-2:]) < window_size:
        raise ValueError(f"image {y.shape[-2:]} is smaller than the {window_size}x{window_size} window")
    g = gaussian_window(window_size, sigma)
    c1 = (k1 * max_value) ** 2
    c2 = (k2 * max_value) ** 2
    vals = []
    for a, b in zip(y, x):
        mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
        var_a = _filter_valid(a * a, g) - mu_a * mu_a
        var_b = _filter_valid(b * b, g) - mu_b * mu_b
        cov = _filter_valid(a * b, g) - mu_a * mu_b
        num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
        den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))


def mean_l1(y, x) -> float:
    """Mean absolute error as a percentage of the dynamic range (inputs in [0, 1])."""
    y, x = _check_same(y, x)
    return float(np.mean(np.abs(y - x)) * 100.0)


def mean_l2(y, x) -> float:
    """Mean squared error as a percentage of the squared dynamic range (inputs in [0, 1])."""
    y, x = _check_same(y, x)
    return float(np.mean((y - x) ** 2) * 100.0)


def hole_mean_l1(y, x, mask) -> float:
    """Mean |y - x| restricted to hole pixels (mask == 1), in the inputs' own units."""
    y, x = _check_same(y, x)
    m = np.broadcast_to(np.asarray(mask) > 0.5, y.shape)
    return float(np.abs(y - x)[m].mean())


def to_unit(x):
    return (np.asarray(x, dtype=np.float64) + 1.0) / 2.0


@dataclass
class MetricsReport:
    rows: list = field(default_factory=list)  # (image_id, l1, l2, psnr, ssim), hole-composited
    config: dict = field(default_factory=dict)
    raw_rows: list = field(default_factory=list)  # same, raw generator output

    def __len__(self) -> int:
        return len(self.rows)

    @staticmethod
    def _means(rows) -> dict:
        arr = np.array([r[1:] for r in rows], dtype=np.float64)
        return dict(zip(("l1", "l2", "psnr", "ssim"), map(float, arr.mean(axis=0))))

    @property
    def aggregate(self) -> dict:
        return self._means(self.rows)

    @property
    def raw_aggregate(self) -> Optional[dict]:
        return self._means(self.raw_rows) if self.raw_rows else None

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["image_id", "l1", "l2", "psnr", "ssim"])
        for r in self.rows:
            w.writerow([r[0]] + [repr(float(v)) for v in r[1:]])
        return buf.getvalue()

    def table(self, label: str = "model") -> str:
        header = f"| {'Method':<22}|" + "|".join(f"{c:^10}" for c in COLUMNS) + "|"
        sep = "-" * len(header)
        rows = [table_row(label, self.aggregate)]
        if self.raw_rows:
            rows.append(table_row(label + " (raw)", self.raw_aggregate))
        note = ("L1 = mean |error| in % of dynamic range; L2 = mean squared error in % of squared range; "
                f"images: {len(self)}; ranked rows use hole-composited outputs")
        cfg = ", ".join(f"{k}={v}" for k, v in self.config.items())
        return "\n".join([note] + ([cfg] if cfg else []) + [sep, header, sep, *rows, sep])


def table_row(label: str, agg: dict) -> str:
    return (f"| {label:<22}|{agg['l1']:^10.2f}|{agg['l2']:^10.2f}|"
            f"{agg['psnr']:^10.2f}|{agg['ssim']:^10.3f}|")


def constant_fill_inpainter(value) -> Callable[[ImageBatch], np.ndarray]:
    """Baseline: every pixel set to a fixed per-channel value (e.g. the dataset mean)."""
    value = np.asarray(value, dtype=np.float64).reshape(1, -1, 1, 1)

    def run(batch: ImageBatch) -> np.ndarray:
        return np.broadcast_to(value, batch.x.shape).astype(batch.x.dtype)
    return run


def dataset_mean(images) -> np.ndarray:
    """Per-channel mean of an [N, C, H, W] image stack."""
    return np.asarray(images, dtype=np.float64).mean(axis=(0, 2, 3))


def mean_fill_inpainter(batch: ImageBatch) -> np.ndarray:
    """Baseline: every pixel set to the per-image, per-channel mean of the known pixels."""
    known = 1.0 - batch.mask
    denom = known.sum(axis=(2, 3), keepdims=True)
    means = (batch.x * known).sum(axis=(2, 3), keepdims=True) / np.maximum(denom, 1.0)
    return np.broadcast_to(means, batch.x.shape).astype(batch.x.dtype)


def generator_inpainter(net) -> Callable[[ImageBatch], np.ndarray]:
    def run(batch: ImageBatch) -> np.ndarray:
        return net(batch.x_corrupted, track_grads=False).data
    return run


def evaluate_dataset(inpainter: Callable[[ImageBatch], np.ndarray], dataset, mask_spec: MaskSpec,
                     seed: int = 0, batch_size: int = 16) -> MetricsReport:
    """Per-image metrics of hole-composited outputs over ``dataset`` in stored order."""
    images = dataset.images if hasattr(dataset, "images") else np.asarray(dataset)
    if len(images) == 0:
        raise ValueError("cannot evaluate an empty dataset")
    names = getattr(dataset, "names", None) or [f"{i:05d}" for i in range(len(images))]
    rng = np.random.default_rng(seed)
    report = MetricsReport(config={"mask": str(mask_spec), "seed": seed})
    for start in range(0, len(images), batch_size):
        batch = apply_mask(images[start:start + batch_size], mask_spec, rng)
        batch.y = np.asarray(inpainter(batch))
        gt = to_unit(batch.x)
        for rows, out in ((report.rows, to_unit(batch.composite())), (report.raw_rows, to_unit(batch.y))):
            for i in range(len(gt)):
                rows.append((names[start + i], mean_l1(out[i], gt[i]), mean_l2(out[i], gt[i]),
                             psnr(out[i], gt[i]), ssim(out[i], gt[i])))
    return report
