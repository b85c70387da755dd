"""Quality metrics and training losses: SSIM, PSNR, L1, the derain and
attack objectives, detector-report metrics, and pixel histograms.

SSIM and the losses are differentiable: they accept either Image values
(returning floats) or autodiff Tensors shaped (B, 3, H, W) (returning a
scalar Tensor), so the same code backs evaluation and training.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tensor, concat, window_filter2d
from .errors import DataError, GeometryError
from .imaging import Image

# keeps sqrt(variance) differentiable when a window is exactly flat
_VARIANCE_FLOOR = 1e-24


@dataclass(frozen=True)
class SsimParams:
    """Windowed-SSIM configuration.

    The stability constants default to the unit-dynamic-range values
    (c3 = c2 / 2); the window is an 11x11 Gaussian with sigma 1.5,
    mean-pooled over windows and channels.
    """

    c1: float = 1e-4
    c2: float = 9e-4
    c3: float = 4.5e-4
    luminance_exp: float = 1.0
    contrast_exp: float = 1.0
    structure_exp: float = 1.0
    window_size: int = 11
    window_sigma: float = 1.5

    def __post_init__(self):
        if self.c1 <= 0 or self.c2 <= 0 or self.c3 <= 0:
            raise DataError("SSIM stability constants must be positive")
        if self.window_size < 3 or self.window_size % 2 == 0:
            raise DataError("window_size must be odd and >= 3")
        if self.window_sigma <= 0:
            raise DataError("window_sigma must be positive")


DEFAULT_SSIM = SsimParams()


def gaussian_taps(size: int, sigma: float) -> np.ndarray:
    """Normalized 1-d Gaussian filter taps."""
    half = (size - 1) / 2.0
    xs = np.arange(size, dtype=np.float64) - half
    taps = np.exp(-0.5 * (xs / sigma) ** 2)
    return taps / taps.sum()


def _as_batch(value) -> Tensor:
    if isinstance(value, Tensor):
        if value.data.ndim != 4:
            raise GeometryError(
                f"expected a (B, C, H, W) tensor, got shape {value.data.shape}")
        return value
    if isinstance(value, Image):
        return Tensor(value.data[np.newaxis])
    raise TypeError(f"expected Image or Tensor, got {type(value).__name__}")


def _check_matched(*batches: Tensor):
    shape = batches[0].data.shape
    for b in batches[1:]:
        if b.data.shape != shape:
            raise GeometryError(
                f"geometry mismatch: {b.data.shape} vs {shape}")


def _maybe_float(result: Tensor, inputs) -> "Tensor | float":
    if any(isinstance(v, Tensor) for v in inputs):
        return result
    return float(result.data)


def _pow(t: Tensor, exponent: float) -> Tensor:
    return t if exponent == 1.0 else t ** exponent


def _ssim_graph(x: Tensor, y: Tensor, p: SsimParams) -> Tensor:
    b = x.data.shape[0]
    h, w = x.data.shape[2], x.data.shape[3]
    if h < p.window_size or w < p.window_size:
        raise GeometryError(
            f"image {h}x{w} is smaller than the {p.window_size}-pixel window")
    taps = gaussian_taps(p.window_size, p.window_sigma)
    fields = concat([x, y, x * x, y * y, x * y], axis=0)
    filtered = window_filter2d(fields, taps, taps)
    mu_x = filtered[0:b]
    mu_y = filtered[b:2 * b]
    var_x = (filtered[2 * b:3 * b] - mu_x * mu_x).clip(0.0, np.inf)
    var_y = (filtered[3 * b:4 * b] - mu_y * mu_y).clip(0.0, np.inf)
    cov = filtered[4 * b:5 * b] - mu_x * mu_y
    sig_x = (var_x + _VARIANCE_FLOOR) ** 0.5
    sig_y = (var_y + _VARIANCE_FLOOR) ** 0.5
    luminance = (mu_x * mu_y * 2.0 + p.c1) / (mu_x * mu_x + mu_y * mu_y + p.c1)
    contrast = (sig_x * sig_y * 2.0 + p.c2) / (var_x + var_y + p.c2)
    structure = (cov + p.c3) / (sig_x * sig_y + p.c3)
    ssim_map = (_pow(luminance, p.luminance_exp)
                * _pow(contrast, p.contrast_exp)
                * _pow(structure, p.structure_exp))
    return ssim_map.mean()


def ssim(x, y, p: SsimParams = DEFAULT_SSIM):
    """Mean windowed SSIM over all sliding windows and channels.

    Symmetric in (x, y); 1 for identical inputs; differentiable when the
    inputs are Tensors.
    """
    xb, yb = _as_batch(x), _as_batch(y)
    _check_matched(xb, yb)
    return _maybe_float(_ssim_graph(xb, yb, p), (x, y))


def l1(x, y):
    """Mean absolute error over all channels and pixels."""
    xb, yb = _as_batch(x), _as_batch(y)
    _check_matched(xb, yb)
    return _maybe_float((xb - yb).abs().mean(), (x, y))


def psnr(x: Image, y: Image, max_value: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; +inf when the images are identical."""
    if not isinstance(x, Image) or not isinstance(y, Image):
        raise TypeError("psnr operates on Image values")
    if x.data.shape != y.data.shape:
        raise GeometryError(
            f"geometry mismatch: {x.data.shape} vs {y.data.shape}")
    mse = float(np.mean((x.data - y.data) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(max_value * max_value / mse)


def derain_loss(pred, b, ssim_weight: float = 1.0,
                p: SsimParams = DEFAULT_SSIM):
    """Restoration objective: L1(pred, b) - ssim_weight * SSIM(pred, b)."""
    if ssim_weight < 0:
        raise DataError("ssim_weight must be >= 0")
    pb, bb = _as_batch(pred), _as_batch(b)
    _check_matched(pb, bb)
    out = (pb - bb).abs().mean() - _ssim_graph(pb, bb, p) * ssim_weight
    return _maybe_float(out, (pred, b))


def attack_loss(pred_adv, pred_clean, b, clean_weight: float = 1.0,
                p: SsimParams = DEFAULT_SSIM):
    """Attack objective, minimized by the flow generator.

    SSIM(pred_adv, pred_clean) + clean_weight * SSIM(pred_adv, b): driving
    the attacked restoration away from both the unattacked restoration and
    the clean background.
    """
    if clean_weight < 0:
        raise DataError("clean_weight must be >= 0")
    pa, pc, bb = _as_batch(pred_adv), _as_batch(pred_clean), _as_batch(b)
    _check_matched(pa, pc, bb)
    out = (_ssim_graph(pa, pc, p)
           + _ssim_graph(pa, bb, p) * clean_weight)
    return _maybe_float(out, (pred_adv, pred_clean, b))


@dataclass(frozen=True)
class DetectorReport:
    """Per-image detector output: (label, confidence) per content slot."""

    entries: tuple

    def __post_init__(self):
        entries = tuple((label, float(conf)) for label, conf in self.entries)
        for label, conf in entries:
            if not 0.0 <= conf <= 1.0:
                raise DataError(
                    f"confidence {conf} for label {label!r} outside [0, 1]")
        object.__setattr__(self, "entries", entries)

    def __len__(self):
        return len(self.entries)


def _aligned(derain_report: DetectorReport, clear_report: DetectorReport):
    if len(derain_report) != len(clear_report):
        raise DataError(
            f"misaligned reports: {len(derain_report)} vs "
            f"{len(clear_report)} entries")
    if len(derain_report) == 0:
        raise DataError("empty detector reports carry no label mass")
    return list(zip(derain_report.entries, clear_report.entries))


def identify_error(derain_report: DetectorReport,
                   clear_report: DetectorReport) -> float:
    """One-hot label disagreement, normalized by the derained report's mass.

    Each mismatched slot contributes 2 (a full one-hot swap); agreement on
    every slot gives 0.
    """
    pairs = _aligned(derain_report, clear_report)
    mismatch = sum(1 for (ld, _), (lc, _) in pairs if ld != lc)
    return 2.0 * mismatch / len(pairs)


def confidence_bias(derain_report: DetectorReport,
                    clear_report: DetectorReport,
                    mode: str = "ratio") -> float:
    """Confidence shift over slots whose labels match.

    mode='ratio' (default) averages c_derain / c_clear, so identical
    reports score 1; mode='difference' averages c_derain - c_clear, so
    identical reports score 0.
    """
    if mode not in ("ratio", "difference"):
        raise DataError(f"unknown confidence_bias mode: {mode!r}")
    pairs = _aligned(derain_report, clear_report)
    matched = [(cd, cc) for (ld, cd), (lc, cc) in pairs if ld == lc]
    if not matched:
        raise DataError("no matched labels: confidence bias is undefined")
    if mode == "difference":
        return float(np.mean([cd - cc for cd, cc in matched]))
    for _, cc in matched:
        if cc == 0.0:
            raise DataError("zero reference confidence in ratio mode")
    return float(np.mean([cd / cc for cd, cc in matched]))


def pixel_histogram(img: Image, bins: int) -> np.ndarray:
    """Per-channel counts over equal-width bins of [0, 1], shape (3, bins)."""
    if bins < 2:
        raise DataError("bins must be >= 2")
    counts = np.stack([
        np.histogram(img.data[c], bins=bins, range=(0.0, 1.0))[0]
        for c in range(3)
    ])
    return counts.astype(np.int64)


def write_histogram_csv(img: Image, bins: int, path) -> None:
    """Export pixel_histogram as CSV rows channel,bin_lo,bin_hi,count."""
    counts = pixel_histogram(img, bins)
    edges = np.linspace(0.0, 1.0, bins + 1)
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["channel", "bin_lo", "bin_hi", "count"])
        for channel in range(3):
            for b in range(bins):
                writer.writerow([channel, repr(float(edges[b])),
                                 repr(float(edges[b + 1])),
                                 int(counts[channel, b])])
