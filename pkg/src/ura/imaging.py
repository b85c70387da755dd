"""Image values, PNG decode/encode, clipping, and paired-dataset loading.

Images are 3-channel RGB rasters stored as float64 planes in [0, 1],
shape (3, H, W). All operations are pure: Image data buffers are locked
read-only at construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage, UnidentifiedImageError

from .errors import DataError, GeometryError

MIN_SIDE = 8  # smallest height/width the metrics stack supports


@dataclass(frozen=True)
class Image:
    """RGB raster with unit dynamic range, channel-plane layout (3, H, W)."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, copy=True, order="C")
        if arr.ndim != 3 or arr.shape[0] != 3:
            raise GeometryError(f"expected (3, H, W) data, got {arr.shape}")
        if arr.shape[1] < MIN_SIDE or arr.shape[2] < MIN_SIDE:
            raise GeometryError(
                f"image sides must be >= {MIN_SIDE}, got {arr.shape[1:]}")
        if not np.isfinite(arr).all():
            raise DataError("image contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise DataError("image intensities must lie in [0, 1]")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class PairedSample:
    """A rain observation and its clean background, geometry-matched."""

    observation: Image
    background: Image
    identifier: str = ""

    def __post_init__(self):
        if (self.observation.height != self.background.height
                or self.observation.width != self.background.width):
            raise GeometryError(
                f"pair '{self.identifier}': observation "
                f"{self.observation.data.shape[1:]} does not match background "
                f"{self.background.data.shape[1:]}")


def load_image(path) -> Image:
    """Decode an 8-bit RGB PNG into unit-range floats (byte / 255)."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such image file: {path}")
    try:
        with PILImage.open(path) as img:
            if img.mode != "RGB":
                raise DataError(
                    f"{path}: expected an RGB raster, got mode '{img.mode}'")
            arr = np.asarray(img, dtype=np.uint8)
    except UnidentifiedImageError as exc:
        raise DataError(f"{path}: not a decodable image") from exc
    return Image(arr.astype(np.float64).transpose(2, 0, 1) / 255.0)


def save_image(img: Image, path) -> None:
    """Encode to 8-bit RGB PNG with round-half-up quantization."""
    path = Path(path)
    quantized = np.floor(img.data * 255.0 + 0.5).astype(np.uint8)
    try:
        PILImage.fromarray(quantized.transpose(1, 2, 0), mode="RGB").save(
            path, format="PNG")
    except (OSError, PermissionError) as exc:
        raise DataError(f"cannot write image to {path}: {exc}") from exc


def clip(img: Image, lo: float, hi: float) -> Image:
    """Clamp every intensity to [lo, hi]."""
    if not lo < hi:
        raise DataError(f"clip bounds must satisfy lo < hi, got ({lo}, {hi})")
    return Image(np.clip(img.data, lo, hi))


def load_paired_dataset(root) -> list[PairedSample]:
    """Load `<root>/rain/<name>.png` + `<root>/clean/<name>.png` pairs.

    Pairs are matched by filename and returned in lexicographic name order.
    An image on either side without a partner is an error, as is a
    dimension mismatch within a pair.
    """
    root = Path(root)
    rain_dir = root / "rain"
    clean_dir = root / "clean"
    if not rain_dir.is_dir() or not clean_dir.is_dir():
        raise DataError(
            f"dataset root {root} must contain rain/ and clean/ directories")
    rain_names = {p.name for p in rain_dir.glob("*.png")}
    clean_names = {p.name for p in clean_dir.glob("*.png")}
    orphans = sorted(rain_names ^ clean_names)
    if orphans:
        side = "clean" if orphans[0] in clean_names else "rain"
        raise DataError(
            f"orphan file without a partner: {side}/{orphans[0]} "
            f"({len(orphans)} unmatched in total)")
    samples = []
    for name in sorted(rain_names):
        obs = load_image(rain_dir / name)
        bg = load_image(clean_dir / name)
        samples.append(PairedSample(obs, bg, identifier=Path(name).stem))
    return samples
