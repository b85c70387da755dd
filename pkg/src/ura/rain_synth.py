"""Procedural synthesis of rainy observations from clean backgrounds.

Three observation models are composed from a streak field, a drop layer
(blur mask + drop texture), and the background:

  streaks   O = clip(B + S)
  drops     O = clip((1 - M) * B + D)
  combined  O = clip((1 - M) * (B + S) + scatter_gain * D)

Streaks are anti-aliased line segments, drops are soft-edged ellipses;
both are Gaussian-blurred. Backgrounds are layered procedural scenes
(gradient base, soft shapes, texture noise) so the toolkit needs no
external dataset. Everything is deterministic for a fixed seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import DataError, GeometryError
from .imaging import Image

MODE_STREAKS = "streaks"
MODE_DROPS = "drops"
MODE_COMBINED = "combined"
MODES = (MODE_STREAKS, MODE_DROPS, MODE_COMBINED)


@dataclass(frozen=True)
class StreakField:
    """Rain-streak intensity field shaped like an image, values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, copy=True, order="C")
        if arr.ndim != 3 or arr.shape[0] != 3:
            raise GeometryError(f"expected (3, H, W) field, got {arr.shape}")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise DataError("streak intensities must lie in [0, 1]")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)


@dataclass(frozen=True)
class DropLayer:
    """Adherent-drop layer: spatial blur mask plus drop texture.

    mask is (H, W) in [0, 1] and is shared by the color channels; texture
    is (3, H, W) in [0, 1].
    """

    mask: np.ndarray
    texture: np.ndarray

    def __post_init__(self):
        mask = np.array(self.mask, dtype=np.float64, copy=True, order="C")
        tex = np.array(self.texture, dtype=np.float64, copy=True, order="C")
        if mask.ndim != 2:
            raise GeometryError(f"expected (H, W) mask, got {mask.shape}")
        if tex.shape != (3,) + mask.shape:
            raise GeometryError(
                f"texture {tex.shape} does not match mask {mask.shape}")
        if mask.min() < 0.0 or mask.max() > 1.0:
            raise DataError("mask values must lie in [0, 1]")
        if tex.min() < 0.0 or tex.max() > 1.0:
            raise DataError("texture values must lie in [0, 1]")
        mask.flags.writeable = False
        tex.flags.writeable = False
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "texture", tex)


@dataclass(frozen=True)
class SynthParams:
    """Knobs for the procedural rain models.

    Angles are degrees away from vertical fall; scatter_gain scales the
    drop texture in the combined model.
    """

    streak_count: int = 30
    streak_angle_range: tuple = (-20.0, 20.0)
    streak_length_range: tuple = (10.0, 26.0)
    streak_intensity_range: tuple = (0.35, 0.9)
    drop_count: int = 10
    drop_radius_range: tuple = (1.5, 5.0)
    blur_sigma: float = 0.6
    scatter_gain: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if self.streak_count < 0 or self.drop_count < 0:
            raise DataError("counts must be >= 0")
        for name in ("streak_angle_range", "streak_length_range",
                     "streak_intensity_range", "drop_radius_range"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise DataError(f"{name} must be a nonempty (lo, hi) range")
        lo, hi = self.streak_intensity_range
        if lo < 0.0 or hi > 1.0:
            raise DataError("streak intensities must stay within [0, 1]")
        if self.streak_length_range[0] <= 0 or self.drop_radius_range[0] <= 0:
            raise DataError("lengths and radii must be positive")
        if self.blur_sigma < 0:
            raise DataError("blur_sigma must be >= 0")
        if not 0.0 < self.scatter_gain <= 1.0:
            raise DataError("scatter_gain must lie in (0, 1]")


def _check_size(h: int, w: int):
    if h < 8 or w < 8:
        raise GeometryError(f"fields must be at least 8x8, got {h}x{w}")


def _blur(plane: np.ndarray, sigma: float) -> np.ndarray:
    if sigma <= 0:
        return plane
    return gaussian_filter(plane, sigma=sigma, mode="constant")


def _segment_coverage(h, w, r0, c0, r1, c1) -> np.ndarray:
    """Anti-aliased coverage of a unit-width segment, in [0, 1]."""
    rows = np.arange(h, dtype=np.float64)[:, np.newaxis]
    cols = np.arange(w, dtype=np.float64)[np.newaxis, :]
    dr, dc = r1 - r0, c1 - c0
    length_sq = dr * dr + dc * dc
    if length_sq == 0.0:
        dist = np.hypot(rows - r0, cols - c0)
    else:
        t = ((rows - r0) * dr + (cols - c0) * dc) / length_sq
        t = np.clip(t, 0.0, 1.0)
        dist = np.hypot(rows - (r0 + t * dr), cols - (c0 + t * dc))
    return np.clip(1.0 - dist, 0.0, 1.0)


def gen_streaks(params: SynthParams, h: int, w: int) -> StreakField:
    """Draw streak_count anti-aliased segments, then blur and clip.

    Streaks are max-blended, so a single streak never exceeds its drawn
    intensity before the blur.
    """
    _check_size(h, w)
    rng = np.random.default_rng(params.seed)
    field = np.zeros((h, w))
    for _ in range(params.streak_count):
        angle = np.deg2rad(rng.uniform(*params.streak_angle_range))
        length = rng.uniform(*params.streak_length_range)
        intensity = rng.uniform(*params.streak_intensity_range)
        # the segment midpoint stays in frame, so every streak is visible
        mid_r = rng.uniform(0, h - 1)
        mid_c = rng.uniform(0, w - 1)
        r0 = mid_r - 0.5 * length * np.cos(angle)
        c0 = mid_c - 0.5 * length * np.sin(angle)
        r1 = mid_r + 0.5 * length * np.cos(angle)
        c1 = mid_c + 0.5 * length * np.sin(angle)
        field = np.maximum(field,
                           intensity * _segment_coverage(h, w, r0, c0, r1, c1))
    field = np.clip(_blur(field, params.blur_sigma), 0.0, 1.0)
    return StreakField(np.broadcast_to(field, (3, h, w)).copy())


def gen_drops(params: SynthParams, h: int, w: int) -> DropLayer:
    """Write drop_count soft-edged ellipses into the mask and texture."""
    _check_size(h, w)
    rng = np.random.default_rng(params.seed + 1)
    mask = np.zeros((h, w))
    tex = np.zeros((h, w))
    rows = np.arange(h, dtype=np.float64)[:, np.newaxis]
    cols = np.arange(w, dtype=np.float64)[np.newaxis, :]
    for _ in range(params.drop_count):
        cr = rng.uniform(0, h - 1)
        cc = rng.uniform(0, w - 1)
        ra = rng.uniform(*params.drop_radius_range)
        rb = rng.uniform(*params.drop_radius_range)
        tilt = rng.uniform(0, np.pi)
        strength = rng.uniform(0.55, 0.9)
        brightness = rng.uniform(0.35, 0.8)
        dr, dc = rows - cr, cols - cc
        ar = (dr * np.cos(tilt) + dc * np.sin(tilt)) / ra
        ac = (-dr * np.sin(tilt) + dc * np.cos(tilt)) / rb
        radial = np.sqrt(ar * ar + ac * ac)
        profile = np.clip(1.5 * (1.0 - radial), 0.0, 1.0)  # soft rim
        mask = np.maximum(mask, strength * profile)
        # brighter core with a dimmer rim, a crude refraction highlight
        tex = np.maximum(tex, brightness * profile * (0.6 + 0.4 * profile))
    mask = np.clip(_blur(mask, params.blur_sigma), 0.0, 1.0)
    tex = np.clip(_blur(tex, params.blur_sigma), 0.0, 1.0)
    return DropLayer(mask, np.broadcast_to(tex, (3, h, w)).copy())


def compose(b: Image, mode: str, streaks: Optional[StreakField] = None,
            drops: Optional[DropLayer] = None,
            scatter_gain: float = 0.8) -> Image:
    """Combine a clean background with rain components into an observation."""
    if mode not in MODES:
        raise DataError(f"unknown composition mode {mode!r}")
    shape = b.data.shape
    if mode in (MODE_STREAKS, MODE_COMBINED):
        if streaks is None:
            raise DataError(f"mode {mode!r} requires a streak field")
        if streaks.data.shape != shape:
            raise GeometryError(
                f"streaks {streaks.data.shape} do not match image {shape}")
    if mode in (MODE_DROPS, MODE_COMBINED):
        if drops is None:
            raise DataError(f"mode {mode!r} requires a drop layer")
        if drops.mask.shape != shape[1:]:
            raise GeometryError(
                f"drop mask {drops.mask.shape} does not match image {shape}")
    if mode == MODE_STREAKS:
        out = b.data + streaks.data
    elif mode == MODE_DROPS:
        out = (1.0 - drops.mask) * b.data + drops.texture
    else:
        out = ((1.0 - drops.mask) * (b.data + streaks.data)
               + scatter_gain * drops.texture)
    return Image(np.clip(out, 0.0, 1.0))


def gen_background(seed: int, h: int, w: int) -> Image:
    """Layered procedural scene: gradient base, soft shapes, texture noise.

    Gives the derain model real structure to restore without shipping any
    photographic dataset.
    """
    _check_size(h, w)
    rng = np.random.default_rng(seed)
    rows = np.linspace(0.0, 1.0, h)[:, np.newaxis]
    cols = np.linspace(0.0, 1.0, w)[np.newaxis, :]
    angle = rng.uniform(0, 2 * np.pi)
    ramp = rows * np.cos(angle) + cols * np.sin(angle)
    ramp = (ramp - ramp.min()) / max(ramp.max() - ramp.min(), 1e-9)
    img = np.empty((3, h, w))
    lo = rng.uniform(0.05, 0.45, size=3)
    hi = rng.uniform(0.55, 0.95, size=3)
    for c in range(3):
        img[c] = lo[c] + ramp * (hi[c] - lo[c])

    yy = np.arange(h, dtype=np.float64)[:, np.newaxis]
    xx = np.arange(w, dtype=np.float64)[np.newaxis, :]
    for _ in range(rng.integers(3, 7)):
        cr = rng.uniform(0, h)
        cc = rng.uniform(0, w)
        rr = rng.uniform(0.08, 0.3) * min(h, w)
        color = rng.uniform(0.0, 1.0, size=3)
        blob = np.clip(1.0 - np.hypot(yy - cr, xx - cc) / rr, 0.0, 1.0) ** 0.7
        for c in range(3):
            img[c] = img[c] * (1.0 - blob) + color[c] * blob

    if rng.random() < 0.5:  # occasional stripe texture
        freq = rng.uniform(0.15, 0.7)
        phase = rng.uniform(0, 2 * np.pi)
        stripes = 0.5 + 0.5 * np.sin(freq * (xx * np.cos(angle)
                                             - yy * np.sin(angle)) + phase)
        img = img * 0.85 + 0.15 * stripes

    grain = gaussian_filter(rng.standard_normal((3, h, w)), sigma=(0, 1.0, 1.0))
    img = img + 0.06 * grain
    return Image(np.clip(img, 0.0, 1.0))


def synth_pair(params: SynthParams, mode: str, h: int, w: int):
    """One (observation, background) pair from a single seed."""
    bg = gen_background(params.seed + 7, h, w)
    streaks = gen_streaks(params, h, w) if mode != MODE_DROPS else None
    drops = gen_drops(params, h, w) if mode != MODE_STREAKS else None
    obs = compose(bg, mode, streaks=streaks, drops=drops,
                  scatter_gain=params.scatter_gain)
    return obs, bg
