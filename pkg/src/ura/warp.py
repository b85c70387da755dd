"""Non-additive perturbation engine: flow fields, coordinate mapping, and
differentiable bilinear spatial transformation.

A FlowField stores one raw 2-vector in [0, 1] per pixel (float32 by
construction so the binary format round-trips bit-exactly), shared across
the color channels. Two mappings turn raw values into sampling
coordinates:

  literal   (u, v) = (u' + (h-1)*raw_u, v' + (w-1)*raw_v)
  centered  (u, v) = (u' + (2*raw_u - 1)*budget_px, ...)

The centered mapping (default) is symmetric around zero displacement and
bounded by a pixel budget, which is what keeps the perturbation hard to
notice; raw 0.5 is exactly the identity. Both mappings clamp coordinates
to the image rectangle.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels as K
from .autodiff import Tensor, warp_bilinear
from .errors import DataError, FormatError, GeometryError
from .imaging import Image

MAPPING_LITERAL = "literal"
MAPPING_CENTERED = "centered"
_MAPPING_CODES = {MAPPING_LITERAL: 0, MAPPING_CENTERED: 1}
_CODE_MAPPINGS = {v: k for k, v in _MAPPING_CODES.items()}

_MAGIC = b"URAF"
_VERSION = 1
_HEADER = struct.Struct("<4sIIIBf")


@dataclass(frozen=True)
class FlowField:
    """Universal per-pixel displacement field.

    raw: (2, H, W) float32 in [0, 1] — the row-offset plane then the
    column-offset plane. budget_px is only used by the centered mapping.
    """

    raw: np.ndarray
    mapping: str = MAPPING_CENTERED
    budget_px: float = 2.0

    def __post_init__(self):
        arr = np.array(self.raw, dtype=np.float32, copy=True, order="C")
        if arr.ndim != 3 or arr.shape[0] != 2:
            raise GeometryError(f"expected (2, H, W) raw flow, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise DataError("flow field contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise DataError("raw flow values must lie in [0, 1]")
        if self.mapping not in _MAPPING_CODES:
            raise DataError(f"unknown mapping {self.mapping!r}")
        if self.budget_px < 0:
            raise DataError("budget_px must be >= 0")
        arr.flags.writeable = False
        object.__setattr__(self, "raw", arr)
        object.__setattr__(self, "budget_px", float(np.float32(self.budget_px)))

    @property
    def height(self) -> int:
        return self.raw.shape[1]

    @property
    def width(self) -> int:
        return self.raw.shape[2]


def identity_flow(h: int, w: int, budget_px: float = 2.0) -> FlowField:
    """Centered flow with raw 0.5 everywhere: the exact identity warp."""
    return FlowField(np.full((2, h, w), 0.5, dtype=np.float32),
                     MAPPING_CENTERED, budget_px)


def sample_coords(f: FlowField) -> tuple[np.ndarray, np.ndarray]:
    """Absolute per-pixel sampling coordinates (u rows, v columns).

    Both planes are float64 (H, W), clamped to [0, h-1] x [0, w-1].
    """
    h, w = f.height, f.width
    base_u = np.arange(h, dtype=np.float64)[:, np.newaxis]
    base_v = np.arange(w, dtype=np.float64)[np.newaxis, :]
    raw_u = f.raw[0].astype(np.float64)
    raw_v = f.raw[1].astype(np.float64)
    if f.mapping == MAPPING_LITERAL:
        u = base_u + (h - 1) * raw_u
        v = base_v + (w - 1) * raw_v
    else:
        u = base_u + (2.0 * raw_u - 1.0) * f.budget_px
        v = base_v + (2.0 * raw_v - 1.0) * f.budget_px
    return np.clip(u, 0.0, h - 1.0), np.clip(v, 0.0, w - 1.0)


def displacement(f: FlowField) -> tuple[np.ndarray, np.ndarray]:
    """Effective per-pixel displacement in pixels (after clamping)."""
    u, v = sample_coords(f)
    du = u - np.arange(f.height, dtype=np.float64)[:, np.newaxis]
    dv = v - np.arange(f.width, dtype=np.float64)[np.newaxis, :]
    return du, dv


def spatial_transform(img: Image, f: FlowField) -> Image:
    """Warp an image with a flow field by bilinear interpolation.

    Every output pixel samples the four integer-grid neighbors of its
    flow-displaced coordinate, per channel with the shared flow. Outputs
    are convex combinations of inputs, so the [0, 1] range is preserved.
    """
    if (img.height, img.width) != (f.height, f.width):
        raise GeometryError(
            f"flow {f.height}x{f.width} does not match image "
            f"{img.height}x{img.width}")
    u, v = sample_coords(f)
    out = K.warp_forward(np.ascontiguousarray(img.data[np.newaxis]), u, v)
    return Image(out[0])


def transform_graph(img: Tensor, raw: Tensor, mapping: str,
                    budget_px: float) -> Tensor:
    """Differentiable spatial transform for training graphs.

    img is (B, C, H, W); raw is a (2, H, W) tensor of values in [0, 1]
    (typically the generator output). Gradients flow into both.
    """
    _, _, h, w = img.data.shape
    if raw.data.shape != (2, h, w):
        raise GeometryError(
            f"raw flow {raw.data.shape} does not match image {h}x{w}")
    dtype = img.data.dtype
    base_u = Tensor(np.broadcast_to(
        np.arange(h, dtype=dtype)[:, np.newaxis], (h, w)).copy())
    base_v = Tensor(np.broadcast_to(
        np.arange(w, dtype=dtype)[np.newaxis, :], (h, w)).copy())
    raw_u, raw_v = raw[0], raw[1]
    if mapping == MAPPING_LITERAL:
        u = base_u + raw_u * float(h - 1)
        v = base_v + raw_v * float(w - 1)
    elif mapping == MAPPING_CENTERED:
        u = base_u + (raw_u * 2.0 - 1.0) * float(budget_px)
        v = base_v + (raw_v * 2.0 - 1.0) * float(budget_px)
    else:
        raise DataError(f"unknown mapping {mapping!r}")
    u = u.clip(0.0, float(h - 1))
    v = v.clip(0.0, float(w - 1))
    return warp_bilinear(img, u, v)


def random_flow(seed: int, h: int, w: int, mapping: str = MAPPING_CENTERED,
                budget_px: float = 2.0) -> FlowField:
    """Uniform i.i.d. raw flow on [0, 1]; deterministic for a fixed seed."""
    if h < 8 or w < 8:
        raise GeometryError(f"flow sides must be >= 8, got {h}x{w}")
    rng = np.random.default_rng(seed)
    return FlowField(rng.random((2, h, w), dtype=np.float32), mapping,
                     budget_px)


def save_flow(f: FlowField, path) -> None:
    """Write the binary flow format (see module docs in the README)."""
    header = _HEADER.pack(_MAGIC, _VERSION, f.height, f.width,
                          _MAPPING_CODES[f.mapping], np.float32(f.budget_px))
    payload = f.raw.astype("<f4").tobytes(order="C")
    Path(path).write_bytes(header + payload)


def load_flow(path) -> FlowField:
    """Read a flow field; rejects bad magic, version, or truncated data."""
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise FormatError(f"{path}: truncated flow header")
    magic, version, h, w, mapping_code, budget = _HEADER.unpack_from(blob)
    if magic != _MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != _VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if mapping_code not in _CODE_MAPPINGS:
        raise FormatError(f"{path}: unknown mapping code {mapping_code}")
    if h == 0 or w == 0 or h > 1 << 20 or w > 1 << 20:
        raise FormatError(f"{path}: implausible dimensions {h}x{w}")
    expected = _HEADER.size + 2 * h * w * 4
    if len(blob) != expected:
        raise FormatError(
            f"{path}: expected {expected} bytes, found {len(blob)}")
    raw = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size)
    raw = raw.reshape(2, h, w).astype(np.float32)
    return FlowField(raw, _CODE_MAPPINGS[mapping_code], float(budget))
