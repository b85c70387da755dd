"""The two trainable networks and their parameter container.

The flow generator maps a Gaussian noise block (C, H/8, W/8) through three
stride-1 convolutions (instance norm + ReLU), a stack of residual blocks,
and three stride-2 transposed convolutions to a (2, H, W) field squashed
into (0, 1) by a sigmoid.

The derain target is a compact encoder/decoder: two stride-2 encoder
stages, residual blocks at the bottleneck, mirrored transposed-conv
decoder with additive skip connections, and a sigmoid output. A fixed
identity-biased link from the input into the output logits makes the net
start close to a pass-through, which speeds up desk-scale training.

Weights live in float32; forward graphs follow the dtype of their inputs,
so float64 gradient checks run on the same code path as training.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tensor, conv2d, conv_transpose2d
from .errors import ConfigError, FormatError, GeometryError
from .imaging import Image

_NORM_EPS = 1e-6
_IDENTITY_LINK_GAIN = 4.0  # sigmoid(4*(x-0.5)) has slope 1 at mid-gray

KIND_GENERATOR = "generator"
KIND_DERAIN = "derain"

_MAGIC = b"URAP"
_VERSION = 1
_DTYPE_CODES = {"float64": 0, "float32": 1}
_CODE_DTYPES = {0: np.float64, 1: np.float32}


@dataclass(frozen=True)
class GeneratorConfig:
    """Flow-generator architecture. Output is 2 x image_height x image_width."""

    image_height: int = 64
    image_width: int = 64
    noise_channels: int = 8
    down_channels: tuple = (32, 48, 64)
    residual_blocks: int = 4
    up_channels: tuple = (48, 32, 2)

    def __post_init__(self):
        if self.image_height % 8 or self.image_width % 8:
            raise ConfigError("generator image size must be divisible by 8 "
                              f"(three 2x upsamplings), got "
                              f"{self.image_height}x{self.image_width}")
        if len(self.down_channels) != 3 or len(self.up_channels) != 3:
            raise ConfigError("down_channels and up_channels must have 3 entries")
        if self.up_channels[-1] != 2:
            raise ConfigError("the last upsampling layer must emit 2 channels "
                              "(row and column flow planes)")
        if min(self.down_channels) < 1 or min(self.up_channels) < 1:
            raise ConfigError("channel widths must be positive")
        if self.noise_channels < 1 or self.residual_blocks < 0:
            raise ConfigError("invalid noise_channels or residual_blocks")

    @property
    def noise_height(self) -> int:
        return self.image_height // 8

    @property
    def noise_width(self) -> int:
        return self.image_width // 8

    @property
    def noise_shape(self) -> tuple:
        return (self.noise_channels, self.noise_height, self.noise_width)


@dataclass(frozen=True)
class DerainConfig:
    """Derain encoder/decoder widths; fully convolutional (any H, W % 4 == 0)."""

    channels: tuple = (16, 32, 48)
    residual_blocks: int = 3
    skip_connections: bool = True

    def __post_init__(self):
        if len(self.channels) != 3 or min(self.channels) < 1:
            raise ConfigError("channels must be a 3-tuple of positive widths")
        if self.residual_blocks < 0:
            raise ConfigError("residual_blocks must be >= 0")


@dataclass(frozen=True)
class ModelParams:
    """Named weight tensors plus the config fingerprint that created them."""

    kind: str
    config: dict
    seed: int
    tensors: dict

    def __post_init__(self):
        for name, arr in self.tensors.items():
            if not np.isfinite(arr).all():
                raise ConfigError(f"non-finite weights in tensor {name!r}")

    @property
    def fingerprint(self) -> str:
        return config_fingerprint(self.kind, self.config)

    def build_config(self):
        return _config_from_dict(self.kind, self.config)


def _config_to_dict(cfg) -> dict:
    out = {}
    for key, value in asdict(cfg).items():
        out[key] = list(value) if isinstance(value, tuple) else value
    return out


def _config_from_dict(kind: str, data: dict):
    cls = GeneratorConfig if kind == KIND_GENERATOR else DerainConfig
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
    return cls(**kwargs)


def config_fingerprint(kind: str, config: dict) -> str:
    blob = json.dumps({"kind": kind, "config": config}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# -- initialization ---------------------------------------------------------


def _he_conv(rng, cout, cin, k, gain=1.0):
    std = gain * np.sqrt(2.0 / (cin * k * k))
    return (rng.standard_normal((cout, cin, k, k)) * std).astype(np.float32)


def _he_deconv(rng, cin, cout, k, stride, gain=1.0):
    std = gain * np.sqrt(2.0 / (cin * k * k / (stride * stride)))
    return (rng.standard_normal((cin, cout, k, k)) * std).astype(np.float32)


def _conv_block(rng, tensors, name, cin, cout, k, gain=1.0, norm=True):
    tensors[f"{name}.conv.w"] = _he_conv(rng, cout, cin, k, gain)
    tensors[f"{name}.conv.b"] = np.zeros(cout, dtype=np.float32)
    if norm:
        tensors[f"{name}.norm.g"] = np.ones(cout, dtype=np.float32)
        tensors[f"{name}.norm.b"] = np.zeros(cout, dtype=np.float32)


def _deconv_block(rng, tensors, name, cin, cout, gain=1.0, norm=True):
    tensors[f"{name}.deconv.w"] = _he_deconv(rng, cin, cout, 4, 2, gain)
    tensors[f"{name}.deconv.b"] = np.zeros(cout, dtype=np.float32)
    if norm:
        tensors[f"{name}.norm.g"] = np.ones(cout, dtype=np.float32)
        tensors[f"{name}.norm.b"] = np.zeros(cout, dtype=np.float32)


def _res_blocks(rng, tensors, prefix, count, width):
    for i in range(count):
        _conv_block(rng, tensors, f"{prefix}{i}.a", width, width, 3)
        _conv_block(rng, tensors, f"{prefix}{i}.b", width, width, 3)


def init_generator(cfg: GeneratorConfig, seed: int) -> ModelParams:
    """Fan-in-scaled zero-mean initialization; deterministic per seed."""
    rng = np.random.default_rng(seed)
    t: dict = {}
    d0, d1, d2 = cfg.down_channels
    u0, u1, u2 = cfg.up_channels
    _conv_block(rng, t, "down0", cfg.noise_channels, d0, 3)
    _conv_block(rng, t, "down1", d0, d1, 3)
    _conv_block(rng, t, "down2", d1, d2, 3)
    _res_blocks(rng, t, "res", cfg.residual_blocks, d2)
    _deconv_block(rng, t, "up0", d2, u0)
    _deconv_block(rng, t, "up1", u0, u1)
    _deconv_block(rng, t, "up2", u1, u2, gain=0.2, norm=False)
    return ModelParams(KIND_GENERATOR, _config_to_dict(cfg), seed, t)


def init_derain(cfg: DerainConfig, seed: int) -> ModelParams:
    rng = np.random.default_rng(seed)
    t: dict = {}
    c0, c1, c2 = cfg.channels
    _conv_block(rng, t, "enc0", 3, c0, 3)
    _conv_block(rng, t, "enc1", c0, c1, 3)
    _conv_block(rng, t, "enc2", c1, c2, 3)
    _res_blocks(rng, t, "res", cfg.residual_blocks, c2)
    _deconv_block(rng, t, "dec0", c2, c1)
    _deconv_block(rng, t, "dec1", c1, c0)
    _conv_block(rng, t, "out", c0, 3, 3, gain=0.2, norm=False)
    return ModelParams(KIND_DERAIN, _config_to_dict(cfg), seed, t)


# -- forward graphs ----------------------------------------------------------


def param_tensors(params: ModelParams, trainable: bool,
                  dtype=np.float32) -> dict:
    """Wrap the weight arrays as graph tensors (optionally trainable)."""
    return {name: Tensor(arr.astype(dtype, copy=False),
                         requires_grad=trainable)
            for name, arr in params.tensors.items()}


def _instance_norm(x: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    mu = x.mean(axis=(2, 3), keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=(2, 3), keepdims=True)
    normalized = centered * ((var + _NORM_EPS) ** -0.5)
    c = gamma.data.shape[0]
    return (normalized * gamma.reshape(1, c, 1, 1)
            + beta.reshape(1, c, 1, 1))


def _conv_in_relu(t: dict, name: str, x: Tensor, stride: int) -> Tensor:
    y = conv2d(x, t[f"{name}.conv.w"], t[f"{name}.conv.b"],
               stride=stride, padding=1)
    y = _instance_norm(y, t[f"{name}.norm.g"], t[f"{name}.norm.b"])
    return y.relu()


def _deconv_in_relu(t: dict, name: str, x: Tensor) -> Tensor:
    y = conv_transpose2d(x, t[f"{name}.deconv.w"], t[f"{name}.deconv.b"],
                         stride=2, padding=1)
    y = _instance_norm(y, t[f"{name}.norm.g"], t[f"{name}.norm.b"])
    return y.relu()


def _res_stack(t: dict, prefix: str, count: int, x: Tensor) -> Tensor:
    for i in range(count):
        h = _conv_in_relu(t, f"{prefix}{i}.a", x, stride=1)
        h = conv2d(h, t[f"{prefix}{i}.b.conv.w"], t[f"{prefix}{i}.b.conv.b"],
                   stride=1, padding=1)
        h = _instance_norm(h, t[f"{prefix}{i}.b.norm.g"],
                           t[f"{prefix}{i}.b.norm.b"])
        x = x + h
    return x


def generator_graph(t: dict, z: Tensor, cfg: GeneratorConfig) -> Tensor:
    """Noise (B, C, H/8, W/8) -> raw flow (B, 2, H, W) in (0, 1)."""
    if z.data.ndim != 4 or z.data.shape[1:] != cfg.noise_shape:
        raise GeometryError(
            f"noise shape {z.data.shape} does not match {cfg.noise_shape}")
    x = _conv_in_relu(t, "down0", z, 1)
    x = _conv_in_relu(t, "down1", x, 1)
    x = _conv_in_relu(t, "down2", x, 1)
    x = _res_stack(t, "res", cfg.residual_blocks, x)
    x = _deconv_in_relu(t, "up0", x)
    x = _deconv_in_relu(t, "up1", x)
    x = conv_transpose2d(x, t["up2.deconv.w"], t["up2.deconv.b"],
                         stride=2, padding=1)
    return x.sigmoid()


def derain_graph(t: dict, x: Tensor, cfg: DerainConfig) -> Tensor:
    """Observation (B, 3, H, W) -> restoration (B, 3, H, W) in (0, 1)."""
    _, c, h, w = x.data.shape
    if c != 3 or h % 4 or w % 4 or h < 8 or w < 8:
        raise GeometryError(
            f"derain input must be (B, 3, H, W) with H, W >= 8 and "
            f"divisible by 4, got {x.data.shape}")
    e0 = _conv_in_relu(t, "enc0", x, 1)
    e1 = _conv_in_relu(t, "enc1", e0, 2)
    e2 = _conv_in_relu(t, "enc2", e1, 2)
    r = _res_stack(t, "res", cfg.residual_blocks, e2)
    d0 = _deconv_in_relu(t, "dec0", r)
    if cfg.skip_connections:
        d0 = d0 + e1
    d1 = _deconv_in_relu(t, "dec1", d0)
    if cfg.skip_connections:
        d1 = d1 + e0
    logits = conv2d(d1, t["out.conv.w"], t["out.conv.b"], stride=1, padding=1)
    if cfg.skip_connections:
        logits = logits + (x - 0.5) * _IDENTITY_LINK_GAIN
    return logits.sigmoid()


def generator_forward(params: ModelParams, z: np.ndarray) -> np.ndarray:
    """Raw flow values (2, H, W) for one noise block; deterministic."""
    if params.kind != KIND_GENERATOR:
        raise ConfigError(f"expected generator params, got {params.kind!r}")
    cfg = params.build_config()
    zb = np.asarray(z, dtype=np.float64)
    if zb.ndim == 3:
        zb = zb[np.newaxis]
    t = param_tensors(params, trainable=False)
    out = generator_graph(t, Tensor(zb), cfg)
    return out.data[0]


def derain_forward(params: ModelParams, o: Image) -> Image:
    """Restore one observation; same geometry, values in [0, 1]."""
    out = derain_batch(params, o.data[np.newaxis])
    return Image(out[0])


def derain_batch(params: ModelParams, obs: np.ndarray) -> np.ndarray:
    """Restore a (B, 3, H, W) float batch without building gradients."""
    if params.kind != KIND_DERAIN:
        raise ConfigError(f"expected derain params, got {params.kind!r}")
    cfg = params.build_config()
    t = param_tensors(params, trainable=False)
    return derain_graph(t, Tensor(np.asarray(obs)), cfg).data


# -- persistence --------------------------------------------------------------


def save_params(params: ModelParams, path) -> None:
    """Write the parameter container (layout documented in the README)."""
    meta = json.dumps({
        "kind": params.kind,
        "config": params.config,
        "seed": params.seed,
        "fingerprint": params.fingerprint,
    }, sort_keys=True).encode()
    chunks = [_MAGIC, struct.pack("<I", _VERSION),
              struct.pack("<I", len(meta)), meta,
              struct.pack("<I", len(params.tensors))]
    for name in sorted(params.tensors):
        arr = params.tensors[name]
        encoded = name.encode()
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<BB", _DTYPE_CODES[str(arr.dtype)],
                                  arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.astype(arr.dtype.newbyteorder("<")).tobytes("C"))
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise FormatError(f"{self.path}: truncated parameter file")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size))


def load_params(path, expected_config=None) -> ModelParams:
    """Read a parameter container; rejects corrupt files and, when a config
    is supplied, any fingerprint mismatch against it."""
    reader = _Reader(Path(path).read_bytes(), path)
    magic = reader.take(4)
    if magic != _MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    (version,) = reader.unpack("<I")
    if version != _VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    (meta_len,) = reader.unpack("<I")
    try:
        meta = json.loads(reader.take(meta_len).decode())
        kind, config = meta["kind"], meta["config"]
        seed, fingerprint = meta["seed"], meta["fingerprint"]
    except (ValueError, KeyError) as exc:
        raise FormatError(f"{path}: corrupt metadata block") from exc
    if config_fingerprint(kind, config) != fingerprint:
        raise FormatError(f"{path}: fingerprint does not match stored config")
    (count,) = reader.unpack("<I")
    tensors = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode()
        dtype_code, ndim = reader.unpack("<BB")
        if dtype_code not in _CODE_DTYPES:
            raise FormatError(f"{path}: unknown dtype code {dtype_code}")
        shape = reader.unpack(f"<{ndim}I")
        dtype = np.dtype(_CODE_DTYPES[dtype_code]).newbyteorder("<")
        nbytes = int(np.prod(shape)) * dtype.itemsize
        arr = np.frombuffer(reader.take(nbytes), dtype=dtype).reshape(shape)
        tensors[name] = arr.astype(_CODE_DTYPES[dtype_code])
    if reader.pos != len(reader.blob):
        raise FormatError(f"{path}: trailing bytes after tensor data")
    params = ModelParams(kind, config, seed, tensors)
    if expected_config is not None:
        expected_kind = (KIND_GENERATOR
                         if isinstance(expected_config, GeneratorConfig)
                         else KIND_DERAIN)
        want = config_fingerprint(expected_kind,
                                  _config_to_dict(expected_config))
        if want != params.fingerprint:
            raise FormatError(
                f"{path}: parameter fingerprint {params.fingerprint} does not "
                f"match the supplied config ({want})")
    return params
