"""Model assembly: the two full-resolution networks, the encoder-decoder
baseline they are compared against, and binary checkpoints."""

import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import Tensor, relu, sigmoid
from .blocks import (
    BatchNorm2d,
    BlockConfig,
    Conv2d,
    Module,
    ModuleList,
    build_block,
)
from .errors import CheckpointError, ConfigError, DimensionError

ARCHS = ("frnet_base", "frnet", "unet_baseline")


@dataclass(frozen=True)
class ModelConfig:
    """Which network to build and at what width/depth.

    block_family overrides the per-arch default block (residual for
    frnet_base, recurrent_convnext for frnet) for ablation runs. The
    unet_* fields only apply to the baseline.
    """

    arch: str = "frnet"
    in_channels: int = 1
    channels: int = 32
    num_blocks: int = 6
    recurrence_steps: int = 2
    block_family: str = None
    unet_base_channels: int = 48
    unet_depth: int = 4

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ConfigError(f"unknown arch {self.arch!r}")
        for name in ("in_channels", "channels", "num_blocks", "recurrence_steps"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.block_family is None and self.arch != "unet_baseline":
            default = "residual" if self.arch == "frnet_base" else "recurrent_convnext"
            object.__setattr__(self, "block_family", default)
        if self.arch == "unet_baseline":
            if self.unet_base_channels < 1:
                raise ConfigError("unet_base_channels must be positive")
            if self.unet_depth < 1:
                raise ConfigError("baseline needs at least 2 resolution levels")

    def block_config(self):
        return BlockConfig(
            family=self.block_family,
            channels=self.channels,
            recurrence_steps=self.recurrence_steps,
        )


class FRNet(Module):
    """stem(3x3 conv, bn, relu) -> num_blocks blocks -> 1x1 conv -> sigmoid.

    No pooling or upsampling anywhere: spatial dims pass through
    unchanged for any H, W >= 1.
    """

    def __init__(self, cfg, rng, dtype=np.float32):
        super().__init__()
        self.config = cfg
        self.stem = Conv2d(cfg.in_channels, cfg.channels, 3, rng, dtype=dtype)
        self.stem_norm = BatchNorm2d(cfg.channels, dtype=dtype)
        self.blocks = ModuleList(
            [build_block(cfg.block_config(), rng, dtype=dtype) for _ in range(cfg.num_blocks)]
        )
        self.head = Conv2d(cfg.channels, 1, 1, rng, dtype=dtype)

    def forward(self, x):
        h = relu(self.stem_norm(self.stem(x)))
        for block in self.blocks:
            h = block(h)
        return sigmoid(self.head(h))


# -- baseline-only ops ------------------------------------------------------
# The full-resolution networks never pool or upsample; these primitives
# exist solely so the encoder-decoder baseline can be built for the
# size/speed comparison.


def max_pool2x2(x):
    d = x.data
    n, c, h, w = d.shape
    if h % 2 or w % 2:
        raise DimensionError("spatial", f"max_pool2x2 needs even dims, got {h}x{w}")
    windows = d.reshape(n, c, h // 2, 2, w // 2, 2)
    out_data = windows.max(axis=(3, 5))
    out = Tensor._node(out_data, (x,))
    if out.requires_grad:
        def _bw():
            up = np.repeat(np.repeat(out_data, 2, axis=2), 2, axis=3)
            g = np.repeat(np.repeat(out.grad, 2, axis=2), 2, axis=3)
            x._accumulate(g * (d == up))
        out._backward = _bw
    return out


def _linear_grid(n_out, n_in, dtype):
    # Half-pixel-centered source coordinates for a fixed 2x scale; the
    # clamp before the floor/frac split is what replicates the edges.
    src = (np.arange(n_out, dtype=dtype) + 0.5) / 2.0 - 0.5
    src = np.clip(src, 0, n_in - 1)
    lo = np.floor(src)
    frac = src - lo
    i0 = lo.astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, frac


def upsample_bilinear2x(x):
    d = x.data
    n, c, h, w = d.shape
    i0, i1, fh = _linear_grid(2 * h, h, d.dtype)
    j0, j1, fw = _linear_grid(2 * w, w, d.dtype)
    fh = fh.reshape(1, 1, -1, 1)
    fw = fw.reshape(1, 1, 1, -1)
    rows = d[:, :, i0, :] * (1 - fh) + d[:, :, i1, :] * fh
    out = Tensor._node(rows[:, :, :, j0] * (1 - fw) + rows[:, :, :, j1] * fw, (x,))
    if out.requires_grad:
        def _bw():
            go = out.grad
            grows = np.zeros_like(rows)
            np.add.at(grows, (slice(None), slice(None), slice(None), j0), go * (1 - fw))
            np.add.at(grows, (slice(None), slice(None), slice(None), j1), go * fw)
            gx = np.zeros_like(d)
            np.add.at(gx, (slice(None), slice(None), i0), grows * (1 - fh))
            np.add.at(gx, (slice(None), slice(None), i1), grows * fh)
            x._accumulate(gx)
        out._backward = _bw
    return out


def concat_channels(a, b):
    out = Tensor._node(np.concatenate((a.data, b.data), axis=1), (a, b))
    if out.requires_grad:
        ca = a.data.shape[1]
        def _bw():
            g = out.grad
            a._accumulate(g[:, :ca])
            b._accumulate(g[:, ca:])
        out._backward = _bw
    return out


class DoubleConv(Module):
    def __init__(self, in_channels, out_channels, rng, dtype=np.float32):
        super().__init__()
        self.conv1 = Conv2d(in_channels, out_channels, 3, rng, dtype=dtype)
        self.bn1 = BatchNorm2d(out_channels, dtype=dtype)
        self.conv2 = Conv2d(out_channels, out_channels, 3, rng, dtype=dtype)
        self.bn2 = BatchNorm2d(out_channels, dtype=dtype)

    def forward(self, x):
        return relu(self.bn2(self.conv2(relu(self.bn1(self.conv1(x))))))


class UNet(Module):
    """Encoder-decoder baseline with skip connections and bilinear 2x
    upsampling; decoder level d consumes concat(skip_d, upsampled)."""

    def __init__(self, cfg, rng, dtype=np.float32):
        super().__init__()
        self.config = cfg
        self.depth = cfg.unet_depth
        chs = [cfg.unet_base_channels * 2 ** d for d in range(self.depth + 1)]
        enc = [DoubleConv(cfg.in_channels, chs[0], rng, dtype=dtype)]
        enc += [DoubleConv(chs[d - 1], chs[d], rng, dtype=dtype) for d in range(1, self.depth + 1)]
        self.enc = ModuleList(enc)
        self.dec = ModuleList(
            [DoubleConv(chs[d] + chs[d + 1], chs[d], rng, dtype=dtype)
             for d in reversed(range(self.depth))]
        )
        self.head = Conv2d(chs[0], 1, 1, rng, dtype=dtype)

    def forward(self, x):
        h, w = x.data.shape[2:]
        unit = 1 << self.depth
        if h % unit or w % unit:
            raise DimensionError(
                "spatial",
                f"input {h}x{w} is not divisible by {unit}; pad explicitly before calling",
            )
        skips = []
        out = x
        for i, block in enumerate(self.enc):
            out = block(out)
            if i < self.depth:
                skips.append(out)
                out = max_pool2x2(out)
        for block, skip in zip(self.dec, reversed(skips)):
            out = block(concat_channels(skip, upsample_bilinear2x(out)))
        return sigmoid(self.head(out))


def build_model(cfg, seed, dtype=np.float32):
    """Construct the configured network with seed-deterministic init."""
    rng = np.random.default_rng(seed)
    if cfg.arch == "unet_baseline":
        model = UNet(cfg, rng, dtype=dtype)
    else:
        model = FRNet(cfg, rng, dtype=dtype)
    object.__setattr__(model, "seed", seed)
    return model


def build_unet_baseline(cfg, seed=0, dtype=np.float32):
    if cfg.arch != "unet_baseline":
        raise ConfigError(f"expected arch 'unet_baseline', got {cfg.arch!r}")
    return build_model(cfg, seed, dtype=dtype)


# -- checkpoints -------------------------------------------------------------

_MAGIC = b"FRNC"
_VERSION = 1


def save_checkpoint(model, path):
    """Little-endian binary: magic, version u32, length-prefixed UTF-8
    config header, then parameters and buffers in registry order as raw
    32-bit floats."""
    header = json.dumps(
        {"config": asdict(model.config), "seed": getattr(model, "seed", 0)}
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sII", _MAGIC, _VERSION, len(header)))
        fh.write(header)
        for p in model.parameters():
            fh.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
        for b in model.buffers():
            fh.write(np.ascontiguousarray(b, dtype="<f4").tobytes())


def load_checkpoint(path, arch=None):
    """Rebuild the model a checkpoint describes, bit-exact.

    arch, when given, must match the stored config before anything is
    loaded; any structural mismatch raises with no partial state.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[:4] != _MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, header_len = struct.unpack("<II", blob[4:12])
    if version != _VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    if len(blob) < 12 + header_len:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(blob[12:12 + header_len].decode("utf-8"))
        cfg = ModelConfig(**header["config"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: malformed config header: {exc}") from exc
    if arch is not None and cfg.arch != arch:
        raise CheckpointError(f"{path}: checkpoint is {cfg.arch!r}, expected {arch!r}")
    model = build_model(cfg, header.get("seed", 0))
    payload = blob[12 + header_len:]
    leaves = [p.data for p in model.parameters()] + list(model.buffers())
    expected = sum(leaf.size for leaf in leaves) * 4
    if len(payload) != expected:
        raise CheckpointError(
            f"{path}: payload holds {len(payload)} bytes, arch needs {expected}"
        )
    offset = 0
    for leaf in leaves:
        n = leaf.size * 4
        arr = np.frombuffer(payload[offset:offset + n], dtype="<f4")
        leaf[...] = arr.reshape(leaf.shape)
        offset += n
    return model
