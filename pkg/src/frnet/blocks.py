"""Network building blocks: a small parameter-tree Module system, the
layer primitives, and the four block families the models are built from."""

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import (
    ConvSpec,
    Tensor,
    batch_norm,
    channel_norm,
    conv2d,
    depthwise_conv2d,
    gelu,
    relu,
)
from .errors import ConfigError


class Module:
    """Node of a parameter tree.

    Attribute assignment registers by type: Tensor -> parameter,
    ndarray -> buffer (running statistics), Module -> child. Each leaf
    gets exactly one dotted path, and traversal order is attribute
    assignment order, depth first. Checkpoints serialize in that order,
    so construction order is part of the format.
    """

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Tensor):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        elif isinstance(value, np.ndarray):
            self._buffers[name] = value
        object.__setattr__(self, name, value)

    def forward(self, x):
        raise NotImplementedError

    def __call__(self, x):
        return self.forward(x)

    def modules(self):
        yield self
        for child in self._children.values():
            yield from child.modules()

    def named_parameters(self, prefix=""):
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, child in self._children.items():
            yield from child.named_parameters(prefix + cname + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for name, b in self._buffers.items():
            yield prefix + name, b
        for cname, child in self._children.items():
            yield from child.named_buffers(prefix + cname + ".")

    def buffers(self):
        return [b for _, b in self.named_buffers()]

    def train(self):
        for m in self.modules():
            object.__setattr__(m, "training", True)
        return self

    def eval(self):
        for m in self.modules():
            object.__setattr__(m, "training", False)
        return self

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


class ModuleList(Module):
    """Sequential container; children register under their index."""

    def __init__(self, mods):
        super().__init__()
        for i, m in enumerate(mods):
            setattr(self, str(i), m)

    def __iter__(self):
        return iter(self._children.values())

    def __len__(self):
        return len(self._children)


def param_count(m):
    """Total leaf parameter elements; buffers do not count."""
    return sum(p.data.size for p in m.parameters())


def _uniform(rng, shape, bound, dtype):
    return Tensor(rng.uniform(-bound, bound, shape).astype(dtype), requires_grad=True)


class Conv2d(Module):
    """Stride-1 'same' convolution with centered-uniform fan-in init."""

    def __init__(self, in_channels, out_channels, kernel, rng, groups=1,
                 bias=True, dtype=np.float32):
        super().__init__()
        self.spec = ConvSpec(in_channels, out_channels, kernel, groups=groups, bias=bias)
        kh, kw = self.spec.kernel
        bound = 1.0 / math.sqrt((in_channels // groups) * kh * kw)
        self.weight = _uniform(rng, self.spec.weight_shape, bound, dtype)
        self.bias = _uniform(rng, (out_channels,), bound, dtype) if bias else None

    def forward(self, x):
        return conv2d(x, self.spec, self.weight, self.bias)


class DepthwiseConv2d(Module):
    """Per-channel convolution (groups == channels)."""

    def __init__(self, channels, kernel, rng, bias=True, dtype=np.float32):
        super().__init__()
        self.spec = ConvSpec(channels, channels, kernel, groups=channels, bias=bias)
        kh, kw = self.spec.kernel
        bound = 1.0 / math.sqrt(kh * kw)
        self.weight = _uniform(rng, self.spec.weight_shape, bound, dtype)
        self.bias = _uniform(rng, (channels,), bound, dtype) if bias else None

    def forward(self, x):
        return depthwise_conv2d(x, self.spec, self.weight, self.bias)


class BatchNorm2d(Module):
    """Per-channel batch norm; mode follows the module's training flag."""

    def __init__(self, channels, momentum=0.1, eps=1e-5, dtype=np.float32):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def forward(self, x):
        stats = {"mean": self.running_mean, "var": self.running_var}
        mode = "train" if self.training else "eval"
        return batch_norm(x, self.gamma, self.beta, stats, mode,
                          momentum=self.momentum, eps=self.eps)


class ChannelNorm(Module):
    """Per-position normalization across the channel axis."""

    def __init__(self, channels, eps=1e-5, dtype=np.float32):
        super().__init__()
        self.eps = eps
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)

    def forward(self, x):
        return channel_norm(x, self.gamma, self.beta, eps=self.eps)


FAMILIES = ("residual", "convnext", "convnext_3x3", "recurrent_convnext")


@dataclass(frozen=True)
class BlockConfig:
    """One block's shape: family, width, recurrence depth, expansion.

    recurrence_steps only means something for recurrent_convnext and is
    forced to 1 elsewhere; expansion defaults to 4 for the plain convnext
    family (inverted bottleneck) and 1 otherwise.
    """

    family: str = "recurrent_convnext"
    channels: int = 32
    recurrence_steps: int = 2
    expansion: int = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown block family {self.family!r}")
        if self.channels < 1:
            raise ConfigError(f"channels must be positive, got {self.channels}")
        if self.recurrence_steps < 1:
            raise ConfigError(f"recurrence_steps must be >= 1, got {self.recurrence_steps}")
        if self.family != "recurrent_convnext" and self.recurrence_steps != 1:
            object.__setattr__(self, "recurrence_steps", 1)
        if self.expansion is None:
            object.__setattr__(self, "expansion", 4 if self.family == "convnext" else 1)
        if self.expansion < 1:
            raise ConfigError(f"expansion must be >= 1, got {self.expansion}")


class ResidualBlock(Module):
    """conv3x3 -> bn -> relu -> conv3x3 -> bn, then relu(x + f(x))."""

    def __init__(self, channels, rng, dtype=np.float32):
        super().__init__()
        self.conv1 = Conv2d(channels, channels, 3, rng, dtype=dtype)
        self.bn1 = BatchNorm2d(channels, dtype=dtype)
        self.conv2 = Conv2d(channels, channels, 3, rng, dtype=dtype)
        self.bn2 = BatchNorm2d(channels, dtype=dtype)

    def forward(self, x):
        y = relu(self.bn1(self.conv1(x)))
        y = self.bn2(self.conv2(y))
        return relu(x + y)


class RecurrentConv(Module):
    """Shared-weight recurrent 3x3 stage.

    y0 = act(norm(conv(x))); yr = act(norm(conv(x + y{r-1}))). The same
    conv is applied every step, so the parameter count is independent of
    steps. norm is optional (None skips it).
    """

    def __init__(self, channels, steps, rng, act=gelu, norm=None, dtype=np.float32):
        super().__init__()
        if steps < 1:
            raise ConfigError(f"recurrence needs steps >= 1, got {steps}")
        self.steps = steps
        self.act = act
        self.norm = norm
        self.conv = Conv2d(channels, channels, 3, rng, dtype=dtype)

    def _step(self, z):
        h = self.conv(z)
        if self.norm is not None:
            h = self.norm(h)
        return self.act(h)

    def forward(self, x):
        y = self._step(x)
        for _ in range(self.steps - 1):
            y = self._step(x + y)
        return y


class ConvNeXtBlock(Module):
    """x + g(x) with g = depthwise 7x7 -> channel_norm -> conv stack.

    convnext keeps the inverted-bottleneck 1x1 pair (expansion 4, one
    gelu between). convnext_3x3 swaps both 1x1s for 3x3 stages at
    expansion 1, activated after each; recurrent_convnext runs those two
    stages as shared-weight recurrences, so convnext_3x3 is exactly the
    steps=1 case.
    """

    def __init__(self, cfg, rng, dtype=np.float32):
        super().__init__()
        if cfg.family == "residual":
            raise ConfigError("residual family is not a convnext block")
        self.family = cfg.family
        c = cfg.channels
        self.dw = DepthwiseConv2d(c, 7, rng, dtype=dtype)
        self.norm = ChannelNorm(c, dtype=dtype)
        if cfg.family == "convnext":
            mid = c * cfg.expansion
            self.up = Conv2d(c, mid, 1, rng, dtype=dtype)
            self.down = Conv2d(mid, c, 1, rng, dtype=dtype)
        else:
            self.stage1 = RecurrentConv(c, cfg.recurrence_steps, rng, dtype=dtype)
            self.stage2 = RecurrentConv(c, cfg.recurrence_steps, rng, dtype=dtype)

    def forward(self, x):
        h = self.norm(self.dw(x))
        if self.family == "convnext":
            h = self.down(gelu(self.up(h)))
        else:
            h = self.stage2(self.stage1(h))
        return x + h


def build_block(cfg, rng, dtype=np.float32):
    if cfg.family == "residual":
        return ResidualBlock(cfg.channels, rng, dtype=dtype)
    return ConvNeXtBlock(cfg, rng, dtype=dtype)
