"""Reverse-mode automatic differentiation over dense numpy tensors.

A Tensor wraps a numpy array plus an optional gradient and a backward
closure. Operations build an acyclic graph; Tensor.backward() walks it in
reverse topological order and accumulates gradients on every tensor that
requires them. Gradients accumulate across calls; the optimizer zeroes
them per step.

Images are NCHW. Float32 is the working precision; float64 is supported
end to end so gradient checks can run at tight tolerances.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field

import numpy as np
import scipy.special

from . import _kernels as _k
from .errors import (
    AutodiffError,
    ConfigError,
    ContractError,
    DimensionError,
    GradCheckError,
)

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference, benchmarks)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled():
    return _grad_enabled


class Tensor:
    """Dense n-dimensional array with reverse-mode gradients."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_prev")

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            raise ContractError("Tensor data must be array-like, not a Tensor")
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._backward = None
        self._prev = ()

    # -- bookkeeping ------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return not self._prev

    def item(self):
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got {self.data.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={'set' if self.grad is not None else 'none'})"

    # -- graph construction ------------------------------------------------

    @staticmethod
    def _node(data, parents):
        """Create an op output, wiring graph edges only while recording."""
        out = Tensor(data)
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._prev = tuple(parents)
        return out

    def _accumulate(self, g):
        # Non-in-place addition: g may alias an upstream grad buffer.
        if self.grad is None:
            self.grad = g
        else:
            self.grad = self.grad + g

    def backward(self):
        """Backpropagate from a scalar loss to all reachable leaves."""
        if self.data.size != 1:
            raise AutodiffError(
                f"backward requires a scalar loss, got shape {self.data.shape}"
            )
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._prev:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        # Only leaves accumulate across backward calls; intermediate grads
        # are per-walk scratch.
        for node in topo:
            if node._prev:
                node.grad = None
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, -_as_tensor(other, self.dtype))

    def __rsub__(self, other):
        return add(_as_tensor(other, self.dtype), -self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other, self.dtype), self)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)


def _as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype if dtype is not None else np.float32))


def _unbroadcast(g, shape):
    """Reduce gradient g back to the pre-broadcast shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise arithmetic ----------------------------------------------


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b, a.dtype)
    out = Tensor._node(a.data + b.data, (a, b))
    if out.requires_grad:
        def _bw():
            g = out.grad
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g, b.data.shape))
        out._backward = _bw
    return out


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b, a.dtype)
    out = Tensor._node(a.data * b.data, (a, b))
    if out.requires_grad:
        def _bw():
            g = out.grad
            if a.requires_grad:
                a._accumulate(_unbroadcast(g * b.data, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g * a.data, b.data.shape))
        out._backward = _bw
    return out


def div(a, b):
    a, b = _as_tensor(a), _as_tensor(b, a.dtype)
    out = Tensor._node(a.data / b.data, (a, b))
    if out.requires_grad:
        def _bw():
            g = out.grad
            if a.requires_grad:
                a._accumulate(_unbroadcast(g / b.data, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))
        out._backward = _bw
    return out


def tensor_sum(x, axis=None, keepdims=False):
    x = _as_tensor(x)
    out = Tensor._node(x.data.sum(axis=axis, keepdims=keepdims), (x,))
    if out.requires_grad:
        def _bw():
            g = out.grad
            if axis is not None and not keepdims:
                axes = axis if isinstance(axis, tuple) else (axis,)
                g = np.expand_dims(g, tuple(a % x.data.ndim for a in axes))
            x._accumulate(np.broadcast_to(g, x.data.shape))
        out._backward = _bw
    return out


# -- activations ----------------------------------------------------------


def relu(x):
    x = _as_tensor(x)
    out = Tensor._node(np.maximum(x.data, 0), (x,))
    if out.requires_grad:
        mask = x.data > 0
        def _bw():
            x._accumulate(out.grad * mask)
        out._backward = _bw
    return out


def sigmoid(x):
    x = _as_tensor(x)
    d = x.data
    y = np.empty_like(d)
    np.negative(d, out=y)
    np.exp(y, out=y)
    y += 1.0
    np.divide(1.0, y, out=y)
    out = Tensor._node(y, (x,))
    if out.requires_grad:
        def _bw():
            x._accumulate(out.grad * y * (1.0 - y))
        out._backward = _bw
    return out


def _gelu_f32(d, want_cdf):
    flat = np.ascontiguousarray(d).reshape(-1)
    e = np.empty_like(flat)
    q = np.empty_like(flat)
    _k.gelu_stage(flat, e, q)
    np.exp(e, out=e)
    y = np.empty_like(flat)
    if want_cdf:
        cdf = np.empty_like(flat)
        _k.gelu_combine_cdf(flat, q, e, y, cdf)
        return y.reshape(d.shape), cdf.reshape(d.shape)
    _k.gelu_combine(flat, q, e, y)
    return y.reshape(d.shape), None


def gelu(x):
    """x * Phi(x) with the exact Gaussian CDF (error-function based)."""
    x = _as_tensor(x)
    d = x.data
    recording = _grad_enabled and x.requires_grad
    if d.dtype == np.float32:
        y, cdf = _gelu_f32(d, recording)
    else:
        cdf = 0.5 * (1.0 + scipy.special.erf(d * (1.0 / np.sqrt(2.0))))
        y = d * cdf
    out = Tensor._node(y, (x,))
    if out.requires_grad:
        def _bw():
            if d.dtype == np.float32:
                flat = np.ascontiguousarray(d).reshape(-1)
                pdf_exp = np.empty_like(flat)
                _k.neg_half_sq(flat, pdf_exp)
                np.exp(pdf_exp, out=pdf_exp)
                gx = np.empty_like(flat)
                _k.gelu_backward(
                    np.ascontiguousarray(out.grad).reshape(-1),
                    flat,
                    np.ascontiguousarray(cdf).reshape(-1),
                    pdf_exp,
                    gx,
                )
                x._accumulate(gx.reshape(d.shape))
            else:
                pdf = np.exp(-0.5 * d * d) * (1.0 / np.sqrt(2.0 * np.pi))
                x._accumulate(out.grad * (cdf + d * pdf))
        out._backward = _bw
    return out


# -- convolution -----------------------------------------------------------


@dataclass(frozen=True)
class ConvSpec:
    """Shape contract for stride-1 'same' convolutions.

    Stride is fixed at 1 and padding at (kh//2, kw//2): the networks are
    full-resolution, so no other configuration is representable.
    """

    in_channels: int
    out_channels: int
    kernel: tuple = (3, 3)
    groups: int = 1
    bias: bool = True
    stride: int = field(default=1)

    def __post_init__(self):
        if isinstance(self.kernel, int):
            object.__setattr__(self, "kernel", (self.kernel, self.kernel))
        kh, kw = self.kernel
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConfigError("channel counts must be positive")
        if self.stride != 1:
            raise ConfigError("stride is fixed at 1 for full-resolution networks")
        if kh % 2 == 0 or kw % 2 == 0:
            raise ConfigError(f"kernel must be odd for 'same' padding, got {self.kernel}")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ConfigError(
                f"groups={self.groups} must divide in_channels={self.in_channels} "
                f"and out_channels={self.out_channels}"
            )

    @property
    def padding(self):
        return (self.kernel[0] // 2, self.kernel[1] // 2)

    @property
    def weight_shape(self):
        kh, kw = self.kernel
        return (self.out_channels, self.in_channels // self.groups, kh, kw)


def _check_conv_args(x, spec, weight, bias):
    if x.data.ndim != 4:
        raise DimensionError("rank", f"conv input must be NCHW, got {x.data.ndim}d")
    if x.data.shape[1] != spec.in_channels:
        raise DimensionError(
            "channels", f"spec expects {spec.in_channels}, input has {x.data.shape[1]}"
        )
    if tuple(weight.data.shape) != spec.weight_shape:
        raise DimensionError(
            "weight", f"expected {spec.weight_shape}, got {tuple(weight.data.shape)}"
        )
    if spec.bias:
        if bias is None or tuple(bias.data.shape) != (spec.out_channels,):
            raise DimensionError(
                "bias", f"expected ({spec.out_channels},), got "
                f"{None if bias is None else tuple(bias.data.shape)}"
            )
    elif bias is not None:
        raise ConfigError("bias tensor given but spec.bias is False")


def _pad_nchw(d, ph, pw):
    if ph == 0 and pw == 0:
        return d
    return np.pad(d, ((0, 0), (0, 0), (ph, ph), (pw, pw)))


def _w2d(weight, spec):
    co = spec.out_channels
    kh, kw = spec.kernel
    cig = spec.in_channels // spec.groups
    # [Co, Cig, kh, kw] -> [Co, kh*kw*Cig] in (i, j, c) order, c fastest.
    return np.ascontiguousarray(weight.transpose(0, 2, 3, 1)).reshape(co, kh * kw * cig)


def _conv_forward_grouped(d, w, spec):
    """im2col + matmul forward. Returns (out_data, cols) with cols per group."""
    n, _, h, wd = d.shape
    kh, kw = spec.kernel
    ph, pw = spec.padding
    g = spec.groups
    cig = spec.in_channels // g
    cog = spec.out_channels // g
    xp = _pad_nchw(d, ph, pw)
    w2 = _w2d(w, spec)
    out = np.empty((n, spec.out_channels, h, wd), dtype=d.dtype)
    cols_all = []
    for gi in range(g):
        xg = np.ascontiguousarray(xp[:, gi * cig:(gi + 1) * cig])
        if (kh, kw) == (1, 1):
            cols = xg.reshape(n, cig, h * wd)
        else:
            cols = np.empty((n, kh * kw * cig, h * wd), dtype=d.dtype)
            _k.im2col(xg, cols, kh, kw)
        wg = w2[gi * cog:(gi + 1) * cog]
        out[:, gi * cog:(gi + 1) * cog] = np.matmul(
            wg[None], cols
        ).reshape(n, cog, h, wd)
        cols_all.append(cols)
    return out, cols_all, w2


def _conv_forward_tiled(d, w, bias, spec):
    """Row-tiled im2col + matmul, patch tile sized for the private L2.

    Inference-only path: nothing is kept for a backward pass, and the
    small working set keeps throughput stable when neighbors are
    thrashing the shared cache. Bias folds into the cache-hot tile.
    """
    n, _, h, wd = d.shape
    kh, kw = spec.kernel
    co = spec.out_channels
    xp = _pad_nchw(d, spec.padding[0], spec.padding[1])
    w2 = _w2d(w, spec)
    out = np.empty((n, co, h, wd), dtype=d.dtype)
    k2c = kh * kw * spec.in_channels
    rows = min(h, max(1, 1_200_000 // (k2c * wd * d.dtype.itemsize)))
    cols = np.empty((n, k2c, rows * wd), dtype=d.dtype)
    bcol = None if bias is None else bias.reshape(co, 1).astype(d.dtype, copy=False)
    for r0 in range(0, h, rows):
        r1 = min(r0 + rows, h)
        cur = r1 - r0
        buf = cols if cur == rows else np.empty((n, k2c, cur * wd), dtype=d.dtype)
        _k.im2col(xp[:, :, r0:r1 + kh - 1, :], buf, kh, kw)
        for ni in range(n):
            tmp = np.matmul(w2, buf[ni])
            if bcol is not None:
                tmp += bcol
            out[ni, :, r0:r1] = tmp.reshape(co, cur, wd)
    return out


def conv2d(x, spec, weight, bias=None):
    """2D convolution, stride 1, zero 'same' padding, optional groups."""
    x = _as_tensor(x)
    _check_conv_args(x, spec, weight, bias)
    d = x.data
    n, _, h, wd = d.shape
    kh, kw = spec.kernel
    ph, pw = spec.padding
    g = spec.groups
    cig = spec.in_channels // g
    cog = spec.out_channels // g
    recording = _grad_enabled and (
        x.requires_grad
        or weight.requires_grad
        or (bias is not None and bias.requires_grad)
    )
    if not recording and g == 1 and (kh, kw) != (1, 1):
        out_data = _conv_forward_tiled(
            d, weight.data, None if bias is None else bias.data, spec
        )
        out = Tensor._node(out_data, (x, weight) if bias is None else (x, weight, bias))
        return out
    out_data, cols_all, w2 = _conv_forward_grouped(d, weight.data, spec)
    if bias is not None:
        out_data += bias.data.reshape(1, spec.out_channels, 1, 1)
    parents = (x, weight) if bias is None else (x, weight, bias)
    out = Tensor._node(out_data, parents)
    if out.requires_grad:
        def _bw():
            go = out.grad
            go2 = go.reshape(n, spec.out_channels, h * wd)
            if bias is not None and bias.requires_grad:
                bias._accumulate(go.sum(axis=(0, 2, 3)))
            need_x = x.requires_grad
            need_w = weight.requires_grad
            if need_x:
                dxp = np.zeros(
                    (n, spec.in_channels, h + 2 * ph, wd + 2 * pw), dtype=d.dtype
                )
            if need_w:
                dw2 = np.zeros_like(w2)
            for gi in range(g):
                gg = np.ascontiguousarray(go2[:, gi * cog:(gi + 1) * cog])
                cols = cols_all[gi]
                wg = w2[gi * cog:(gi + 1) * cog]
                if need_w:
                    dw2[gi * cog:(gi + 1) * cog] = np.matmul(
                        gg, cols.transpose(0, 2, 1)
                    ).sum(axis=0)
                if need_x:
                    dcols = np.matmul(wg.T[None], gg)
                    if (kh, kw) == (1, 1):
                        dxp[:, gi * cig:(gi + 1) * cig] += dcols.reshape(n, cig, h, wd)
                    else:
                        dxg = np.zeros(
                            (n, cig, h + 2 * ph, wd + 2 * pw), dtype=d.dtype
                        )
                        _k.col2im(np.ascontiguousarray(dcols), dxg, kh, kw)
                        dxp[:, gi * cig:(gi + 1) * cig] += dxg
            if need_w:
                co = spec.out_channels
                dw = dw2.reshape(co, kh, kw, cig).transpose(0, 3, 1, 2)
                weight._accumulate(np.ascontiguousarray(dw))
            if need_x:
                if ph or pw:
                    x._accumulate(
                        np.ascontiguousarray(dxp[:, :, ph:ph + h, pw:pw + wd])
                    )
                else:
                    x._accumulate(dxp)
        out._backward = _bw
    return out


def depthwise_conv2d(x, spec, weight, bias=None):
    """Per-channel convolution: groups == in_channels == out_channels."""
    x = _as_tensor(x)
    if not (spec.groups == spec.in_channels == spec.out_channels):
        raise ConfigError(
            "depthwise requires groups == in_channels == out_channels, got "
            f"groups={spec.groups}, in={spec.in_channels}, out={spec.out_channels}"
        )
    _check_conv_args(x, spec, weight, bias)
    d = x.data
    n, c, h, wd = d.shape
    kh, kw = spec.kernel
    ph, pw = spec.padding
    w3 = np.ascontiguousarray(weight.data.reshape(c, kh, kw))
    xp = np.ascontiguousarray(_pad_nchw(d, ph, pw))
    out_data = np.zeros((n, c, h, wd), dtype=d.dtype)
    _k.dw_conv(xp, w3, out_data)
    if bias is not None:
        out_data += bias.data.reshape(1, c, 1, 1)
    parents = (x, weight) if bias is None else (x, weight, bias)
    out = Tensor._node(out_data, parents)
    if out.requires_grad:
        def _bw():
            go = np.ascontiguousarray(out.grad)
            if bias is not None and bias.requires_grad:
                bias._accumulate(go.sum(axis=(0, 2, 3)))
            if weight.requires_grad:
                dw3 = np.zeros_like(w3)
                _k.dw_conv_wgrad(xp, go, dw3)
                weight._accumulate(dw3.reshape(c, 1, kh, kw))
            if x.requires_grad:
                # Input grad is the correlation of go with the flipped kernel.
                gop = np.ascontiguousarray(_pad_nchw(go, ph, pw))
                wflip = np.ascontiguousarray(w3[:, ::-1, ::-1])
                dx = np.zeros_like(d)
                _k.dw_conv(gop, wflip, dx)
                x._accumulate(dx)
        out._backward = _bw
    return out


# -- normalization ---------------------------------------------------------


def batch_norm(x, gamma, beta, running_stats, mode, momentum=0.1, eps=1e-5):
    """Per-channel batch normalization over (N, H, W).

    Train mode normalizes with biased batch statistics and updates
    running_stats ({'mean','var'} arrays of length C) in place using the
    unbiased variance. Eval mode applies the running statistics.
    """
    x = _as_tensor(x)
    if mode not in ("train", "eval"):
        raise ConfigError(f"batch_norm mode must be 'train' or 'eval', got {mode!r}")
    d = x.data
    if d.ndim != 4:
        raise DimensionError("rank", f"batch_norm input must be NCHW, got {d.ndim}d")
    c = d.shape[1]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise DimensionError("channels", f"gamma/beta must have shape ({c},)")
    axes = (0, 2, 3)
    if mode == "train":
        mean = d.mean(axis=axes)
        var = d.var(axis=axes)
        n_red = d.shape[0] * d.shape[2] * d.shape[3]
        unbiased = var * (n_red / (n_red - 1)) if n_red > 1 else var
        # In-place so checkpointing keeps holding the same buffer objects.
        rm, rv = running_stats["mean"], running_stats["var"]
        rm *= 1.0 - momentum
        rm += momentum * mean.astype(rm.dtype)
        rv *= 1.0 - momentum
        rv += momentum * unbiased.astype(rv.dtype)
    else:
        mean = running_stats["mean"].astype(d.dtype)
        var = running_stats["var"].astype(d.dtype)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (d - mean.reshape(1, c, 1, 1)) * inv_std.reshape(1, c, 1, 1)
    out_data = gamma.data.reshape(1, c, 1, 1) * xhat + beta.data.reshape(1, c, 1, 1)
    out = Tensor._node(out_data, (x, gamma, beta))
    if out.requires_grad:
        def _bw():
            go = out.grad
            if beta.requires_grad:
                beta._accumulate(go.sum(axis=axes))
            if gamma.requires_grad:
                gamma._accumulate((go * xhat).sum(axis=axes))
            if x.requires_grad:
                gxhat = go * gamma.data.reshape(1, c, 1, 1)
                if mode == "train":
                    n_red = d.shape[0] * d.shape[2] * d.shape[3]
                    m1 = gxhat.mean(axis=axes, keepdims=True)
                    m2 = (gxhat * xhat).mean(axis=axes, keepdims=True)
                    dx = (gxhat - m1 - xhat * m2) * inv_std.reshape(1, c, 1, 1)
                else:
                    dx = gxhat * inv_std.reshape(1, c, 1, 1)
                x._accumulate(dx)
        out._backward = _bw
    return out


def channel_norm(x, gamma, beta, eps=1e-5):
    """Standardize across channels at each (n, h, w) position, then affine."""
    x = _as_tensor(x)
    d = x.data
    if d.ndim != 4:
        raise DimensionError("rank", f"channel_norm input must be NCHW, got {d.ndim}d")
    c = d.shape[1]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise DimensionError("channels", f"gamma/beta must have shape ({c},)")
    mean = d.mean(axis=1, keepdims=True)
    var = d.var(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (d - mean) * inv_std
    out_data = gamma.data.reshape(1, c, 1, 1) * xhat + beta.data.reshape(1, c, 1, 1)
    out = Tensor._node(out_data, (x, gamma, beta))
    if out.requires_grad:
        def _bw():
            go = out.grad
            if beta.requires_grad:
                beta._accumulate(go.sum(axis=(0, 2, 3)))
            if gamma.requires_grad:
                gamma._accumulate((go * xhat).sum(axis=(0, 2, 3)))
            if x.requires_grad:
                gxhat = go * gamma.data.reshape(1, c, 1, 1)
                m1 = gxhat.mean(axis=1, keepdims=True)
                m2 = (gxhat * xhat).mean(axis=1, keepdims=True)
                x._accumulate((gxhat - m1 - xhat * m2) * inv_std)
        out._backward = _bw
    return out


# -- gradient checking -------------------------------------------------------


def grad_check(f, params, step=1e-5, tolerance=1e-4):
    """Compare analytic gradients of scalar f() against central differences.

    params maps names to leaf Tensors that f closes over; float64 data is
    expected for meaningful tolerances. Returns the max relative error
    |analytic - numeric| / max(|analytic|, |numeric|, 1e-8) over all
    parameters. Values above `tolerance` indicate a broken gradient.
    Raises GradCheckError when any gradient is non-finite.
    """
    for t in params.values():
        t.zero_grad()
    out = f()
    if out.data.size != 1:
        raise AutodiffError("grad_check requires f to return a scalar Tensor")
    out.backward()
    analytic = {}
    for name, t in params.items():
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        if not np.all(np.isfinite(g)):
            raise GradCheckError(name, "non-finite analytic gradient")
        analytic[name] = np.array(g, dtype=np.float64)
    worst = 0.0
    for name, t in params.items():
        flat = t.data.reshape(-1)
        a_flat = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = float(f().data)
            flat[i] = orig - step
            fm = float(f().data)
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * step)
            if not np.isfinite(numeric):
                raise GradCheckError(name, f"non-finite numeric gradient at index {i}")
            denom = max(abs(a_flat[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(a_flat[i] - numeric) / denom)
    return worst
