"""Compiled inner loops for the hot operations.

All kernels are sequential with a fixed accumulation order, so results are
bit-identical across runs. Loops are written so the innermost dimension is
contiguous and vectorizable.
"""

import numba
import numpy as np

# Abramowitz & Stegun 7.1.26 rational erf approximation, max abs error
# 4.8e-7 which is below float32 resolution of the gelu outputs. The Ax
# constants are pre-halved so 0.5*(1+erf(z)) needs no extra pass.
_P = np.float32(0.3275911)
_H1 = np.float32(0.5 * 0.254829592)
_H2 = np.float32(0.5 * -0.284496736)
_H3 = np.float32(0.5 * 1.421413741)
_H4 = np.float32(0.5 * -1.453152027)
_H5 = np.float32(0.5 * 1.061405429)
_INV_SQRT2 = np.float32(0.7071067811865476)
_INV_SQRT2PI = np.float32(0.3989422804014327)
_HALF = np.float32(0.5)
_ONE = np.float32(1.0)


@numba.njit(cache=True)
def im2col(xp, cols, kh, kw):
    """Gather kh*kw patches of padded xp [N,C,Hp,Wp] into cols [N,kh*kw*C,H*W].

    Row order is (i, j, c) with c fastest, matching the weight flattening
    in the conv forward.
    """
    n_batch, c_in, hp, wp = xp.shape
    h = hp - (kh - 1)
    w = wp - (kw - 1)
    for n in range(n_batch):
        for i in range(kh):
            for j in range(kw):
                for c in range(c_in):
                    r = (i * kw + j) * c_in + c
                    for y in range(h):
                        base = y * w
                        for x in range(w):
                            cols[n, r, base + x] = xp[n, c, y + i, x + j]


@numba.njit(cache=True)
def col2im(dcols, dxp, kh, kw):
    """Scatter-add cols gradient back into the padded input gradient."""
    n_batch, c_in, hp, wp = dxp.shape
    h = hp - (kh - 1)
    w = wp - (kw - 1)
    for n in range(n_batch):
        for i in range(kh):
            for j in range(kw):
                for c in range(c_in):
                    r = (i * kw + j) * c_in + c
                    for y in range(h):
                        base = y * w
                        for x in range(w):
                            dxp[n, c, y + i, x + j] += dcols[n, r, base + x]


@numba.njit(cache=True, fastmath=True)
def dw_conv(xp, w, out):
    """Depthwise convolution on padded input. w is [C, kh, kw], out zeroed."""
    n_batch, c_in, hp, wp = xp.shape
    kh, kw = w.shape[1], w.shape[2]
    h = hp - (kh - 1)
    wd = wp - (kw - 1)
    for n in range(n_batch):
        for c in range(c_in):
            for i in range(kh):
                for j in range(kw):
                    wv = w[c, i, j]
                    for y in range(h):
                        orow = out[n, c, y]
                        xrow = xp[n, c, y + i]
                        for x in range(wd):
                            orow[x] += wv * xrow[x + j]


@numba.njit(cache=True, fastmath=True)
def dw_conv_wgrad(xp, go, dw):
    """Weight gradient of the depthwise convolution. dw is [C, kh, kw] zeroed."""
    n_batch, c_in, hp, wp = xp.shape
    kh, kw = dw.shape[1], dw.shape[2]
    h = hp - (kh - 1)
    wd = wp - (kw - 1)
    for c in range(c_in):
        for i in range(kh):
            for j in range(kw):
                acc = dw[c, i, j]
                for n in range(n_batch):
                    for y in range(h):
                        grow = go[n, c, y]
                        xrow = xp[n, c, y + i]
                        for x in range(wd):
                            acc += xrow[x + j] * grow[x]
                dw[c, i, j] = acc


@numba.njit(cache=True, fastmath=True)
def gelu_stage(x, e, q):
    """First gelu pass: e = -x^2/2 (exp argument), q = half A&S polynomial."""
    for i in range(x.size):
        xi = x[i]
        a = np.abs(xi) * _INV_SQRT2
        t = _ONE / (_ONE + _P * a)
        q[i] = t * (_H1 + t * (_H2 + t * (_H3 + t * (_H4 + t * _H5))))
        e[i] = -_HALF * xi * xi


@numba.njit(cache=True, fastmath=True)
def gelu_combine(x, q, e, out):
    """Final gelu pass after e has been exponentiated in place."""
    for i in range(x.size):
        xi = x[i]
        cdf = _HALF + np.copysign(_HALF - q[i] * e[i], xi)
        out[i] = xi * cdf


@numba.njit(cache=True, fastmath=True)
def gelu_combine_cdf(x, q, e, out, cdf_out):
    """As gelu_combine but also stores the CDF for the backward pass."""
    for i in range(x.size):
        xi = x[i]
        cdf = _HALF + np.copysign(_HALF - q[i] * e[i], xi)
        cdf_out[i] = cdf
        out[i] = xi * cdf


@numba.njit(cache=True, fastmath=True)
def neg_half_sq(x, out):
    """out = -x^2/2, the exp argument of the Gaussian pdf."""
    for i in range(x.size):
        xi = x[i]
        out[i] = -_HALF * xi * xi


@numba.njit(cache=True, fastmath=True)
def gelu_backward(go, x, cdf, pdf_exp, gx):
    """gx = go * (cdf + x * pdf), with pdf_exp = exp(-x^2/2) precomputed."""
    for i in range(x.size):
        gx[i] = go[i] * (cdf[i] + x[i] * pdf_exp[i] * _INV_SQRT2PI)
