"""Differentiable operations over :class:`~lkmn.tensor.Tensor`.

Every function returns a new tensor and, when gradients are enabled and an
input requires them, records a backward closure. Convolutions are
cross-correlations with zero padding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, DimensionError
from .tensor import Tensor

__all__ = [
    "ConvParams",
    "add",
    "sub",
    "mul",
    "scale_channels",
    "conv2d",
    "strip_dwconv",
    "channel_shuffle",
    "channel_split",
    "concat_channels",
    "global_avg_pool",
    "activation",
    "gelu",
    "relu",
    "sigmoid",
    "pixel_shuffle",
    "fft2",
    "abs_",
    "sum_",
    "mean",
]


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else np.float32
    return Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_nchw(x: Tensor, what: str) -> None:
    if x.ndim != 4:
        raise DimensionError(f"{what} expects an NCHW tensor, got shape {x.shape}")


# -- elementwise arithmetic ----------------------------------------------------


def add(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a = _as_tensor(a, b)
    b = _as_tensor(b, a)
    sa, sb = a.shape, b.shape

    def back(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return Tensor._from_op(a.data + b.data, (a, b), back, "add")


def sub(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a = _as_tensor(a, b)
    b = _as_tensor(b, a)
    sa, sb = a.shape, b.shape

    def back(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return Tensor._from_op(a.data - b.data, (a, b), back, "sub")


def mul(a, b) -> Tensor:
    """Elementwise product; a python number or broadcastable tensor on either side."""
    if not isinstance(a, Tensor):
        a, b = b, a
    if not isinstance(b, Tensor):
        k = float(b)
        return Tensor._from_op(a.data * k, (a,), lambda g: (g * k,), "scale")
    ad, bd = a.data, b.data
    sa, sb = a.shape, b.shape

    def back(g):
        ga = _unbroadcast(g * bd, sa) if a.requires_grad else None
        gb = _unbroadcast(g * ad, sb) if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(ad * bd, (a, b), back, "mul")


def scale_channels(x: Tensor, v: Tensor) -> Tensor:
    """Multiply each channel of an NCHW tensor by one entry of a length-C vector."""
    _check_nchw(x, "scale_channels")
    if v.shape != (x.shape[1],):
        raise ConfigError(f"channel scale has shape {v.shape}, expected ({x.shape[1]},)")
    vb = v.data.reshape(1, -1, 1, 1)
    xd = x.data

    def back(g):
        gx = g * vb if x.requires_grad else None
        gv = (g * xd).sum(axis=(0, 2, 3)) if v.requires_grad else None
        return gx, gv

    return Tensor._from_op(xd * vb, (x, v), back, "scale_channels")


def abs_(x: Tensor) -> Tensor:
    sign = np.sign(x.data)
    return Tensor._from_op(np.abs(x.data), (x,), lambda g: (g * sign,), "abs")


def sum_(x: Tensor) -> Tensor:
    shape = x.shape
    total = np.asarray(x.data.sum(dtype=x.dtype), dtype=x.dtype).reshape(1)
    return Tensor._from_op(total, (x,), lambda g: (np.broadcast_to(g.reshape(()), shape).copy(),), "sum")


def mean(x: Tensor) -> Tensor:
    n = x.size
    shape = x.shape
    m = np.asarray(x.data.sum(dtype=x.dtype) / n, dtype=x.dtype).reshape(1)
    return Tensor._from_op(m, (x,), lambda g: (np.full(shape, g.reshape(()) / n, dtype=g.dtype),), "mean")


# -- convolution ---------------------------------------------------------------


@dataclass
class ConvParams:
    weight: Tensor
    bias: Tensor | None = None
    stride: int = 1
    padding: tuple[int, int] = (0, 0)
    groups: int = 1

    def __post_init__(self):
        if self.weight.ndim != 4:
            raise DimensionError(f"conv weight must be (c_out, c_in/groups, kh, kw), got {self.weight.shape}")
        if isinstance(self.padding, int):
            self.padding = (self.padding, self.padding)
        if self.stride < 1:
            raise ConfigError(f"stride must be positive, got {self.stride}")
        if self.groups < 1:
            raise ConfigError(f"groups must be positive, got {self.groups}")
        if min(self.padding) < 0:
            raise ConfigError(f"padding must be non-negative, got {self.padding}")
        c_out = self.weight.shape[0]
        if c_out % self.groups:
            raise ConfigError(f"c_out={c_out} is not divisible by groups={self.groups}")
        if self.bias is not None and self.bias.shape != (c_out,):
            raise DimensionError(f"bias shape {self.bias.shape} does not match c_out={c_out}")

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1] * self.groups

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def kernel(self) -> tuple[int, int]:
        return self.weight.shape[2], self.weight.shape[3]


def conv2d(x: Tensor, p: ConvParams) -> Tensor:
    """Grouped 2-D cross-correlation with zero padding."""
    _check_nchw(x, "conv2d")
    n, c, h, w = x.shape
    c_out, c_in_g, kh, kw = p.weight.shape
    g = p.groups
    if c != c_in_g * g:
        raise DimensionError(
            f"channel axis: input has {c} channels, weight expects {c_in_g * g} (= {c_in_g} x {g} groups)"
        )
    ph, pw = p.padding
    s = p.stride
    ho = (h + 2 * ph - kh) // s + 1
    wo = (w + 2 * pw - kw) // s + 1
    if ho < 1:
        raise DimensionError(f"height axis: {h} rows with kernel {kh}, padding {ph} gives empty output")
    if wo < 1:
        raise DimensionError(f"width axis: {w} cols with kernel {kw}, padding {pw} gives empty output")

    xd = x.data
    wd = p.weight.data
    xp = np.pad(xd, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else xd
    hs = s * (ho - 1) + 1
    ws = s * (wo - 1) + 1
    depthwise = c_in_g == 1 and c_out == c and g == c

    if depthwise:
        out = np.zeros((n, c_out, ho, wo), dtype=xd.dtype)
        for i in range(kh):
            for j in range(kw):
                out += wd[:, 0, i, j].reshape(1, -1, 1, 1) * xp[:, :, i : i + hs : s, j : j + ws : s]
    else:
        cog = c_out // g
        wg = wd.reshape(g, cog, c_in_g, kh, kw)
        acc = np.zeros((n, g, cog, ho * wo), dtype=xd.dtype)
        for i in range(kh):
            for j in range(kw):
                xs = xp[:, :, i : i + hs : s, j : j + ws : s].reshape(n, g, c_in_g, ho * wo)
                acc += np.matmul(wg[:, :, :, i, j], xs)
        out = acc.reshape(n, c_out, ho, wo)
    if p.bias is not None:
        out = out + p.bias.data.reshape(1, -1, 1, 1)

    weight, bias = p.weight, p.bias

    def back(gy):
        gx = gw = gb = None
        if bias is not None and bias.requires_grad:
            gb = gy.sum(axis=(0, 2, 3))
        need_x, need_w = x.requires_grad, weight.requires_grad
        if need_x:
            gxp = np.zeros_like(xp)
        if need_w:
            gw = np.zeros_like(wd)
        if depthwise:
            for i in range(kh):
                for j in range(kw):
                    if need_w:
                        xs = xp[:, :, i : i + hs : s, j : j + ws : s]
                        gw[:, 0, i, j] = np.einsum("nchw,nchw->c", gy, xs)
                    if need_x:
                        gxp[:, :, i : i + hs : s, j : j + ws : s] += wd[:, 0, i, j].reshape(1, -1, 1, 1) * gy
        else:
            gyg = gy.reshape(n, g, cog, ho * wo)
            gwg = gw.reshape(g, cog, c_in_g, kh, kw) if need_w else None
            for i in range(kh):
                for j in range(kw):
                    if need_w:
                        xs = xp[:, :, i : i + hs : s, j : j + ws : s].reshape(n, g, c_in_g, ho * wo)
                        gwg[:, :, :, i, j] = np.matmul(gyg, xs.transpose(0, 1, 3, 2)).sum(axis=0)
                    if need_x:
                        gxs = np.matmul(wg[:, :, :, i, j].transpose(0, 2, 1), gyg)
                        gxp[:, :, i : i + hs : s, j : j + ws : s] += gxs.reshape(n, c, ho, wo)
        if need_x:
            gx = gxp[:, :, ph : ph + h, pw : pw + w] if (ph or pw) else gxp
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._from_op(out, parents, back, "conv2d")


def strip_dwconv(x: Tensor, p: ConvParams, orientation: str) -> Tensor:
    """Depthwise 1xK (horizontal) or Kx1 (vertical) convolution that keeps H and W."""
    _check_nchw(x, "strip_dwconv")
    _, _, kh, kw = p.weight.shape
    if orientation == "horizontal":
        k, other = kw, kh
        padding = (0, (k - 1) // 2)
    elif orientation == "vertical":
        k, other = kh, kw
        padding = ((k - 1) // 2, 0)
    else:
        raise ConfigError(f"orientation must be 'horizontal' or 'vertical', got {orientation!r}")
    if other != 1:
        raise ConfigError(f"{orientation} strip kernel must be 1 wide across, got {p.weight.shape[2:]}")
    if k % 2 == 0:
        raise ConfigError(f"strip kernel length must be odd, got {k}")
    c = x.shape[1]
    if p.groups != c or p.weight.shape[:2] != (c, 1):
        raise ConfigError(f"strip convolution must be depthwise over {c} channels, got weight {p.weight.shape}")
    return conv2d(x, ConvParams(p.weight, p.bias, 1, padding, c))


# -- channel bookkeeping -------------------------------------------------------


def channel_shuffle(x: Tensor, g: int) -> Tensor:
    """Interleave ``g`` channel groups: output channel j*g+i takes input channel i*(c/g)+j."""
    _check_nchw(x, "channel_shuffle")
    n, c, h, w = x.shape
    if g < 1 or c % g:
        raise ConfigError(f"channel count {c} is not divisible by shuffle group {g}")
    out = x.data.reshape(n, g, c // g, h, w).transpose(0, 2, 1, 3, 4).reshape(n, c, h, w)

    def back(gy):
        return (gy.reshape(n, c // g, g, h, w).transpose(0, 2, 1, 3, 4).reshape(n, c, h, w),)

    return Tensor._from_op(out, (x,), back, "channel_shuffle")


def channel_split(x: Tensor, first: int) -> tuple[Tensor, Tensor]:
    _check_nchw(x, "channel_split")
    c = x.shape[1]
    if not 0 < first < c:
        raise ConfigError(f"split point must satisfy 0 < first < {c}, got {first}")
    xd = x.data

    def back_head(gy):
        gx = np.zeros_like(xd)
        gx[:, :first] = gy
        return (gx,)

    def back_tail(gy):
        gx = np.zeros_like(xd)
        gx[:, first:] = gy
        return (gx,)

    head = Tensor._from_op(np.ascontiguousarray(xd[:, :first]), (x,), back_head, "split")
    tail = Tensor._from_op(np.ascontiguousarray(xd[:, first:]), (x,), back_tail, "split")
    return head, tail


def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    if not xs:
        raise DimensionError("concat_channels needs at least one tensor")
    for t in xs:
        _check_nchw(t, "concat_channels")
    n, _, h, w = xs[0].shape
    for t in xs[1:]:
        if (t.shape[0], t.shape[2], t.shape[3]) != (n, h, w):
            raise DimensionError(f"spatial/batch mismatch in concat: {xs[0].shape} vs {t.shape}")
    bounds = np.cumsum([0] + [t.shape[1] for t in xs])

    def back(gy):
        return tuple(gy[:, bounds[k] : bounds[k + 1]] for k in range(len(xs)))

    return Tensor._from_op(np.concatenate([t.data for t in xs], axis=1), tuple(xs), back, "concat")


def global_avg_pool(x: Tensor) -> Tensor:
    _check_nchw(x, "global_avg_pool")
    n, c, h, w = x.shape
    area = h * w
    out = x.data.mean(axis=(2, 3), keepdims=True)

    def back(gy):
        return (np.broadcast_to(gy / area, (n, c, h, w)).copy(),)

    return Tensor._from_op(out, (x,), back, "gap")


# -- activations -----------------------------------------------------------------

# tanh approximation of GELU
_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def gelu(x: Tensor) -> Tensor:
    xd = x.data
    x2 = xd * xd
    u = _GELU_C * (xd + _GELU_A * x2 * xd)
    t = np.tanh(u)
    out = 0.5 * xd * (1.0 + t)

    def back(g):
        du = _GELU_C * (1.0 + 3.0 * _GELU_A * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * du),)

    return Tensor._from_op(out, (x,), back, "gelu")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor._from_op(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    # split by sign to avoid overflow in exp
    e = np.exp(-np.abs(xd))
    out = np.where(xd >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
    return Tensor._from_op(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


_ACTIVATIONS = {"gelu": gelu, "relu": relu, "sigmoid": sigmoid}


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "none":
        return x
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ConfigError(f"unknown activation {kind!r}; expected one of {sorted(_ACTIVATIONS)} or 'none'") from None
    return fn(x)


# -- reconstruction ----------------------------------------------------------------


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """Sub-pixel rearrangement: out[n, c, h*r+dy, w*r+dx] = in[n, c*r*r + dy*r + dx, h, w]."""
    _check_nchw(x, "pixel_shuffle")
    n, c, h, w = x.shape
    if r < 1 or c % (r * r):
        raise ConfigError(f"channel count {c} is not divisible by r^2 = {r * r}")
    co = c // (r * r)
    out = x.data.reshape(n, co, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, co, h * r, w * r)

    def back(gy):
        return (gy.reshape(n, co, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, c, h, w),)

    return Tensor._from_op(out, (x,), back, "pixel_shuffle")


def fft2(x: Tensor) -> tuple[Tensor, Tensor]:
    """Unnormalised 2-D DFT over the last two axes, returned as (real, imag)."""
    _check_nchw(x, "fft2")
    dt = x.dtype
    spec = np.fft.fft2(x.data, axes=(-2, -1))

    # d(Re X)/dx = Re(F g) and d(Im X)/dx = Im(F g) for real-valued g
    def back_re(g):
        return (np.fft.fft2(g, axes=(-2, -1)).real.astype(dt),)

    def back_im(g):
        return (np.fft.fft2(g, axes=(-2, -1)).imag.astype(dt),)

    re = Tensor._from_op(np.ascontiguousarray(spec.real, dtype=dt), (x,), back_re, "fft2.re")
    im = Tensor._from_op(np.ascontiguousarray(spec.imag, dtype=dt), (x,), back_im, "fft2.im")
    return re, im
