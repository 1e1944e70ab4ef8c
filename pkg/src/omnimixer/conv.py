"""Spatial primitives: padding, depthwise convolution, x2 upsampling, transposed convolution.

Every primitive is linear in each argument, so each one is paired with its
adjoint and the two call each other in ``backward``.  That keeps the gradient
of a gradient available everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import Function, Tensor, _add_macs, flip, narrow

_HORIZONTAL = ("circular", "zero")
_VERTICAL = ("zero", "replicate")


@dataclass(frozen=True)
class PaddingMode:
    """How a convolution fills the border.  Generator convolutions wrap horizontally."""

    horizontal: str = "circular"
    vertical: str = "replicate"

    def __post_init__(self):
        if self.horizontal not in _HORIZONTAL:
            raise ConfigError(f"horizontal padding must be one of {_HORIZONTAL}, got {self.horizontal!r}")
        if self.vertical not in _VERTICAL:
            raise ConfigError(f"vertical padding must be one of {_VERTICAL}, got {self.vertical!r}")


ZERO_PAD = PaddingMode("zero", "zero")


class Pad2d(Function):
    """Pad the last two axes; horizontal first, then vertical."""

    ph: int
    pw: int
    mode: PaddingMode

    def forward(self, x):
        ph, pw = self.ph, self.pw
        if pw:
            if self.mode.horizontal == "circular":
                x = np.concatenate([x[..., -pw:], x, x[..., :pw]], axis=-1)
            else:
                x = np.pad(x, [(0, 0)] * (x.ndim - 1) + [(pw, pw)])
        if ph:
            kind = "edge" if self.mode.vertical == "replicate" else "constant"
            x = np.pad(x, [(0, 0)] * (x.ndim - 2) + [(ph, ph), (0, 0)], mode=kind)
        return x

    def backward(self, g):
        return (PadAdjoint.apply(g, ph=self.ph, pw=self.pw, mode=self.mode),)


class PadAdjoint(Function):
    """Fold padded borders back onto the interior (transpose of :class:`Pad2d`)."""

    ph: int
    pw: int
    mode: PaddingMode

    def forward(self, g):
        ph, pw = self.ph, self.pw
        if ph:
            h = g.shape[-2] - 2 * ph
            inner = g[..., ph:ph + h, :].copy()
            if self.mode.vertical == "replicate":
                inner[..., 0, :] += g[..., :ph, :].sum(axis=-2)
                inner[..., -1, :] += g[..., ph + h:, :].sum(axis=-2)
            g = inner
        if pw:
            w = g.shape[-1] - 2 * pw
            inner = g[..., pw:pw + w].copy()
            if self.mode.horizontal == "circular":
                inner[..., w - pw:] += g[..., :pw]
                inner[..., :pw] += g[..., pw + w:]
            g = inner
        return g

    def backward(self, g):
        return (Pad2d.apply(g, ph=self.ph, pw=self.pw, mode=self.mode),)


def pad2d(x: Tensor, ph: int, pw: int, mode: PaddingMode) -> Tensor:
    if mode.horizontal == "circular" and pw > x.shape[-1]:
        raise ShapeError(f"circular pad {pw} wider than input width {x.shape[-1]}")
    return Pad2d.apply(x, ph=ph, pw=pw, mode=mode)


class DWCorr(Function):
    """Valid per-channel cross-correlation: x[B, C, Hp, Wp] with k[C, kh, kw]."""

    def forward(self, x, k):
        _, kh, kw = k.shape
        ho, wo = x.shape[-2] - kh + 1, x.shape[-1] - kw + 1
        out = np.zeros(x.shape[:-2] + (ho, wo), dtype=np.result_type(x, k))
        for a in range(kh):
            for b in range(kw):
                out += x[..., a:a + ho, b:b + wo] * k[:, a, b, None, None]
        _add_macs(out.size * kh * kw)
        return out

    def backward(self, g):
        x, k = self.inputs
        _, kh, kw = k.shape
        gx = gk = None
        if x.requires_grad:
            gx = DWCorr.apply(pad2d(g, kh - 1, kw - 1, ZERO_PAD), flip(k, (1, 2)))
        if k.requires_grad:
            gk = DWCorrWeight.apply(x, g)
        return gx, gk


class DWCorrWeight(Function):
    """Kernel gradient of :class:`DWCorr`: sum over batch and space of x-window * g."""

    def forward(self, x, g):
        ho, wo = g.shape[-2:]
        kh, kw = x.shape[-2] - ho + 1, x.shape[-1] - wo + 1
        red = tuple(i for i in range(g.ndim) if i != g.ndim - 3)
        out = np.empty((g.shape[-3], kh, kw), dtype=np.result_type(x, g))
        for a in range(kh):
            for b in range(kw):
                out[:, a, b] = (x[..., a:a + ho, b:b + wo] * g).sum(axis=red)
        return out

    def backward(self, G):
        x, g = self.inputs
        _, kh, kw = G.shape
        gx = gg = None
        if x.requires_grad:
            gx = DWCorr.apply(pad2d(g, kh - 1, kw - 1, ZERO_PAD), flip(G, (1, 2)))
        if g.requires_grad:
            gg = DWCorr.apply(x, G)
        return gx, gg


def depthwise_conv2d(x: Tensor, kernels: Tensor, bias: Tensor | None,
                     pad: PaddingMode = PaddingMode()) -> Tensor:
    """Same-size depthwise convolution of ``x[..., C, H, W]`` with ``kernels[C, k, k]``."""
    c, kh, kw = kernels.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ConfigError(f"depthwise kernel must have odd size, got {kh}x{kw}")
    if x.ndim < 3 or x.shape[-3] != c:
        raise ShapeError(f"input {x.shape} does not carry {c} channels for kernels {kernels.shape}")
    y = DWCorr.apply(pad2d(x, kh // 2, kw // 2, pad), kernels)
    if bias is not None:
        y = y + bias.reshape(c, 1, 1).expand(y.shape[-3:])
    return y


def _prev(x, axis, wrap):
    n = x.shape[axis]
    if wrap:
        return np.roll(x, 1, axis=axis)
    return np.take(x, np.r_[0, 0:n - 1], axis=axis)


def _next(x, axis, wrap):
    n = x.shape[axis]
    if wrap:
        return np.roll(x, -1, axis=axis)
    return np.take(x, np.r_[1:n, n - 1], axis=axis)


def _prev_adj(g, axis, wrap):
    if wrap:
        return np.roll(g, -1, axis=axis)
    out = np.zeros_like(g)
    n = g.shape[axis]
    idx = [slice(None)] * g.ndim
    src = list(idx)
    idx[axis], src[axis] = slice(0, n - 1), slice(1, n)
    out[tuple(idx)] = g[tuple(src)]
    idx[axis] = src[axis] = 0
    out[tuple(idx)] += g[tuple(src)]
    return out


def _next_adj(g, axis, wrap):
    if wrap:
        return np.roll(g, 1, axis=axis)
    out = np.zeros_like(g)
    n = g.shape[axis]
    idx = [slice(None)] * g.ndim
    src = list(idx)
    idx[axis], src[axis] = slice(1, n), slice(0, n - 1)
    out[tuple(idx)] = g[tuple(src)]
    idx[axis] = src[axis] = n - 1
    out[tuple(idx)] += g[tuple(src)]
    return out


class Upsample2x(Function):
    """Linear x2 interpolation along one axis (half-pixel centres)."""

    axis: int
    wrap: bool

    def forward(self, x):
        ax = self.axis
        even = 0.75 * x + 0.25 * _prev(x, ax, self.wrap)
        odd = 0.75 * x + 0.25 * _next(x, ax, self.wrap)
        out = np.stack([even, odd], axis=ax + 1)
        shape = list(x.shape)
        shape[ax] *= 2
        return out.reshape(shape)

    def backward(self, g):
        return (Upsample2xAdjoint.apply(g, axis=self.axis, wrap=self.wrap),)


class Upsample2xAdjoint(Function):
    axis: int
    wrap: bool

    def forward(self, g):
        ax = self.axis
        shape = list(g.shape)
        shape[ax] //= 2
        shape.insert(ax + 1, 2)
        pairs = g.reshape(shape)
        even = np.take(pairs, 0, axis=ax + 1)
        odd = np.take(pairs, 1, axis=ax + 1)
        return (0.75 * (even + odd) + 0.25 * _prev_adj(even, ax, self.wrap)
                + 0.25 * _next_adj(odd, ax, self.wrap))

    def backward(self, g):
        return (Upsample2x.apply(g, axis=self.axis, wrap=self.wrap),)


def upsample2x(x: Tensor) -> Tensor:
    """Bilinear x2 upsampling of ``x[..., H, W]``: clamped rows, wrapped columns."""
    y = Upsample2x.apply(x, axis=x.ndim - 2, wrap=False)
    return Upsample2x.apply(y, axis=x.ndim - 1, wrap=True)


class Col2Im(Function):
    """Scatter-add per-pixel k x k patches ``cols[B, H, W, C, k, k]`` onto a strided grid."""

    stride: int

    def forward(self, cols):
        b, h, w, c, k, _ = cols.shape
        s = self.stride
        out = np.zeros((b, c, (h - 1) * s + k, (w - 1) * s + k), dtype=cols.dtype)
        for i in range(k):
            for j in range(k):
                out[:, :, i:i + s * h:s, j:j + s * w:s] += cols[..., i, j].transpose(0, 3, 1, 2)
        self.hw = (h, w, k)
        return out

    def backward(self, g):
        h, w, k = self.hw
        return (Im2Col.apply(g, stride=self.stride, h=h, w=w, k=k),)


class Im2Col(Function):
    stride: int
    h: int
    w: int
    k: int

    def forward(self, g):
        s, h, w, k = self.stride, self.h, self.w, self.k
        b, c = g.shape[:2]
        cols = np.empty((b, h, w, c, k, k), dtype=g.dtype)
        for i in range(k):
            for j in range(k):
                cols[..., i, j] = g[:, :, i:i + s * h:s, j:j + s * w:s].transpose(0, 2, 3, 1)
        return cols

    def backward(self, g):
        return (Col2Im.apply(g, stride=self.stride),)


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor | None, kernel: int = 4,
                     stride: int = 2, padding: int = 1) -> Tensor:
    """Transposed convolution of ``x[B, Cin, H, W]``.

    ``weight`` has shape ``[Cin, Cout * kernel * kernel]`` (a per-pixel affine map
    whose output is scattered onto the upsampled grid).  With the defaults the
    output is ``[B, Cout, 2H, 2W]``.
    """
    b, cin, h, w = x.shape
    if weight.shape[0] != cin or weight.shape[1] % (kernel * kernel):
        raise ShapeError(f"transposed-conv weight {weight.shape} does not fit input {x.shape}")
    cout = weight.shape[1] // (kernel * kernel)
    cols = (x.transpose(0, 2, 3, 1) @ weight).reshape(b, h, w, cout, kernel, kernel)
    full = Col2Im.apply(cols, stride=stride)
    oh = (h - 1) * stride + kernel - 2 * padding
    ow = (w - 1) * stride + kernel - 2 * padding
    y = narrow(narrow(full, 2, padding, oh), 3, padding, ow)
    if bias is not None:
        y = y + bias.reshape(cout, 1, 1).expand(y.shape[1:])
    return y
