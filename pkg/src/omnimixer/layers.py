"""Building blocks shared by the generator and the discriminator.

Feature maps ("token maps") use the layout ``[B, C, Gh, Gw]``.  Affine maps store
their weight as ``[in, out]`` so that ``x @ weight`` applies them to the last axis.
"""

from __future__ import annotations

import math
from typing import Callable, Iterator

import numpy as np

from . import tensor as T
from .conv import PaddingMode, conv_transpose2d, depthwise_conv2d
from .errors import ConfigError, LabelError, ShapeError
from .tensor import Tensor


class Module:
    """Container that names its parameters, buffers and children.

    Attributes holding a :class:`Tensor` with ``requires_grad`` are parameters;
    buffers are registered explicitly; attributes holding a :class:`Module` are
    children.  Names are joined with ``/``.
    """

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Module):
            self._children[name] = value
        elif isinstance(value, Tensor) and name not in self._buffers:
            if value.requires_grad:
                self._params[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = None
        t = Tensor(value)
        self._buffers[name] = t
        object.__setattr__(self, name, t)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{name}/")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, b in self._buffers.items():
            yield prefix + name, b
        for name, child in self._children.items():
            yield from child.named_buffers(f"{prefix}{name}/")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state(self, prefix: str = "") -> dict[str, Tensor]:
        """Every parameter and buffer by checkpoint name."""
        out = dict(self.named_parameters(prefix))
        out.update(self.named_buffers(prefix))
        return out

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def train(self, mode: bool = True) -> "Module":
        object.__setattr__(self, "training", mode)
        for child in self._children.values():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def requires_grad_(self, flag: bool) -> "Module":
        for p in self.parameters():
            p.requires_grad = flag
        return self

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


HE_GAIN = math.sqrt(2.0)
# to_rgb reads the unnormalized residual stream; a small gain keeps the summed
# multi-scale image out of tanh saturation at initialization
TO_RGB_GAIN = 0.1
# patch split is a linear map of the stream (no activation in front), so it
# preserves variance instead of doubling it
SPLIT_GAIN = 1.0


def _uniform(rng: np.random.Generator, shape, fan_in: int, gain: float = HE_GAIN) -> Tensor:
    """Uniform init with variance ``gain**2 / fan_in`` (He-uniform for the default gain)."""
    bound = gain * math.sqrt(3.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class Linear(Module):
    """Affine map over the last axis; He-uniform weights, zero bias."""

    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator, bias: bool = True,
                 gain: float = HE_GAIN):
        super().__init__()
        self.weight = _uniform(rng, (fan_in, fan_out), fan_in, gain)
        self.bias = Tensor(np.zeros(fan_out), requires_grad=True) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.weight.shape[0]:
            raise ShapeError(f"affine map expects last axis {self.weight.shape[0]}, got input {x.shape}")
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y


def check_labels(labels, num_classes: int) -> np.ndarray:
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    bad = labels[(labels < 0) | (labels >= num_classes)]
    if bad.size:
        raise LabelError(f"scene label {int(bad[0])} outside [0, {num_classes})")
    return labels


class CondBatchNorm(Module):
    """Batch norm whose gain/bias rows are picked by the scene label.

    Statistics are taken over batch and spatial axes per channel.  With
    ``conditional=False`` a single gain/bias row is shared by every label
    (plain batch norm).
    """

    def __init__(self, channels: int, num_classes: int, momentum: float = 0.1,
                 eps: float = 1e-5, conditional: bool = True):
        super().__init__()
        if eps <= 0:
            raise ConfigError("batch-norm epsilon must be positive")
        if not 0 < momentum < 1:
            raise ConfigError("batch-norm momentum must lie in (0, 1)")
        self.num_classes = num_classes
        self.conditional = conditional
        rows = num_classes if conditional else 1
        self.gain = Tensor(np.ones((rows, channels)), requires_grad=True)
        self.bias = Tensor(np.zeros((rows, channels)), requires_grad=True)
        self.register_buffer("running_mean", np.zeros(channels))
        self.register_buffer("running_var", np.ones(channels))
        self.momentum = momentum
        self.eps = eps

    def normalize(self, x: Tensor) -> Tensor:
        c = x.shape[1]
        if self.training:
            n = x.size // c
            mean = x.mean(axis=(0, 2, 3), keepdims=True)
            xc = x - mean.expand(x.shape)
            var = (xc * xc).mean(axis=(0, 2, 3), keepdims=True)
            m = self.momentum
            rm, rv = self.running_mean.data, self.running_var.data
            rm *= 1 - m
            rm += m * mean.data.reshape(c)
            rv *= 1 - m
            rv += m * var.data.reshape(c) * (n / max(n - 1, 1))
            return xc * ((var + self.eps) ** -0.5).expand(x.shape)
        mean = self.running_mean.reshape(c, 1, 1).expand(x.shape[1:])
        inv = ((self.running_var + self.eps) ** -0.5).reshape(c, 1, 1).expand(x.shape[1:])
        return (x - mean) * inv

    def forward(self, x: Tensor, labels) -> Tensor:
        labels = check_labels(labels, self.num_classes)
        b, c = x.shape[:2]
        if labels.shape[0] != b:
            raise ShapeError(f"{labels.shape[0]} labels for a batch of {b}")
        rows = labels if self.conditional else np.zeros_like(labels)
        xhat = self.normalize(x)
        gain = T.take_rows(self.gain, rows).reshape(b, c, 1, 1).expand(x.shape)
        bias = T.take_rows(self.bias, rows).reshape(b, c, 1, 1).expand(x.shape)
        return xhat * gain + bias


def cond_batch_norm(x: Tensor, labels, params: CondBatchNorm, training: bool) -> Tensor:
    params.train(training)
    return params(x, labels)


class LayerNorm(Module):
    """Normalizes each token over its channels; ignores the label argument."""

    def __init__(self, channels: int, eps: float = 1e-5):
        super().__init__()
        self.gain = Tensor(np.ones(channels), requires_grad=True)
        self.bias = Tensor(np.zeros(channels), requires_grad=True)
        self.eps = eps

    def forward(self, x: Tensor, labels=None) -> Tensor:
        c = x.shape[1]
        mean = x.mean(axis=1, keepdims=True)
        xc = x - mean.expand(x.shape)
        var = (xc * xc).mean(axis=1, keepdims=True)
        xhat = xc * ((var + self.eps) ** -0.5).expand(x.shape)
        tail = x.shape[1:]
        return xhat * self.gain.reshape(c, 1, 1).expand(tail) + self.bias.reshape(c, 1, 1).expand(tail)


NormFactory = Callable[[int], Module]


class ChannelMLP(Module):
    """Per-token MLP across channels: C -> hidden -> C with GELU."""

    def __init__(self, channels: int, hidden: int, rng):
        super().__init__()
        self.fc1 = Linear(channels, hidden, rng)
        self.fc2 = Linear(hidden, channels, rng)

    def forward(self, x: Tensor) -> Tensor:
        h = x.transpose(0, 2, 3, 1)
        h = self.fc2(T.gelu(self.fc1(h)))
        return h.transpose(0, 3, 1, 2)


class MixerLayer(Module):
    """Pre-norm mixer layer: token mixing then channel mixing, both residual."""

    def __init__(self, channels: int, tokens: int, token_hidden: int, channel_hidden: int,
                 norm: NormFactory, rng):
        super().__init__()
        self.tokens = tokens
        self.token_norm = norm(channels)
        self.token_fc1 = Linear(tokens, token_hidden, rng)
        self.token_fc2 = Linear(token_hidden, tokens, rng)
        self.channel_norm = norm(channels)
        self.channel_mlp = ChannelMLP(channels, channel_hidden, rng)

    def forward(self, x: Tensor, labels=None) -> Tensor:
        b, c, gh, gw = x.shape
        if gh * gw != self.tokens:
            raise ConfigError(f"mixer layer built for {self.tokens} tokens, got grid {gh}x{gw}")
        h = self.token_norm(x, labels).reshape(b, c, gh * gw)
        h = self.token_fc2(T.gelu(self.token_fc1(h))).reshape(b, c, gh, gw)
        x = x + h
        return x + self.channel_mlp(self.channel_norm(x, labels))


class DepthwiseConvLayer(Module):
    """Mixer layer whose token mixing is replaced by two depthwise convolutions."""

    def __init__(self, channels: int, kernel: int, channel_hidden: int, norm: NormFactory,
                 rng, pad: PaddingMode = PaddingMode()):
        super().__init__()
        if kernel % 2 == 0:
            raise ConfigError(f"depthwise kernel must have odd size, got {kernel}")
        self.pad = pad
        self.conv_norm = norm(channels)
        self.conv1_weight = _uniform(rng, (channels, kernel, kernel), kernel * kernel)
        self.conv1_bias = Tensor(np.zeros(channels), requires_grad=True)
        self.conv2_weight = _uniform(rng, (channels, kernel, kernel), kernel * kernel)
        self.conv2_bias = Tensor(np.zeros(channels), requires_grad=True)
        self.channel_norm = norm(channels)
        self.channel_mlp = ChannelMLP(channels, channel_hidden, rng)

    def spatial(self, x: Tensor, labels=None) -> Tensor:
        """The depthwise sublayer including its skip connection."""
        h = depthwise_conv2d(self.conv_norm(x, labels), self.conv1_weight, self.conv1_bias, self.pad)
        h = depthwise_conv2d(T.gelu(h), self.conv2_weight, self.conv2_bias, self.pad)
        return x + h

    def forward(self, x: Tensor, labels=None) -> Tensor:
        x = self.spatial(x, labels)
        return x + self.channel_mlp(self.channel_norm(x, labels))


def patchify(img: Tensor, patch: int) -> Tensor:
    """``[B, C, H, W]`` -> ``[B, H/p, W/p, C*p*p]`` with (channel, row, col) ordering."""
    b, c, h, w = img.shape
    if h % patch or w % patch:
        raise ConfigError(f"patch size {patch} does not divide image {h}x{w}")
    gh, gw = h // patch, w // patch
    x = img.reshape(b, c, gh, patch, gw, patch).transpose(0, 2, 4, 1, 3, 5)
    return x.reshape(b, gh, gw, c * patch * patch)


class PatchEmbed(Module):
    def __init__(self, in_channels: int, patch: int, dim: int, rng):
        super().__init__()
        self.patch = patch
        self.proj = Linear(in_channels * patch * patch, dim, rng)

    def forward(self, img: Tensor) -> Tensor:
        return self.proj(patchify(img, self.patch)).transpose(0, 3, 1, 2)


def patch_embed(img: Tensor, patch: int, weight: Tensor, bias: Tensor) -> Tensor:
    """Functional patch embedding; returns a ``[B, dim, H/p, W/p]`` token map."""
    return (patchify(img, patch) @ weight + bias).transpose(0, 3, 1, 2)


class PatchSplit(Module):
    """Expand each token into a 2x2 block: C -> 4*C_next per token, then reshape."""

    def __init__(self, channels: int, next_channels: int, rng, gain: float | None = None):
        super().__init__()
        self.next_channels = next_channels
        self.proj = Linear(channels, 4 * next_channels, rng, gain=SPLIT_GAIN if gain is None else gain)

    def forward(self, x: Tensor) -> Tensor:
        b, _, gh, gw = x.shape
        cn = self.next_channels
        h = self.proj(x.transpose(0, 2, 3, 1)).reshape(b, gh, gw, 2, 2, cn)
        return h.transpose(0, 5, 1, 3, 2, 4).reshape(b, cn, 2 * gh, 2 * gw)


class ToRGB(Module):
    def __init__(self, channels: int, rng, gain: float | None = None):
        super().__init__()
        self.proj = Linear(channels, 3, rng, gain=TO_RGB_GAIN if gain is None else gain)

    def forward(self, x: Tensor) -> Tensor:
        return self.proj(x.transpose(0, 2, 3, 1)).transpose(0, 3, 1, 2)


class ConvTranspose(Module):
    """Stride-2, kernel-4 transposed convolution (doubles both spatial axes)."""

    def __init__(self, in_channels: int, out_channels: int, rng, kernel: int = 4):
        super().__init__()
        self.kernel = kernel
        # each output pixel sees in_channels * (kernel / stride)**2 inputs
        self.weight = _uniform(rng, (in_channels, out_channels * kernel * kernel), in_channels * kernel * kernel // 4)
        self.bias = Tensor(np.zeros(out_channels), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return conv_transpose2d(x, self.weight, self.bias, kernel=self.kernel)
