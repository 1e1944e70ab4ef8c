"""Hierarchical generator: one mixer block followed by depthwise-convolution blocks.

Block ``i`` (1-based) works on a token grid of ``H / 2**(N-i)`` rows.  Every block
emits a low-resolution RGB image; the images are merged StyleGAN2-style by
upsampling the running sum x2 and adding the next block's image.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .config import Ablations, ModelConfig
from .conv import PaddingMode, upsample2x
from .errors import ConfigError, ShapeError
from .layers import (CondBatchNorm, DepthwiseConvLayer, Linear, MixerLayer, Module,
                     PatchEmbed, PatchSplit, ToRGB)
from .tensor import Tensor


def _norm_factory(cfg: ModelConfig, ablations: Ablations):
    def make(channels: int):
        return CondBatchNorm(channels, cfg.num_classes, cfg.bn_momentum, cfg.bn_eps,
                             conditional=not ablations.plain_bn)
    return make


def _dw_layers(cfg: ModelConfig, channels: int, norm, rng) -> list[DepthwiseConvLayer]:
    pad = PaddingMode("circular", cfg.vertical_padding)
    hidden = int(round(channels * cfg.channel_ratio))
    return [DepthwiseConvLayer(channels, cfg.kernel_size, hidden, norm, rng, pad)
            for _ in range(cfg.layers_per_block)]


class MixerBlock(Module):
    """Block 1: patch embedding, latent concatenation, channel compression, mixer layers."""

    def __init__(self, cfg: ModelConfig, ablations: Ablations, rng):
        super().__init__()
        c = cfg.widths[0]
        self.grid = (cfg.image_height // cfg.base_patch, cfg.image_width // cfg.base_patch)
        tokens = self.grid[0] * self.grid[1]
        norm = _norm_factory(cfg, ablations)
        self.embed = PatchEmbed(3, cfg.base_patch, c, rng)
        self.compress = Linear(c + cfg.z_dim, c, rng)
        if ablations.no_mixer_block1:
            layers = _dw_layers(cfg, c, norm, rng)
        else:
            hidden = cfg.token_hidden or tokens
            layers = [MixerLayer(c, tokens, hidden, int(round(c * cfg.channel_ratio)), norm, rng)
                      for _ in range(cfg.layers_per_block)]
        for i, layer in enumerate(layers):
            setattr(self, f"layer{i}", layer)
        self.layers = layers
        self.to_rgb = ToRGB(c, rng)
        self.split = PatchSplit(c, cfg.widths[1], rng)

    def forward(self, x: Tensor, z: Tensor, labels) -> tuple[Tensor, Tensor]:
        b = x.shape[0]
        tok = self.embed(x)  # [B, C, gh, gw]
        c, gh, gw = tok.shape[1:]
        if z.shape != (b, self.compress.weight.shape[0] - c):
            raise ShapeError(f"latent of shape {z.shape} does not fit batch {b}")
        zt = z.reshape(b, 1, 1, z.shape[1]).expand(b, gh, gw, z.shape[1])
        h = T.concat([tok.transpose(0, 2, 3, 1), zt], axis=-1)
        h = self.compress(h).transpose(0, 3, 1, 2)
        for layer in self.layers:
            h = layer(h, labels)
        return self.to_rgb(h), self.split(h)


class DepthwiseBlock(Module):
    """Blocks 2..N: add the condition embedded at this scale, then depthwise layers."""

    def __init__(self, cfg: ModelConfig, ablations: Ablations, index: int, rng):
        super().__init__()
        n = cfg.blocks
        c = cfg.widths[index - 1]
        self.index = index
        self.patch = 2 ** (n - index)
        self.embed = None if ablations.single_input else PatchEmbed(3, self.patch, c, rng)
        norm = _norm_factory(cfg, ablations)
        layers = _dw_layers(cfg, c, norm, rng)
        for i, layer in enumerate(layers):
            setattr(self, f"layer{i}", layer)
        self.layers = layers
        self.to_rgb = ToRGB(c, rng)
        self.split = PatchSplit(c, cfg.widths[index], rng) if index < n else None

    def forward(self, feat: Tensor, x: Tensor, labels) -> tuple[Tensor, Tensor | None]:
        grid = (x.shape[2] // self.patch, x.shape[3] // self.patch)
        if feat.shape[2:] != grid:
            raise ConfigError(
                f"block {self.index}: feature grid {feat.shape[2:]} does not match condition grid {grid}"
            )
        h = feat if self.embed is None else feat + self.embed(x)
        for layer in self.layers:
            h = layer(h, labels)
        return self.to_rgb(h), (self.split(h) if self.split is not None else None)


class Generator(Module):
    def __init__(self, cfg: ModelConfig, ablations: Ablations | None = None, seed: int = 0):
        super().__init__()
        cfg.validate()
        ablations = ablations or Ablations()
        self.cfg = cfg
        self.ablations = ablations
        rng = np.random.default_rng(seed)
        blocks = [MixerBlock(cfg, ablations, rng)]
        blocks += [DepthwiseBlock(cfg, ablations, i, rng) for i in range(2, cfg.blocks + 1)]
        for i, blk in enumerate(blocks, start=1):
            setattr(self, f"block{i}", blk)
        self.blocks = blocks

    def sample_latent(self, batch: int, rng: np.random.Generator) -> Tensor:
        return Tensor(rng.standard_normal((batch, self.cfg.z_dim)))

    def forward(self, x: Tensor, z: Tensor, labels, return_scales: bool = False):
        """Generate ``[B, 3, H, W]`` canvases from condition ``x`` and latent ``z``."""
        cfg = self.cfg
        if x.ndim != 4 or x.shape[1:] != (3, cfg.image_height, cfg.image_width):
            raise ShapeError(
                f"condition must be [B, 3, {cfg.image_height}, {cfg.image_width}], got {x.shape}"
            )
        labels = np.broadcast_to(np.asarray(labels, dtype=np.int64), (x.shape[0],))
        rgb, feat = self.blocks[0](x, z, labels)
        scales = [rgb]
        acc = rgb
        for blk in self.blocks[1:]:
            rgb, feat = blk(feat, x, labels)
            scales.append(rgb)
            acc = upsample2x(acc) + rgb
        out = T.tanh(acc) if cfg.final_activation == "tanh" else acc
        return (out, scales) if return_scales else out


def generate(x: Tensor, z: Tensor, labels, gen: Generator) -> Tensor:
    return gen(x, z, labels)
