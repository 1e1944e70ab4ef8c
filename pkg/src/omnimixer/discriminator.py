"""Mixer discriminator with patch, channel and reconstruction heads.

The discriminator never sees a scene label.  Its input is the condition canvas
stacked with a real or generated canvas along the channel axis.
"""

from __future__ import annotations

from typing import Callable, NamedTuple

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .errors import ConfigError
from .layers import ConvTranspose, LayerNorm, Linear, MixerLayer, Module, PatchEmbed
from .tensor import Tensor


class DiscriminatorOutput(NamedTuple):
    patch_logits: Tensor    # [B, 1, gh, gw]
    channel_logits: Tensor  # [B, C]
    reconstruction: Tensor | None  # [B, 6, H, W]


class Discriminator(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 1):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        c, p = cfg.disc_width, cfg.disc_patch
        self.grid = (cfg.image_height // p, cfg.image_width // p)
        tokens = self.grid[0] * self.grid[1]
        self.embed = PatchEmbed(6, p, c, rng)
        layers = [MixerLayer(c, tokens, cfg.token_hidden or tokens, int(round(c * cfg.channel_ratio)),
                             LayerNorm, rng) for _ in range(cfg.disc_layers)]
        for i, layer in enumerate(layers):
            setattr(self, f"layer{i}", layer)
        self.layers = layers
        self.patch_head = Linear(c, 1, rng)
        self.channel_head = Linear(tokens, 1, rng)
        stages = p.bit_length() - 1
        widths = [c // 2 ** s for s in range(stages)] + [6]
        decoder = [ConvTranspose(widths[s], widths[s + 1], rng) for s in range(stages)]
        for i, stage in enumerate(decoder):
            setattr(self, f"decoder{i}", stage)
        self.decoder = decoder

    def features(self, d_in: Tensor) -> Tensor:
        cfg = self.cfg
        if d_in.ndim != 4 or d_in.shape[1:] != (6, cfg.image_height, cfg.image_width):
            raise ConfigError(
                f"discriminator input must be [B, 6, {cfg.image_height}, {cfg.image_width}], got {d_in.shape}"
            )
        h = self.embed(d_in)
        for layer in self.layers:
            h = layer(h)
        return h

    def forward(self, d_in: Tensor, reconstruct: bool = True) -> DiscriminatorOutput:
        h = self.features(d_in)
        b, c, gh, gw = h.shape
        patch = self.patch_head(h.transpose(0, 2, 3, 1)).transpose(0, 3, 1, 2)
        channel = self.channel_head(h.reshape(b, c, gh * gw)).reshape(b, c)
        recon = None
        if reconstruct:
            r = h
            for i, stage in enumerate(self.decoder):
                r = stage(r)
                if i < len(self.decoder) - 1:
                    r = T.gelu(r)
            recon = r
        return DiscriminatorOutput(patch, channel, recon)


def discriminate(d_in: Tensor, disc: Discriminator) -> DiscriminatorOutput:
    return disc(d_in)


def stack_input(condition: Tensor, image: Tensor) -> Tensor:
    """Condition channels 0-2, real or generated image channels 3-5."""
    return T.concat([condition, image], axis=1)


def sample_scores(out: DiscriminatorOutput, lambda_ch: float) -> Tensor:
    """Per-sample ``mean(patch_logits) + lambda_ch * mean(channel_logits)``, shape [B]."""
    b = out.patch_logits.shape[0]
    s = out.patch_logits.reshape(b, -1).mean(axis=1)
    if lambda_ch:
        s = s + out.channel_logits.mean(axis=1) * lambda_ch
    return s


def d_grad_norm_sq(inp: Tensor, score_fn: Callable[[Tensor], Tensor] | Discriminator,
                   lambda_ch: float = 0.01, scores: Tensor | None = None) -> Tensor:
    """Batch mean of the squared input-gradient norm of the per-sample score.

    ``score_fn`` maps ``inp`` to per-sample scores ``[B]``; a :class:`Discriminator`
    is scored with :func:`sample_scores`.  Pass precomputed ``scores`` to reuse
    a forward pass already made on ``inp``.  The result stays in the graph.
    """
    if not inp.requires_grad:
        raise ConfigError("d_grad_norm_sq needs an input tensor with requires_grad=True")
    if scores is None:
        if isinstance(score_fn, Discriminator):
            scores = sample_scores(score_fn(inp, reconstruct=False), lambda_ch)
        else:
            scores = score_fn(inp)
    g = T.grad_of_output_wrt_input(scores.sum(), inp)
    b = inp.shape[0]
    return (g * g).reshape(b, -1).sum(axis=1).mean()
