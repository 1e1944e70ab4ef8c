"""Analytic parameter and multiply-accumulate accounting for single-image inference.

Counting rules
--------------
* affine map ``in -> out`` (with bias): ``in*out + out`` parameters and
  ``in*out`` MACs per application site (token, pixel or channel row);
* depthwise ``k x k`` convolution over ``C x H x W``: ``k*k*C + C`` parameters,
  ``k*k*H*W*C`` MACs;
* normalization, GELU, upsampling, additions and tanh: 0 MACs.  Conditional
  batch-norm rows count as parameters, running statistics do not.

Activation memory is the peak, over generator blocks, of the float32 bytes that
must be alive together: the condition canvas, the running RGB sum, the block's
residual stream and the largest intermediate pair inside one of its layers
(normalized input plus hidden expansion).
"""

from __future__ import annotations

from dataclasses import dataclass

from .config import Ablations, Config, ModelConfig
from .layers import Linear, Module

BYTES_PER_VALUE = 4


@dataclass
class CostItem:
    block: str
    name: str
    params: int
    macs: int


def affine_cost(fan_in: int, fan_out: int, sites: int, bias: bool = True) -> tuple[int, int]:
    return fan_in * fan_out + (fan_out if bias else 0), fan_in * fan_out * sites


def dwconv_cost(channels: int, kernel: int, h: int, w: int) -> tuple[int, int]:
    return kernel * kernel * channels + channels, kernel * kernel * h * w * channels


def _norm_params(channels: int, cfg: ModelConfig, ab: Ablations) -> int:
    rows = 1 if ab.plain_bn else cfg.num_classes
    return 2 * rows * channels


def generator_costs(cfg: ModelConfig, ablations: Ablations | None = None) -> list[CostItem]:
    """Per-layer cost items for the generator at ``cfg``."""
    ab = ablations or Ablations()
    items: list[CostItem] = []

    def add(block, name, pm):
        items.append(CostItem(block, name, int(pm[0]), int(pm[1])))

    n, k = cfg.blocks, cfg.kernel_size
    for i in range(1, n + 1):
        blk = f"block{i}"
        c = cfg.widths[i - 1]
        p = cfg.base_patch if i == 1 else 2 ** (n - i)
        gh, gw = cfg.image_height // p, cfg.image_width // p
        t = gh * gw
        ch = int(round(c * cfg.channel_ratio))
        if i == 1 or not ab.single_input:
            add(blk, "embed", affine_cost(3 * p * p, c, t))
        if i == 1:
            add(blk, "compress", affine_cost(c + cfg.z_dim, c, t))
        mixer = i == 1 and not ab.no_mixer_block1
        for j in range(cfg.layers_per_block):
            name = f"layer{j}"
            add(blk, f"{name}/norms", (2 * _norm_params(c, cfg, ab), 0))
            if mixer:
                th = cfg.token_hidden or t
                add(blk, f"{name}/token_fc1", affine_cost(t, th, c))
                add(blk, f"{name}/token_fc2", affine_cost(th, t, c))
            else:
                add(blk, f"{name}/conv1", dwconv_cost(c, k, gh, gw))
                add(blk, f"{name}/conv2", dwconv_cost(c, k, gh, gw))
            add(blk, f"{name}/channel_fc1", affine_cost(c, ch, t))
            add(blk, f"{name}/channel_fc2", affine_cost(ch, c, t))
        add(blk, "to_rgb", affine_cost(c, 3, t))
        if i < n:
            add(blk, "split", affine_cost(c, 4 * cfg.widths[i], t))
    return items


def activation_bytes(cfg: ModelConfig, ablations: Ablations | None = None) -> int:
    """Peak live feature-map bytes during one forward pass (see module docstring)."""
    ab = ablations or Ablations()
    n = cfg.blocks
    cond = 3 * cfg.image_height * cfg.image_width
    peak = 0
    for i in range(1, n + 1):
        c = cfg.widths[i - 1]
        p = cfg.base_patch if i == 1 else 2 ** (n - i)
        t = (cfg.image_height // p) * (cfg.image_width // p)
        ch = int(round(c * cfg.channel_ratio))
        acc = 3 * t // 4 if i > 1 else 0
        if i == 1 and not ab.no_mixer_block1:
            inner = c * t + c * max(cfg.token_hidden or t, ch)
        else:
            inner = c * t + max(c * t, ch * t)
        peak = max(peak, cond + acc + c * t + inner)
    return peak * BYTES_PER_VALUE


def count_params_macs(target, ablations: Ablations | None = None, sites: int = 1) -> tuple[int, int]:
    """Exact ``(params, macs)``.

    ``target`` is a :class:`Config` / :class:`ModelConfig` (the generator is
    counted), a single :class:`Linear`, or a module made only of ``Linear``
    layers applied ``sites`` times each.
    """
    if isinstance(target, Config):
        ablations = ablations or target.train.ablations
        target = target.model
    if isinstance(target, ModelConfig):
        items = generator_costs(target, ablations)
        return sum(i.params for i in items), sum(i.macs for i in items)
    if isinstance(target, Linear):
        fan_in, fan_out = target.weight.shape
        return affine_cost(fan_in, fan_out, sites, target.bias is not None)
    if isinstance(target, Module):
        params = macs = 0
        for child in _linear_children(target):
            p, m = count_params_macs(child, sites=sites)
            params, macs = params + p, macs + m
        return params, macs
    raise TypeError(f"cannot count costs of {type(target).__name__}")


def _linear_children(mod: Module):
    for value in vars(mod).values():
        if isinstance(value, Linear):
            yield value
        elif isinstance(value, Module):
            yield from _linear_children(value)


def block_totals(items: list[CostItem]) -> dict[str, tuple[int, int]]:
    out: dict[str, tuple[int, int]] = {}
    for it in items:
        p, m = out.get(it.block, (0, 0))
        out[it.block] = (p + it.params, m + it.macs)
    return out


def cost_report(cfg: Config | ModelConfig, ablations: Ablations | None = None, label: str = "omnimixer") -> str:
    """Human-readable table followed by a ``key=value`` block for scripts."""
    if isinstance(cfg, Config):
        ablations = ablations or cfg.train.ablations
        cfg = cfg.model
    items = generator_costs(cfg, ablations)
    params, macs = sum(i.params for i in items), sum(i.macs for i in items)
    mem = activation_bytes(cfg, ablations)
    lines = [f"{'block':<10}{'params':>14}{'MACs':>16}"]
    totals = block_totals(items)
    for blk, (p, m) in totals.items():
        lines.append(f"{blk:<10}{p:>14,d}{m:>16,d}")
    lines.append(f"{'total':<10}{params:>14,d}{macs:>16,d}")
    lines.append("")
    lines.append("| Method | Parameters [M] | MAC [G] |")
    lines.append("|---|---|---|")
    lines.append(f"| {label} | {params / 1e6:.2f} | {macs / 1e9:.2f} |")
    lines.append("")
    lines.append(f"peak activation memory: {mem / 2 ** 20:.2f} MiB")
    lines.append("")
    lines.append("[cost]")
    lines.append(f"params_total={params}")
    lines.append(f"macs_total={macs}")
    lines.append(f"activation_bytes={mem}")
    for blk, (p, m) in totals.items():
        lines.append(f"{blk}.params={p}")
        lines.append(f"{blk}.macs={m}")
    lines.append("[/cost]")
    return "\n".join(lines) + "\n"


def parse_report(text: str) -> dict[str, int]:
    """Read back the ``[cost]`` key-value block of :func:`cost_report`."""
    body = text.split("[cost]\n", 1)[1].split("[/cost]", 1)[0]
    return {k: int(v) for k, v in (line.split("=", 1) for line in body.strip().splitlines())}
