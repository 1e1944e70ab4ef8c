"""Finite-difference gradient suites for every differentiable building block.

Each suite builds a small float64 problem, reduces the output to a scalar by a
fixed random projection, and compares the analytic gradient of every checked
parameter with a central difference.  The error measure is normwise per tensor,
``max|analytic - numeric| / max(max|numeric|, 1e-3 * G, 1e-12)``, where ``G`` is
the largest numeric gradient entry of the whole suite.  Single entries near
zero therefore do not blow up the ratio, and a tensor whose true gradient
vanishes (a bias swallowed by a following normalization, say) is held to an
absolute bound far below the suite's gradient scale instead of to pure
round-off noise.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .config import Ablations, ModelConfig
from .conv import PaddingMode, depthwise_conv2d, upsample2x
from .layers import (CondBatchNorm, ConvTranspose, DepthwiseConvLayer, LayerNorm, MixerLayer,
                     PatchEmbed, PatchSplit, ToRGB)
from .losses import adv_loss_d, adv_loss_g, r1_penalty, rec_loss_d, rec_loss_g
from .tensor import Tensor

LAYER_TOL = 1e-4
COMPOSED_TOL = 1e-3


@dataclass
class SuiteResult:
    name: str
    max_rel_error: float
    tolerance: float
    worst: str
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error < self.tolerance)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.name:<16} max rel error {self.max_rel_error:.3e} "
                f"(tol {self.tolerance:.0e}, worst {self.worst}, {self.seconds:.1f}s)")


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-12) -> float:
    scale = max(float(np.max(np.abs(numeric), initial=0.0)), floor)
    return float(np.max(np.abs(analytic - numeric), initial=0.0)) / scale


def check_gradients(loss_fn: Callable[[], Tensor], tensors: dict[str, Tensor], *,
                    eps: float = 1e-6, max_coords: int | None = 40,
                    rng: np.random.Generator | None = None,
                    graph_in_loss: bool = False) -> tuple[float, str]:
    """Worst normwise relative error over ``tensors``; returns ``(error, tensor name)``.

    At most ``max_coords`` coordinates per tensor are perturbed (chosen at random).
    Set ``graph_in_loss`` when the loss itself differentiates (gradient penalties),
    so the perturbed evaluations keep autograd enabled.
    """
    rng = rng or np.random.default_rng(0)
    quiet = T.enable_grad if graph_in_loss else T.no_grad
    for t in tensors.values():
        t.grad = None
    T.backward(loss_fn(), inputs=list(tensors.values()))
    checked = []
    for name, t in tensors.items():
        flat = t.data.reshape(-1)
        n = flat.size
        idx = np.arange(n) if max_coords is None or n <= max_coords else rng.choice(n, max_coords, replace=False)
        numeric = np.empty(idx.size)
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + eps
            with quiet():
                up = loss_fn().item()
            flat[i] = orig - eps
            with quiet():
                down = loss_fn().item()
            flat[i] = orig
            numeric[j] = (up - down) / (2 * eps)
        checked.append((name, t.grad.reshape(-1)[idx], numeric))
    scale = max(float(np.max(np.abs(n), initial=0.0)) for _, _, n in checked)
    worst, worst_name = 0.0, "-"
    for name, analytic, numeric in checked:
        err = relative_error(analytic, numeric, max(1e-3 * scale, 1e-12))
        if err >= worst:
            worst, worst_name = err, name
    return worst, worst_name


SUITES: dict[str, Callable[[np.random.Generator], tuple]] = {}


def suite(name: str, tol: float = LAYER_TOL, graph_in_loss: bool = False):
    """Register ``fn(rng) -> (loss_fn, tensors)`` as a named suite."""
    def deco(fn):
        fn.tolerance = tol
        fn.graph_in_loss = graph_in_loss
        SUITES[name] = fn
        return fn
    return deco


def _leaf(rng, *shape) -> Tensor:
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def _project(out: Tensor, rng) -> Callable[[Tensor], Tensor]:
    r = Tensor(rng.standard_normal(out.shape))
    return lambda y: (y * r).sum()


def _wrap_module(forward, tensors, rng):
    proj = _project(forward(), rng)
    return lambda: proj(forward()), tensors


def _params(module, **extra) -> dict[str, Tensor]:
    out = dict(module.named_parameters())
    out.update(extra)
    return out


def _perturb(module, rng, scale=0.3):
    # biases start at zero and gains at one; move them so every path is exercised
    for _, p in module.named_parameters():
        p.data += scale * rng.standard_normal(p.shape)


@suite("matmul")
def _matmul(rng):
    a, b = _leaf(rng, 2, 3, 4), _leaf(rng, 4, 5)
    return _wrap_module(lambda: T.matmul(a, b), {"a": a, "b": b}, rng)


@suite("depthwise")
def _depthwise(rng):
    x, k, bias = _leaf(rng, 2, 3, 5, 6), _leaf(rng, 3, 3, 3), _leaf(rng, 3)
    pad = PaddingMode("circular", "replicate")
    return _wrap_module(lambda: depthwise_conv2d(x, k, bias, pad), {"x": x, "kernel": k, "bias": bias}, rng)


@suite("elementwise")
def _elementwise(rng):
    a, b = _leaf(rng, 3, 4), _leaf(rng, 3, 4)
    pos = Tensor(rng.uniform(0.5, 2.0, (3, 4)), requires_grad=True)

    def f():
        y = T.gelu(a) + T.tanh(b) * T.sigmoid(a) + T.softplus(a - b) + T.exp(b * 0.5)
        y = y + T.log(pos) + T.absolute(a) * 0.5 + a / pos + pos ** 1.5 - b
        return upsample2x(y.reshape(1, 1, 3, 4)) * 2.0
    return _wrap_module(f, {"a": a, "b": b, "pos": pos}, rng)


@suite("patch_embed")
def _patch_embed(rng):
    img = _leaf(rng, 2, 3, 8, 8)
    emb = PatchEmbed(3, 4, 5, rng)
    _perturb(emb, rng)
    return _wrap_module(lambda: emb(img), _params(emb, img=img), rng)


@suite("cond_batch_norm")
def _cond_bn(rng):
    x = _leaf(rng, 4, 3, 2, 3)
    bn = CondBatchNorm(3, 3)
    _perturb(bn, rng)
    labels = np.array([0, 2, 1, 2])
    return _wrap_module(lambda: bn(x, labels), _params(bn, x=x), rng)


@suite("layer_norm")
def _layer_norm(rng):
    x = _leaf(rng, 2, 5, 2, 3)
    ln = LayerNorm(5)
    _perturb(ln, rng)
    return _wrap_module(lambda: ln(x), _params(ln, x=x), rng)


@suite("mixer")
def _mixer(rng):
    x = _leaf(rng, 3, 4, 2, 3)
    layer = MixerLayer(4, 6, 5, 8, lambda c: CondBatchNorm(c, 2), rng)
    _perturb(layer, rng, 0.1)
    labels = np.array([0, 1, 1])
    return _wrap_module(lambda: layer(x, labels), _params(layer, x=x), rng)


@suite("depthwise_layer")
def _dw_layer(rng):
    x = _leaf(rng, 2, 3, 4, 6)
    layer = DepthwiseConvLayer(3, 3, 6, lambda c: CondBatchNorm(c, 2), rng)
    _perturb(layer, rng, 0.1)
    labels = np.array([1, 0])
    return _wrap_module(lambda: layer(x, labels), _params(layer, x=x), rng)


@suite("patch_split")
def _patch_split(rng):
    x = _leaf(rng, 2, 4, 2, 3)
    split = PatchSplit(4, 3, rng)
    _perturb(split, rng)
    return _wrap_module(lambda: split(x), _params(split, x=x), rng)


@suite("to_rgb")
def _to_rgb(rng):
    x = _leaf(rng, 2, 4, 3, 5)
    rgb = ToRGB(4, rng)
    _perturb(rgb, rng)
    return _wrap_module(lambda: rgb(x), _params(rgb, x=x), rng)


@suite("transposed_conv")
def _transposed(rng):
    x = _leaf(rng, 2, 3, 3, 4)
    stage = ConvTranspose(3, 2, rng)
    _perturb(stage, rng)
    return _wrap_module(lambda: stage(x), _params(stage, x=x), rng)


@suite("losses")
def _losses(rng):
    real, fake = _leaf(rng, 3, 1, 2, 4), _leaf(rng, 3, 1, 2, 4)
    gen, target = _leaf(rng, 2, 3, 4, 8), Tensor(rng.standard_normal((2, 3, 4, 8)))
    mask = (rng.random((1, 4, 8)) < 0.5).astype(float)
    mask[0, 0, 0] = 1.0
    d_in, recon = _leaf(rng, 2, 6, 4, 4), _leaf(rng, 2, 6, 4, 4)

    def f():
        return (adv_loss_d(real, fake) + 0.3 * adv_loss_g(fake) + rec_loss_g(gen, target, mask)
                + 0.7 * rec_loss_d(d_in, recon))
    return f, {"real": real, "fake": fake, "gen": gen, "d_in": d_in, "recon": recon}


def tiny_model_config(**kw) -> ModelConfig:
    base = dict(image_height=8, blocks=3, base_patch=4, widths=[6, 4, 3], z_dim=3, num_classes=2,
                layers_per_block=1, disc_width=8, disc_layers=1, disc_patch=4, snapshot_size=8)
    base.update(kw)
    return ModelConfig(**base).validate()


@suite("r1", COMPOSED_TOL, graph_in_loss=True)
def _r1(rng):
    from .discriminator import Discriminator, d_grad_norm_sq

    disc = Discriminator(tiny_model_config(), seed=int(rng.integers(1 << 30)))
    _perturb(disc, rng, 0.1)
    inp = Tensor(rng.standard_normal((2, 6, 8, 16)), requires_grad=True)

    def f():
        return r1_penalty(d_grad_norm_sq(inp, disc, 0.01), 10.0)
    return f, dict(disc.named_parameters())


@suite("generator", COMPOSED_TOL)
def _generator(rng):
    from .generator import Generator

    gen = Generator(tiny_model_config(), Ablations(), seed=int(rng.integers(1 << 30)))
    _perturb(gen, rng, 0.1)
    x = Tensor(rng.standard_normal((2, 3, 8, 16)))
    z = Tensor(rng.standard_normal((2, 3)))
    labels = np.array([0, 1])
    return _wrap_module(lambda: gen(x, z, labels), dict(gen.named_parameters()), rng)


@suite("discriminator", COMPOSED_TOL)
def _discriminator(rng):
    from .discriminator import Discriminator

    disc = Discriminator(tiny_model_config(), seed=int(rng.integers(1 << 30)))
    _perturb(disc, rng, 0.1)
    inp = Tensor(rng.standard_normal((2, 6, 8, 16)))
    rp, rc, rr = (Tensor(rng.standard_normal(s)) for s in [(2, 1, 2, 4), (2, 8), (2, 6, 8, 16)])

    def f():
        out = disc(inp)
        return ((out.patch_logits * rp).sum() + (out.channel_logits * rc).sum()
                + (out.reconstruction * rr).sum())
    return f, dict(disc.named_parameters())


def run_suite(name: str, seed: int = 0, max_coords: int | None = 40) -> SuiteResult:
    fn = SUITES[name]
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    with T.float64():
        loss_fn, tensors = fn(rng)
        err, worst = check_gradients(loss_fn, tensors, max_coords=max_coords, rng=rng,
                                     graph_in_loss=fn.graph_in_loss)
    return SuiteResult(name, err, fn.tolerance, worst, time.perf_counter() - start)


def run_suites(only: list[str] | None = None, seed: int = 0) -> list[SuiteResult]:
    names = list(SUITES) if not only else list(only)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise KeyError(f"unknown gradient suite {unknown[0]!r}; known: {', '.join(SUITES)}")
    return [run_suite(n, seed) for n in names]

