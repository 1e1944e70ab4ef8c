"""Adversarial, reconstruction and R1 losses.

The adversarial terms are written with softplus, which is the overflow-free
form of the log-sigmoid expressions: ``-log(sigmoid(r)) = softplus(-r)`` and
``-log(1 - sigmoid(f)) = softplus(f)``.
"""

from __future__ import annotations

from collections.abc import Mapping

import numpy as np

from . import tensor as T
from .errors import ContractError, ShapeError
from .tensor import Tensor


def adv_loss_d(logits_real: Tensor, logits_fake: Tensor) -> Tensor:
    """Discriminator loss for one head: E[-log D(real)] + E[-log(1 - D(fake))]."""
    return T.softplus(-logits_real).mean() + T.softplus(logits_fake).mean()


def adv_loss_g(logits_fake: Tensor) -> Tensor:
    """Non-saturating generator loss for one head: E[-log D(fake)]."""
    return T.softplus(-logits_fake).mean()


def combine_adv(l_patch, l_channel, lambda_ch: float):
    return l_patch + l_channel * lambda_ch


def rec_loss_g(gen: Tensor, target: Tensor, mask) -> Tensor:
    """Mean absolute error over the masked pixels only (all three channels)."""
    if gen.shape != target.shape:
        raise ShapeError(f"generated {gen.shape} and target {target.shape} differ")
    m = mask.data if isinstance(mask, Tensor) else np.asarray(mask)
    m = m.astype(gen.dtype)
    if m.ndim == 2:
        m = m[None, None]
    elif m.ndim == 3:
        m = m[None]
    m = np.broadcast_to(m, gen.shape[:1] + (1,) + gen.shape[2:])
    count = float(m.sum()) * gen.shape[1]
    if count == 0:
        raise ContractError("reconstruction mask is empty")
    w = Tensor._wrap(np.ascontiguousarray(np.broadcast_to(m, gen.shape)))
    return (T.absolute(gen - target) * w).sum() * (1.0 / count)


def rec_loss_d(d_in: Tensor, recon: Tensor) -> Tensor:
    """Mean absolute difference between the 6-channel input and its reconstruction."""
    if d_in.shape != recon.shape:
        raise ShapeError(f"input {d_in.shape} and reconstruction {recon.shape} differ")
    return T.absolute(d_in - recon).mean()


def r1_penalty(grad_norm_sq, gamma: float):
    return grad_norm_sq * (gamma / 2.0)


def assemble(components: Mapping[str, Tensor], weights: Mapping[str, float] | None = None) -> Tensor:
    """Weighted sum of named loss terms, each entering exactly once."""
    weights = weights or {}
    total = None
    for name, value in components.items():
        term = value * weights[name] if weights.get(name, 1.0) != 1.0 else value
        total = term if total is None else total + term
    if total is None:
        raise ContractError("objective has no terms")
    return total
