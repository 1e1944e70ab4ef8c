"""Alternating GAN optimization, checkpointing and resumption."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, TextIO

import numpy as np

from . import tensor as T
from .checkpoint import Checkpoint, assign_state, load_checkpoint, save_checkpoint
from .config import Config
from .data import DatasetEntry, prepare_example
from .discriminator import Discriminator, d_grad_norm_sq, sample_scores, stack_input
from .errors import CheckpointVersionError, ConfigError, LabelError, NonFiniteLossError
from .generator import Generator
from .geometry import write_png
from .losses import adv_loss_d, adv_loss_g, assemble, r1_penalty, rec_loss_d, rec_loss_g
from .tensor import Tensor

log = logging.getLogger(__name__)


class Adam:
    """Adaptive-moment optimizer over named parameters; tensors without a grad are skipped."""

    def __init__(self, named_params, lr: float, betas=(0.0, 0.99), eps: float = 1e-8):
        self.params = dict(named_params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)

    def state(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        for k in self.params:
            out[f"{prefix}/m/{k}"] = Tensor._wrap(self.m[k])
            out[f"{prefix}/v/{k}"] = Tensor._wrap(self.v[k])
        return out


@dataclass
class Batch:
    x: np.ndarray       # [B, 3, H, W] condition canvases
    y: np.ndarray       # [B, 3, H, W] rolled targets
    mask: np.ndarray    # [B, 1, H, W]
    labels: np.ndarray  # [B]


def make_batch(entries: list[DatasetEntry], idx, rng: np.random.Generator, cfg: Config) -> Batch:
    m = cfg.model
    parts = [prepare_example(entries[i], rng, m.image_height, m.snapshot_fov, m.snapshot_size) for i in idx]
    x, y, mask, labels = zip(*parts)
    return Batch(np.stack(x), np.stack(y), np.stack(mask), np.asarray(labels, dtype=np.int64))


def augment_shifts(rng: np.random.Generator, batch: int, width: int, enabled: bool) -> np.ndarray:
    if not enabled:
        return np.zeros(batch, dtype=np.int64)
    return rng.integers(width, size=batch)


def _finite(iteration: int, prefix: str, comps: dict[str, Tensor]) -> dict[str, float]:
    out = {}
    for name, t in comps.items():
        v = float(t.item())
        if not math.isfinite(v):
            raise NonFiniteLossError(iteration, f"{prefix}/{name}", v)
        out[f"{prefix}/{name}"] = v
    return out


class Trainer:
    """Owns both networks, both optimizers and the single data/noise RNG stream."""

    def __init__(self, cfg: Config, entries: list[DatasetEntry] | None = None):
        cfg.validate()
        self.cfg = cfg
        self.entries = entries or []
        for e in self.entries:
            if not 0 <= e.label < cfg.model.num_classes:
                raise LabelError(f"{e.path}: label {e.label} outside [0, {cfg.model.num_classes})")
        tc = cfg.train
        self.gen = Generator(cfg.model, tc.ablations, seed=tc.seed)
        self.disc = Discriminator(cfg.model, seed=tc.seed + 1)
        self.opt_g = Adam(self.gen.named_parameters(), tc.lr_g, tuple(tc.betas), tc.adam_eps)
        self.opt_d = Adam(self.disc.named_parameters(), tc.lr_d, tuple(tc.betas), tc.adam_eps)
        self.rng = np.random.default_rng(tc.seed)
        self.iteration = 0

    # --- one optimization step ----------------------------------------
    def sample_batch(self) -> Batch:
        n = len(self.entries)
        if n == 0:
            raise ConfigError("the dataset is empty")
        b = self.cfg.train.batch_size
        idx = self.rng.choice(n, size=b, replace=n < b)
        return make_batch(self.entries, idx, self.rng, self.cfg)

    def discriminator_step(self, batch: Batch) -> dict[str, float]:
        tc, ab, lw = self.cfg.train, self.cfg.train.ablations, self.cfg.train.loss
        gen, disc = self.gen, self.disc
        b, w = batch.x.shape[0], batch.x.shape[-1]
        x = Tensor(batch.x)
        with T.no_grad():
            fake = gen(x, gen.sample_latent(b, self.rng), batch.labels)
        shifts_r = augment_shifts(self.rng, b, w, tc.roll_augment)
        shifts_f = augment_shifts(self.rng, b, w, tc.roll_augment)
        real_in = roll_pairs(np.concatenate([batch.x, batch.y], axis=1), shifts_r)
        real_in = Tensor(real_in, requires_grad=True)
        fake_in = Tensor(roll_pairs(np.concatenate([batch.x, fake.data], axis=1), shifts_f))
        recon = not ab.no_dis_rec
        out_r = disc(real_in, reconstruct=recon)
        out_f = disc(fake_in, reconstruct=recon)
        comps = {"adv_patch": adv_loss_d(out_r.patch_logits, out_f.patch_logits)}
        weights = {}
        lam = 0.0 if ab.no_channel_loss else lw.lambda_ch_d
        if not ab.no_channel_loss:
            comps["adv_channel"] = adv_loss_d(out_r.channel_logits, out_f.channel_logits)
            weights["adv_channel"] = lam
        if recon:
            comps["dis_rec"] = rec_loss_d(real_in, out_r.reconstruction) + rec_loss_d(fake_in, out_f.reconstruction)
            weights["dis_rec"] = lw.w_dis_rec
        # R1 on real inputs only
        gn = d_grad_norm_sq(real_in, disc, lam, scores=sample_scores(out_r, lam))
        comps["r1"] = r1_penalty(gn, lw.gamma_r1)
        total = assemble(comps, weights)
        disc.zero_grad()
        T.backward(total)
        self.opt_d.step()
        comps["total"] = total
        return _finite(self.iteration, "d", comps)

    def generator_step(self, batch: Batch) -> dict[str, float]:
        tc, ab, lw = self.cfg.train, self.cfg.train.ablations, self.cfg.train.loss
        gen, disc = self.gen, self.disc
        b, w = batch.x.shape[0], batch.x.shape[-1]
        x = Tensor(batch.x)
        disc.requires_grad_(False)
        try:
            fake = gen(x, gen.sample_latent(b, self.rng), batch.labels)
            shifts = augment_shifts(self.rng, b, w, tc.roll_augment)
            fake_in = T.roll(stack_input(x, fake), shifts, axis=-1)
            recon = not ab.no_dis_rec
            out = disc(fake_in, reconstruct=recon)
            comps = {"adv_patch": adv_loss_g(out.patch_logits)}
            weights = {}
            if not ab.no_channel_loss:
                comps["adv_channel"] = adv_loss_g(out.channel_logits)
                weights["adv_channel"] = lw.lambda_ch_g
            comps["rec"] = rec_loss_g(fake, Tensor(batch.y), batch.mask)
            weights["rec"] = lw.w_rec
            if recon:
                comps["dis_rec"] = rec_loss_d(fake_in, out.reconstruction)
                weights["dis_rec"] = lw.w_dis_rec
            total = assemble(comps, weights)
            gen.zero_grad()
            T.backward(total)
            self.opt_g.step()
        finally:
            disc.requires_grad_(True)
        comps["total"] = total
        self._last_fake = fake.data
        return _finite(self.iteration, "g", comps)

    def train_step(self, batch: Batch | None = None) -> dict[str, float]:
        batch = batch if batch is not None else self.sample_batch()
        self.gen.train()
        metrics = self.discriminator_step(batch)
        metrics.update(self.generator_step(batch))
        self.iteration += 1
        return metrics

    # --- persistence ----------------------------------------------------
    def registry(self) -> dict[str, Tensor]:
        reg = self.gen.state()
        reg.update(self.disc.state("disc/"))
        reg.update(self.opt_g.state("opt_g"))
        reg.update(self.opt_d.state("opt_d"))
        return reg

    def checkpoint(self) -> Checkpoint:
        tensors = {k: v.data for k, v in self.registry().items()}
        extra = {"rng": self.rng.bit_generator.state, "adam_t": [self.opt_g.t, self.opt_d.t]}
        return Checkpoint(tensors, self.cfg.to_dict(), self.iteration, extra)

    def save(self, path) -> None:
        save_checkpoint(path, self.checkpoint())

    def restore(self, ckpt: Checkpoint) -> None:
        if Config.from_dict(ckpt.config).to_dict() != self.cfg.to_dict():
            raise CheckpointVersionError("checkpoint config differs from the trainer config")
        assign_state(self.registry(), ckpt.tensors)
        self.iteration = ckpt.iteration
        self.opt_g.t, self.opt_d.t = ckpt.extra["adam_t"]
        self.rng.bit_generator.state = ckpt.extra["rng"]

    @classmethod
    def from_checkpoint(cls, path, entries: list[DatasetEntry] | None = None) -> "Trainer":
        ckpt = load_checkpoint(path)
        try:
            cfg = Config.from_dict(ckpt.config).validate()
        except ConfigError as exc:
            raise CheckpointVersionError(f"checkpoint config is not usable: {exc}") from exc
        trainer = cls(cfg, entries)
        trainer.restore(ckpt)
        return trainer


def roll_pairs(d_in: np.ndarray, shifts: np.ndarray) -> np.ndarray:
    """Roll every 6-channel sample by its own shift, the same for all its channels."""
    return np.stack([np.roll(s, int(k), axis=-1) for s, k in zip(d_in, shifts)])


def write_metrics(fh: TextIO, iteration: int, metrics: dict[str, float]) -> None:
    for name in sorted(metrics):
        fh.write(f"iteration={iteration} loss={name} value={metrics[name]:.9g}\n")


def read_metrics(path) -> list[tuple[int, str, float]]:
    rows = []
    for line in Path(path).read_text().splitlines():
        fields = dict(part.split("=", 1) for part in line.split())
        rows.append((int(fields["iteration"]), fields["loss"], float(fields["value"])))
    return rows


def fit(cfg: Config, entries: list[DatasetEntry], out_dir=None, resume=None,
        iterations: int | None = None,
        callback: Callable[[int, dict[str, float]], None] | None = None) -> Trainer:
    """Train until ``iterations`` (default ``cfg.train.iterations``) steps are done.

    With ``out_dir`` the metrics log, periodic checkpoints, sample images and
    ``final.omx`` are written there.
    """
    trainer = Trainer.from_checkpoint(resume, entries) if resume else Trainer(cfg, entries)
    tc = trainer.cfg.train
    total = tc.iterations if iterations is None else iterations
    out = Path(out_dir) if out_dir else None
    fh = None
    if out:
        out.mkdir(parents=True, exist_ok=True)
        fh = open(out / "metrics.log", "a")
    try:
        while trainer.iteration < total:
            metrics = trainer.train_step()
            it = trainer.iteration
            if fh:
                write_metrics(fh, it, metrics)
            if callback:
                callback(it, metrics)
            if it % 100 == 0:
                log.info("iteration %d  g/rec %.4f  d/total %.4f", it, metrics["g/rec"], metrics["d/total"])
            if out and tc.sample_every and it % tc.sample_every == 0:
                write_png(out / "samples" / f"iter_{it:06d}.png", trainer._last_fake[0])
            if out and tc.checkpoint_every and it % tc.checkpoint_every == 0:
                trainer.save(out / f"ckpt_{it:06d}.omx")
        if out:
            trainer.save(out / "final.omx")
    finally:
        if fh:
            fh.close()
    return trainer


def load_generator(path) -> tuple[Generator, Config]:
    """Generator weights and config from a training checkpoint, in eval mode."""
    ckpt = load_checkpoint(path)
    try:
        cfg = Config.from_dict(ckpt.config).validate()
    except ConfigError as exc:
        raise CheckpointVersionError(f"checkpoint config is not usable: {exc}") from exc
    gen = Generator(cfg.model, cfg.train.ablations)
    own = {k: v for k, v in ckpt.tensors.items() if not k.startswith(("disc/", "opt_g/", "opt_d/"))}
    assign_state(gen.state(), own)
    return gen.eval(), cfg
