"""Baseline DCGAN producing 64x64 grayscale staff crops, trained with label smoothing."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Callable

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from PIL import Image

from . import dataprep
from .traincore import (
    Checkpoint, CheckpointWriter, ConfigError, LossLog, TrainConfig, TrainResult,
    capture_rng_state, check_finite, get_device, load_checkpoint, make_optimizer,
    restore_rng_state, seed_all,
)


def _n_doublings(resolution: int) -> int:
    if resolution < 4 or resolution & (resolution - 1):
        raise ValueError(f"resolution must be a power of two >= 4, got {resolution}")
    return int(math.log2(resolution)) - 2


class DcganGenerator(nn.Module):
    """Transposed-convolution stack: latent vector -> (1, resolution, resolution) in [-1, 1]."""

    def __init__(self, latent_dim: int = 100, width: int = 64, resolution: int = 64, channels: int = 1):
        super().__init__()
        self.latent_dim = latent_dim
        self.resolution = resolution
        n_up = _n_doublings(resolution)
        layers: list[nn.Module] = []
        if n_up == 0:
            layers += [nn.ConvTranspose2d(latent_dim, channels, 4, 1, 0, bias=False), nn.Tanh()]
        else:
            ch = width * 2 ** (n_up - 1)
            layers += [nn.ConvTranspose2d(latent_dim, ch, 4, 1, 0, bias=False), nn.BatchNorm2d(ch), nn.ReLU(True)]
            for _ in range(n_up - 1):
                layers += [nn.ConvTranspose2d(ch, ch // 2, 4, 2, 1, bias=False), nn.BatchNorm2d(ch // 2), nn.ReLU(True)]
                ch //= 2
            layers += [nn.ConvTranspose2d(ch, channels, 4, 2, 1, bias=False), nn.Tanh()]
        self.main = nn.Sequential(*layers)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return self.main(z.reshape(z.shape[0], self.latent_dim, 1, 1))


class DcganDiscriminator(nn.Module):
    """Strided-convolution stack with LeakyReLU(0.2) ending in a sigmoid probability.

    ``logits`` exposes the pre-sigmoid score; training uses it so that saturated
    probabilities never reach the log.
    """

    def __init__(self, width: int = 64, resolution: int = 64, channels: int = 1):
        super().__init__()
        self.resolution = resolution
        self.channels = channels
        n_down = _n_doublings(resolution)
        layers: list[nn.Module] = []
        ch_in, ch = channels, width
        for i in range(n_down):
            layers.append(nn.Conv2d(ch_in, ch, 4, 2, 1, bias=False))
            if i > 0:
                layers.append(nn.BatchNorm2d(ch))
            layers.append(nn.LeakyReLU(0.2, inplace=True))
            ch_in, ch = ch, ch * 2
        layers.append(nn.Conv2d(ch_in, 1, 4, 1, 0, bias=False))
        self.main = nn.Sequential(*layers)

    def logits(self, x: torch.Tensor) -> torch.Tensor:
        expected = (self.channels, self.resolution, self.resolution)
        if tuple(x.shape[1:]) != expected:
            raise ValueError(f"discriminator expects inputs of shape (N, {', '.join(map(str, expected))}), "
                             f"got {tuple(x.shape)}")
        return self.main(x).reshape(-1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.logits(x))


def init_weights(model: nn.Module) -> nn.Module:
    for m in model.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            nn.init.normal_(m.weight, 0.0, 0.02)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, (nn.BatchNorm2d, nn.InstanceNorm2d)) and m.weight is not None:
            nn.init.normal_(m.weight, 1.0, 0.02)
            nn.init.zeros_(m.bias)
    return model


def _check_probabilities(p: torch.Tensor, name: str) -> None:
    if not bool(((p > 0) & (p < 1)).all()):
        raise ValueError(f"{name} must lie strictly inside (0, 1)")


def _bce(p: torch.Tensor, target: float) -> torch.Tensor:
    loss = -torch.log(p) * target
    if target != 1.0:
        loss = loss - torch.log1p(-p) * (1.0 - target)
    return loss.mean()


def discriminator_loss(d_real, d_fake, smooth_real: float = 0.9, smooth_fake: float = 0.1) -> torch.Tensor:
    """Binary cross-entropy against smoothed targets, averaged per batch and summed over the two terms.

    With ``smooth_real=1`` and ``smooth_fake=0`` this is ``-E[log D(x)] - E[log(1 - D(G(z)))]``.
    """
    d_real = torch.as_tensor(d_real, dtype=torch.float64) if not torch.is_tensor(d_real) else d_real
    d_fake = torch.as_tensor(d_fake, dtype=torch.float64) if not torch.is_tensor(d_fake) else d_fake
    _check_probabilities(d_real, "d_real")
    _check_probabilities(d_fake, "d_fake")
    return _bce(d_real, smooth_real) + _bce(d_fake, smooth_fake)


def generator_loss(d_fake) -> torch.Tensor:
    """Non-saturating generator loss ``-E[log D(G(z))]``."""
    d_fake = torch.as_tensor(d_fake, dtype=torch.float64) if not torch.is_tensor(d_fake) else d_fake
    _check_probabilities(d_fake, "d_fake")
    return -torch.log(d_fake).mean()


def discriminator_loss_from_logits(real_logits, fake_logits, smooth_real=0.9, smooth_fake=0.1):
    real = F.binary_cross_entropy_with_logits(real_logits, torch.full_like(real_logits, smooth_real))
    fake = F.binary_cross_entropy_with_logits(fake_logits, torch.full_like(fake_logits, smooth_fake))
    return real + fake


def generator_loss_from_logits(fake_logits):
    return F.softplus(-fake_logits).mean()


def build_models(config: TrainConfig) -> tuple[DcganGenerator, DcganDiscriminator]:
    g = DcganGenerator(config.latent_dim, config.channels, config.resolution)
    d = DcganDiscriminator(config.channels, config.resolution)
    return init_weights(g), init_weights(d)


def batches_per_epoch(n_items: int, batch_size: int) -> int:
    return n_items // batch_size


def train_dcgan(config: TrainConfig, manifest: dataprep.DatasetManifest, output_dir=None,
                resume: str | Path | Checkpoint | None = None,
                evaluator: Callable[[DcganGenerator], float] | None = None) -> TrainResult:
    """Alternate one discriminator and one generator update per drop-last batch."""
    if config.model != "dcgan":
        raise ConfigError(f"train_dcgan got a {config.model!r} config")
    if manifest.count == 0:
        raise ConfigError("manifest is empty")
    n_batches = batches_per_epoch(manifest.count, config.batch_size)
    if n_batches == 0:
        raise ConfigError(f"{manifest.count} crops cannot fill one batch of {config.batch_size}")

    device = get_device()
    seed_all(config.seed, config.deterministic)
    gen, disc = build_models(config)
    gen.to(device)
    disc.to(device)
    opt_g = make_optimizer(config, "generator", gen.parameters())
    opt_d = make_optimizer(config, "discriminator", disc.parameters())
    data = dataprep.load_batch(manifest, range(manifest.count), config.resolution)

    log = LossLog()
    start_epoch, step = 0, 0
    if resume is not None:
        ck = resume if isinstance(resume, Checkpoint) else load_checkpoint(resume)
        gen.load_state_dict(ck.models["generator"])
        disc.load_state_dict(ck.models["discriminator"])
        opt_g.load_state_dict(ck.optimizers["generator"])
        opt_d.load_state_dict(ck.optimizers["discriminator"])
        restore_rng_state(ck.rng_state)
        log = ck.loss_log()
        start_epoch, step = ck.epoch + 1, ck.step + 1

    writer = CheckpointWriter(output_dir)
    ck = None
    for epoch in range(start_epoch, config.epochs):
        gen.train()
        disc.train()
        order = torch.randperm(manifest.count)
        for b in range(n_batches):
            real = data[order[b * config.batch_size:(b + 1) * config.batch_size]].to(device)
            z = torch.randn(real.shape[0], config.latent_dim, device=device)
            fake = gen(z)

            opt_d.zero_grad(set_to_none=True)
            real_logits = disc.logits(real)
            fake_logits = disc.logits(fake.detach())
            loss_d = discriminator_loss_from_logits(real_logits, fake_logits, config.smooth_real, config.smooth_fake)
            loss_d.backward()
            opt_d.step()

            opt_g.zero_grad(set_to_none=True)
            loss_g = generator_loss_from_logits(disc.logits(fake))
            loss_g.backward()
            opt_g.step()

            values = check_finite(step, loss_d=loss_d, loss_g=loss_g,
                                  d_x=torch.sigmoid(real_logits).mean(),
                                  d_g_z=torch.sigmoid(fake_logits).mean())
            log.append(step, epoch, values)
            step += 1

        ck = _checkpoint(config, gen, disc, opt_g, opt_d, epoch, step - 1, log)
        writer.epoch_end(ck, evaluator(gen) if evaluator else None)

    if ck is None:
        ck = _checkpoint(config, gen, disc, opt_g, opt_d, start_epoch - 1, step - 1, log)
    writer.finish(ck, log)
    return TrainResult(ck, log, writer.paths)


def _checkpoint(config, gen, disc, opt_g, opt_d, epoch, step, log) -> Checkpoint:
    return Checkpoint(
        models={"generator": _cpu_state(gen), "discriminator": _cpu_state(disc)},
        optimizers={"generator": opt_g.state_dict(), "discriminator": opt_d.state_dict()},
        config=config.to_dict(), epoch=epoch, step=step, rng_state=capture_rng_state(),
        losslog=[(s, e, dict(v)) for s, e, v in log.rows],
    )


def _cpu_state(model: nn.Module) -> dict:
    return {k: v.detach().cpu().clone() for k, v in model.state_dict().items()}


def generator_from_checkpoint(ck: Checkpoint) -> DcganGenerator:
    config = ck.train_config
    gen = DcganGenerator(config.latent_dim, config.channels, config.resolution)
    gen.load_state_dict(ck.models["generator"])
    return gen.eval()


@torch.no_grad()
def sample(gen: DcganGenerator, n: int, seed: int = 0) -> torch.Tensor:
    g = torch.Generator().manual_seed(seed)
    z = torch.randn(n, gen.latent_dim, generator=g)
    gen.eval()
    return gen(z)


def write_pngs(images: torch.Tensor, out_dir: str | Path, prefix: str = "sample") -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pixels = dataprep.to_uint8(images[:, 0])
    paths = []
    for i, px in enumerate(pixels):
        path = out_dir / f"{prefix}_{i:05d}.png"
        Image.fromarray(np.ascontiguousarray(px)).save(path)
        paths.append(path)
    return paths


def generate(gen: DcganGenerator, n: int, out_dir: str | Path, seed: int = 0) -> list[Path]:
    return write_pngs(sample(gen, n, seed), out_dir)
