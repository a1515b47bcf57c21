"""Unpaired printed <-> handwritten translation with Wasserstein critics and an L2 cycle loss.

``g_p`` maps printed to handwritten (P -> H) and ``g_h`` maps handwritten to
printed (H -> P). Critic ``d_h`` scores the handwritten domain and ``d_p`` the
printed one.
"""

from __future__ import annotations

import enum
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
from PIL import Image

from . import dataprep
from .progan import critic_loss, gen_loss, gradient_penalty
from .traincore import (
    Checkpoint, CheckpointWriter, ConfigError, LossLog, TrainConfig, TrainResult,
    capture_rng_state, check_finite, get_device, load_checkpoint, make_optimizer,
    restore_rng_state, seed_all,
)


class Direction(str, enum.Enum):
    P2H = "p2h"
    H2P = "h2p"


def instance_norm(x: torch.Tensor, epsilon: float = 1e-5, weight=None, bias=None) -> torch.Tensor:
    """Per-(sample, channel) spatial standardisation, ``(x - mean) / (std + eps)``, then affine."""
    mean = x.mean(dim=(2, 3), keepdim=True)
    std = x.var(dim=(2, 3), unbiased=False, keepdim=True).sqrt()
    y = (x - mean) / (std + epsilon)
    if weight is not None:
        y = y * weight.reshape(1, -1, 1, 1)
    if bias is not None:
        y = y + bias.reshape(1, -1, 1, 1)
    return y


class InstanceNorm(nn.Module):
    def __init__(self, num_features: int, epsilon: float = 1e-5):
        super().__init__()
        self.epsilon = epsilon
        self.weight = nn.Parameter(torch.ones(num_features))
        self.bias = nn.Parameter(torch.zeros(num_features))

    def forward(self, x):
        return instance_norm(x, self.epsilon, self.weight, self.bias)


class ResidualBlock(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.branch = nn.Sequential(
            nn.ReflectionPad2d(1), nn.Conv2d(dim, dim, 3), InstanceNorm(dim), nn.ReLU(True),
            nn.ReflectionPad2d(1), nn.Conv2d(dim, dim, 3), InstanceNorm(dim),
        )

    def forward(self, x):
        return x + self.branch(x)


class ResnetGenerator(nn.Module):
    """7x7 ingress, two stride-2 downsamplings, residual blocks, two upsamplings, 7x7 tanh egress."""

    def __init__(self, channels: int = 1, width: int = 64, n_blocks: int = 9):
        super().__init__()
        self.n_blocks = n_blocks
        layers: list[nn.Module] = [
            nn.ReflectionPad2d(3), nn.Conv2d(channels, width, 7), InstanceNorm(width), nn.ReLU(True),
        ]
        ch = width
        for _ in range(2):
            layers += [nn.Conv2d(ch, ch * 2, 3, 2, 1), InstanceNorm(ch * 2), nn.ReLU(True)]
            ch *= 2
        layers += [ResidualBlock(ch) for _ in range(n_blocks)]
        for _ in range(2):
            layers += [nn.ConvTranspose2d(ch, ch // 2, 3, 2, 1, output_padding=1), InstanceNorm(ch // 2), nn.ReLU(True)]
            ch //= 2
        layers += [nn.ReflectionPad2d(3), nn.Conv2d(ch, channels, 7), nn.Tanh()]
        self.model = nn.Sequential(*layers)

    @property
    def residual_blocks(self) -> list[ResidualBlock]:
        return [m for m in self.model if isinstance(m, ResidualBlock)]

    def forward(self, x):
        return self.model(x)


class DomainCritic(nn.Module):
    """Patch critic with instance norm; ``forward`` returns the raw score map."""

    def __init__(self, channels: int = 1, width: int = 64, n_layers: int = 3):
        super().__init__()
        layers: list[nn.Module] = [nn.Conv2d(channels, width, 4, 2, 1), nn.LeakyReLU(0.2, True)]
        ch = width
        for i in range(1, n_layers):
            nxt = width * min(2 ** i, 8)
            layers += [nn.Conv2d(ch, nxt, 4, 2, 1), InstanceNorm(nxt), nn.LeakyReLU(0.2, True)]
            ch = nxt
        nxt = width * min(2 ** n_layers, 8)
        layers += [nn.Conv2d(ch, nxt, 4, 1, 1), InstanceNorm(nxt), nn.LeakyReLU(0.2, True),
                   nn.Conv2d(nxt, 1, 4, 1, 1)]
        self.model = nn.Sequential(*layers)

    def forward(self, x):
        return self.model(x)

    def score(self, x):
        """One score per image: the mean of the patch map."""
        return self.model(x).mean(dim=(1, 2, 3))


class CycleWGAN(nn.Module):
    def __init__(self, channels: int = 1, width: int = 64, n_blocks: int = 9, resolution: int = 256):
        super().__init__()
        self.resolution = resolution
        self.g_p = ResnetGenerator(channels, width, n_blocks)
        self.g_h = ResnetGenerator(channels, width, n_blocks)
        self.d_h = DomainCritic(channels, width)
        self.d_p = DomainCritic(channels, width)

    @classmethod
    def from_config(cls, config: TrainConfig) -> "CycleWGAN":
        return cls(1, config.channels, config.n_residual_blocks, config.resolution)


# ---------------------------------------------------------------------------
# losses

def critic_losses(d_real_scores, d_fake_scores):
    """Wasserstein critic loss for one domain: ``-E[D(real)] + E[D(fake)]``."""
    return critic_loss(d_real_scores, d_fake_scores)


def generator_adversarial_loss(d_fake_scores):
    return gen_loss(d_fake_scores)


def _mse(a, b):
    return (a - b).pow(2).mean()


def cycle_loss(p_batch, h_batch, g_p, g_h, lambda_cycle: float = 10.0) -> torch.Tensor:
    rec_p = g_h(g_p(p_batch))
    rec_h = g_p(g_h(h_batch))
    return lambda_cycle * (_mse(rec_p, p_batch) + _mse(rec_h, h_batch))


def enforce_lipschitz(critic: nn.Module, mode: str = "clip", c: float = 0.01, lambda_gp: float = 10.0,
                      real: torch.Tensor | None = None, fake: torch.Tensor | None = None):
    """Clip mode clamps every critic parameter into ``[-c, c]`` and returns 0.

    GP mode returns the gradient penalty on ``real``/``fake`` interpolates,
    to be added to the critic loss.
    """
    if mode == "clip":
        with torch.no_grad():
            for p in critic.parameters():
                p.clamp_(-c, c)
        return torch.zeros(())
    if mode == "gp":
        if real is None or fake is None:
            raise ValueError("gp mode needs real and fake batches")
        score = critic.score if hasattr(critic, "score") else critic
        return gradient_penalty(score, real, fake, lambda_gp)
    raise ConfigError(f"unknown lipschitz mode {mode!r}")


def generator_objective(model: CycleWGAN, p: torch.Tensor, h: torch.Tensor, lambda_cycle: float):
    """Joint generator loss and its parts: adversarial terms for both generators plus cycle loss."""
    fake_h = model.g_p(p)
    fake_p = model.g_h(h)
    loss_gp = generator_adversarial_loss(model.d_h.score(fake_h))
    loss_gh = generator_adversarial_loss(model.d_p.score(fake_p))
    rec_p = model.g_h(fake_h)
    rec_h = model.g_p(fake_p)
    loss_cycle = lambda_cycle * (_mse(rec_p, p) + _mse(rec_h, h))
    return loss_gp + loss_gh + loss_cycle, {"loss_gp": loss_gp, "loss_gh": loss_gh, "loss_cycle": loss_cycle}


# ---------------------------------------------------------------------------
# training


def train_cyclewgan(config: TrainConfig, manifest_p: dataprep.DatasetManifest,
                    manifest_h: dataprep.DatasetManifest, output_dir=None,
                    resume: str | Path | Checkpoint | None = None, evaluator=None) -> TrainResult:
    """Per iteration: ``n_critic`` updates of D_h then D_p, then one joint generator update."""
    if config.model != "cyclewgan":
        raise ConfigError(f"train_cyclewgan got a {config.model!r} config")
    if manifest_p.count == 0 or manifest_h.count == 0:
        raise ConfigError("both manifests must be non-empty")
    bs = config.batch_size
    n_iter = min(manifest_p.count, manifest_h.count) // bs
    if n_iter == 0:
        raise ConfigError(f"manifests cannot fill one batch of {bs}")

    device = get_device()
    seed_all(config.seed, config.deterministic)
    model = CycleWGAN.from_config(config).to(device)
    opt_g = make_optimizer(config, "generator", list(model.g_p.parameters()) + list(model.g_h.parameters()))
    opt_dh = make_optimizer(config, "discriminator", model.d_h.parameters())
    opt_dp = make_optimizer(config, "discriminator", model.d_p.parameters())
    optimizers = {"generators": opt_g, "d_h": opt_dh, "d_p": opt_dp}
    data_p = dataprep.load_batch(manifest_p, range(manifest_p.count), config.resolution)
    data_h = dataprep.load_batch(manifest_h, range(manifest_h.count), config.resolution)

    log = LossLog()
    start_epoch, step = 0, 0
    if resume is not None:
        ck = resume if isinstance(resume, Checkpoint) else load_checkpoint(resume)
        model.load_state_dict(ck.models["cyclewgan"])
        for k, opt in optimizers.items():
            opt.load_state_dict(ck.optimizers[k])
        restore_rng_state(ck.rng_state)
        log = ck.loss_log()
        start_epoch, step = ck.epoch + 1, ck.step + 1

    writer = CheckpointWriter(output_dir)
    ck = None
    for epoch in range(start_epoch, config.epochs):
        order_p = torch.randperm(manifest_p.count)
        order_h = torch.randperm(manifest_h.count)
        for b in range(n_iter):
            p = data_p[order_p[b * bs:(b + 1) * bs]].to(device)
            h = data_h[order_h[b * bs:(b + 1) * bs]].to(device)
            with torch.no_grad():
                fake_h = model.g_p(p)
                fake_p = model.g_h(h)

            for _ in range(config.n_critic):
                for critic, opt, real, fake, name in ((model.d_h, opt_dh, h, fake_h, "h"),
                                                      (model.d_p, opt_dp, p, fake_p, "p")):
                    opt.zero_grad(set_to_none=True)
                    loss = critic_losses(critic.score(real), critic.score(fake))
                    if config.lipschitz == "gp":
                        loss = loss + enforce_lipschitz(critic, "gp", lambda_gp=config.lambda_gp,
                                                        real=real, fake=fake)
                    loss.backward()
                    opt.step()
                    if config.lipschitz == "clip":
                        enforce_lipschitz(critic, "clip", c=config.clip_value)
                    if name == "h":
                        loss_dh = loss
                    else:
                        loss_dp = loss

            opt_g.zero_grad(set_to_none=True)
            total, parts = generator_objective(model, p, h, config.lambda_cycle)
            total.backward()
            opt_g.step()

            values = check_finite(step, loss_dh=loss_dh, loss_dp=loss_dp, loss_gh=parts["loss_gh"],
                                  loss_gp=parts["loss_gp"], loss_cycle=parts["loss_cycle"])
            log.append(step, epoch, values)
            step += 1

        ck = _checkpoint(config, model, optimizers, epoch, step - 1, log)
        writer.epoch_end(ck, evaluator(model) if evaluator else None)

    if ck is None:
        ck = _checkpoint(config, model, optimizers, start_epoch - 1, step - 1, log)
    writer.finish(ck, log)
    return TrainResult(ck, log, writer.paths)


def _checkpoint(config, model, optimizers, epoch, step, log) -> Checkpoint:
    return Checkpoint(
        models={"cyclewgan": {k: v.detach().cpu().clone() for k, v in model.state_dict().items()}},
        optimizers={k: opt.state_dict() for k, opt in optimizers.items()},
        config=config.to_dict(), epoch=epoch, step=step, rng_state=capture_rng_state(),
        losslog=[(s, e, dict(v)) for s, e, v in log.rows],
    )


def model_from_checkpoint(ck: Checkpoint | str | Path) -> CycleWGAN:
    if not isinstance(ck, Checkpoint):
        ck = load_checkpoint(ck)
    model = CycleWGAN.from_config(ck.train_config)
    model.load_state_dict(ck.models["cyclewgan"])
    return model.eval()


@torch.no_grad()
def translate(model: CycleWGAN | Checkpoint | str | Path, images: torch.Tensor,
              direction: Direction | str = Direction.P2H) -> torch.Tensor:
    if not isinstance(model, CycleWGAN):
        model = model_from_checkpoint(model)
    direction = Direction(direction)
    r = model.resolution
    if images.dim() != 4 or images.shape[-2:] != (r, r):
        raise ValueError(f"translate expects (N, 1, {r}, {r}) images, got {tuple(images.shape)}")
    gen = model.g_p if direction is Direction.P2H else model.g_h
    gen.eval()
    return gen(images)


def contact_sheet(inputs: torch.Tensor, outputs: torch.Tensor, path: str | Path, pad: int = 4) -> Path:
    """Two-row grid: inputs on top, their translations underneath."""
    top = dataprep.to_uint8(inputs[:, 0])
    bottom = dataprep.to_uint8(outputs[:, 0])
    n, r, _ = top.shape
    sheet = np.full((2 * r + 3 * pad, n * (r + pad) + pad), 255, dtype=np.uint8)
    for i in range(n):
        x = pad + i * (r + pad)
        sheet[pad:pad + r, x:x + r] = top[i]
        sheet[2 * pad + r:2 * pad + 2 * r, x:x + r] = bottom[i]
    Image.fromarray(sheet).save(path)
    return Path(path)
