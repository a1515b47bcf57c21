"""Progressive-growing GAN (4x4 up to 128x128) trained with WGAN-GP losses."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import torch
import torch.nn as nn
import torch.nn.functional as F

from . import dataprep
from .dcgan import write_pngs
from .traincore import (
    Checkpoint, CheckpointWriter, ConfigError, LossLog, TrainConfig, TrainResult,
    capture_rng_state, check_finite, get_device, load_checkpoint, make_optimizer,
    restore_rng_state, seed_all,
)

# ---------------------------------------------------------------------------
# layer primitives


def pixel_norm(x: torch.Tensor, epsilon: float = 1e-8) -> torch.Tensor:
    return x / torch.sqrt(x.pow(2).mean(dim=1, keepdim=True) + epsilon)


def minibatch_stddev(x: torch.Tensor, epsilon: float = 1e-8) -> torch.Tensor:
    """Append one channel holding the batch-averaged per-position standard deviation."""
    std = torch.sqrt(x.var(dim=0, unbiased=False) + epsilon).mean()
    stat = std.expand(x.shape[0], 1, x.shape[2], x.shape[3])
    return torch.cat([x, stat], dim=1)


def equalized_scale(fan_in: int) -> float:
    if fan_in < 1:
        raise ValueError("fan_in must be >= 1")
    return math.sqrt(2.0 / fan_in)


def fade_in_blend(prev_path: torch.Tensor, new_path: torch.Tensor, alpha: float) -> torch.Tensor:
    if prev_path.shape != new_path.shape:
        raise ValueError(f"fade-in paths differ in shape: {tuple(prev_path.shape)} vs {tuple(new_path.shape)}")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    return alpha * new_path + (1.0 - alpha) * prev_path


class PixelNorm(nn.Module):
    def __init__(self, epsilon: float = 1e-8):
        super().__init__()
        self.epsilon = epsilon

    def forward(self, x):
        return pixel_norm(x, self.epsilon)


class MinibatchStdDev(nn.Module):
    def forward(self, x):
        return minibatch_stddev(x)


class EqualizedConv2d(nn.Module):
    """Conv with N(0, 1) weights rescaled by ``sqrt(2 / fan_in)`` on every forward pass."""

    def __init__(self, in_ch: int, out_ch: int, kernel_size: int, padding: int = 0):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(out_ch, in_ch, kernel_size, kernel_size))
        self.bias = nn.Parameter(torch.zeros(out_ch))
        self.scale = equalized_scale(in_ch * kernel_size * kernel_size)
        self.padding = padding

    def forward(self, x):
        return F.conv2d(x, self.weight * self.scale, self.bias, padding=self.padding)


class EqualizedLinear(nn.Module):
    def __init__(self, in_features: int, out_features: int):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(out_features, in_features))
        self.bias = nn.Parameter(torch.zeros(out_features))
        self.scale = equalized_scale(in_features)

    def forward(self, x):
        return F.linear(x, self.weight * self.scale, self.bias)


def _lrelu():
    return nn.LeakyReLU(0.2)


def stage_channels(base: int, stage: int) -> int:
    """Feature maps per stage: ``base`` up to 32 px, then halved each doubling."""
    return max(1, base >> max(0, stage - 3))


# ---------------------------------------------------------------------------
# networks


class ProganGenerator(nn.Module):
    def __init__(self, latent_dim: int = 256, channels: int = 256, n_stages: int = 6):
        super().__init__()
        self.latent_dim = latent_dim
        self.n_stages = n_stages
        c0 = stage_channels(channels, 0)
        self.c0 = c0
        self.dense = EqualizedLinear(latent_dim, c0 * 16)
        self.initial = nn.Sequential(_lrelu(), PixelNorm(), EqualizedConv2d(c0, c0, 3, 1), _lrelu(), PixelNorm())
        self.blocks = nn.ModuleList()
        self.to_image = nn.ModuleList([EqualizedConv2d(c0, 1, 1)])
        for s in range(1, n_stages):
            cin, cout = stage_channels(channels, s - 1), stage_channels(channels, s)
            self.blocks.append(nn.Sequential(
                nn.Upsample(scale_factor=2, mode="nearest"),
                EqualizedConv2d(cin, cout, 3, 1), _lrelu(), PixelNorm(),
                EqualizedConv2d(cout, cout, 3, 1), _lrelu(), PixelNorm(),
            ))
            self.to_image.append(EqualizedConv2d(cout, 1, 1))

    def forward(self, z: torch.Tensor, stage: int | None = None, alpha: float = 1.0) -> torch.Tensor:
        stage = self.n_stages - 1 if stage is None else stage
        if not 0 <= stage < self.n_stages:
            raise ValueError(f"stage {stage} outside 0..{self.n_stages - 1}")
        h = self.dense(pixel_norm(z)).reshape(z.shape[0], self.c0, 4, 4)
        h = self.initial(h)
        prev = h
        for s in range(1, stage + 1):
            prev = h
            h = self.blocks[s - 1](h)
        new = self.to_image[stage](h)
        if stage == 0 or alpha >= 1.0:
            return new
        old = F.interpolate(self.to_image[stage - 1](prev), scale_factor=2, mode="nearest")
        return fade_in_blend(old, new, alpha)


class ProganCritic(nn.Module):
    """Wasserstein critic; emits raw real-valued scores (no sigmoid)."""

    def __init__(self, channels: int = 256, n_stages: int = 6):
        super().__init__()
        self.n_stages = n_stages
        c0 = stage_channels(channels, 0)
        self.from_image = nn.ModuleList()
        self.blocks = nn.ModuleList()
        for s in range(n_stages):
            cs = stage_channels(channels, s)
            self.from_image.append(nn.Sequential(EqualizedConv2d(1, cs, 1), _lrelu()))
            if s > 0:
                cprev = stage_channels(channels, s - 1)
                self.blocks.append(nn.Sequential(
                    EqualizedConv2d(cs, cs, 3, 1), _lrelu(),
                    EqualizedConv2d(cs, cprev, 3, 1), _lrelu(),
                    nn.AvgPool2d(2),
                ))
        self.final = nn.Sequential(
            MinibatchStdDev(),
            EqualizedConv2d(c0 + 1, c0, 3, 1), _lrelu(),
            EqualizedConv2d(c0, c0, 4, 0), _lrelu(),
            nn.Flatten(),
            EqualizedLinear(c0, 1),
        )

    def forward(self, x: torch.Tensor, stage: int | None = None, alpha: float = 1.0) -> torch.Tensor:
        stage = self.n_stages - 1 if stage is None else stage
        expected = 4 * 2 ** stage
        if x.shape[-1] != expected or x.shape[-2] != expected:
            raise ValueError(f"stage {stage} critic expects {expected}x{expected} input, got {tuple(x.shape)}")
        h = self.from_image[stage](x)
        if stage > 0:
            h = self.blocks[stage - 1](h)
            if alpha < 1.0:
                skip = self.from_image[stage - 1](F.avg_pool2d(x, 2))
                h = fade_in_blend(skip, h, alpha)
            for s in range(stage - 1, 0, -1):
                h = self.blocks[s - 1](h)
        return self.final(h).reshape(-1)


# ---------------------------------------------------------------------------
# losses


def gradient_penalty(critic: Callable[[torch.Tensor], torch.Tensor], real_batch: torch.Tensor,
                     fake_batch: torch.Tensor, lambda_gp: float = 10.0) -> torch.Tensor:
    """``lambda_gp * E[(||grad D(x_hat)||_2 - 1)^2]`` on random real/fake interpolates."""
    if real_batch.shape != fake_batch.shape:
        raise ValueError("real and fake batches must share a shape")
    n = real_batch.shape[0]
    u = torch.rand(n, *([1] * (real_batch.dim() - 1)), dtype=real_batch.dtype, device=real_batch.device)
    x_hat = (u * real_batch.detach() + (1 - u) * fake_batch.detach()).requires_grad_(True)
    scores = critic(x_hat)
    if scores.requires_grad:
        (grads,) = torch.autograd.grad(scores.sum(), x_hat, create_graph=True, allow_unused=True)
    else:
        grads = None
    if grads is None:
        grads = torch.zeros_like(x_hat)
    norms = grads.reshape(n, -1).norm(2, dim=1)
    return lambda_gp * (norms - 1.0).pow(2).mean()


def critic_loss(d_real, d_fake, gp=0.0):
    return -torch.as_tensor(d_real).mean() + torch.as_tensor(d_fake).mean() + gp


def gen_loss(d_fake):
    return -torch.as_tensor(d_fake).mean()


# ---------------------------------------------------------------------------
# schedule


@dataclass
class GrowthSchedule:
    resolutions: list[int] = field(default_factory=lambda: [4, 8, 16, 32, 64, 128])
    epochs_per_stage: list[int] = field(default_factory=lambda: [30] * 6)
    batch_size_per_stage: list[int] = field(default_factory=lambda: [32, 32, 32, 32, 16, 16])
    fade_in_fraction: float = 0.5

    def __post_init__(self):
        r = self.resolutions
        if any(b != 2 * a for a, b in zip(r, r[1:])):
            raise ConfigError(f"resolutions must double at each stage, got {r}")
        if not (len(r) == len(self.epochs_per_stage) == len(self.batch_size_per_stage)):
            raise ConfigError("schedule lists must have one entry per stage")

    @property
    def n_stages(self) -> int:
        return len(self.resolutions)

    @property
    def total_epochs(self) -> int:
        return sum(self.epochs_per_stage)

    def stage_of_epoch(self, epoch: int) -> tuple[int, int]:
        """Map a global epoch index to ``(stage, epoch_within_stage)``."""
        for s, e in enumerate(self.epochs_per_stage):
            if epoch < e:
                return s, epoch
            epoch -= e
        raise IndexError("epoch beyond schedule")

    @classmethod
    def from_config(cls, config: TrainConfig) -> "GrowthSchedule":
        n = int(math.log2(config.resolution // config.start_resolution)) + 1
        resolutions = [config.start_resolution * 2 ** i for i in range(n)]
        epochs = list(config.epoch_schedule) or [config.epochs] * n
        if config.batch_schedule:
            batches = list(config.batch_schedule)
        else:
            batches = [config.batch_size if r <= 32 else max(1, config.batch_size // 2) for r in resolutions]
        return cls(resolutions, epochs, batches, config.fade_in_fraction)


@dataclass
class FadeInState:
    alpha: float
    current_stage: int


def fade_alpha(step_in_stage: int, steps_in_stage: int, fade_in_fraction: float) -> float:
    """Linear 0 -> 1 ramp over the first ``fade_in_fraction`` of a stage, then held at 1."""
    fade_steps = round(fade_in_fraction * (steps_in_stage - 1))
    if fade_steps <= 0:
        return 1.0
    return min(1.0, step_in_stage / fade_steps)


# ---------------------------------------------------------------------------
# training


def build_models(config: TrainConfig, n_stages: int | None = None):
    n_stages = n_stages or GrowthSchedule.from_config(config).n_stages
    first = int(math.log2(config.start_resolution)) - 2
    gen = ProganGenerator(config.latent_dim, config.channels, first + n_stages)
    critic = ProganCritic(config.channels, first + n_stages)
    return gen, critic


def train_progan(config: TrainConfig, manifest: dataprep.DatasetManifest, output_dir=None,
                 resume: str | Path | Checkpoint | None = None, evaluator=None) -> TrainResult:
    """Grow through every stage of the schedule; log losses tagged with stage and alpha."""
    if config.model != "progan":
        raise ConfigError(f"train_progan got a {config.model!r} config")
    if manifest.count == 0:
        raise ConfigError("manifest is empty")
    if manifest.crop_size < config.resolution:
        raise ConfigError(f"crops of {manifest.crop_size}px are smaller than final resolution {config.resolution}")
    sched = GrowthSchedule.from_config(config)
    offset = int(math.log2(config.start_resolution)) - 2  # architecture stage of schedule stage 0

    device = get_device()
    seed_all(config.seed, config.deterministic)
    gen, critic = build_models(config, sched.n_stages)
    gen.to(device)
    critic.to(device)
    opt_g = make_optimizer(config, "generator", gen.parameters())
    opt_d = make_optimizer(config, "discriminator", critic.parameters())

    log = LossLog()
    start_epoch, step = 0, 0
    if resume is not None:
        ck = resume if isinstance(resume, Checkpoint) else load_checkpoint(resume)
        gen.load_state_dict(ck.models["generator"])
        critic.load_state_dict(ck.models["critic"])
        opt_g.load_state_dict(ck.optimizers["generator"])
        opt_d.load_state_dict(ck.optimizers["critic"])
        restore_rng_state(ck.rng_state)
        log = ck.loss_log()
        start_epoch, step = ck.epoch + 1, ck.step + 1

    writer = CheckpointWriter(output_dir)
    ck = None
    data_cache: dict[int, torch.Tensor] = {}
    for epoch in range(start_epoch, sched.total_epochs):
        s, e_in = sched.stage_of_epoch(epoch)
        res, bs = sched.resolutions[s], sched.batch_size_per_stage[s]
        arch_stage = offset + s
        if res not in data_cache:
            data_cache.clear()
            data_cache[res] = dataprep.load_batch(manifest, range(manifest.count), res)
        data = data_cache[res]
        n_batches = manifest.count // bs
        if n_batches == 0:
            raise ConfigError(f"{manifest.count} crops cannot fill one batch of {bs}")
        steps_in_stage = n_batches * sched.epochs_per_stage[s]
        order = torch.randperm(manifest.count)
        for b in range(n_batches):
            alpha = 1.0 if s == 0 else fade_alpha(e_in * n_batches + b, steps_in_stage, sched.fade_in_fraction)
            real = data[order[b * bs:(b + 1) * bs]].to(device)

            for _ in range(config.n_critic):
                z = torch.randn(bs, config.latent_dim, device=device)
                with torch.no_grad():
                    fake = gen(z, arch_stage, alpha)
                opt_d.zero_grad(set_to_none=True)
                d_real = critic(real, arch_stage, alpha)
                d_fake = critic(fake, arch_stage, alpha)
                gp = gradient_penalty(lambda x: critic(x, arch_stage, alpha), real, fake, config.lambda_gp)
                loss_d = critic_loss(d_real, d_fake, gp)
                loss_d.backward()
                opt_d.step()

            opt_g.zero_grad(set_to_none=True)
            z = torch.randn(bs, config.latent_dim, device=device)
            loss_g = gen_loss(critic(gen(z, arch_stage, alpha), arch_stage, alpha))
            loss_g.backward()
            opt_g.step()

            values = check_finite(step, loss_d=loss_d, loss_g=loss_g, gp=gp)
            values.update(stage=float(s), resolution=float(res), alpha=float(alpha))
            log.append(step, epoch, values)
            step += 1

        ck = _checkpoint(config, gen, critic, opt_g, opt_d, epoch, step - 1, log, s)
        writer.epoch_end(ck, evaluator(gen, arch_stage) if evaluator else None)

    if ck is None:
        ck = _checkpoint(config, gen, critic, opt_g, opt_d, start_epoch - 1, step - 1, log, sched.n_stages - 1)
    writer.finish(ck, log)
    return TrainResult(ck, log, writer.paths)


def _checkpoint(config, gen, critic, opt_g, opt_d, epoch, step, log, stage) -> Checkpoint:
    state = lambda m: {k: v.detach().cpu().clone() for k, v in m.state_dict().items()}  # noqa: E731
    return Checkpoint(
        models={"generator": state(gen), "critic": state(critic)},
        optimizers={"generator": opt_g.state_dict(), "critic": opt_d.state_dict()},
        config=config.to_dict(), epoch=epoch, step=step, rng_state=capture_rng_state(),
        losslog=[(s, e, dict(v)) for s, e, v in log.rows], extra={"stage": stage},
    )


def generator_from_checkpoint(ck: Checkpoint) -> ProganGenerator:
    gen, _ = build_models(ck.train_config)
    gen.load_state_dict(ck.models["generator"])
    return gen.eval()


@torch.no_grad()
def generate(gen: ProganGenerator, n: int, out_dir: str | Path, resolution: int | None = None,
             seed: int = 0) -> list[Path]:
    stage = gen.n_stages - 1 if resolution is None else int(math.log2(resolution)) - 2
    if not 0 <= stage < gen.n_stages or 4 * 2 ** stage != (resolution or 4 * 2 ** stage):
        raise ValueError(f"resolution {resolution} is not a stage of this generator "
                         f"(4..{4 * 2 ** (gen.n_stages - 1)})")
    g = torch.Generator().manual_seed(seed)
    z = torch.randn(n, gen.latent_dim, generator=g)
    return write_pngs(gen(z, stage).clamp(-1, 1), out_dir)
