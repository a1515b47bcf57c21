"""Shared training plumbing: configs, seeding, optimizers, checkpoints and loss logs."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
import os
import pickle
import random
import struct
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np
import torch

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

MODELS = ("dcgan", "progan", "cyclewgan")
DEVICE_ENV = "SCOREFORGE_DEVICE"


class ConfigError(ValueError):
    pass


class NonFiniteLossError(RuntimeError):
    def __init__(self, name: str, step: int, value: float):
        super().__init__(f"non-finite loss {name}={value} at step {step}")
        self.name = name
        self.step = step
        self.value = value


class CheckpointError(RuntimeError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointIntegrityError(CheckpointError):
    pass


def get_device() -> torch.device:
    return torch.device(os.environ.get(DEVICE_ENV, "cpu"))


# ---------------------------------------------------------------------------
# configuration


@dataclass
class TrainConfig:
    model: str
    lr_g: float
    lr_d: float
    beta1: float
    beta2: float
    batch_size: int = 32
    batch_schedule: tuple[int, ...] = ()
    epochs: int = 1
    epoch_schedule: tuple[int, ...] = ()
    lambda_gp: float = 0.0
    lambda_cycle: float = 0.0
    latent_dim: int = 100
    seed: int = 0
    resolution: int = 64
    # architecture width: DCGAN feature maps, ProGAN base channels, CycleWGAN first-layer filters
    channels: int = 64
    start_resolution: int = 4
    fade_in_fraction: float = 0.5
    n_critic: int = 1
    n_residual_blocks: int = 9
    lipschitz: str = "clip"
    clip_value: float = 0.01
    smooth_real: float = 0.9
    smooth_fake: float = 0.1
    deterministic: bool = True
    manifest: str = ""
    manifest_p: str = ""
    manifest_h: str = ""
    output_dir: str = ""

    def __post_init__(self):
        self.batch_schedule = tuple(int(b) for b in self.batch_schedule)
        self.epoch_schedule = tuple(int(e) for e in self.epoch_schedule)
        self.validate()

    def validate(self) -> None:
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}; expected one of {MODELS}")
        if self.lr_g <= 0 or self.lr_d <= 0:
            raise ConfigError("learning rates must be positive")
        if not 0.0 <= self.beta1 < self.beta2 < 1.0:
            raise ConfigError(f"need 0 <= beta1 < beta2 < 1, got ({self.beta1}, {self.beta2})")
        if self.lambda_gp < 0 or self.lambda_cycle < 0:
            raise ConfigError("lambda values must be nonnegative")
        if self.latent_dim < 1 or self.resolution < 1 or self.channels < 1:
            raise ConfigError("latent_dim, resolution and channels must be positive")
        if self.batch_size < 1 or any(b < 1 for b in self.batch_schedule):
            raise ConfigError("batch sizes must be positive")
        if self.epochs < 1 or any(e < 1 for e in self.epoch_schedule):
            raise ConfigError("epoch counts must be positive")
        if self.n_critic < 1:
            raise ConfigError("n_critic must be >= 1")
        if self.model == "progan":
            for r in (self.resolution, self.start_resolution):
                if r < 4 or r & (r - 1):
                    raise ConfigError(f"progan resolutions must be powers of two >= 4, got {r}")
            if self.start_resolution > self.resolution:
                raise ConfigError("start_resolution exceeds resolution")
            n = int(math.log2(self.resolution // self.start_resolution)) + 1
            for name in ("batch_schedule", "epoch_schedule"):
                sched = getattr(self, name)
                if sched and len(sched) != n:
                    raise ConfigError(f"{name} needs {n} entries, got {len(sched)}")
            if not 0.0 <= self.fade_in_fraction <= 1.0:
                raise ConfigError("fade_in_fraction must be in [0, 1]")
        if self.lipschitz not in ("clip", "gp"):
            raise ConfigError(f"unknown lipschitz mode {self.lipschitz!r}")

    @property
    def total_epochs(self) -> int:
        return sum(self.epoch_schedule) if self.epoch_schedule else self.epochs

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["batch_schedule"] = list(self.batch_schedule)
        d["epoch_schedule"] = list(self.epoch_schedule)
        return d

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def to_toml(self) -> str:
        lines = []
        for key, value in self.to_dict().items():
            lines.append(f"{key} = {_toml_value(value)}")
        return "\n".join(lines) + "\n"


def _toml_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    if isinstance(value, float):
        return repr(value)
    return str(value)


_DEFAULTS: dict[str, dict[str, Any]] = {
    "dcgan": dict(lr_g=2e-4, lr_d=2e-4, beta1=0.5, beta2=0.999, batch_size=128, epochs=100,
                  latent_dim=100, resolution=64, channels=64),
    "progan": dict(lr_g=1e-3, lr_d=1e-3, beta1=0.0, beta2=0.99,
                   batch_schedule=(32, 32, 32, 32, 16, 16), epoch_schedule=(30,) * 6,
                   lambda_gp=10.0, latent_dim=256, resolution=128, start_resolution=4,
                   channels=256, fade_in_fraction=0.5, n_critic=1),
    "cyclewgan": dict(lr_g=1e-5, lr_d=1e-5, beta1=0.5, beta2=0.99, batch_size=1, epochs=25,
                      lambda_gp=10.0, lambda_cycle=10.0, resolution=256, channels=64,
                      n_residual_blocks=9, n_critic=5, lipschitz="clip", clip_value=0.01),
}


def default_config(model: str, **overrides) -> TrainConfig:
    if model not in _DEFAULTS:
        raise ConfigError(f"unknown model {model!r}; expected one of {MODELS}")
    values = dict(_DEFAULTS[model])
    values.update(overrides)
    return TrainConfig(model=model, **values)


def load_config(path: str | Path, model: str | None = None, **overrides) -> TrainConfig:
    """Read a flat TOML config file on top of the model defaults; ``overrides`` win."""
    with open(path, "rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    nested = [k for k, v in data.items() if isinstance(v, dict)]
    if nested:
        raise ConfigError(f"{path}: config must be flat, found tables {nested}")
    model = model or data.get("model")
    if model is None:
        raise ConfigError(f"{path}: no model given")
    data.pop("model", None)
    known = {f.name for f in dataclasses.fields(TrainConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
    data.update({k: v for k, v in overrides.items() if v is not None})
    return default_config(model, **data)


# ---------------------------------------------------------------------------
# randomness


def seed_all(seed: int, deterministic: bool = True) -> None:
    """Seed python, numpy and torch; optionally force deterministic kernels."""
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(deterministic, warn_only=True)


def capture_rng_state() -> bytes:
    return pickle.dumps({
        "python": random.getstate(),
        "numpy": np.random.get_state(),
        "torch": torch.get_rng_state(),
    })


def restore_rng_state(blob: bytes) -> None:
    state = pickle.loads(blob)
    random.setstate(state["python"])
    np.random.set_state(state["numpy"])
    torch.set_rng_state(state["torch"])


def make_optimizer(config: TrainConfig, which: str, params: Iterable[torch.nn.Parameter]) -> torch.optim.Adam:
    if which == "generator":
        lr = config.lr_g
    elif which == "discriminator":
        lr = config.lr_d
    else:
        raise ConfigError(f"unknown optimizer role {which!r}")
    if config.model not in MODELS:
        raise ConfigError(f"unknown model {config.model!r}")
    return torch.optim.Adam(params, lr=lr, betas=(config.beta1, config.beta2))


# ---------------------------------------------------------------------------
# loss log


class LossLog:
    """Append-only record of ``(step, epoch, {name: value})`` rows."""

    def __init__(self, rows: Iterable[tuple[int, int, Mapping[str, float]]] = ()):
        self.rows: list[tuple[int, int, dict[str, float]]] = []
        for step, epoch, values in rows:
            self.append(step, epoch, values)

    def __len__(self) -> int:
        return len(self.rows)

    def __eq__(self, other) -> bool:
        return isinstance(other, LossLog) and self.rows == other.rows

    @property
    def names(self) -> list[str]:
        seen: dict[str, None] = {}
        for _, _, values in self.rows:
            for k in values:
                seen.setdefault(k)
        return list(seen)

    @property
    def last_step(self) -> int:
        return self.rows[-1][0] if self.rows else -1

    def append(self, step: int, epoch: int, values: Mapping[str, float]) -> None:
        if self.rows and step <= self.rows[-1][0]:
            raise ValueError(f"step {step} does not follow {self.rows[-1][0]}")
        clean = {}
        for name, value in values.items():
            value = float(value)
            if not math.isfinite(value):
                raise NonFiniteLossError(name, step, value)
            clean[name] = value
        self.rows.append((int(step), int(epoch), clean))

    def series(self, name: str) -> np.ndarray:
        return np.array([values.get(name, np.nan) for _, _, values in self.rows])

    def steps(self) -> np.ndarray:
        return np.array([s for s, _, _ in self.rows], dtype=np.int64)

    def to_csv(self) -> str:
        buf = io.StringIO()
        names = self.names
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["step", "epoch", *names])
        for step, epoch, values in self.rows:
            writer.writerow([step, epoch, *(repr(values[n]) if n in values else "" for n in names)])
        return buf.getvalue()

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(self.to_csv(), encoding="utf-8")
        return path

    @classmethod
    def from_csv(cls, text: str) -> "LossLog":
        reader = csv.reader(io.StringIO(text))
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError("line 1: empty loss log") from None
        if header[:2] != ["step", "epoch"]:
            raise ValueError(f"line 1: header must start with step,epoch, got {header[:2]}")
        names = header[2:]
        log = cls()
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                values = {n: float(v) for n, v in zip(names, row[2:]) if v != ""}
                log.append(int(row[0]), int(row[1]), values)
            except (ValueError, NonFiniteLossError) as exc:
                raise ValueError(f"line {lineno}: {exc}") from exc
        return log

    @classmethod
    def load(cls, path: str | Path) -> "LossLog":
        return cls.from_csv(Path(path).read_text(encoding="utf-8"))


def check_finite(step: int, **losses: torch.Tensor | float) -> dict[str, float]:
    """Convert losses to floats, raising on the first non-finite term."""
    out = {}
    for name, value in losses.items():
        v = float(value.detach()) if isinstance(value, torch.Tensor) else float(value)
        if not math.isfinite(v):
            raise NonFiniteLossError(name, step, v)
        out[name] = v
    return out


# ---------------------------------------------------------------------------
# checkpoints

FORMAT_VERSION = 1
_MAGIC = b"SFCKPT\x00\x01"
_HEADER = struct.Struct(">8sIQ32s")  # magic, format version, payload length, sha256


@dataclass
class Checkpoint:
    models: dict[str, dict[str, torch.Tensor]]
    optimizers: dict[str, dict[str, Any]]
    config: dict[str, Any]
    epoch: int
    rng_state: bytes
    step: int = -1
    losslog: list = field(default_factory=list)
    extra: dict[str, Any] = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    @property
    def train_config(self) -> TrainConfig:
        return TrainConfig.from_dict(self.config)

    def loss_log(self) -> LossLog:
        return LossLog(self.losslog)


def save_checkpoint(checkpoint: Checkpoint, path: str | Path) -> Path:
    """Write ``checkpoint`` atomically: header (magic, version, length, sha256) + torch payload."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.BytesIO()
    payload = {f.name: getattr(checkpoint, f.name) for f in dataclasses.fields(checkpoint)}
    torch.save(payload, buf)
    data = buf.getvalue()
    header = _HEADER.pack(_MAGIC, checkpoint.format_version, len(data), hashlib.sha256(data).digest())
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(header + data)
    os.replace(tmp, path)
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise CheckpointIntegrityError(f"{path}: truncated header")
    magic, version, length, digest = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise CheckpointIntegrityError(f"{path}: not a scoreforge checkpoint")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{path}: checkpoint format {version} is incompatible with this build (format {FORMAT_VERSION})")
    data = raw[_HEADER.size:]
    if len(data) != length or hashlib.sha256(data).digest() != digest:
        raise CheckpointIntegrityError(f"{path}: payload is truncated or corrupt")
    payload = torch.load(io.BytesIO(data), map_location="cpu", weights_only=False)
    return Checkpoint(**payload)


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    losslog: LossLog
    checkpoint_paths: list[Path] = field(default_factory=list)


class CheckpointWriter:
    """Per-epoch checkpoints plus an optional best-FID checkpoint."""

    def __init__(self, output_dir: str | Path | None):
        self.output_dir = Path(output_dir) if output_dir else None
        self.paths: list[Path] = []
        self.best_fid = math.inf

    def epoch_end(self, checkpoint: Checkpoint, fid: float | None = None) -> None:
        if self.output_dir is None:
            return
        ckdir = self.output_dir / "checkpoints"
        self.paths.append(save_checkpoint(checkpoint, ckdir / f"epoch_{checkpoint.epoch:04d}.ckpt"))
        if fid is not None and fid < self.best_fid:
            self.best_fid = fid
            save_checkpoint(checkpoint, ckdir / "best_fid.ckpt")

    def finish(self, checkpoint: Checkpoint, log: LossLog) -> None:
        if self.output_dir is None:
            return
        self.output_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(checkpoint, self.output_dir / "final.ckpt")
        log.save(self.output_dir / "losslog.csv")
