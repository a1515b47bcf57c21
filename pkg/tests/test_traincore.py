import math

import pytest
import torch

from scoreforge import traincore
from scoreforge.traincore import (
    Checkpoint, CheckpointIntegrityError, CheckpointVersionError, ConfigError, LossLog,
    NonFiniteLossError, TrainConfig, default_config,
)


@pytest.mark.parametrize("model, expected", [
    ("dcgan", (2e-4, 0.5, 0.999)),
    ("progan", (1e-3, 0.0, 0.99)),
    ("cyclewgan", (1e-5, 0.5, 0.99)),
])
def test_optimizer_defaults(model, expected):
    cfg = default_config(model)
    p = torch.nn.Parameter(torch.zeros(3))
    for which in ("generator", "discriminator"):
        opt = traincore.make_optimizer(cfg, which, [p])
        group = opt.param_groups[0]
        assert (group["lr"], *group["betas"]) == expected


def test_unknown_model_and_role():
    with pytest.raises(ConfigError):
        default_config("stylegan")
    with pytest.raises(ConfigError):
        traincore.make_optimizer(default_config("dcgan"), "critic", [torch.nn.Parameter(torch.zeros(1))])


@pytest.mark.parametrize("changes", [
    dict(beta1=0.99, beta2=0.9), dict(lr_g=0.0), dict(lambda_gp=-1.0), dict(beta2=1.0),
])
def test_config_invariants(changes):
    with pytest.raises(ConfigError):
        default_config("dcgan", **changes)


def test_progan_resolution_power_of_two():
    with pytest.raises(ConfigError):
        default_config("progan", resolution=96)


def test_config_toml_roundtrip(tmp_path):
    cfg = default_config("progan", seed=7, manifest="crops/manifest_handwritten.json")
    path = tmp_path / "c.toml"
    path.write_text(cfg.to_toml())
    assert traincore.load_config(path) == cfg
    assert traincore.load_config(path, lr_g=0.5).lr_g == 0.5


def test_config_unknown_key(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text('model = "dcgan"\nlearning_rate = 0.1\n')
    with pytest.raises(ConfigError, match="learning_rate"):
        traincore.load_config(path)


def test_seed_all_determinism():
    traincore.seed_all(0)
    a = torch.randn(5)
    traincore.seed_all(0)
    assert torch.equal(a, torch.randn(5))
    traincore.seed_all(1)
    assert not torch.equal(a, torch.randn(5))


def test_rng_state_replay():
    traincore.seed_all(0)
    torch.randn(3)
    blob = traincore.capture_rng_state()
    expected = torch.randn(4)
    torch.randn(10)
    traincore.restore_rng_state(blob)
    assert torch.equal(torch.randn(4), expected)


def test_losslog_rules():
    log = LossLog()
    log.append(0, 0, {"loss_d": 1.0})
    with pytest.raises(ValueError):
        log.append(0, 0, {"loss_d": 1.0})
    with pytest.raises(NonFiniteLossError) as err:
        log.append(1, 0, {"loss_g": math.nan})
    assert err.value.name == "loss_g" and err.value.step == 1


def test_losslog_csv_roundtrip():
    log = LossLog()
    for step in range(5):
        log.append(step, step // 2, {"loss_d": 0.1 * step + 1e-17, "loss_g": 1 / 3 + step})
    text = log.to_csv()
    assert text.splitlines()[0] == "step,epoch,loss_d,loss_g"
    assert LossLog.from_csv(text) == log


def test_losslog_malformed_names_line():
    with pytest.raises(ValueError, match="line 3"):
        LossLog.from_csv("step,epoch,loss_d\n0,0,1.0\n1,0\n")


def _probe_model():
    torch.manual_seed(3)
    return torch.nn.Sequential(torch.nn.Linear(4, 8), torch.nn.Tanh(), torch.nn.Linear(8, 2))


def _make_ck(model):
    opt = torch.optim.Adam(model.parameters())
    model(torch.randn(2, 4)).sum().backward()
    opt.step()
    return Checkpoint(models={"m": model.state_dict()}, optimizers={"m": opt.state_dict()},
                      config=default_config("dcgan").to_dict(), epoch=3,
                      rng_state=traincore.capture_rng_state())


def test_checkpoint_roundtrip_bitwise(tmp_path):
    model = _probe_model()
    ck = _make_ck(model)
    path = traincore.save_checkpoint(ck, tmp_path / "a.ckpt")
    loaded = traincore.load_checkpoint(path)
    clone = _probe_model()
    clone.load_state_dict(loaded.models["m"])
    probe = torch.linspace(-1, 1, 12).reshape(3, 4)
    assert torch.equal(model(probe), clone(probe))
    assert loaded.epoch == 3 and loaded.train_config == default_config("dcgan")
    traincore.save_checkpoint(loaded, tmp_path / "b.ckpt")
    again = traincore.load_checkpoint(tmp_path / "b.ckpt")
    for k, v in loaded.models["m"].items():
        assert torch.equal(v, again.models["m"][k])


def test_checkpoint_version_mismatch(tmp_path):
    ck = _make_ck(_probe_model())
    ck.format_version = traincore.FORMAT_VERSION + 1
    path = traincore.save_checkpoint(ck, tmp_path / "v.ckpt")
    with pytest.raises(CheckpointVersionError):
        traincore.load_checkpoint(path)


def test_checkpoint_corrupt_last_byte(tmp_path):
    path = traincore.save_checkpoint(_make_ck(_probe_model()), tmp_path / "c.ckpt")
    raw = bytearray(path.read_bytes())
    raw[-1] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointIntegrityError):
        traincore.load_checkpoint(path)
    path.write_bytes(bytes(raw[:-10]))
    with pytest.raises(CheckpointIntegrityError):
        traincore.load_checkpoint(path)


def test_device_env(monkeypatch):
    monkeypatch.delenv(traincore.DEVICE_ENV, raising=False)
    assert traincore.get_device() == torch.device("cpu")
    monkeypatch.setenv(traincore.DEVICE_ENV, "meta")
    assert traincore.get_device() == torch.device("meta")


def test_total_epochs():
    assert default_config("progan").total_epochs == 180
    assert isinstance(default_config("dcgan"), TrainConfig)
