import math

import pytest
import torch
from hypothesis import given, settings, strategies as st

from scoreforge import dcgan
from scoreforge.traincore import ConfigError, default_config

from _oracles import finite_difference_grads, max_relative_error


def test_disc_loss_unsmoothed_closed_form():
    loss = dcgan.discriminator_loss([0.9], [0.1], 1.0, 0.0)
    assert abs(float(loss) - (-math.log(0.9) - math.log(0.9))) < 1e-12
    assert abs(float(loss) - 0.21072103131565253) < 1e-12


def test_disc_loss_smoothed_real_term():
    # only the real term: compare smoothed BCE on D(x)=0.9 against its closed form
    real_term = dcgan._bce(torch.tensor([0.9], dtype=torch.float64), 0.9)
    assert abs(float(real_term) - 0.3250829733914482) < 1e-12
    full = dcgan.discriminator_loss([0.9], [0.1])
    assert abs(float(full) - 2 * 0.3250829733914482) < 1e-12


def test_disc_loss_perfect_limit():
    eps = 1e-12
    assert float(dcgan.discriminator_loss([1 - eps], [eps], 1.0, 0.0)) < 1e-10


@pytest.mark.parametrize("bad", [0.0, 1.0, -0.2, 1.5])
def test_disc_loss_domain_error(bad):
    with pytest.raises(ValueError):
        dcgan.discriminator_loss([bad], [0.5])
    with pytest.raises(ValueError):
        dcgan.generator_loss([bad])


@pytest.mark.parametrize("p, expected", [(1 - 1e-15, 0.0), (0.5, math.log(2)), (math.exp(-1), 1.0)])
def test_generator_loss_closed_form(p, expected):
    assert abs(float(dcgan.generator_loss([p, p])) - expected) < 1e-12


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.01, 0.99), min_size=1, max_size=8), st.lists(st.floats(0.01, 0.99), min_size=1, max_size=8))
def test_unsmoothed_equals_direct_formula(real, fake):
    direct = -sum(math.log(r) for r in real) / len(real) - sum(math.log(1 - f) for f in fake) / len(fake)
    assert abs(float(dcgan.discriminator_loss(real, fake, 1.0, 0.0)) - direct) < 1e-12


def test_logit_losses_match_probability_losses():
    torch.manual_seed(0)
    rl, fl = torch.randn(16, dtype=torch.float64), torch.randn(16, dtype=torch.float64)
    a = dcgan.discriminator_loss_from_logits(rl, fl)
    b = dcgan.discriminator_loss(torch.sigmoid(rl), torch.sigmoid(fl))
    assert abs(float(a - b)) < 1e-12
    assert abs(float(dcgan.generator_loss_from_logits(fl) - dcgan.generator_loss(torch.sigmoid(fl)))) < 1e-12


def test_generator_shape_and_range():
    g = dcgan.init_weights(dcgan.DcganGenerator())
    out = g(torch.randn(3, 100) * 50)
    assert out.shape == (3, 1, 64, 64)
    assert out.min() >= -1 and out.max() <= 1


def test_discriminator_probability_and_input_check():
    d = dcgan.init_weights(dcgan.DcganDiscriminator()).eval()
    p = d(torch.randn(4, 1, 64, 64))
    assert p.shape == (4,) and bool(((p > 0) & (p < 1)).all())
    with pytest.raises(ValueError, match="64"):
        d(torch.randn(4, 1, 32, 32))


def test_init_weights_statistics():
    torch.manual_seed(0)
    layer = dcgan.init_weights(torch.nn.Sequential(torch.nn.Conv2d(100, 100, 10, bias=False),
                                                   torch.nn.BatchNorm2d(100)))
    w = layer[0].weight.detach().double()
    assert w.numel() == 10**6
    assert abs(float(w.mean())) < 1e-3
    assert abs(float(w.std()) - 0.02) < 2e-3
    assert torch.equal(layer[1].bias, torch.zeros(100))
    assert abs(float(layer[1].weight.detach().mean()) - 1.0) < 0.01


def test_init_weights_deterministic():
    torch.manual_seed(5)
    a = dcgan.init_weights(dcgan.DcganGenerator(width=8))
    torch.manual_seed(5)
    b = dcgan.init_weights(dcgan.DcganGenerator(width=8))
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert torch.equal(pa, pb)


@pytest.mark.parametrize("resolution", [4, 8])
def test_generator_loss_gradient_matches_finite_differences(resolution):
    torch.manual_seed(0)
    g = dcgan.init_weights(dcgan.DcganGenerator(latent_dim=3, width=2, resolution=resolution)).double()
    d = dcgan.init_weights(dcgan.DcganDiscriminator(width=2, resolution=resolution)).double()
    for p in g.parameters():
        p.data.mul_(10)  # move weights off the tiny-init regime so gradients are O(1)
    z = torch.randn(4, 3, dtype=torch.float64)

    def loss():
        return dcgan.generator_loss(d(g(z)))

    params = list(g.parameters())
    auto = torch.autograd.grad(loss(), params)
    numeric = finite_difference_grads(loss, params)
    assert max_relative_error(auto, numeric) < 1e-4


def test_zero_lr_step_changes_nothing():
    g = dcgan.init_weights(dcgan.DcganGenerator(width=4))
    cfg = default_config("dcgan")
    opt = torch.optim.Adam(g.parameters(), lr=0.0, betas=(cfg.beta1, cfg.beta2))
    before = [p.detach().clone() for p in g.parameters()]
    g(torch.randn(2, 100)).sum().backward()
    opt.step()
    assert all(torch.equal(a, b) for a, b in zip(before, g.parameters()))


def test_batch_count_oracle():
    assert dcgan.batches_per_epoch(200, 32) == 200 // 32 == 6


def test_train_smoke_and_determinism(hw64):
    cfg = default_config("dcgan", epochs=2, batch_size=32, channels=8, seed=3)
    a = dcgan.train_dcgan(cfg, hw64)
    b = dcgan.train_dcgan(cfg, hw64)
    assert len(a.losslog) == 12
    assert set(a.losslog.names) == {"loss_d", "loss_g", "d_x", "d_g_z"}
    assert a.losslog.to_csv() == b.losslog.to_csv()


def test_resume_reproduces_log(hw64, tmp_path):
    cfg = default_config("dcgan", epochs=2, batch_size=50, channels=8, seed=1)
    full = dcgan.train_dcgan(cfg, hw64, output_dir=tmp_path / "full")
    resumed = dcgan.train_dcgan(cfg, hw64, resume=tmp_path / "full" / "checkpoints" / "epoch_0000.ckpt")
    assert resumed.losslog.to_csv() == full.losslog.to_csv()


def test_empty_manifest_rejected(tmp_path):
    from scoreforge import dataprep
    empty = dataprep.build_manifest(tmp_path, "handwritten")
    with pytest.raises(ConfigError):
        dcgan.train_dcgan(default_config("dcgan"), empty)


def test_generate_pngs(tmp_path):
    g = dcgan.init_weights(dcgan.DcganGenerator(width=4))
    paths = dcgan.generate(g, 3, tmp_path, seed=0)
    from PIL import Image
    assert len(paths) == 3
    assert Image.open(paths[0]).size == (64, 64)
