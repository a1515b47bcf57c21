"""The three training objectives on numbers small enough to check by hand."""
import math

import torch

from scoreforge import cyclewgan, dcgan, progan

# DCGAN with label smoothing: real targets 0.9, fake targets 0.1
d_real, d_fake = torch.tensor([0.9], dtype=torch.float64), torch.tensor([0.1], dtype=torch.float64)
print("plain BCE   ", float(dcgan.discriminator_loss(d_real, d_fake, 1.0, 0.0)), "=", -2 * math.log(0.9))
print("smoothed BCE", float(dcgan.discriminator_loss(d_real, d_fake)))
print("generator   ", float(dcgan.generator_loss([0.5])), "= ln 2")

# Wasserstein critic: it wants real scores high and fake scores low
real, fake = torch.tensor([1.0, 1.0]), torch.tensor([-1.0, -1.0])
print("critic loss ", float(progan.critic_loss(real, fake)))

# gradient penalty on f(x) = w.x is lambda * (|w| - 1)^2 whatever the inputs
w = torch.tensor([3.0, 0.0, 0.0, 0.0], dtype=torch.float64)
x_real, x_fake = torch.randn(8, 1, 2, 2, dtype=torch.float64), torch.randn(8, 1, 2, 2, dtype=torch.float64)
gp = progan.gradient_penalty(lambda t: t.reshape(len(t), -1) @ w, x_real, x_fake, lambda_gp=10)
print("GP |w|=3    ", float(gp), "= 10 * (3 - 1)^2")

# cycle loss: each round trip that lands 0.1 off costs 10 * (0.01 + 0.01)
p, h = torch.zeros(2, 1, 4, 4, dtype=torch.float64), torch.ones(2, 1, 4, 4, dtype=torch.float64)
nudge = lambda t: t + 0.05
print("cycle loss  ", float(cyclewgan.cycle_loss(p, h, nudge, nudge, lambda_cycle=10)))
