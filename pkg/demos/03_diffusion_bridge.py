"""
The diffusion bridge
====================

A linear noise schedule, the forward noising law, and ancestral sampling
with a denoiser that knows the answer. The sampler should land on the
target exactly, which makes it a check on the update rule itself.
"""
import numpy as np
import torch

from recon3d.fbdm import ddpm_sample, make_schedule, q_sample

s = make_schedule(100)
print("alpha_bar at t=1, 50, 100:", s.alpha_bars[[1, 50, 100]].round(5))

# the variance of x_t around sqrt(alpha_bar) x0 is 1 - alpha_bar
x0 = torch.full((100_000,), 0.5, dtype=torch.float64)
for t in (1, 50, 100):
    xt = q_sample(x0, t, torch.randn_like(x0), s)
    print("t=%3d  var %.4f  expected %.4f" % (t, xt.var().item(), 1 - s.alpha_bars[t]))


class Oracle(torch.nn.Module):
    def __init__(self, target):
        super().__init__()
        self.target = target

    def forward(self, x_t, t, c_f):
        ab = s.alpha_bars[t]
        return (x_t - np.sqrt(ab) * self.target) / np.sqrt(1 - ab)


target = torch.randn(4, 8, 16, dtype=torch.float64)
out = ddpm_sample(Oracle(target), target, s, seed=0).tokens
print("relative error of the oracle sampler: %.2e" % ((out - target).norm() / target.norm()).item())
