"""
Voxel codes and the autoregressive decoder
==========================================

Quantize a shape into codebook indices, decode it back, and sample code
sequences from a small untrained decoder with and without adapters.
"""
import torch

from recon3d.config import LadConfig
from recon3d.data.shapes import generate_shape, sample_spec
from recon3d.lad import ARDecoder, VQAutoencoder, ar_sample, nll_loss, voxel_iou

torch.manual_seed(0)
cfg = LadConfig(resolution=32, latent_grid=8, codebook_size=64, codebook_dim=16, vq_channels=8,
                width=64, depth=4, heads=4, adapter_period=2)
vq = VQAutoencoder(cfg)
occ = torch.as_tensor(generate_shape(sample_spec(12, seed=3), 32).occupancy).float()

# a few steps of VQ training on a single shape
opt = torch.optim.Adam(vq.parameters(), 3e-3)
for step in range(60):
    out = vq(occ)
    opt.zero_grad()
    out["loss"].backward()
    opt.step()
codes = vq.encode(occ)
print("codes", tuple(codes.shape), "distinct", codes.unique().numel())
print("round-trip IoU %.3f" % voxel_iou(vq.decode(codes), occ[None]).item())

# the decoder reads [condition tokens, separator, codes]; adapters start as the identity
ar = ARDecoder(cfg, latent_len=4, latent_dim=16, fmri_dim=16).eval()
cond, fmri = torch.randn(1, 4, 16), torch.randn(1, 16)
print("NLL with / without adapters: %.4f %.4f" % (nll_loss(ar, codes, cond, fmri).item(),
                                                nll_loss(ar, codes, cond).item()))
sample = ar_sample(ar, cond, fmri, temperature=1.0, seed=0)
print("sampled codes", sample[0, :12].tolist(), "...")
