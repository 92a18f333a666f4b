"""
Shape and image metrics
=======================

Point-cloud distances, the Frechet point distance, SSIM and n-way
identification, each on a toy pair where the answer is known.
"""
import numpy as np

from recon3d.data.render import render_views
from recon3d.data.shapes import generate_shape, sample_spec
from recon3d.lad import extract_mesh, sample_points
from recon3d.metrics import (PointFeatureNet, chamfer, emd_exact, emd_sinkhorn, nway_accuracy, object_fpd,
                             ssim)

a = generate_shape(sample_spec(9, seed=1), 32)   # sofa
b = generate_shape(sample_spec(9, seed=2), 32)   # another sofa
c = generate_shape(sample_spec(0, seed=1), 32)   # airplane
pts = {k: sample_points(extract_mesh(g), 512, seed=0) for k, g in zip("abc", (a, b, c))}

# chamfer and EMD are zero for a cloud with itself and grow with shape difference
for pair in ("aa", "ab", "ac"):
    p, q = pts[pair[0]], pts[pair[1]]
    print(pair, "CD %.3f  EMD %.3f  EMD(sinkhorn) %.3f" % (chamfer(p, q), emd_exact(p, q), emd_sinkhorn(p, q)))

# FPD compares Gaussian fits of features from a fixed random point network
net = PointFeatureNet(seed=0)
print("FPD a-b %.3f  a-c %.3f" % (object_fpd(net, pts["a"], pts["b"]), object_fpd(net, pts["a"], pts["c"])))

# SSIM between renders
va, vc = render_views(a, 1).images[0], render_views(c, 1).images[0]
print("SSIM a-a %.3f  a-c %.3f" % (ssim(va, va), ssim(va, vc)))

# n-way identification: perfect features score 1, random ones score about 1/n
rng = np.random.default_rng(0)
gt = rng.standard_normal((50, 32))
print("10-way perfect %.2f" % nway_accuracy(gt, gt, 10).mean())
print("10-way random  %.2f" % nway_accuracy(rng.standard_normal((50, 32)), gt, 10).mean())
