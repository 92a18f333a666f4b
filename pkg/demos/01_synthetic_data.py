"""
Synthetic shapes, views and brain frames
========================================

One procedural object, its 12 rendered views and the simulated
recording a subject produces while viewing it.
"""
from recon3d.data.brain import make_subject, simulate_fmri
from recon3d.data.render import render_views
from recon3d.data.shapes import category_name, generate_shape, sample_spec

# a chair: primitives sampled from the category template, voxelized at 32^3
spec = sample_spec(4, seed=7)
grid = generate_shape(spec, 32)
print(category_name(4), "occupied voxels:", int(grid.occupancy.sum()))

# views around the object at a fixed pitch
views = render_views(grid, k=12)
print("views", views.images.shape, "azimuths", views.azimuths[:4], "...")

# the subject maps view features into an ROI with a lagged, noisy response
subject = make_subject("core-01", seed=0)
frames = simulate_fmri(views, subject, seed=1).frames
print("frames", frames.shape, "mean %.3f std %.3f" % (frames.mean(), frames.std()))
print("ROI fraction of the frame: %.3f" % subject.roi_mask.mean())
