"""Render silhouettes and depth from an occupancy grid and score them.

The depth loss fits a per-view scale and shift first, so an affine-distorted
depth map costs nothing.

Run:  python demos/04_render_priors.py
"""

import numpy as np

from shapecomp.data import make_object
from shapecomp.render import depth_loss, render_view, silhouette_loss

obj = make_object("demo_chair", "chair", seed=3)
cam = obj.views[0]
view = render_view(obj.gt, cam, 64)

print(f"rendered {cam.width}x{cam.height}: silhouette covers {np.mean(view.silhouette > 0.5):.1%} of pixels")
print(f"silhouette L1 vs measured mask: {silhouette_loss([view.silhouette], [cam.silhouette]):.4f}")

valid = view.silhouette > 0.5
res = depth_loss([(view.depth, view.silhouette)], [(view.depth, valid)])
warped = depth_loss([(view.depth, view.silhouette)], [(1.7 * view.depth - 0.4, valid)])
print(f"depth loss vs itself {res.loss:.2e}, vs 1.7*d - 0.4 {warped.loss:.2e}")
print(f"depth loss vs the blurred mono-depth surrogate: "
      f"{depth_loss([(view.depth, view.silhouette)], [(cam.depth, cam.depth_valid)]).loss:.4f}")

# gradients flow back to every voxel that a ray touched
g = view.backward(np.ones_like(view.silhouette), None)
print(f"d(sum S)/d(occupancy): {np.count_nonzero(g)} voxels with nonzero gradient")
