"""Simulate scans of one procedural chair and look at what a single view covers.

Run:  python demos/01_scan_simulator.py
"""

import numpy as np

from shapecomp.data import make_object
from shapecomp.grid import merge_pseudo_gt, voxelize

obj = make_object("demo_chair", "chair", seed=3)
print(f"{obj.object_id}: {len(obj.views)} views, grid {obj.spec.dims} at {obj.spec.voxel_size:.4f} m")
print(f"GT occupancy: {int(obj.gt.values.sum())} voxels")

for i in range(len(obj.views)):
    g = obj.view_grid(i)
    covered = np.logical_and(g.values > 0, obj.gt.values > 0).sum() / obj.gt.values.sum()
    partners = obj.eligible_partners(i)
    print(f"  view {i}: {len(obj.clouds[i].points):5d} points, {int(g.values.sum()):4d} voxels, "
          f"covers {covered:.0%} of GT, partners {partners}")

# a pseudo-GT is the union of two views that adds enough new voxels
i, j = 0, obj.eligible_partners(0)[0]
pair = voxelize(merge_pseudo_gt(obj.clouds[i], obj.clouds[j]), obj.spec)
print(f"pseudo-GT from views {i}+{j}: {int(pair.values.sum())} voxels "
      f"(+{pair.values.sum() / obj.view_grid(i).values.sum() - 1:.0%} over view {i})")
