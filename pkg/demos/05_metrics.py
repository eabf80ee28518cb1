"""Completion metrics on a few hand-made point clouds.

Run:  python demos/05_metrics.py
"""

import numpy as np

from shapecomp.metrics import evaluate, tmd, uhd

rng = np.random.default_rng(0)
sphere = rng.normal(size=(4000, 3))
sphere /= np.linalg.norm(sphere, axis=1, keepdims=True)
half = sphere[sphere[:, 2] > 0]
jitter = sphere + 0.01 * rng.normal(size=sphere.shape)

# EMD matches 512-point subsamples, so even identical clouds keep a small floor
for name, pred in [("same sphere", sphere), ("jittered", jitter), ("upper half", half)]:
    r = evaluate([pred], sphere, partial=half)
    print(f"{name:12s} P {r.precision:.3f} R {r.recall:.3f} F1 {r.f1:.3f} "
          f"EMD {r.emd:.3f} CD {r.chamfer:.2e} UHD {r.uhd:.3f}")

# diversity: identical completions have zero TMD
print(f"TMD identical {tmd([sphere, sphere]):.4f}, TMD sphere vs half {tmd([sphere, half]):.4f}")
print(f"UHD from partial to a full completion {uhd(half, [sphere]):.4f}")
