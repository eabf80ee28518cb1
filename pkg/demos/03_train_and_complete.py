"""Train the tiny denoiser on simulated chairs and complete a held-out view.

Phase 1 uses only the masked objective.  A short phase 2 then adds the
silhouette and depth terms.  Takes a few minutes on one CPU core.

Run:  python demos/03_train_and_complete.py
"""

import numpy as np

from shapecomp.data import make_dataset
from shapecomp.denoiser import TinyDenoiser
from shapecomp.diffusion import generate, linear_schedule
from shapecomp.grid import condition_split
from shapecomp.mesh import grid_to_points
from shapecomp.metrics import evaluate
from shapecomp.training import TrainConfig, train

objects = make_dataset(8, ("chair",), seed=0)
cfg = TrainConfig(phase1_epochs=150, phase2_epochs=10, seed=0)


def progress(epoch, phase, loss):
    if epoch % 25 == 0:
        print(f"  phase {phase} epoch {epoch:3d}  loss {loss:.4f}")


res = train(objects, cfg, callback=progress)
# phase 2 adds the prior terms, so its loss is not comparable with phase 1
for phase in (1, 2):
    curve = [l for l, p in zip(res.losses, res.phases) if p == phase]
    print(f"phase {phase} loss {curve[0]:.4f} -> {curve[-1]:.4f}")

sched = linear_schedule(cfg.T, cfg.beta0, cfg.betaT)
den = TinyDenoiser(res.params)
for obj in objects[:3]:
    x0 = obj.view_grid(0)
    out = generate(den, x0, condition_split(x0), sched, rng=1)
    gt = grid_to_points(obj.gt, 16384, rng=2).points
    f_in = evaluate([grid_to_points(x0, 16384, rng=3).points], gt).f1
    f_out = evaluate([grid_to_points(out, 16384, rng=3).points], gt).f1
    print(f"{obj.object_id}: voxels {int(x0.values.sum())} -> {int(out.values.sum())}, "
          f"F1 input {f_in:.3f} completion {f_out:.3f}")
