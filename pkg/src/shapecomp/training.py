"""Two-phase training of the tiny denoiser.

Phase 1 fits the masked BCE objective on free voxels.  Phase 2 lifts the
mask and adds silhouette and scale-invariant depth losses rendered from the
same prediction.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .denoiser import TinyDenoiserParams, adam_step, network_input, tiny_backward, tiny_forward
from .diffusion import linear_schedule, masked_bce_loss, noised_input
from .grid import OccupancyGrid, condition_split
from .render import W_MIN, depth_loss, render_view, silhouette_loss

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    phase1_epochs: int = 300
    phase2_epochs: int = 0
    batch_size: int = 4
    lr: float = 1e-3
    seed: int = 0
    lambdas: tuple = (1.0, 0.5, 0.5)
    T: int = 50
    beta0: float = 2e-3
    betaT: float = 0.4
    channels: tuple = (8, 8)
    emb_dim: int = 8
    render_mode: str = "compositing"
    render_samples: int = 64
    render_pixels: int = 256
    ratio: float = 0.30

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if self.phase1_epochs < 0 or self.phase2_epochs < 0:
            raise ValueError("epoch counts must be >= 0")
        if any(l < 0 for l in self.lambdas):
            raise ValueError("loss weights must be non-negative")


@dataclass
class TrainResult:
    params: TinyDenoiserParams
    losses: list = field(default_factory=list)
    phases: list = field(default_factory=list)


class TrainingDiverged(RuntimeError):
    def __init__(self, msg, last_good: TinyDenoiserParams, result: TrainResult):
        super().__init__(msg)
        self.last_good = last_good
        self.result = result


def prior_losses(pred: np.ndarray, spec, views, cfg: TrainConfig, rng):
    """Silhouette and depth losses of ``pred`` over a random pixel subset of each view.

    Returns ``(L_S, L_D, dL_S/dpred, dL_D/dpred)``.
    """
    grid = OccupancyGrid(spec, pred)
    renders, sils, deps = [], [], []
    for cam in views:
        n_pix = cam.width * cam.height
        pix = rng.choice(n_pix, min(cfg.render_pixels, n_pix), replace=False)
        r = render_view(grid, cam, cfg.render_samples, cfg.render_mode, pix)
        renders.append(r)
        sils.append(np.asarray(cam.silhouette).ravel()[pix])
        deps.append((np.asarray(cam.depth).ravel()[pix], np.asarray(cam.depth_valid).ravel()[pix]))
    ls, gs = silhouette_loss([r.silhouette for r in renders], sils, return_grad=True)
    dl = depth_loss([(r.depth, r.weight) for r in renders], deps, W_MIN)
    g_sil = sum(r.backward(d_silhouette=g) for r, g in zip(renders, gs))
    g_dep = sum(r.backward(d_depth=g) for r, g in zip(renders, dl.grads))
    return ls, dl.loss, g_sil, g_dep


def sample_step(params, item_pair, sched, cfg: TrainConfig, phase: int, rng):
    """Loss and parameter gradients for one training example."""
    x0, xgt, views = item_pair
    mask = condition_split(x0)
    t = int(rng.integers(1, sched.T + 1))
    noise = rng.standard_normal(x0.spec.dims)
    x_t = noised_input(xgt.values, mask, t, noise, sched)
    pred, cache = tiny_forward(params, network_input(x_t, mask, t, params.emb_dim, params.T))
    lt, g = masked_bce_loss(pred, xgt, mask, phase)
    if phase == 1:
        return lt, tiny_backward(params, cache, g)
    l1, l2, l3 = cfg.lambdas
    loss = l1 * lt
    g = l1 * g
    if (l2 > 0 or l3 > 0) and views:
        ls, ld, gs, gd = prior_losses(pred, x0.spec, views, cfg, rng)
        loss += l2 * ls + l3 * ld
        g = g + l2 * gs + l3 * gd
    return loss, tiny_backward(params, cache, g)


def train(dataset, cfg: TrainConfig, params: TinyDenoiserParams | None = None, callback=None) -> TrainResult:
    """Fit a tiny denoiser; returns parameters and the per-epoch mean loss.

    ``dataset`` items expose ``draw_pair(rng, ratio)``.  View pairs are
    redrawn every epoch.
    """
    if not dataset:
        raise ValueError("empty training set")
    rng = np.random.default_rng(cfg.seed)
    sched = linear_schedule(cfg.T, cfg.beta0, cfg.betaT)
    if params is None:
        params = TinyDenoiserParams.init(cfg.channels, cfg.emb_dim, cfg.T, rng=rng)
    result = TrainResult(params)
    last_good = params.copy()
    schedule = [1] * cfg.phase1_epochs + [2] * cfg.phase2_epochs
    for epoch, phase in enumerate(schedule):
        pairs = [item.draw_pair(rng, cfg.ratio) for item in dataset]
        order = rng.permutation(len(pairs))
        epoch_losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            acc = None
            total = 0.0
            for b in batch:
                loss, grads = sample_step(params, pairs[b], sched, cfg, phase, rng)
                total += loss
                acc = grads if acc is None else [a + g for a, g in zip(acc, grads)]
            mean_loss = total / len(batch)
            if not np.isfinite(mean_loss):
                raise TrainingDiverged(f"loss became non-finite at epoch {epoch}", last_good, result)
            adam_step(params, [a / len(batch) for a in acc], cfg.lr)
            epoch_losses.append(mean_loss)
        result.losses.append(float(np.mean(epoch_losses)))
        result.phases.append(phase)
        last_good = params.copy()
        if callback is not None:
            callback(epoch, phase, result.losses[-1])
        log.debug("epoch %d phase %d loss %.5f", epoch, phase, result.losses[-1])
    return result
