"""Conditional occupancy diffusion: schedule, forward noising, masked BCE and sampling.

Only the free region (voxels unoccupied in the input) is diffused.  The
condition region holds the clean binary input values at every step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import ConditionMask, OccupancyGrid

CLAMP = 1e-7
SAMPLER_MODES = ("ddpm-posterior", "paper-eq6")


@dataclass(frozen=True)
class VarianceSchedule:
    """Per-step tables, stored 0-based: ``beta[t - 1]`` is beta_t."""

    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma2: np.ndarray

    @property
    def T(self) -> int:
        return len(self.beta)

    def alpha_bar_at(self, t: int) -> float:
        """alpha_bar_t with the convention alpha_bar_0 = 1."""
        return 1.0 if t == 0 else float(self.alpha_bar[t - 1])


def linear_schedule(T: int, beta0: float = 1e-4, betaT: float = 2e-2) -> VarianceSchedule:
    if T < 1:
        raise ValueError("T must be >= 1")
    if not 0 < beta0 <= betaT:
        raise ValueError("need 0 < beta0 <= betaT")
    if betaT >= 1:
        raise ValueError("betaT must be < 1")
    beta = np.linspace(beta0, betaT, T) if T > 1 else np.array([beta0])
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    return VarianceSchedule(beta, alpha, alpha_bar, beta.copy())


def _check_step(t, sched):
    if not 1 <= t <= sched.T:
        raise ValueError(f"step t={t} outside [1, {sched.T}]")


def q_sample(x0_free, t: int, noise, sched: VarianceSchedule) -> np.ndarray:
    """Closed-form forward process: sqrt(ab_t) * x0 + sqrt(1 - ab_t) * noise."""
    _check_step(t, sched)
    x0_free = np.asarray(x0_free, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != x0_free.shape:
        raise ValueError("noise must match the free-region shape")
    ab = sched.alpha_bar[t - 1]
    return np.sqrt(ab) * x0_free + np.sqrt(1.0 - ab) * noise


def noised_input(target: np.ndarray, mask: ConditionMask, t: int, noise, sched) -> np.ndarray:
    """Full-grid network input at step ``t``: noised free region, clean condition."""
    x = q_sample(target, t, noise, sched)
    x[mask.bits] = 1.0
    return x


def masked_bce_loss(pred, gt, mask: ConditionMask, phase: int = 1):
    """Mean binary cross-entropy and its gradient w.r.t. ``pred``.

    Phase 1 averages over free voxels only; phase 2 over every voxel.
    """
    p = np.asarray(pred.values if isinstance(pred, OccupancyGrid) else pred, dtype=np.float64)
    y = np.asarray(gt.values if isinstance(gt, OccupancyGrid) else gt, dtype=np.float64)
    if p.shape != y.shape or p.shape != mask.bits.shape:
        raise ValueError("prediction, target and mask shapes differ")
    if phase == 1:
        support = ~mask.bits
    elif phase == 2:
        support = np.ones_like(mask.bits)
    else:
        raise ValueError("phase must be 1 or 2")
    n = int(support.sum())
    if n == 0:
        raise ValueError("loss support is empty (every voxel is conditioned)")
    pc = np.clip(p, CLAMP, 1.0 - CLAMP)
    per_voxel = -(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))
    loss = float(per_voxel[support].sum() / n)
    grad = np.where(support, (pc - y) / (pc * (1.0 - pc)) / n, 0.0)
    # the clamp is flat outside its range
    grad[(p < CLAMP) | (p > 1.0 - CLAMP)] = 0.0
    return loss, grad


def reverse_step(x_t, mask: ConditionMask, c0, t: int, x0_pred, sched: VarianceSchedule, z,
                 mode: str = "ddpm-posterior") -> np.ndarray:
    """One ancestral step x_t -> x_{t-1}, then re-impose the condition values.

    ``paper-eq6`` evaluates
    ``(x_t - (1 - a_t) / sqrt(1 - ab_t) * (x_t - x0_pred)) / sqrt(a_t) + sqrt(b_t) z``
    as written.  ``ddpm-posterior`` uses the mean of q(x_{t-1} | x_t, x0_pred)
    with variance ``b_t * (1 - ab_{t-1}) / (1 - ab_t)``.
    """
    _check_step(t, sched)
    x_t = np.asarray(x_t, dtype=np.float64)
    x0_pred = np.asarray(x0_pred, dtype=np.float64)
    z = np.zeros_like(x_t) if z is None else np.asarray(z, dtype=np.float64)
    b = sched.beta[t - 1]
    a = sched.alpha[t - 1]
    ab = sched.alpha_bar_at(t)
    ab_prev = sched.alpha_bar_at(t - 1)
    if mode == "paper-eq6":
        out = (x_t - (1.0 - a) / np.sqrt(1.0 - ab) * (x_t - x0_pred)) / np.sqrt(a) + np.sqrt(b) * z
    elif mode == "ddpm-posterior":
        c_x0 = np.sqrt(ab_prev) * b / (1.0 - ab)
        c_xt = np.sqrt(a) * (1.0 - ab_prev) / (1.0 - ab)
        var = b * (1.0 - ab_prev) / (1.0 - ab)
        out = c_x0 * x0_pred + c_xt * x_t + np.sqrt(var) * z
    else:
        raise ValueError(f"unknown sampler mode {mode!r}")
    out[mask.bits] = np.asarray(c0, dtype=np.float64)[mask.bits]
    return out


def generate(denoiser, x0: OccupancyGrid, mask: ConditionMask, sched: VarianceSchedule,
             rng=None, mode: str = "ddpm-posterior", threshold: float = 0.5) -> OccupancyGrid:
    """Sample a completion of ``x0``; condition voxels never change."""
    rng = np.random.default_rng(rng)
    c0 = x0.values
    cond = mask.bits
    x = rng.standard_normal(c0.shape)
    x[cond] = c0[cond]
    for t in range(sched.T, 0, -1):
        pred = denoiser.predict(x, mask, t)
        z = rng.standard_normal(c0.shape) if t > 1 else None
        x = reverse_step(x, mask, c0, t, pred, sched, z, mode)
        assert np.array_equal(x[cond], c0[cond]), "condition region modified during sampling"
    return OccupancyGrid(x0.spec, (x >= threshold).astype(np.float64))
