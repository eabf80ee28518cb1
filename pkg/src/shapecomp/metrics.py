"""Completion metrics: precision/recall/F1, EMD, Chamfer, UHD, MMD and TMD."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree

from .grid import PointCloud

TAU = 1e-2


def _pts(pc) -> np.ndarray:
    pts = pc.points if isinstance(pc, PointCloud) else np.asarray(pc, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError("expected an (N, 3) point array")
    if len(pts) == 0:
        raise ValueError("metric undefined for an empty point cloud")
    return pts


def nn_dist(src, dst) -> np.ndarray:
    """Distance from every point of ``src`` to its nearest point in ``dst``."""
    return cKDTree(_pts(dst)).query(_pts(src))[0]


def normalize_pair(pred, gt):
    """Scale both clouds by the GT bounding-box longest edge about the GT centroid."""
    p, g = _pts(pred), _pts(gt)
    centroid = g.mean(axis=0)
    scale = float((g.max(axis=0) - g.min(axis=0)).max())
    if scale <= 0:
        scale = 1.0
    return (p - centroid) / scale, (g - centroid) / scale, scale


def f1_from(precision: float, recall: float) -> float:
    s = precision + recall
    return 0.0 if s == 0 else 2.0 * precision * recall / s


def precision_recall_f1(pred, gt, tau: float = TAU):
    precision = float(np.mean(nn_dist(pred, gt) < tau))
    recall = float(np.mean(nn_dist(gt, pred) < tau))
    return precision, recall, f1_from(precision, recall)


def emd_cost(a, b) -> float:
    """Minimum total Euclidean cost over bijections (exact assignment)."""
    a, b = _pts(a), _pts(b)
    if len(a) != len(b):
        raise ValueError(f"EMD needs equal sizes, got {len(a)} and {len(b)}")
    cost = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum())


def emd(a, b, max_exact: int = 512, rng=None) -> float:
    """Mean matched distance x100, after seeded subsampling above ``max_exact`` points."""
    a, b = _pts(a), _pts(b)
    if len(a) != len(b):
        raise ValueError(f"EMD needs equal sizes, got {len(a)} and {len(b)}")
    if len(a) > max_exact:
        rng = np.random.default_rng(rng)
        a = a[rng.choice(len(a), max_exact, replace=False)]
        b = b[rng.choice(len(b), max_exact, replace=False)]
    return 100.0 * emd_cost(a, b) / len(a)


def chamfer(a, b) -> float:
    """Symmetric sum of mean squared nearest-neighbour distances."""
    return float(np.mean(nn_dist(a, b) ** 2) + np.mean(nn_dist(b, a) ** 2))


def uhd(partial, completions) -> float:
    """Mean over completions of the one-sided Hausdorff distance from ``partial``."""
    if len(completions) < 1:
        raise ValueError("need at least one completion")
    return float(np.mean([nn_dist(partial, c).max() for c in completions]))


def f1_matrix(gt_set, generated, tau: float = TAU) -> np.ndarray:
    return np.array([[precision_recall_f1(g, s, tau)[2] for g in generated] for s in gt_set])


def mmd(gt_set, generated, tau: float = TAU) -> float:
    """Mean F1 between each GT shape and its best-F1 generated shape."""
    if not gt_set or not generated:
        raise ValueError("MMD needs non-empty GT and generated sets")
    m = f1_matrix(gt_set, generated, tau)
    best = m.argmax(axis=1)  # first maximum on ties
    return float(m[np.arange(len(gt_set)), best].mean())


def tmd_single(completions) -> float:
    k = len(completions)
    if k < 2:
        raise ValueError("TMD needs at least two completions")
    total = 0.0
    for j in range(k):
        for l in range(j + 1, k):
            total += chamfer(completions[j], completions[l])
    return 2.0 * total / (k - 1)


def tmd(completion_sets) -> float:
    """Mean over partial shapes of the summed per-completion mean Chamfer distance.

    Accepts a list of completions for one shape, or a list of such lists.
    """
    if completion_sets and isinstance(completion_sets[0], (list, tuple)):
        return float(np.mean([tmd_single(c) for c in completion_sets]))
    return tmd_single(completion_sets)


@dataclass
class MetricReport:
    precision: float | None = None
    recall: float | None = None
    f1: float | None = None
    emd: float | None = None
    chamfer: float | None = None
    uhd: float | None = None
    mmd: float | None = None
    tmd: float | None = None
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(completions, gt, partial=None, tau: float = TAU, max_exact: int = 512, seed: int = 0,
             normalize: bool = True) -> MetricReport:
    """All metrics for ``k >= 1`` completions of one object.

    Single-completion metrics (P/R/F1, EMD, Chamfer) use the first
    completion.  Clouds are expressed in the GT-normalized frame first.
    """
    comps = [_pts(c) for c in completions]
    g = _pts(gt)
    part = None if partial is None else _pts(partial)
    scale = 1.0
    if normalize:
        centroid = g.mean(axis=0)
        scale = float((g.max(axis=0) - g.min(axis=0)).max()) or 1.0
        comps = [(c - centroid) / scale for c in comps]
        g = (g - centroid) / scale
        part = None if part is None else (part - centroid) / scale
    p, r, f = precision_recall_f1(comps[0], g, tau)
    n = min(len(comps[0]), len(g), max_exact)
    rng = np.random.default_rng(seed)
    a = comps[0][rng.choice(len(comps[0]), n, replace=False)]
    b = g[rng.choice(len(g), n, replace=False)]
    report = MetricReport(
        precision=p, recall=r, f1=f,
        emd=emd(a, b, max_exact, rng),
        chamfer=chamfer(comps[0], g),
        uhd=uhd(part if part is not None else g, comps),
        mmd=mmd([g], comps, tau),
        tmd=tmd_single(comps) if len(comps) > 1 else 0.0,
        meta={"tau": tau, "k": len(comps), "emd_points": n, "seed": seed, "scale": scale,
              "normalized": normalize, "uhd_source": "partial" if part is not None else "gt"},
    )
    return report
