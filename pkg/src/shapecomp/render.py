"""Differentiable ray marching through occupancy grids.

Pinhole cameras use the OpenCV convention (x right, y down, z forward) with
pixel centers at half-integer coordinates.  Rendering returns a
:class:`RenderedView` that can push image-space gradients back onto the grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import GridSpec, OccupancyGrid

MODES = ("compositing", "paper")
W_MIN = 0.5


@dataclass
class CameraView:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    cam_to_world: np.ndarray
    silhouette: np.ndarray | None = None
    depth: np.ndarray | None = None
    depth_valid: np.ndarray | None = None

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        pose = np.asarray(self.cam_to_world, dtype=np.float64).reshape(4, 4)
        rot = pose[:3, :3]
        if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-6) or np.linalg.det(rot) < 0:
            raise ValueError("cam_to_world rotation is not orthonormal")
        self.cam_to_world = pose
        self.width, self.height = int(self.width), int(self.height)

    @property
    def center(self) -> np.ndarray:
        return self.cam_to_world[:3, 3].copy()

    def to_json(self) -> dict:
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
            "cam_to_world": [float(v) for v in self.cam_to_world.ravel()],
        }

    @classmethod
    def from_json(cls, d: dict) -> "CameraView":
        return cls(d["fx"], d["fy"], d["cx"], d["cy"], d["width"], d["height"],
                   np.asarray(d["cam_to_world"], dtype=np.float64).reshape(4, 4))

    def with_images(self, silhouette=None, depth=None, depth_valid=None) -> "CameraView":
        return CameraView(self.fx, self.fy, self.cx, self.cy, self.width, self.height,
                          self.cam_to_world, silhouette, depth, depth_valid)


def look_at(eye, target=(0.0, 0.0, 0.0), up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """cam_to_world pose for a camera at ``eye`` looking at ``target``."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, up)
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(fwd, (0.0, 1.0, 0.0))
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    pose = np.eye(4)
    pose[:3, 0], pose[:3, 1], pose[:3, 2], pose[:3, 3] = right, down, fwd, eye
    return pose


def generate_rays(cam: CameraView, pixels=None):
    """World-space origins and unit directions.

    ``pixels`` optionally selects flat pixel indices (row-major); by default
    every pixel is returned, shaped ``(height, width, 3)``.
    """
    if pixels is None:
        v, u = np.meshgrid(np.arange(cam.height), np.arange(cam.width), indexing="ij")
    else:
        v, u = np.divmod(np.asarray(pixels), cam.width)
    d = np.stack([(u + 0.5 - cam.cx) / cam.fx, (v + 0.5 - cam.cy) / cam.fy, np.ones(u.shape)], axis=-1)
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    dirs = d @ cam.cam_to_world[:3, :3].T
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    origins = np.broadcast_to(cam.center, dirs.shape).copy()
    return origins, dirs


def ray_box(origins, dirs, lo, hi):
    """Slab-test entry/exit distances; ``near >= far`` means a miss."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t0 = (lo - origins) * inv
        t1 = (hi - origins) * inv
    tmin = np.nan_to_num(np.minimum(t0, t1), nan=-np.inf)
    tmax = np.nan_to_num(np.maximum(t0, t1), nan=np.inf)
    near = np.maximum(tmin.max(axis=-1), 0.0)
    far = tmax.min(axis=-1)
    return near, far


def trilinear_weights(spec: GridSpec, pts):
    """Corner flat indices ``(N, 8)``, weights ``(N, 8)`` for voxel-center interpolation.

    Points outside the hull of the voxel centers get zero weights.
    """
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    dims = np.asarray(spec.dims)
    u = (pts - np.asarray(spec.origin)) / spec.voxel_size - 0.5
    inside = np.all((u >= 0.0) & (u <= dims - 1), axis=1)
    i0 = np.clip(np.floor(u), 0, np.maximum(dims - 2, 0)).astype(np.int64)
    f = np.where(dims > 1, u - i0, 0.0)
    i1 = np.minimum(i0 + 1, dims - 1)
    idx = np.empty((len(pts), 8), dtype=np.int64)
    w = np.empty((len(pts), 8))
    k = 0
    for cz in (0, 1):
        for cy in (0, 1):
            for cx in (0, 1):
                ix = np.where(cx, i1[:, 0], i0[:, 0])
                iy = np.where(cy, i1[:, 1], i0[:, 1])
                iz = np.where(cz, i1[:, 2], i0[:, 2])
                idx[:, k] = ix + dims[0] * (iy + dims[1] * iz)
                w[:, k] = ((f[:, 0] if cx else 1 - f[:, 0])
                           * (f[:, 1] if cy else 1 - f[:, 1])
                           * (f[:, 2] if cz else 1 - f[:, 2]))
                k += 1
    w[~inside] = 0.0
    return idx, w


def trilinear(grid: OccupancyGrid, p) -> np.ndarray | float:
    p = np.asarray(p, dtype=np.float64)
    idx, w = trilinear_weights(grid.spec, p)
    vals = (grid.flat()[idx] * w).sum(axis=1)
    return float(vals[0]) if p.ndim == 1 else vals.reshape(p.shape[:-1])


@dataclass
class RaySamples:
    origins: np.ndarray
    dirs: np.ndarray
    t_vals: np.ndarray  # (R, M)
    deltas: np.ndarray  # (R, M)
    hit: np.ndarray  # (R,) ray intersects the grid box


def sample_rays(spec: GridSpec, origins, dirs, M: int, near=None, far=None) -> RaySamples:
    if M < 2:
        raise ValueError("need at least two samples per ray")
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    if near is None or far is None:
        lo, hi = spec.bounds()
        near, far = ray_box(origins, dirs, lo, hi)
        hit = far > near
    else:
        if np.any(np.asarray(near) >= np.asarray(far)):
            raise ValueError("near bound must be smaller than far bound")
        near = np.broadcast_to(np.asarray(near, dtype=np.float64), (len(origins),))
        far = np.broadcast_to(np.asarray(far, dtype=np.float64), (len(origins),))
        hit = np.ones(len(origins), dtype=bool)
    span = np.where(hit, far - near, 1.0)
    step = span / M
    t_vals = np.where(hit, near, 0.0)[:, None] + (np.arange(M) + 0.5)[None, :] * step[:, None]
    deltas = np.broadcast_to(step[:, None], t_vals.shape).copy()
    return RaySamples(origins, dirs, t_vals, deltas, hit)


def composite(o, deltas, mode: str):
    """Transmittance ``T`` (R, M) and sample weights ``T * o``."""
    if mode == "compositing":
        trans = np.cumprod(np.concatenate([np.ones((o.shape[0], 1)), 1.0 - o[:, :-1]], axis=1), axis=1)
    elif mode == "paper":
        acc = np.cumsum(o * deltas, axis=1)
        trans = np.exp(-np.concatenate([np.zeros((o.shape[0], 1)), acc[:, :-1]], axis=1))
    else:
        raise ValueError(f"unknown render mode {mode!r}")
    return trans, trans * o


class RenderedView:
    """Silhouette, depth and accumulated weight for a batch of rays.

    ``silhouette`` and ``weight`` are the same quantity (sum of T_i * o_i).
    """

    def __init__(self, spec, samples: RaySamples, occ, idx, w, mode, shape):
        self.spec, self.samples, self.mode, self.shape = spec, samples, mode, shape
        self._occ, self._idx, self._w = occ, idx, w
        self.transmittance, weights = composite(occ, samples.deltas, mode)
        sil = weights.sum(axis=1)
        if mode == "compositing":
            # the weights telescope to 1 - prod(1 - o); summing can overshoot by an ulp
            np.minimum(sil, 1.0, out=sil)
        dep = (weights * samples.t_vals).sum(axis=1)
        sil[~samples.hit] = 0.0
        dep[~samples.hit] = 0.0
        self.silhouette = sil.reshape(shape)
        self.depth = dep.reshape(shape)
        self.weight = self.silhouette

    def _d_occ(self, v):
        """d(sum_i T_i o_i v_i) / d o_k for every sample."""
        o, T = self._occ, self.transmittance
        if self.mode == "compositing":
            suffix = np.zeros_like(o)
            for k in range(o.shape[1] - 2, -1, -1):
                suffix[:, k] = o[:, k + 1] * v[:, k + 1] + (1.0 - o[:, k + 1]) * suffix[:, k + 1]
            return T * (v - suffix)
        tov = T * o * v
        after = np.cumsum(tov[:, ::-1], axis=1)[:, ::-1] - tov
        return T * v - self.samples.deltas * after

    def backward(self, d_silhouette=None, d_depth=None) -> np.ndarray:
        """Gradient w.r.t. grid values (shape ``spec.dims``) given image-space gradients."""
        g_occ = np.zeros_like(self._occ)
        hit = self.samples.hit[:, None]
        if d_silhouette is not None:
            gs = np.asarray(d_silhouette, dtype=np.float64).reshape(-1, 1)
            g_occ += gs * self._d_occ(np.ones_like(self._occ))
        if d_depth is not None:
            gd = np.asarray(d_depth, dtype=np.float64).reshape(-1, 1)
            g_occ += gd * self._d_occ(self.samples.t_vals)
        g_occ = np.where(hit, g_occ, 0.0)
        contrib = (g_occ.reshape(-1, 1) * self._w).ravel()
        flat = np.bincount(self._idx.ravel(), weights=contrib, minlength=self.spec.size)
        return flat.reshape(self.spec.dims, order="F")


def render_rays(grid: OccupancyGrid, origins, dirs, M: int = 64, mode: str = "compositing",
                near=None, far=None) -> RenderedView:
    if mode not in MODES:
        raise ValueError(f"unknown render mode {mode!r}")
    shape = np.shape(origins)[:-1]
    samples = sample_rays(grid.spec, origins, dirs, M, near, far)
    pts = samples.origins[:, None, :] + samples.t_vals[..., None] * samples.dirs[:, None, :]
    idx, w = trilinear_weights(grid.spec, pts.reshape(-1, 3))
    occ = (grid.flat()[idx] * w).sum(axis=1).reshape(samples.t_vals.shape)
    return RenderedView(grid.spec, samples, occ, idx, w, mode, shape)


def render_view(grid: OccupancyGrid, cam: CameraView, M: int = 64, mode: str = "compositing",
                pixels=None) -> RenderedView:
    origins, dirs = generate_rays(cam, pixels)
    return render_rays(grid, origins, dirs, M, mode)


def render_silhouette(grid: OccupancyGrid, cam: CameraView, M: int = 64, mode: str = "compositing") -> np.ndarray:
    return render_view(grid, cam, M, mode).silhouette


def render_depth(grid: OccupancyGrid, cam: CameraView, M: int = 64, mode: str = "compositing"):
    r = render_view(grid, cam, M, mode)
    return r.depth, r.weight


# -- losses -----------------------------------------------------------------


def silhouette_loss(rendered, measured, return_grad: bool = False):
    """Mean over views of the per-pixel mean absolute silhouette error."""
    if len(rendered) != len(measured) or not rendered:
        raise ValueError("need one measured silhouette per rendered view (V >= 1)")
    V = len(rendered)
    total, grads = 0.0, []
    for s_hat, s in zip(rendered, measured):
        s_hat, s = np.asarray(s_hat, dtype=np.float64), np.asarray(s, dtype=np.float64)
        if s_hat.shape != s.shape:
            raise ValueError(f"silhouette size mismatch {s_hat.shape} vs {s.shape}")
        diff = s_hat - s
        total += np.abs(diff).mean()
        grads.append(np.sign(diff) / (diff.size * V))
    loss = total / V
    return (loss, grads) if return_grad else loss


def depth_align(d_hat, d, valid=None):
    """Least-squares scale/shift ``(w, q)`` with ``w * d_hat + q ~ d``.

    Returns ``(w, q, degenerate)``; a constant ``d_hat`` yields ``(0, mean d, True)``.
    """
    d_hat = np.asarray(d_hat, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    valid = np.ones(d.shape, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    x, y = d_hat[valid], d[valid]
    if x.size == 0:
        return 0.0, 0.0, True
    mx, my = x.mean(), y.mean()
    var = ((x - mx) ** 2).sum()
    if x.size < 2 or var <= 1e-12 * max(1.0, (x ** 2).sum()):
        return 0.0, float(my), True
    w = ((x - mx) * (y - my)).sum() / var
    return float(w), float(my - w * mx), False


@dataclass
class DepthLossResult:
    loss: float
    grads: list
    per_view: list
    empty_views: int


def depth_loss(rendered, measured, w_min: float = W_MIN) -> DepthLossResult:
    """Scale-invariant L1 depth loss averaged over views.

    ``rendered`` holds ``(depth, weight)`` pairs, ``measured`` holds
    ``(depth, valid)`` pairs.  Pixels take part when the measurement is valid
    and the rendered weight reaches ``w_min``.  The returned gradients (w.r.t.
    each rendered depth) include the dependence of the alignment on it.
    """
    if len(rendered) != len(measured) or not rendered:
        raise ValueError("need one measured depth per rendered view (V >= 1)")
    V = len(rendered)
    total, grads, per_view, empty = 0.0, [], [], 0
    for (d_hat, weight), (d, d_valid) in zip(rendered, measured):
        d_hat = np.asarray(d_hat, dtype=np.float64)
        d = np.asarray(d, dtype=np.float64)
        valid = np.asarray(d_valid, dtype=bool) & (np.asarray(weight) >= w_min)
        g = np.zeros_like(d_hat)
        n = int(valid.sum())
        if n == 0:
            empty += 1
            grads.append(g)
            per_view.append(0.0)
            continue
        w, q, degenerate = depth_align(d_hat, d, valid)
        x, y = d_hat[valid], d[valid]
        r = w * x + q - y
        lv = float(np.abs(r).mean())
        s = np.sign(r)
        if degenerate:
            gx = s * w / n
        else:
            mx, my = x.mean(), y.mean()
            var = ((x - mx) ** 2).sum()
            dw = ((y - my) - 2.0 * w * (x - mx)) / var
            gx = (s * w + dw * ((s * x).sum() - s.sum() * mx) - s.sum() * w / n) / n
        g[valid] = gx / V
        grads.append(g)
        per_view.append(lv)
        total += lv
    return DepthLossResult(total / V, grads, per_view, empty)
