"""Procedural scans: SDF furniture, simulated depth cameras and partial clouds.

World frame is z-up, metres.  Objects are centred on the origin and fit in
the unit cube.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .grid import GridSpec, PointCloud, voxelize
from .render import CameraView, generate_rays, look_at

CATEGORIES = ("chair", "table", "lamp")


# -- primitives ---------------------------------------------------------------


@dataclass(frozen=True)
class Box:
    center: tuple
    half: tuple

    def sdf(self, p):
        q = np.abs(p - np.asarray(self.center)) - np.asarray(self.half)
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        return outside + np.minimum(q.max(axis=-1), 0.0)

    def bounds(self):
        c, h = np.asarray(self.center), np.asarray(self.half)
        return c - h, c + h

    def area(self):
        hx, hy, hz = self.half
        return 8.0 * (hx * hy + hy * hz + hx * hz)

    def sample(self, n, rng):
        c, h = np.asarray(self.center), np.asarray(self.half)
        faces = np.array([h[1] * h[2], h[1] * h[2], h[0] * h[2], h[0] * h[2], h[0] * h[1], h[0] * h[1]])
        f = rng.choice(6, size=n, p=faces / faces.sum())
        u = rng.uniform(-1.0, 1.0, size=(n, 3))
        axis, sign = f // 2, np.where(f % 2, 1.0, -1.0)
        u[np.arange(n), axis] = sign
        return c + u * h


@dataclass(frozen=True)
class Cylinder:
    """Vertical (z-axis) capped cylinder."""

    center: tuple
    radius: float
    half_height: float

    def sdf(self, p):
        d = p - np.asarray(self.center)
        radial = np.hypot(d[..., 0], d[..., 1]) - self.radius
        axial = np.abs(d[..., 2]) - self.half_height
        q = np.stack([radial, axial], axis=-1)
        return np.linalg.norm(np.maximum(q, 0.0), axis=-1) + np.minimum(q.max(axis=-1), 0.0)

    def bounds(self):
        c = np.asarray(self.center)
        h = np.array([self.radius, self.radius, self.half_height])
        return c - h, c + h

    def area(self):
        r, hh = self.radius, self.half_height
        return 2 * np.pi * r * 2 * hh + 2 * np.pi * r * r

    def sample(self, n, rng):
        r, hh = self.radius, self.half_height
        side = 2 * np.pi * r * 2 * hh
        cap = np.pi * r * r
        kind = rng.choice(3, size=n, p=np.array([side, cap, cap]) / (side + 2 * cap))
        theta = rng.uniform(0, 2 * np.pi, n)
        rad = np.where(kind == 0, r, r * np.sqrt(rng.uniform(0, 1, n)))
        z = np.where(kind == 0, rng.uniform(-hh, hh, n), np.where(kind == 1, -hh, hh))
        return np.asarray(self.center) + np.stack([rad * np.cos(theta), rad * np.sin(theta), z], axis=-1)


@dataclass
class Scene:
    """Union of primitives (min-combined SDF)."""

    primitives: list
    category: str
    seed: int | None = None

    def sdf(self, p):
        p = np.asarray(p, dtype=np.float64)
        return np.min([prim.sdf(p) for prim in self.primitives], axis=0)

    def bounds(self):
        los, his = zip(*(prim.bounds() for prim in self.primitives))
        return np.min(los, axis=0), np.max(his, axis=0)

    def extent(self) -> float:
        lo, hi = self.bounds()
        return float((hi - lo).max())

    def surface_points(self, n: int, rng=None) -> np.ndarray:
        """Uniform-ish samples on the outer surface of the union."""
        rng = np.random.default_rng(rng)
        areas = np.array([prim.area() for prim in self.primitives])
        out = []
        need = n
        while need > 0:
            m = max(2 * need, 256)
            counts = rng.multinomial(m, areas / areas.sum())
            pts = np.concatenate([prim.sample(c, rng) for prim, c in zip(self.primitives, counts)])
            # drop samples buried inside another primitive
            pts = pts[self.sdf(pts) > -1e-9]
            rng.shuffle(pts)
            out.append(pts[:need])
            need -= len(out[-1])
        return np.concatenate(out)[:n]

    def params(self) -> list[dict]:
        out = []
        for prim in self.primitives:
            d = {"type": type(prim).__name__.lower(), "center": [float(v) for v in prim.center]}
            if isinstance(prim, Box):
                d["half"] = [float(v) for v in prim.half]
            else:
                d["radius"], d["half_height"] = float(prim.radius), float(prim.half_height)
            out.append(d)
        return out


def _recentre(prims):
    los, his = zip(*(p.bounds() for p in prims))
    c = 0.5 * (np.min(los, axis=0) + np.max(his, axis=0))
    moved = []
    for p in prims:
        if isinstance(p, Box):
            moved.append(Box(tuple(np.asarray(p.center) - c), p.half))
        else:
            moved.append(Cylinder(tuple(np.asarray(p.center) - c), p.radius, p.half_height))
    return moved


def make_scene(category: str, rng=None) -> Scene:
    """Random chair (6 boxes), table (5 boxes) or lamp (3 cylinders)."""
    if category not in CATEGORIES:
        raise ValueError(f"unknown category {category!r}; expected one of {CATEGORIES}")
    seed = rng if isinstance(rng, (int, np.integer)) else None
    rng = np.random.default_rng(rng)
    u = rng.uniform
    if category == "chair":
        w, d = u(0.40, 0.55), u(0.40, 0.52)
        leg_h, seat_t = u(0.30, 0.38), u(0.05, 0.08)
        back_h, back_t, leg = u(0.30, 0.40), u(0.05, 0.08), u(0.025, 0.04)
        seat_z = leg_h + seat_t / 2
        prims = [Box((0, 0, seat_z), (w / 2, d / 2, seat_t / 2)),
                 Box((0, d / 2 - back_t / 2, leg_h + seat_t + back_h / 2), (w / 2, back_t / 2, back_h / 2))]
        for sx in (-1, 1):
            for sy in (-1, 1):
                prims.append(Box((sx * (w / 2 - leg), sy * (d / 2 - leg), leg_h / 2), (leg, leg, leg_h / 2)))
    elif category == "table":
        w, d = u(0.60, 0.80), u(0.45, 0.65)
        leg_h, top_t, leg = u(0.40, 0.55), u(0.04, 0.07), u(0.03, 0.045)
        prims = [Box((0, 0, leg_h + top_t / 2), (w / 2, d / 2, top_t / 2))]
        for sx in (-1, 1):
            for sy in (-1, 1):
                prims.append(Box((sx * (w / 2 - leg), sy * (d / 2 - leg), leg_h / 2), (leg, leg, leg_h / 2)))
    else:
        base_r, base_h = u(0.12, 0.18), u(0.03, 0.05)
        pole_r, pole_h = u(0.02, 0.035), u(0.35, 0.50)
        shade_r, shade_h = u(0.14, 0.22), u(0.15, 0.22)
        prims = [Cylinder((0, 0, base_h / 2), base_r, base_h / 2),
                 Cylinder((0, 0, base_h + pole_h / 2), pole_r, pole_h / 2),
                 Cylinder((0, 0, base_h + pole_h + shade_h / 2), shade_r, shade_h / 2)]
    return Scene(_recentre(prims), category, None if seed is None else int(seed))


# -- cameras and sensing ------------------------------------------------------


def camera_ring(scene: Scene, n_views: int = 8, size: int = 64, fov_deg: float = 40.0,
                radius_factor: float = 2.5, elev_range=(-15.0, 45.0), rng=None) -> list[CameraView]:
    """Cameras evenly spaced in azimuth around the object with jittered elevation."""
    rng = np.random.default_rng(rng)
    radius = radius_factor * scene.extent()
    f = 0.5 * size / np.tan(np.radians(fov_deg) / 2)
    az0 = rng.uniform(0, 2 * np.pi)
    cams = []
    for k in range(n_views):
        az = az0 + 2 * np.pi * k / n_views + rng.uniform(-0.2, 0.2)
        el = np.radians(rng.uniform(*elev_range))
        eye = radius * np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
        cams.append(CameraView(f, f, size / 2, size / 2, size, size, look_at(eye)))
    return cams


def sphere_trace(sdf, origins, dirs, t_max: float, eps: float = 1e-6, max_iter: int = 256):
    """Distances to the first surface hit and a hit mask."""
    t = np.zeros(len(origins))
    active = np.ones(len(origins), dtype=bool)
    hit = np.zeros(len(origins), dtype=bool)
    for _ in range(max_iter):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        d = sdf(origins[idx] + t[idx, None] * dirs[idx])
        done = d < eps
        hit[idx[done]] = True
        t[idx] += np.where(done, 0.0, d)
        active[idx[done | (t[idx] > t_max)]] = False
    return t, hit


@dataclass
class Observation:
    camera: CameraView
    cloud: PointCloud
    noise_sigma: float
    dropout_p: float
    clean_depth: np.ndarray = field(repr=False, default=None)


def backproject(depth, silhouette, cam: CameraView, valid=None) -> PointCloud:
    """World points ``origin + D * direction`` for object pixels with valid depth."""
    depth = np.asarray(depth, dtype=np.float64)
    use = np.asarray(silhouette) > 0.5
    if valid is not None:
        use &= np.asarray(valid, dtype=bool)
    pix = np.flatnonzero(use.ravel())
    if len(pix) == 0:
        return PointCloud(np.zeros((0, 3)))
    origins, dirs = generate_rays(cam, pix)
    return PointCloud(origins + depth.ravel()[pix, None] * dirs)


def render_observation(scene: Scene, cam: CameraView, noise_sigma: float = 0.0, dropout_p: float = 0.0,
                       rng=None, max_points: int | None = None) -> Observation:
    """Simulated depth-camera frame: silhouette, noisy depth and its point cloud."""
    rng = np.random.default_rng(rng)
    origins, dirs = generate_rays(cam)
    origins, dirs = origins.reshape(-1, 3), dirs.reshape(-1, 3)
    t_max = np.linalg.norm(cam.center) + 2.0 * scene.extent()
    t, hit = sphere_trace(scene.sdf, origins, dirs, t_max)
    shape = (cam.height, cam.width)
    sil = hit.reshape(shape).astype(np.float64)
    clean = np.where(hit, t, 0.0).reshape(shape)
    noisy = clean + (rng.normal(0.0, noise_sigma, shape) if noise_sigma > 0 else 0.0)
    keep = hit.reshape(shape) & (rng.random(shape) >= dropout_p)
    depth = np.where(keep, noisy, 0.0)
    cam = cam.with_images(sil, depth, keep)
    cloud = backproject(depth, sil, cam, keep)
    if max_points is not None and len(cloud) > max_points:
        sel = np.sort(rng.choice(len(cloud), max_points, replace=False))
        cloud = PointCloud(cloud.points[sel])
    return Observation(cam, cloud, noise_sigma, dropout_p, clean)


def mono_depth_surrogate(depth, valid=None, blur_radius: int = 2, a: float | None = None,
                         b: float | None = None, rng=None) -> np.ndarray:
    """Smooth, affinely distorted depth standing in for a monocular estimate.

    The box blur only averages valid pixels.  ``a``/``b`` default to a random
    scale in [0.5, 2] and shift in [-0.5, 0.5].
    """
    rng = np.random.default_rng(rng)
    a = rng.uniform(0.5, 2.0) if a is None else a
    b = rng.uniform(-0.5, 0.5) if b is None else b
    if a == 0:
        raise ValueError("scale a must be non-zero")
    depth = np.asarray(depth, dtype=np.float64)
    valid = np.ones(depth.shape, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    if blur_radius > 0:
        size = 2 * blur_radius + 1
        num = ndimage.uniform_filter(np.where(valid, depth, 0.0), size, mode="nearest")
        den = ndimage.uniform_filter(valid.astype(np.float64), size, mode="nearest")
        smooth = np.where(den > 0, num / np.maximum(den, 1e-12), 0.0)
    else:
        smooth = depth
    return np.where(valid, a * smooth + b, 0.0)


def crop_furthest(pc: PointCloud, viewpoint, n: int) -> PointCloud:
    """Drop the ``n`` points furthest from ``viewpoint``; on ties the earlier point stays."""
    if not 0 <= n <= len(pc):
        raise ValueError(f"cannot remove {n} of {len(pc)} points")
    if n == 0:
        return PointCloud(pc.points.copy(), pc.frame)
    dist = np.linalg.norm(pc.points - np.asarray(viewpoint, dtype=np.float64), axis=1)
    # descending distance, later index first among equals
    order = np.lexsort((-np.arange(len(dist)), -dist))
    keep = np.ones(len(pc), dtype=bool)
    keep[order[:n]] = False
    return PointCloud(pc.points[keep], pc.frame)


def scene_grid(scene: Scene, spec: GridSpec, n_points: int = 200_000, rng=None):
    """Ground-truth occupancy: voxels crossed by the object's surface."""
    return voxelize(PointCloud(scene.surface_points(n_points, rng)), spec, K=1)


def total_variation(img, valid=None) -> float:
    img = np.asarray(img, dtype=np.float64)
    valid = np.ones(img.shape, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    dx = np.abs(np.diff(img, axis=1))[valid[:, 1:] & valid[:, :-1]]
    dy = np.abs(np.diff(img, axis=0))[valid[1:, :] & valid[:-1, :]]
    return float(dx.sum() + dy.sum())
