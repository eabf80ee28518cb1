"""Per-object view collections: generation, disk layout and training pairs."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .grid import GridSpec, OccupancyGrid, PointCloud, anchored_spec, merge_pseudo_gt, select_second_view, \
    union_gain_ok, voxelize
from .render import CameraView
from .synth import Scene, camera_ring, make_scene, mono_depth_surrogate, render_observation, scene_grid


@dataclass
class ObjectData:
    """Every view of one object plus its ground-truth occupancy.

    ``views`` carry the measured silhouette and the (monocular-style) depth
    used as supervision; ``clouds`` are the back-projected sensor points.
    """

    object_id: str
    category: str
    spec: GridSpec
    views: list[CameraView]
    clouds: list[PointCloud]
    gt: OccupancyGrid
    K: int = 1
    scene: Scene | None = None
    _grids: list = field(default_factory=list, repr=False)

    def view_grid(self, i: int) -> OccupancyGrid:
        if not self._grids:
            self._grids = [voxelize(c, self.spec, self.K) for c in self.clouds]
        return self._grids[i]

    def eligible_partners(self, i: int, ratio: float = 0.30) -> list[int]:
        first = self.view_grid(i)
        return [j for j in range(len(self.views)) if j != i and union_gain_ok(first, self.view_grid(j), ratio)]

    def input_grid(self, views) -> OccupancyGrid:
        """Voxelized union of the given views (a single index or a list)."""
        views = [views] if isinstance(views, (int, np.integer)) else list(views)
        pc = self.clouds[views[0]]
        for j in views[1:]:
            pc = merge_pseudo_gt(pc, self.clouds[j])
        return voxelize(pc, self.spec, self.K)

    def draw_pair(self, rng, ratio: float = 0.30):
        """Random input view and a second view that grows occupancy by ``ratio``.

        Returns ``(input grid, pseudo-GT grid, [view_i, view_j])``.
        """
        order = rng.permutation(len(self.views))
        for i in order:
            others = [j for j in range(len(self.views)) if j != i]
            pick = select_second_view(self.view_grid(i), [self.view_grid(j) for j in others], ratio, rng)
            if pick is None:
                continue
            j = others[pick]
            x0 = self.view_grid(i)
            xgt = voxelize(merge_pseudo_gt(self.clouds[i], self.clouds[j]), self.spec, self.K)
            return x0, xgt, [self.views[i], self.views[j]]
        raise ValueError(f"object {self.object_id}: no view pair satisfies the {ratio:.0%} rule")


@dataclass
class StaticPair:
    """A fixed (input, pseudo-GT, views) triple."""

    x0: OccupancyGrid
    xgt: OccupancyGrid
    views: list = field(default_factory=list)

    def draw_pair(self, rng, ratio: float = 0.30):
        return self.x0, self.xgt, self.views


def make_object(object_id: str, category: str, seed, n_views: int = 8, image_size: int = 64,
                dims=(16, 16, 16), voxel_size: float = 1.0 / 16, K: int = 1, noise_sigma: float | None = None,
                dropout_p: float = 0.1, max_points: int = 2048, blur_radius: int = 2, ratio: float = 0.30,
                max_attempts: int = 20) -> ObjectData:
    """Simulate one scanned object.

    The camera ring is regenerated until every view has at least one
    partner passing the occupancy-gain rule.
    """
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    scene_seed, ring_seed, gt_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(3))
    scene = make_scene(category, scene_seed)
    sigma = 0.5 * voxel_size if noise_sigma is None else noise_sigma
    ring_rng = np.random.default_rng(ring_seed)
    for _ in range(max_attempts):
        cams = camera_ring(scene, n_views, image_size, rng=ring_rng)
        obs = [render_observation(scene, c, sigma, dropout_p, rng=ring_rng, max_points=max_points) for c in cams]
        clouds = [o.cloud for o in obs]
        allpts = PointCloud(np.concatenate([c.points for c in clouds]))
        spec = anchored_spec(allpts, dims, voxel_size)
        views = []
        for o in obs:
            cam = o.camera
            mono = mono_depth_surrogate(cam.depth, cam.depth_valid, blur_radius, rng=ring_rng)
            views.append(cam.with_images(cam.silhouette, mono, cam.depth_valid))
        obj = ObjectData(object_id, category, spec, views, clouds, OccupancyGrid.zeros(spec), K, scene)
        if all(obj.eligible_partners(i, ratio) for i in range(n_views)):
            obj.gt = scene_grid(scene, spec, rng=gt_seed)
            return obj
    raise RuntimeError(f"object {object_id}: could not find a camera ring satisfying the {ratio:.0%} rule")


def make_dataset(n_objects: int, categories=("chair",), seed: int = 0, **kwargs) -> list[ObjectData]:
    seeds = np.random.SeedSequence(seed).spawn(n_objects)
    return [make_object(f"obj_{i:04d}", categories[i % len(categories)], seeds[i], **kwargs)
            for i in range(n_objects)]


# -- disk layout -------------------------------------------------------------


def write_object(root, obj: ObjectData):
    d = Path(root) / obj.object_id
    d.mkdir(parents=True, exist_ok=True)
    for k, (cam, pc) in enumerate(zip(obj.views, obj.clouds)):
        io.write_pfm(d / f"view_{k}.pfm", cam.depth, ~np.asarray(cam.depth_valid, dtype=bool))
        io.write_pgm(d / f"view_{k}.pgm", cam.silhouette)
        io.write_camera_json(d / f"view_{k}.json", cam)
        io.write_point_cloud(d / f"view_{k}.ply", pc)
    io.save_grid(str(d / "gt"), obj.gt, extra={"anchor": "bbox-center of all view points", "K": obj.K})


def read_object(root, object_id: str, category: str, n_views: int, K: int = 1) -> ObjectData:
    d = Path(root) / object_id
    views, clouds = [], []
    for k in range(n_views):
        cam = io.read_camera_json(d / f"view_{k}.json")
        depth, valid = io.read_pfm(d / f"view_{k}.pfm")
        sil = io.read_pgm(d / f"view_{k}.pgm")
        views.append(cam.with_images(sil, depth, valid))
        clouds.append(io.read_point_cloud(d / f"view_{k}.ply"))
    gt = io.load_grid(str(d / "gt"))
    return ObjectData(object_id, category, gt.spec, views, clouds, gt, K)


def write_dataset(root, objects, manifest: dict):
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for obj in objects:
        write_object(root, obj)
    entries = [{"id": o.object_id, "category": o.category, "n_views": len(o.views),
                "origin": list(o.spec.origin), "primitives": o.scene.params() if o.scene else None}
               for o in objects]
    full = dict(manifest, objects=entries)
    (root / "manifest.json").write_text(json.dumps(full, indent=2, sort_keys=True) + "\n")


def read_dataset(root) -> tuple[list[ObjectData], dict]:
    root = Path(root)
    manifest = json.loads((root / "manifest.json").read_text())
    K = int(manifest.get("K", 1))
    objs = [read_object(root, e["id"], e["category"], e["n_views"], K) for e in manifest["objects"]]
    return objs, manifest
