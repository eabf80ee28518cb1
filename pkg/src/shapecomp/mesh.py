"""Isosurface extraction from occupancy grids and surface point sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from skimage import measure

from .grid import OccupancyGrid, PointCloud


@dataclass
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)):
            raise ValueError("triangle index out of range")

    def __len__(self):
        return len(self.triangles)

    def areas(self) -> np.ndarray:
        a, b, c = (self.vertices[self.triangles[:, k]] for k in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def euler_characteristic(self) -> int:
        edges = np.sort(self.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        n_edges = len(np.unique(edges, axis=0))
        n_verts = len(np.unique(self.triangles))
        return n_verts - n_edges + len(self.triangles)

    def edge_use_counts(self) -> np.ndarray:
        edges = np.sort(self.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        return np.unique(edges, axis=0, return_counts=True)[1]


def marching_cubes(grid: OccupancyGrid, iso: float = 0.5) -> TriangleMesh:
    """Triangle mesh of the ``iso`` level set of the voxel-center field.

    The grid is padded with one layer of zeros so shapes touching the border
    still close.  Normals point from occupied to free space.  Zero-area
    triangles are dropped.
    """
    if not 0.0 < iso < 1.0:
        raise ValueError("iso level must lie in (0, 1)")
    vals = np.pad(grid.values, 1)
    if vals.max() <= iso or vals.min() >= iso:
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    # the classic table keeps every vertex on a cube edge (exactly on the iso-set)
    verts, faces, _, _ = measure.marching_cubes(vals, level=iso, method="lorensen", allow_degenerate=False)
    faces = faces[:, ::-1]  # counter-clockwise seen from the free side
    # padded index i sits at the center of voxel i - 1
    verts = np.asarray(grid.spec.origin) + (verts - 0.5) * grid.spec.voxel_size
    mesh = TriangleMesh(verts, faces)
    keep = mesh.areas() > 1e-12
    return TriangleMesh(verts, faces[keep])


def sample_surface(mesh: TriangleMesh, n: int, rng=None) -> PointCloud:
    """``n`` points, triangles drawn proportionally to area, uniform inside each."""
    if len(mesh) == 0:
        raise ValueError("cannot sample an empty mesh")
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(rng)
    areas = mesh.areas()
    tri = rng.choice(len(areas), size=n, p=areas / areas.sum())
    r1, r2 = rng.random(n), rng.random(n)
    s = np.sqrt(r1)
    bary = np.stack([1.0 - s, s * (1.0 - r2), s * r2], axis=1)
    corners = mesh.vertices[mesh.triangles[tri]]
    return PointCloud(np.einsum("nk,nkd->nd", bary, corners))


def grid_to_points(grid: OccupancyGrid, n: int = 16384, rng=None, iso: float = 0.5) -> PointCloud:
    """Evaluation path: marching cubes, then area-weighted surface samples."""
    return sample_surface(marching_cubes(grid, iso), n, rng)
