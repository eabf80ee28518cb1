"""Point clouds, dense occupancy grids and the input/target construction.

Grids are stored as numpy arrays of shape ``(nx, ny, nz)`` indexed
``[ix, iy, iz]``.  The flat (serialized) order is x-fastest, i.e. flat index
``ix + nx * (iy + ny * iz)``, which is ``ravel(order="F")``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

FRAMES = ("world", "camera")


@dataclass
class PointCloud:
    points: np.ndarray
    frame: str = "world"

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must have shape (N, 3), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite coordinates")
        if self.frame not in FRAMES:
            raise ValueError(f"unknown frame {self.frame!r}")
        self.points = pts

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True)
class GridSpec:
    dims: tuple[int, int, int] = (16, 16, 16)
    voxel_size: float = 1.0 / 16
    origin: tuple[float, float, float] = (-0.5, -0.5, -0.5)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or min(dims) < 1:
            raise ValueError(f"grid dims must be three positive ints, got {self.dims}")
        if not self.voxel_size > 0:
            raise ValueError("voxel_size must be positive")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "voxel_size", float(self.voxel_size))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))

    @property
    def size(self) -> int:
        return int(np.prod(self.dims))

    @property
    def extent(self) -> np.ndarray:
        return np.asarray(self.dims, dtype=np.float64) * self.voxel_size

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.asarray(self.origin)
        return lo, lo + self.extent

    def voxel_centers(self) -> np.ndarray:
        """World coordinates of all voxel centers, shape ``dims + (3,)``."""
        axes = [self.origin[a] + (np.arange(self.dims[a]) + 0.5) * self.voxel_size for a in range(3)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def flat_index(self, ijk: np.ndarray) -> np.ndarray:
        ijk = np.asarray(ijk)
        nx, ny, _ = self.dims
        return ijk[..., 0] + nx * (ijk[..., 1] + ny * ijk[..., 2])

    @classmethod
    def centered(cls, center, dims=(16, 16, 16), voxel_size=1.0 / 16) -> "GridSpec":
        """Grid of the given size whose center sits at ``center``."""
        dims = tuple(int(d) for d in dims)
        origin = np.asarray(center, dtype=np.float64) - 0.5 * np.asarray(dims) * voxel_size
        return cls(dims, voxel_size, tuple(origin))

    @classmethod
    def paper(cls, center=(0.0, 0.0, 0.0)) -> "GridSpec":
        """64^3 grid with 2.5 cm voxels."""
        return cls.centered(center, (64, 64, 64), 0.025)


def anchored_spec(pc: PointCloud, dims=(16, 16, 16), voxel_size=1.0 / 16) -> GridSpec:
    """Center a grid on the bounding-box center of ``pc``."""
    if len(pc) == 0:
        return GridSpec.centered((0.0, 0.0, 0.0), dims, voxel_size)
    lo, hi = pc.points.min(axis=0), pc.points.max(axis=0)
    return GridSpec.centered(0.5 * (lo + hi), dims, voxel_size)


@dataclass
class OccupancyGrid:
    spec: GridSpec
    values: np.ndarray
    noised: bool = False

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.shape != self.spec.dims:
            if vals.size != self.spec.size:
                raise ValueError(f"grid has {vals.size} values, spec needs {self.spec.size}")
            vals = vals.reshape(self.spec.dims, order="F")
        if not self.noised:
            if not np.all(np.isfinite(vals)) or vals.min(initial=0.0) < 0.0 or vals.max(initial=0.0) > 1.0:
                raise ValueError("occupancy values must lie in [0, 1] (set noised=True for real-valued fields)")
        self.values = vals

    @classmethod
    def zeros(cls, spec: GridSpec) -> "OccupancyGrid":
        return cls(spec, np.zeros(spec.dims))

    def is_binary(self) -> bool:
        return bool(np.all((self.values == 0.0) | (self.values == 1.0)))

    def occupied(self) -> np.ndarray:
        return self.values >= 0.5

    def count(self) -> int:
        return int(np.count_nonzero(self.values >= 0.5))

    def flat(self) -> np.ndarray:
        return self.values.ravel(order="F")


@dataclass
class ConditionMask:
    spec: GridSpec
    bits: np.ndarray = field(repr=False)

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        if bits.shape != self.spec.dims:
            if bits.size != self.spec.size:
                raise ValueError("mask size does not match its grid spec")
            bits = bits.reshape(self.spec.dims, order="F")
        self.bits = bits

    def count(self) -> int:
        return int(self.bits.sum())


def voxelize(pc: PointCloud, spec: GridSpec, K: int = 1) -> OccupancyGrid:
    """Binary grid: a voxel is occupied when at least ``K`` points fall in it.

    Cells are half-open ``[lo, lo + voxel_size)``; points outside are dropped.
    """
    if K < 1:
        raise ValueError("voxelization threshold K must be >= 1")
    if pc.frame != "world":
        raise ValueError("voxelize expects a world-frame point cloud")
    pts = pc.points
    if len(pts) == 0:
        return OccupancyGrid.zeros(spec)
    ijk = np.floor((pts - np.asarray(spec.origin)) / spec.voxel_size).astype(np.int64)
    inside = np.all((ijk >= 0) & (ijk < np.asarray(spec.dims)), axis=1)
    counts = np.bincount(spec.flat_index(ijk[inside]), minlength=spec.size)
    vals = (counts >= K).astype(np.float64)
    return OccupancyGrid(spec, vals.reshape(spec.dims, order="F"))


def condition_split(x0: OccupancyGrid) -> ConditionMask:
    """Condition region = occupied input voxels; everything else is free."""
    if not x0.is_binary():
        raise ValueError("condition_split needs a binary grid")
    return ConditionMask(x0.spec, x0.values == 1.0)


def merge_pseudo_gt(pc1: PointCloud, pc2: PointCloud) -> PointCloud:
    if pc1.frame != pc2.frame:
        raise ValueError(f"cannot merge clouds in frames {pc1.frame!r} and {pc2.frame!r}")
    return PointCloud(np.concatenate([pc1.points, pc2.points], axis=0), pc1.frame)


def union_gain_ok(first: OccupancyGrid, cand: OccupancyGrid, ratio: float) -> bool:
    base = first.count()
    union = int(np.count_nonzero(first.occupied() | cand.occupied()))
    if base == 0:
        return union > 0
    return union >= (1.0 + ratio) * base


def select_second_view(first: OccupancyGrid, candidates, ratio: float = 0.30, rng=None):
    """Pick a random candidate whose union with ``first`` grows occupancy by ``ratio``.

    Returns the candidate index, or ``None`` when nothing qualifies.  With an
    empty first view any non-empty candidate qualifies.
    """
    if not first.is_binary():
        raise ValueError("first view grid must be binary")
    for c in candidates:
        if c.spec != first.spec:
            raise ValueError("all grids must share one GridSpec")
    rng = np.random.default_rng(rng)
    eligible = [i for i, c in enumerate(candidates) if union_gain_ok(first, c, ratio)]
    if not eligible:
        return None
    return int(eligible[rng.integers(len(eligible))])
