"""Depth maps, point clouds, and the sampling utilities built on them."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import CameraParams, unproject_points
from .headmodel import TriMesh


@dataclass
class DepthMap:
    """Single-channel depth image; values in mm, 0 marks no measurement."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 2:
            raise ValueError("depth map must be 2-D")
        if np.any(self.data < 0):
            raise ValueError("depth values must be non-negative")

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


@dataclass
class PointCloud:
    points: np.ndarray
    colors: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if self.colors is not None:
            self.colors = np.asarray(self.colors, dtype=np.uint8).reshape(-1, 3)
            if len(self.colors) != len(self.points):
                raise ValueError("colors must be per point")

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class Aabb:
    """Axis-aligned box, closed on both ends."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.array(self.lo, dtype=float).reshape(3)
        hi = np.array(self.hi, dtype=float).reshape(3)
        if np.any(lo > hi):
            raise ValueError("box lo must not exceed hi")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def contains(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float).reshape(-1, 3)
        return np.all((p >= self.lo) & (p <= self.hi), axis=1)

    def diagonal(self) -> float:
        return float(np.linalg.norm(self.hi - self.lo))

    @property
    def center(self) -> np.ndarray:
        return (self.lo + self.hi) / 2.0

    def inflated(self, margin: float) -> "Aabb":
        return Aabb(self.lo - margin, self.hi + margin)


def depth_to_cloud(cam: CameraParams, depth: DepthMap, stride: int = 1) -> PointCloud:
    """Unproject every valid depth pixel (on a `stride` grid) to world space.

    Zero-depth pixels are skipped; they mean the sensor measured nothing.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if (depth.height, depth.width) != (cam.height, cam.width):
        raise ValueError("depth map size does not match the camera")
    d = np.asarray(depth.data, dtype=float)[::stride, ::stride]
    rows, cols = np.mgrid[0 : cam.height : stride, 0 : cam.width : stride]
    valid = d > 0
    if not valid.any():
        return PointCloud(np.empty((0, 3)))
    uv = np.column_stack([cols[valid], rows[valid]]).astype(float)
    return PointCloud(unproject_points(cam, uv, d[valid]))


def merge(clouds) -> PointCloud:
    """Concatenate clouds already expressed in the shared world frame."""
    clouds = list(clouds)
    if not clouds:
        return PointCloud(np.empty((0, 3)))
    pts = np.vstack([c.points for c in clouds])
    colors = None
    if all(c.colors is not None for c in clouds) and clouds:
        colors = np.vstack([c.colors for c in clouds])
    return PointCloud(pts, colors)


def crop(cloud: PointCloud, box: Aabb) -> PointCloud:
    keep = box.contains(cloud.points)
    return PointCloud(
        cloud.points[keep],
        None if cloud.colors is None else cloud.colors[keep],
    )


def downsample_random(cloud: PointCloud, max_points: int, seed: int = 0) -> PointCloud:
    """Keep at most `max_points`, chosen uniformly without replacement."""
    if max_points < 1:
        raise ValueError("max_points must be >= 1")
    if len(cloud) <= max_points:
        return cloud
    rng = np.random.default_rng(seed)
    keep = np.sort(rng.choice(len(cloud), size=max_points, replace=False))
    return PointCloud(
        cloud.points[keep],
        None if cloud.colors is None else cloud.colors[keep],
    )


def sample_mesh_surface(mesh: TriMesh, n: int, seed: int = 0) -> PointCloud:
    """Sample `n` points uniformly over the mesh surface.

    Triangles are drawn proportionally to their area, then a point is drawn
    uniformly inside each via the reflected-barycentric trick. Deterministic
    for a fixed seed.
    """
    if n < 0:
        raise ValueError("sample count must be non-negative")
    if n == 0:
        return PointCloud(np.empty((0, 3)))
    areas = mesh.triangle_areas()
    total = float(areas.sum())
    if len(mesh.triangles) == 0 or total <= 0:
        raise ValueError("mesh has no area to sample")
    rng = np.random.default_rng(seed)
    tri = rng.choice(len(areas), size=n, p=areas / total)
    r1 = rng.random(n)
    r2 = rng.random(n)
    flip = r1 + r2 > 1.0
    r1[flip] = 1.0 - r1[flip]
    r2[flip] = 1.0 - r2[flip]
    a = mesh.vertices[mesh.triangles[tri, 0]]
    b = mesh.vertices[mesh.triangles[tri, 1]]
    c = mesh.vertices[mesh.triangles[tri, 2]]
    pts = a + r1[:, None] * (b - a) + r2[:, None] * (c - a)
    return PointCloud(pts)
