"""Pinhole cameras and rigid transforms shared by the whole pipeline.

Conventions: every length is in millimeters. World and camera frames are
right-handed; a camera looks along its +z axis, image u runs along camera
+x (columns), image v along camera +y (rows). Continuous image coordinates
put the center of pixel (col i, row j) at (u, v) = (i, j). Depth values are
camera-frame z, not ray length.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

ORTHONORMALITY_TOL = 1e-9


class Pixel(NamedTuple):
    """Image sample: column u, row v, camera-frame depth d (mm)."""

    u: float
    v: float
    d: float


def nearest_rotation(matrix) -> np.ndarray:
    """Project a near-orthonormal 3x3 matrix onto the closest proper rotation.

    Polar factor of the input, with the smallest singular direction flipped
    when needed to force det +1.
    """
    m = np.asarray(matrix, dtype=float)
    if m.shape != (3, 3):
        raise ValueError(f"expected a 3x3 matrix, got shape {m.shape}")
    u, _, vt = np.linalg.svd(m)
    r = u @ vt
    if np.linalg.det(r) < 0:
        u = u.copy()
        u[:, 2] = -u[:, 2]
        r = u @ vt
    return r


def orthogonality_defect(rotation) -> float:
    """max |R^T R - I|, zero for a perfectly orthonormal matrix."""
    r = np.asarray(rotation, dtype=float)
    return float(np.abs(r.T @ r - np.eye(3)).max())


def rotation_about_axis(axis, degrees: float) -> np.ndarray:
    """Rodrigues formula: rotation by `degrees` about an arbitrary axis."""
    a = np.asarray(axis, dtype=float)
    n = np.linalg.norm(a)
    if n == 0:
        raise ValueError("rotation axis must be nonzero")
    a = a / n
    theta = np.deg2rad(degrees)
    k = np.array([[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]])
    return np.eye(3) + np.sin(theta) * k + (1.0 - np.cos(theta)) * (k @ k)


def rotation_angle_deg(rotation) -> float:
    """Geodesic angle of a rotation matrix, in degrees."""
    tr = float(np.trace(np.asarray(rotation, dtype=float)))
    c = np.clip((tr - 1.0) / 2.0, -1.0, 1.0)
    return float(np.degrees(np.arccos(c)))


@dataclass(frozen=True)
class RigidTransform:
    """Proper rigid motion p -> rotation @ p + translation.

    Immutable; the stored arrays are read-only. The constructor insists on
    an orthonormal rotation with det +1 (defect below 1e-9); estimates from
    noisy arithmetic should go through `from_noisy`, which re-projects onto
    the rotation group first.
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.array(self.rotation, dtype=float)
        t = np.array(self.translation, dtype=float).reshape(3)
        if r.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got shape {r.shape}")
        if (
            orthogonality_defect(r) > ORTHONORMALITY_TOL
            or abs(np.linalg.det(r) - 1.0) > ORTHONORMALITY_TOL
        ):
            raise ValueError(
                "rotation is not orthonormal with det +1; use "
                "RigidTransform.from_noisy to re-project a noisy estimate"
            )
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_noisy(cls, rotation, translation) -> "RigidTransform":
        """Build from a possibly non-orthonormal rotation estimate."""
        return cls(nearest_rotation(rotation), np.asarray(translation, dtype=float))

    def apply(self, points):
        """Transform one (3,) point or an (N, 3) batch."""
        p = np.asarray(points, dtype=float)
        if p.ndim == 1:
            return self.rotation @ p + self.translation
        return p @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Transform equal to applying `other` first, then `self`.

        The product rotation is re-projected onto SO(3) so long chains of
        compositions cannot drift away from orthonormality.
        """
        r = nearest_rotation(self.rotation @ other.rotation)
        t = self.rotation @ other.translation + self.translation
        return RigidTransform(r, t)

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -(rt @ self.translation))

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous form."""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m


def pose_difference(a: RigidTransform, b: RigidTransform) -> tuple[float, float]:
    """Rotation (degrees) and translation (mm) discrepancy between two poses."""
    rot = rotation_angle_deg(a.rotation @ b.rotation.T)
    trans = float(np.linalg.norm(a.translation - b.translation))
    return rot, trans


@dataclass(frozen=True)
class CameraParams:
    """Pinhole intrinsics plus the world-to-camera rigid extrinsic.

    `depth_fov_mask`, when present, marks the pixels where the depth sensor
    can actually measure; it is narrower than the color image for the
    supported sensors. It never appears in calibration files.
    """

    camera_id: str
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    extrinsic: RigidTransform
    depth_fov_mask: np.ndarray | None = None

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (self.width > 0 and self.height > 0):
            raise ValueError("image size must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        if self.depth_fov_mask is not None:
            m = np.asarray(self.depth_fov_mask, dtype=bool)
            if m.shape != (self.height, self.width):
                raise ValueError("depth_fov_mask must have shape (height, width)")
            m = m.copy()
            m.setflags(write=False)
            object.__setattr__(self, "depth_fov_mask", m)

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        e = self.extrinsic
        return -(e.rotation.T @ e.translation)


def project(cam: CameraParams, point) -> Pixel | None:
    """Project one world point; None when it lies behind the camera (z <= 0).

    The returned pixel may fall outside the image bounds; callers decide
    whether off-image samples matter for them.
    """
    pc = cam.extrinsic.apply(np.asarray(point, dtype=float))
    z = float(pc[2])
    if z <= 0.0:
        return None
    return Pixel(
        float(cam.fx * pc[0] / z + cam.cx),
        float(cam.fy * pc[1] / z + cam.cy),
        z,
    )


def project_points(cam: CameraParams, points) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized projection of an (N, 3) batch.

    Returns (uv, depth) where uv is (N, 2) and depth is the camera-frame z.
    Rows with depth <= 0 are behind the camera; their uv entries are NaN.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    pc = cam.extrinsic.apply(pts)
    z = pc[:, 2]
    uv = np.full((len(pc), 2), np.nan)
    ok = z > 0
    uv[ok, 0] = cam.fx * pc[ok, 0] / z[ok] + cam.cx
    uv[ok, 1] = cam.fy * pc[ok, 1] / z[ok] + cam.cy
    return uv, z


def unproject(cam: CameraParams, pixel) -> np.ndarray:
    """Inverse of `project` for a single pixel with positive depth."""
    u, v, d = pixel
    return unproject_points(cam, [[u, v]], [d])[0]


def unproject_points(cam: CameraParams, uv, depth) -> np.ndarray:
    """Lift continuous pixel coordinates with depths back to world points."""
    uvs = np.asarray(uv, dtype=float).reshape(-1, 2)
    d = np.asarray(depth, dtype=float).reshape(-1)
    if len(d) != len(uvs):
        raise ValueError("uv and depth lengths differ")
    if np.any(d <= 0):
        raise ValueError("depth must be positive to unproject")
    x = (uvs[:, 0] - cam.cx) / cam.fx * d
    y = (uvs[:, 1] - cam.cy) / cam.fy * d
    pc = np.column_stack([x, y, d])
    return cam.extrinsic.inverse().apply(pc)


def look_at(
    eye,
    target,
    *,
    camera_id: str,
    fx: float,
    fy: float,
    cx: float,
    cy: float,
    width: int,
    height: int,
) -> CameraParams:
    """Camera at `eye` with optical axis toward `target`, image v pointing
    as close to world-down (-z) as the geometry allows."""
    eye = np.asarray(eye, dtype=float)
    target = np.asarray(target, dtype=float)
    z_axis = target - eye
    n = np.linalg.norm(z_axis)
    if n == 0:
        raise ValueError("eye and target coincide")
    z_axis = z_axis / n
    down = np.array([0.0, 0.0, -1.0])
    if abs(float(z_axis @ down)) > 0.999:
        # Looking straight up or down: keep image x along world x.
        x_axis = np.array([1.0, 0.0, 0.0])
    else:
        x_axis = np.cross(down, z_axis)
        x_axis = x_axis / np.linalg.norm(x_axis)
    y_axis = np.cross(z_axis, x_axis)
    r = np.vstack([x_axis, y_axis, z_axis])
    extr = RigidTransform(nearest_rotation(r), -(r @ eye))
    return CameraParams(
        camera_id=camera_id,
        fx=fx,
        fy=fy,
        cx=cx,
        cy=cy,
        width=width,
        height=height,
        extrinsic=extr,
    )


def save_calibration(cams, path) -> None:
    """Write a rig calibration file: a JSON array of camera records."""
    doc = []
    for cam in cams:
        doc.append(
            {
                "id": cam.camera_id,
                "fx": cam.fx,
                "fy": cam.fy,
                "cx": cam.cx,
                "cy": cam.cy,
                "width": cam.width,
                "height": cam.height,
                "R": [float(x) for x in cam.extrinsic.rotation.reshape(-1)],
                "t": [float(x) for x in cam.extrinsic.translation],
            }
        )
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True))


def load_calibration(path) -> list[CameraParams]:
    """Read a rig calibration file written by `save_calibration`.

    Each record holds id, fx, fy, cx, cy, width, height, a row-major
    9-element rotation R and a 3-element translation t (world to camera).
    """
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, list):
        raise ValueError("calibration file must be a JSON array of cameras")
    cams = []
    for rec in doc:
        try:
            r = np.asarray(rec["R"], dtype=float).reshape(3, 3)
            t = np.asarray(rec["t"], dtype=float)
            cams.append(
                CameraParams(
                    camera_id=str(rec["id"]),
                    fx=float(rec["fx"]),
                    fy=float(rec["fy"]),
                    cx=float(rec["cx"]),
                    cy=float(rec["cy"]),
                    width=int(rec["width"]),
                    height=int(rec["height"]),
                    extrinsic=RigidTransform.from_noisy(r, t),
                )
            )
        except KeyError as e:
            raise ValueError(f"calibration record missing field {e}") from e
    ids = [c.camera_id for c in cams]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate camera ids in calibration file")
    return cams
