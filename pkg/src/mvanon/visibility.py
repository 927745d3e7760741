"""Per-camera face visibility from the measured depth map.

Each fitted head carries 15 probe points on its face. A probe projected
into a camera is checked against the depth map: unproject the measured
depth under the probe's pixel and compare the 3D distance to the probe's
true position against a threshold. Probes behind the camera or outside the
image are not visible. Probes whose pixel has no depth measurement (sensor
dropout, or outside the narrower depth field of view) cannot be checked
and are counted as renderable: a face is treated as visible when it cannot
be proven hidden, so it is still anonymized rather than leaked.

The face verdict is visible when at least one probe is either depth-
verified or unmeasurable; only a face whose checkable probes all fail is
declared not visible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cloud import DepthMap
from .geometry import CameraParams, project_points, unproject_points
from .headfit import FittedHead

DEFAULT_THRESHOLD = 150.0  # mm


@dataclass
class VisibilityVerdict:
    camera_id: str
    visible: bool
    probes_total: int
    probes_visible: int  # depth-verified within the threshold
    probes_outside_depth_fov: int  # in the image but without a depth value


def check_visibility(
    face: FittedHead,
    cam: CameraParams,
    depth: DepthMap,
    threshold: float = DEFAULT_THRESHOLD,
) -> VisibilityVerdict:
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    if (depth.height, depth.width) != (cam.height, cam.width):
        raise ValueError("depth map size does not match the camera")

    probes = np.asarray(face.probe_points, dtype=float)
    uv, z = project_points(cam, probes)

    verified = 0
    no_measurement = 0
    for i in range(len(probes)):
        if z[i] <= 0:
            continue  # behind the camera
        u, v = uv[i]
        if not (0 <= u <= cam.width - 1 and 0 <= v <= cam.height - 1):
            continue  # outside the image
        col = int(np.floor(u + 0.5))
        row = int(np.floor(v + 0.5))
        outside_fov = (
            cam.depth_fov_mask is not None and not cam.depth_fov_mask[row, col]
        )
        d = float(depth.data[row, col])
        if outside_fov or d <= 0:
            no_measurement += 1
            continue
        observed = unproject_points(cam, [(u, v)], [d])[0]
        if np.linalg.norm(observed - probes[i]) < threshold:
            verified += 1

    return VisibilityVerdict(
        camera_id=cam.camera_id,
        visible=(verified + no_measurement) >= 1,
        probes_total=len(probes),
        probes_visible=verified,
        probes_outside_depth_fov=no_measurement,
    )
