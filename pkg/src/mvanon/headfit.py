"""Head localization: initial pose from a 3D skeleton, then rigid refinement
of the template against the scene cloud.

Skeletons follow the 17-joint convention (nose, eyes, ears, shoulders,
elbows, wrists, hips, knees, ankles) with per-joint confidences; a
confidence of exactly -1 marks a missing joint.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cloud import Aabb, PointCloud, crop, downsample_random, sample_mesh_surface
from .geometry import RigidTransform, nearest_rotation
from .headmodel import HeadModel, TriMesh
from .register import (
    GmmEmConfig,
    IcpConfig,
    NoCorrespondences,
    NumericalFailure,
    RegistrationResult,
    register_coarse_to_fine,
)

JOINT_NAMES = (
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
)

NOSE = 0
LEFT_EYE = 1
RIGHT_EYE = 2
LEFT_EAR = 3
RIGHT_EAR = 4
LEFT_SHOULDER = 5
RIGHT_SHOULDER = 6

_HEAD_JOINTS = (NOSE, LEFT_EYE, RIGHT_EYE, LEFT_EAR, RIGHT_EAR)

DEFAULT_HALF_EXTENT = 200.0  # mm, crop cube half side around the head
DEFAULT_HEAD_SAMPLES = 1500  # points drawn from the template surface
DEFAULT_MAX_SCENE_POINTS = 8000  # crop downsample bound before registration
MIN_CROP_POINTS = 50


class InsufficientKeypoints(ValueError):
    """Fewer than two of nose / eyes / ears are present."""


class FitFailed(RuntimeError):
    """The crop was too empty or the registration could not run."""


@dataclass
class Skeleton3D:
    person_id: int
    joints: np.ndarray  # (17, 3) mm, world frame
    joint_conf: np.ndarray  # (17,), -1 marks missing, else in [0, 1]
    frame_confidence: float = 1.0

    def __post_init__(self):
        self.joints = np.asarray(self.joints, dtype=float).reshape(17, 3)
        self.joint_conf = np.asarray(self.joint_conf, dtype=float).reshape(17)
        bad = ~((self.joint_conf == -1.0) | ((self.joint_conf >= 0) & (self.joint_conf <= 1)))
        if bad.any():
            raise ValueError("joint confidences must be -1 (missing) or in [0, 1]")

    def has(self, idx: int) -> bool:
        return self.joint_conf[idx] >= 0

    def joint(self, idx: int) -> np.ndarray | None:
        return self.joints[idx] if self.has(idx) else None


def load_skeletons(path) -> dict[int, list[Skeleton3D]]:
    """Read a skeleton file: {"frames": [{"frame": n, "people": [...]}]}.

    Each person record is {"id", "confidence", "joints": [[x, y, z, score]
    x17]} with score -1 for missing joints.
    """
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, dict) or "frames" not in doc:
        raise ValueError("skeleton file must be an object with a 'frames' list")
    frames: dict[int, list[Skeleton3D]] = {}
    for rec in doc["frames"]:
        fid = int(rec["frame"])
        people = []
        for person in rec.get("people", []):
            joints = np.asarray(person["joints"], dtype=float)
            if joints.shape != (17, 4):
                raise ValueError(
                    f"frame {fid}: person {person.get('id')} needs 17 joints of 4 values"
                )
            people.append(
                Skeleton3D(
                    person_id=int(person["id"]),
                    joints=joints[:, :3],
                    joint_conf=joints[:, 3],
                    frame_confidence=float(person.get("confidence", 1.0)),
                )
            )
        frames[fid] = people
    return frames


def save_skeletons(frames: dict[int, list[Skeleton3D]], path) -> None:
    doc = {"frames": []}
    for fid in sorted(frames):
        people = []
        for s in frames[fid]:
            joints = np.column_stack([s.joints, s.joint_conf])
            people.append(
                {
                    "id": int(s.person_id),
                    "confidence": float(s.frame_confidence),
                    "joints": [[float(v) for v in row] for row in joints],
                }
            )
        doc["frames"].append({"frame": int(fid), "people": people})
    Path(path).write_text(json.dumps(doc, indent=2))


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    if n < 1e-12:
        raise ValueError("zero-length direction")
    return v / n


def initial_head_pose(skel: Skeleton3D) -> RigidTransform:
    """Head pose straight from the skeleton joints.

    Translation is the nose when present, else the centroid of the present
    eyes and ears. Gaze comes from the ear midpoint toward the nose when
    both are available, falling back to the eye or ear baseline crossed
    with the body-up direction. Up is approximated by the neck axis
    (shoulder midpoint toward the head centroid) and world +z when the
    shoulders are missing. The resulting frame is orthonormalized with the
    gaze direction kept exact.
    """
    head_pts = {i: skel.joint(i) for i in _HEAD_JOINTS if skel.has(i)}
    if len(head_pts) < 2:
        raise InsufficientKeypoints(
            f"person {skel.person_id}: only {len(head_pts)} head keypoints present"
        )

    nose = head_pts.get(NOSE)
    translation = nose if nose is not None else np.mean(list(head_pts.values()), axis=0)
    centroid = np.mean(list(head_pts.values()), axis=0)

    if skel.has(LEFT_SHOULDER) and skel.has(RIGHT_SHOULDER):
        shoulder_mid = (skel.joints[LEFT_SHOULDER] + skel.joints[RIGHT_SHOULDER]) / 2.0
        up0 = centroid - shoulder_mid
        if np.linalg.norm(up0) < 1e-9:
            up0 = np.array([0.0, 0.0, 1.0])
    else:
        up0 = np.array([0.0, 0.0, 1.0])
    up0 = _unit(up0)

    ears = (head_pts.get(LEFT_EAR), head_pts.get(RIGHT_EAR))
    eyes = (head_pts.get(LEFT_EYE), head_pts.get(RIGHT_EYE))

    gaze0 = None
    if nose is not None and ears[0] is not None and ears[1] is not None:
        gaze0 = nose - (ears[0] + ears[1]) / 2.0
    elif eyes[0] is not None and eyes[1] is not None:
        gaze0 = np.cross(up0, eyes[1] - eyes[0])
    elif ears[0] is not None and ears[1] is not None:
        gaze0 = np.cross(up0, ears[1] - ears[0])
    elif nose is not None:
        other = next(p for i, p in head_pts.items() if i != NOSE)
        gaze0 = nose - other
    else:
        # One eye plus one ear: the ear sits behind the eye.
        eye = eyes[0] if eyes[0] is not None else eyes[1]
        ear = ears[0] if ears[0] is not None else ears[1]
        gaze0 = eye - ear

    gaze = _unit(np.asarray(gaze0, dtype=float))
    if abs(float(gaze @ up0)) > 0.999:
        # Gaze almost parallel to up; pick any perpendicular up instead.
        alt = np.array([1.0, 0.0, 0.0]) if abs(gaze[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        up0 = _unit(np.cross(np.cross(gaze, alt), gaze))
    right = _unit(np.cross(gaze, up0))
    up = np.cross(right, gaze)
    # Columns map the canonical axes: +x -> right, +y -> gaze, +z -> up.
    rot = np.column_stack([right, gaze, up])
    return RigidTransform(nearest_rotation(rot), translation)


def crop_box_for_head(pose: RigidTransform, half_extent: float = DEFAULT_HALF_EXTENT) -> Aabb:
    """Axis-aligned cube of half side `half_extent` around the head origin."""
    if half_extent <= 0:
        raise ValueError("half_extent must be positive")
    t = pose.translation
    return Aabb(t - half_extent, t + half_extent)


@dataclass
class FittedHead:
    """A localized head: world pose, posed face submesh, and probe points."""

    pose: RigidTransform
    face_mesh: TriMesh
    probe_points: np.ndarray  # (15, 3) world positions of the probe vertices
    confidence: float
    person_id: int
    method: str  # "registered" or "keypoints_only"
    registration: RegistrationResult | None = None


def head_from_pose(
    model: HeadModel,
    pose: RigidTransform,
    confidence: float,
    person_id: int = -1,
    method: str = "keypoints_only",
    registration: RegistrationResult | None = None,
) -> FittedHead:
    """Instantiate the template at a given pose without any refinement."""
    posed = model.mesh.transformed(pose)
    return FittedHead(
        pose=pose,
        face_mesh=posed.submesh(model.face_vertex_ids),
        probe_points=posed.vertices[model.probe_vertex_ids],
        confidence=confidence,
        person_id=person_id,
        method=method,
        registration=registration,
    )


def fit_head(
    skel: Skeleton3D,
    scene: PointCloud,
    model: HeadModel,
    gmm_cfg: GmmEmConfig | None = None,
    icp_cfg: IcpConfig | None = None,
    *,
    half_extent: float = DEFAULT_HALF_EXTENT,
    head_samples: int = DEFAULT_HEAD_SAMPLES,
    max_scene_points: int = DEFAULT_MAX_SCENE_POINTS,
    seed: int = 0,
) -> FittedHead:
    """Fit the template head to the scene cloud around a skeleton.

    Pipeline: keypoint pose -> cube crop of the scene -> sample the posed
    template surface -> coarse-to-fine registration -> compose the
    refinement with the keypoint pose. Raises InsufficientKeypoints when no
    initial pose exists and FitFailed when the crop holds fewer than
    MIN_CROP_POINTS points or registration cannot run; callers may fall
    back to `head_from_pose` with the keypoint pose.
    """
    pose0 = initial_head_pose(skel)
    box = crop_box_for_head(pose0, half_extent)
    cropped = crop(scene, box)
    if len(cropped) < MIN_CROP_POINTS:
        raise FitFailed(
            f"person {skel.person_id}: crop holds {len(cropped)} points "
            f"(need {MIN_CROP_POINTS})"
        )
    fixed = downsample_random(cropped, max_scene_points, seed=seed)
    moving = sample_mesh_surface(model.mesh.transformed(pose0), head_samples, seed=seed + 1)
    try:
        reg = register_coarse_to_fine(moving, fixed, gmm_cfg, icp_cfg)
    except (ValueError, NoCorrespondences, NumericalFailure) as e:
        raise FitFailed(f"person {skel.person_id}: registration failed: {e}") from e
    pose = reg.transform.compose(pose0)
    return head_from_pose(
        model, pose, skel.frame_confidence, skel.person_id, "registered", reg
    )
