"""Synthetic multi-camera scenes with exact ground truth.

Scenes are ray-cast: a room box viewed from inside, an operating-table box,
vertical body cylinders, the shared template head mesh per person, and
optional box occluders. Depth maps hold the camera-frame z of the first hit
along each pixel ray, so they follow exactly the conventions the rest of
the toolkit assumes. Color images are flat-shaded by object.

Ground truth per person and camera comes from noise-free ray casting of the
15 face probe vertices (a probe is visible when nothing hits the ray to it
first) and the truth face box is the tight bound of the ray-cast footprint
of the true face submesh. Everything is deterministic for a fixed config.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .cloud import Aabb, DepthMap
from .geometry import CameraParams, RigidTransform, look_at, project_points, rotation_about_axis
from .headfit import (
    JOINT_NAMES,
    Skeleton3D,
    save_skeletons,
)
from .headmodel import CANONICAL_LANDMARKS, HeadModel, TriMesh, default_model
from .metrics import FaceBox, save_box_file

_RAY_EPS = 1e-6
_PALETTE = {
    "room": (201, 198, 191),
    "table": (96, 118, 138),
    "column": (64, 92, 148),
    "head": (206, 176, 150),
    "occluder": (70, 70, 72),
}

# Body proportions (mm) used for the exact synthetic skeletons.
_SHOULDER_DROP = 250.0  # nose z to shoulder midpoint z
_SHOULDER_HALF = 182.0
_HIP_DROP = 780.0
_HIP_HALF = 110.0
_KNEE_DROP = 1230.0
_ANKLE_DROP = 1660.0
_COLUMN_RADIUS = 160.0
_COLUMN_NECK_GAP = 120.0  # column stops this far below the nose


def default_room() -> Aabb:
    return Aabb((0.0, 0.0, 0.0), (4500.0, 5500.0, 3000.0))


def default_table() -> Aabb:
    return Aabb((1250.0, 2400.0, 0.0), (3250.0, 3100.0, 900.0))


def default_cameras(width: int = 384, height: int = 288, fx: float = 280.0) -> list[CameraParams]:
    """Four ceiling cameras: two wide corner views, one top-down view over
    the table, and one side view."""
    cx = (width - 1) / 2.0
    cy = (height - 1) / 2.0
    spots = {
        "cn01": ((350.0, 350.0, 2750.0), (2250.0, 2750.0, 1000.0)),
        "cn02": ((2250.0, 2750.0, 2900.0), (2250.0, 2750.0, 0.0)),
        "cn03": ((4150.0, 5150.0, 2750.0), (2250.0, 2750.0, 1000.0)),
        "cn04": ((4150.0, 2750.0, 2650.0), (2300.0, 2750.0, 1000.0)),
    }
    return [
        look_at(
            eye,
            target,
            camera_id=cid,
            fx=fx,
            fy=fx,
            cx=cx,
            cy=cy,
            width=width,
            height=height,
        )
        for cid, (eye, target) in spots.items()
    ]


@dataclass
class PersonSpec:
    head_pose: RigidTransform  # canonical head frame -> world
    column_height: float | None = None  # body cylinder top; default from pose


@dataclass
class SceneConfig:
    seed: int = 0
    room: Aabb = field(default_factory=default_room)
    table: Aabb | None = field(default_factory=default_table)
    cameras: list[CameraParams] = field(default_factory=default_cameras)
    persons: list[PersonSpec] = field(default_factory=list)
    occluders: list[Aabb] = field(default_factory=list)
    noise_sigma: float = 0.0  # mm, Gaussian on valid depth pixels
    depth_fov_shrink: float = 0.6  # fraction of image area without depth

    def __post_init__(self):
        if not self.cameras:
            raise ValueError("scene needs at least one camera")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not 0.0 <= self.depth_fov_shrink < 1.0:
            raise ValueError("depth_fov_shrink must lie in [0, 1)")
        for i, p in enumerate(self.persons):
            if not self.room.contains(p.head_pose.translation)[0]:
                raise ValueError(f"person {i} head lies outside the room")


@dataclass
class PersonTruth:
    person_id: int
    spec: PersonSpec
    skeleton: Skeleton3D
    head_pose: RigidTransform
    probe_points: np.ndarray  # (15, 3) world
    visible: dict[str, bool]
    boxes: dict[str, FaceBox]  # only cameras where the face is visible


@dataclass
class SceneTruth:
    config: SceneConfig
    cameras: list[CameraParams]  # with depth FOV masks attached
    images: dict[str, np.ndarray]
    depth: dict[str, DepthMap]  # measured: FOV-masked, noisy
    depth_clean: dict[str, DepthMap]  # noise-free, full frame
    persons: list[PersonTruth]


# ---------------------------------------------------------------------------
# Ray-cast primitives. Rays are (origin, dirs) with dirs scaled so that the
# hit parameter t equals the camera-frame z (pixel rays) or the fraction of
# the way to a target point (probe rays).


def _ray_aabb(origin: np.ndarray, dirs: np.ndarray, box: Aabb) -> np.ndarray:
    safe = np.where(dirs == 0.0, 1e-30, dirs)
    t1 = (box.lo - origin) / safe
    t2 = (box.hi - origin) / safe
    tn = np.min([t1, t2], axis=0).max(axis=1)
    tf = np.max([t1, t2], axis=0).min(axis=1)
    t = np.where(tn > _RAY_EPS, tn, np.where(tf > _RAY_EPS, tf, np.inf))
    t[tf < np.maximum(tn, _RAY_EPS)] = np.inf
    return t


def _ray_cylinder(
    origin: np.ndarray, dirs: np.ndarray, cx: float, cy: float, r: float, z0: float, z1: float
) -> np.ndarray:
    ox, oy, oz = origin - np.array([cx, cy, 0.0])
    dx, dy, dz = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    best = np.full(len(dirs), np.inf)

    a = dx * dx + dy * dy
    b = 2.0 * (ox * dx + oy * dy)
    c = ox * ox + oy * oy - r * r
    disc = b * b - 4.0 * a * c
    ok = (disc >= 0) & (a > 1e-30)
    sq = np.sqrt(np.where(ok, disc, 0.0))
    for sign in (-1.0, 1.0):
        t = np.where(ok, (-b + sign * sq) / (2.0 * np.where(ok, a, 1.0)), np.inf)
        zhit = oz + t * dz
        valid = ok & (t > _RAY_EPS) & (zhit >= z0) & (zhit <= z1)
        best = np.where(valid & (t < best), t, best)

    safe_dz = np.where(dz == 0.0, 1e-30, dz)
    for zc in (z0, z1):
        t = (zc - oz) / safe_dz
        xh = ox + t * dx
        yh = oy + t * dy
        valid = (t > _RAY_EPS) & (xh * xh + yh * yh <= r * r)
        best = np.where(valid & (t < best), t, best)
    return best


def _ray_mesh(origin: np.ndarray, dirs: np.ndarray, v0, e1, e2, chunk: int = 4096) -> np.ndarray:
    """Batched Moeller-Trumbore over all triangles; returns nearest t."""
    out = np.full(len(dirs), np.inf)
    tvec = origin - v0  # (T, 3)
    qvec = np.cross(tvec, e1)  # (T, 3)
    t_num = np.einsum("tj,tj->t", e2, qvec)  # (T,)
    for s in range(0, len(dirs), chunk):
        d = dirs[s : s + chunk]
        pvec = np.cross(d[:, None, :], e2[None, :, :])  # (K, T, 3)
        det = np.einsum("ktj,tj->kt", pvec, e1)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / det
            u = np.einsum("tj,ktj->kt", tvec, pvec) * inv
            v = np.einsum("kj,tj->kt", d, qvec) * inv
            t = t_num[None, :] * inv
        valid = (
            (np.abs(det) > 1e-12)
            & (u >= -1e-9)
            & (v >= -1e-9)
            & (u + v <= 1.0 + 1e-9)
            & (t > _RAY_EPS)
        )
        t = np.where(valid, t, np.inf)
        out[s : s + chunk] = t.min(axis=1)
    return out


@dataclass
class _Prim:
    label: str
    kind: str  # "box", "cylinder", "mesh"
    box: Aabb | None = None
    cyl: tuple | None = None  # (cx, cy, r, z0, z1)
    mesh: TriMesh | None = None

    def ray(self, origin, dirs) -> np.ndarray:
        if self.kind == "box":
            return _ray_aabb(origin, dirs, self.box)
        if self.kind == "cylinder":
            return _ray_cylinder(origin, dirs, *self.cyl)
        v0 = self.mesh.vertices[self.mesh.triangles[:, 0]]
        e1 = self.mesh.vertices[self.mesh.triangles[:, 1]] - v0
        e2 = self.mesh.vertices[self.mesh.triangles[:, 2]] - v0
        return _ray_mesh(origin, dirs, v0, e1, e2)

    def surface_distance(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float).reshape(-1, 3)
        if self.kind == "box":
            q = np.abs(p - self.box.center) - (self.box.hi - self.box.lo) / 2.0
            outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
            inside = np.minimum(q.max(axis=1), 0.0)
            return np.abs(outside + inside)
        if self.kind == "cylinder":
            cx, cy, r, z0, z1 = self.cyl
            dr = np.hypot(p[:, 0] - cx, p[:, 1] - cy) - r
            dz = np.abs(p[:, 2] - (z0 + z1) / 2.0) - (z1 - z0) / 2.0
            q = np.column_stack([dr, dz])
            outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
            inside = np.minimum(q.max(axis=1), 0.0)
            return np.abs(outside + inside)
        return np.sqrt(_mesh_dist2(p, self.mesh))


def _mesh_dist2(p: np.ndarray, mesh: TriMesh) -> np.ndarray:
    """Squared distance from each point to the closest mesh triangle."""
    best = np.full(len(p), np.inf)
    verts, tris = mesh.vertices, mesh.triangles
    for tri in tris:
        a, b, c = verts[tri[0]], verts[tri[1]], verts[tri[2]]
        best = np.minimum(best, _point_tri_dist2(p, a, b, c))
    return best


def _point_tri_dist2(p: np.ndarray, a, b, c) -> np.ndarray:
    # Closest point on a triangle, the standard seven-region case split.
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = ap @ ab
    d2 = ap @ ac
    bp = p - b
    d3 = bp @ ab
    d4 = bp @ ac
    cp = p - c
    d5 = cp @ ab
    d6 = cp @ ac
    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    with np.errstate(divide="ignore", invalid="ignore"):
        v_ab = d1 / (d1 - d3)
        w_ac = d2 / (d2 - d6)
        w_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        denom = va + vb + vc
        v_in = vb / denom
        w_in = vc / denom

    def at(vv, ww):
        return a + vv[:, None] * ab + ww[:, None] * ac

    zeros = np.zeros(len(p))
    candidates = [
        ((d1 <= 0) & (d2 <= 0), at(zeros, zeros)),  # vertex a
        ((d3 >= 0) & (d4 <= d3), at(zeros + 1.0, zeros)),  # vertex b
        ((d6 >= 0) & (d5 <= d6), at(zeros, zeros + 1.0)),  # vertex c
        ((vc <= 0) & (d1 >= 0) & (d3 <= 0), at(v_ab, zeros)),  # edge ab
        ((vb <= 0) & (d2 >= 0) & (d6 <= 0), at(zeros, w_ac)),  # edge ac
        ((va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0), at(1.0 - w_bc, w_bc)),  # edge bc
    ]
    closest = at(v_in, w_in)  # interior by default
    chosen = np.zeros(len(p), dtype=bool)
    for cond, pt in candidates:
        use = cond & ~chosen
        closest[use] = pt[use]
        chosen |= cond
    diff = p - closest
    return np.einsum("ij,ij->i", diff, diff)


def _scene_primitives(cfg: SceneConfig, model: HeadModel) -> list[_Prim]:
    prims = [_Prim("room", "box", box=cfg.room)]
    if cfg.table is not None:
        prims.append(_Prim("table", "box", box=cfg.table))
    for occ in cfg.occluders:
        prims.append(_Prim("occluder", "box", box=occ))
    for spec in cfg.persons:
        nose = spec.head_pose.translation
        centroid = _head_centroid(spec.head_pose)
        top = spec.column_height if spec.column_height is not None else nose[2] - _COLUMN_NECK_GAP
        prims.append(
            _Prim(
                "column",
                "cylinder",
                cyl=(float(centroid[0]), float(centroid[1]), _COLUMN_RADIUS, 0.0, float(top)),
            )
        )
        prims.append(_Prim("head", "mesh", mesh=model.mesh.transformed(spec.head_pose)))
    return prims


def scene_distance(cfg: SceneConfig, points, model: HeadModel | None = None) -> np.ndarray:
    """Distance from each point to the nearest scene surface (test oracle)."""
    model = model or default_model()
    dists = [p.surface_distance(points) for p in _scene_primitives(cfg, model)]
    return np.min(dists, axis=0)


def _head_centroid(pose: RigidTransform) -> np.ndarray:
    pts = np.array([CANONICAL_LANDMARKS[k] for k in
                    ("nose", "left_eye", "right_eye", "left_ear", "right_ear")])
    return pose.apply(pts).mean(axis=0)


def _exact_skeleton(spec: PersonSpec, person_id: int) -> Skeleton3D:
    pose = spec.head_pose
    joints = np.zeros((17, 3))
    conf = np.ones(17)
    for name in ("nose", "left_eye", "right_eye", "left_ear", "right_ear"):
        joints[JOINT_NAMES.index(name)] = pose.apply(CANONICAL_LANDMARKS[name])

    centroid = _head_centroid(pose)
    nose_z = pose.translation[2]
    right3 = pose.rotation @ np.array([1.0, 0.0, 0.0])
    right_h = np.array([right3[0], right3[1], 0.0])
    n = np.linalg.norm(right_h)
    right_h = right_h / n if n > 1e-9 else np.array([1.0, 0.0, 0.0])

    def pair(mid_z, half):
        mid = np.array([centroid[0], centroid[1], mid_z])
        return mid - half * right_h, mid + half * right_h

    l_sh, r_sh = pair(nose_z - _SHOULDER_DROP, _SHOULDER_HALF)
    l_hip, r_hip = pair(nose_z - _HIP_DROP, _HIP_HALF)
    l_knee, r_knee = pair(nose_z - _KNEE_DROP, _HIP_HALF)
    l_ank, r_ank = pair(max(nose_z - _ANKLE_DROP, 60.0), _HIP_HALF)
    l_elb, r_elb = pair(nose_z - _SHOULDER_DROP - 300.0, _SHOULDER_HALF + 40.0)
    l_wri, r_wri = pair(nose_z - _SHOULDER_DROP - 550.0, _SHOULDER_HALF + 60.0)
    for name, pt in (
        ("left_shoulder", l_sh),
        ("right_shoulder", r_sh),
        ("left_elbow", l_elb),
        ("right_elbow", r_elb),
        ("left_wrist", l_wri),
        ("right_wrist", r_wri),
        ("left_hip", l_hip),
        ("right_hip", r_hip),
        ("left_knee", l_knee),
        ("right_knee", r_knee),
        ("left_ankle", l_ank),
        ("right_ankle", r_ank),
    ):
        joints[JOINT_NAMES.index(name)] = pt
    return Skeleton3D(person_id=person_id, joints=joints, joint_conf=conf, frame_confidence=1.0)


def perturb_skeleton(skel: Skeleton3D, sigma_mm: float, seed: int = 0) -> Skeleton3D:
    """Gaussian joint jitter with confidence damped by exp(-|jitter| / 100)."""
    if sigma_mm < 0:
        raise ValueError("sigma must be >= 0")
    rng = np.random.default_rng(seed)
    jitter = rng.normal(0.0, sigma_mm, size=(17, 3)) if sigma_mm > 0 else np.zeros((17, 3))
    present = skel.joint_conf >= 0
    jitter[~present] = 0.0
    joints = skel.joints + jitter
    conf = skel.joint_conf.copy()
    conf[present] *= np.exp(-np.linalg.norm(jitter[present], axis=1) / 100.0)
    return Skeleton3D(skel.person_id, joints, conf, skel.frame_confidence)


def _fov_mask(width: int, height: int, shrink: float) -> np.ndarray:
    mask = np.zeros((height, width), dtype=bool)
    scale = np.sqrt(1.0 - shrink)
    mw = max(1, int(round(width * scale)))
    mh = max(1, int(round(height * scale)))
    x0 = (width - mw) // 2
    y0 = (height - mh) // 2
    mask[y0 : y0 + mh, x0 : x0 + mw] = True
    return mask


def _pixel_rays(cam: CameraParams) -> tuple[np.ndarray, np.ndarray]:
    rows, cols = np.mgrid[0 : cam.height, 0 : cam.width]
    dc = np.stack(
        [
            (cols - cam.cx) / cam.fx,
            (rows - cam.cy) / cam.fy,
            np.ones_like(cols, dtype=float),
        ],
        axis=-1,
    ).reshape(-1, 3)
    dirs = dc @ cam.extrinsic.rotation  # R^T applied row-wise
    return cam.center, dirs


def _mesh_pixel_rect(cam: CameraParams, mesh: TriMesh, pad: int = 2):
    uv, z = project_points(cam, mesh.vertices)
    if np.any(z <= 0):
        return 0, cam.width - 1, 0, cam.height - 1
    x0 = max(int(np.floor(uv[:, 0].min())) - pad, 0)
    x1 = min(int(np.ceil(uv[:, 0].max())) + pad, cam.width - 1)
    y0 = max(int(np.floor(uv[:, 1].min())) - pad, 0)
    y1 = min(int(np.ceil(uv[:, 1].max())) + pad, cam.height - 1)
    return x0, x1, y0, y1


def generate_scene(cfg: SceneConfig, model: HeadModel | None = None) -> SceneTruth:
    """Render every camera and derive the exact ground truth."""
    model = model or default_model()
    prims = _scene_primitives(cfg, model)

    cameras = []
    images: dict[str, np.ndarray] = {}
    depth_noisy: dict[str, DepthMap] = {}
    depth_clean: dict[str, DepthMap] = {}

    for ci, cam in enumerate(cfg.cameras):
        origin, dirs = _pixel_rays(cam)
        n_px = len(dirs)
        t_all = np.full((len(prims), n_px), np.inf)
        for pi, prim in enumerate(prims):
            if prim.kind == "mesh":
                x0, x1, y0, y1 = _mesh_pixel_rect(cam, prim.mesh)
                if x1 < x0 or y1 < y0:
                    continue
                rows, cols = np.mgrid[y0 : y1 + 1, x0 : x1 + 1]
                sel = (rows * cam.width + cols).ravel()
                t_all[pi, sel] = prim.ray(origin, dirs[sel])
            else:
                t_all[pi] = prim.ray(origin, dirs)
        hit = np.argmin(t_all, axis=0)
        t = t_all[hit, np.arange(n_px)]

        colors = np.array([_PALETTE[p.label] for p in prims], dtype=np.uint8)
        images[cam.camera_id] = colors[hit].reshape(cam.height, cam.width, 3)

        clean = np.where(np.isfinite(t), t, 0.0).reshape(cam.height, cam.width)
        depth_clean[cam.camera_id] = DepthMap(clean)

        mask = _fov_mask(cam.width, cam.height, cfg.depth_fov_shrink)
        measured = clean.copy()
        if cfg.noise_sigma > 0:
            rng = np.random.default_rng([cfg.seed, ci, 7919])
            noise = rng.normal(0.0, cfg.noise_sigma, size=measured.shape)
            valid = measured > 0
            measured[valid] = np.maximum(measured[valid] + noise[valid], 0.0)
        measured[~mask] = 0.0
        depth_noisy[cam.camera_id] = DepthMap(measured)
        cameras.append(replace(cam, depth_fov_mask=mask))

    persons = []
    for pid, spec in enumerate(cfg.persons):
        posed = model.mesh.transformed(spec.head_pose)
        probes = posed.vertices[model.probe_vertex_ids]
        face = posed.submesh(model.face_vertex_ids)
        visible: dict[str, bool] = {}
        boxes: dict[str, FaceBox] = {}
        for cam in cameras:
            vis = _probe_visibility(cam, probes, prims)
            visible[cam.camera_id] = bool(vis.any())
            if visible[cam.camera_id]:
                box = _footprint_box(cam, face)
                if box is None:
                    visible[cam.camera_id] = False
                else:
                    boxes[cam.camera_id] = box
        persons.append(
            PersonTruth(
                person_id=pid,
                spec=spec,
                skeleton=_exact_skeleton(spec, pid),
                head_pose=spec.head_pose,
                probe_points=probes,
                visible=visible,
                boxes=boxes,
            )
        )

    return SceneTruth(
        config=cfg,
        cameras=cameras,
        images=images,
        depth=depth_noisy,
        depth_clean=depth_clean,
        persons=persons,
    )


def _probe_visibility(cam: CameraParams, probes: np.ndarray, prims) -> np.ndarray:
    """Noise-free truth: probe i is visible when the segment from the camera
    center to the probe is unobstructed and lands inside the image."""
    uv, z = project_points(cam, probes)
    in_image = (
        (z > 0)
        & (uv[:, 0] >= 0)
        & (uv[:, 0] <= cam.width - 1)
        & (uv[:, 1] >= 0)
        & (uv[:, 1] <= cam.height - 1)
    )
    dirs = probes - cam.center  # probe sits at t = 1
    t_scene = np.min([p.ray(cam.center, dirs) for p in prims], axis=0)
    return in_image & (t_scene >= 1.0 - 1e-4)


def _footprint_box(cam: CameraParams, face: TriMesh) -> FaceBox | None:
    """Tight pixel bound of the face submesh as seen by the camera."""
    x0, x1, y0, y1 = _mesh_pixel_rect(cam, face, pad=1)
    if x1 < x0 or y1 < y0:
        return None
    rows, cols = np.mgrid[y0 : y1 + 1, x0 : x1 + 1]
    dc = np.stack(
        [
            (cols.ravel() - cam.cx) / cam.fx,
            (rows.ravel() - cam.cy) / cam.fy,
            np.ones(cols.size),
        ],
        axis=-1,
    )
    dirs = dc @ cam.extrinsic.rotation
    prim = _Prim("face", "mesh", mesh=face)
    t = prim.ray(cam.center, dirs)
    covered = np.isfinite(t).reshape(rows.shape)
    if not covered.any():
        return None
    rr = np.flatnonzero(covered.any(axis=1))
    cc = np.flatnonzero(covered.any(axis=0))
    return FaceBox(
        camera_id=cam.camera_id,
        x=float(x0 + cc[0]),
        y=float(y0 + rr[0]),
        w=float(cc[-1] - cc[0] + 1),
        h=float(rr[-1] - rr[0] + 1),
    )


def upright_head_pose(position, yaw_deg: float, pitch_deg: float = 0.0, roll_deg: float = 0.0) -> RigidTransform:
    """Head pose from a nose position and yaw (0 = gaze along +y)."""
    rz = rotation_about_axis((0, 0, 1), yaw_deg)
    rx = rotation_about_axis((1, 0, 0), pitch_deg)
    ry = rotation_about_axis((0, 1, 0), roll_deg)
    return RigidTransform(rz @ rx @ ry, np.asarray(position, dtype=float))


def sample_scene_config(
    seed: int,
    n_persons: int = 2,
    n_occluders: int = 1,
    noise_sigma: float = 0.0,
    width: int = 384,
    height: int = 288,
) -> SceneConfig:
    """Randomized but deterministic scene: persons around the table facing
    it, box occluders hung above the table."""
    rng = np.random.default_rng([seed, 104729])
    table_center = np.array([2250.0, 2750.0])
    persons = []
    base = rng.uniform(0.0, 360.0)
    for i in range(n_persons):
        angle = np.deg2rad(base + i * (360.0 / max(n_persons, 1)) + rng.uniform(-20, 20))
        radius = rng.uniform(1150.0, 1450.0)
        pos = np.array(
            [
                table_center[0] + radius * np.cos(angle),
                table_center[1] + radius * np.sin(angle),
                rng.uniform(1580.0, 1760.0),
            ]
        )
        # Face the table: canonical gaze is +y, so yaw rotates +y onto the
        # direction back toward the table center.
        to_table = table_center - pos[:2]
        yaw = np.degrees(np.arctan2(-to_table[0], to_table[1])) + rng.uniform(-25, 25)
        persons.append(
            PersonSpec(
                head_pose=upright_head_pose(
                    pos, yaw, pitch_deg=rng.uniform(-12, 8), roll_deg=rng.uniform(-8, 8)
                )
            )
        )
    occluders = []
    for _ in range(n_occluders):
        cx = table_center[0] + rng.uniform(-500, 500)
        cy = table_center[1] + rng.uniform(-400, 400)
        cz = rng.uniform(2050.0, 2350.0)
        half = np.array(
            [rng.uniform(175.0, 300.0), rng.uniform(175.0, 300.0), rng.uniform(30.0, 80.0)]
        )
        center = np.array([cx, cy, cz])
        occluders.append(Aabb(center - half, center + half))
    return SceneConfig(
        seed=seed,
        cameras=default_cameras(width=width, height=height),
        persons=persons,
        occluders=occluders,
        noise_sigma=noise_sigma,
    )


def generate_frames(cfg: SceneConfig, n_frames: int, model: HeadModel | None = None) -> list[SceneTruth]:
    """A short sequence: each frame jitters the person poses a little."""
    truths = []
    for f in range(n_frames):
        if f == 0:
            frame_cfg = cfg
        else:
            rng = np.random.default_rng([cfg.seed, f, 15485863])
            persons = []
            for spec in cfg.persons:
                delta = np.array([rng.uniform(-120, 120), rng.uniform(-120, 120), rng.uniform(-40, 40)])
                spin = rotation_about_axis((0, 0, 1), rng.uniform(-15, 15))
                pose = RigidTransform(
                    spin @ spec.head_pose.rotation, spec.head_pose.translation + delta
                )
                persons.append(replace(spec, head_pose=pose))
            frame_cfg = replace(cfg, persons=persons, seed=cfg.seed + 1000003 * f)
        truths.append(generate_scene(frame_cfg, model))
    return truths


def write_dataset(truths: list[SceneTruth], out_dir) -> None:
    """Write frames, calibration, skeletons, and ground truth to a directory.

    Layout: calibration.json, skeletons.json, cnXX/frame_NNNNNN.png and
    cnXX/frame_NNNNNN.depth.png per camera and frame, and truth/ holding
    boxes.json, visibility.json and poses.json.
    """
    from .geometry import save_calibration
    from .images import save_depth, save_rgb

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not truths:
        raise ValueError("no frames to write")

    save_calibration(truths[0].cameras, out / "calibration.json")

    skeleton_frames = {}
    gt_boxes = {}
    vis_doc = {"frames": []}
    pose_doc = {"frames": []}
    for f, truth in enumerate(truths):
        for cam in truth.cameras:
            stem = out / cam.camera_id / f"frame_{f:06d}"
            save_rgb(truth.images[cam.camera_id], stem.with_suffix(".png"))
            save_depth(truth.depth[cam.camera_id], stem.parent / (stem.name + ".depth.png"))
        skeleton_frames[f] = [p.skeleton for p in truth.persons]
        gt_boxes[f] = {}
        for p in truth.persons:
            for cid, box in p.boxes.items():
                gt_boxes[f].setdefault(cid, []).append(box)
        vis_doc["frames"].append(
            {
                "frame": f,
                "people": [
                    {"id": p.person_id, "cameras": {k: bool(v) for k, v in sorted(p.visible.items())}}
                    for p in truth.persons
                ],
            }
        )
        pose_doc["frames"].append(
            {
                "frame": f,
                "people": [
                    {"id": p.person_id, "pose": [[float(x) for x in row] for row in p.head_pose.matrix()]}
                    for p in truth.persons
                ],
            }
        )

    save_skeletons(skeleton_frames, out / "skeletons.json")
    truth_dir = out / "truth"
    truth_dir.mkdir(exist_ok=True)
    save_box_file(gt_boxes, truth_dir / "boxes.json")
    (truth_dir / "visibility.json").write_text(json.dumps(vis_doc, indent=2))
    (truth_dir / "poses.json").write_text(json.dumps(pose_doc, indent=2))
