"""Template head mesh: canonical-pose geometry, face region, probe vertices.

The canonical pose puts the nose tip exactly at the origin, the gaze along
+y and the top of the head along +z. The shape is a low-poly ellipsoid with
a nose bump and a tapered jaw; the two asymmetries remove every nontrivial
rotational self-symmetry, so rigid registration cannot settle on a flipped
pose with the same residual.

A head model on disk is an OBJ mesh (v / vt / f records) plus a JSON sidecar
listing `face_vertex_ids` (the renderable face region) and
`probe_vertex_ids` (15 vertices used for visibility checks).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np

from .geometry import RigidTransform

# Skeleton landmark positions in the canonical head frame (mm). The ears sit
# at the same height as the nose so their midpoint is exactly behind it, and
# everything is x-symmetric; head poses derived from clean landmarks are then
# exact, not approximate.
CANONICAL_LANDMARKS = {
    "nose": np.array([0.0, 0.0, 0.0]),
    "left_eye": np.array([-28.0, -14.0, 22.0]),
    "right_eye": np.array([28.0, -14.0, 22.0]),
    "left_ear": np.array([-74.0, -88.0, 0.0]),
    "right_ear": np.array([74.0, -88.0, 0.0]),
}

PROBE_COUNT = 15


@dataclass
class TriMesh:
    """Indexed triangle mesh; `uvs` are optional per-vertex texture coords."""

    vertices: np.ndarray
    triangles: np.ndarray
    uvs: np.ndarray | None = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(self.triangles) and (
            self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)
        ):
            raise ValueError("triangle indices out of range")
        if self.uvs is not None:
            self.uvs = np.asarray(self.uvs, dtype=float).reshape(-1, 2)
            if len(self.uvs) != len(self.vertices):
                raise ValueError("uvs must be per vertex")

    def transformed(self, t: RigidTransform) -> "TriMesh":
        return TriMesh(t.apply(self.vertices), self.triangles.copy(),
                       None if self.uvs is None else self.uvs.copy())

    def triangle_areas(self) -> np.ndarray:
        a = self.vertices[self.triangles[:, 0]]
        b = self.vertices[self.triangles[:, 1]]
        c = self.vertices[self.triangles[:, 2]]
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def submesh(self, vertex_ids) -> "TriMesh":
        """Submesh over exactly the given vertices, in the given order.

        Keeps precisely the triangles whose three corners are all listed.
        """
        ids = np.asarray(vertex_ids, dtype=np.int64)
        if len(np.unique(ids)) != len(ids):
            raise ValueError("duplicate vertex ids")
        if len(ids) and (ids.min() < 0 or ids.max() >= len(self.vertices)):
            raise ValueError("vertex ids out of range")
        remap = np.full(len(self.vertices), -1, dtype=np.int64)
        remap[ids] = np.arange(len(ids))
        keep = np.all(remap[self.triangles] >= 0, axis=1)
        return TriMesh(
            self.vertices[ids],
            remap[self.triangles[keep]],
            None if self.uvs is None else self.uvs[ids],
        )


@dataclass
class HeadModel:
    """Template mesh plus the face region and visibility probe vertices."""

    mesh: TriMesh
    face_vertex_ids: np.ndarray
    probe_vertex_ids: np.ndarray

    def __post_init__(self):
        self.face_vertex_ids = np.asarray(self.face_vertex_ids, dtype=np.int64)
        self.probe_vertex_ids = np.asarray(self.probe_vertex_ids, dtype=np.int64)
        nv = len(self.mesh.vertices)
        if len(self.face_vertex_ids) == 0:
            raise ValueError("face region must be non-empty")
        if self.face_vertex_ids.min() < 0 or self.face_vertex_ids.max() >= nv:
            raise ValueError("face vertex ids out of range")
        if len(self.probe_vertex_ids) != PROBE_COUNT:
            raise ValueError(f"expected exactly {PROBE_COUNT} probe vertices")
        if not np.all(np.isin(self.probe_vertex_ids, self.face_vertex_ids)):
            raise ValueError("probe vertices must lie in the face region")
        if self.mesh.uvs is None:
            raise ValueError("head model mesh needs texture coordinates")
        if np.any(self.mesh.triangle_areas() <= 1e-9):
            raise ValueError("template mesh contains a degenerate triangle")

    def face_mesh(self) -> TriMesh:
        return self.mesh.submesh(self.face_vertex_ids)


def farthest_point_sample(points, k: int, start: int = 0) -> np.ndarray:
    """Greedy farthest-point subset of `points`; deterministic for a fixed
    start index."""
    pts = np.asarray(points, dtype=float)
    if k > len(pts):
        raise ValueError("cannot sample more points than available")
    chosen = [start]
    dist = np.linalg.norm(pts - pts[start], axis=1)
    for _ in range(k - 1):
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(pts - pts[nxt], axis=1))
    return np.asarray(chosen, dtype=np.int64)


def build_template_model(segments: int = 28, rings: int = 20) -> HeadModel:
    """Procedurally build the canonical head template.

    Lat-long ellipsoid (poles on the z axis), semi-axes 75 x 95 x 110 mm,
    jaw tapered below the nose line and a smooth bump at the front pole of
    the y axis. After shaping, the mesh is shifted so the front-most vertex
    (the nose tip) sits exactly at the origin.
    """
    if rings % 2 != 0:
        raise ValueError("rings must be even so a vertex row sits at z = 0")
    semi = np.array([75.0, 95.0, 110.0])
    center_y = -semi[1]

    dirs = [np.array([0.0, 0.0, 1.0]), np.array([0.0, 0.0, -1.0])]
    for i in range(1, rings):
        theta = np.pi * i / rings
        for j in range(segments):
            phi = 2.0 * np.pi * j / segments
            dirs.append(
                np.array(
                    [
                        np.sin(theta) * np.sin(phi),
                        np.sin(theta) * np.cos(phi),
                        np.cos(theta),
                    ]
                )
            )
    dirs = np.asarray(dirs)

    verts = dirs * semi
    verts[:, 1] += center_y

    # Jaw taper: shrink x and y toward the vertical center axis below z = 0.
    below = verts[:, 2] < 0
    s = 1.0 - 0.22 * (verts[below, 2] / semi[2]) ** 2
    verts[below, 0] *= s
    verts[below, 1] = center_y + (verts[below, 1] - center_y) * s

    # Nose bump: push vertices near the front direction out along +y.
    front = np.clip(dirs[:, 1], 0.0, None)
    verts[:, 1] += 14.0 * front**24

    tip = int(np.argmax(verts[:, 1]))
    verts[:, 1] -= verts[tip, 1]
    verts[:, 0] -= verts[tip, 0]
    verts[:, 2] -= verts[tip, 2]

    def ring_vertex(i, j):
        return 2 + (i - 1) * segments + (j % segments)

    tris = []
    for j in range(segments):
        tris.append([0, ring_vertex(1, j), ring_vertex(1, j + 1)])
    for i in range(1, rings - 1):
        for j in range(segments):
            a = ring_vertex(i, j)
            b = ring_vertex(i, j + 1)
            c = ring_vertex(i + 1, j)
            d = ring_vertex(i + 1, j + 1)
            tris.append([a, b, c])
            tris.append([b, d, c])
    for j in range(segments):
        tris.append([1, ring_vertex(rings - 1, j + 1), ring_vertex(rings - 1, j)])

    # Face region from the undeformed directions: a cone around +y.
    azimuth = np.degrees(np.arctan2(dirs[:, 0], dirs[:, 1]))
    elevation = np.degrees(np.arcsin(np.clip(dirs[:, 2], -1.0, 1.0)))
    face_mask = (np.abs(azimuth) <= 55.0) & (elevation >= -35.0) & (elevation <= 30.0)
    face_ids = np.flatnonzero(face_mask)

    # Cylindrical texture projection over the face cone; v = 0 at the top.
    z_hi = verts[face_ids, 2].max()
    z_lo = verts[face_ids, 2].min()
    u = np.clip((azimuth + 60.0) / 120.0, 0.0, 1.0)
    v = np.clip((z_hi - verts[:, 2]) / (z_hi - z_lo), 0.0, 1.0)
    uvs = np.column_stack([u, v])

    mesh = TriMesh(verts, np.asarray(tris), uvs)
    face_pts = verts[face_ids]
    start = int(np.argmin(np.linalg.norm(face_pts, axis=1)))
    probes = face_ids[farthest_point_sample(face_pts, PROBE_COUNT, start)]
    return HeadModel(mesh, face_ids, probes)


def save_obj(mesh: TriMesh, path) -> None:
    lines = ["# head template mesh, units mm"]
    for p in mesh.vertices:
        lines.append(f"v {p[0]:.6f} {p[1]:.6f} {p[2]:.6f}")
    if mesh.uvs is not None:
        for t in mesh.uvs:
            lines.append(f"vt {t[0]:.6f} {t[1]:.6f}")
        for tri in mesh.triangles:
            a, b, c = (int(i) + 1 for i in tri)
            lines.append(f"f {a}/{a} {b}/{b} {c}/{c}")
    else:
        for tri in mesh.triangles:
            a, b, c = (int(i) + 1 for i in tri)
            lines.append(f"f {a} {b} {c}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_obj(path) -> TriMesh:
    """Parse the OBJ subset written by `save_obj` (v / vt / f, one uv per
    vertex)."""
    verts, uvs, tris = [], [], []
    for raw in Path(path).read_text().splitlines():
        parts = raw.split()
        if not parts or parts[0] == "#":
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "vt":
            uvs.append([float(x) for x in parts[1:3]])
        elif parts[0] == "f":
            idx = [int(tok.split("/")[0]) - 1 for tok in parts[1:4]]
            tris.append(idx)
    return TriMesh(
        np.asarray(verts), np.asarray(tris), np.asarray(uvs) if uvs else None
    )


def save_model(model: HeadModel, obj_path, sidecar_path=None) -> None:
    obj_path = Path(obj_path)
    if sidecar_path is None:
        sidecar_path = obj_path.with_suffix(".json")
    save_obj(model.mesh, obj_path)
    doc = {
        "face_vertex_ids": [int(i) for i in model.face_vertex_ids],
        "probe_vertex_ids": [int(i) for i in model.probe_vertex_ids],
    }
    Path(sidecar_path).write_text(json.dumps(doc, indent=2))


def load_model(obj_path, sidecar_path=None) -> HeadModel:
    obj_path = Path(obj_path)
    if sidecar_path is None:
        sidecar_path = obj_path.with_suffix(".json")
    doc = json.loads(Path(sidecar_path).read_text())
    return HeadModel(
        load_obj(obj_path),
        np.asarray(doc["face_vertex_ids"], dtype=np.int64),
        np.asarray(doc["probe_vertex_ids"], dtype=np.int64),
    )


@lru_cache(maxsize=1)
def default_model() -> HeadModel:
    """The packaged template asset (the one mesh shared across the toolkit)."""
    assets = resources.files("mvanon").joinpath("assets")
    with resources.as_file(assets.joinpath("head_template.obj")) as obj_p, \
            resources.as_file(assets.joinpath("head_template.json")) as side_p:
        return load_model(obj_p, side_p)
