"""Face rendering and image compositing.

The rasterizer draws the textured face submesh into a camera with a
z-buffer over the mesh's own triangles (the visibility decision is made
per face beforehand, so no scene-level occlusion test happens here).
Triangles are double-sided and interpolation is perspective-correct.

The rendered face is composited by Poisson blending: the solution matches
the source gradients inside the mask while meeting the target image on the
mask boundary, which hides the seam between the synthetic face and the
surrounding image.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.ndimage
import scipy.sparse

from .geometry import CameraParams, project_points
from .headmodel import TriMesh
from .metrics import FaceBox

POISSON_RESIDUAL_MAX = 1e-3  # max |A x - b| per channel, 0..255 scale
_NEAR_PLANE = 1e-9


class EmptyRender(RuntimeError):
    """The mesh covered no pixel in this camera."""


class EmptyMask(ValueError):
    """The blend mask has no interior after border erosion."""


@dataclass
class FaceTexture:
    """Square portrait texture sampled by the mesh UVs."""

    image: np.ndarray

    def __post_init__(self):
        self.image = np.asarray(self.image)
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise ValueError("texture must be (S, S, 3)")
        if self.image.shape[0] != self.image.shape[1]:
            raise ValueError("texture must be square")
        if self.image.shape[0] < 64:
            raise ValueError("texture must be at least 64 pixels")
        if self.image.dtype != np.uint8:
            raise ValueError("texture must be uint8")


@dataclass
class RenderedFace:
    camera_id: str
    mask: np.ndarray  # (H, W) bool coverage
    color: np.ndarray  # (H, W, 3) uint8, black outside the mask
    depth: np.ndarray  # (H, W) float, +inf outside the mask
    bbox: FaceBox  # tight bounds of the mask


def _bilinear(texture: np.ndarray, uv: np.ndarray) -> np.ndarray:
    """Sample an (S, S, 3) texture at uv in [0, 1]^2; v = 0 is the top row."""
    s = texture.shape[0]
    x = np.clip(uv[:, 0], 0.0, 1.0) * (s - 1)
    y = np.clip(uv[:, 1], 0.0, 1.0) * (s - 1)
    x0 = np.floor(x).astype(int)
    y0 = np.floor(y).astype(int)
    x1 = np.minimum(x0 + 1, s - 1)
    y1 = np.minimum(y0 + 1, s - 1)
    fx = (x - x0)[:, None]
    fy = (y - y0)[:, None]
    t = texture.astype(float)
    top = t[y0, x0] * (1 - fx) + t[y0, x1] * fx
    bot = t[y1, x0] * (1 - fx) + t[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def rasterize_face(face_mesh: TriMesh, texture: FaceTexture, cam: CameraParams) -> RenderedFace:
    """Rasterize the textured face mesh into the camera.

    Pixel centers sit at integer coordinates. A triangle with any vertex
    behind the camera is skipped (conservative near clip; faces span a few
    hundred mm and sit meters away, so partial near-plane crossings do not
    occur in practice). Raises EmptyRender when nothing lands on screen.
    """
    if face_mesh.uvs is None:
        raise ValueError("face mesh has no texture coordinates")
    uv_screen, z = project_points(cam, face_mesh.vertices)
    h, w = cam.height, cam.width
    mask = np.zeros((h, w), dtype=bool)
    zbuf = np.full((h, w), np.inf)
    color = np.zeros((h, w, 3), dtype=float)

    for tri in face_mesh.triangles:
        tz = z[tri]
        if np.min(tz) <= _NEAR_PLANE:
            continue
        p = uv_screen[tri]  # (3, 2) screen coordinates
        x0 = max(int(np.ceil(p[:, 0].min())), 0)
        x1 = min(int(np.floor(p[:, 0].max())), w - 1)
        y0 = max(int(np.ceil(p[:, 1].min())), 0)
        y1 = min(int(np.floor(p[:, 1].max())), h - 1)
        if x1 < x0 or y1 < y0:
            continue
        area = (p[1, 0] - p[0, 0]) * (p[2, 1] - p[0, 1]) - (p[1, 1] - p[0, 1]) * (
            p[2, 0] - p[0, 0]
        )
        if abs(area) < 1e-12:
            continue
        ys, xs = np.mgrid[y0 : y1 + 1, x0 : x1 + 1]
        qx = xs.ravel().astype(float)
        qy = ys.ravel().astype(float)
        # Signed barycentric weights; dividing by the signed area makes the
        # inside test sign-agnostic, so both windings rasterize.
        w0 = ((p[2, 0] - p[1, 0]) * (qy - p[1, 1]) - (p[2, 1] - p[1, 1]) * (qx - p[1, 0])) / area
        w1 = ((p[0, 0] - p[2, 0]) * (qy - p[2, 1]) - (p[0, 1] - p[2, 1]) * (qx - p[2, 0])) / area
        w2 = 1.0 - w0 - w1
        inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
        if not inside.any():
            continue
        w0, w1, w2 = w0[inside], w1[inside], w2[inside]
        px = xs.ravel()[inside]
        py = ys.ravel()[inside]
        inv_z = w0 / tz[0] + w1 / tz[1] + w2 / tz[2]
        z_px = 1.0 / inv_z
        nearer = z_px < zbuf[py, px]
        if not nearer.any():
            continue
        w0, w1, w2 = w0[nearer], w1[nearer], w2[nearer]
        px, py, z_px = px[nearer], py[nearer], z_px[nearer]
        tuv = face_mesh.uvs[tri]
        uv_px = (
            w0[:, None] * tuv[0] / tz[0]
            + w1[:, None] * tuv[1] / tz[1]
            + w2[:, None] * tuv[2] / tz[2]
        ) * z_px[:, None]
        color[py, px] = _bilinear(texture.image, uv_px)
        zbuf[py, px] = z_px
        mask[py, px] = True

    if not mask.any():
        raise EmptyRender(f"face mesh covers no pixel in camera {cam.camera_id}")

    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    bbox = FaceBox(
        camera_id=cam.camera_id,
        x=float(cols[0]),
        y=float(rows[0]),
        w=float(cols[-1] - cols[0] + 1),
        h=float(rows[-1] - rows[0] + 1),
    )
    return RenderedFace(
        camera_id=cam.camera_id,
        mask=mask,
        color=np.clip(np.rint(color), 0, 255).astype(np.uint8),
        depth=zbuf,
        bbox=bbox,
    )


def _cg_solve(a, b, x0, maxiter):
    """Conjugate gradients driven to max |A x - b| < POISSON_RESIDUAL_MAX."""
    x = x0.copy()
    r = b - a @ x
    if np.abs(r).max() < POISSON_RESIDUAL_MAX:
        return x
    p = r.copy()
    rs = float(r @ r)
    for _ in range(maxiter):
        ap = a @ p
        alpha = rs / float(p @ ap)
        x += alpha * p
        r -= alpha * ap
        if np.abs(r).max() < POISSON_RESIDUAL_MAX:
            # The recurrence residual can drift from the true one; confirm.
            r = b - a @ x
            if np.abs(r).max() < POISSON_RESIDUAL_MAX:
                return x
        rs_new = float(r @ r)
        p = r + (rs_new / rs) * p
        rs = rs_new
    raise RuntimeError("poisson solve did not reach the residual target")


def poisson_blend(target: np.ndarray, source: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Gradient-domain composite of `source` into `target` under `mask`.

    Solves the discrete Poisson equation with the source Laplacian as
    guidance and the target as Dirichlet boundary. Mask pixels on the image
    border are dropped first so every unknown has 4 in-image neighbors.
    Pixels outside the mask are returned bit-identical to the target.
    """
    target = np.asarray(target)
    source = np.asarray(source)
    m = np.asarray(mask, dtype=bool).copy()
    if target.shape != source.shape or target.shape[:2] != m.shape:
        raise ValueError("target, source and mask sizes must agree")
    if target.ndim != 3 or target.shape[2] != 3:
        raise ValueError("images must be (H, W, 3)")
    m[0, :] = m[-1, :] = False
    m[:, 0] = m[:, -1] = False
    if not m.any():
        raise EmptyMask("mask has no interior pixels")

    h, w = m.shape
    ids = np.full((h, w), -1, dtype=np.int64)
    n = int(m.sum())
    ids[m] = np.arange(n)
    yy, xx = np.nonzero(m)

    rows, cols, vals = [np.arange(n)], [np.arange(n)], [np.full(n, 4.0)]
    src = source.astype(float)
    tgt = target.astype(float)
    b = np.zeros((n, 3))
    for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        ny, nx = yy + dy, xx + dx
        nid = ids[ny, nx]
        interior = nid >= 0
        rows.append(ids[yy, xx][interior])
        cols.append(nid[interior])
        vals.append(np.full(int(interior.sum()), -1.0))
        # Source Laplacian as guidance plus Dirichlet boundary values.
        b += src[yy, xx] - src[ny, nx]
        b[~interior] += tgt[ny[~interior], nx[~interior]]
    a = scipy.sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    )

    maxiter = int(10 * np.sqrt(n) + 200)
    out = target.copy()
    solution = np.empty((n, 3))
    for ch in range(3):
        solution[:, ch] = _cg_solve(a, b[:, ch], src[yy, xx, ch], maxiter)
    out[m] = np.clip(np.rint(solution), 0, 255).astype(target.dtype)
    return out


def naive_anonymize(
    image: np.ndarray, box: FaceBox, method: str, kernel: int | None = None
) -> np.ndarray:
    """Rectangle-based anonymization baselines over the box region.

    blackout fills with zeros; pixelize replaces each kernel x kernel block
    (anchored at the box corner, partial edge blocks use their own mean)
    with its mean color; gaussian_blur smooths with sigma =
    0.3 * ((kernel - 1) / 2 - 1) + 0.8 and clamped edges. Pixels outside the
    rectangle are untouched.
    """
    image = np.asarray(image)
    h, w = image.shape[:2]
    x0 = max(0, int(np.floor(box.x)))
    y0 = max(0, int(np.floor(box.y)))
    x1 = min(w, int(np.ceil(box.x + box.w)))
    y1 = min(h, int(np.ceil(box.y + box.h)))
    if x1 <= x0 or y1 <= y0:
        raise ValueError("box does not intersect the image")
    out = image.copy()
    if method == "blackout":
        out[y0:y1, x0:x1] = 0
        return out
    if kernel is None or kernel < 1:
        raise ValueError(f"{method} needs a positive kernel size")
    if method == "pixelize":
        for by in range(y0, y1, kernel):
            for bx in range(x0, x1, kernel):
                block = out[by : min(by + kernel, y1), bx : min(bx + kernel, x1)]
                mean = block.reshape(-1, image.shape[2]).mean(axis=0)
                block[:] = np.rint(mean).astype(image.dtype)
        return out
    if method == "gaussian_blur":
        if kernel % 2 != 1:
            raise ValueError("gaussian_blur kernel must be odd")
        sigma = 0.3 * ((kernel - 1) / 2 - 1) + 0.8
        radius = (kernel - 1) // 2
        rect = out[y0:y1, x0:x1].astype(float)
        for ch in range(image.shape[2]):
            rect[..., ch] = scipy.ndimage.gaussian_filter(
                rect[..., ch], sigma, mode="nearest", truncate=radius / sigma
            )
        out[y0:y1, x0:x1] = np.clip(np.rint(rect), 0, 255).astype(image.dtype)
        return out
    raise ValueError(f"unknown anonymization method: {method}")


def anonymize_frame(
    images: dict[str, np.ndarray],
    cams: dict[str, CameraParams],
    faces,
    verdicts: dict[int, dict[str, object]],
    textures: dict[int, FaceTexture],
    naive: tuple[str, int | None] | None = None,
) -> tuple[dict[str, np.ndarray], dict[str, list[FaceBox]]]:
    """Composite every visible face into every camera image.

    `verdicts[person_id][camera_id]` carries the visibility decision for
    each face; faces judged not visible in a camera are skipped there.
    Persons are composited in ascending id order so overlaps resolve
    deterministically. When `naive` is given as (method, kernel), the
    rectangle baseline replaces Poisson blending but box geometry still
    comes from the rasterized face. Only pixels under the rendered masks
    change; untouched cameras return their input array unmodified.
    """
    order = sorted(faces, key=lambda f: f.person_id)
    out_images = dict(images)
    boxes: dict[str, list[FaceBox]] = {cid: [] for cid in cams}
    for face in order:
        texture = textures[face.person_id]
        for cid, cam in cams.items():
            verdict = verdicts[face.person_id][cid]
            if not verdict.visible:
                continue
            try:
                rendered = rasterize_face(face.face_mesh, texture, cam)
            except EmptyRender:
                continue
            try:
                if naive is not None:
                    blended = naive_anonymize(out_images[cid], rendered.bbox, *naive)
                else:
                    blended = poisson_blend(out_images[cid], rendered.color, rendered.mask)
            except EmptyMask:
                continue  # border sliver too thin to blend
            out_images[cid] = blended
            boxes[cid].append(replace(rendered.bbox, confidence=face.confidence))
    return out_images, boxes
