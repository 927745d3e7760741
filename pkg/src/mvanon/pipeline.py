"""End-to-end anonymization of a recorded multi-camera sequence.

The pipeline walks a dataset directory (calibration.json, skeletons.json,
one subdirectory per camera holding frame_NNNNNN.png color and
frame_NNNNNN.depth.png depth images), fits the template head to every
skeleton, decides per-camera visibility, composites the rendered face, and
writes the anonymized frames plus a box file and a results summary.

Runs are deterministic for a fixed config: per-person randomness is seeded
from (seed, frame, person id), so the worker count never changes output.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cloud import depth_to_cloud, merge
from .geometry import CameraParams, load_calibration
from .headfit import (
    FitFailed,
    FittedHead,
    InsufficientKeypoints,
    Skeleton3D,
    fit_head,
    head_from_pose,
    initial_head_pose,
    load_skeletons,
)
from .headmodel import HeadModel, default_model, load_model
from .images import load_depth, load_rgb, save_rgb
from .metrics import (
    EvalReport,
    crop_faces_for_quality,
    load_box_file,
    match_and_score,
    save_box_file,
    ssim,
)
from .register import GmmEmConfig, IcpConfig
from .render import FaceTexture, anonymize_frame
from .visibility import DEFAULT_THRESHOLD, check_visibility

_METHODS = ("blend", "blackout", "pixelize", "blur")


class InputError(Exception):
    """Bad user input: missing files, malformed documents, bad options."""


@dataclass
class PipelineConfig:
    input_dir: str
    output_dir: str
    seed: int = 0
    jobs: int = 1
    method: str = "blend"
    kernel: int = 16  # pixelize block size; blur kernel (rounded up to odd)
    visibility_threshold: float = DEFAULT_THRESHOLD
    half_extent: float = 200.0
    cloud_stride: int = 2
    skeleton_file: str | None = None  # default: <input_dir>/skeletons.json
    calibration_file: str | None = None  # default: <input_dir>/calibration.json
    head_model: str | None = None  # OBJ path; default: packaged template
    texture_dir: str | None = None  # round-robin by person id; default: procedural
    texture_per_person: dict = field(default_factory=dict)  # person id -> PNG path
    frames: list[int] | None = None  # subset to process; default: all
    gmm_max_iterations: int = 50
    gmm_outlier_weight: float = 0.2
    gmm_tol: float = 1e-6
    icp_iterations: int = 250
    icp_max_corr_dist: float = 100.0
    icp_tol: float = 1e-6

    def __post_init__(self):
        if self.method not in _METHODS:
            raise InputError(f"unknown method {self.method!r}, expected one of {_METHODS}")
        if self.jobs < 1:
            raise InputError("jobs must be >= 1")
        if self.cloud_stride < 1:
            raise InputError("cloud_stride must be >= 1")
        if self.visibility_threshold <= 0:
            raise InputError("visibility_threshold must be > 0")
        if self.half_extent <= 0:
            raise InputError("half_extent must be > 0")
        self.texture_per_person = {int(k): str(v) for k, v in self.texture_per_person.items()}
        try:
            self.gmm_config()
            self.icp_config()
        except ValueError as e:
            raise InputError(f"bad registration settings: {e}") from None

    def gmm_config(self) -> GmmEmConfig:
        return GmmEmConfig(
            max_iterations=self.gmm_max_iterations,
            outlier_weight=self.gmm_outlier_weight,
            tol=self.gmm_tol,
        )

    def icp_config(self) -> IcpConfig:
        return IcpConfig(
            iterations=self.icp_iterations,
            max_corr_dist=self.icp_max_corr_dist,
            tol=self.icp_tol,
        )

    @classmethod
    def from_json(cls, path, **overrides) -> "PipelineConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise InputError(f"config file not found: {path}") from None
        except json.JSONDecodeError as e:
            raise InputError(f"config file {path} is not valid JSON: {e}") from None
        if not isinstance(doc, dict):
            raise InputError(f"config file {path} must hold a JSON object")
        doc.update({k: v for k, v in overrides.items() if v is not None})
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise InputError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**doc)
        except TypeError as e:
            raise InputError(f"bad config: {e}") from None


@dataclass
class PersonOutcome:
    person_id: int
    status: str  # "registered", "fallback_pose", "skipped_keypoints"
    visible_cameras: list[str] = field(default_factory=list)
    iterations: int | None = None
    final_mse: float | None = None


@dataclass
class FrameResult:
    frame: int
    image_paths: dict[str, str]
    boxes: dict[str, list]
    people: list[PersonOutcome]
    elapsed: float  # wall seconds; reported live, never persisted


def default_texture(size: int = 128) -> FaceTexture:
    """Procedural stand-in face: skin gradient, eye patches, a mouth."""
    v, u = np.mgrid[0:size, 0:size].astype(float) / (size - 1)
    base = np.empty((size, size, 3))
    base[..., 0] = 208.0 - 26.0 * v
    base[..., 1] = 172.0 - 30.0 * v
    base[..., 2] = 148.0 - 32.0 * v
    # soft radial falloff toward the texture border
    fall = 1.0 - 0.25 * np.clip(np.hypot(u - 0.5, v - 0.55) / 0.65, 0.0, 1.0) ** 2
    base *= fall[..., None]
    for ex in (0.33, 0.67):
        eye = np.hypot((u - ex) / 0.075, (v - 0.40) / 0.05) <= 1.0
        base[eye] = (72.0, 58.0, 52.0)
        brow = np.hypot((u - ex) / 0.10, (v - 0.30) / 0.028) <= 1.0
        base[brow] = (96.0, 74.0, 60.0)
    mouth = np.hypot((u - 0.5) / 0.16, (v - 0.74) / 0.045) <= 1.0
    base[mouth] = (156.0, 92.0, 88.0)
    return FaceTexture(np.clip(np.rint(base), 0, 255).astype(np.uint8))


class _TextureBank:
    """Per-person textures: explicit assignment first, then round-robin over
    the texture directory, then the procedural default."""

    def __init__(self, cfg: PipelineConfig):
        self.explicit: dict[int, FaceTexture] = {
            pid: self._load(path) for pid, path in cfg.texture_per_person.items()
        }
        self.pool: list[FaceTexture] = []
        if cfg.texture_dir is not None:
            root = Path(cfg.texture_dir)
            if not root.is_dir():
                raise InputError(f"texture directory not found: {root}")
            files = sorted(root.glob("*.png"))
            if not files:
                raise InputError(f"texture directory has no .png files: {root}")
            self.pool = [self._load(p) for p in files]
        self.fallback = default_texture()

    @staticmethod
    def _load(path) -> FaceTexture:
        try:
            img = load_rgb(path)
        except FileNotFoundError:
            raise InputError(f"texture file not found: {path}") from None
        try:
            return FaceTexture(img)
        except ValueError as e:
            raise InputError(f"bad texture image {path}: {e}") from None

    def for_person(self, pid: int) -> FaceTexture:
        if pid in self.explicit:
            return self.explicit[pid]
        if self.pool:
            return self.pool[pid % len(self.pool)]
        return self.fallback


def _load_head_model(cfg: PipelineConfig) -> HeadModel:
    if cfg.head_model is None:
        return default_model()
    try:
        return load_model(cfg.head_model)
    except FileNotFoundError as e:
        raise InputError(f"head model not found: {e.filename}") from None
    except (ValueError, KeyError, json.JSONDecodeError) as e:
        raise InputError(f"bad head model {cfg.head_model}: {e}") from None


def _load_cameras(cfg: PipelineConfig) -> dict[str, CameraParams]:
    path = cfg.calibration_file or str(Path(cfg.input_dir) / "calibration.json")
    try:
        cams = load_calibration(path)
    except FileNotFoundError:
        raise InputError(f"calibration file not found: {path}") from None
    except (ValueError, KeyError, json.JSONDecodeError) as e:
        raise InputError(f"bad calibration file {path}: {e}") from None
    if not cams:
        raise InputError(f"calibration file {path} lists no cameras")
    return {c.camera_id: c for c in cams}


def _load_skeleton_frames(cfg: PipelineConfig) -> dict[int, list[Skeleton3D]]:
    path = cfg.skeleton_file or str(Path(cfg.input_dir) / "skeletons.json")
    try:
        return load_skeletons(path)
    except FileNotFoundError:
        raise InputError(f"skeleton file not found: {path}") from None
    except (ValueError, KeyError, json.JSONDecodeError) as e:
        raise InputError(f"bad skeleton file {path}: {e}") from None


def _discover_frames(cfg: PipelineConfig, cams: dict[str, CameraParams]) -> list[int]:
    root = Path(cfg.input_dir)
    reference: set[int] | None = None
    ref_cid = None
    for cid in sorted(cams):
        cam_dir = root / cid
        if not cam_dir.is_dir():
            raise InputError(f"camera directory missing: {cam_dir}")
        here = set()
        for p in cam_dir.glob("frame_*.png"):
            if p.name.endswith(".depth.png"):
                continue
            try:
                here.add(int(p.stem.split("_")[1]))
            except (IndexError, ValueError):
                continue
        if reference is None:
            reference, ref_cid = here, cid
        elif here != reference:
            raise InputError(f"cameras {ref_cid} and {cid} disagree on frame sets")
    if not reference:
        raise InputError(f"no frames found under {root}")
    out = sorted(reference)
    if cfg.frames is not None:
        missing = set(cfg.frames) - set(out)
        if missing:
            raise InputError(f"requested frames not on disk: {sorted(missing)}")
        out = sorted(cfg.frames)
    return out


def _person_seed(cfg_seed: int, frame: int, person_id: int) -> int:
    return int(np.random.SeedSequence([cfg_seed, frame, person_id]).generate_state(1)[0])


def _process_frame(
    cfg: PipelineConfig,
    cams: dict[str, CameraParams],
    model: HeadModel,
    textures: _TextureBank,
    frame: int,
    skels: list[Skeleton3D],
) -> FrameResult:
    t0 = time.perf_counter()
    root = Path(cfg.input_dir)
    images = {}
    depths = {}
    for cid in cams:
        stem = root / cid / f"frame_{frame:06d}"
        try:
            images[cid] = load_rgb(stem.with_suffix(".png"))
            depths[cid] = load_depth(stem.parent / (stem.name + ".depth.png"))
        except FileNotFoundError as e:
            raise InputError(f"frame {frame}: missing file {e.filename}") from None

    outcomes: list[PersonOutcome] = []
    faces: list[FittedHead] = []
    if skels:
        scene = merge(
            [depth_to_cloud(cam, depths[cid], stride=cfg.cloud_stride) for cid, cam in cams.items()]
        )
        for skel in sorted(skels, key=lambda s: s.person_id):
            outcome = PersonOutcome(person_id=skel.person_id, status="registered")
            try:
                fitted = fit_head(
                    skel,
                    scene,
                    model,
                    gmm_cfg=cfg.gmm_config(),
                    icp_cfg=cfg.icp_config(),
                    half_extent=cfg.half_extent,
                    seed=_person_seed(cfg.seed, frame, skel.person_id),
                )
                outcome.iterations = fitted.registration.iterations_used
                outcome.final_mse = float(fitted.registration.final_mse)
            except InsufficientKeypoints:
                outcome.status = "skipped_keypoints"
                outcomes.append(outcome)
                continue
            except FitFailed:
                # Depth support was missing or registration fell apart; the
                # keypoint pose still places a face worth hiding.
                pose = initial_head_pose(skel)
                fitted = head_from_pose(
                    model, pose, skel.frame_confidence, skel.person_id, method="keypoints_only"
                )
                outcome.status = "fallback_pose"
            faces.append(fitted)
            outcomes.append(outcome)

    verdicts = {
        face.person_id: {
            cid: check_visibility(face, cam, depths[cid], threshold=cfg.visibility_threshold)
            for cid, cam in cams.items()
        }
        for face in faces
    }
    by_id = {o.person_id: o for o in outcomes}
    for pid, per_cam in verdicts.items():
        by_id[pid].visible_cameras = sorted(cid for cid, v in per_cam.items() if v.visible)

    naive = None if cfg.method == "blend" else (cfg.method, cfg.kernel)
    tex_map = {face.person_id: textures.for_person(face.person_id) for face in faces}
    out_images, boxes = anonymize_frame(images, cams, faces, verdicts, tex_map, naive=naive)

    out_root = Path(cfg.output_dir)
    image_paths = {}
    for cid, img in out_images.items():
        path = out_root / cid / f"frame_{frame:06d}.png"
        save_rgb(img, path)
        image_paths[cid] = str(path)

    return FrameResult(
        frame=frame,
        image_paths=image_paths,
        boxes=boxes,
        people=outcomes,
        elapsed=time.perf_counter() - t0,
    )


def results_document(cfg: PipelineConfig, results: list[FrameResult]) -> dict:
    """JSON-ready summary. Timings are deliberately left out so reruns with
    the same seed serialize identically."""
    return {
        "config": {
            "input_dir": cfg.input_dir,
            "output_dir": cfg.output_dir,
            "seed": cfg.seed,
            "method": cfg.method,
            "kernel": cfg.kernel,
            "visibility_threshold": cfg.visibility_threshold,
            "half_extent": cfg.half_extent,
            "cloud_stride": cfg.cloud_stride,
        },
        "frames": [
            {
                "frame": r.frame,
                "people": [
                    {
                        "id": o.person_id,
                        "status": o.status,
                        "visible_cameras": o.visible_cameras,
                        "iterations": o.iterations,
                        "final_mse": o.final_mse,
                    }
                    for o in r.people
                ],
            }
            for r in results
        ],
        "summary": {
            "frames": len(results),
            "people": sum(len(r.people) for r in results),
            "registered": sum(1 for r in results for o in r.people if o.status == "registered"),
            "fallback_pose": sum(
                1 for r in results for o in r.people if o.status == "fallback_pose"
            ),
            "skipped": sum(
                1 for r in results for o in r.people if o.status == "skipped_keypoints"
            ),
        },
    }


def run_anonymize(cfg: PipelineConfig) -> list[FrameResult]:
    """Process every frame; writes images, boxes.json, and results.json."""
    if not Path(cfg.input_dir).is_dir():
        raise InputError(f"input directory not found: {cfg.input_dir}")
    cams = _load_cameras(cfg)
    skeleton_frames = _load_skeleton_frames(cfg)
    frames = _discover_frames(cfg, cams)
    ghost = set(skeleton_frames) - set(frames)
    if ghost and cfg.frames is None:
        raise InputError(f"skeleton file references frames not on disk: {sorted(ghost)}")
    model = _load_head_model(cfg)
    textures = _TextureBank(cfg)

    def work(frame: int) -> FrameResult:
        return _process_frame(cfg, cams, model, textures, frame, skeleton_frames.get(frame, []))

    if cfg.jobs == 1:
        results = [work(f) for f in frames]
    else:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(work, frames))

    out_root = Path(cfg.output_dir)
    save_box_file({r.frame: r.boxes for r in results}, out_root / "boxes.json")
    doc = results_document(cfg, results)
    (out_root / "results.json").write_text(json.dumps(doc, indent=2))
    return results


def run_evaluate(pred_path, truth_path, iou_threshold: float = 0.4) -> EvalReport:
    """Score a prediction box file against a ground-truth box file."""
    try:
        preds = load_box_file(pred_path)
    except FileNotFoundError:
        raise InputError(f"prediction box file not found: {pred_path}") from None
    except (ValueError, KeyError, json.JSONDecodeError) as e:
        raise InputError(f"bad prediction box file: {e}") from None
    try:
        gts = load_box_file(truth_path)
    except FileNotFoundError:
        raise InputError(f"truth box file not found: {truth_path}") from None
    except (ValueError, KeyError, json.JSONDecodeError) as e:
        raise InputError(f"bad truth box file: {e}") from None
    try:
        return match_and_score(preds, gts, iou_threshold=iou_threshold)
    except ValueError as e:
        raise InputError(str(e)) from None


def run_quality(original_dir, anonymized_dir, boxes_path, external: dict | None = None) -> dict:
    """Structural similarity between original and anonymized face crops.

    Crops come from the prediction boxes; higher mean SSIM means the
    anonymized output stays closer to the source image structure. Externally
    computed scores (e.g. fid, lpips) can be merged into the report.
    """
    try:
        boxes = load_box_file(boxes_path)
    except FileNotFoundError:
        raise InputError(f"box file not found: {boxes_path}") from None
    except (ValueError, KeyError, json.JSONDecodeError) as e:
        raise InputError(f"bad box file: {e}") from None

    per_camera: dict[str, list[float]] = {}
    n_crops = 0
    for frame, cam_boxes in sorted(boxes.items()):
        for cid, blist in sorted(cam_boxes.items()):
            if not blist:
                continue
            orig_p = Path(original_dir) / cid / f"frame_{frame:06d}.png"
            anon_p = Path(anonymized_dir) / cid / f"frame_{frame:06d}.png"
            try:
                orig = load_rgb(orig_p)
                anon = load_rgb(anon_p)
            except FileNotFoundError as e:
                raise InputError(f"missing frame image: {e.filename}") from None
            crops_o = crop_faces_for_quality({cid: orig}, blist)
            crops_a = crop_faces_for_quality({cid: anon}, blist)
            for co, ca in zip(crops_o, crops_a):
                # tiny faces get a window that still fits the crop
                win = min(8, co.shape[0], co.shape[1])
                per_camera.setdefault(cid, []).append(ssim(co, ca, window=win))
                n_crops += 1

    report: dict = {"crops": n_crops, "warnings": []}
    if n_crops == 0:
        report["mean_ssim"] = None
        report["per_camera"] = {}
        report["warnings"].append("no face crops to score")
    else:
        report["mean_ssim"] = float(np.mean([s for v in per_camera.values() for s in v]))
        report["per_camera"] = {cid: float(np.mean(v)) for cid, v in sorted(per_camera.items())}
    if external:
        for key in ("fid", "lpips"):
            if key in external:
                report[key] = external[key]
    return report
