"""Detection and image-quality metrics for evaluating anonymization runs.

Box files are JSON: {"frames": [{"frame": n, "cameras": {cam_id: [{"x", "y",
"w", "h", "conf"?}, ...]}}]}. Ground-truth boxes omit "conf".
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

LUMA_WEIGHTS = (0.299, 0.587, 0.114)  # ITU-R 601


@dataclass(frozen=True)
class FaceBox:
    """Axis-aligned pixel rectangle with a detection confidence."""

    camera_id: str
    x: float
    y: float
    w: float
    h: float
    confidence: float = 1.0

    def __post_init__(self):
        if self.w < 0 or self.h < 0:
            raise ValueError("box width and height must be non-negative")


# frame id -> camera id -> boxes
BoxSet = dict[int, dict[str, list[FaceBox]]]


def iou(a: FaceBox, b: FaceBox) -> float:
    """Intersection over union of two boxes; 0 when the union is empty."""
    ix = max(0.0, min(a.x + a.w, b.x + b.w) - max(a.x, b.x))
    iy = max(0.0, min(a.y + a.h, b.y + b.h) - max(a.y, b.y))
    inter = ix * iy
    union = a.w * a.h + b.w * b.h - inter
    if union <= 0:
        return 0.0
    return inter / union


def save_box_file(boxes: BoxSet, path) -> None:
    doc = {"frames": []}
    for fid in sorted(boxes):
        cams = {}
        for cid in sorted(boxes[fid]):
            cams[cid] = [
                {
                    "x": float(b.x),
                    "y": float(b.y),
                    "w": float(b.w),
                    "h": float(b.h),
                    "conf": float(b.confidence),
                }
                for b in boxes[fid][cid]
            ]
        doc["frames"].append({"frame": int(fid), "cameras": cams})
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True))


def load_box_file(path) -> BoxSet:
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, dict) or "frames" not in doc:
        raise ValueError("box file must be an object with a 'frames' list")
    out: BoxSet = {}
    for rec in doc["frames"]:
        fid = int(rec["frame"])
        if fid in out:
            raise ValueError(f"duplicate frame {fid} in box file")
        out[fid] = {}
        for cid, blist in rec.get("cameras", {}).items():
            out[fid][cid] = [
                FaceBox(
                    camera_id=cid,
                    x=float(b["x"]),
                    y=float(b["y"]),
                    w=float(b["w"]),
                    h=float(b["h"]),
                    confidence=float(b.get("conf", 1.0)),
                )
                for b in blist
            ]
    return out


@dataclass
class CameraScore:
    ap: float
    recall: float
    tp: int
    fp: int
    fn: int


@dataclass
class EvalReport:
    iou_threshold: float
    per_camera: dict[str, CameraScore]
    average_ap: float
    average_recall: float
    pooled_recall: float  # total TP / total GT across cameras
    warnings: list[str] = field(default_factory=list)
    fid: float | None = None  # slot for an externally computed value
    lpips: float | None = None  # slot for an externally computed value

    def to_dict(self) -> dict:
        return {
            "iou_threshold": self.iou_threshold,
            "per_camera": {
                cid: {
                    "ap": s.ap,
                    "recall": s.recall,
                    "tp": s.tp,
                    "fp": s.fp,
                    "fn": s.fn,
                }
                for cid, s in sorted(self.per_camera.items())
            },
            "average_ap": self.average_ap,
            "average_recall": self.average_recall,
            "pooled_recall": self.pooled_recall,
            "warnings": list(self.warnings),
            "fid": self.fid,
            "lpips": self.lpips,
        }

    def table(self) -> str:
        """Plain-text per-camera table with an average row."""
        t = self.iou_threshold
        lines = [f"{'camera':<10}{f'AP @ {t:g}':>12}{f'RR @ {t:g}':>12}"]
        for cid in sorted(self.per_camera):
            s = self.per_camera[cid]
            lines.append(f"{cid:<10}{s.ap:>12.4f}{s.recall:>12.4f}")
        lines.append(f"{'Avg.':<10}{self.average_ap:>12.4f}{self.average_recall:>12.4f}")
        return "\n".join(lines)


def _interpolated_ap(tp_flags: list[bool], gt_total: int) -> float:
    """All-point interpolated area under the precision-recall curve."""
    if gt_total == 0 or not tp_flags:
        return 0.0
    tp = np.cumsum(np.asarray(tp_flags, dtype=float))
    fp = np.cumsum(~np.asarray(tp_flags, dtype=bool))
    recall = tp / gt_total
    precision = tp / (tp + fp)
    # Max precision at any recall >= r, scanned from the right.
    interp = np.maximum.accumulate(precision[::-1])[::-1]
    ap = 0.0
    prev_r = 0.0
    for r, p in zip(recall, interp):
        if r > prev_r:
            ap += (r - prev_r) * p
            prev_r = r
    return float(ap)


def match_and_score(preds: BoxSet, gts: BoxSet, iou_threshold: float = 0.4) -> EvalReport:
    """Greedy confidence-ordered one-to-one matching, then AP and recall.

    Predictions are processed per camera in descending confidence (ties by
    frame, then by in-frame index); each one matches the unmatched ground
    truth box of the same frame with the highest IOU at or above the
    threshold, lower ground-truth index winning exact ties.
    """
    if not 0 < iou_threshold <= 1:
        raise ValueError("iou_threshold must lie in (0, 1]")
    if set(preds.keys()) != set(gts.keys()):
        raise ValueError(
            "prediction and ground-truth files cover different frame sets"
        )

    cameras = sorted(
        {cid for byframe in (preds, gts) for f in byframe.values() for cid in f}
    )
    per_camera: dict[str, CameraScore] = {}
    warnings: list[str] = []
    total_tp = 0
    total_gt = 0

    for cid in cameras:
        entries = []
        for fid in sorted(preds):
            for i, box in enumerate(preds[fid].get(cid, [])):
                entries.append((-box.confidence, fid, i, box))
        entries.sort(key=lambda e: e[:3])

        gt_boxes = {fid: gts[fid].get(cid, []) for fid in gts}
        gt_total = sum(len(v) for v in gt_boxes.values())
        matched: dict[int, set[int]] = {fid: set() for fid in gt_boxes}

        tp_flags: list[bool] = []
        for _, fid, _, box in entries:
            best_iou = 0.0
            best_gt = -1
            for gi, gt in enumerate(gt_boxes[fid]):
                if gi in matched[fid]:
                    continue
                v = iou(box, gt)
                if v >= iou_threshold and v > best_iou:
                    best_iou = v
                    best_gt = gi
            if best_gt >= 0:
                matched[fid].add(best_gt)
                tp_flags.append(True)
            else:
                tp_flags.append(False)

        tp = sum(tp_flags)
        fp = len(tp_flags) - tp
        fn = gt_total - tp
        if gt_total == 0:
            if entries:
                warnings.append(
                    f"{cid}: {len(entries)} predictions but zero ground-truth boxes"
                )
                ap = recall = 0.0
            else:
                ap = recall = 1.0  # nothing to find, nothing found
        else:
            ap = _interpolated_ap(tp_flags, gt_total)
            recall = tp / gt_total
        per_camera[cid] = CameraScore(ap=ap, recall=recall, tp=tp, fp=fp, fn=fn)
        total_tp += tp
        total_gt += gt_total

    scored = [
        cid
        for cid in cameras
        if per_camera[cid].tp + per_camera[cid].fp + per_camera[cid].fn > 0
    ]
    avg_ap = float(np.mean([per_camera[c].ap for c in scored])) if scored else 0.0
    avg_rr = float(np.mean([per_camera[c].recall for c in scored])) if scored else 0.0
    return EvalReport(
        iou_threshold=iou_threshold,
        per_camera=per_camera,
        average_ap=avg_ap,
        average_recall=avg_rr,
        pooled_recall=(total_tp / total_gt) if total_gt else 0.0,
        warnings=warnings,
    )


def _to_gray(img: np.ndarray) -> np.ndarray:
    a = np.asarray(img, dtype=float)
    if a.ndim == 3 and a.shape[2] == 3:
        r, g, b = LUMA_WEIGHTS
        return r * a[..., 0] + g * a[..., 1] + b * a[..., 2]
    if a.ndim == 2:
        return a
    raise ValueError("images must be (H, W) or (H, W, 3)")


def _window_sums(x: np.ndarray, w: int) -> np.ndarray:
    c = np.cumsum(np.cumsum(x, axis=0), axis=1)
    c = np.pad(c, ((1, 0), (1, 0)))
    return c[w:, w:] - c[:-w, w:] - c[w:, :-w] + c[:-w, :-w]


def ssim(a, b, window: int = 8) -> float:
    """Mean structural similarity over all dense `window` x `window` patches.

    Operates on 8-bit intensities (color is converted to luma first) with
    the standard stabilizers C1 = (0.01 * 255)^2 and C2 = (0.03 * 255)^2
    and population statistics per window.
    """
    ga = _to_gray(a)
    gb = _to_gray(b)
    if ga.shape != gb.shape:
        raise ValueError("images must have equal dimensions")
    if min(ga.shape) < window:
        raise ValueError(f"images must be at least {window} pixels on each side")
    c1 = (0.01 * 255.0) ** 2
    c2 = (0.03 * 255.0) ** 2
    n = window * window
    mu_a = _window_sums(ga, window) / n
    mu_b = _window_sums(gb, window) / n
    var_a = _window_sums(ga * ga, window) / n - mu_a**2
    var_b = _window_sums(gb * gb, window) / n - mu_b**2
    cov = _window_sums(ga * gb, window) / n - mu_a * mu_b
    s = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    )
    return float(s.mean())


def crop_faces_for_quality(images: dict[str, np.ndarray], boxes) -> list[np.ndarray]:
    """Cut the box regions out of their camera images, clamped to bounds.

    Boxes that do not intersect their image at all are dropped.
    """
    crops = []
    for box in boxes:
        img = images[box.camera_id]
        h, w = img.shape[:2]
        x0 = max(0, int(np.floor(box.x)))
        y0 = max(0, int(np.floor(box.y)))
        x1 = min(w, int(np.ceil(box.x + box.w)))
        y1 = min(h, int(np.ceil(box.y + box.h)))
        if x1 <= x0 or y1 <= y0:
            continue
        crops.append(img[y0:y1, x0:x1].copy())
    return crops


def merge_external_metrics(report: EvalReport, extra: dict) -> EvalReport:
    """Attach externally computed FID / LPIPS values to a report."""
    return replace(
        report,
        fid=extra.get("fid", report.fid),
        lpips=extra.get("lpips", report.lpips),
    )
