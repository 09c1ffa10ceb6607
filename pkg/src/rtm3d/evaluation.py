"""KITTI-style detection metrics.

Bird's-eye-view IoU intersects the two yaw-rotated footprints by
Sutherland-Hodgman polygon clipping; 3D IoU multiplies that by the
vertical interval overlap.  Average precision uses the 11-point
interpolated protocol (40-point available behind a flag), with DontCare
regions and out-of-difficulty ground truth ignored rather than counted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Box3D, wrap_to_pi
from .kitti import KittiLabel, label_to_box3d

__all__ = [
    "DetectionRecord",
    "DifficultyFilter",
    "PRCurve",
    "aos",
    "average_precision",
    "bev_corners",
    "bev_iou",
    "box_2d_iou",
    "iou_3d",
]

_AREA_EPS = 1e-9


@dataclass(frozen=True)
class DifficultyFilter:
    """KITTI difficulty gate on 2D box height, occlusion and truncation."""

    name: str
    min_height: float
    max_occlusion: int
    max_truncation: float

    def accepts(self, label: KittiLabel) -> bool:
        return (
            label.bbox_height >= self.min_height
            and label.occluded <= self.max_occlusion
            and label.truncated <= self.max_truncation
        )

    @staticmethod
    def easy() -> "DifficultyFilter":
        return DifficultyFilter("easy", 40.0, 0, 0.15)

    @staticmethod
    def moderate() -> "DifficultyFilter":
        return DifficultyFilter("moderate", 25.0, 1, 0.30)

    @staticmethod
    def hard() -> "DifficultyFilter":
        return DifficultyFilter("hard", 25.0, 2, 0.50)

    @staticmethod
    def by_name(name: str) -> "DifficultyFilter":
        presets = {
            "easy": DifficultyFilter.easy,
            "moderate": DifficultyFilter.moderate,
            "hard": DifficultyFilter.hard,
        }
        if name not in presets:
            raise ValueError(f"unknown difficulty {name!r}")
        return presets[name]()


@dataclass(frozen=True)
class PRCurve:
    recall: np.ndarray
    precision: np.ndarray
    ap: float


@dataclass
class DetectionRecord:
    """A scored detection: 3D box plus the derived 2D box and alpha."""

    category: str
    score: float
    box: Box3D
    bbox: tuple[float, float, float, float]
    alpha: float

    @staticmethod
    def from_label(label: KittiLabel) -> "DetectionRecord":
        return DetectionRecord(
            category=label.type,
            score=label.score if label.score is not None else 1.0,
            box=label_to_box3d(label),
            bbox=label.bbox,
            alpha=label.alpha,
        )


def bev_corners(box: Box3D) -> np.ndarray:
    """Footprint corners (4, 2) in the x-z ground plane, counterclockwise."""
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    half_l, half_w = box.l / 2.0, box.w / 2.0
    local = np.array(
        [
            [half_l, half_w],
            [-half_l, half_w],
            [-half_l, -half_w],
            [half_l, -half_w],
        ]
    )
    # Rotation about y maps (x, z) -> (x cos + z sin, -x sin + z cos).
    rot = np.array([[c, s], [-s, c]])
    return local @ rot.T + np.array([box.t[0], box.t[2]])


def _polygon_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, z = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(z, -1)) - np.dot(z, np.roll(x, -1))))


def _clip_polygon(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clipping of a polygon by a convex polygon."""
    # Ensure counterclockwise clip orientation for a consistent inside test.
    if _signed_area(clip) < 0:
        clip = clip[::-1]
    output = list(subject)
    for i in range(len(clip)):
        a, b = clip[i], clip[(i + 1) % len(clip)]
        edge = b - a
        if not output:
            return np.zeros((0, 2))
        input_pts = output
        output = []
        for j in range(len(input_pts)):
            p, q = input_pts[j], input_pts[(j + 1) % len(input_pts)]
            p_in = edge[0] * (p[1] - a[1]) - edge[1] * (p[0] - a[0]) >= -_AREA_EPS
            q_in = edge[0] * (q[1] - a[1]) - edge[1] * (q[0] - a[0]) >= -_AREA_EPS
            if p_in:
                output.append(p)
            if p_in != q_in:
                denom = edge[0] * (q[1] - p[1]) - edge[1] * (q[0] - p[0])
                if abs(denom) > 1e-15:
                    t = (edge[0] * (a[1] - p[1]) - edge[1] * (a[0] - p[0])) / denom
                    output.append(p + t * (q - p))
    return np.array(output) if output else np.zeros((0, 2))


def _signed_area(poly: np.ndarray) -> float:
    x, z = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(z, -1)) - np.dot(z, np.roll(x, -1)))


def bev_intersection_area(a: Box3D, b: Box3D) -> float:
    inter = _clip_polygon(bev_corners(a), bev_corners(b))
    return _polygon_area(inter)


def bev_iou(a: Box3D, b: Box3D) -> float:
    """IoU of the yaw-rotated footprints in the ground plane."""
    inter = bev_intersection_area(a, b)
    union = a.w * a.l + b.w * b.l - inter
    if union <= _AREA_EPS:
        return 0.0
    return min(max(inter / union, 0.0), 1.0)


def iou_3d(a: Box3D, b: Box3D) -> float:
    """Volume IoU; boxes are bottom-anchored with y pointing down."""
    inter_area = bev_intersection_area(a, b)
    y_overlap = max(0.0, min(a.t[1], b.t[1]) - max(a.t[1] - a.h, b.t[1] - b.h))
    inter = inter_area * y_overlap
    union = a.h * a.w * a.l + b.h * b.w * b.l - inter
    if union <= _AREA_EPS:
        return 0.0
    return min(max(inter / union, 0.0), 1.0)


def box_2d_iou(a, b) -> float:
    """Axis-aligned IoU of (left, top, right, bottom) boxes."""
    il = max(a[0], b[0])
    it = max(a[1], b[1])
    ir = min(a[2], b[2])
    ib = min(a[3], b[3])
    iw, ih = max(ir - il, 0.0), max(ib - it, 0.0)
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    if union <= 0:
        return 0.0
    return inter / union


def _interp_ap(recall, precision, n_points: int) -> tuple[np.ndarray, np.ndarray, float]:
    if n_points == 11:
        samples = np.linspace(0.0, 1.0, 11)
    else:
        samples = np.arange(1, n_points + 1) / n_points
    interp = np.zeros(len(samples))
    for i, r in enumerate(samples):
        mask = recall >= r - 1e-12
        interp[i] = precision[mask].max() if np.any(mask) else 0.0
    return samples, interp, float(interp.mean())


def _match_frames(
    detections: dict,
    ground_truths: dict,
    overlap,
    threshold: float,
    difficulty: DifficultyFilter,
    category: str,
):
    """Greedy score-descending matching per frame.

    Returns (outcomes, n_gt): outcomes is a list of
    (score, tp_flag, ignored_flag, orientation_similarity) per detection of
    the category; n_gt counts ground truths inside the difficulty filter.
    """
    outcomes = []
    n_gt = 0
    frames = sorted(set(detections) | set(ground_truths))
    for frame in frames:
        dets = [d for d in detections.get(frame, []) if d.category == category]
        gts = ground_truths.get(frame, [])
        relevant = [g for g in gts if g.type == category and difficulty.accepts(g)]
        ignored = [
            g
            for g in gts
            if g.is_dontcare or (g.type == category and not difficulty.accepts(g))
        ]
        n_gt += len(relevant)
        matched = [False] * len(relevant)
        for det in sorted(dets, key=lambda d: -d.score):
            best_iou, best_idx = 0.0, -1
            for i, gt in enumerate(relevant):
                if matched[i]:
                    continue
                o = overlap(det, gt)
                if o > best_iou:
                    best_iou, best_idx = o, i
            if best_iou >= threshold:
                matched[best_idx] = True
                sim = 0.5 * (1.0 + math.cos(wrap_to_pi(det.alpha - relevant[best_idx].alpha)))
                outcomes.append((det.score, True, False, sim))
                continue
            # Detections landing on ignored regions are neither TP nor FP.
            ignore_hit = any(
                box_2d_iou(det.bbox, g.bbox) >= threshold for g in ignored
            )
            outcomes.append((det.score, False, ignore_hit, 0.0))
    return outcomes, n_gt


def _curve_from_outcomes(outcomes, n_gt, n_points, use_similarity=False):
    kept = [(s, tp, sim) for s, tp, ign, sim in outcomes if not ign]
    if n_gt == 0 or not kept:
        return PRCurve(recall=np.zeros(0), precision=np.zeros(0), ap=0.0)
    kept.sort(key=lambda x: -x[0])
    tp = np.array([1.0 if k[1] else 0.0 for k in kept])
    sim = np.array([k[2] for k in kept])
    cum_tp = np.cumsum(tp)
    cum_all = np.arange(1, len(kept) + 1)
    recall = cum_tp / n_gt
    numerator = np.cumsum(sim) if use_similarity else cum_tp
    precision = numerator / cum_all
    samples, interp, ap = _interp_ap(recall, precision, n_points)
    return PRCurve(recall=samples, precision=interp, ap=ap)


def average_precision(
    detections: dict,
    ground_truths: dict,
    iou_threshold: float = 0.5,
    difficulty: DifficultyFilter | None = None,
    metric: str = "3d",
    category: str = "Car",
    n_points: int = 11,
) -> PRCurve:
    """Interpolated AP over frames.

    ``detections`` maps frame id to a list of :class:`DetectionRecord`;
    ``ground_truths`` maps frame id to a list of :class:`KittiLabel`.
    ``metric`` selects the overlap: "3d", "bev" or "2d".
    """
    if difficulty is None:
        difficulty = DifficultyFilter.moderate()
    if metric == "3d":
        overlap = lambda d, g: iou_3d(d.box, label_to_box3d(g))  # noqa: E731
    elif metric == "bev":
        overlap = lambda d, g: bev_iou(d.box, label_to_box3d(g))  # noqa: E731
    elif metric == "2d":
        overlap = lambda d, g: box_2d_iou(d.bbox, g.bbox)  # noqa: E731
    else:
        raise ValueError(f"unknown metric {metric!r}")
    outcomes, n_gt = _match_frames(
        detections, ground_truths, overlap, iou_threshold, difficulty, category
    )
    return _curve_from_outcomes(outcomes, n_gt, n_points)


def aos(
    detections: dict,
    ground_truths: dict,
    difficulty: DifficultyFilter | None = None,
    iou_threshold: float = 0.7,
    category: str = "Car",
    n_points: int = 11,
) -> tuple[float, float]:
    """Average orientation similarity and the matching 2D AP.

    Matching uses axis-aligned 2D IoU; each true positive contributes
    (1 + cos(alpha error)) / 2.  AOS can never exceed the returned AP.
    """
    if difficulty is None:
        difficulty = DifficultyFilter.moderate()
    overlap = lambda d, g: box_2d_iou(d.bbox, g.bbox)  # noqa: E731
    outcomes, n_gt = _match_frames(
        detections, ground_truths, overlap, iou_threshold, difficulty, category
    )
    curve_sim = _curve_from_outcomes(outcomes, n_gt, n_points, use_similarity=True)
    curve_ap = _curve_from_outcomes(outcomes, n_gt, n_points, use_similarity=False)
    return curve_sim.ap, curve_ap.ap
