"""Evaluation tests: rotated IoU, difficulty filters, AP and AOS."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rtm3d.evaluation import (
    DetectionRecord,
    DifficultyFilter,
    aos,
    average_precision,
    bev_corners,
    bev_iou,
    box_2d_iou,
    iou_3d,
)
from rtm3d.geometry import Box3D
from rtm3d.kitti import KittiLabel


def _box(x=0.0, z=10.0, w=1.6, l=3.9, h=1.5, yaw=0.0, y=1.5):
    return Box3D(dims=np.array([h, w, l]), t=np.array([x, y, z]), yaw=yaw)


def test_bev_corners_axis_aligned():
    corners = bev_corners(_box(x=1.0, z=5.0, w=2.0, l=4.0, yaw=0.0))
    xs = sorted(c[0] for c in corners)
    zs = sorted(c[1] for c in corners)
    assert xs == pytest.approx([-1.0, -1.0, 3.0, 3.0])
    assert zs == pytest.approx([4.0, 4.0, 6.0, 6.0])


def test_bev_iou_identity_and_disjoint():
    a = _box()
    assert bev_iou(a, a) == pytest.approx(1.0)
    assert bev_iou(a, _box(x=100.0)) == 0.0


def test_bev_iou_axis_aligned_closed_form():
    a = _box(x=0.0, z=10.0, w=2.0, l=4.0)
    b = _box(x=1.0, z=10.5, w=2.0, l=4.0)
    inter = (4.0 - 1.0) * (2.0 - 0.5)
    union = 8.0 + 8.0 - inter
    assert bev_iou(a, b) == pytest.approx(inter / union, abs=1e-12)


def test_bev_iou_quarter_turn_with_swapped_extents():
    a = _box(w=2.0, l=4.0, yaw=0.3)
    b = _box(w=4.0, l=2.0, yaw=0.3 + math.pi / 2)
    assert bev_iou(a, b) == pytest.approx(1.0, abs=1e-9)


@given(
    st.floats(-3.0, 3.0), st.floats(-3.0, 3.0),
    st.floats(-math.pi, math.pi), st.floats(-math.pi, math.pi),
)
@settings(max_examples=100)
def test_bev_iou_symmetric_and_bounded(dx, dz, ya, yb):
    a = _box(x=0.0, z=10.0, yaw=ya)
    b = _box(x=dx, z=10.0 + dz, yaw=yb)
    iou = bev_iou(a, b)
    assert 0.0 <= iou <= 1.0 + 1e-12
    assert iou == pytest.approx(bev_iou(b, a), abs=1e-12)


def test_iou_3d_identity_and_height_overlap():
    a = _box()
    assert iou_3d(a, a) == pytest.approx(1.0)
    # Same footprint, box b lifted by half a height: overlap h/2.
    b = Box3D(dims=a.dims.copy(), t=a.t + [0.0, a.h / 2.0, 0.0], yaw=a.yaw)
    assert iou_3d(a, b) == pytest.approx(0.5 / 1.5, abs=1e-12)
    c = Box3D(dims=a.dims.copy(), t=a.t + [0.0, 10.0, 0.0], yaw=a.yaw)
    assert iou_3d(a, c) == 0.0


def test_iou_3d_axis_aligned_closed_form():
    a = Box3D(dims=np.array([2.0, 2.0, 4.0]), t=np.array([0.0, 0.0, 10.0]), yaw=0.0)
    b = Box3D(dims=np.array([2.0, 2.0, 4.0]), t=np.array([1.0, 0.5, 11.0]), yaw=0.0)
    inter = (4.0 - 1.0) * (2.0 - 1.0) * (2.0 - 0.5)
    union = 16.0 + 16.0 - inter
    assert iou_3d(a, b) == pytest.approx(inter / union, abs=1e-12)


def test_box_2d_iou():
    assert box_2d_iou((0, 0, 10, 10), (0, 0, 10, 10)) == pytest.approx(1.0)
    assert box_2d_iou((0, 0, 10, 10), (5, 0, 15, 10)) == pytest.approx(50.0 / 150.0)
    assert box_2d_iou((0, 0, 10, 10), (20, 20, 30, 30)) == 0.0


def test_difficulty_presets():
    easy = DifficultyFilter.by_name("easy")
    assert easy.min_height == 40.0 and easy.max_occlusion == 0
    assert easy.max_truncation == pytest.approx(0.15)
    moderate = DifficultyFilter.by_name("moderate")
    assert moderate.min_height == 25.0 and moderate.max_occlusion == 1
    hard = DifficultyFilter.by_name("hard")
    assert hard.max_occlusion == 2 and hard.max_truncation == pytest.approx(0.5)
    with pytest.raises(ValueError):
        DifficultyFilter.by_name("impossible")


def _gt_label(box, bbox=(100, 100, 200, 160), truncated=0.0, occluded=0, category="Car"):
    return KittiLabel(
        type=category, truncated=truncated, occluded=occluded,
        alpha=0.0, bbox=bbox,
        dimensions=(box.h, box.w, box.l), location=tuple(box.t),
        rotation_y=box.yaw, score=None,
    )


def _det(box, score, bbox=(100, 100, 200, 160), alpha=0.0, category="Car"):
    return DetectionRecord(category=category, score=score, box=box, bbox=bbox, alpha=alpha)


def test_perfect_detections_give_unit_ap():
    gts, dets = {}, {}
    rng = np.random.default_rng(0)
    for f in range(5):
        boxes = [_box(x=6.0 * i - 6.0, z=rng.uniform(8, 40)) for i in range(3)]
        gts[f"{f:06d}"] = [_gt_label(b) for b in boxes]
        dets[f"{f:06d}"] = [_det(b, score=rng.uniform(0.5, 1.0)) for b in boxes]
    for metric in ("3d", "bev", "2d"):
        assert average_precision(dets, gts, 0.7, metric=metric).ap == 1.0
    aos_val, ap2d = aos(dets, gts)
    assert aos_val == 1.0 and ap2d == 1.0


def test_ap_hand_case_single_false_positive():
    gt_box = _box()
    gts = {"0": [_gt_label(gt_box)]}
    dets = {
        "0": [
            _det(gt_box, score=0.9),
            _det(_box(x=30.0), score=0.8, bbox=(400, 100, 500, 160)),
        ]
    }
    # Recall hits 1.0 at precision 1.0, so every 11-point sample is 1.0.
    assert average_precision(dets, gts, 0.5).ap == pytest.approx(1.0)
    # The miss case: only the false positive remains.
    assert average_precision({"0": dets["0"][1:]}, gts, 0.5).ap == 0.0


def test_ap_counts_missed_ground_truth():
    gt_a, gt_b = _box(x=-5.0), _box(x=5.0)
    gts = {"0": [_gt_label(gt_a), _gt_label(gt_b)]}
    dets = {"0": [_det(gt_a, score=0.9)]}
    curve = average_precision(dets, gts, 0.5)
    # Max recall 0.5: the five sample points above it see zero precision.
    np.testing.assert_allclose(curve.precision, [1.0] * 6 + [0.0] * 5)
    assert curve.ap == pytest.approx(6.0 / 11.0)


def test_ap_respects_difficulty_filter():
    easy_box, hard_box = _box(x=-5.0), _box(x=5.0)
    gts = {
        "0": [
            _gt_label(easy_box, bbox=(100, 100, 200, 160)),
            _gt_label(hard_box, bbox=(400, 100, 430, 110), occluded=2),
        ]
    }
    dets = {"0": [_det(easy_box, score=0.9)]}
    easy = DifficultyFilter.by_name("easy")
    assert average_precision(dets, gts, 0.5, difficulty=easy).ap == 1.0


def test_ap_ignores_dontcare_overlaps():
    gt_box = _box(x=-5.0)
    dontcare = KittiLabel(
        type="DontCare", truncated=-1, occluded=-1, alpha=-10,
        bbox=(400, 100, 500, 160), dimensions=(-1, -1, -1),
        location=(-1000, -1000, -1000), rotation_y=-10, score=None,
    )
    gts = {"0": [_gt_label(gt_box), dontcare]}
    dets = {
        "0": [
            _det(gt_box, score=0.9),
            _det(_box(x=30.0), score=0.8, bbox=(410, 110, 490, 150)),
        ]
    }
    # The second detection lands in the DontCare region: not a false positive.
    assert average_precision(dets, gts, 0.5).ap == 1.0


def test_ap_matches_exhaustive_reference():
    rng = np.random.default_rng(1)
    gts, dets = {}, {}
    for f in range(4):
        frame = f"{f:06d}"
        boxes = [_box(x=7.0 * i - 7.0, z=rng.uniform(8, 30)) for i in range(2)]
        gts[frame] = [_gt_label(b) for b in boxes]
        dets[frame] = [
            _det(
                Box3D(dims=b.dims.copy(), t=b.t + rng.normal(0, 0.4, 3) * [1, 0, 1], yaw=b.yaw),
                score=float(rng.uniform(0.1, 1.0)),
            )
            for b in boxes
        ] + [_det(_box(x=30.0, z=rng.uniform(8, 30)), score=float(rng.uniform(0.1, 1.0)),
                  bbox=(400, 100, 500, 160))]
    got = average_precision(dets, gts, 0.5, metric="bev").ap
    assert got == pytest.approx(_reference_ap(dets, gts, 0.5), abs=1e-12)


def _reference_ap(dets, gts, thr):
    """Deliberately naive AP: explicit greedy matching plus 11-point sweep."""
    scored = []
    n_gt = 0
    for frame in gts:
        gt_boxes = [(_boxof(lb), False) for lb in gts[frame]]
        gt_boxes = [list(g) for g in gt_boxes]
        n_gt += len(gt_boxes)
        for det in sorted(dets.get(frame, []), key=lambda d: -d.score):
            best, best_iou = None, thr
            for g in gt_boxes:
                if g[1]:
                    continue
                iou = bev_iou(det.box, g[0])
                if iou >= best_iou:
                    best, best_iou = g, iou
            if best is not None:
                best[1] = True
                scored.append((det.score, True))
            else:
                scored.append((det.score, False))
    scored.sort(key=lambda s: -s[0])
    ap = 0.0
    for r in [i / 10.0 for i in range(11)]:
        best_p = 0.0
        tp = fp = 0
        for _, is_tp in scored:
            tp += is_tp
            fp += not is_tp
            recall = tp / n_gt
            precision = tp / (tp + fp)
            if recall >= r:
                best_p = max(best_p, precision)
        ap += best_p / 11.0
    return ap


def _boxof(lb):
    return Box3D(dims=np.array(lb.dimensions), t=np.array(lb.location), yaw=lb.rotation_y)


def test_aos_never_exceeds_ap2d():
    rng = np.random.default_rng(2)
    for trial in range(20):
        gts, dets = {}, {}
        for f in range(3):
            frame = f"{f:06d}"
            boxes = [_box(x=7.0 * i - 7.0, z=rng.uniform(8, 30)) for i in range(2)]
            gts[frame] = [_gt_label(b, bbox=tuple(rng.uniform(0, 300, 2)) + (400, 380))
                          for b in boxes]
            dets[frame] = [
                _det(b, score=float(rng.uniform()), bbox=g.bbox,
                     alpha=float(rng.uniform(-math.pi, math.pi)))
                for b, g in zip(boxes, gts[frame])
            ]
        aos_val, ap2d = aos(dets, gts)
        assert aos_val <= ap2d + 1e-12


def test_forty_point_interpolation_option():
    gt_box = _box()
    gts = {"0": [_gt_label(gt_box)]}
    dets = {"0": [_det(gt_box, score=0.9)]}
    assert average_precision(dets, gts, 0.5, n_points=40).ap == pytest.approx(1.0)
