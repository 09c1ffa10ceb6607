"""Parsing and writing of KITTI object labels, calibration and results.

Label lines carry 15 space-delimited fields (16 with a detection score).
Writers use the 2-decimal fixed formatting of the KITTI submission
convention, so parse(write(x)) reproduces every field within 0.005.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import Box3D, CameraModel

__all__ = [
    "FieldCountError",
    "KittiCalib",
    "KittiLabel",
    "MissingP2Error",
    "NumericParseError",
    "box3d_to_label",
    "label_to_box3d",
    "parse_calib",
    "parse_calib_file",
    "parse_label_file",
    "parse_labels",
    "to_camera_model",
    "write_result_file",
]


class FieldCountError(ValueError):
    def __init__(self, line_no: int, count: int):
        super().__init__(f"line {line_no}: expected 15 or 16 fields, got {count}")
        self.line_no = line_no


class NumericParseError(ValueError):
    def __init__(self, line_no: int, token: str):
        super().__init__(f"line {line_no}: cannot parse number {token!r}")
        self.line_no = line_no
        self.token = token


class MissingP2Error(ValueError):
    """Calibration text has no P2 line."""


@dataclass
class KittiLabel:
    type: str
    truncated: float
    occluded: int
    alpha: float
    bbox: tuple[float, float, float, float]  # left, top, right, bottom
    dimensions: tuple[float, float, float]  # h, w, l
    location: tuple[float, float, float]  # x, y, z (bottom center)
    rotation_y: float
    score: float | None = None

    @property
    def is_dontcare(self) -> bool:
        return self.type == "DontCare"

    @property
    def bbox_height(self) -> float:
        return self.bbox[3] - self.bbox[1]


@dataclass
class KittiCalib:
    p2: np.ndarray  # 3x4 projection matrix

    def __post_init__(self):
        p2 = np.asarray(self.p2, dtype=float).reshape(3, 4)
        if p2[0, 0] <= 0 or p2[1, 1] <= 0:
            raise ValueError("P2 focal lengths must be positive")
        self.p2 = p2


def parse_labels(text: str) -> list[KittiLabel]:
    """Parse label/result text; raises with the offending line number."""
    labels = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split()
        if len(fields) not in (15, 16):
            raise FieldCountError(line_no, len(fields))
        vals = []
        for token in fields[1:]:
            try:
                vals.append(float(token))
            except ValueError:
                raise NumericParseError(line_no, token) from None
        labels.append(
            KittiLabel(
                type=fields[0],
                truncated=vals[0],
                occluded=int(vals[1]),
                alpha=vals[2],
                bbox=(vals[3], vals[4], vals[5], vals[6]),
                dimensions=(vals[7], vals[8], vals[9]),
                location=(vals[10], vals[11], vals[12]),
                rotation_y=vals[13],
                score=vals[14] if len(vals) == 15 else None,
            )
        )
    return labels


def parse_label_file(path) -> list[KittiLabel]:
    return parse_labels(Path(path).read_text())


def format_label(label: KittiLabel) -> str:
    fields = [
        label.type,
        f"{label.truncated:.2f}",
        str(int(label.occluded)),
        f"{label.alpha:.2f}",
        *(f"{v:.2f}" for v in label.bbox),
        *(f"{v:.2f}" for v in label.dimensions),
        *(f"{v:.2f}" for v in label.location),
        f"{label.rotation_y:.2f}",
    ]
    if label.score is not None:
        fields.append(f"{label.score:.2f}")
    return " ".join(fields)


def write_result_file(labels: list[KittiLabel]) -> str:
    """Serialize labels/results; empty list yields an empty string."""
    if not labels:
        return ""
    return "\n".join(format_label(lb) for lb in labels) + "\n"


def parse_calib(text: str) -> KittiCalib:
    for line in text.splitlines():
        if line.startswith("P2:") or line.startswith("P2 "):
            tokens = line.split()[1:]
            if len(tokens) != 12:
                raise MissingP2Error(f"P2 line has {len(tokens)} values, expected 12")
            return KittiCalib(p2=np.array([float(t) for t in tokens]).reshape(3, 4))
    raise MissingP2Error("no P2 line found")


def parse_calib_file(path) -> KittiCalib:
    return parse_calib(Path(path).read_text())


def to_camera_model(calib: KittiCalib) -> CameraModel:
    """Split P2 = K [I | t] into pinhole intrinsics and a camera offset."""
    p2 = calib.p2
    fx, fy = p2[0, 0], p2[1, 1]
    cx, cy = p2[0, 2], p2[1, 2]
    tz = p2[2, 3]
    tx = (p2[0, 3] - cx * tz) / fx
    ty = (p2[1, 3] - cy * tz) / fy
    return CameraModel(fx=fx, fy=fy, cx=cx, cy=cy, t_cam=np.array([tx, ty, tz]))


def camera_to_calib(cam: CameraModel) -> KittiCalib:
    k = np.array([[cam.fx, 0.0, cam.cx], [0.0, cam.fy, cam.cy], [0.0, 0.0, 1.0]])
    p2 = np.hstack([k, (k @ cam.t_cam).reshape(3, 1)])
    return KittiCalib(p2=p2)


def write_calib(calib: KittiCalib) -> str:
    return "P2: " + " ".join(f"{v:.12e}" for v in calib.p2.reshape(-1)) + "\n"


def label_to_box3d(label: KittiLabel) -> Box3D:
    """KITTI (h, w, l, location, rotation_y) to a Box3D; both are
    bottom-center anchored."""
    return Box3D(dims=np.array(label.dimensions), t=np.array(label.location), yaw=label.rotation_y)


def box3d_to_label(
    box: Box3D,
    category: str = "Car",
    alpha: float | None = None,
    bbox: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0),
    score: float | None = None,
    truncated: float = 0.0,
    occluded: int = 0,
) -> KittiLabel:
    from .geometry import yaw_to_alpha

    if alpha is None:
        alpha = yaw_to_alpha(box.yaw, box.t)
    return KittiLabel(
        type=category,
        truncated=truncated,
        occluded=occluded,
        alpha=alpha,
        bbox=bbox,
        dimensions=(box.h, box.w, box.l),
        location=tuple(box.t),
        rotation_y=box.yaw,
        score=score,
    )
