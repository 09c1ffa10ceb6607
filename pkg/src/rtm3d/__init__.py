"""Monocular 3D box recovery from nine projected keypoints.

Subpackages: geometry (SE(3) and projection math), solver (energy
minimization), heatmaps (dense-map encode/decode and losses), kitti
(label/calib I/O), synth (synthetic scene oracle), evaluation (rotated
IoU, AP, AOS), bev_svg and cli (rendering and the command line).
"""

from .geometry import Box3D, CameraModel, KeypointSet, PoseSE3, Twist
from .solver import EnergyWeights, Priors, SolveReport, solve

__all__ = [
    "Box3D",
    "CameraModel",
    "EnergyWeights",
    "KeypointSet",
    "PoseSE3",
    "Priors",
    "SolveReport",
    "Twist",
    "solve",
]

__version__ = "0.1.0"
