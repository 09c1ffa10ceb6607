"""Energy minimization recovering a 3D box from 9 image keypoints.

The objective stacks a confidence-weighted reprojection term over the
nine keypoints with soft priors on dimensions and orientation, and is
minimized by Levenberg-Marquardt over a full se(3) twist plus the three
dimensions.  Pose updates are applied multiplicatively on the left, and
yaw is extracted from the final rotation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    _TEMPLATE_TO_CAM,
    BehindCamera,
    Box3D,
    CameraModel,
    KeypointSet,
    PoseSE3,
    Twist,
    corner_offsets,
    cor_matrix,
    exp_se3,
    log_se3,
    rot_y,
    so3_exp,
    so3_log,
    wrap_to_pi,
)

__all__ = [
    "ConfidenceWeight",
    "DivergedError",
    "EnergyWeights",
    "InsufficientConstraints",
    "Priors",
    "SolveReport",
    "SolverConfig",
    "MEAN_CAR_DIMS",
    "initialize",
    "jacobian_camera_point",
    "residual_camera_point",
    "residual_dimension",
    "residual_rotation",
    "solve",
    "total_energy",
]

# Dataset mean car dimensions (h, w, l) used when no dimension prior exists.
MEAN_CAR_DIMS = np.array([1.53, 1.62, 3.89])


class InsufficientConstraints(ValueError):
    """Too few visible keypoints for the available priors."""


class DivergedError(RuntimeError):
    """Optimization produced a non-finite cost."""


@dataclass(frozen=True)
class Priors:
    """Optional per-object priors: dimensions, orientation, center depth."""

    d_hat: np.ndarray | None = None
    theta_hat: float | None = None
    z_hat: float | None = None

    def __post_init__(self):
        if self.d_hat is not None:
            d = np.asarray(self.d_hat, dtype=float).reshape(3)
            if np.any(d <= 0):
                raise ValueError("dimension prior must be positive")
            object.__setattr__(self, "d_hat", d)
        if self.z_hat is not None and self.z_hat <= 0:
            raise ValueError("depth prior must be positive")


@dataclass(frozen=True)
class EnergyWeights:
    """Relative weights of the dimension and rotation prior terms."""

    w_d: float = 1.0
    w_r: float = 1.0

    def __post_init__(self):
        if self.w_d < 0 or self.w_r < 0:
            raise ValueError("energy weights must be non-negative")


@dataclass(frozen=True)
class SolverConfig:
    max_iter: int = 100
    g_tol: float = 1e-8
    step_tol: float = 1e-10
    lm_lambda0: float = 1e-3
    lm_lambda_max: float = 1e12
    init_box: Box3D | None = None


@dataclass(frozen=True)
class SolveReport:
    box: Box3D
    iterations: int
    final_cost: float
    converged: bool
    term_costs: dict
    # Residual rotation (axis-angle) left after removing yaw; diagnostics only.
    off_yaw: np.ndarray = field(default_factory=lambda: np.zeros(3))


@dataclass(frozen=True)
class ConfidenceWeight:
    """Softmax of the 9 keypoint confidences, expanded to the 18 residual rows."""

    sigma_diag: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.sigma_diag, dtype=float).reshape(18)
        if np.any(s <= 0):
            raise ValueError("weights must be positive")
        object.__setattr__(self, "sigma_diag", s)

    @staticmethod
    def from_confidences(conf: np.ndarray) -> "ConfidenceWeight":
        conf = np.asarray(conf, dtype=float).reshape(9)
        e = np.exp(conf - conf.max())
        w9 = e / e.sum()
        return ConfidenceWeight(sigma_diag=np.repeat(w9, 2))


def _pose_of_box(box: Box3D) -> tuple[np.ndarray, np.ndarray]:
    return rot_y(box.yaw), box.t.copy()


def _points_cam(r: np.ndarray, t: np.ndarray, dims: np.ndarray) -> np.ndarray:
    return corner_offsets(dims) @ r.T + t


def _residual_cp(
    r: np.ndarray,
    t: np.ndarray,
    dims: np.ndarray,
    kps: KeypointSet,
    cam: CameraModel,
) -> np.ndarray:
    """Stacked measured-minus-projected keypoint residual, invisible rows zeroed."""
    pts = _points_cam(r, t, dims)
    res = np.zeros(18)
    for j in range(9):
        if not kps.visible[j]:
            continue
        p = pts[j] + cam.t_cam
        if p[2] <= 1e-6:
            raise BehindCamera(f"keypoint {j} projects behind camera")
        u = cam.fx * p[0] / p[2] + cam.cx
        v = cam.fy * p[1] / p[2] + cam.cy
        res[2 * j] = kps.pts[j, 0] - u
        res[2 * j + 1] = kps.pts[j, 1] - v
    return res


def _jacobian_cp(
    r: np.ndarray, t: np.ndarray, dims: np.ndarray, cam: CameraModel
) -> np.ndarray:
    """Analytic 18x9 Jacobian of the reprojection residual.

    Columns 0-5 differentiate w.r.t. a left-multiplied twist (v, w); columns
    6-8 w.r.t. the dimensions.  Each 2x6 pose block is
    -J_pinhole @ [I, -skew(P)] with P the camera-frame point before the
    projection-matrix offset; each 2x3 dimension block chains the pinhole
    Jacobian through the rotated corner template column.
    """
    offs = corner_offsets(dims)
    cor3 = cor_matrix()[:3, :]
    # d(corner offset)/d(dims) = R @ axes_map @ diag(template column)
    jac = np.zeros((18, 9))
    pts = offs @ r.T + t
    for j in range(9):
        p = pts[j] + cam.t_cam
        x, y, z = p
        jp = np.array(
            [
                [cam.fx / z, 0.0, -cam.fx * x / z**2],
                [0.0, cam.fy / z, -cam.fy * y / z**2],
            ]
        )
        px, py, pz = pts[j]
        skew_p = np.array([[0.0, -pz, py], [pz, 0.0, -px], [-py, px, 0.0]])
        jac[2 * j : 2 * j + 2, 0:3] = -jp
        jac[2 * j : 2 * j + 2, 3:6] = -jp @ (-skew_p)
        d_off = r @ _TEMPLATE_TO_CAM @ np.diag(cor3[:, j])
        jac[2 * j : 2 * j + 2, 6:9] = -jp @ d_off
    return jac


def residual_camera_point(box: Box3D, kps: KeypointSet, cam: CameraModel) -> np.ndarray:
    r, t = _pose_of_box(box)
    return _residual_cp(r, t, box.dims, kps, cam)


def jacobian_camera_point(box: Box3D, cam: CameraModel) -> np.ndarray:
    r, t = _pose_of_box(box)
    return _jacobian_cp(r, t, box.dims, cam)


def residual_dimension(dims: np.ndarray, d_hat: np.ndarray) -> np.ndarray:
    return np.asarray(d_hat, dtype=float).reshape(3) - np.asarray(dims, dtype=float).reshape(3)


def _residual_rot(r: np.ndarray, theta_hat: float) -> np.ndarray:
    return so3_log(r.T @ rot_y(theta_hat))


def residual_rotation(yaw: float, theta_hat: float) -> np.ndarray:
    """Axis-angle of the relative rotation between yaw and its prior."""
    return _residual_rot(rot_y(yaw), theta_hat)


def total_energy(
    box: Box3D,
    kps: KeypointSet,
    cam: CameraModel,
    priors: Priors,
    weights: EnergyWeights,
    confw: ConfidenceWeight | None = None,
) -> tuple[float, dict]:
    """Weighted sum of squared residual terms plus a per-term breakdown."""
    if confw is None:
        confw = ConfidenceWeight.from_confidences(kps.conf)
    r, t = _pose_of_box(box)
    e_cp = _residual_cp(r, t, box.dims, kps, cam)
    cost_cp = float(e_cp @ (confw.sigma_diag * e_cp))
    cost_d = 0.0
    if priors.d_hat is not None and weights.w_d > 0:
        e_d = residual_dimension(box.dims, priors.d_hat)
        cost_d = weights.w_d * float(e_d @ e_d)
    cost_r = 0.0
    if priors.theta_hat is not None and weights.w_r > 0:
        e_r = _residual_rot(r, priors.theta_hat)
        cost_r = weights.w_r * float(e_r @ e_r)
    terms = {"camera_point": cost_cp, "dimension": cost_d, "rotation": cost_r}
    return cost_cp + cost_d + cost_r, terms


def initialize(priors: Priors, kps: KeypointSet, cam: CameraModel) -> tuple[Twist, np.ndarray]:
    """Initial twist and dimensions from priors and keypoint geometry.

    Depth comes from the prior when present, otherwise from a
    similar-triangles estimate using the vertical keypoint extent; the box
    center is back-projected through the pinhole at that depth.
    """
    d0 = priors.d_hat.copy() if priors.d_hat is not None else MEAN_CAR_DIMS.copy()
    yaw0 = priors.theta_hat if priors.theta_hat is not None else 0.0

    if kps.visible[8]:
        anchor = kps.pts[8]
    elif kps.n_visible > 0:
        anchor = kps.pts[kps.visible].mean(axis=0)
    else:
        anchor = np.array([cam.cx, cam.cy])

    if priors.z_hat is not None:
        depth = float(priors.z_hat)
    else:
        vis = kps.pts[kps.visible]
        extent = vis[:, 1].max() - vis[:, 1].min() if len(vis) >= 2 else 0.0
        depth = cam.fy * d0[0] / max(extent, 1.0)
    zp = depth + cam.t_cam[2]
    center = np.array(
        [
            (anchor[0] - cam.cx) * zp / cam.fx - cam.t_cam[0],
            (anchor[1] - cam.cy) * zp / cam.fy - cam.t_cam[1],
            depth,
        ]
    )
    # Center sits half a height above the bottom-face anchor (y points down).
    t0 = center + np.array([0.0, d0[0] / 2.0, 0.0])
    pose = rot_y(yaw0)
    # Recover the twist whose exponential is (pose, t0).
    return log_se3(PoseSE3(r=pose, t=t0)), d0


def _required_visible(priors: Priors) -> int:
    if priors.d_hat is not None and priors.theta_hat is not None and priors.z_hat is not None:
        return 2
    return 5


def _rot_prior_jacobian(r: np.ndarray, theta_hat: float, h: float = 1e-7) -> np.ndarray:
    """Central finite differences of the rotation-prior residual w.r.t. the
    left-perturbation rotation components."""
    jac = np.zeros((3, 3))
    for k in range(3):
        dw = np.zeros(3)
        dw[k] = h
        rp = so3_exp(dw) @ r
        rm = so3_exp(-dw) @ r
        jac[:, k] = (_residual_rot(rp, theta_hat) - _residual_rot(rm, theta_hat)) / (2 * h)
    return jac


def solve(
    kps: KeypointSet,
    cam: CameraModel,
    priors: Priors,
    weights: EnergyWeights = EnergyWeights(),
    config: SolverConfig = SolverConfig(),
) -> SolveReport:
    """Levenberg-Marquardt over (twist, dims) minimizing the full energy."""
    n_vis = kps.n_visible
    if n_vis < _required_visible(priors):
        raise InsufficientConstraints(
            f"{n_vis} visible keypoints with priors {priors} are not enough"
        )

    if config.init_box is not None:
        r = rot_y(config.init_box.yaw)
        t = config.init_box.t.copy()
        dims = config.init_box.dims.copy()
    else:
        xi0, dims = initialize(priors, kps, cam)
        pose0 = exp_se3(xi0)
        r, t = pose0.r, pose0.t.copy()

    confw = ConfidenceWeight.from_confidences(kps.conf)
    sqrt_w_cp = np.sqrt(confw.sigma_diag)
    use_d = priors.d_hat is not None and weights.w_d > 0
    use_r = priors.theta_hat is not None and weights.w_r > 0
    sqrt_wd = math.sqrt(weights.w_d) if use_d else 0.0
    sqrt_wr = math.sqrt(weights.w_r) if use_r else 0.0
    mask = np.repeat(kps.visible, 2).astype(float)

    def residual_vector(r_, t_, d_):
        rows = [sqrt_w_cp * mask * _residual_cp(r_, t_, d_, kps, cam)]
        if use_d:
            rows.append(sqrt_wd * residual_dimension(d_, priors.d_hat))
        if use_r:
            rows.append(sqrt_wr * _residual_rot(r_, priors.theta_hat))
        return np.concatenate(rows)

    def jacobian_matrix(r_, t_, d_):
        blocks = [(sqrt_w_cp * mask)[:, None] * _jacobian_cp(r_, t_, d_, cam)]
        if use_d:
            jd = np.zeros((3, 9))
            jd[:, 6:9] = -np.eye(3)
            blocks.append(sqrt_wd * jd)
        if use_r:
            jr = np.zeros((3, 9))
            jr[:, 3:6] = _rot_prior_jacobian(r_, priors.theta_hat)
            blocks.append(sqrt_wr * jr)
        return np.vstack(blocks)

    res = residual_vector(r, t, dims)
    cost = float(res @ res)
    lam = config.lm_lambda0
    converged = False
    iters = 0
    for iters in range(1, config.max_iter + 1):
        if not math.isfinite(cost):
            raise DivergedError("non-finite cost")
        jac = jacobian_matrix(r, t, dims)
        grad = jac.T @ res
        if np.abs(grad).max() < config.g_tol:
            converged = True
            iters -= 1
            break
        jtj = jac.T @ jac
        accepted = False
        while lam <= config.lm_lambda_max:
            try:
                step = np.linalg.solve(jtj + lam * np.eye(9), -grad)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            dr = so3_exp(step[3:6])
            r_new = dr @ r
            t_new = dr @ t + step[:3]
            d_new = np.maximum(dims + step[6:9], 1e-2)
            try:
                res_new = residual_vector(r_new, t_new, d_new)
            except BehindCamera:
                lam *= 10.0
                continue
            cost_new = float(res_new @ res_new)
            if math.isfinite(cost_new) and cost_new < cost:
                r, t, dims = r_new, t_new, d_new
                res, cost = res_new, cost_new
                lam = max(lam / 10.0, 1e-12)
                accepted = True
                step_norm = float(np.linalg.norm(step))
                break
            lam *= 10.0
        if not accepted:
            # Damping exhausted: at a (numerical) local minimum.
            converged = bool(np.abs(grad).max() < math.sqrt(config.g_tol))
            break
        if step_norm < config.step_tol:
            converged = True
            break

    yaw = math.atan2(r[0, 2], r[2, 2])
    try:
        off_yaw = so3_log(rot_y(yaw).T @ r)
    except Exception:
        off_yaw = np.full(3, np.nan)
    box = Box3D(dims=dims, t=t, yaw=wrap_to_pi(yaw))
    _, terms = total_energy(box, kps, cam, priors, weights, confw)
    # Report the cost of the optimized (possibly non-yaw-only) state.
    return SolveReport(
        box=box,
        iterations=iters,
        final_cost=cost,
        converged=converged,
        term_costs=terms,
        off_yaw=off_yaw,
    )
