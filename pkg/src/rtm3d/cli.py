"""Command-line front door: synth | solve | eval | render-bev."""

from __future__ import annotations

import argparse
import logging
import os
import statistics
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import bev_svg, evaluation, kitti, synth
from .config import RunConfig, load_config, parse_config_text
from .geometry import yaw_to_alpha
from .solver import (
    EnergyWeights,
    InsufficientConstraints,
    SolverConfig,
    solve,
)

log = logging.getLogger("rtm3d")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_INTERNAL = 3


class InputError(Exception):
    """Malformed or missing input; maps to exit code 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _setup_logging():
    level = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}.get(
        os.environ.get("RTM3D_LOG", "error").lower(), logging.ERROR
    )
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _frame_id(path: Path) -> str:
    return path.stem


# ---------------------------------------------------------------------------
# synth


def cmd_synth(args) -> int:
    try:
        spec_values = parse_config_text(Path(args.spec).read_text())
    except OSError as e:
        raise InputError(f"cannot read spec file: {e}") from e
    frames = int(spec_values.pop("frames", 1))
    with_headmaps = bool(int(spec_values.pop("headmaps", 0)))
    noise = synth.NoiseSpec(
        pixel_sigma=float(spec_values.pop("pixel_sigma", 0.0)),
        dropout=float(spec_values.pop("dropout", 0.0)),
        dim_sigma=float(spec_values.pop("dim_sigma", 0.0)),
        yaw_sigma=float(spec_values.pop("yaw_sigma", 0.0)),
        depth_rel_sigma=float(spec_values.pop("depth_rel_sigma", 0.0)),
    )
    scene_kwargs = {}
    if "n_objects" in spec_values:
        scene_kwargs["n_objects"] = int(spec_values.pop("n_objects"))
    if "depth_min" in spec_values or "depth_max" in spec_values:
        scene_kwargs["depth_range"] = (
            float(spec_values.pop("depth_min", 6.0)),
            float(spec_values.pop("depth_max", 60.0)),
        )
    if "lateral_min" in spec_values or "lateral_max" in spec_values:
        scene_kwargs["lateral_range"] = (
            float(spec_values.pop("lateral_min", -12.0)),
            float(spec_values.pop("lateral_max", 12.0)),
        )
    base_seed = int(spec_values.pop("seed", args.seed if args.seed is not None else 0))
    if spec_values:
        raise InputError(f"unknown synth spec keys: {sorted(spec_values)}")

    out = Path(args.out)
    for sub in ("calib", "label_2", "priors", "keypoints") + (("headmaps",) if with_headmaps else ()):
        (out / sub).mkdir(parents=True, exist_ok=True)
    camera = synth.default_camera()
    calib_text = kitti.write_calib(kitti.camera_to_calib(camera))
    for frame in range(frames):
        spec = synth.SceneSpec(seed=base_seed + frame, **scene_kwargs)
        scene = synth.generate_scene(spec, camera)
        noisy = synth.apply_noise(scene, noise, seed=base_seed + frame + 1_000_003)
        name = f"{frame:06d}"
        (out / "calib" / f"{name}.txt").write_text(calib_text)
        (out / "label_2" / f"{name}.txt").write_text(synth.scene_gt_text(scene))
        (out / "priors" / f"{name}.txt").write_text(synth.scene_priors_text(noisy))
        (out / "keypoints" / f"{name}.txt").write_text(synth.keypoints_sidecar_text(noisy))
        if with_headmaps:
            from .heatmaps import write_headmaps

            write_headmaps(out / "headmaps" / f"{name}.rtmh", synth.encode_headmaps(scene, camera))
    print(f"wrote {frames} synthetic frame(s) to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# solve


def _solve_frame(task):
    frame, priors_path, kp_path, calib_path, cfg_dict = task
    cfg = RunConfig(**cfg_dict)
    camera = kitti.to_camera_model(kitti.parse_calib_file(calib_path))
    objects = synth.parse_scene_objects(
        Path(priors_path).read_text(), Path(kp_path).read_text()
    )
    weights = EnergyWeights(w_d=cfg.w_d, w_r=cfg.w_r)
    solver_cfg = SolverConfig(max_iter=cfg.max_iter, g_tol=cfg.g_tol, step_tol=cfg.step_tol)
    labels = []
    lines = []
    times = []
    for i, (kps, priors) in enumerate(objects):
        t0 = time.perf_counter()
        try:
            report = solve(kps, camera, priors, weights, solver_cfg)
        except InsufficientConstraints as e:
            lines.append(f"{frame} object {i}: skipped ({e})")
            continue
        times.append(time.perf_counter() - t0)
        box = report.box
        score = float(kps.conf[kps.visible].mean()) if kps.n_visible else 0.0
        vis = kps.pts[kps.visible] if kps.n_visible else kps.pts
        bbox = (
            float(vis[:, 0].min()),
            float(vis[:, 1].min()),
            float(vis[:, 0].max()),
            float(vis[:, 1].max()),
        )
        labels.append(
            kitti.box3d_to_label(
                box,
                category="Car",
                alpha=yaw_to_alpha(box.yaw, box.t),
                bbox=bbox,
                score=score,
            )
        )
        lines.append(
            f"{frame} object {i}: iters={report.iterations} cost={report.final_cost:.3e} "
            f"converged={report.converged}"
        )
    return frame, kitti.write_result_file(labels), lines, times


def cmd_solve(args) -> int:
    cfg = load_config(args.config)
    in_dir = Path(args.input)
    priors_dir = in_dir / "priors"
    kp_dir = in_dir / "keypoints"
    calib_dir = Path(args.calib) if args.calib else in_dir / "calib"
    if not priors_dir.is_dir() or not kp_dir.is_dir():
        raise InputError(f"{in_dir} must contain priors/ and keypoints/")
    if not calib_dir.exists():
        raise InputError(f"calibration path {calib_dir} does not exist")

    out = Path(args.out)
    (out / "data").mkdir(parents=True, exist_ok=True)
    tasks = []
    for priors_path in sorted(priors_dir.glob("*.txt")):
        frame = _frame_id(priors_path)
        kp_path = kp_dir / f"{frame}.txt"
        if not kp_path.exists():
            raise InputError(f"missing keypoint sidecar for frame {frame}")
        calib_path = calib_dir if calib_dir.is_file() else calib_dir / f"{frame}.txt"
        if not calib_path.exists():
            raise InputError(f"missing calibration for frame {frame}")
        tasks.append((frame, str(priors_path), str(kp_path), str(calib_path), cfg.__dict__))
    if not tasks:
        raise InputError(f"no frames found under {priors_dir}")

    all_times = []
    log_lines = []
    if args.jobs and args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_solve_frame, tasks))
    else:
        results = [_solve_frame(t) for t in tasks]
    for frame, text, lines, times in results:
        (out / "data" / f"{frame}.txt").write_text(text)
        log_lines.extend(lines)
        all_times.extend(times)
    (out / "solve_log.txt").write_text("".join(line + "\n" for line in log_lines))
    median_ms = statistics.median(all_times) * 1000.0 if all_times else 0.0
    print(f"solved {len(tasks)} frame(s); median solve time {median_ms:.3f} ms/object")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval


def _load_frames(directory: Path, parse):
    frames = {}
    for path in sorted(directory.glob("*.txt")):
        frames[_frame_id(path)] = parse(path)
    return frames


def cmd_eval(args) -> int:
    results_dir = Path(args.results)
    if (results_dir / "data").is_dir():
        results_dir = results_dir / "data"
    gt_dir = Path(args.gt)
    if (gt_dir / "label_2").is_dir():
        gt_dir = gt_dir / "label_2"
    if not results_dir.is_dir():
        raise InputError(f"results dir {results_dir} does not exist")
    if not gt_dir.is_dir():
        raise InputError(f"ground-truth dir {gt_dir} does not exist")

    det_frames = _load_frames(
        results_dir,
        lambda p: [evaluation.DetectionRecord.from_label(lb) for lb in kitti.parse_label_file(p)],
    )
    gt_frames = _load_frames(gt_dir, kitti.parse_label_file)
    missing = sorted(set(gt_frames) - set(det_frames))
    extra = sorted(set(det_frames) - set(gt_frames))
    for frame in missing:
        log.info("frame %s has ground truth but no results", frame)
    for frame in extra:
        log.info("frame %s has results but no ground truth", frame)

    difficulties = (
        [args.difficulty] if args.difficulty else ["easy", "moderate", "hard"]
    )
    iou = args.iou if args.iou is not None else 0.5
    n_points = 40 if args.forty_point else 11
    lines = [f"interpolation={n_points}point", f"iou_threshold={iou}"]
    for diff_name in difficulties:
        diff = evaluation.DifficultyFilter.by_name(diff_name)
        ap3d = evaluation.average_precision(
            det_frames, gt_frames, iou, diff, metric="3d", n_points=n_points
        ).ap
        apbev = evaluation.average_precision(
            det_frames, gt_frames, iou, diff, metric="bev", n_points=n_points
        ).ap
        aos_val, ap2d = evaluation.aos(det_frames, gt_frames, diff, n_points=n_points)
        lines.append(f"ap_3d_{diff_name}={ap3d:.6f}")
        lines.append(f"ap_bev_{diff_name}={apbev:.6f}")
        lines.append(f"aos_{diff_name}={aos_val:.6f}")
        lines.append(f"ap_2d_{diff_name}={ap2d:.6f}")
    report = "".join(line + "\n" for line in lines)
    print(report, end="")
    if args.out:
        Path(args.out).write_text(report)
    return EXIT_OK


# ---------------------------------------------------------------------------
# render-bev


def cmd_render_bev(args) -> int:
    def boxes_of(path):
        p = Path(path)
        if not p.exists():
            raise InputError(f"{p} does not exist")
        return [kitti.label_to_box3d(lb) for lb in kitti.parse_label_file(p) if not lb.is_dontcare]

    results = boxes_of(args.results) if args.results else []
    gts = boxes_of(args.gt) if args.gt else []
    svg = bev_svg.render_bev_svg(results, gts)
    Path(args.out).write_text(svg)
    print(f"wrote {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rtm3d", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate synthetic scenes")
    p_synth.add_argument("spec", help="key=value scene spec file")
    p_synth.add_argument("out", help="output directory")
    p_synth.add_argument("--seed", type=int, default=None)

    p_solve = sub.add_parser("solve", help="recover 3D boxes from keypoint files")
    p_solve.add_argument("input", help="directory with priors/ keypoints/ (and calib/)")
    p_solve.add_argument("out", help="output directory for KITTI result files")
    p_solve.add_argument("--calib", default=None, help="calib file or directory")
    p_solve.add_argument("--config", default=None, help="key=value config file")
    p_solve.add_argument("--jobs", type=int, default=1)

    p_eval = sub.add_parser("eval", help="compute AP/AOS metrics")
    p_eval.add_argument("results", help="results directory (or its data/ parent)")
    p_eval.add_argument("gt", help="ground-truth label directory")
    p_eval.add_argument("--iou", type=float, choices=[0.5, 0.7], default=None)
    p_eval.add_argument(
        "--difficulty", choices=["easy", "moderate", "hard"], default=None
    )
    p_eval.add_argument("--forty-point", action="store_true", help="40-point AP")
    p_eval.add_argument("--out", default=None, help="summary file path")

    p_render = sub.add_parser("render-bev", help="render a bird's-eye-view SVG")
    p_render.add_argument("--results", default=None, help="result label file")
    p_render.add_argument("--gt", default=None, help="ground-truth label file")
    p_render.add_argument("out", help="output SVG path")
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "synth": cmd_synth,
        "solve": cmd_solve,
        "eval": cmd_eval,
        "render-bev": cmd_render_bev,
    }
    try:
        return handlers[args.command](args)
    except InputError as e:
        print(f"rtm3d: input error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except (kitti.FieldCountError, kitti.NumericParseError, kitti.MissingP2Error) as e:
        print(f"rtm3d: input error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as e:
        print(f"rtm3d: input error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as e:  # pragma: no cover - defensive
        log.exception("internal error")
        print(f"rtm3d: internal error: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
