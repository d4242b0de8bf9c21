"""Command-line entry points.

Subcommands: calibrate (synthetic or file session), simulate (write a
dataset), run (process frames into a session log plus timing report),
eval-depth / eval-seg (metric tables against ground truth), register
(one-shot registration diagnostics), report (modality comparison), serve
(interactive frame service).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import formats
from .calibration import (CalibrationSession, HandEyeSet, PlanarView,
                          PointPairSet, run_calibration)
from .pipeline import (PipelineConfig, build_pipeline, timing_report)
from .reconstruction import (depth_metrics, disparity_to_depth, erode_mask,
                             pr_curve_area, remove_small_objects, seg_metrics)
from .session import (compare_modalities, read_session_jsonl,
                      write_session_jsonl)
from .simscene import (CalibrationNoise, NoiseSpec, apply_noise,
                       default_scene, export_dataset, import_dataset,
                       lymphadenectomy_script, synthesize_calibration_session)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, default=None,
                   help="pipeline config JSON; flags override its fields")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=None, help="output directory")


def _pipeline_config(args) -> PipelineConfig:
    cfg = PipelineConfig()
    if getattr(args, "config", None):
        cfg = PipelineConfig.from_dict(formats.load_json(args.config))
    cfg.seed = args.seed
    if getattr(args, "modality", None):
        cfg.modality = args.modality
    return cfg


def _noise_from_args(args) -> NoiseSpec:
    return NoiseSpec(disp_sigma_px=args.disp_sigma_px,
                     disp_quant_px=args.disp_quant_px,
                     disp_dropout=args.disp_dropout,
                     mask_jitter_px=args.mask_jitter_px,
                     blob_rate=args.blob_rate,
                     pose_sigma_m=args.pose_sigma_m)


def _add_noise_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--disp-sigma-px", type=float, default=0.0)
    p.add_argument("--disp-quant-px", type=float, default=0.0)
    p.add_argument("--disp-dropout", type=float, default=0.0)
    p.add_argument("--mask-jitter-px", type=int, default=0)
    p.add_argument("--blob-rate", type=float, default=0.0)
    p.add_argument("--pose-sigma-m", type=float, default=0.0)


def cmd_calibrate(args) -> int:
    if args.session:
        d = formats.load_json(args.session)
        session = CalibrationSession(
            views=[PlanarView(object_points=np.asarray(v["object_points_m"]),
                              image_points=np.asarray(v["image_points_px"]))
                   for v in d["views"]],
            hand_pairs=PointPairSet(left=np.asarray(d["hand_hand"]["left_m"]),
                                    right=np.asarray(d["hand_hand"]["right_m"])),
            hand_eye=HandEyeSet(ee_points=np.asarray(d["hand_eye"]["ee_points_m"]),
                                image_points=np.asarray(d["hand_eye"]["image_points_px"])),
            width=d["width_px"], height=d["height_px"])
    else:
        session = synthesize_calibration_session(
            seed=args.seed,
            noise=CalibrationNoise(pixel_sigma_px=args.pixel_sigma_px,
                                   ee_sigma_m=args.ee_sigma_m),
            n_views=args.views)
    outcome = run_calibration(session)
    report = {
        "intrinsics": formats.intrinsics_to_dict(outcome.intrinsics),
        "t_ee1_ee2": formats.transform_to_dict(outcome.t_ee1_ee2),
        "t_ecm_lcam": formats.transform_to_dict(outcome.t_ecm_lcam),
        "errors": outcome.error_report(),
    }
    print(f"{'Component':<24}{'Metric':<14}Value / Unit")
    print("-" * 58)
    for name, row in outcome.error_report().items():
        print(f"{name:<24}{row['metric']:<14}{row['value']:.4f} ({row['unit']})")
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        formats.save_json(args.out / "calibration.json", report)
        print(f"wrote {args.out / 'calibration.json'}")
    return 0


def cmd_simulate(args) -> int:
    scene = default_scene(n_nodes=args.nodes)
    script = lymphadenectomy_script(scene, seconds_per_pick=args.seconds_per_pick)
    noise = _noise_from_args(args)
    if all(getattr(noise, f) == 0 for f in ("disp_sigma_px", "disp_quant_px",
                                            "disp_dropout", "mask_jitter_px",
                                            "blob_rate", "pose_sigma_m")):
        noise = None
    export_dataset(scene, script, args.frames, args.out, noise=noise,
                   seed=args.seed)
    print(f"wrote {args.frames} frames to {args.out}")
    return 0


def cmd_run(args) -> int:
    cfg = _pipeline_config(args)
    if args.dataset:
        cfg.provider = "files"
        cfg.dataset_dir = str(args.dataset)
    elif args.noisy:
        cfg.provider = "noisy"
        cfg.noise = _noise_from_args(args)
    pipe = build_pipeline(cfg)
    results = pipe.run(args.frames)
    report = timing_report(results)
    print(report.to_text())
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        write_session_jsonl(pipe.log, args.out / "session.jsonl")
        formats.save_json(args.out / "timing.json", report.as_dict())
        if args.save_frames:
            for r in results:
                formats.write_ppm(args.out / f"frame_{r.index:06d}_left.ppm",
                                  r.left_overlay)
                formats.write_ppm(args.out / f"frame_{r.index:06d}_right.ppm",
                                  r.right_overlay)
        print(f"wrote session log to {args.out / 'session.jsonl'}")
    return 0


def _mean_std(values) -> str:
    arr = np.asarray([v for v in values if v is not None], dtype=np.float64)
    if arr.size == 0:
        return "n/a"
    std = arr.std(ddof=1) if arr.size > 1 else 0.0
    return f"{arr.mean():.4f}+/-{std:.4f}"


def cmd_eval_depth(args) -> int:
    frames = import_dataset(args.dataset)
    noise = _noise_from_args(args)
    rows = []
    for frame in frames:
        disp_gt = formats.read_pfm(frame.path / "disp_gt.pfm")
        depth_gt = formats.read_pfm(frame.path / "depth_gt.pfm")
        rect = frame.rig.rectified
        if args.pred:
            disp_pred = formats.read_pfm(Path(args.pred) / frame.path.name
                                         / "disp_gt.pfm")
        else:
            from .simscene import RenderedViews
            views = RenderedViews(left_image=np.zeros((1, 1), np.uint8),
                                  right_image=np.zeros((1, 1), np.uint8),
                                  depth_gt=depth_gt, disp_gt=disp_gt,
                                  mask_gt=np.zeros_like(disp_gt, dtype=np.uint8))
            disp_pred = apply_noise(views, noise, args.seed,
                                    frame.index).disp_gt
        depth_pred = disparity_to_depth(disp_pred, rect.baseline_m,
                                        rect.focal_px)
        rows.append(depth_metrics(depth_pred, depth_gt).as_dict())
    keys = ["MeAE_m", "MAE_m", "RMSE_m", "AbsRel", "SqRel",
            "delta_1.25", "delta_1.25^2", "delta_1.25^3"]
    print(f"{'Metric':<14}" + "".join(f"{k:>18}" for k in keys))
    print(f"{'value':<14}" + "".join(
        f"{_mean_std([r[k] for r in rows]):>18}" for k in keys))
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        formats.save_json(args.out / "depth_eval.json", {"frames": rows})
    return 0


def cmd_eval_seg(args) -> int:
    frames = import_dataset(args.dataset)
    noise = _noise_from_args(args)
    rows = []
    for frame in frames:
        mask_gt = formats.read_pgm(frame.path / "mask_gt.pgm")
        if args.pred:
            mask_pred = formats.read_pgm(Path(args.pred) / frame.path.name
                                         / "mask_gt.pgm")
        else:
            from .simscene import RenderedViews
            disp = formats.read_pfm(frame.path / "disp_gt.pfm")
            views = RenderedViews(left_image=np.zeros((1, 1), np.uint8),
                                  right_image=np.zeros((1, 1), np.uint8),
                                  depth_gt=disp, disp_gt=disp, mask_gt=mask_gt)
            mask_pred = apply_noise(views, noise, args.seed, frame.index).mask_gt
        if args.post:
            mask_pred = remove_small_objects(erode_mask(mask_pred, 2), 64)
        report = seg_metrics(mask_pred, mask_gt)
        row = report.as_dict()
        prob = (mask_pred > 0).astype(np.float64)
        try:
            row["PR_area"] = pr_curve_area(prob, mask_gt)
        except Exception:
            row["PR_area"] = None
        rows.append(row)
    keys = ["Dice", "Accuracy", "Specificity", "Sensitivity", "Precision",
            "PR_area"]
    print(f"{'Metric':<10}" + "".join(f"{k:>18}" for k in keys))
    print(f"{'value':<10}" + "".join(
        f"{_mean_std([r[k] for r in rows]):>18}" for k in keys))
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        formats.save_json(args.out / "seg_eval.json", {"frames": rows})
    return 0


def cmd_register(args) -> int:
    cfg = _pipeline_config(args)
    if args.dataset:
        cfg.provider = "files"
        cfg.dataset_dir = str(args.dataset)
    pipe = build_pipeline(cfg)
    results = pipe.run(args.frames, mark_trial=False)
    last = results[-1].registration
    print(f"global registrations: {pipe.global_registrations}")
    print(f"icp refreshes:        {pipe.icp_runs}")
    print(f"fitness:              {last.fitness:.4f}")
    print(f"icp rmse:             {last.rmse_m * 1000:.4f} mm")
    print(f"registration error:   {pipe.current_registration_error() * 100:.4f} cm")
    t = pipe.t_bl_ecm
    print("t_bl_ecm translation (m):", np.array2string(t.translation, precision=6))
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        formats.save_json(args.out / "registration.json", {
            "transform": formats.transform_to_dict(t),
            "fitness": last.fitness,
            "rmse_m": last.rmse_m,
            "registration_error_m": pipe.current_registration_error(),
        })
    return 0


def cmd_report(args) -> int:
    control = [read_session_jsonl(p)
               for p in sorted(Path(args.control).glob("*.jsonl"))]
    experiment = [read_session_jsonl(p)
                  for p in sorted(Path(args.experiment).glob("*.jsonl"))]
    sus_c = json.loads(Path(args.sus_control).read_text()) if args.sus_control else None
    sus_e = json.loads(Path(args.sus_experiment).read_text()) if args.sus_experiment else None
    report = compare_modalities(control, experiment, sus_c, sus_e,
                                collision_mode=args.collision_mode)
    print(report.to_text())
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        formats.save_json(args.out / "study_report.json", report.as_dict())
    return 0


def cmd_serve(args) -> int:
    from .service import ServiceConfig, serve
    cfg = ServiceConfig(port=args.port, seed=args.seed,
                        modality=args.modality or "experiment",
                        tick_hz=args.tick_hz,
                        out_dir=str(args.out) if args.out else None,
                        send_png=not args.no_png,
                        pipeline=_pipeline_config(args))
    serve(cfg)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="arguard",
        description="Markerless AR safety pipeline: simulate, reconstruct, "
                    "register, measure and serve.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="solve the three system calibrations")
    _add_common(p)
    p.add_argument("--session", type=Path, default=None,
                   help="calibration session JSON (default: synthetic)")
    p.add_argument("--views", type=int, default=5)
    p.add_argument("--pixel-sigma-px", type=float, default=0.5)
    p.add_argument("--ee-sigma-m", type=float, default=0.001)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("simulate", help="render a dataset from the scene")
    _add_common(p)
    _add_noise_flags(p)
    p.add_argument("--frames", type=int, default=16)
    p.add_argument("--nodes", type=int, default=10)
    p.add_argument("--seconds-per-pick", type=float, default=6.0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("run", help="process frames into a session log")
    _add_common(p)
    _add_noise_flags(p)
    p.add_argument("--dataset", type=Path, default=None)
    p.add_argument("--noisy", action="store_true",
                   help="corrupt the live providers with the noise flags")
    p.add_argument("--frames", type=int, default=100)
    p.add_argument("--modality", choices=["control", "experiment"], default=None)
    p.add_argument("--save-frames", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval-depth", help="depth metric table against a dataset")
    _add_common(p)
    _add_noise_flags(p)
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--pred", type=Path, default=None,
                   help="directory of predicted disparities (same layout)")
    p.set_defaults(func=cmd_eval_depth)

    p = sub.add_parser("eval-seg", help="segmentation metric table")
    _add_common(p)
    _add_noise_flags(p)
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--pred", type=Path, default=None)
    p.add_argument("--post", action="store_true",
                   help="apply boundary erosion and small-object removal")
    p.set_defaults(func=cmd_eval_seg)

    p = sub.add_parser("register", help="one-shot registration diagnostics")
    _add_common(p)
    p.add_argument("--dataset", type=Path, default=None)
    p.add_argument("--frames", type=int, default=5)
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("report", help="control vs experiment comparison table")
    _add_common(p)
    p.add_argument("--control", type=Path, required=True)
    p.add_argument("--experiment", type=Path, required=True)
    p.add_argument("--sus-control", type=Path, default=None)
    p.add_argument("--sus-experiment", type=Path, default=None)
    p.add_argument("--collision-mode", choices=["per_run", "per_second"],
                   default="per_run")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("serve", help="interactive frame service")
    _add_common(p)
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--modality", choices=["control", "experiment"], default=None)
    p.add_argument("--tick-hz", type=float, default=30.0)
    p.add_argument("--no-png", action="store_true")
    p.set_defaults(func=cmd_serve)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
