"""Command-line front end: estimate | ba | eval | synth | splat-debug.

Every subcommand is deterministic for fixed inputs and flags. Exit codes:
0 success, 2 configuration error, 3 I/O error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import ba as ba_mod
from . import dataset, evaluation, flowio, pipeline, synthetic
from .geometry import GeometryError
from .splatting import splat_frame

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

log = logging.getLogger("motionprob")


def _estimate_worker(args) -> list[tuple[int, str | None]]:
    manifest_path, indices, raw_config = args
    cfg = pipeline.PipelineConfig.build(overrides=raw_config)
    manifest = dataset.load_manifest(manifest_path)
    return pipeline.process_frames_to_disk(
        manifest,
        indices,
        cfg.provider(),
        cfg.params(),
        cfg["output_dir"],
        debug=bool(int(cfg["debug"])),
        dump_float=bool(int(cfg["dump_float"])),
    )


def cmd_estimate(args) -> int:
    file_values = pipeline.parse_config_file(args.config) if args.config else {}
    overrides = {
        key: getattr(args, key)
        for key in pipeline.CONFIG_DEFAULTS
        if getattr(args, key, None) is not None
    }
    cfg = pipeline.PipelineConfig.build(file_values, overrides)

    manifest = cfg.load_sequence()
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    manifest_path = out / "manifest.txt"
    dataset.save_manifest(manifest, manifest_path)

    jobs = int(cfg["jobs"])
    indices = list(range(len(manifest)))
    raw = dict(cfg.raw)
    raw["layout"] = "manifest"
    raw["manifest"] = str(manifest_path)

    if jobs == 1:
        results = _estimate_worker((str(manifest_path), indices, raw))
    else:
        chunks = [list(c) for c in np.array_split(indices, jobs) if len(c)]
        results = []
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for part in pool.map(
                _estimate_worker, [(str(manifest_path), c, raw) for c in chunks]
            ):
                results.extend(part)

    failures = [(i, err) for i, err in results if err is not None]
    for i, err in failures:
        log.error("frame %d failed: %s", i, err)
    print(f"processed {len(results)} frames, {len(failures)} failures -> {out}")
    if failures and len(failures) > 0.1 * max(len(results), 1):
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_ba(args) -> int:
    problem = ba_mod.load_problem(args.problem)
    config = ba_mod.SolverConfig(max_iters=args.max_iters)
    solved, report = ba_mod.solve_weighted_ba(problem, config)
    ba_mod.save_problem(solved, args.output)
    print(f"initial_cost {report.initial_cost:.9e}")
    print(f"final_cost {report.final_cost:.9e}")
    print(f"iterations {report.iterations}")
    print(f"converged {int(report.converged)}")
    return EXIT_OK


def cmd_eval(args) -> int:
    est = evaluation.Trajectory.load(args.estimate)
    gt = evaluation.Trajectory.load(args.groundtruth)
    span = tuple(args.span) if args.span else None
    report = evaluation.evaluate(est, gt, span=span, max_gap=args.max_gap)
    print(report.summary())
    text = "\n".join(report.as_lines())
    print(text)
    if args.output:
        Path(args.output).write_text(text + "\n")
    return EXIT_OK


def cmd_synth(args) -> int:
    values: dict[str, str] = {}
    if args.scene:
        for lineno, raw in enumerate(Path(args.scene).read_text().splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise pipeline.ConfigError(f"{args.scene}:{lineno}: expected 'key = value'")
            key, value = (p.strip() for p in line.split("=", 1))
            values[key] = value
    if args.frames is not None:
        values["frames"] = str(args.frames)
    try:
        scene = synthetic.scene_from_spec(values)
    except synthetic.SceneError as exc:
        raise pipeline.ConfigError(str(exc)) from exc

    seq = synthetic.render_synthetic_sequence(scene)
    out = Path(args.output)
    write_sequence_tree(seq, out)
    print(f"rendered {scene.n_frames} frames -> {out}")
    return EXIT_OK


def write_sequence_tree(seq: synthetic.SyntheticSequence, out: Path) -> None:
    """TUM-style dynamic + background trees, ground truth, and a manifest."""
    dyn = out / "dynamic"
    bg = out / "background"
    for sub in ("rgb", "depth"):
        (dyn / sub).mkdir(parents=True, exist_ok=True)
        (bg / sub).mkdir(parents=True, exist_ok=True)
    (out / "gt_prob").mkdir(parents=True, exist_ok=True)
    (out / "gt_shadow").mkdir(parents=True, exist_ok=True)

    rgb_lines, depth_lines = [], []
    records = []
    scale = dataset.DEFAULT_DEPTH_SCALE
    for i, frame in enumerate(seq.frames):
        ts = seq.timestamps[i]
        name = f"{ts:.6f}.png"
        dataset.save_rgb_png(dyn / "rgb" / name, frame.image)
        dataset.save_depth_png(dyn / "depth" / name, frame.depth, scale)
        dataset.save_rgb_png(bg / "rgb" / name, frame.background)
        dataset.save_depth_png(bg / "depth" / name, frame.background_depth, scale)
        dataset.save_gray_png(out / "gt_prob" / f"{i:06d}.png", seq.moving_masks[i].astype(float))
        dataset.save_gray_png(
            out / "gt_shadow" / f"{i:06d}.png", seq.shadow_masks[i].astype(float)
        )
        rgb_lines.append(f"{ts:.6f} rgb/{name}")
        depth_lines.append(f"{ts:.6f} depth/{name}")
        records.append(
            dataset.FrameRecord(
                timestamp=float(ts),
                rgb_path=str(dyn / "rgb" / name),
                depth_path=str(dyn / "depth" / name),
                background_rgb_path=str(bg / "rgb" / name),
                background_depth_path=str(bg / "depth" / name),
                pose=seq.poses[i],
            )
        )
    header = "# timestamp filename\n"
    (dyn / "rgb.txt").write_text(header + "\n".join(rgb_lines) + "\n")
    (dyn / "depth.txt").write_text(header + "\n".join(depth_lines) + "\n")
    (bg / "rgb.txt").write_text(header + "\n".join(rgb_lines) + "\n")
    (bg / "depth.txt").write_text(header + "\n".join(depth_lines) + "\n")
    dataset.write_trajectory_file(dyn / "groundtruth.txt", seq.timestamps, seq.poses)

    manifest = dataset.SequenceManifest(seq.scene.intrinsics, scale, records)
    dataset.save_manifest(manifest, out / "manifest.txt")


def cmd_splat_debug(args) -> int:
    manifest = dataset.load_manifest(args.manifest)
    frames = [manifest.load_frame(i) for i in range(len(manifest))]
    target = frames[args.frame]
    source = frames[args.frame + args.offset]
    rel = pipeline.relative_pose(source, target)
    splat = splat_frame(source, rel, manifest.intrinsics, sharpness=args.sharpness)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    dataset.save_rgb_png(out / f"{args.frame:06d}_splat{args.offset:+03d}.png", splat.to_uint8())
    dataset.save_gray_png(
        out / f"{args.frame:06d}_coverage{args.offset:+03d}.png", splat.validity.astype(float)
    )
    print(f"wrote splat and coverage for frame {args.frame} offset {args.offset} -> {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="motionprob",
        description="Per-pixel motion probability pipeline, weighted BA, and trajectory metrics",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="run the probability pipeline over a sequence")
    est.add_argument("--config", help="key=value config file; flags override it")
    for key, default in pipeline.CONFIG_DEFAULTS.items():
        flag = "--" + key.replace("_", "-")
        est.add_argument(flag, dest=key, default=None, metavar=str(default))
    est.set_defaults(func=cmd_estimate)

    bap = sub.add_parser("ba", help="solve a weighted bundle-adjustment problem file")
    bap.add_argument("problem")
    bap.add_argument("--output", required=True)
    bap.add_argument("--max-iters", type=int, default=100)
    bap.set_defaults(func=cmd_ba)

    evp = sub.add_parser("eval", help="ATE RMSE and tracking rate for a trajectory")
    evp.add_argument("estimate")
    evp.add_argument("groundtruth")
    evp.add_argument("--span", nargs=2, type=float, metavar=("T0", "T1"))
    evp.add_argument("--max-gap", type=float, default=0.02)
    evp.add_argument("--output")
    evp.set_defaults(func=cmd_eval)

    syp = sub.add_parser("synth", help="render a synthetic sequence with ground truth")
    syp.add_argument("--scene", help="key=value scene spec file (defaults: stock desk scene)")
    syp.add_argument("--output", required=True)
    syp.add_argument("--frames", type=int)
    syp.set_defaults(func=cmd_synth)

    spd = sub.add_parser("splat-debug", help="write one splatted frame and its coverage mask")
    spd.add_argument("--manifest", required=True)
    spd.add_argument("--frame", type=int, required=True)
    spd.add_argument("--offset", type=int, default=2)
    spd.add_argument("--sharpness", type=float, default=10.0)
    spd.add_argument("--output", required=True)
    spd.set_defaults(func=cmd_splat_debug)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except pipeline.ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except (dataset.DatasetError, flowio.FlowFileError, OSError, evaluation.EvaluationError) as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO
    except (ba_mod.DegenerateProblemError, GeometryError, ValueError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
