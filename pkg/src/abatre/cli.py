"""Command-line entry point: benchmark runs, dataset augmentation, filters.

Subcommands:
  run        execute a disassembly run and write metrics/summary/snapshots
  augment    expand a labeled image dataset with sampled augmentations
  condition  apply one simulated pack-aging filter to an image

The master seed comes from --seed, falling back to the ABATRE_SEED
environment variable and then to the scene file's own seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from . import imaging
from .executive import DisassemblyEngine, records_to_csv_rows
from .geometry import Pose
from .kinematics import ArmModel, default_arm
from .perception import OracleDetector, ScoreModel, default_score_model, render_rgb
from .planner import PlannerParams
from .scene import ComponentCategory, SceneError, SceneWorld, world_from_dict

BENCHMARK_SCENE_NAME = "benchmark"


@dataclass
class RunConfig:
    scene: str
    seed: int
    out_dir: Path
    planner: PlannerParams
    score_model: ScoreModel
    snapshots: bool = False
    condition: Optional[imaging.PackCondition] = None
    max_replans: int = 5
    dump_trajectories: bool = False


def benchmark_scene_path() -> Path:
    return Path(str(resources.files("abatre").joinpath("data/benchmark_scene.json")))


def _resolve_scene(arg: str) -> Path:
    p = Path(arg)
    if p.exists():
        return p
    if arg == BENCHMARK_SCENE_NAME:
        return benchmark_scene_path()
    raise SceneError(f"scene not found: {arg!r} (use a file path or '{BENCHMARK_SCENE_NAME}')")


def _load_bundle(path: Path) -> tuple[SceneWorld, ArmModel, dict]:
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise SceneError(f"cannot read scene file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SceneError(f"scene file {path} is not valid JSON: {exc}") from exc
    world = world_from_dict(data)
    arm_doc = data.get("arm", {})
    base = arm_doc.get("base_pose")
    arm = default_arm(
        Pose.from_xyz_quat(base["xyz"], base.get("quaternion", [1, 0, 0, 0]))
        if base
        else None
    )
    return world, arm, data.get("planner", {})


def _planner_from(overrides: dict, args) -> PlannerParams:
    params = PlannerParams(**overrides) if overrides else PlannerParams()
    mapping = {
        "planner_i_max": "i_max",
        "planner_goal_bias": "goal_bias",
        "planner_steer_min": "steer_min",
        "planner_steer_max": "steer_max",
        "planner_neighbor_radius": "neighbor_radius",
        "planner_edge_resolution": "edge_resolution",
    }
    for attr, fld in mapping.items():
        val = getattr(args, attr, None)
        if val is not None:
            params = replace(params, **{fld: val})
    return params.validate()


def _score_model_from(args) -> ScoreModel:
    model = default_score_model()
    for cat, name in (
        (ComponentCategory.BOLT, "bolt"),
        (ComponentCategory.CABLE, "cable"),
        (ComponentCategory.MODULE, "module"),
    ):
        mean = getattr(args, f"detector_{name}_mean", None)
        sigma = getattr(args, f"detector_{name}_sigma", None)
        if mean is not None or sigma is not None:
            old_mean, old_sigma = model.params[cat]
            model.params[cat] = (
                mean if mean is not None else old_mean,
                sigma if sigma is not None else old_sigma,
            )
    return model


def cmd_run(config: RunConfig) -> int:
    scene_path = _resolve_scene(config.scene)
    world, arm, _ = _load_bundle(scene_path)
    if config.seed is not None:
        world = replace(world, rng_seed=int(config.seed))
    params = config.planner

    out = config.out_dir
    out.mkdir(parents=True, exist_ok=True)

    if config.snapshots:
        _write_snapshot(world, out / "before.png", config)

    engine = DisassemblyEngine(
        world, arm, params, OracleDetector(config.score_model), config.max_replans
    )
    outcome = engine.run()

    csv_text = "\n".join(records_to_csv_rows(outcome.records)) + "\n"
    (out / "metrics.csv").write_text(csv_text, encoding="utf-8")

    summary = {
        "seed": world.rng_seed,
        "scene": str(scene_path),
        "tasks": len(outcome.records),
        "succeeded": sum(1 for r in outcome.records if r.success),
        "all_success": all(r.success for r in outcome.records) and bool(outcome.records),
        "total_execution_time_s": round(
            sum(r.execution_time for r in outcome.records), 6
        ),
        "gripper_switches": outcome.gripper_switches,
        "records": [
            {
                "target": r.target_id,
                "category": r.category.value,
                "execution_time_s": round(r.execution_time, 6),
                "detection_score": round(r.detection_score, 6),
                "success": r.success,
                "failure_reason": r.failure_reason,
            }
            for r in outcome.records
        ],
    }
    (out / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )

    if config.dump_trajectories:
        traj_dir = out / "trajectories"
        traj_dir.mkdir(exist_ok=True)
        for i, (label, traj) in enumerate(outcome.trajectories):
            (traj_dir / f"{i:04d}_{label}.csv").write_text(
                "\n".join(traj.csv_rows()) + "\n", encoding="utf-8"
            )

    if config.snapshots:
        _write_snapshot(outcome.world, out / "after.png", config)

    return 0 if summary["all_success"] else 1


def _write_snapshot(world: SceneWorld, path: Path, config: RunConfig) -> None:
    img = render_rgb(world, world.camera)
    if config.condition is not None:
        rng = np.random.default_rng(np.random.SeedSequence([world.rng_seed, 0xF117E2]))
        img = imaging.apply_condition(img, config.condition, rng)
    imaging.save_png(img, path)


def cmd_augment(input_dir: Path, out_dir: Path, n_variants: int, seed: int) -> int:
    manifest = input_dir / "manifest.json"
    if not manifest.exists():
        print(f"error: no manifest.json in {input_dir}", file=sys.stderr)
        return 1
    pairs = imaging.read_manifest(manifest)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_pairs = []
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xA06]))
    for img_rel, lab_rel in pairs:
        try:
            image = imaging.load_image(input_dir / img_rel)
            labels = imaging.labels_from_csv((input_dir / lab_rel).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            print(f"error: cannot read pair {img_rel!r}/{lab_rel!r}: {exc}", file=sys.stderr)
            return 1
        labeled = imaging.LabeledImage(image, labels).validate()
        variants = imaging.expand_dataset(labeled, n_variants, rng)
        stem = Path(img_rel).stem
        for i, var in enumerate(variants):
            img_name = f"{stem}_aug{i}.png"
            lab_name = f"{stem}_aug{i}.csv"
            imaging.save_png(var.image, out_dir / img_name)
            (out_dir / lab_name).write_text(
                imaging.labels_to_csv(var.labels), encoding="utf-8"
            )
            out_pairs.append((img_name, lab_name))
    imaging.write_manifest(out_pairs, out_dir / "manifest.json")
    return 0


def cmd_condition(image_path: Path, condition: imaging.PackCondition, seed: int, out_path: Path) -> int:
    try:
        image = imaging.load_image(image_path)
    except (OSError, ValueError) as exc:
        print(f"error: cannot read image {image_path}: {exc}", file=sys.stderr)
        return 1
    rng = np.random.default_rng(seed)
    result = imaging.apply_condition(image, condition, rng)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    imaging.save_image(result, out_path)
    return 0


def _env_seed() -> Optional[int]:
    raw = os.environ.get("ABATRE_SEED")
    return int(raw) if raw else None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="abatre",
        description="Deterministic battery-pack disassembly simulator and imaging toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute a disassembly run")
    run.add_argument("--scene", default=BENCHMARK_SCENE_NAME,
                     help="scene file path or 'benchmark'")
    run.add_argument("--seed", type=int, default=None,
                     help="master seed (default: ABATRE_SEED env var, then scene seed)")
    run.add_argument("--out", default="out", help="output directory")
    run.add_argument("--snapshots", action="store_true",
                     help="write before/after PNG snapshots")
    run.add_argument("--dump-trajectories", action="store_true",
                     help="write per-segment trajectory CSVs")
    run.add_argument("--condition", choices=[c.value for c in imaging.PackCondition],
                     default=None, help="pack condition filter applied to snapshots")
    run.add_argument("--max-replans", type=int, default=5)
    run.add_argument("--planner.i-max", dest="planner_i_max", type=int)
    run.add_argument("--planner.goal-bias", dest="planner_goal_bias", type=float)
    run.add_argument("--planner.steer-min", dest="planner_steer_min", type=float)
    run.add_argument("--planner.steer-max", dest="planner_steer_max", type=float)
    run.add_argument("--planner.neighbor-radius", dest="planner_neighbor_radius", type=float)
    run.add_argument("--planner.edge-resolution", dest="planner_edge_resolution", type=float)
    run.add_argument("--detector.bolt-mean", dest="detector_bolt_mean", type=float)
    run.add_argument("--detector.bolt-sigma", dest="detector_bolt_sigma", type=float)
    run.add_argument("--detector.cable-mean", dest="detector_cable_mean", type=float)
    run.add_argument("--detector.cable-sigma", dest="detector_cable_sigma", type=float)
    run.add_argument("--detector.module-mean", dest="detector_module_mean", type=float)
    run.add_argument("--detector.module-sigma", dest="detector_module_sigma", type=float)

    aug = sub.add_parser("augment", help="expand a labeled dataset")
    aug.add_argument("--input", required=True, help="directory with manifest.json")
    aug.add_argument("--out", required=True, help="output directory")
    aug.add_argument("--variants", type=int, default=6)
    aug.add_argument("--seed", type=int, default=None)

    cond = sub.add_parser("condition", help="apply a pack-aging filter to an image")
    cond.add_argument("image", help="input image (PNG or PPM)")
    cond.add_argument("condition", choices=[c.value for c in imaging.PackCondition])
    cond.add_argument("--seed", type=int, default=0)
    cond.add_argument("--out", default=None, help="output path (default: <input>_<condition>.png)")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.command == "run":
        seed = args.seed if args.seed is not None else _env_seed()
        try:
            scene_path = _resolve_scene(args.scene)
            _, _, planner_overrides = _load_bundle(scene_path)
            if seed is None:
                seed = json.loads(scene_path.read_text(encoding="utf-8")).get("seed", 0)
            config = RunConfig(
                scene=args.scene,
                seed=int(seed),
                out_dir=Path(args.out),
                planner=_planner_from(planner_overrides, args),
                score_model=_score_model_from(args),
                snapshots=args.snapshots,
                condition=imaging.PackCondition(args.condition) if args.condition else None,
                max_replans=args.max_replans,
                dump_trajectories=args.dump_trajectories,
            )
            return cmd_run(config)
        except (SceneError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2

    if args.command == "augment":
        if args.variants < 1:
            parser.error("--variants must be >= 1")
        seed = args.seed if args.seed is not None else (_env_seed() or 0)
        return cmd_augment(Path(args.input), Path(args.out), args.variants, int(seed))

    if args.command == "condition":
        out = Path(args.out) if args.out else Path(
            f"{Path(args.image).with_suffix('')}_{args.condition}.png"
        )
        return cmd_condition(
            Path(args.image), imaging.PackCondition(args.condition), args.seed, out
        )

    parser.error(f"unknown command {args.command!r}")
    return 2


if __name__ == "__main__":
    raise SystemExit(main())
