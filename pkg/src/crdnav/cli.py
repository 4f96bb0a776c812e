"""Command-line entry point: ``crdnav {train,eval,intervene,render,inspect}``.

Exit status: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import vision as V
from .errors import (ConfigError, CrdNavError, IntegrityError, LayoutError, ParameterError,
                     TrainingAborted)

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
AUG_NAMES = ("amplitude", "noise", "blur", "contrast")


class UsageError(Exception):
    pass


def _parse_kv(items, what: str) -> dict:
    out = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise UsageError(f"{what} {item!r} must look like key=value")
        out[key.strip()] = value.strip()
    return out


def _csv_list(text: str, conv=str) -> tuple:
    try:
        return tuple(conv(s.strip()) for s in text.split(",") if s.strip())
    except ValueError:
        raise UsageError(f"cannot parse list {text!r}") from None


# -- train -------------------------------------------------------------------------------
def cmd_train(args) -> int:
    from .config import RunConfig, apply_overrides, load_config
    from .trainer import train

    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = _parse_kv(args.set, "--set")
    if args.seed is not None:
        overrides["train.seed"] = str(args.seed)
    if args.out is not None:
        overrides["run.out_dir"] = args.out
    cfg = apply_overrides(cfg, overrides)
    print(cfg.to_ini(), end="")

    def progress(rec):
        if not args.quiet:
            print(f"episode {rec.episode}: return {rec.return_mean:.2f} successes {rec.successes} "
                  f"collisions {rec.collisions} buffer {rec.buffer_size} updates {rec.updates}", flush=True)

    try:
        train(cfg, cfg.run.out_dir, progress)
    except TrainingAborted as exc:
        print(f"training aborted: {exc}; snapshot at {exc.snapshot_path}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"wrote {Path(cfg.run.out_dir) / 'final.ckpt'}")
    return EXIT_OK


# -- eval -----------------------------------------------------------------------------------
def cmd_eval(args) -> int:
    from .evalkit import run_suite, straight_line_policy
    from .trainer import load_checkpoint
    from .world.scenario import DOMAINS

    scenarios = _csv_list(args.scenarios)
    inits = _csv_list(args.inits)
    counts = _csv_list(args.uavs, int)
    for s in scenarios:
        if s not in DOMAINS:
            raise UsageError(f"unknown scenario {s!r}; expected one of {DOMAINS}")
    for i in inits:
        if i not in ("random", "circle"):
            raise UsageError(f"unknown init pattern {i!r}")
    if not counts or min(counts) < 1:
        raise UsageError("--uavs needs positive counts")
    if args.checkpoint == "scripted":
        policy, ep_cfg, reward_cfg = straight_line_policy, None, None
        if args.sensor_size:
            from .world.render import SensorConfig
            from .world.sim import EpisodeConfig
            ep_cfg = EpisodeConfig(sensor=SensorConfig(args.sensor_size, args.sensor_size))
    else:
        trainer = load_checkpoint(args.checkpoint)
        policy, ep_cfg, reward_cfg = trainer.agent, trainer.episode_cfg, trainer.cfg.reward
    episodes = {"random": args.episodes, "circle": args.circle_episodes}
    result = run_suite(policy, scenarios, inits, counts, episodes, args.seed, ep_cfg, reward_cfg)
    result.write(args.out)
    for s, i, n, r in result.cells:
        print(f"{s:14s} {i:7s} {n:3d}  success {r.success_rate:6.2f}%  spl {r.spl:6.2f}%  "
              f"extra {r.extra_distance_mean:.3f}  speed {r.average_speed_mean:.3f}")
    print(f"wrote {Path(args.out) / 'report.json'}")
    return EXIT_OK


# -- intervene ---------------------------------------------------------------------------------
def cmd_intervene(args) -> int:
    img = V.read_pgm(args.input)
    V._check_pow2(img.data.shape)
    params = _parse_kv(args.param, "--param")
    rng = np.random.default_rng(args.seed)

    def get(name, default, conv=float):
        try:
            return conv(params.pop(name, default))
        except ValueError:
            raise UsageError(f"bad value for parameter {name!r}") from None

    if args.augmentation == "amplitude":
        lam = get("lambda", 1.0)
        raw, _ = V.amplitude_perturb_raw(img.data, lam)
        drift = V.phase_drift(img.data, raw)
        out = V.DepthImage(np.clip(raw, 0.0, img.max_range), img.max_range)
        print(f"max phase drift: {drift:.3e}")
    elif args.augmentation == "noise":
        out = V.random_noise(img, get("sigma", 0.4), rng)
    elif args.augmentation == "blur":
        angle = params.pop("angle", None)
        out = V.motion_blur(img, get("length", 5, int), None if angle is None else float(angle), rng)
    else:
        out = V.contrast_stretch(img, get("factor", 1.2))
    if params:
        raise UsageError(f"unknown parameter(s) for {args.augmentation}: {sorted(params)}")
    V.write_pgm(args.output, out)
    print(f"wrote {args.output}")
    return EXIT_OK


# -- render ------------------------------------------------------------------------------------------
def cmd_render(args) -> int:
    from .world import generate_scenario, load_scenario, render_from_pose
    from .world.render import SensorConfig
    from .world.scenario import ScenarioSpec

    if args.scenario_file:
        spec = load_scenario(args.scenario_file)
    elif args.scenario == "empty":
        spec = ScenarioSpec("empty", args.seed, bounds=None, terrain=None)
    else:
        spec = generate_scenario(args.scenario, args.seed)
    pose = _csv_list(args.pose, float)
    if len(pose) != 4:
        raise UsageError("--pose needs x,y,z,yaw")
    sensor = SensorConfig(args.size, args.size, args.fov, args.max_range)
    img = render_from_pose(pose[:3], pose[3], spec, sensor)
    V.write_pgm(args.output, img)
    near = int(np.sum(img.data < args.near))
    print(f"near-range pixels (< {args.near} m): {near}")
    print(f"wrote {args.output}")
    return EXIT_OK


# -- inspect -------------------------------------------------------------------------------------------
def cmd_inspect(args) -> int:
    from .checkpoint import inspect_container

    info = inspect_container(args.checkpoint)
    meta = info["meta"]
    print(f"format version: {info['version']}")
    print(f"checksum: {'ok' if info['checksum_ok'] else 'FAILED'}")
    if "layout" in meta:
        n1, n2, n3 = meta["layout"]
        print(f"latent layout: n1={n1} n2={n2} n3={n3}")
    if "config" in meta:
        print("config:")
        print(json.dumps(meta["config"], indent=2, sort_keys=True))
    print(f"blocks: {len(info['blocks'])}")
    for name, shape in info["blocks"]:
        print(f"  {name} {list(shape)}")
    return EXIT_OK if info["checksum_ok"] else EXIT_RUNTIME


# -- parser -----------------------------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crdnav", description="Causal-representation SAC for multi-UAV navigation.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train an agent from an INI config")
    t.add_argument("--config", help="INI file; defaults apply when omitted")
    t.add_argument("--seed", type=int)
    t.add_argument("--out", help="output directory (overrides run.out_dir)")
    t.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="config override")
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a scenario grid")
    e.add_argument("--checkpoint", required=True, help="checkpoint path, or 'scripted' for the straight-line oracle")
    e.add_argument("--scenarios", default="grassland,snow_mountain,forest")
    e.add_argument("--inits", default="random,circle")
    e.add_argument("--uavs", default="8")
    e.add_argument("--episodes", type=int, default=100, help="episodes per random-init cell")
    e.add_argument("--circle-episodes", type=int, default=20, help="episodes per circle-init cell")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--sensor-size", type=int, default=0, help="sensor side for the scripted policy")
    e.add_argument("--out", default="eval_out")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("intervene", help="apply one augmentation to a 16-bit PGM depth image")
    i.add_argument("--input", required=True)
    i.add_argument("--augmentation", required=True, choices=AUG_NAMES)
    i.add_argument("--param", action="append", metavar="KEY=VALUE",
                   help="lambda (amplitude), sigma (noise), length/angle (blur), factor (contrast)")
    i.add_argument("--seed", type=int, default=0)
    i.add_argument("--output", required=True)
    i.set_defaults(func=cmd_intervene)

    r = sub.add_parser("render", help="render a depth image from a pose")
    r.add_argument("--scenario", default="playground", help="domain name or 'empty'")
    r.add_argument("--scenario-file", help="scenario JSON (overrides --scenario)")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--pose", required=True, help="x,y,z,yaw")
    r.add_argument("--size", type=int, default=64)
    r.add_argument("--fov", type=float, default=90.0)
    r.add_argument("--max-range", type=float, default=20.0)
    r.add_argument("--near", type=float, default=5.0, help="threshold for the near-range pixel count")
    r.add_argument("--output", required=True)
    r.set_defaults(func=cmd_render)

    s = sub.add_parser("inspect", help="print a checkpoint's header and blocks")
    s.add_argument("checkpoint")
    s.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        return args.func(args)
    except (UsageError, ConfigError, ParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return EXIT_USAGE
    except (IntegrityError, LayoutError) as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except CrdNavError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
