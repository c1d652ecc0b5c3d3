"""``quadtrack`` command line: train, eval, gen-traj, compare.

Exit codes: 0 success, 2 configuration error, 3 runtime divergence, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

from .config import ConfigError, RunConfig, env_factories, load_config, save_config
from .dynamics import DivergedSimulationError
from .evaluation import EpisodeRecord, compare, run_episode, run_timing, summarize
from .nets import CheckpointError, load_checkpoint, mlp_forward
from .trajectories import ReferenceTrajectory, make_reference
from .ttd3 import TrainingDivergedError, train

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("quadtrack")


def _run_dir(cfg: RunConfig, out: str | None) -> str:
    path = out or os.path.join(cfg.output_root, cfg.run.run_id)
    os.makedirs(path, exist_ok=True)
    return path


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.set)
    run_dir = _run_dir(cfg, args.out)
    save_config(cfg, os.path.join(run_dir, "config.ini"))
    train_env, eval_env = env_factories(cfg)
    result = train(cfg.trainer, train_env, eval_env, out_dir=run_dir)
    last = result.curve[-1]
    print(f"trained {result.steps} steps, {result.episodes} episodes; "
          f"eval_return={last['eval_return']:.6g} eval_tracking_error={last['eval_tracking_error']:.6g}")
    print(f"run directory: {run_dir}")
    return EXIT_OK


def _eval_reference(cfg: RunConfig, args) -> ReferenceTrajectory:
    n = (cfg.env.pointmass_steps if cfg.env.kind == "pointmass" else cfg.env.episode_steps) + 1
    dt = cfg.env.pointmass_dt if cfg.env.kind == "pointmass" else cfg.quad.dt
    if args.trajectory == "file":
        if not args.file:
            raise ConfigError("--trajectory file requires --file PATH")
        return ReferenceTrajectory.from_csv(args.file)
    losrt = cfg.losrt if args.seed is None else replace(cfg.losrt, seed=args.seed)
    return make_reference(args.trajectory, n, dt, losrt)


def cmd_eval(args) -> int:
    cfg = load_config(args.config, args.set)
    ckpt = load_checkpoint(args.checkpoint)
    if "actor" not in ckpt.networks:
        raise ConfigError(f"{args.checkpoint}: checkpoint holds no 'actor' network")
    actor = ckpt.networks["actor"]
    ref = _eval_reference(cfg, args)
    _, eval_env = env_factories(cfg, ref)
    env = eval_env()
    expected = [env.obs_dim, env.act_dim]
    found = [actor.dims[0], actor.dims[-1]]
    if found != expected:
        raise ConfigError(f"checkpoint actor dims {actor.dims} do not fit the {cfg.env.kind} environment: "
                          f"expected input/output {expected}, found {found}")
    policy = lambda obs: mlp_forward(actor, obs)  # noqa: E731
    rec = run_episode(env, policy, {"trajectory": args.trajectory, "checkpoint": args.checkpoint,
                                    "seed": args.seed})
    timing = run_timing(policy, env, repeats=args.repeats)
    out_dir = args.out or os.path.join(cfg.output_root, "eval")
    os.makedirs(out_dir, exist_ok=True)
    stem = f"{args.trajectory}" + (f"_seed{args.seed}" if args.seed is not None else "")
    rec.to_csv(os.path.join(out_dir, f"trace_{stem}.csv"))
    metrics = summarize(rec)
    metrics.update({"timing_inference_s": timing.inference_s, "timing_episode_s": timing.episode_s,
                    "timing_per_step_ms": timing.per_step_ms, "timing_repeats": args.repeats,
                    **rec.metadata})
    with open(os.path.join(out_dir, f"metrics_{stem}.json"), "w") as fh:
        json.dump(metrics, fh, indent=2, sort_keys=True)
    for key in ("steps", "tracking_error", "tracking_error_squared", "energy", "timing_inference_s"):
        print(f"{key:>24s}  {metrics[key]}")
    return EXIT_OK


def cmd_gen_traj(args) -> int:
    cfg = load_config(args.config, args.set)
    losrt = cfg.losrt if args.seed is None else replace(cfg.losrt, seed=args.seed)
    ref = make_reference(args.kind, args.steps, cfg.quad.dt, losrt, seed=args.seed)
    ref.to_csv(args.out)
    print(f"wrote {len(ref)} points to {args.out}")
    return EXIT_OK


def cmd_compare(args) -> int:
    cfgs = [load_config(path, args.set) for path in args.config]
    names = [c.run.run_id for c in cfgs]
    if len(set(names)) != len(names):
        names = [f"{n}_{i}" for i, n in enumerate(names)]
    base = cfgs[0]
    train_env, eval_env = env_factories(base)
    out_dir = args.out or os.path.join(base.output_root, "compare")
    report = compare(dict(zip(names, (c.trainer for c in cfgs))), args.seeds, train_env, eval_env, out_dir)
    sys.stdout.write(report.to_text())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="quadtrack", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=False):
        sp.add_argument("--config", required=config_required, help="run configuration file")
        sp.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override a configuration value (repeatable)")

    sp = sub.add_parser("train", help="train a policy")
    common(sp)
    sp.add_argument("--out", help="run directory (default: $%s/<run_id>)" % "QUADTRACK_OUTPUT_ROOT")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint on a reference trajectory")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--trajectory", choices=("spiral", "losrt", "file"), default="spiral")
    sp.add_argument("--file", help="trajectory CSV for --trajectory file")
    sp.add_argument("--seed", type=int, help="LOS trajectory seed")
    sp.add_argument("--repeats", type=int, default=3, help="timing repetitions")
    sp.add_argument("--out", help="output directory")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("gen-traj", help="write a reference trajectory CSV")
    common(sp)
    sp.add_argument("kind", choices=("spiral", "losrt", "random"))
    sp.add_argument("--steps", type=int, default=3000)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gen_traj)

    sp = sub.add_parser("compare", help="multi-seed comparison of several configurations")
    sp.add_argument("--config", action="append", required=True, help="configuration file (repeatable)")
    sp.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    sp.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    sp.add_argument("--out", help="output directory")
    sp.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingDivergedError, DivergedSimulationError) as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (CheckpointError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
