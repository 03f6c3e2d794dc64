"""Command-line entry point: ``evnav <subcommand> [options]``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import harness
from .harness import ConfigError, RunConfig
from .neural import ContractError, TrainingFault, WeightFileError, load_weights, save_weights

log = logging.getLogger("evnav")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="master seed (overrides config)")
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--out", help="output directory")

    p = _Parser(prog="evnav", description="Event-camera person-following simulator and controllers.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")

    s = sub.add_parser("sim", parents=[common], help="run episodes with a chosen controller")
    s.add_argument("--controller", help="pd, bc, ddpg or a weight file")
    s.add_argument("--weights", help="actor weights for bc/ddpg")
    s.add_argument("--episodes", type=int)
    s.add_argument("--detector", choices=["sae", "oracle"])

    s = sub.add_parser("collect-expert", parents=[common], help="PD rollouts to a BC dataset")
    s.add_argument("--episodes", type=int)

    s = sub.add_parser("train-bc", parents=[common], help="behavior cloning on an expert dataset")
    s.add_argument("--data", required=True, help="expert CSV s1..s6,a1,a2")
    s.add_argument("--epochs", type=int)

    s = sub.add_parser("train-ddpg", parents=[common], help="DDPG training")
    s.add_argument("--init-actor", help="pre-trained actor weights")
    s.add_argument("--episodes", type=int)

    s = sub.add_parser("eval", parents=[common], help="multi-seed evaluation with metrics")
    s.add_argument("--controller", help="pd, bc, ddpg or a weight file")
    s.add_argument("--weights", help="actor weights for bc/ddpg")
    s.add_argument("--episodes", type=int)
    s.add_argument("--workers", type=int)
    s.add_argument("--detector", choices=["sae", "oracle"])

    s = sub.add_parser("plot", parents=[common], help="re-render plots for a run directory")
    s.add_argument("--run", required=True, help="run directory containing episodes/")
    return p


def _config(args) -> RunConfig:
    cfg = harness.load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    for name in ("controller", "weights", "episodes", "workers"):
        val = getattr(args, name, None)
        if val is not None:
            setattr(cfg, name, val)
    if getattr(args, "detector", None):
        cfg.sim = dataclasses.replace(cfg.sim, detector=args.detector)
    if getattr(args, "epochs", None) is not None:
        cfg.bc.epochs = args.epochs
    if args.command == "collect-expert" and args.episodes is not None:
        cfg.bc.expert_episodes = args.episodes
    if args.command == "train-ddpg" and args.episodes is not None:
        cfg.ddpg.episodes = args.episodes
    harness.validate(cfg)
    return cfg


def _out(args, default: str) -> Path:
    return Path(args.out or default)


def cmd_sim(args, cfg: RunConfig) -> None:
    controller = harness.make_controller(cfg)
    out = _out(args, "runs/sim")
    logs, _ = harness.evaluate(cfg, controller)
    harness.echo_config(cfg, out)
    (out / "episodes").mkdir(parents=True, exist_ok=True)
    for i, ep in enumerate(logs):
        harness.write_episode_csv(out / "episodes" / f"ep{i:03d}.csv", ep)
        print(f"episode {i}: seed {ep.seed} steps {ep.steps} {ep.status}")


def cmd_collect(args, cfg: RunConfig) -> None:
    out = _out(args, "runs/expert")
    harness.echo_config(cfg, out)
    states, actions, kept, total = harness.collect_expert(cfg, out / "expert.csv")
    print(f"kept {kept}/{total} GoalReached episodes, {len(states)} transitions -> {out / 'expert.csv'}")


def cmd_train_bc(args, cfg: RunConfig) -> None:
    data = Path(args.data)
    if not data.is_file():
        raise ConfigError(f"dataset not found: {data}")
    states, actions = harness.read_dataset(data)
    out = _out(args, "runs/bc")
    harness.echo_config(cfg, out)
    res = harness.train_bc(cfg, states, actions)
    save_weights(res.actor, out / "bc.wts")
    with open(out / "bc_loss.csv", "w") as f:
        f.write("epoch,train_loss,val_loss\n")
        for i, (a, b) in enumerate(zip(res.train_loss, res.val_loss)):
            f.write(f"{i},{a:.10g},{b:.10g}\n")
    print(f"train MSE {res.train_loss[0]:.6g} -> {res.train_loss[-1]:.6g}; weights -> {out / 'bc.wts'}")


def cmd_train_ddpg(args, cfg: RunConfig) -> None:
    init = None
    if args.init_actor:
        if not Path(args.init_actor).is_file():
            raise ConfigError(f"init actor not found: {args.init_actor}")
        init = load_weights(args.init_actor)
    out = _out(args, "runs/ddpg")
    harness.echo_config(cfg, out)
    res = harness.train_ddpg(cfg, init, out)
    goals = sum(r["termination"] == "GoalReached" for r in res.log)
    print(f"{len(res.log)} episodes, {goals} GoalReached; best score {res.best_score:.2f}; checkpoints in {out}")


def cmd_eval(args, cfg: RunConfig) -> None:
    controller = harness.make_controller(cfg)
    out = _out(args, "runs/eval")
    logs, metrics = harness.evaluate(cfg, controller, out)
    for i, ep in enumerate(logs):
        print(f"episode {i}: seed {ep.seed} steps {ep.steps} {ep.status}")
    if metrics is not None:
        print(metrics.format())
    print(f"outputs in {out}")


def cmd_plot(args, cfg: RunConfig) -> None:
    run = Path(args.run)
    if not (run / "episodes").is_dir():
        raise ConfigError(f"no episodes/ under {run}")
    logs = harness.load_run(run)
    out = _out(args, str(run))
    harness.render_outputs(logs, out, cfg.world())
    print(f"plots in {out / 'plots'}")


COMMANDS = {"sim": cmd_sim, "collect-expert": cmd_collect, "train-bc": cmd_train_bc,
            "train-ddpg": cmd_train_ddpg, "eval": cmd_eval, "plot": cmd_plot}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("EVNAV_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_INVALID
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_INVALID
    try:
        cfg = _config(args)
        COMMANDS[args.command](args, cfg)
    except (ConfigError, WeightFileError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (TrainingFault, ContractError, FloatingPointError, OSError, ValueError, RuntimeError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
