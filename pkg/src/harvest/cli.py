"""Command-line entry point: train, eval, plan, plot, sweep, validate."""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import baselines, evaluation, plotting, ppo, smooth as smooth_mod
from .env import Environment, TrajectoryRecord, read_trajectory_csv, write_trajectory_csv
from .scenario import (
    ScenarioParseError,
    ScenarioValidationError,
    resolve,
    validate as validate_scenario,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(message)


def _run_id(argv: list[str]) -> str:
    payload = json.dumps(argv) + str(time.time_ns())
    return hashlib.sha1(payload.encode()).hexdigest()[:12]


def _out_dir(args, argv: list[str]) -> Path:
    if args.out:
        out = Path(args.out)
    else:
        root = Path(os.environ.get("HARVEST_OUT", "runs"))
        out = root / _run_id(argv)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, command: str, argv: list[str], args) -> None:
    manifest = {
        "run_id": _run_id(argv),
        "command": command,
        "argv": argv,
        "seed": getattr(args, "seed", None),
        "scenario": getattr(args, "scenario", None),
        "created_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def _coerce(value: str, like):
    if isinstance(like, bool):
        return value.lower() in ("1", "true", "yes")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    if isinstance(like, tuple):
        return tuple(type(like[0])(v) for v in value.split(","))
    return value


def apply_overrides(config, overrides: dict[str, str]):
    """Apply dotted `key=value` overrides to a dataclass config."""
    fields = {f.name: getattr(config, f.name) for f in dataclasses.fields(config)}
    updates = {}
    for key, value in overrides.items():
        if key not in fields:
            raise UsageError(f"unknown config key {key!r} for {type(config).__name__}")
        updates[key] = _coerce(value, fields[key])
    return dataclasses.replace(config, **updates)


def _parse_sets(pairs: list[str]) -> tuple[dict, dict]:
    """Split --set overrides into (ppo keys, smooth.* keys)."""
    ppo_over, smooth_over = {}, {}
    for pair in pairs:
        if "=" not in pair:
            raise UsageError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        if key.startswith("smooth."):
            smooth_over[key[len("smooth."):]] = value
        else:
            ppo_over[key] = value
    return ppo_over, smooth_over


def build_parser() -> _Parser:
    parser = _Parser(prog="harvest", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a scenario against its invariants")
    p.add_argument("--scenario", required=True)
    p.add_argument("--out", default=None)

    p = sub.add_parser("train", help="train a policy (optionally smoothed)")
    p.add_argument("--scenario", required=True)
    p.add_argument("--scheme", default="lagrangian",
                   choices=list(ppo.SCHEMES))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--updates", type=int, default=None)
    p.add_argument("--smooth", action="store_true")
    p.add_argument("--eps", type=float, default=0.05,
                   help="smoothing perturbation radius (with --smooth)")
    p.add_argument("--set", dest="overrides", action="append", default=[])
    p.add_argument("--out", default=None)
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("eval", help="evaluate a trained policy under noise")
    p.add_argument("--scenario", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--noise", default="none", choices=["none", "random", "adv"])
    p.add_argument("--eps", type=float, default=0.0)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--adversary", default=None)
    p.add_argument("--out", default=None)

    p = sub.add_parser("plan", help="discrete-action baselines")
    plan_sub = p.add_subparsers(dest="planner", required=True)
    pa = plan_sub.add_parser("astar")
    pa.add_argument("--scenario", required=True)
    pa.add_argument("--budget", type=int, default=2_000_000)
    pa.add_argument("--step-length", type=float, default=1.0)
    pa.add_argument("--out", default=None)
    pd = plan_sub.add_parser("dqn")
    pd.add_argument("--scenario", required=True)
    pd.add_argument("--seed", type=int, default=0)
    pd.add_argument("--steps", type=int, default=None)
    pd.add_argument("--step-length", type=float, default=1.0)
    pd.add_argument("--out", default=None)

    p = sub.add_parser("plot", help="render a trajectory CSV to SVG")
    p.add_argument("--scenario", required=True)
    p.add_argument("--trajectory", default=None)
    p.add_argument("--out", default=None)

    p = sub.add_parser("sweep", help="run a list of training override sets")
    p.add_argument("--scenario", required=True)
    p.add_argument("--file", required=True)
    p.add_argument("--out", default=None)

    return parser


def cmd_validate(args, argv) -> int:
    out = _out_dir(args, argv)
    _write_manifest(out, "validate", argv, args)
    scenario = resolve(args.scenario)
    problems = validate_scenario(scenario)
    if problems:
        for problem in problems:
            print(f"INVALID: {problem}")
        return EXIT_RUNTIME
    print("OK: scenario satisfies all invariants")
    return EXIT_OK


def cmd_train(args, argv) -> int:
    ppo_over, smooth_over = _parse_sets(args.overrides)
    scenario = resolve(args.scenario)
    config = ppo.PpoConfig(scheme=args.scheme)
    if args.updates is not None:
        config = dataclasses.replace(config, total_updates=args.updates)
    config = apply_overrides(config, ppo_over).validated()
    out = _out_dir(args, argv)
    _write_manifest(out, "train", argv, args)

    def progress(update, stats):
        if not args.quiet:
            print(f"update {update}: mean_steps={stats['mean_steps']:.2f} "
                  f"success={stats['success_rate']:.2f} kl={stats['approx_kl']:.4f}",
                  flush=True)

    if args.smooth:
        sconfig = smooth_mod.SmoothConfig(eps=args.eps)
        sconfig = apply_overrides(sconfig, smooth_over).validated()
        result = smooth_mod.train_smooth(scenario, config, sconfig, args.seed,
                                         progress=progress)
        smooth_mod.save_adversary(out / "adversary.ckpt", result.adversary)
        train_result = result.result
    else:
        train_result = ppo.train(scenario, config, args.seed, progress=progress)

    ppo.save_policy(out / "policy.ckpt", train_result.ac)
    ppo.write_curve_csv(out / "curve.csv", train_result.curve)
    summary = {
        "final_mean_steps": train_result.final_mean_steps,
        "final_std_steps": train_result.final_std_steps,
        "scheme": config.scheme,
        "seed": args.seed,
        "smooth": bool(args.smooth),
    }
    (out / "result.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"final mean steps: {train_result.final_mean_steps:.2f} "
          f"+/- {train_result.final_std_steps:.2f}")
    print(f"artifacts in {out}")
    return EXIT_OK


def cmd_eval(args, argv) -> int:
    scenario = resolve(args.scenario)
    if not Path(args.checkpoint).exists():
        print(f"error: checkpoint not found: {args.checkpoint}", file=sys.stderr)
        return EXIT_RUNTIME
    adversary = None
    if args.noise == "adv":
        if not args.adversary or not Path(args.adversary).exists():
            print("error: --noise adv requires --adversary pointing at a trained "
                  "adversary checkpoint", file=sys.stderr)
            return EXIT_RUNTIME
        adversary = smooth_mod.load_adversary(args.adversary)
    out = _out_dir(args, argv)
    _write_manifest(out, "eval", argv, args)
    ac = ppo.load_policy(args.checkpoint)
    policy = ppo.deterministic_policy(ac)
    kind = {"none": "none", "random": "random", "adv": "adversarial"}[args.noise]
    noise = evaluation.NoiseSpec(kind=kind, eps=args.eps, adversary=adversary)
    report = evaluation.evaluate(policy, scenario, noise, args.trials, args.seed,
                                 label=f"{args.noise}@{args.eps}")
    evaluation.write_report_csv(out / "report.csv", report)
    evaluation.write_summary_csv(out / "summary.csv", [report])
    print(f"T = {report.mean:.2f} +/- {report.std:.2f} "
          f"(success rate {report.successes.mean():.2f}, {report.trials} trials)")
    return EXIT_OK


def cmd_plan(args, argv) -> int:
    scenario = resolve(args.scenario)
    out = _out_dir(args, argv)
    _write_manifest(out, f"plan-{args.planner}", argv, args)
    if args.planner == "astar":
        result = baselines.astar_plan(scenario, step_length=args.step_length,
                                      node_budget=args.budget)
        record = TrajectoryRecord(states=result.states)
        action_set = baselines.DiscreteActionSet(scenario.num_agents, args.step_length)
        record.actions = [action_set.to_joint_action(a) for a in result.actions]
        write_trajectory_csv(out / "plan.csv", scenario, record)
        with open(out / "search.csv", "w") as fh:
            fh.write("expansions,incumbent_time\n")
            for expansions, t in result.incumbent_curve:
                fh.write(f"{expansions},{t:.12g}\n")
        summary = {
            "expected_time": result.expected_time,
            "complete": result.complete,
            "expansions": result.expansions,
            "plan_steps": len(result.actions),
        }
        (out / "result.json").write_text(json.dumps(summary, indent=2) + "\n")
        print(f"incumbent time {result.expected_time:.2f} "
              f"({'complete' if result.complete else 'incomplete'}, "
              f"{result.expansions} expansions)")
    else:
        config = baselines.DqnConfig(step_length=args.step_length)
        if args.steps is not None:
            config = dataclasses.replace(config, total_steps=args.steps)
        result = baselines.dqn_train(scenario, config, args.seed)
        baselines.save_qnet(out / "qnet.ckpt", result)
        with open(out / "curve.csv", "w") as fh:
            fh.write("episode,steps\n")
            for episode, steps in result.curve:
                fh.write(f"{episode},{steps:.12g}\n")
        print(f"trained DQN for {config.total_steps} steps; "
              f"checkpoint in {out}")
    return EXIT_OK


def cmd_plot(args, argv) -> int:
    scenario = resolve(args.scenario)
    out = _out_dir(args, argv)
    _write_manifest(out, "plot", argv, args)
    paths = None
    if args.trajectory:
        if not Path(args.trajectory).exists():
            print(f"error: trajectory not found: {args.trajectory}", file=sys.stderr)
            return EXIT_RUNTIME
        rows = read_trajectory_csv(args.trajectory)
        paths = plotting.paths_from_trajectory_rows(rows)
    plotting.write_svg(out / "trajectory.svg", scenario, paths)
    print(f"wrote {out / 'trajectory.svg'}")
    return EXIT_OK


def cmd_sweep(args, argv) -> int:
    scenario_name = args.scenario
    sweep_path = Path(args.file)
    if not sweep_path.exists():
        print(f"error: sweep file not found: {sweep_path}", file=sys.stderr)
        return EXIT_RUNTIME
    entries = json.loads(sweep_path.read_text())
    if not isinstance(entries, list):
        print("error: sweep file must contain a JSON list of override objects",
              file=sys.stderr)
        return EXIT_RUNTIME
    out = _out_dir(args, argv)
    _write_manifest(out, "sweep", argv, args)
    for k, entry in enumerate(entries):
        run_argv = ["train", "--scenario", scenario_name,
                    "--out", str(out / f"run_{k:03d}")]
        for key, value in entry.items():
            if key == "seed":
                run_argv += ["--seed", str(value)]
            elif key == "scheme":
                run_argv += ["--scheme", str(value)]
            elif key == "smooth":
                if value:
                    run_argv.append("--smooth")
            elif key == "updates":
                run_argv += ["--updates", str(value)]
            else:
                run_argv += ["--set", f"{key}={value}"]
        run_argv.append("--quiet")
        print(f"sweep run {k}: {entry}")
        status = main(run_argv)
        if status != EXIT_OK:
            return status
    return EXIT_OK


_COMMANDS = {
    "validate": cmd_validate,
    "train": cmd_train,
    "eval": cmd_eval,
    "plan": cmd_plan,
    "plot": cmd_plot,
    "sweep": cmd_sweep,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args, argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ScenarioParseError, ScenarioValidationError, FileNotFoundError,
            ValueError, FloatingPointError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
