#!/usr/bin/env python3
"""Populate the artifact cache used by the benchmark comparison tests.

Runs are skipped when their result.json already exists, so the script can be
re-run after interruptions. Expect several hours of single-core compute for
the full set.

Usage:
    python3 scripts/run_experiments.py [group ...]

Groups: lagrangian, schemes, smooth, dqn, config2 (default: all).
"""

import sys
import time

import experiments


def log(msg):
    print(f"[{time.strftime('%H:%M:%S')}] {msg}", flush=True)


def progress_printer(every=100):
    def progress(update, stats):
        if update % every == 0:
            log(f"  update {update}: mean_steps={stats['mean_steps']:.2f} "
                f"success={stats['success_rate']:.2f} "
                f"penalty={stats.get('mean_penalty', float('nan')):.2f}")
    return progress


def run_lagrangian():
    for seed in range(5):
        log(f"config1 lagrangian seed {seed}")
        r = experiments.ensure_ppo_run(scheme="lagrangian", seed=seed,
                                       progress=progress_printer())
        log(f"  final {r['final_mean_steps']:.2f} "
            f"success {r['final_success_rate']:.2f}")


def run_schemes():
    for scheme in ("none", "large-terminal"):
        for seed in range(5):
            log(f"config1 {scheme} seed {seed}")
            r = experiments.ensure_ppo_run(scheme=scheme, seed=seed,
                                           progress=progress_printer())
            log(f"  final {r['final_mean_steps']:.2f}")


def run_smooth():
    for seed in range(3):
        log(f"config1 smooth seed {seed}")
        r = experiments.ensure_ppo_run(seed=seed, smooth=True,
                                       progress=progress_printer())
        log(f"  final {r['final_mean_steps']:.2f}")
        experiments.ensure_policy_eval(r)
    for seed in range(3):
        r = experiments.ensure_ppo_run(scheme="lagrangian", seed=seed)
        experiments.ensure_policy_eval(r)


def run_dqn():
    log("config1 dqn seed 0")
    r = experiments.ensure_dqn_run(seed=0,
                                   progress=lambda s, l: log(f"  step {s} loss {l:.3f}"))
    log(f"  tail mean steps {r['tail_mean_steps']:.2f}")


def run_config2():
    for seed in range(3):
        log(f"config2 lagrangian seed {seed}")
        r = experiments.ensure_ppo_run(scenario_name="config2", seed=seed,
                                       progress=progress_printer())
        log(f"  final {r['final_mean_steps']:.2f} "
            f"success {r['final_success_rate']:.2f}")


GROUPS = {
    "lagrangian": run_lagrangian,
    "schemes": run_schemes,
    "smooth": run_smooth,
    "dqn": run_dqn,
    "config2": run_config2,
}


def main(argv):
    names = argv or list(GROUPS)
    for name in names:
        if name not in GROUPS:
            print(f"unknown group {name!r}; choose from {sorted(GROUPS)}")
            return 1
    for name in names:
        log(f"=== group {name} ===")
        GROUPS[name]()
    log("done")
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
