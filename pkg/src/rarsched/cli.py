"""Command-line entry point.

Exit status is 0 on success, 1 on a configuration error and 2 when the only
outcome is infeasibility (no schedule within the horizon).
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace

from .experiments import read_schedule_csv, run_experiment, run_policy, write_schedule_csv
from .model import HorizonExceeded, validate_schedule
from .offline import Infeasible, instance_from_workload, round_instance
from .planner import build_estimates
from .simulate import simulate
from .workload import ConfigError, WorkloadConfig, build_instance, load_config

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE = 0, 1, 2

_SWEEPS = {"compare": "compare", "sweep-kappa": "kappa", "sweep-servers": "servers", "sweep-lambda": "lambda"}


def _config(args):
    return load_config(args.config) if args.config else WorkloadConfig()


def _open_out(path):
    return open(path, "w", newline="") if path else sys.stdout


def cmd_gen_workload(args):
    config = _config(args)
    jobs, cluster, scale = build_instance(config, args.seed)
    if args.format == "summary":
        sizes = {}
        for j in jobs:
            sizes[j.gpus_requested] = sizes.get(j.gpus_requested, 0) + 1
        print(f"jobs: {len(jobs)}  sizes: {dict(sorted(sizes.items()))}")
        print(f"servers: {cluster.num_servers}  capacities: {list(cluster.server_capacities)}")
        print(f"xi scale: {scale:.6g}  xi1: {cluster.contention_fraction:.6g}  xi2: {cluster.overhead_per_server:.6g}")
        return EXIT_OK
    fh = _open_out(args.out)
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["job_id", "gpus", "iterations", "gradient_size", "fp_time", "bp_time", "server_spread"])
        for j in jobs:
            w.writerow([j.id, j.gpus_requested, j.iterations, f"{j.gradient_size:.9g}",
                        f"{j.fp_per_sample:.9g}", f"{j.bp_time:.9g}", f"{j.server_spread_factor:g}"])
    finally:
        if fh is not sys.stdout:
            fh.close()
    return EXIT_OK


def cmd_schedule(args):
    config = _config(args)
    jobs, cluster, _ = build_instance(config, args.seed)
    est = build_estimates(jobs, cluster, mode=config.estimate_mode)
    res = run_policy(args.policy, jobs, cluster, est, args.seed, config.horizon)
    if res.infeasible:
        print(f"{args.policy}: no schedule within {config.horizon} slots", file=sys.stderr)
        return EXIT_INFEASIBLE
    if args.out:
        write_schedule_csv(res.schedule, args.out)
    else:
        print(f"policy={args.policy} makespan={res.makespan} theta={res.theta} kappa={res.kappa}")
    return EXIT_OK


def cmd_simulate(args):
    config = _config(args)
    if not args.schedule:
        raise ConfigError("simulate needs --schedule PATH")
    jobs, cluster, _ = build_instance(config, args.seed)
    try:
        schedule = read_schedule_csv(args.schedule)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"malformed schedule file: {exc}") from exc
    bad = validate_schedule(schedule, jobs, cluster, horizon=config.horizon)
    if bad:
        for v in bad[:10]:
            print(v, file=sys.stderr)
        raise ConfigError(f"schedule violates {len(bad)} constraint(s)")
    try:
        trace = simulate(schedule, jobs, cluster, horizon=config.horizon, record=bool(args.out))
    except HorizonExceeded as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_INFEASIBLE
    if args.out:
        trace.to_csv(args.out)
    print(f"makespan={trace.makespan} avg_jct={trace.avg_jct:.4f}")
    return EXIT_OK


def cmd_sweep(args):
    config = _config(args)
    seeds = [args.seed] if args.seed is not None else None
    report = run_experiment(_SWEEPS[args.command], config, seeds=seeds, policy=args.policy)
    if args.format == "summary":
        text = report.summary_text() + "\n"
        if args.out:
            with open(args.out, "w") as fh:
                fh.write(text)
        else:
            sys.stdout.write(text)
    else:
        text = report.to_csv(args.out)
        if not args.out:
            sys.stdout.write(text)
    if report.rows and all(r.infeasible for r in report.rows):
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_round_lp(args):
    config = _config(args)
    jobs, cluster, _ = build_instance(config, args.seed)
    jobs = jobs[:args.jobs]
    caps = cluster.server_capacities[:args.servers]
    cluster = replace(cluster, server_capacities=tuple(caps))
    inst = instance_from_workload(jobs, cluster, cost=args.cost, penalty=args.penalty)
    try:
        report = round_instance(inst, with_optimum=args.optimum)
    except Infeasible:
        print("placement program has no feasible point (not enough GPUs)", file=sys.stderr)
        return EXIT_INFEASIBLE
    fh = _open_out(args.out)
    try:
        fh.write(report.to_csv())
    finally:
        if fh is not sys.stdout:
            fh.close()
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="rarsched", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log calibration details")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed_default=0):
        p.add_argument("--config", metavar="PATH", help="key = value config file")
        p.add_argument("--seed", type=int, default=seed_default, metavar="N")
        p.add_argument("--out", metavar="PATH", help="output file (default stdout)")

    p = sub.add_parser("gen-workload", help="generate jobs for one seed")
    common(p)
    p.add_argument("--format", choices=("csv", "summary"), default="csv")
    p.set_defaults(func=cmd_gen_workload)

    p = sub.add_parser("schedule", help="plan one seed with one policy")
    common(p)
    p.add_argument("--policy", default="sjf-bco", choices=("sjf-bco", "ff", "ls", "rand"))
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("simulate", help="replay a schedule CSV")
    common(p)
    p.add_argument("--schedule", metavar="PATH", help="schedule CSV written by 'schedule --out'")
    p.set_defaults(func=cmd_simulate)

    for name in _SWEEPS:
        p = sub.add_parser(name, help=f"run the {_SWEEPS[name]} experiment")
        common(p, seed_default=None)
        p.add_argument("--policy", default=None, help="restrict to one policy")
        p.add_argument("--format", choices=("csv", "summary"), default="csv")
        p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("round-lp", help="offline LP relaxation and rounding on a small instance")
    common(p)
    p.add_argument("--jobs", type=int, default=4, help="use the first N jobs")
    p.add_argument("--servers", type=int, default=3, help="use the first N servers")
    p.add_argument("--cost", type=float, default=1.0, help="weight of execution time")
    p.add_argument("--penalty", type=float, default=1.0, help="weight of idle GPUs on used servers")
    p.add_argument("--optimum", action="store_true", help="also enumerate the integral optimum")
    p.set_defaults(func=cmd_round_lp)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
