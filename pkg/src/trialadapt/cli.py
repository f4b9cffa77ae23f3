"""Command-line entry point: ``trialadapt <subcommand> [--config F] [--seed S] [--out DIR]``.

Exit codes: 0 success, 1 configuration error, 2 numerical-accuracy failure,
3 adaptation exhausted in a run configured with ``require_full = true``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .errors import AccuracyError, AdaptationExhausted, ConfigError, InvalidInputError, NoEvidenceError
from .experiment import (
    POLICY_STREAM,
    load_config,
    protocol_config,
    read_comparison_csv,
    read_sizes_csv,
    replicate_seeds,
    run_experiment,
    run_policy,
    summarize,
)
from .inference import GridSpec, differential_posterior
from .numerics import make_rng
from .policy import write_log_csv
from .sensitivity import rank_candidates
from .simulation import simulate, write_ground_truth_csv, write_trajectory_csv
from .trial import read_snapshot_csv, write_snapshot_csv

EXIT_OK, EXIT_CONFIG, EXIT_ACCURACY, EXIT_EXHAUSTED = 0, 1, 2, 3

log = logging.getLogger("trialadapt")


def _config(args):
    cfg = load_config(args.config) if args.config else protocol_config()
    if args.seed is not None:
        cfg = replace(cfg, master_seed=args.seed)
    if getattr(args, "out", None):
        cfg = replace(cfg, output_dir=args.out)
    return cfg


def _out(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args) -> int:
    cfg = _config(args)
    sim = simulate(cfg.sim, make_rng(replicate_seeds(cfg.master_seed, 0)[0]))
    out = _out(args)
    with open(out / "trajectory.csv", "w", newline="") as fh:
        write_trajectory_csv(sim, fh)
    with open(out / "ground_truth.csv", "w", newline="") as fh:
        write_ground_truth_csv(sim, fh)
    with open(out / "snapshot.csv", "w", newline="") as fh:
        write_snapshot_csv(sim[-1], fh)
    print(f"simulated {len(sim[-1])} participants for {sim[-1].step} steps -> {out}")
    return EXIT_OK


def cmd_adapt(args) -> int:
    cfg = _config(args)
    seeds = replicate_seeds(cfg.master_seed, 0)
    sim = simulate(cfg.sim, make_rng(seeds[0]))
    out = _out(args)
    status = EXIT_OK
    for plan in cfg.removal:
        if args.policy and plan.policy.value != args.policy:
            continue
        run = run_policy(sim, plan, cfg.schedule, cfg.analysis, make_rng(seeds[POLICY_STREAM[plan.policy]]))
        with open(out / f"removals_{plan.policy.value}.csv", "w", newline="") as fh:
            write_log_csv(run.log, fh)
        final = sim[-1].replace(active=_final_active(sim[-1], run.log))
        with open(out / f"snapshot_{plan.policy.value}.csv", "w", newline="") as fh:
            write_snapshot_csv(final, fh)
        print(f"{plan.policy.value}: removed {len(run.log)} of {plan.n_rem}"
              + (" (exhausted)" if run.exhausted else ""))
        if run.exhausted and cfg.require_full:
            status = EXIT_EXHAUSTED
    return status


def _final_active(snapshot, events):
    active = snapshot.active.copy()
    for ev in events:
        active[snapshot.index_of(ev.participant_id)] = False
    return active


def cmd_analyze(args) -> int:
    cfg = _config(args)
    if not args.snapshot:
        raise ConfigError("--snapshot is required", "analyze.snapshot")
    with open(args.snapshot, newline="") as fh:
        snap = read_snapshot_csv(fh)
    out = _out(args)
    post = differential_posterior(snap.pairs, cfg.analysis.transform, GridSpec())
    post.write(out / "posterior.csv", out / "posterior.json")
    print(f"MAP {post.map_estimate:.6g}  std {post.std:.6g}  95% [{post.central_interval_95[0]:.6g}, "
          f"{post.central_interval_95[1]:.6g}]")
    try:
        report = rank_candidates(snap, cfg.analysis.transform, cfg.analysis.quad, cfg.analysis.domain)
    except AdaptationExhausted:
        print("no removal candidate")
        return EXIT_OK
    (out / "sensitivity.json").write_text(report.to_json() + "\n")
    print(f"next removal from {report.head.arm.name}/{report.head.tier.name}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = _config(args)
    if cfg.output_dir is None:
        raise ConfigError("an output directory is required (--out or experiment.output_dir)", "output_dir")
    result = run_experiment(cfg)
    r = result.report
    print(f"{r['replicates']} replicates -> {cfg.output_dir}")
    print(f"win-rate (posterior std): {r['win_rate_posterior_std']:.3f}")
    print(f"win-rate (|MAP - truth|): {r['win_rate_abs_error']:.3f}")
    if result.exhausted and cfg.require_full:
        return EXIT_EXHAUSTED
    return EXIT_OK


def cmd_report(args) -> int:
    if not args.table:
        raise ConfigError("--table is required", "report.table")
    table = read_comparison_csv(args.table)
    sizes = read_sizes_csv(args.sizes) if args.sizes else None
    report = summarize(table, sizes)
    out = _out(args)
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(json.dumps({k: v for k, v in report.items() if k != "per_replicate"}, indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="trialadapt", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="INI-style experiment config")
        sp.add_argument("--seed", type=int, help="master seed (overrides the config)")
        sp.add_argument("--out", help="output directory")
        return sp

    common(sub.add_parser("simulate", help="simulate one trial and write its trajectory")).set_defaults(func=cmd_simulate)
    sp = common(sub.add_parser("adapt", help="simulate and apply the removal schedule"))
    sp.add_argument("--policy", choices=["SensitivityGuided", "UniformRandom"])
    sp.set_defaults(func=cmd_adapt)
    sp = common(sub.add_parser("analyze", help="posterior and sensitivity ranking of a snapshot CSV"))
    sp.add_argument("--snapshot")
    sp.set_defaults(func=cmd_analyze)
    common(sub.add_parser("experiment", help="run all replicates and policies")).set_defaults(func=cmd_experiment)
    sp = common(sub.add_parser("report", help="summarise a comparison table"))
    sp.add_argument("--table")
    sp.add_argument("--sizes")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, InvalidInputError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AccuracyError as exc:
        print(f"numerical accuracy failure: {exc}", file=sys.stderr)
        return EXIT_ACCURACY
    except NoEvidenceError as exc:
        print(f"no evidence: {exc}", file=sys.stderr)
        return EXIT_EXHAUSTED


if __name__ == "__main__":
    sys.exit(main())
