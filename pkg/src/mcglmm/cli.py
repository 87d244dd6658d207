"""Command-line interface: fit a dataset, simulate datasets, run a bench.

Exit codes: 0 on success (including fits that stop at the iteration cap
with converged=false), 1 on invalid input, 2 on numerical failure.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

from . import serialize
from .exceptions import NumericalError
from .fitter import fit
from .simulate import run_replications, simulate_scenario, summarize_results


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mcglmm")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_input=False):
        if needs_input:
            p.add_argument("input", help="dataset CSV")
        p.add_argument("--config", required=True, help="config JSON path")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override a config entry, e.g. stopping.t0=20",
        )

    p_fit = sub.add_parser("fit", help="fit a model to a dataset CSV")
    common(p_fit, needs_input=True)

    p_sim = sub.add_parser("simulate", help="write simulated dataset CSVs")
    common(p_sim)
    p_sim.add_argument("--replicates", type=int, default=None, help="override replicate count")

    p_bench = sub.add_parser("bench", help="run replicated fits and summarize")
    common(p_bench)
    p_bench.add_argument("--replicates", type=int, default=None, help="override replicate count")
    p_bench.add_argument("--workers", type=int, default=1, help="replication worker processes")
    return parser


def _load_config(args) -> dict:
    config = serialize.load_config(args.config)
    for assignment in args.overrides:
        serialize.apply_override(config, assignment)
    if args.seed is not None:
        config["seed"] = args.seed
    if getattr(args, "replicates", None) is not None:
        config.setdefault("scenario", {})["replicates"] = args.replicates
    return config


def _cmd_fit(args) -> int:
    config = _load_config(args)
    kind = serialize.family_kind_from_config(config)
    data, family = serialize.read_dataset(args.input, kind)
    fit_config = serialize.fit_config_from_config(config)
    start = time.perf_counter()
    result = fit(data, family, fit_config)
    elapsed = time.perf_counter() - start
    serialize.write_result(os.path.join(args.out, "result.json"), result)
    serialize.write_trace(os.path.join(args.out, "trace.csv"), result.trace)
    serialize.atomic_write(
        os.path.join(args.out, "timing.json"),
        serialize.dumps_json({"wall_time_seconds": elapsed}) + "\n",
    )
    status = "converged" if result.converged else "not converged"
    print(f"fit {status} after {result.n_iterations} iterations -> {args.out}")
    return 0


def _cmd_simulate(args) -> int:
    config = _load_config(args)
    spec = serialize.scenario_from_config(config)
    for i in range(spec.replicates):
        data, family = simulate_scenario(spec, i)
        path = os.path.join(args.out, f"dataset_{i:04d}.csv")
        serialize.write_dataset(path, data, family)
    print(f"wrote {spec.replicates} dataset(s) -> {args.out}")
    return 0


def _cmd_bench(args) -> int:
    config = _load_config(args)
    spec = serialize.scenario_from_config(config)
    results = run_replications(spec, workers=args.workers)
    summary = summarize_results(results, spec)
    serialize.write_summary(os.path.join(args.out, "summary.csv"), spec, summary)
    serialize.write_replicates(os.path.join(args.out, "replicates.csv"), results)
    serialize.write_timings(os.path.join(args.out, "timings.csv"), results)
    print(
        f"bench done: {summary.replicates} replicates, {summary.n_failed} failed, "
        f"mean time {summary.mean_time_s:.3g}s -> {args.out}"
    )
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {"fit": _cmd_fit, "simulate": _cmd_simulate, "bench": _cmd_bench}
    try:
        return handlers[args.command](args)
    except NumericalError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
