"""Command line entry point.

    qosoracle run-experiment response-time --config paper_like --seeds 0..9
    qosoracle run-experiment qos-trace --config slow_node --seed 3
    qosoracle run-experiment selection-counts --config slow_node
    qosoracle run-experiment scalability --config fig8 --sweep n=2..10
    qosoracle analyze success-prob --mu 100 --sigma 30 --period 50 --n 5 --t 3
    qosoracle simulate --config paper_like --trace trace.jsonl

Exit status is 0 only when the run finished and every internal check held.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import analysis, experiments
from .contract import STRATEGIES
from .netsim import ConfigError, run

EXIT_OK, EXIT_CHECK_FAILED, EXIT_USAGE = 0, 1, 2


def _emit(text, out):
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _seeds(args, scenario):
    if args.seeds is not None:
        return experiments.parse_range(args.seeds)
    if args.seed is not None:
        return [args.seed]
    return [scenario.seed]


def _one_seed(args, scenario):
    return scenario.seed if args.seed is None else args.seed


def _sweep(text):
    key, _, rng = text.partition("=")
    if key.strip() != "n" or not rng:
        raise argparse.ArgumentTypeError("expected --sweep n=LO..HI")
    try:
        return experiments.parse_range(rng)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _report(problems):
    for p in problems:
        print(f"check failed: {p}", file=sys.stderr)
    return EXIT_CHECK_FAILED if problems else EXIT_OK


def cmd_response_time(args, sc):
    strategies = args.strategy or list(STRATEGIES)
    rows, summary, problems = experiments.response_time(sc, _seeds(args, sc), strategies, args.tasks)
    _emit(experiments.response_time_csv(rows, summary), args.out)
    for s in strategies:
        print(f"mean response {s}: {summary[s]:.3f} ms", file=sys.stderr)
    if "reduction" in summary:
        print(f"weighted vs random reduction: {100 * summary['reduction']:.2f}%", file=sys.stderr)
    return _report(problems)


def _apply_strategy(args, sc):
    if args.strategy:
        if len(args.strategy) > 1:
            raise ValueError("this experiment takes a single --strategy")
        sc = sc.replace(strategy=args.strategy[0])
    return sc


def cmd_qos_trace(args, sc):
    sc = _apply_strategy(args, sc)
    rows, res = experiments.qos_trace(sc, _one_seed(args, sc), args.tasks)
    _emit(experiments.to_csv(experiments.QOS_TRACE_HEADER, rows), args.out)
    return _report(experiments.check_run(res))


def cmd_selection_counts(args, sc):
    sc = _apply_strategy(args, sc)
    rows, res = experiments.selection_counts(sc, _one_seed(args, sc), args.tasks)
    _emit(experiments.to_csv(experiments.SELECTION_HEADER, rows), args.out)
    return _report(experiments.check_run(res))


def cmd_scalability(args, sc):
    rows = experiments.scalability_from_scenario(sc, _one_seed(args, sc), args.sweep, args.tasks)
    _emit(experiments.to_csv(experiments.SCALABILITY_HEADER, rows), args.out)
    problems = []
    col = [r[4] for r in rows]
    if any(b < a for a, b in zip(col, col[1:])):
        problems.append("analytical success is not nondecreasing in n")
    return _report(problems)


def cmd_simulate(args, sc):
    sc = _apply_strategy(args, sc)
    if args.tasks is not None:
        sc = sc.replace(tasks=args.tasks)
    res = run(sc, _one_seed(args, sc))
    if args.trace:
        Path(args.trace).write_text(res.trace_jsonl())
    if args.state:
        Path(args.state).write_text(json.dumps(res.contract.export_state(), indent=2, sort_keys=True) + "\n")
    _emit(res.contract.qos_csv(), args.out)
    print(f"settled {res.settled_fraction:.3f} of {len(res.outcomes)} subtasks", file=sys.stderr)
    return _report(experiments.check_run(res))


def cmd_success_prob(args):
    ns = args.sweep or [args.n]
    for n in ns:
        s = analysis.success_summary(args.mu, args.sigma, args.period, n, args.t, args.start)
        if n == ns[0]:
            width = max(len(k) for k in s)
            for k in ("mu", "sigma", "period", "start", "s_total", "s_t", "p"):
                print(f"{k:<{width}}  {s[k]:.9g}")
            print()
            print(f"{'n':>4}  {'t':>4}  success")
        print(f"{n:>4}  {args.t:>4}  {s['success']:.12f}")
    return EXIT_OK


EXPERIMENTS = {
    "response-time": cmd_response_time,
    "qos-trace": cmd_qos_trace,
    "selection-counts": cmd_selection_counts,
    "scalability": cmd_scalability,
}


def build_parser():
    ap = argparse.ArgumentParser(prog="qosoracle", description=__doc__.split("\n\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def sim_flags(p, default_config):
        p.add_argument("--config", default=default_config,
                       help="scenario file or bundled name (%s)" % ", ".join(experiments.bundled_configs()))
        p.add_argument("--seed", type=int, help="run seed (default: the config's seed)")
        p.add_argument("--tasks", type=int, help="override task count (Monte Carlo tasks for scalability)")
        p.add_argument("--strategy", action="append", choices=STRATEGIES,
                       help="selection strategy; repeatable for response-time")
        p.add_argument("--out", help="CSV destination (default: stdout)")

    ex = sub.add_parser("run-experiment", help="run one of the experiment drivers")
    ex.add_argument("experiment", choices=sorted(EXPERIMENTS))
    sim_flags(ex, None)
    ex.add_argument("--seeds", help="seed list or range, e.g. 0..9 (response-time)")
    ex.add_argument("--sweep", type=_sweep, help="n=LO..HI (scalability)")

    sm = sub.add_parser("simulate", help="one full simulation with trace and state dumps")
    sim_flags(sm, "paper_like")
    sm.add_argument("--trace", help="write the event trace (JSON lines)")
    sm.add_argument("--state", help="write the final contract state (JSON)")

    an = sub.add_parser("analyze", help="closed-form success model")
    asub = an.add_subparsers(dest="analysis", required=True)
    sp = asub.add_parser("success-prob", help="window probability and threshold success")
    sp.add_argument("--mu", type=float, required=True)
    sp.add_argument("--sigma", type=float, required=True)
    sp.add_argument("--period", type=float, required=True, help="source period T in ms")
    sp.add_argument("--start", type=float, default=None, help="window start x (default: best window)")
    sp.add_argument("--n", type=int, default=5)
    sp.add_argument("--t", type=int, default=3)
    sp.add_argument("--sweep", type=_sweep, help="n=LO..HI instead of a single --n")
    return ap


_DEFAULT_CONFIGS = {"response-time": "paper_like", "qos-trace": "slow_node",
                    "selection-counts": "slow_node", "scalability": "fig8"}


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        if args.command == "analyze":
            return cmd_success_prob(args)
        config = args.config or _DEFAULT_CONFIGS[args.experiment]
        sc = experiments.load_config(config)
        if args.command == "simulate":
            return cmd_simulate(args, sc)
        return EXPERIMENTS[args.experiment](args, sc)
    except (ConfigError, FileNotFoundError, analysis.ParameterError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
