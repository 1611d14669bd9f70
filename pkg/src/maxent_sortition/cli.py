"""Command-line entry point.

Results go to stdout or ``--out``; progress and errors go to stderr as JSON
lines.  Exit codes: 0 success, 1 verification mismatch, 2 infeasible,
3 timeout or resource limit, 4 usage or I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from typing import Sequence

from . import evaluation, lottery
from .counting import (DEFAULT_MEMORY_BUDGET, WeightVector, build_dp, count_incrementally,
                       reweight)
from .errors import (InfeasibleError, InstanceError, MemoryBudgetExceeded, OracleGuardError,
                     SamplingTimeout, SortitionError)
from .instance import load_instance
from .optimizer import (OptimizerConfig, TargetMarginals, interiorize, optimize,
                        sample_marginals)
from .rng import RandomStream
from .sampler import SamplerConfig, plan_and_build, read_jsonl, sample_many, write_jsonl

EXIT_OK, EXIT_MISMATCH, EXIT_INFEASIBLE, EXIT_TIMEOUT, EXIT_USAGE = 0, 1, 2, 3, 4
DEFAULT_THREADS = 5


class UsageError(SortitionError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


class _Progress:
    def __init__(self, quiet: bool):
        self.quiet = quiet
        self.started = time.monotonic()

    def __call__(self, event: dict) -> None:
        if not self.quiet:
            row = {"t": round(time.monotonic() - self.started, 3), **event}
            sys.stderr.write(json.dumps(row, default=str) + "\n")
            sys.stderr.flush()


def _instance(args):
    return load_instance(args.instance, args.quotas, args.panel_size)


def _open_out(path):
    return sys.stdout if path in (None, "-") else open(path, "w", encoding="utf-8")


def _write(path, text: str) -> None:
    out = _open_out(path)
    try:
        out.write(text)
    finally:
        if out is not sys.stdout:
            out.close()


def _sampler_config(args) -> SamplerConfig:
    return SamplerConfig(acceptance_floor=args.acceptance_floor,
                         estimate_samples=args.estimate_samples,
                         max_attempts=args.max_attempts,
                         memory_budget=args.memory_budget)


def _weights(path, instance):
    if path is None:
        return None
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise InstanceError("weights file must hold a JSON object of member id to weight")
    return WeightVector({str(k): v for k, v in data.items()})


def cmd_count(args, progress) -> int:
    inst = _instance(args)
    feats = args.features.split(",") if args.features else list(inst.feature_names)
    report = progress if args.report_layers else None
    tables = count_incrementally(inst, feats, _weights(args.weights, inst),
                                 memory_budget=args.memory_budget, progress=report)
    if args.report_layers:
        for t in tables:
            progress({"event": "count", "features": list(t.features), "count": str(t.total_count),
                      "states": t.num_states})
        for row in tables[-1].layer_stats():
            progress({"event": "layer", **row})
    print(tables[-1].total_count)
    return EXIT_OK


def _plan(args, inst, weights, progress):
    table, plan = plan_and_build(inst, weights, _sampler_config(args),
                                 RandomStream(args.seed, (1,)), progress=progress)
    progress({"event": "plan", **plan.to_dict()})
    return table


def cmd_sample(args, progress) -> int:
    inst = _instance(args)
    table = _plan(args, inst, _weights(args.weights, inst), progress)
    panels = sample_many(inst, table, args.num, args.seed, workers=args.threads,
                         max_attempts=args.max_attempts, progress=progress)
    out = _open_out(args.out)
    try:
        write_jsonl(panels, out)
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def cmd_fair_sample(args, progress) -> int:
    inst = _instance(args)
    with open(args.targets, encoding="utf-8") as fh:
        targets = TargetMarginals.from_json(fh.read())
    targets.validate(inst)
    table = _plan(args, inst, None, progress)
    if args.interiorize:
        est = sample_marginals(inst, table, args.batch, RandomStream(args.seed, (4,)),
                               args.max_attempts)
        targets = interiorize(targets, TargetMarginals.from_array(inst, est), args.interiorize)
    config = OptimizerConfig(batch_size=args.batch, grad_tol=args.grad_tol, max_iters=args.iters,
                             budget_seconds=args.budget_seconds)
    weights, it, diag = optimize(inst, targets, config, RandomStream(args.seed, (5,)), table=table,
                                 sampler_config=_sampler_config(args), progress=progress)
    progress({"event": "optimized", "status": diag.status, "iterations": len(diag.rows),
              "warning": diag.warning})
    if args.diagnostics:
        _write(args.diagnostics, diag.to_jsonl())
    if args.weights_out:
        _write(args.weights_out, json.dumps(weights.weights, indent=1) + "\n")
    panels = sample_many(inst, reweight(table, weights), args.num, args.seed,
                         workers=args.threads, max_attempts=args.max_attempts, progress=progress)
    out = _open_out(args.out)
    try:
        write_jsonl(panels, out)
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def cmd_evaluate(args, progress) -> int:
    inst = _instance(args)
    with open(args.panels, encoding="utf-8") as fh:
        panels = read_jsonl(fh)
    rep = evaluation.report(panels, inst)
    _write(args.out, evaluation.dumps(rep) + "\n")
    if args.csv:
        _write(args.csv, evaluation.report_csv(rep))
    return EXIT_OK


def cmd_holdout(args, progress) -> int:
    inst = _instance(args)
    if args.all_features:
        feats = list(inst.feature_names)
    elif args.feature:
        feats = [args.feature]
    else:
        raise UsageError("give --feature or --all-features")
    rows = []
    for f in feats:
        res = evaluation.holdout_experiment(inst, f, args.num, RandomStream(args.seed),
                                            config=_sampler_config(args), workers=args.threads)
        progress({"event": "holdout", **res.as_row()})
        rows.append(res.as_row())
    _write(args.out, evaluation.rows_to_csv(rows))
    return EXIT_OK


def cmd_lottery(args, progress) -> int:
    inst = _instance(args)
    table = _plan(args, inst, _weights(args.weights, inst), progress)
    lot = lottery.build_lottery(inst, table, args.m, args.seed, args.delta, workers=args.threads,
                                max_attempts=args.max_attempts)
    _write(args.out, lot.dumps())
    return EXIT_OK


def cmd_lottery_draw(args, progress) -> int:
    with open(args.lottery, encoding="utf-8") as fh:
        lot = lottery.read_lottery(fh)
    try:
        panel = lottery.draw(lot, index=args.index, seed=args.public_seed)
    except (IndexError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    index = args.index if args.index is not None else args.public_seed % lot.m
    print(json.dumps({"index": index, "members": list(panel)}))
    return EXIT_OK


def cmd_verify(args, progress) -> int:
    from . import oracle
    inst = _instance(args)
    panels = oracle.enumerate_panels(inst, guard=args.guard)
    dp = build_dp(inst, inst.feature_names).total_count
    chain = count_incrementally(inst)[-1].total_count
    no_anchor = build_dp(inst, inst.feature_names, use_anchor=False).total_count
    ok = dp == chain == no_anchor == len(panels)
    print(json.dumps({"oracle_count": len(panels), "dp_count": dp, "pruned_count": chain,
                      "no_anchor_count": no_anchor, "agree": ok}))
    return EXIT_OK if ok else EXIT_MISMATCH


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="maxent-sortition", description="Maximum-entropy panel selection.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def base(name, help_text, func):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--instance", required=True, help="instance JSON, or pool CSV with --quotas")
        sp.add_argument("--quotas", help="quota CSV accompanying a pool CSV")
        sp.add_argument("--panel-size", type=int, help="panel size for a CSV instance")
        sp.add_argument("--quiet", action="store_true", help="no progress on stderr")
        sp.set_defaults(func=func)
        return sp

    def sampling(sp, seed=True):
        if seed:
            sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--threads", type=int, default=DEFAULT_THREADS)
        sp.add_argument("--acceptance-floor", type=float, default=1e-3)
        sp.add_argument("--estimate-samples", type=int, default=100_000)
        sp.add_argument("--max-attempts", type=int, default=1_000_000)
        sp.add_argument("--memory-budget", type=int, default=DEFAULT_MEMORY_BUDGET,
                        help="bytes of live counting states before a feature is deferred")

    sp = base("count", "exact number (or weight) of feasible panels", cmd_count)
    sp.add_argument("--features", help="comma-separated subset to enforce")
    sp.add_argument("--weights", help="JSON map of member id to integer weight")
    sp.add_argument("--report-layers", action="store_true")
    sp.add_argument("--memory-budget", type=int, default=DEFAULT_MEMORY_BUDGET)

    sp = base("sample", "draw panels from the maximum-entropy lottery", cmd_sample)
    sp.add_argument("--num", type=int, required=True)
    sp.add_argument("--out")
    sp.add_argument("--weights", help="JSON map of member id to integer weight")
    sampling(sp)

    sp = base("fair-sample", "fit weights to target selection probabilities, then sample",
              cmd_fair_sample)
    sp.add_argument("--targets", required=True)
    sp.add_argument("--interiorize", type=float, default=0.0, metavar="EPS")
    sp.add_argument("--iters", type=int, default=1000)
    sp.add_argument("--batch", type=int, default=10_000)
    sp.add_argument("--grad-tol", type=float, default=1e-3)
    sp.add_argument("--budget-seconds", type=float)
    sp.add_argument("--num", type=int, default=1000, help="panels to draw with the fitted weights")
    sp.add_argument("--out")
    sp.add_argument("--diagnostics", help="per-iteration JSON lines")
    sp.add_argument("--weights-out")
    sampling(sp)

    sp = base("evaluate", "marginals, fairness and diversity of sampled panels", cmd_evaluate)
    sp.add_argument("--panels", required=True)
    sp.add_argument("--out")
    sp.add_argument("--csv", help="also write one row per metric here")

    sp = base("holdout", "how often panels satisfy a feature left out of the quotas", cmd_holdout)
    g = sp.add_mutually_exclusive_group()
    g.add_argument("--feature")
    g.add_argument("--all-features", action="store_true")
    sp.add_argument("--num", type=int, default=100_000)
    sp.add_argument("--out")
    sampling(sp)

    sp = base("lottery", "publish a transparent lottery of independent panels", cmd_lottery)
    sp.add_argument("--m", type=int, required=True)
    sp.add_argument("--delta", type=float, default=lottery.DEFAULT_DELTA)
    sp.add_argument("--out")
    sp.add_argument("--weights", help="JSON map of member id to integer weight")
    sampling(sp)

    sp = sub.add_parser("lottery-draw", help="pick the final panel from a lottery file")
    sp.add_argument("--lottery", required=True)
    g = sp.add_mutually_exclusive_group(required=True)
    g.add_argument("--index", type=int)
    g.add_argument("--public-seed", type=int)
    sp.add_argument("--quiet", action="store_true")
    sp.set_defaults(func=cmd_lottery_draw)

    sp = base("verify", "cross-check the counting engine against brute force", cmd_verify)
    sp.add_argument("--guard", type=int, default=10**7)
    return p


def _fail(code: int, kind: str, message: str, **extra) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message, **extra}) + "\n")
    return code


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("missing subcommand")
        return args.func(args, _Progress(args.quiet))
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", str(exc))
    except InfeasibleError as exc:
        return _fail(EXIT_INFEASIBLE, "infeasible", str(exc), features=list(exc.features))
    except SamplingTimeout as exc:
        return _fail(EXIT_TIMEOUT, "timeout", str(exc), attempts=exc.attempts,
                     acceptance_rate=exc.acceptance_rate)
    except MemoryBudgetExceeded as exc:
        return _fail(EXIT_TIMEOUT, "memory_budget", str(exc), layer=exc.layer)
    except (InstanceError, OracleGuardError) as exc:
        return _fail(EXIT_USAGE, "invalid_input", str(exc))
    except OSError as exc:
        return _fail(EXIT_USAGE, "io", str(exc))
    except ValueError as exc:
        return _fail(EXIT_USAGE, "invalid_input", str(exc))


if __name__ == "__main__":
    sys.exit(main())
