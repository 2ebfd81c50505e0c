"""Command-line driver: simulate, plan, resolve, verify, and sweep workflows.

All randomness flows from --seed (default 0); outputs are written atomically
and contain no timestamps, so a fixed invocation reproduces byte-identical
files. Exit codes: 0 success with a stable result, 2 completed but
unstable/failed, 1 usage or configuration errors.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
import time
from typing import Optional

from .adaptive import TraceLog
from .experiments import (
    SweepConfig,
    run_market_trial,
    run_sweep,
    trials_to_csv,
)
from .market import (
    ConfigError,
    InterviewLedger,
    Market,
    MarketConfig,
    Matching,
    ValueGenerator,
    sample_market,
)
from .nonadaptive import InterviewPlan, NonAdaptiveParams, build_plan, resolve_plan

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_UNSTABLE = 2


class _Parser(argparse.ArgumentParser):
    # usage problems are exit code 1; code 2 is reserved for unstable results
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _write_atomic(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        _write_atomic(out, text)
    else:
        sys.stdout.write(text)
        if not text.endswith("\n"):
            sys.stdout.write("\n")


def _load_json(path: str) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _json_dumps(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def _market_config_from_args(args: argparse.Namespace, algorithm: str) -> MarketConfig:
    if args.config:
        return MarketConfig.from_dict(_load_json(args.config))
    if args.n is None:
        raise ConfigError("either --config or --n is required")
    if algorithm == "adaptive":
        return MarketConfig.strict(args.n)
    return MarketConfig.tiered((0, args.n), (0, args.n))


def _params_from_args(args: argparse.Namespace, n: int) -> NonAdaptiveParams:
    defaults = NonAdaptiveParams.defaults(n, args.log_base)
    delta = args.delta if args.delta is not None else defaults.delta
    theta = args.theta if args.theta is not None else max(defaults.theta, delta)
    return NonAdaptiveParams(delta=delta, theta=theta)


def _dump_artifacts(args: argparse.Namespace, market: Market, artifacts: dict) -> None:
    if getattr(args, "dump_market", None):
        _write_atomic(args.dump_market, market.to_json() + "\n")
    if getattr(args, "dump_ledger", None):
        ledger: InterviewLedger = artifacts["ledger"]
        _write_atomic(args.dump_ledger, json.dumps(ledger.to_dict(), separators=(",", ":")) + "\n")
    if getattr(args, "dump_matching", None):
        matching: Matching = artifacts["matching"]
        _write_atomic(args.dump_matching, json.dumps(matching.to_dict(), separators=(",", ":")) + "\n")


def _cmd_simulate(args: argparse.Namespace, algorithm: str) -> int:
    config = _market_config_from_args(args, algorithm)
    market = sample_market(config, args.seed)
    params = None
    if algorithm == "nonadaptive":
        params = _params_from_args(args, market.n)
    start = time.perf_counter()
    report, artifacts = run_market_trial(
        market, algorithm, params=params, log_base=args.log_base, plan_seed=args.seed
    )
    wall = time.perf_counter() - start
    if getattr(args, "trace", None):
        trace: TraceLog = artifacts["trace"]
        lines = [
            json.dumps(rec, sort_keys=True, separators=(",", ":"))
            for rec in trace.iter_jsonl_records(market)
        ]
        _write_atomic(args.trace, "\n".join(lines) + ("\n" if lines else ""))
    _dump_artifacts(args, market, artifacts)
    if args.format == "csv":
        _emit(trials_to_csv([report]), args.out)
    else:
        payload = {"report": report.to_dict(), "metadata": {"wall_time": wall}}
        _emit(_json_dumps(payload), args.out)
    return EXIT_OK if report.stable else EXIT_UNSTABLE


def _cmd_plan(args: argparse.Namespace) -> int:
    config = MarketConfig.from_dict(_load_json(args.config))
    params = _params_from_args(args, config.n)
    plan = build_plan(config.shape, params, args.seed)
    _emit(plan.to_json() + "\n", args.out)
    return EXIT_OK


def _cmd_resolve(args: argparse.Namespace) -> int:
    plan = InterviewPlan.from_dict(_load_json(args.plan))
    if args.config:
        config = MarketConfig.from_dict(_load_json(args.config))
        if config.shape != plan.shape:
            raise ConfigError("--config shape does not match the plan")
    else:
        shape = plan.shape
        config = MarketConfig(
            n=shape.n,
            m=shape.m,
            applicant_tiers=shape.applicant_tiers,
            position_tiers=shape.position_tiers,
            values=ValueGenerator("tiered"),
        )
    market = sample_market(config, args.seed)
    start = time.perf_counter()
    report, artifacts = run_market_trial(market, "nonadaptive", plan=plan)
    wall = time.perf_counter() - start
    _dump_artifacts(args, market, artifacts)
    if args.format == "csv":
        _emit(trials_to_csv([report]), args.out)
    else:
        payload = {
            "report": report.to_dict(),
            "failure": artifacts["failure"].to_dict(),
            "metadata": {"wall_time": wall},
        }
        _emit(_json_dumps(payload), args.out)
    return EXIT_OK if report.stable else EXIT_UNSTABLE


def _cmd_verify(args: argparse.Namespace) -> int:
    from .stability import verify

    market = Market.from_dict(_load_json(args.market))
    ledger = InterviewLedger.from_dict(_load_json(args.ledger))
    matching = Matching.from_dict(_load_json(args.matching))
    verdict = verify(market, ledger, matching)
    _emit(_json_dumps(verdict.to_dict()), args.out)
    return EXIT_OK if verdict.is_interim_stable else EXIT_UNSTABLE


def _cmd_sweep(args: argparse.Namespace) -> int:
    config = SweepConfig.from_dict(_load_json(args.config))
    if args.jobs is not None:
        config = SweepConfig.from_dict({**config.to_dict(), "jobs": args.jobs})
    if args.seed is not None:
        config = SweepConfig.from_dict({**config.to_dict(), "sweep_seed": args.seed})
    summary = run_sweep(config)
    if args.format == "csv":
        _emit(trials_to_csv(summary.reports), args.out)
    else:
        _emit(_json_dumps(summary.to_dict()), args.out)
    bad = any(r.status != "ok" or not r.stable for r in summary.reports)
    return EXIT_UNSTABLE if bad else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="interviewmatch", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser, nonadaptive: bool) -> None:
        p.add_argument("--n", type=int, default=None, help="market size (square market)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--config", help="market config JSON path")
        p.add_argument("--format", choices=("json", "csv"), default="json")
        p.add_argument("--out", help="output path (stdout if omitted)")
        p.add_argument("--log-base", type=float, default=None)
        p.add_argument("--dump-market", help="write the sampled market JSON here")
        p.add_argument("--dump-ledger", help="write the final interview ledger JSON here")
        p.add_argument("--dump-matching", help="write the final matching JSON here")
        if nonadaptive:
            p.add_argument("--delta", type=int, default=None)
            p.add_argument("--theta", type=int, default=None)

    p_sa = sub.add_parser("simulate-adaptive", help="one adaptive run with verification")
    add_common(p_sa, nonadaptive=False)
    p_sa.add_argument("--trace", help="write the JSON-lines event trace here")

    p_sn = sub.add_parser("simulate-nonadaptive", help="one plan+resolve run with verification")
    add_common(p_sn, nonadaptive=True)

    p_plan = sub.add_parser("plan", help="build an interview plan from a market shape")
    p_plan.add_argument("--config", required=True, help="market config JSON path")
    p_plan.add_argument("--seed", type=int, default=0)
    p_plan.add_argument("--delta", type=int, default=None)
    p_plan.add_argument("--theta", type=int, default=None)
    p_plan.add_argument("--log-base", type=float, default=None)
    p_plan.add_argument("--out", help="plan JSON path (stdout if omitted)")

    p_res = sub.add_parser("resolve", help="resolve a stored plan on a fresh noise draw")
    p_res.add_argument("--plan", required=True)
    p_res.add_argument("--seed", type=int, default=0)
    p_res.add_argument("--config", help="optional market config (must match the plan shape)")
    p_res.add_argument("--format", choices=("json", "csv"), default="json")
    p_res.add_argument("--out")
    p_res.add_argument("--dump-market")
    p_res.add_argument("--dump-ledger")
    p_res.add_argument("--dump-matching")

    p_ver = sub.add_parser("verify", help="check interim stability of stored artifacts")
    p_ver.add_argument("--market", required=True)
    p_ver.add_argument("--ledger", required=True)
    p_ver.add_argument("--matching", required=True)
    p_ver.add_argument("--out")

    p_sw = sub.add_parser("sweep", help="run a Monte Carlo sweep from a config file")
    p_sw.add_argument("--config", required=True)
    p_sw.add_argument("--seed", type=int, default=None, help="override the sweep seed")
    p_sw.add_argument("--format", choices=("csv", "json"), default="csv")
    p_sw.add_argument("--out")
    p_sw.add_argument("--jobs", type=int, default=None)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "log_base", None) is None:
        args.log_base = math.e
    try:
        if args.command == "simulate-adaptive":
            return _cmd_simulate(args, "adaptive")
        if args.command == "simulate-nonadaptive":
            return _cmd_simulate(args, "nonadaptive")
        if args.command == "plan":
            return _cmd_plan(args)
        if args.command == "resolve":
            return _cmd_resolve(args)
        if args.command == "verify":
            return _cmd_verify(args)
        if args.command == "sweep":
            return _cmd_sweep(args)
        parser.error(f"unknown command {args.command!r}")
    except (ConfigError, ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"interviewmatch: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
