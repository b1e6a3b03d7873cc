"""Command line: ``osplab run``, ``osplab compare`` and ``osplab check``."""
from __future__ import annotations

import argparse
import json
import sys
from typing import List, Optional

from .config import SYNC_MODELS, config_json, parse_config
from .errors import ConfigError, OspLabError


def _int_list(text: str) -> List[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _float_list(text: str) -> List[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


# flag -> config key; None defaults mean "not given", so file values survive
_FLAGS = [
    ("--sync", dict(choices=SYNC_MODELS)),
    ("--workers", dict(type=int)),
    ("--bandwidth-gbps", dict(type=float)),
    ("--latency-us", dict(type=float)),
    ("--loss-rate", dict(type=float)),
    ("--tc-ms", dict(type=float)),
    ("--model-widths", dict(type=_int_list, help="comma-separated layer widths, e.g. 16,64,64,4")),
    ("--batch", dict(type=int)),
    ("--epochs", dict(type=int)),
    ("--max-iterations", dict(type=int)),
    ("--learning-rate", dict(type=float)),
    ("--seed", dict(type=int)),
    ("--ssp-staleness", dict(type=int)),
    ("--chunk-period-ms", dict(type=float)),
    ("--osp-budget-bytes", dict(type=int, help="fixed ICS budget instead of the per-epoch schedule")),
    ("--jitter", dict(type=float)),
    ("--stragglers", dict(type=_float_list, help="per-worker compute multipliers, e.g. 1,1,2")),
    ("--out", dict()),
]


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override its values")
    for flag, kw in _FLAGS:
        p.add_argument(flag, default=None, **kw)
    p.add_argument("--eq5-literal", action="store_const", const=True, default=None,
                   help="scale the ICS bound by (1 + loss rate) instead of dividing by it")
    p.add_argument("--no-trace", dest="trace", action="store_const", const=False, default=None,
                   help="do not write the event trace")


def _config_from(args):
    flags = {flag[2:].replace("-", "_"): getattr(args, flag[2:].replace("-", "_")) for flag, _ in _FLAGS}
    flags["eq5_literal"] = args.eq5_literal
    flags["trace"] = args.trace
    return parse_config(args.config, flags)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="osplab", description="Simulated parameter-server synchronization lab")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one experiment")
    _add_config_flags(run)
    cmp_ = sub.add_parser("compare", help="run every sync model on one shared config")
    _add_config_flags(cmp_)
    cmp_.add_argument("--models", type=lambda s: s.split(","), default=list(SYNC_MODELS),
                      help="comma-separated subset of " + ",".join(SYNC_MODELS))
    chk = sub.add_parser("check", help="run the acceptance checks")
    chk.add_argument("--only", type=_int_list, default=None, help="comma-separated criterion numbers")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "check":
            from .checks import CRITERIA, run_check
            failed = 0
            for n in args.only or sorted(CRITERIA):
                if n not in CRITERIA:
                    raise ConfigError("only", f"no criterion {n}")
                r = run_check(n)
                print(r.line(), flush=True)
                failed += not r.passed
            return 1 if failed else 0

        from .runner import report_text, run_comparison, run_experiment
        cfg = _config_from(args)
        sys.stdout.write(config_json(cfg))
        if args.command == "run":
            res = run_experiment(cfg)
            s = res.summary
            print(json.dumps({"iterations": s.iterations, "sim_time": s.final_sim_time,
                              "throughput": s.throughput, "top1": s.top1,
                              "iterations_to_top1": s.iterations_to_top1, "mean_bst": s.mean_bst}))
            return 0
        table = run_comparison(cfg, args.models)
        sys.stdout.write(report_text(table))
        return 0 if all(r.status == "ok" for r in table.rows) else 1
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except OspLabError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
