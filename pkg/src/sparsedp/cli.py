"""Command-line front end: anonymize, query, verify, bench, synth.

Exit status is 0 on success, 1 when input data is unusable and 2 on a bad
flag combination.
"""

from __future__ import annotations

import argparse
import json
import secrets
import sys
from typing import List, Optional

import numpy as np

from .dyadic import (consistency_prune, dyadic_noise_spec, dyadic_transform, filter_prune_priority,
                     mark_dyadic)
from .harness import (SIGNIFICANCE, bench_throughput, equivalence_test, parse_config,
                      rows_to_csv, run_experiment, target_params)
from .noise import NoiseSpec
from .query import MODES, Query, QueryFormatError, format_report, read_queries
from .sketch import build_private_sketch, loads_sketch, sketch_point_estimate, write_sketch
from .summarizers import summarize
from .summary import SummaryFormatError, loads_summary, write_summary
from .table import (DomainSpec, ExperimentProfile, TableFormatError, read_table, save_sparse_table,
                    synth_table)

DEFAULT_SEED = 20240917
CLI_METHODS = ("filter", "filter1", "filter2", "threshold", "filter-threshold", "priority",
               "filter-priority", "geometric-full", "sketch")

# verify defaults: the small domain used by the equivalence suite
VERIFY_DEFAULTS = {"filter1": {"theta": 3}, "filter2": {"theta": 3}, "threshold": {"tau": 5},
                   "filter-threshold": {"theta": 2, "tau": 8}, "priority": {"s": 256},
                   "filter-priority": {"theta": 3, "s": 256}}


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


def _seed(text: str) -> int:
    if text == "random":
        return secrets.randbits(63)
    try:
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer or 'random', got {text!r}")


def _positive_float(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
    return value


def _int_list(text: str) -> List[int]:
    return [int(float(x)) for x in text.split(",") if x.strip()]


def _add_noise_flags(p: argparse.ArgumentParser, epsilon: float = 0.1):
    p.add_argument("--epsilon", type=_positive_float, default=epsilon,
                   help="privacy budget for the whole release")
    p.add_argument("--sensitivity", type=int, default=1)
    p.add_argument("--seed", type=_seed, default=DEFAULT_SEED,
                   help="integer seed, or 'random'")


def _add_param_flags(p: argparse.ArgumentParser):
    p.add_argument("--theta", type=int, help="filter cut-off")
    p.add_argument("--tau", type=int, help="threshold-sampling threshold")
    p.add_argument("--size", type=int, help="priority sample size s")
    p.add_argument("--sided", choices=("one", "two"), default="two",
                   help="filter direction when --method filter")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sparsedp",
                                     description="Private summaries of sparse count tables.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("anonymize", help="release a private summary of a table")
    p.add_argument("--input", required=True)
    dom = p.add_mutually_exclusive_group()
    dom.add_argument("--m", type=int, help="flat domain size")
    dom.add_argument("--cardinalities", help="comma-separated attribute sizes")
    p.add_argument("--method", choices=CLI_METHODS, required=True)
    _add_param_flags(p)
    p.add_argument("--target-size", type=float, help="choose theta/tau/s for about this many cells")
    p.add_argument("--dyadic", action="store_true", help="summarize the dyadic range tree")
    p.add_argument("--consistency", action="store_true",
                   help="prune dyadic nodes with an absent ancestor (filter methods)")
    p.add_argument("--width", type=int, default=256, help="sketch width")
    p.add_argument("--depth", type=int, default=1, help="sketch depth")
    p.add_argument("--out", required=True)
    _add_noise_flags(p)

    p = sub.add_parser("query", help="answer queries from a summary or sketch")
    p.add_argument("--summary", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--mode", choices=MODES, default="adjusted")
    p.add_argument("--combine", choices=("mean", "median"), default="mean",
                   help="row combination for sketches")
    p.add_argument("--table", help="true table; adds truth and error columns")
    p.add_argument("--out", help="report path (default stdout)")

    p = sub.add_parser("verify", help="shortcut vs laborious equivalence test")
    p.add_argument("--method", choices=tuple(VERIFY_DEFAULTS) + ("filter",), required=True)
    _add_param_flags(p)
    p.add_argument("--m", type=int, default=4096)
    p.add_argument("--n", type=int, default=128)
    p.add_argument("--trials", type=int, default=20_000)
    _add_noise_flags(p, epsilon=0.5)

    p = sub.add_parser("bench", help="throughput benchmark or experiment")
    p.add_argument("--config", help="key=value experiment file; overrides the other flags")
    p.add_argument("--methods", default="filter2,threshold,priority,filter-priority")
    p.add_argument("--m-grid", type=_int_list, default=[10**6, 10**7])
    p.add_argument("--n", type=int, default=10**4)
    p.add_argument("--target-size", type=float)
    p.add_argument("--paths", default="shortcut")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--out", help="CSV path (default stdout)")
    _add_noise_flags(p)

    p = sub.add_parser("synth", help="write a synthetic table")
    p.add_argument("--m", type=int, default=10**6)
    p.add_argument("--rho", type=float, default=0.1)
    p.add_argument("--mu", type=float, default=100.0)
    p.add_argument("--sigma", type=float, default=20.0)
    p.add_argument("--placement", choices=("uniform", "skewed"), default="uniform")
    p.add_argument("--seed", type=_seed, default=DEFAULT_SEED)
    p.add_argument("--out", required=True)
    return parser


# ---------------------------------------------------------------------------
# anonymize


def _method_name(args) -> str:
    if args.method == "filter":
        return "filter1" if args.sided == "one" else "filter2"
    return args.method


def _explicit_params(args, method: str) -> dict:
    need = {"filter1": ("theta",), "filter2": ("theta",), "threshold": ("tau",),
            "filter-threshold": ("theta", "tau"), "priority": ("size",),
            "filter-priority": ("theta", "size"), "geometric-full": (), "sketch": ()}[method]
    given = {k: getattr(args, k) for k in ("theta", "tau", "size") if getattr(args, k) is not None}
    extra = set(given) - set(need)
    if extra:
        raise UsageError(f"--{'/--'.join(sorted(extra))} not used by method {method}")
    missing = [k for k in need if k not in given]
    if missing:
        raise UsageError(f"method {method} needs --{' --'.join(missing)} or --target-size")
    return {("s" if k == "size" else k): v for k, v in given.items()}


def _target_params(table, method: str, t: float, spec: NoiseSpec) -> dict:
    if method in ("geometric-full", "sketch"):
        raise UsageError(f"--target-size does not apply to {method}")
    return target_params(method, table, t, spec)


def _validate(args, method: str) -> None:
    if args.target_size is not None:
        if any(getattr(args, k) is not None for k in ("theta", "tau", "size")):
            raise UsageError("--target-size excludes --theta, --tau and --size")
        if not args.target_size > 0:
            raise UsageError("--target-size must be positive")
    if args.consistency:
        if method not in ("filter1", "filter2", "filter-priority"):
            raise UsageError("--consistency applies only to filter-based methods")
        if not args.dyadic:
            raise UsageError("--consistency needs --dyadic")
    if method == "sketch" and args.dyadic:
        raise UsageError("--dyadic does not apply to sketches")


def _load_table(args):
    domain = None
    if args.m is not None:
        domain = DomainSpec.flat(args.m)
    elif args.cardinalities:
        try:
            domain = DomainSpec(tuple(int(c) for c in args.cardinalities.split(",")))
        except ValueError as exc:
            raise UsageError(f"bad --cardinalities: {exc}")
    try:
        return read_table(args.input, domain)
    except OSError as exc:
        raise DataError(str(exc))


def cmd_anonymize(args) -> int:
    method = _method_name(args)
    _validate(args, method)
    table = _load_table(args)
    spec = NoiseSpec(args.epsilon, args.sensitivity)
    rng = np.random.default_rng(args.seed)

    if method == "sketch":
        write_sketch(build_private_sketch(table, args.width, args.depth, spec, rng), args.out)
        return 0

    if args.dyadic:
        tree = dyadic_transform(table)
        work, work_spec = tree.as_table(), dyadic_noise_spec(spec, table.m)
    else:
        work, work_spec = table, spec
    if args.target_size is not None:
        params = _target_params(work, method, args.target_size, work_spec)
    else:
        params = _explicit_params(args, method)

    try:
        if args.dyadic and args.consistency and method == "filter-priority":
            summary = filter_prune_priority(table, params["theta"], params["s"], spec, rng)
        else:
            summary = summarize(work, method, params, work_spec, rng)
            if args.dyadic:
                summary = mark_dyadic(summary, table.m, tree.height)
                if args.consistency:
                    summary = consistency_prune(summary)
    except (ValueError, RuntimeError) as exc:
        raise DataError(str(exc))
    extra = {"n": table.n}
    if args.target_size is not None:
        extra["target_size"] = args.target_size
    # the seed is deliberately not written: it would let anyone regenerate the noise
    summary = summary.replace(params={**summary.params, **extra})
    write_summary(summary.released(), args.out)
    return 0


# ---------------------------------------------------------------------------
# query


def _sketch_answer(sketch, q: Query, combine: str) -> float:
    cells = np.arange(q.lo, q.hi + 1) if q.kind == "range" else q.cells
    return float(np.sum(sketch_point_estimate(sketch, cells, combine)))


def cmd_query(args) -> int:
    try:
        with open(args.summary, encoding="utf-8") as fh:
            text = fh.read()
        queries = read_queries(args.queries)
        table = read_table(args.table) if args.table else None
    except OSError as exc:
        raise DataError(str(exc))
    if text.startswith("#sketch"):
        sketch = loads_sketch(text)
        lines = ["query_id,estimate"]
        for qid, q in enumerate(queries):
            q.check(sketch.m)
            lines.append(f"{qid},{_sketch_answer(sketch, q, args.combine)!r}")
        report = "\n".join(lines) + "\n"
    else:
        summary = loads_summary(text)
        report = format_report(summary, queries, args.mode, table)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(report)
    else:
        sys.stdout.write(report)
    return 0


# ---------------------------------------------------------------------------
# verify / bench / synth


def cmd_verify(args) -> int:
    method = _method_name(args)
    params = dict(VERIFY_DEFAULTS[method])
    for key, flag in (("theta", args.theta), ("tau", args.tau), ("s", args.size)):
        if flag is not None:
            if key not in params:
                raise UsageError(f"method {method} takes no {key}")
            params[key] = flag
    if not 0 < args.n < args.m:
        raise UsageError("need 0 < --n < --m")
    table = synth_table(ExperimentProfile(m=args.m, rho=args.n / args.m, seed=args.seed))
    spec = NoiseSpec(args.epsilon, args.sensitivity)
    try:
        report = equivalence_test(table, method, params, spec, args.trials,
                                  np.random.default_rng(args.seed))
    except (ValueError, RuntimeError) as exc:
        raise DataError(str(exc))
    print(report.format())
    return 0 if report.passed(SIGNIFICANCE) else 1


def cmd_bench(args) -> int:
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                cfg = parse_config(fh)
        except OSError as exc:
            raise DataError(str(exc))
        except ValueError as exc:
            raise UsageError(str(exc))
        rows = run_experiment(cfg)
        out = cfg.get("output", args.out)
    else:
        spec = NoiseSpec(args.epsilon, args.sensitivity)
        reports = bench_throughput(args.methods.split(","), args.m_grid, args.n, spec,
                                   np.random.default_rng(args.seed), target=args.target_size,
                                   paths=args.paths.split(","), repeats=args.repeats)
        rows = [{"method": r.method, "path": r.path, "m": r.m, "n": r.n, "seconds": r.seconds,
                 "throughput": r.throughput, "output_size": r.output_size} for r in reports]
        out = args.out
    text = rows_to_csv(rows)
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_synth(args) -> int:
    try:
        profile = ExperimentProfile(m=args.m, rho=args.rho, mu=args.mu, sigma=args.sigma,
                                    placement=args.placement, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc))
    save_sparse_table(synth_table(profile), args.out)
    return 0


COMMANDS = {"anonymize": cmd_anonymize, "query": cmd_query, "verify": cmd_verify,
            "bench": cmd_bench, "synth": cmd_synth}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"sparsedp {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (DataError, TableFormatError, SummaryFormatError, QueryFormatError,
            json.JSONDecodeError) as exc:
        print(f"sparsedp {args.command}: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        # remaining ValueErrors come from query/table contents, e.g. out-of-domain cells
        print(f"sparsedp {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
