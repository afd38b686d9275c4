"""Command-line entry point: ``cqasat <subcommand> ...``.

Exit codes: 0 success, 1 runtime error (including a failed ``verify``),
2 usage error or unsupported query.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import random
import shlex
import sys
import threading
import time
from decimal import Decimal
from fractions import Fraction
from pathlib import Path

from . import __version__
from .data_io import (
    SYNTHETIC_QUERY,
    GeneratorConfig,
    load_instance,
    maxcut_instance,
    random_dc_instance,
    random_graph,
    random_key_instance,
    read_graph,
    synthetic_instance,
    write_instance,
)
from .encoding import WcnfFormula
from .engine import EngineOptions, GroupedRangeAnswers, RangeAnswer, Stats, encode_query, range_answers
from .evaluation import minimal_violations
from .oracle import DEFAULT_LIMIT, oracle_range_answer
from .query import AggQuery, QueryError, UnsupportedQueryError, parse_query
from .relational import Instance
from .sat import SolverConfig, write_wcnf

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# -- formatting ---------------------------------------------------------------

def format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, Fraction):
        if v.denominator == 1:
            return str(v.numerator)
        return str(Decimal(v.numerator) / Decimal(v.denominator))
    return str(v)


def json_value(v):
    if isinstance(v, Fraction):
        return v.numerator if v.denominator == 1 else format_value(v)
    return v


def format_interval(a: RangeAnswer) -> str:
    text = f"[{format_value(a.glb_value)}, {format_value(a.lub_value)}]"
    if a.empty_possible:
        text += " (empty possible)"
    return text


def _answers(result) -> list[RangeAnswer]:
    if isinstance(result, GroupedRangeAnswers):
        return list(result)
    if isinstance(result, dict):
        return list(result.values())
    return [result]


def _stats(result) -> Stats:
    if isinstance(result, GroupedRangeAnswers):
        return result.stats
    if isinstance(result, RangeAnswer):
        return result.stats
    return Stats()


def answer_record(a: RangeAnswer) -> dict:
    s = a.stats
    return {
        "group_key": None if a.group_key is None else [json_value(v) for v in a.group_key],
        "glb": json_value(a.glb_value),
        "lub": json_value(a.lub_value),
        "empty_possible": a.empty_possible,
        "stats": {"vars": s.vars, "clauses": s.clauses, "soft": s.soft, "sat_calls": s.sat_calls,
                  "encode_ms": round(s.encode_ms, 3), "solve_ms": round(s.solve_ms, 3)},
    }


def print_result(result, args, query_text: str, extra: dict | None = None, with_stats: bool = True) -> None:
    answers = _answers(result)
    if args.json:
        report = {"query": query_text, "answers": [answer_record(a) for a in answers]}
        if with_stats:
            report["stats"] = _stats(result).as_dict()
        report.update(extra or {})
        print(json.dumps(report, indent=2, sort_keys=True))
        return
    for a in answers:
        if a.group_key is None:
            print(format_interval(a))
        else:
            print("\t".join(format_value(v) for v in a.group_key) + "\t" + format_interval(a))
    if with_stats:
        s = _stats(result).as_dict()
        print("# " + " ".join(f"{k}={v}" for k, v in s.items()))


# -- shared loading -----------------------------------------------------------

def _query_text(args) -> str:
    if args.query and args.query_file:
        raise UsageError("give either --query or --query-file, not both")
    if args.query_file:
        return Path(args.query_file).read_text(encoding="utf-8").strip()
    if args.query:
        return args.query
    raise UsageError("a query is required (--query or --query-file)")


def _load(args) -> tuple[Instance, AggQuery, str]:
    text = _query_text(args)
    inst = load_instance(args.schema, args.data)
    q = parse_query(text, inst.schema)
    if not isinstance(q, AggQuery):
        raise UnsupportedQueryError("queries without an aggregate")
    return inst, q, text


def solver_config(args) -> SolverConfig:
    extra = tuple(shlex.split(args.solver_args or ""))
    kw = {"time_limit": args.time_limit, "seed": args.seed, "wcnf_format": args.wcnf_format}
    if args.solver in (None, "internal"):
        return SolverConfig(**kw)
    if args.solver == "external":
        return SolverConfig.external(None, extra, **kw)
    return SolverConfig.external(args.solver, extra, **kw)


class _WcnfDumper:
    """Writes every formula handed to a solver into a directory."""

    def __init__(self, out_dir: str, fmt: str):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.fmt = fmt
        self.n = 0
        self.lock = threading.Lock()
        self.paths: list[Path] = []

    def __call__(self, kind: str, formula: WcnfFormula) -> None:
        with self.lock:
            self.n += 1
            path = self.dir / f"{self.n:04d}_{kind}.wcnf"
            self.paths.append(path)
        with path.open("w", encoding="utf-8") as fh:
            write_wcnf(formula, fh, self.fmt)


def engine_options(args, sink=None) -> EngineOptions:
    if args.jobs < 1:
        raise UsageError("--jobs must be at least 1")
    return EngineOptions(solver=solver_config(args), shortcut=not args.no_shortcut,
                         binary_search=args.binary_search, top_k_descending=args.top_k_order == "desc",
                         jobs=args.jobs, wcnf_sink=sink)


# -- subcommands --------------------------------------------------------------

def cmd_query(args) -> int:
    inst, q, text = _load(args)
    sink = _WcnfDumper(args.wcnf_out, args.wcnf_format) if args.wcnf_out else None
    opts = engine_options(args, sink)
    result = range_answers(q, inst, opts)
    extra = {"solver": opts.solver.backend if opts.solver.backend == "internal" else opts.solver.path,
             "seed": args.seed}
    if sink:
        extra["wcnf_files"] = [str(p) for p in sink.paths]
    print_result(result, args, text, extra)
    return EXIT_OK


def cmd_oracle(args) -> int:
    inst, q, text = _load(args)
    t = time.perf_counter()
    result = oracle_range_answer(q, inst, args.limit)
    extra = {"oracle_ms": round(1000 * (time.perf_counter() - t), 3)}
    print_result(result, args, text, extra, with_stats=False)
    return EXIT_OK


def _by_group(result) -> dict:
    return {a.group_key: a for a in _answers(result)}


def compare_results(pipeline, oracle) -> list[str]:
    """Differences between two results, one line per differing group or bound."""
    p, o = _by_group(pipeline), _by_group(oracle)
    out = []
    for key in sorted(set(p) | set(o), key=lambda k: repr(k)):
        name = "scalar" if key is None else "group " + ", ".join(format_value(v) for v in key)
        if key not in o:
            out.append(f"{name}: reported by pipeline only {format_interval(p[key])}")
        elif key not in p:
            out.append(f"{name}: reported by oracle only {format_interval(o[key])}")
        else:
            a, b = p[key], o[key]
            for bound in ("glb", "lub"):
                x, y = getattr(a, bound + "_value"), getattr(b, bound + "_value")
                if x != y:
                    out.append(f"{name}: {bound} pipeline {format_value(x)} oracle {format_value(y)}")
            if a.empty_possible != b.empty_possible:
                out.append(f"{name}: empty_possible pipeline {a.empty_possible} oracle {b.empty_possible}")
    return out


def cmd_verify(args) -> int:
    inst, q, text = _load(args)
    pipeline = range_answers(q, inst, engine_options(args))
    oracle = oracle_range_answer(q, inst, args.limit)
    diffs = compare_results(pipeline, oracle)
    if args.json:
        print(json.dumps({"query": text, "pass": not diffs, "differences": diffs}, indent=2, sort_keys=True))
    else:
        for d in diffs:
            print("MISMATCH " + d)
        print("FAIL" if diffs else "PASS")
    return EXIT_RUNTIME if diffs else EXIT_OK


def _generator_config(args, inconsistency: float | None = None, size: int | None = None) -> GeneratorConfig:
    return GeneratorConfig(size=args.size if size is None else size,
                           inconsistency=args.inconsistency if inconsistency is None else inconsistency,
                           min_group=args.min_group, max_group=args.max_group, seed=args.seed)


def cmd_generate(args) -> int:
    rng = random.Random(args.seed)
    if args.kind == "synthetic":
        inst = synthetic_instance(_generator_config(args))
    elif args.kind == "maxcut":
        if args.graph:
            n, edges = read_graph(args.graph)
        else:
            n, edges = args.vertices, random_graph(args.vertices, args.edge_prob, rng)
        inst = maxcut_instance(n, edges)
    elif args.kind == "random-key":
        inst = random_key_instance(rng)
    else:
        inst = random_dc_instance(rng)
    write_instance(inst, args.out)
    dirty = {f for v in minimal_violations(inst) for f in v}
    print(f"wrote {len(inst)} facts ({len(dirty)} in violations) to {args.out}")
    return EXIT_OK


BENCH_COLUMNS = ("size", "inconsistency", "facts", "dirty_facts", "vars", "clauses", "soft", "sat_calls",
                 "maxsat_calls", "glb", "lub", "encode_ms", "solve_ms")


def bench_rows(args) -> list[dict]:
    sizes = [int(s) for s in args.sizes.split(",")]
    levels = [float(s) for s in args.levels.split(",")]
    text = args.query or SYNTHETIC_QUERY
    opts = engine_options(args)
    rows = []
    for size in sizes:
        for level in levels:
            inst = synthetic_instance(_generator_config(args, level, size))
            q = parse_query(text, inst.schema)
            if not isinstance(q, AggQuery):
                raise UnsupportedQueryError("queries without an aggregate")
            result = range_answers(q, inst, opts)
            s = _stats(result)
            dirty = {f for v in minimal_violations(inst) for f in v}
            a = _answers(result)
            scalar = len(a) == 1 and a[0].group_key is None
            rows.append({"size": size, "inconsistency": level, "facts": len(inst), "dirty_facts": len(dirty),
                         "vars": s.vars, "clauses": s.clauses, "soft": s.soft, "sat_calls": s.sat_calls,
                         "maxsat_calls": s.maxsat_calls,
                         "glb": format_value(a[0].glb_value) if scalar else "",
                         "lub": format_value(a[0].lub_value) if scalar else "",
                         "encode_ms": round(s.encode_ms, 3), "solve_ms": round(s.solve_ms, 3)})
    return rows


def cmd_bench(args) -> int:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=BENCH_COLUMNS, lineterminator="\n")
    w.writeheader()
    for row in bench_rows(args):
        w.writerow(row)
    if args.out:
        Path(args.out).write_text(buf.getvalue(), encoding="utf-8")
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(buf.getvalue())
    return EXIT_OK


def cmd_encode(args) -> int:
    inst, q, _ = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, formula in encode_query(q, inst):
        path = out / f"{name}.wcnf"
        with path.open("w", encoding="utf-8") as fh:
            write_wcnf(formula, fh, args.wcnf_format)
        print(f"{path}\tvars={formula.num_vars} hard={len(formula.hard)} soft={len(formula.soft)}")
    return EXIT_OK


# -- argument parsing ---------------------------------------------------------

def read_config(path: str) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment; values may be quoted."""
    out = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line or (line.startswith("[") and line.endswith("]")):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if len(value) >= 2 and value[0] == value[-1] and value[0] in "\"'":
            value = value[1:-1]
        out[key.replace("-", "_")] = value
    return out


def _common(p: argparse.ArgumentParser, data: bool = True, query: bool = True) -> None:
    p.add_argument("--json", action="store_true", help="machine-readable output")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="file of key = value defaults")
    if data:
        p.add_argument("--schema", required=True, help="schema file")
        p.add_argument("--data", required=True, help="directory with one CSV per relation")
    if query:
        p.add_argument("--query", help="SQL text")
        p.add_argument("--query-file", help="file holding the SQL text")


def _engine_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--solver", default="internal",
                   help="'internal', 'external' (uses $CQASAT_SOLVER) or a path to a MaxSAT solver")
    p.add_argument("--solver-args", default="", help="extra arguments for an external solver")
    p.add_argument("--time-limit", type=float, default=3600.0, help="seconds per solver call")
    p.add_argument("--wcnf-format", choices=("classic", "new"), default="classic")
    p.add_argument("--no-shortcut", action="store_true", help="always build formulas")
    p.add_argument("--binary-search", action="store_true", help="binary search for MIN/MAX bounds")
    p.add_argument("--top-k-order", choices=("asc", "desc"), default="asc",
                   help="group order for TOP k without ORDER BY")
    p.add_argument("--jobs", type=int, default=1, help="threads for per-group work")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cqasat", description="Range consistent answers via MaxSAT")
    parser.add_argument("--version", action="version", version=f"cqasat {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("query", help="range consistent answers")
    _common(p)
    _engine_flags(p)
    p.add_argument("--wcnf-out", help="directory receiving every formula sent to a solver")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("oracle", help="answers by enumerating every repair")
    _common(p)
    p.add_argument("--limit", type=int, default=DEFAULT_LIMIT, help="maximum number of repairs")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("verify", help="compare the pipeline with the oracle")
    _common(p)
    _engine_flags(p)
    p.add_argument("--limit", type=int, default=DEFAULT_LIMIT)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("generate", help="write a generated instance")
    _common(p, data=False, query=False)
    p.add_argument("--kind", choices=("synthetic", "maxcut", "random-key", "random-dc"), default="synthetic")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--size", type=int, default=1000)
    p.add_argument("--inconsistency", type=float, default=10.0, help="percent of facts in violations")
    p.add_argument("--min-group", type=int, default=2)
    p.add_argument("--max-group", type=int, default=7)
    p.add_argument("--graph", help="graph file for --kind maxcut")
    p.add_argument("--vertices", type=int, default=6)
    p.add_argument("--edge-prob", type=float, default=0.5)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("bench", help="timings over an inconsistency sweep, as CSV")
    _common(p, data=False)
    _engine_flags(p)
    p.add_argument("--sizes", default="1000", help="comma-separated facts per relation")
    p.add_argument("--levels", default="5,10,15,20,25,30,35", help="comma-separated inconsistency percentages")
    p.add_argument("--min-group", type=int, default=2)
    p.add_argument("--max-group", type=int, default=7)
    p.add_argument("--out", help="CSV file (default: stdout)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("encode", help="write WCNF formulas without solving")
    _common(p)
    p.add_argument("--wcnf-format", choices=("classic", "new"), default="classic")
    p.add_argument("--out", default="wcnf", help="output directory")
    p.set_defaults(func=cmd_encode)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config or not known.command:
        return
    values = read_config(known.config)
    sub = parser._subparsers._group_actions[0].choices.get(known.command)
    if sub is None:
        return
    dests = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, value in values.items():
        action = dests.get(key)
        if action is None:
            raise UsageError(f"{known.config}: unknown setting {key!r} for {known.command}")
        if isinstance(action, argparse._StoreTrueAction):
            defaults[key] = value.lower() in ("1", "true", "yes", "on")
        else:
            defaults[key] = action.type(value) if action.type else value
        action.required = False
    sub.set_defaults(**defaults)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE
    except UnsupportedQueryError as e:
        print(f"cqasat: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (UsageError, QueryError) as e:
        print(f"cqasat: usage: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, RuntimeError, ArithmeticError) as e:
        print(f"cqasat: error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
