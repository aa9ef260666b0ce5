"""Command-line front end: ``stochcg generate | solve | report``."""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import time

from . import blending
from .engine import EXACT, FIRST_IMPROVING, EngineConfig, StalledInfeasible, relative_gap, run
from .master import MasterInfeasible
from .minlp import STATUS_INFEASIBLE, STATUS_OPTIMAL, solve_global
from .parallel import resolve_workers
from .report import (RunReport, SchemaError, aggregate, convergence_csv, record_row,
                     write_atomic)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_GENERATOR = 3
EXIT_TIME_LIMIT = 4
EXIT_INFEASIBLE = 5


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _positive_int(s):
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {s}")
    return v


def _positive_float(s):
    v = float(s)
    if not v > 0 or not math.isfinite(v):
        raise argparse.ArgumentTypeError(f"must be positive, got {s}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="stochcg", description="Column generation for multistage blending.")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="sample a blending instance")
    g.add_argument("--tanks", type=_positive_int, required=True)
    g.add_argument("--outputs", type=_positive_int, required=True)
    g.add_argument("--periods", type=_positive_int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default="-", help="instance JSON path ('-' for stdout)")

    s = sub.add_parser("solve", help="solve an instance")
    s.add_argument("--method", choices=["fullspace", "cg", "cgcs"], required=True)
    s.add_argument("--instance", required=True)
    s.add_argument("--eps", type=_positive_float, default=1e-4)
    s.add_argument("--time-limit", type=_positive_float, default=None, help="seconds")
    s.add_argument("--threads", type=_positive_int, default=None,
                   help="worker count (overrides STOCHCG_THREADS)")
    s.add_argument("--pricing", choices=[EXACT, FIRST_IMPROVING], default=EXACT)
    s.add_argument("--max-iterations", type=_positive_int, default=200)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--timings", choices=["measured", "zero"], default="measured",
                   help="'zero' writes 0 for every time, making logs byte-reproducible")
    s.add_argument("--log", default=None, help="convergence CSV path")
    s.add_argument("--out", default="-", help="run report JSON path ('-' for stdout)")

    r = sub.add_parser("report", help="aggregate run reports")
    r.add_argument("--logs", nargs="+", required=True, help="run report JSON files")
    r.add_argument("--out", default="-")
    return p


def _emit(path, text):
    if path == "-":
        sys.stdout.write(text)
    else:
        write_atomic(path, text)


def cmd_generate(args) -> int:
    try:
        inst = blending.sample_instance(args.tanks, args.outputs, args.periods, args.seed)
    except blending.InfeasibleAfterRetries as exc:
        print(f"stochcg: {exc}", file=sys.stderr)
        return EXIT_GENERATOR
    _emit(args.out, inst.dumps())
    return EXIT_OK


def _load_instance(path):
    with open(path) as fh:
        text = fh.read()
    inst = blending.BlendingInstance.from_dict(json.loads(text))
    return inst, hashlib.sha256(text.encode()).hexdigest()[:16]


def _solve_fullspace(inst, args, clock, start):
    fm = blending.build_fullspace(inst)
    remaining = None if args.time_limit is None else max(args.time_limit - (clock() - start), 0.0)
    res = solve_global(fm, rel_tol=1e-9, time_limit=remaining, clock=clock)
    if res.status == STATUS_INFEASIBLE:
        return None
    status = "optimal" if res.status == STATUS_OPTIMAL else "time_limit"
    ub = res.upper_bound
    return dict(status=status, objective=ub if res.has_incumbent else None, lb=res.lower_bound,
                ub=ub, gap=relative_gap(res.lower_bound, ub), iterations=0, records=[],
                origins={}, added=0, shared=0)


def _solve_cg(inst, args, clock, start, workers):
    oracle = blending.BlendingOracle(inst)
    bm = blending.build_master(inst, oracle)
    cfg = EngineConfig(eps=args.eps, max_iterations=args.max_iterations, time_limit=args.time_limit,
                       sharing=args.method == "cgcs", pricing_mode=args.pricing, workers=workers,
                       seed=args.seed, clock=clock, start=start)
    res = run(inst.tree, bm.master, oracle, oracle if cfg.sharing else None, cfg)
    records = [record_row(r) for r in res.iterations]
    added = sum(r["cols_added"] for r in records)
    shared = sum(r["cols_shared"] for r in records)
    return dict(status=res.status, objective=res.objective, lb=res.bounds.lb, ub=res.bounds.ub,
                gap=res.bounds.gap, iterations=len(records), records=records,
                origins=bm.master.pool.origin_histogram(), added=added, shared=shared)


def cmd_solve(args) -> int:
    try:
        workers = resolve_workers(args.threads)
    except ValueError as exc:
        print(f"stochcg: {exc}", file=sys.stderr)
        return EXIT_USAGE
    clock = (lambda: 0.0) if args.timings == "zero" else time.perf_counter
    wall = time.perf_counter
    t0 = wall()
    start = clock()
    try:
        inst, inst_id = _load_instance(args.instance)
    except (OSError, ValueError, KeyError, blending.BlendingError) as exc:
        print(f"stochcg: cannot read instance: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        if args.method == "fullspace":
            out = _solve_fullspace(inst, args, clock, start)
        else:
            out = _solve_cg(inst, args, clock, start, workers)
    except (blending.SeedColumnInfeasible, blending.PricingInfeasible, StalledInfeasible,
            MasterInfeasible) as exc:
        print(f"stochcg: instance infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    if out is None:
        print("stochcg: instance infeasible", file=sys.stderr)
        return EXIT_INFEASIBLE
    seconds = 0.0 if args.timings == "zero" else wall() - t0
    if args.method == "fullspace":
        pp = seconds
    else:
        pp = sum(r["t_master_ms"] + r["t_pricing_max_ms"] + r["t_sharing_max_ms"]
                 for r in out["records"]) / 1e3
    report = RunReport(
        method=args.method, instance_id=inst_id, seed=inst.seed, dims=list(inst.dims),
        status=out["status"], objective=out["objective"], lb=out["lb"], ub=out["ub"],
        gap=out["gap"], eps=args.eps, iterations=out["iterations"], wall_time_s=seconds,
        perfect_parallel_s=pp, threads=workers, pricing_mode=args.pricing,
        records=out["records"], column_origins=out["origins"], cols_added_total=out["added"],
        cols_shared_total=out["shared"],
        additional_columns_pct=100.0 * out["shared"] / out["added"] if out["added"] else 0.0)
    if args.log:
        write_atomic(args.log, convergence_csv(out["records"]))
    _emit(args.out, report.dumps())
    solved = out["status"] in ("converged", "optimal") and (out["gap"] <= args.eps)
    if solved:
        return EXIT_OK
    return EXIT_TIME_LIMIT


def cmd_report(args) -> int:
    reports = []
    try:
        for path in args.logs:
            with open(path) as fh:
                text = fh.read()
            rep = RunReport.from_dict(json.loads(text))
            if rep.dumps() != text:
                raise SchemaError(f"{path} does not round-trip")
            reports.append(rep)
        agg = aggregate(reports)
    except (OSError, ValueError, TypeError, SchemaError) as exc:
        print(f"stochcg: {exc}", file=sys.stderr)
        return EXIT_USAGE
    _emit(args.out, json.dumps(agg, indent=1, sort_keys=True) + "\n")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return {"generate": cmd_generate, "solve": cmd_solve, "report": cmd_report}[args.cmd](args)


if __name__ == "__main__":
    sys.exit(main())
