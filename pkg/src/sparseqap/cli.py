"""Command line entry point: ``sparseqap {generate,solve,verify,bench}``.

Exit status is 0 on success, 1 when the solver or an input file fails, and 2
for usage errors.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import bench
from .exceptions import QapError
from .instance import GeneratorConfig, generate_instance, parse_qaplib, write_qaplib
from .solver import TRACE_FIELDS, SolverParams, run, verify_equivalence


def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("instance", type=Path, help="instance file (n, then flow and distance matrices)")
    p.add_argument("--distance-first", action="store_true", help="the file lists the distance matrix first")
    p.add_argument("--iterations", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tenure-min", type=int, default=None, help="default floor(0.9 n)")
    p.add_argument("--tenure-max", type=int, default=None, help="default ceil(1.1 n)")
    p.add_argument("--aspiration", type=int, default=None, help="default 5 n^2")
    p.add_argument("--init", choices=("random", "identity"), default="random")
    p.add_argument("--debug", action="store_true", help="audit the full state after every step (slow)")


def _params(args) -> SolverParams:
    return SolverParams(
        iterations=args.iterations,
        seed=args.seed,
        tenure_min=args.tenure_min,
        tenure_max=args.tenure_max,
        aspiration=args.aspiration,
        initial_permutation=args.init,
        debug=args.debug,
        instrument=not getattr(args, "no_instrument", False),
    )


def _load(args):
    return parse_qaplib(args.instance.read_text(), distance_first=args.distance_first, name=args.instance.stem)


def _emit(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sparseqap", description="Robust tabu search for sparse QAP instances.")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a random k-regular instance on a square grid")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--k", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--distance-scale", type=int, default=1000)
    g.add_argument("--distance-first", action="store_true")
    g.add_argument("-o", "--output", type=Path, default=None)

    s = sub.add_parser("solve", help="run one engine and print a JSON report")
    _add_solver_flags(s)
    s.add_argument("--engine", choices=("dense", "sparse"), default="sparse")
    s.add_argument("--no-instrument", action="store_true", help="skip per-phase cycle counting")
    s.add_argument("--trace", type=Path, default=None, help="also write the move trace as CSV")
    s.add_argument("-o", "--output", type=Path, default=None)

    v = sub.add_parser("verify", help="run both engines in lockstep; exit 0 iff their traces match")
    _add_solver_flags(v)
    v.add_argument("-o", "--output", type=Path, default=None)

    b = sub.add_parser("bench", help="timing experiments, CSV output")
    b.add_argument("mode", choices=("scaling", "degree", "pq"))
    b.add_argument("--n", type=int, nargs="+", default=None,
                   help="sizes (scaling: default 250 500 1000 2000; degree: 400; pq: 2500)")
    b.add_argument("--k", type=int, nargs="+", default=None,
                   help="degrees (degree: default 3 6 9 12; otherwise 3)")
    b.add_argument("--iterations", type=int, default=10_000)
    b.add_argument("--seeds", type=int, default=3, help="number of seeds to take medians over")
    b.add_argument("--quick", action="store_true", help="allow fewer than 3 seeds")
    b.add_argument("-o", "--output", type=Path, default=None)
    return parser


def _cmd_generate(args) -> int:
    inst = generate_instance(GeneratorConfig(args.n, args.k, args.seed, args.distance_scale))
    _emit(write_qaplib(inst, distance_first=args.distance_first), args.output)
    return 0


def _cmd_solve(args) -> int:
    result = run(_load(args), _params(args), args.engine)
    trace_path = None
    if args.trace is not None:
        with open(args.trace, "w") as fh:
            fh.write(",".join(TRACE_FIELDS) + "\n")
            for rec in result.trace:
                fh.write(",".join(str(getattr(rec, f)) for f in TRACE_FIELDS) + "\n")
        trace_path = str(args.trace)
    _emit(json.dumps(result.to_report(trace_path), indent=2) + "\n", args.output)
    return 0


def _cmd_verify(args) -> int:
    report = verify_equivalence(_load(args), _params(args))
    body = {"identical": report.identical, "iterations": report.iterations, "divergence": report.divergence}
    _emit(json.dumps(body, indent=2, default=_jsonable) + "\n", args.output)
    print(report, file=sys.stderr)
    return 0 if report.identical else 1


def _jsonable(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    return str(obj)


def _cmd_bench(args, parser) -> int:
    if args.seeds < 1 or (args.seeds < 3 and not args.quick):
        parser.error("timings are medians over at least 3 seeds; pass --quick to use fewer")
    seeds = list(range(args.seeds))

    def progress(pt):
        print(f"{pt.engine:6s} n={pt.n} k={pt.k} seed={pt.seed}: {pt.sec_per_iter * 1e6:.1f} us/iter",
              file=sys.stderr)

    if args.mode == "scaling":
        ns = args.n or [250, 500, 1000, 2000]
        report = bench.bench_scaling(ns, (args.k or [3])[0], args.iterations, seeds, progress=progress)
        points = report.points
        print(report.summary(), file=sys.stderr)
    elif args.mode == "degree":
        n = (args.n or [400])[0]
        points = bench.bench_degree(n, args.k or [3, 6, 9, 12], args.iterations, seeds, progress=progress)
        slope, intercept, resid = bench.degree_fit(points)
        print(f"fit: {slope * 1e6:.3f} us/iter per unit k, intercept {intercept * 1e6:.2f} us/iter", file=sys.stderr)
        for k, r in resid.items():
            print(f"  k={k}: {100 * r:+.1f}% from the line", file=sys.stderr)
    else:
        n = (args.n or [2500])[0]
        k = (args.k or [3])[0]
        points = []
        for seed in seeds:
            inst = generate_instance(GeneratorConfig(n, k, seed=seed))
            pt = bench.measure(inst, "sparse", args.iterations, seed, k=k)
            progress(pt)
            points.append(pt)
        share = float(np.median([pt.pq_fraction for pt in points]))
        print(f"queue time share at n={n}, k={k}: {share:.4f}", file=sys.stderr)
    if args.output is None:
        bench.write_csv(points, sys.stdout)
    else:
        with open(args.output, "w", newline="") as fh:
            bench.write_csv(points, fh)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "generate":
            return _cmd_generate(args)
        if args.command == "solve":
            return _cmd_solve(args)
        if args.command == "verify":
            return _cmd_verify(args)
        return _cmd_bench(args, parser)
    except (QapError, OSError) as exc:
        print(f"sparseqap: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
