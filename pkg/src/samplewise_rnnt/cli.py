"""Command-line entry point: ``bench``, ``sweep`` and ``verify``.

Exit codes: 0 ok, 1 verify failure, 2 usage error, 3 numeric degeneracy, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys

from .bench import DESK_PRESET, FULL_PRESET, BenchConfig, analytic_sizes, emit_report, run_benchmark, sweep
from .engine import MODES
from .errors import InvalidInputError, InvalidShapeError, NumericalDegeneracyError
from .verify import verify

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _add_bench_args(p):
    p.add_argument("--mode", choices=MODES, default="batched")
    p.add_argument("--preset", choices=("desk", "full"), default="desk",
                   help="dimension defaults; 'full' uses H=1024, V=4096, T=500, U=100")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--t", type=int)
    p.add_argument("--u", type=int)
    p.add_argument("--h", type=int)
    p.add_argument("--ha", type=int)
    p.add_argument("--hl", type=int)
    p.add_argument("--v", type=int)
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--precision", choices=("f32", "f64"), default="f32")
    p.add_argument("--mem-budget", type=float, default=1e9, help="bytes available to parallel sample pipelines")
    p.add_argument("--alloc-ceiling", type=float, help="simulated device memory limit in bytes")
    p.add_argument("--workers", type=int, default=4)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out", metavar="PATH", help="write the report here instead of stdout")
    p.add_argument("--dry-run", action="store_true", help="print analytic tensor sizes and exit")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="samplewise-rnnt", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    bench = sub.add_parser("bench", help="benchmark one configuration")
    _add_bench_args(bench)
    sw = sub.add_parser("sweep", help="benchmark along batch size or input lengths")
    _add_bench_args(sw)
    sw.add_argument("--axis", choices=("batch-size", "lengths"), required=True)
    sw.add_argument("--values", required=True,
                    help="comma list; batch sizes, or lengths as TxU pairs (e.g. 50x10,139x27) or scale factors")
    ver = sub.add_parser("verify", help="run the correctness battery")
    ver.add_argument("--scale", choices=("small", "medium"), default="small")
    return parser


def config_from_args(args) -> BenchConfig:
    preset = FULL_PRESET if args.preset == "full" else DESK_PRESET
    pick = lambda value, key: preset[key] if value is None else value  # noqa: E731
    return BenchConfig(
        B=pick(args.batch_size, "B"), T=pick(args.t, "T"), U=pick(args.u, "U"), H=pick(args.h, "H"),
        H_A=pick(args.ha, "H_A"), H_L=pick(args.hl, "H_L"), V=pick(args.v, "V"),
        mode=args.mode, warmup_steps=args.warmup, bench_steps=args.steps, seed=args.seed,
        precision=args.precision, mem_budget_bytes=int(args.mem_budget),
        allocation_ceiling_bytes=None if args.alloc_ceiling is None else int(args.alloc_ceiling),
        output_format=args.format, worker_count=args.workers,
    )


def _print_sizes(cfg: BenchConfig) -> None:
    sizes = analytic_sizes(cfg)
    print(json.dumps({k: f"{v / 2**30:.3f} GiB" for k, v in sizes.items()}, indent=2), file=sys.stderr)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "verify":
            return verify(args.scale)

        cfg = config_from_args(args)
        if args.preset == "full" or args.dry_run:
            _print_sizes(cfg)
        if args.dry_run:
            return EXIT_OK
        if args.command == "bench":
            results = [run_benchmark(cfg)]
        else:
            values = [v.strip() for v in args.values.split(",") if v.strip()]
            if args.axis == "batch-size":
                values = [int(v) for v in values]
            results = sweep(cfg, args.axis, values)
        text = emit_report(results, cfg.output_format, args.out)
        if args.out is None:
            sys.stdout.write(text)
        return EXIT_OK
    except (InvalidInputError, InvalidShapeError) as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalDegeneracyError as e:
        print(f"numeric degeneracy: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
