"""Command-line benchmark runner.

Subcommands:
    run  --config spec.json        replay a full spec from a JSON file
    toy  --n ... --methods ...     synthetic 1-d benchmark
    csv  --train ... --target ...  user-supplied CSV benchmark
"""

from __future__ import annotations

import argparse
import sys

from .bench import METHODS, BenchmarkSpec, run_benchmark


def _csv_ints(text):
    return [int(v) for v in text.split(",") if v.strip()]


def _csv_strs(text):
    return [v.strip() for v in text.split(",") if v.strip()]


def _add_common(parser):
    parser.add_argument("--methods", type=_csv_strs, default=list(METHODS),
                        help=f"comma-separated subset of {','.join(METHODS)}")
    parser.add_argument("--seeds", type=_csv_ints, default=[0], help="comma-separated seeds")
    sizing = parser.add_mutually_exclusive_group()
    sizing.add_argument("--experts", type=_csv_ints, help="comma-separated expert counts")
    sizing.add_argument("--points-per-expert", type=_csv_ints,
                        help="comma-separated partition sizes (converted to expert counts)")
    parser.add_argument("--lambda", dest="lam", type=float, default=0.1, help="glasso penalty")
    parser.add_argument("--clusters", type=int, default=None,
                        help="dgea cluster count (default: max(2, M/4))")
    parser.add_argument("--outer", choices=("gpoe", "grbcm"), default="gpoe",
                        help="dgea outer aggregation rule")
    parser.add_argument("--probe-split", type=float, default=None,
                        help="cluster on this fraction of the test points (non-reference shortcut)")
    parser.add_argument("--opt-iters", type=int, default=50, help="max optimizer iterations")
    parser.add_argument("--independent-experts", action="store_true",
                        help="fit hyperparameters per expert instead of shared")
    parser.add_argument("--out", default=None, help="results CSV path")
    parser.add_argument("--report", default=None, help="text report path")
    parser.add_argument("--dump-graph", default=None,
                        help="path prefix for the dgea precision matrix and cluster labels")
    parser.add_argument("--dump-predictions", default=None,
                        help="path prefix for a per-test-point predictions CSV")


def _spec_from_args(args, dataset):
    spec = BenchmarkSpec(
        dataset=dataset,
        methods=args.methods,
        seeds=args.seeds,
        experts=args.experts,
        points_per_expert=args.points_per_expert,
        lam=args.lam,
        clusters=args.clusters,
        outer=args.outer,
        probe_fraction=args.probe_split,
        opt_max_iter=args.opt_iters,
        shared_hyperparams=not args.independent_experts,
        output_csv=args.out,
        report_path=args.report,
        dump_graph=args.dump_graph,
        dump_predictions=args.dump_predictions,
    )
    return spec


def build_parser():
    parser = argparse.ArgumentParser(prog="dgp-bench", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a benchmark described by a JSON config")
    run_p.add_argument("--config", required=True, help="JSON file mirroring the spec fields")
    run_p.add_argument("--out", default=None, help="override the config's results CSV path")

    toy_p = sub.add_parser("toy", help="benchmark on the synthetic 1-d function")
    toy_p.add_argument("--n", type=int, default=10_000, help="training points")
    toy_p.add_argument("--test-n", type=int, default=1_000, help="test points")
    toy_p.add_argument("--data-seed", type=int, default=0, help="seed of the generated data")
    _add_common(toy_p)

    csv_p = sub.add_parser("csv", help="benchmark on user-supplied CSV data")
    csv_p.add_argument("--train", required=True, help="training CSV (header row, numeric cells)")
    csv_p.add_argument("--test", default=None, help="test CSV; omit to split --train")
    csv_p.add_argument("--test-frac", type=float, default=None,
                       help="held-out fraction of --train when --test is omitted")
    csv_p.add_argument("--target", required=True, help="name of the target column")
    _add_common(csv_p)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        spec = BenchmarkSpec.from_json(args.config)
        if args.out:
            spec.output_csv = args.out
    elif args.command == "toy":
        spec = _spec_from_args(args, "toy")
        spec.n = args.n
        spec.n_t = args.test_n
        spec.data_seed = args.data_seed
    else:
        spec = _spec_from_args(args, "csv")
        spec.train_path = args.train
        spec.test_path = args.test
        spec.test_fraction = args.test_frac
        spec.target = args.target
    result = run_benchmark(spec)
    print(result.summary())
    if spec.output_csv:
        print(f"results csv: {spec.output_csv}")
    return 0 if not result.errors else 1


if __name__ == "__main__":
    sys.exit(main())
