"""Command-line interface: gen, localize, eval, bench.

Exit codes: 0 success, 2 bad configuration, 3 I/O or data error.
"""

from __future__ import annotations

import argparse
import sys

from ..sensors import SensorNoiseModel
from .config import ConfigError, load_pipeline_config

__all__ = ["main"]


def _add_override_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="INI config file")
    p.add_argument("--retrieval.tau-t", dest="retrieval_tau_t", type=float, default=None)
    p.add_argument("--retrieval.tau-o", dest="retrieval_tau_o", type=float, default=None)
    p.add_argument("--retrieval.k", dest="retrieval_k", type=int, default=None)
    p.add_argument(
        "--retrieval.prior",
        dest="retrieval_prior",
        choices=["on", "off"],
        default=None,
        help="sensor-guided candidate filtering",
    )
    p.add_argument("--match.temperature", dest="match_temperature", type=float, default=None)
    p.add_argument("--match.theta", dest="match_theta", type=float, default=None)
    p.add_argument("--match.window", dest="match_window", type=int, default=None)
    p.add_argument("--pnp.inlier-px", dest="pnp_inlier_px", type=float, default=None)
    p.add_argument("--pnp.max-iters", dest="pnp_max_iters", type=int, default=None)
    p.add_argument("--pnp.confidence", dest="pnp_confidence", type=float, default=None)
    p.add_argument("--pnp.tau-eps", dest="pnp_tau_eps", type=float, default=None)
    p.add_argument(
        "--pnp.gravity-gate", dest="pnp_gravity_gate", choices=["on", "off"], default=None
    )
    p.add_argument("--pnp.seed", dest="pnp_seed", type=int, default=None)


def _overrides(args) -> dict:
    keys = [
        ("retrieval.tau_t", "retrieval_tau_t"),
        ("retrieval.tau_o", "retrieval_tau_o"),
        ("retrieval.k", "retrieval_k"),
        ("retrieval.prior", "retrieval_prior"),
        ("match.temperature", "match_temperature"),
        ("match.theta", "match_theta"),
        ("match.window", "match_window"),
        ("pnp.inlier_px", "pnp_inlier_px"),
        ("pnp.max_iters", "pnp_max_iters"),
        ("pnp.confidence", "pnp_confidence"),
        ("pnp.tau_eps", "pnp_tau_eps"),
        ("pnp.gravity_gate", "pnp_gravity_gate"),
        ("pnp.seed", "pnp_seed"),
    ]
    return {dotted: getattr(args, attr) for dotted, attr in keys}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="priorloc",
        description="Sensor-prior visual localization on synthetic scenes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic scene dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n-points", type=int, default=620)
    g.add_argument("--n-refs", type=int, default=48)
    g.add_argument("--n-queries", type=int, default=50)
    g.add_argument("--extent", type=float, default=60.0)
    g.add_argument("--c-coarse", type=int, default=24)
    g.add_argument("--c-fine", type=int, default=16)
    g.add_argument("--corruption", type=float, default=0.0)
    g.add_argument("--outlier-fraction", type=float, default=0.0)
    g.add_argument("--gps-sigma", type=float, default=3.0)
    g.add_argument("--compass-sigma", type=float, default=10.0)
    g.add_argument("--gravity-sigma", type=float, default=0.5)

    l = sub.add_parser("localize", help="run the localization pipeline")
    l.add_argument("--dataset", required=True)
    l.add_argument("--out", required=True)
    l.add_argument("--workers", type=int, default=1)
    _add_override_flags(l)

    e = sub.add_parser("eval", help="evaluate a localization run")
    e.add_argument("--dataset", required=True)
    e.add_argument("--results", required=True)
    e.add_argument("--out", required=True)
    e.add_argument(
        "--bins",
        default="0.25:2,0.5:5,1:10",
        help="comma-separated meters:degrees recall bins",
    )

    b = sub.add_parser("bench", help="benchmark kernel backends and pipeline stages")
    b.add_argument("--dataset", default=None)
    b.add_argument("--out", default=None, help="optional CSV output path")
    b.add_argument("--quick", action="store_true")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "gen":
            from .scene import SceneSpec, generate_scene

            try:
                spec = SceneSpec(
                    n_points=args.n_points,
                    n_refs=args.n_refs,
                    n_queries=args.n_queries,
                    extent=args.extent,
                    c_coarse=args.c_coarse,
                    c_fine=args.c_fine,
                    noise=SensorNoiseModel(
                        gps_sigma_xy=args.gps_sigma,
                        compass_sigma=args.compass_sigma,
                        gravity_sigma=args.gravity_sigma,
                        seed=args.seed,
                    ),
                    outlier_fraction=args.outlier_fraction,
                    descriptor_corruption=args.corruption,
                    seed=args.seed,
                )
            except ValueError as exc:
                print(f"bad scene spec: {exc}", file=sys.stderr)
                return 2
            generate_scene(spec, args.out)
            print(f"scene written to {args.out}")
            return 0

        if args.command == "localize":
            from .pipeline import localize_dataset

            cfg = load_pipeline_config(args.config, _overrides(args))
            summary = localize_dataset(args.dataset, args.out, cfg, workers=args.workers)
            print(
                f"localized {summary['n_ok']}/{summary['n_queries']} queries "
                f"({summary['n_failed']} failed, {summary['n_fallback']} retrieval fallbacks)"
            )
            return 0

        if args.command == "eval":
            from .evaluate import EvalThresholds, evaluate_run

            try:
                bins = tuple(
                    (float(part.split(":")[0]), float(part.split(":")[1]))
                    for part in args.bins.split(",")
                )
                thresholds = EvalThresholds(bins)
            except (ValueError, IndexError) as exc:
                print(f"bad --bins: {exc}", file=sys.stderr)
                return 2
            tables = evaluate_run(args.dataset, args.results, args.out, thresholds)
            for (tm, rd), val in tables["recall"].items():
                print(f"recall@({tm:g}m,{rd:g}deg) = {100 * val:.2f}%")
            return 0

        if args.command == "bench":
            from .bench import run_benchmarks

            run_benchmarks(args.dataset, args.out, quick=args.quick)
            return 0
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
