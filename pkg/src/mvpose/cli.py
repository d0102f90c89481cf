"""Command line entry point: ``mvpose <subcommand> ...``."""
from __future__ import annotations

import argparse
import logging
import sys

from . import harness
from .harness import ConfigError, DataError, ExperimentConfig

EXIT_CONFIG = 2
EXIT_DATA = 3


def _views(text):
    if text in ("all", "sweep"):
        return text
    try:
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, 'all' or 'sweep', got {text!r}") from None


def _sigma_list(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated meters, got {text!r}") from None


def _add_config_flags(p, sweep=False):
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--scenes", type=int, help="scene count (test scenes for the in-memory experiments)")
    p.add_argument("--views", type=_views, help="views used: k, 'all' or 'sweep'")
    p.add_argument("--sigma-offsets", type=float, help="oracle offset noise std [m]")
    p.add_argument("--flip-rate", type=float, help="oracle label flip rate")
    if sweep:
        p.add_argument("--sigma-wiggle", type=_sigma_list, help="comma-separated camera jitter stds [m]")
    else:
        p.add_argument("--sigma-wiggle", type=float, help="camera position jitter std [m]; switches to the wiggle ring")
    p.add_argument("--workers", type=int)


def _config(args, sweep=False) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    changes = {}
    for flag, key in [("seed", "seed"), ("out", "out"), ("scenes", "scene_count"), ("views", "views"),
                      ("sigma_offsets", "offset_sigma"), ("flip_rate", "label_flip_rate"), ("workers", "workers")]:
        value = getattr(args, flag, None)
        if value is not None:
            changes[key] = value
    wiggle = getattr(args, "sigma_wiggle", None)
    if wiggle is not None:
        if sweep:
            changes["wiggle_sigmas"] = wiggle
        else:
            rig = {k: v for k, v in cfg.rig.items() if k != "type"}
            changes["rig"] = {**rig, "type": "WiggleRing", "position_sigma": wiggle}
    return cfg.replace(**changes) if changes else cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mvpose", description="Multi-view keypoint-voting pose pipeline")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    _add_config_flags(p)

    p = sub.add_parser("estimate", help="estimate poses on a dataset's test scenes")
    p.add_argument("data", help="dataset directory written by gen")
    _add_config_flags(p)

    p = sub.add_parser("eval", help="score estimate files against a dataset")
    p.add_argument("estimates", help="directory of estimate JSON files")
    p.add_argument("data", help="dataset directory")
    p.add_argument("--out", required=True)
    p.add_argument("--adds-points", choices=["vertices", "surface"], default="vertices")

    p = sub.add_parser("ablate-views", help="AUC per number of views on in-memory test scenes")
    _add_config_flags(p)

    p = sub.add_parser("wiggle-sweep", help="AUC per camera jitter on in-memory test scenes")
    _add_config_flags(p, sweep=True)

    p = sub.add_parser("curve", help="accuracy-threshold curves from a report.json")
    p.add_argument("report")
    p.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "gen":
            out = harness.cmd_gen(_config(args))
            print(f"dataset written to {out}")
        elif args.command == "estimate":
            out = harness.cmd_estimate(args.data, _config(args))
            print(f"estimates written to {out}")
        elif args.command == "eval":
            report = harness.cmd_eval(args.estimates, args.data, args.out, args.adds_points)
            _print_rows(report.rows())
        elif args.command == "ablate-views":
            reports = harness.cmd_ablate_views(_config(args))
            for k, rep in reports.items():
                o = rep.overall()
                print(f"k={k}  ADD-S AUC {o['add_s_auc']:.2f}  ADD(-S) AUC {o['adds_auc']:.2f}")
        elif args.command == "wiggle-sweep":
            results = harness.cmd_wiggle_sweep(_config(args, sweep=True))
            for s, rep in results.items():
                o = rep.overall()
                print(f"sigma={1000 * s:g} mm  ADD-S AUC {o['add_s_auc']:.2f}  ADD(-S) AUC {o['adds_auc']:.2f}")
        elif args.command == "curve":
            for path in harness.cmd_curve(args.report, args.out):
                print(path)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    return 0


def _print_rows(rows):
    print(f"{'class':<18}{'ADD-S':>8}{'ADD(-S)':>9}{'<2cm':>7}")
    for r in rows:
        print(f"{r['class']:<18}{r['add_s_auc']:8.2f}{r['adds_auc']:9.2f}{r['add_s_2cm']:7.1f}")


if __name__ == "__main__":
    sys.exit(main())
