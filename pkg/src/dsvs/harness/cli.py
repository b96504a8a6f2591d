"""Command line entry point: ``dsvs {generate,train,evaluate,report}``."""
from __future__ import annotations

import argparse
import glob
import logging
import os
import sys

from ..errors import ConfigError, DSVSError, NoReports
from .config import METHODS, load_config, resolve
from . import pipeline


def build_parser():
    parser = argparse.ArgumentParser(prog="dsvs", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "generate": "write augmented demonstrations and a manifest",
        "train": "fit the method on every class for every k of the grid",
        "evaluate": "run trained controllers in closed loop and write reports",
        "report": "tabulate reports (all of <out-dir>/reports by default)",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="YAML config file (defaults are used without one)")
        p.add_argument("--method", choices=METHODS)
        p.add_argument("--k", type=int, help="use a single k instead of the configured grid")
        p.add_argument("--seed", type=int, help="seed for dataset, training and evaluation")
        p.add_argument("--out-dir")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "report":
            p.add_argument("reports", nargs="*", help="report JSON files")
    return parser


def _config(args):
    cfg = load_config(args.config) if args.config else resolve()
    return cfg.with_overrides(args.method, args.k, args.seed, args.out_dir)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        if args.command == "generate":
            print(pipeline.generate_dataset(cfg))
        elif args.command == "train":
            for k, taus in pipeline.train(cfg).items():
                cells = ", ".join(f"{c}: {'failed' if t is None else f'{1e3 * t:.1f} ms'}"
                                  for c, t in taus.items())
                print(f"{cfg.method} k={k}: {cells}")
        elif args.command == "evaluate":
            for path in pipeline.evaluate(cfg):
                print(path)
        else:
            paths = args.reports or sorted(
                p for p in glob.glob(os.path.join(cfg.out_dir, "reports", "*.json"))
                if not p.endswith(".timing.json"))
            print(pipeline.report(paths, cfg.out_dir), end="")
    except (ConfigError, NoReports) as exc:
        parser.error(str(exc))
    except DSVSError as exc:
        print(f"dsvs: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
