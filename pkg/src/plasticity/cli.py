"""plasticity command line.

    plasticity run CONFIG [--jobs N]
    plasticity aggregate DIR [--out DIR] [--svg]
    plasticity preset NAME --dump | [--jobs N] [--seeds ...] [--output-dir DIR]

Exit status: 0 ok, 1 configuration error, 2 run failure.
Relative output directories resolve under $PLASTICITY_OUTPUT_ROOT if set.
"""

import argparse
import logging
import sys

from .config import PRESETS, parse_config, preset
from .errors import ConfigError, UsageError
from .runner import EXIT_CONFIG, EXIT_OK, EXIT_RUN_FAILURE, run

log = logging.getLogger("plasticity")


def build_parser():
    p = argparse.ArgumentParser(prog="plasticity", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment config (YAML or JSON)")
    r.add_argument("config")
    r.add_argument("--jobs", type=int, default=1, help="seeds/variants run as parallel processes")

    a = sub.add_parser("aggregate", help="summarize a directory of run logs")
    a.add_argument("log_dir")
    a.add_argument("--out", default=None, help="output directory (default: log_dir)")
    a.add_argument("--svg", action="store_true", help="also write curves.svg")

    s = sub.add_parser("preset", help="dump or run a named preset")
    s.add_argument("name", choices=sorted(PRESETS))
    s.add_argument("--dump", action="store_true", help="print the expanded config and exit")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--seeds", type=int, nargs="+", default=None)
    s.add_argument("--output-dir", default=None)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            return run(parse_config(args.config), jobs=args.jobs)
        if args.command == "aggregate":
            from .aggregate import aggregate

            summary = aggregate(args.log_dir, args.out, svg=args.svg)
            for name, v in summary["variants"].items():
                flag = " (single run: CI degenerate)" if v["ci_degenerate"] else ""
                print(f"{name}: IQM {v['iqm']:.4g} CI [{v['ci'][0]:.4g}, {v['ci'][1]:.4g}]{flag}")
            return EXIT_OK
        cfg = preset(args.name)
        if args.seeds is not None:
            cfg.seeds = args.seeds
        if args.output_dir is not None:
            cfg.output_dir = args.output_dir
        if args.dump:
            sys.stdout.write(cfg.dump())
            return EXIT_OK
        return run(cfg, jobs=args.jobs)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_RUN_FAILURE


if __name__ == "__main__":
    sys.exit(main())
