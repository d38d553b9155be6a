"""chainplot: render a figure from trajectory CSV logs."""

from __future__ import annotations

import argparse
import sys

from .plots import KINDS, PlotError, PlotSpec, plot


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="chainplot",
                                     description="Figures from chain trajectory CSVs")
    parser.add_argument("--kind", required=True, choices=KINDS)
    parser.add_argument("--in", dest="inputs", nargs="+", required=True,
                        metavar="CSV")
    parser.add_argument("--out", required=True, metavar="IMG")
    parser.add_argument("--i-star", type=int, default=6,
                        help="target pendulum for staged-amplitude (default 6)")
    parser.add_argument("--stages", default="",
                        help="comma-separated stage boundary times, e.g. 14,34")
    args = parser.parse_args(argv)
    try:
        stages = [float(s) for s in args.stages.split(",") if s.strip()]
        spec = PlotSpec(kind=args.kind, inputs=args.inputs, output=args.out,
                        i_star=args.i_star, stages=stages)
        path = plot(spec)
    except (PlotError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
