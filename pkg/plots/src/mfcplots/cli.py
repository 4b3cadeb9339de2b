"""Command line: one figure per invocation, or make-all for a run directory."""

import argparse
import sys

from .render import FIGURE_KINDS, FigureSpec, SchemaError, render, render_all


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mfcplots", description="render figures from solver run CSVs"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_render = sub.add_parser("render", help="render one figure kind")
    p_render.add_argument("--kind", required=True, choices=FIGURE_KINDS)
    p_render.add_argument("--input", required=True, nargs="+",
                          help="input CSV (exactly one per kind)")
    p_render.add_argument("--output", required=True, help="output PNG path")

    p_all = sub.add_parser("make-all", help="render every kind from a run directory")
    p_all.add_argument("run_dir", help="directory holding the run's CSV files")
    p_all.add_argument("--output-dir", default=None,
                       help="image directory (default: <run_dir>/figures)")

    args = parser.parse_args(argv)
    try:
        if args.command == "render":
            if len(args.input) != 1:
                print(
                    f"error: kind {args.kind!r} takes exactly one input CSV",
                    file=sys.stderr,
                )
                return 2
            out = render(FigureSpec(args.kind, args.input[0], args.output))
            print(f"wrote {out}")
        else:
            out_dir = args.output_dir or f"{args.run_dir.rstrip('/')}/figures"
            for path in render_all(args.run_dir, out_dir):
                print(f"wrote {path}")
        return 0
    except (SchemaError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
