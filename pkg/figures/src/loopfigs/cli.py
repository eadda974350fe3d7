"""Batch figure rendering from sweep CSVs."""

from __future__ import annotations

import argparse
import sys

from .render import FIGURE_KINDS, FigureSpec, SchemaError, SelectionError, render


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="loopfigs",
                                     description="Render sweep CSVs into figures")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("render")
    p.add_argument("--csv", required=True, help="sweep CSV from the harness")
    p.add_argument("--kind", required=True, choices=FIGURE_KINDS)
    p.add_argument("--out", required=True, help="output image path")
    p.add_argument("--obs", choices=("train", "test", "gap"),
                   help="restrict to one observable")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = FigureSpec(csv_path=args.csv, figure_kind=args.kind,
                          output_path=args.out, observable=args.obs)
        path = render(spec)
    except (SchemaError, SelectionError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
