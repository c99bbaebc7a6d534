"""CLI: render tables, figures, and significance reports from result CSVs."""

from __future__ import annotations

import argparse
from pathlib import Path

from .figures import render_extrapolation_figure
from .frame import load_results
from .tables import render_ablation_table, render_mfpt_table, render_significance_report


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plots", description="Render chartsde result CSVs into tables and figures."
    )
    parser.add_argument("--in", dest="inputs", nargs="+", required=True,
                        help="result directories or CSV files")
    parser.add_argument("--out", dest="out", required=True, help="output directory")
    parser.add_argument("--tables", action="store_true")
    parser.add_argument("--figures", action="store_true")
    parser.add_argument("--stats", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    do_all = not (args.tables or args.figures or args.stats)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    df = load_results(args.inputs)

    if args.tables or do_all:
        (out / "ablation.txt").write_text(render_ablation_table(df, "text"))
        (out / "ablation.tex").write_text(render_ablation_table(df, "latex"))
        try:
            (out / "mfpt.txt").write_text(render_mfpt_table(df, "text"))
            (out / "mfpt.tex").write_text(render_mfpt_table(df, "latex"))
        except ValueError as exc:
            print(f"skipping MFPT tables: {exc}")
        print(f"tables written to {out}")
    if args.figures or do_all:
        try:
            path = render_extrapolation_figure(df, out / "extrapolation.png")
            print(f"figure written to {path}")
        except ValueError as exc:
            print(f"skipping extrapolation figure: {exc}")
    if args.stats or do_all:
        (out / "significance.txt").write_text(render_significance_report(df))
        print(f"significance report written to {out / 'significance.txt'}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
