"""Publication-style tables from the results frame.

The ablation table reports per-condition medians of the chart and
coefficient metrics with best-per-column bolding and significance stars from
one-sided paired Wilcoxon tests against the baseline condition.  The MFPT
tables report relative errors: means with paired t-tests under rotation
(common-noise pairs), medians with Wilcoxon under Mueller-Brown.
"""

from __future__ import annotations

import numpy as np
import pandas as pd

from .frame import METRIC_LABELS
from .stats import paired_t_one_sided, significance_stars, wilcoxon_one_sided

ABLATION_METRICS = [
    "rec_median",
    "tangent_median",
    "efid_median",
    "esigma_median",
    "eb_median",
    "elam_median",
]


def _paired_by_seed(df: pd.DataFrame, condition: str, reference: str, metric: str):
    a = df[df["condition"] == condition].set_index("seed")[metric]
    b = df[df["condition"] == reference].set_index("seed")[metric]
    common = a.index.intersection(b.index)
    a, b = a.loc[common], b.loc[common]
    keep = a.notna() & b.notna()
    return a[keep].to_numpy(), b[keep].to_numpy()


def _fmt(value: float, bold: bool, stars: str, markup: str) -> str:
    if not np.isfinite(value):
        return "-" if markup == "text" else "--"
    cell = f"{value:.3g}"
    if markup == "latex":
        if bold:
            cell = rf"\textbf{{{cell}}}"
        if stars:
            cell = f"{cell}$^{{{stars}}}$"
    else:
        if bold:
            cell = f"[{cell}]"
        if stars:
            cell = f"{cell}{stars}"
    return cell


def _render_rows(title, header, rows, markup):
    if markup == "latex":
        cols = "l" + "c" * (len(header) - 1)
        body = [rf"% {title}", rf"\begin{{tabular}}{{{cols}}}", r"\toprule",
                " & ".join(header) + r" \\", r"\midrule"]
        body += [" & ".join(r) + r" \\" for r in rows]
        body += [r"\bottomrule", r"\end{tabular}"]
        return "\n".join(body) + "\n"
    widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(header)]
    lines = [title, "  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in rows]
    return "\n".join(lines) + "\n"


def render_ablation_table(
    df: pd.DataFrame, markup: str = "text", reference: str = "baseline"
) -> str:
    """One block per (dynamics, surface, ambient dim): condition rows, metric
    columns, medians over seeds, best per column bolded, Wilcoxon stars vs
    the reference.  Missing conditions render as blank cells with the
    footnote convention of the layout."""
    blocks = []
    group_cols = ["dynamics", "surface", "ambient_dim"]
    for (dynamics, surface, dim), sub in df.groupby(group_cols, observed=True):
        metrics = [m for m in ABLATION_METRICS if sub[m].notna().any()]
        conditions = list(sub["condition"].cat.categories)

        def _median(c, m):
            vals = sub[sub["condition"] == c][m]
            return vals.median() if vals.notna().any() else float("nan")

        med = {m: {c: _median(c, m) for c in conditions} for m in metrics}
        best = {
            m: min(
                (v for v in med[m].values() if np.isfinite(v)), default=float("nan")
            )
            for m in metrics
        }
        rows = []
        for cond in conditions:
            cells = [str(cond)]
            for m in metrics:
                val = med[m][cond]
                stars = ""
                if cond != reference and np.isfinite(val):
                    a, b = _paired_by_seed(sub, cond, reference, m)
                    if len(a) >= 2:
                        stars = significance_stars(wilcoxon_one_sided(a, b).p_value)
                cells.append(
                    _fmt(val, np.isfinite(val) and val == best[m], stars, markup)
                )
            rows.append(cells)
        header = ["condition"] + [METRIC_LABELS[m] for m in metrics]
        title = f"Ablation: {dynamics}, {surface}, D={dim} (medians over seeds)"
        blocks.append(_render_rows(title, header, rows, markup))
    if not blocks:
        raise ValueError("results frame has no complete ablation block")
    return "\n".join(blocks)


def render_mfpt_table(df: pd.DataFrame, markup: str = "text", reference: str = "baseline") -> str:
    """Radial MFPT (rotation, means + paired t) and per-pair inter-well MFPT
    (Mueller-Brown, medians + Wilcoxon) relative errors in percent."""
    blocks = []
    rot = df[(df["dynamics"] == "rotation") & df["radial_mfpt_relerr"].notna()]
    if len(rot):
        rows = []
        conditions = list(rot["condition"].cat.categories)
        for (surface, dim), sub in rot.groupby(["surface", "ambient_dim"], observed=True):
            cells = [f"{surface} D={dim}"]
            means = {
                c: sub[sub["condition"] == c]["radial_mfpt_relerr"].mean()
                for c in conditions
            }
            finite = [v for v in means.values() if np.isfinite(v)]
            for cond in conditions:
                val = means[cond]
                stars = ""
                if cond != reference and np.isfinite(val):
                    a, b = _paired_by_seed(sub, cond, reference, "radial_mfpt_relerr")
                    if len(a) >= 2:
                        stars = significance_stars(paired_t_one_sided(a, b).p_value)
                bold = np.isfinite(val) and finite and val == min(finite)
                cells.append(_fmt(100 * val, bold, stars, markup))
            rows.append(cells)
        blocks.append(
            _render_rows(
                "Radial MFPT relative error (%), mean over seeds, paired t vs baseline",
                ["surface"] + [str(c) for c in conditions],
                rows,
                markup,
            )
        )
    mb = df[(df["dynamics"] == "mb")]
    mb_pairs = [("mfpt01_relerr", "W0->W1"), ("mfpt02_relerr", "W0->W2")]
    if len(mb) and any(mb[c].notna().any() for c, _ in mb_pairs):
        rows = []
        conditions = list(mb["condition"].cat.categories)
        for (surface, dim), sub in mb.groupby(["surface", "ambient_dim"], observed=True):
            for col, label in mb_pairs:
                if not sub[col].notna().any():
                    continue
                cells = [f"{surface} D={dim} {label}"]
                meds = {
                    c: sub[sub["condition"] == c][col].median() for c in conditions
                }
                finite = [v for v in meds.values() if np.isfinite(v)]
                for cond in conditions:
                    val = meds[cond]
                    stars = ""
                    if cond != reference and np.isfinite(val):
                        a, b = _paired_by_seed(sub, cond, reference, col)
                        if len(a) >= 2:
                            stars = significance_stars(wilcoxon_one_sided(a, b).p_value)
                    bold = np.isfinite(val) and finite and val == min(finite)
                    cells.append(_fmt(100 * val, bold, stars, markup))
                rows.append(cells)
        blocks.append(
            _render_rows(
                "Inter-well MFPT relative error (%), median over seeds, Wilcoxon vs baseline",
                ["surface / pair"] + [str(c) for c in conditions],
                rows,
                markup,
            )
        )
    if not blocks:
        raise ValueError("results frame has no MFPT columns")
    return "\n".join(blocks)


def render_significance_report(df: pd.DataFrame, reference: str = "baseline") -> str:
    """Per (dynamics, surface, metric): one-sided paired tests vs baseline."""
    lines = ["metric-level significance vs baseline (one-sided, paired by seed)"]
    metric_tests = [
        ("tangent_median", "wilcoxon"),
        ("efid_median", "wilcoxon"),
        ("eb_median", "wilcoxon"),
        ("elam_median", "wilcoxon"),
        ("radial_mfpt_relerr", "t"),
        ("mfpt01_relerr", "wilcoxon"),
        ("mfpt02_relerr", "wilcoxon"),
    ]
    for (dynamics, surface, dim), sub in df.groupby(
        ["dynamics", "surface", "ambient_dim"], observed=True
    ):
        for cond in sub["condition"].cat.categories:
            if cond == reference:
                continue
            for metric, kind in metric_tests:
                if metric not in sub or not sub[metric].notna().any():
                    continue
                a, b = _paired_by_seed(sub, cond, reference, metric)
                if len(a) < 2:
                    continue
                res = (
                    paired_t_one_sided(a, b)
                    if kind == "t"
                    else wilcoxon_one_sided(a, b)
                )
                lines.append(
                    f"{dynamics}/{surface}/D={dim} {cond} vs {reference} "
                    f"{metric}: p={res.p_value:.4f} ({res.method}, n={res.n_pairs})"
                )
    return "\n".join(lines) + "\n"
