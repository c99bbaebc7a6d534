"""Figure rendering: the extrapolation curve panel grid."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from .frame import extrapolation_columns


def render_extrapolation_figure(df: pd.DataFrame, out_path: str | Path) -> Path:
    """Mean +/- std reconstruction error vs extrapolation margin, one panel
    per surface, one line per condition.  Returns the written path."""
    cols = extrapolation_columns(df)
    cols = [(m, c) for m, c in cols if df[c].notna().any()]
    if not cols:
        raise ValueError("results frame has no extrapolation columns")
    margins = np.array([m for m, _ in cols])
    surfaces = sorted(df["surface"].unique())
    fig, axes = plt.subplots(
        1, len(surfaces), figsize=(4 * len(surfaces), 3.4), squeeze=False, sharey=True
    )
    for ax, surface in zip(axes[0], surfaces):
        sub = df[df["surface"] == surface]
        for cond in sub["condition"].cat.categories:
            rows = sub[sub["condition"] == cond]
            if not len(rows):
                continue
            values = rows[[c for _, c in cols]].to_numpy(dtype=float)
            if not np.isfinite(values).all():
                continue
            mean = values.mean(axis=0)
            std = values.std(axis=0)
            ax.plot(margins, mean, marker="o", label=str(cond))
            ax.fill_between(margins, mean - std, mean + std, alpha=0.2)
        ax.set_title(surface)
        ax.set_xlabel("extrapolation margin")
        ax.set_yscale("log")
    axes[0][0].set_ylabel("mean reconstruction error")
    axes[0][-1].legend(loc="best", fontsize=8)
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path
