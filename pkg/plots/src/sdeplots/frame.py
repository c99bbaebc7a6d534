"""Loading and joining chartsde result CSVs into one analysis frame."""

from __future__ import annotations

from pathlib import Path

import pandas as pd

SCHEMA_VERSION = 1

METRIC_LABELS = {
    "rec_median": "Rec.",
    "tangent_median": "Tang.",
    "efid_median": "E",
    "esigma_median": "E_Sigma",
    "eb_median": "E_b",
    "elam_median": "E_Lambda",
}

CONDITION_ORDER = ["atlas", "baseline", "T", "F", "C", "T+F"]


def load_results(paths: list[str | Path]) -> pd.DataFrame:
    """Read and concatenate result CSVs; directories are scanned for
    results*.csv.  Schema versions must match; missing cells stay NaN."""
    files: list[Path] = []
    for p in paths:
        p = Path(p)
        if p.is_dir():
            files.extend(sorted(p.glob("results*.csv")))
        else:
            files.append(p)
    if not files:
        raise FileNotFoundError(f"no result CSVs under {paths}")
    frames = []
    for f in files:
        df = pd.read_csv(f)
        versions = set(df["schema_version"].unique())
        if versions != {SCHEMA_VERSION}:
            raise ValueError(f"{f}: schema versions {versions} != {SCHEMA_VERSION}")
        frames.append(df)
    out = pd.concat(frames, ignore_index=True)
    out["condition"] = pd.Categorical(
        out["condition"],
        categories=[c for c in CONDITION_ORDER if c in set(out["condition"])],
        ordered=True,
    )
    return out


def extrapolation_columns(df: pd.DataFrame) -> list[tuple[float, str]]:
    """(margin, column) pairs for the extrapolation sweep, sorted by margin."""
    cols = []
    for col in df.columns:
        if col.startswith("extrap_"):
            cols.append((float(col.removeprefix("extrap_").replace("p", ".")), col))
    return sorted(cols)
