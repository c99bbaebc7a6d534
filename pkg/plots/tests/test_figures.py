import subprocess
import sys
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from conftest import synthetic_rows
from sdeplots.figures import render_extrapolation_figure
from sdeplots.frame import load_results


def test_extrapolation_figure_renders(results_dir, tmp_path):
    df = load_results([results_dir])
    path = render_extrapolation_figure(df, tmp_path / "fig.png")
    assert path.exists() and path.stat().st_size > 5_000


def test_extrapolation_figure_deterministic_size(results_dir, tmp_path):
    df = load_results([results_dir])
    s1 = render_extrapolation_figure(df, tmp_path / "a.png").stat().st_size
    s2 = render_extrapolation_figure(df, tmp_path / "b.png").stat().st_size
    assert abs(s1 - s2) <= 0.05 * s1


def test_extrapolation_single_seed_zero_band(tmp_path):
    rows = synthetic_rows(seeds=(0,))
    df = pd.DataFrame(rows)
    df["condition"] = pd.Categorical(df["condition"], categories=["baseline", "T", "T+F"])
    path = render_extrapolation_figure(df, tmp_path / "one.png")
    assert path.exists()


def test_extrapolation_requires_columns(tmp_path):
    rows = synthetic_rows(dynamics="mb", conditions=("baseline",))
    df = pd.DataFrame(rows)
    df["condition"] = pd.Categorical(df["condition"], categories=["baseline"])
    for col in [c for c in df.columns if c.startswith("extrap_")]:
        df[col] = np.nan
    with pytest.raises(ValueError):
        render_extrapolation_figure(df, tmp_path / "no.png")


def test_cli_end_to_end(results_dir, tmp_path):
    out = tmp_path / "rendered"
    res = subprocess.run(
        [
            sys.executable,
            "-m",
            "sdeplots.cli",
            "--in",
            str(results_dir),
            "--out",
            str(out),
        ],
        capture_output=True,
        text=True,
        timeout=300,
    )
    assert res.returncode == 0, res.stderr
    assert (out / "ablation.txt").exists()
    assert (out / "ablation.tex").exists()
    assert (out / "mfpt.txt").exists()
    assert (out / "extrapolation.png").exists()
    assert (out / "significance.txt").exists()


def test_cli_tables_only(results_dir, tmp_path):
    out = tmp_path / "tables"
    res = subprocess.run(
        [sys.executable, "-m", "sdeplots.cli", "--in", str(results_dir),
         "--out", str(out), "--tables"],
        capture_output=True,
        text=True,
        timeout=300,
    )
    assert res.returncode == 0, res.stderr
    assert (out / "ablation.txt").exists()
    assert not (out / "extrapolation.png").exists()
