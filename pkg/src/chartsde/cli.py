"""Command-line entry point.

Verbs:
  run              sweep conditions x seeds, append rows to results.csv
  test-properties  run the invariant suite, nonzero exit on failure
  landmarks        emit a delta-net landmark set as CSV
  simulate         ground-truth-only ensembles, report exit fraction and MFPT

Results go to --out-dir (or $CHARTSDE_OUT, default ./results): one
results.csv with versioned columns, floats at 17 significant digits, flushed
per row, plus a meta_<timestamp>.json with the config echo and wall-clock
times.
"""

from __future__ import annotations

import argparse
import csv
import json
import multiprocessing as mp
import os
import subprocess
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import pipeline as pl
from .dynamics import MuellerBrownSde, RotationSde, WellSet
from .evaluate import interwell_mfpt, radial_mfpt
from .geometry import FourierEmbedding, MongeSurface, TrueChart
from .properties import run_property_suite
from .rng import stream
from .simulate import NoiseBank, SimConfig, delta_net_landmarks, simulate_ground_truth


def _default_out_dir() -> str:
    return os.environ.get("CHARTSDE_OUT", "results")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chartsde",
        description="Learn a chart and latent SDE from ambient drift/covariance data.",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    run = sub.add_parser("run", help="run an experiment sweep")
    run.add_argument("--config", type=str, help="key = value configuration file")
    run.add_argument("--seeds", type=str, help="comma-separated seed list")
    run.add_argument("--condition", type=str, help="comma-separated condition list")
    run.add_argument("--surface", type=str)
    run.add_argument("--dynamics", type=str, choices=pl.DYNAMICS_KINDS)
    run.add_argument("--kf", type=int, help="Fourier pairs; ambient dim is 3 + 2 kf")
    run.add_argument("--out-dir", type=str)
    run.add_argument("--jobs", type=int, default=1, help="parallel workers")

    sub.add_parser("test-properties", help="run the invariant suite")

    land = sub.add_parser("landmarks", help="emit a delta-net landmark set")
    land.add_argument("--surface", type=str, default="paraboloid")
    land.add_argument("--dynamics", type=str, default="rotation", choices=pl.DYNAMICS_KINDS)
    land.add_argument("--kf", type=int, default=4)
    land.add_argument("--n", type=int, default=50)
    land.add_argument("--seed", type=int, default=0)
    land.add_argument("--out-dir", type=str)

    simv = sub.add_parser("simulate", help="ground-truth ensembles only")
    simv.add_argument("--surface", type=str, default="paraboloid")
    simv.add_argument("--dynamics", type=str, default="rotation", choices=pl.DYNAMICS_KINDS)
    simv.add_argument("--kf", type=int, default=4)
    simv.add_argument("--seed", type=int, default=0)
    simv.add_argument("--n-traj", type=int)
    simv.add_argument("--horizon", type=float)
    simv.add_argument("--dump", type=str, help="write latent paths to this binary file")
    return parser


def load_config(args: argparse.Namespace) -> pl.ExperimentConfig:
    """Config file (if given) with CLI-flag overrides on top of the defaults."""
    if args.config:
        cfg = pl.config_from_text(Path(args.config).read_text())
    else:
        dynamics = args.dynamics or "rotation"
        cfg = pl.mb_defaults() if dynamics == "mb" else pl.rotation_defaults()
    overrides = {}
    if args.dynamics and args.dynamics != cfg.dynamics:
        cfg = pl.mb_defaults() if args.dynamics == "mb" else pl.rotation_defaults()
    if args.surface:
        overrides["surface"] = args.surface
    if args.kf is not None:
        overrides["kf"] = args.kf
    if args.seeds:
        overrides["seeds"] = tuple(int(s) for s in args.seeds.split(","))
    if args.condition:
        overrides["conditions"] = tuple(c.strip() for c in args.condition.split(","))
    if args.out_dir:
        overrides["out_dir"] = args.out_dir
    elif not args.config:
        overrides["out_dir"] = _default_out_dir()
    return replace(cfg, **overrides)


def _git_hash() -> str:
    try:
        return subprocess.run(
            ["git", "rev-parse", "HEAD"],
            capture_output=True,
            text=True,
            timeout=5,
            check=False,
        ).stdout.strip() or "unknown"
    except OSError:
        return "unknown"


def _worker(payload):
    cfg_text, condition, seed = payload
    cfg = pl.config_from_text(cfg_text)
    t0 = time.monotonic()
    try:
        row = pl.run_single(cfg, condition, seed)
    except Exception as exc:
        row = pl._empty_row(cfg, condition, seed)
        row["failed"] = 1
        print(f"run ({condition}, seed {seed}) failed: {exc}")
    return row, time.monotonic() - t0


def cmd_run(args: argparse.Namespace) -> int:
    cfg = load_config(args)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "results.csv"
    write_header = not csv_path.exists()

    timings: list[dict] = []
    with open(csv_path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if write_header:
            writer.writerow(pl.RESULT_COLUMNS)
            fh.flush()

        def emit(row, elapsed):
            writer.writerow([pl.format_cell(row[c]) for c in pl.RESULT_COLUMNS])
            fh.flush()
            timings.append(
                {"condition": row["condition"], "seed": row["seed"], "seconds": elapsed}
            )
            print(
                f"[{row['condition']:>8s} seed {row['seed']}] "
                f"tangent={row['tangent_median']:.3g} eb={row['eb_median']:.3g} "
                f"({elapsed:.1f}s)"
            )

        if args.jobs > 1:
            cfg_text = pl.config_to_text(cfg)
            payloads = [(cfg_text, c, s) for c, s in pl.iter_runs(cfg)]
            with mp.Pool(args.jobs) as pool:
                for row, elapsed in pool.imap_unordered(_worker, payloads):
                    emit(row, elapsed)
        else:
            for row, elapsed in pl.run_experiment(cfg):
                emit(row, elapsed)

    meta = {
        "schema_version": pl.SCHEMA_VERSION,
        "git_hash": _git_hash(),
        "config": pl.config_to_text(cfg),
        "timings": timings,
        "written_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    meta_path = out_dir / f"meta_{time.strftime('%Y%m%d_%H%M%S')}.json"
    meta_path.write_text(json.dumps(meta, indent=2))
    print(f"rows appended to {csv_path}; metadata in {meta_path}")
    return 0


def cmd_landmarks(args: argparse.Namespace) -> int:
    chart = TrueChart(MongeSurface(args.surface), FourierEmbedding.build(args.kf, args.seed))
    domain = ((-1.0, 1.0), (-1.0, 1.0)) if args.dynamics == "rotation" else (
        (-0.55, 0.55), (-0.55, 0.55)
    )
    coords = delta_net_landmarks(chart.metric, domain, args.n, args.seed)
    out_dir = Path(args.out_dir or _default_out_dir())
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"landmarks_{args.surface}_{args.dynamics}_n{args.n}_seed{args.seed}.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["u", "v"])
        for u, v in coords:
            writer.writerow([pl.format_cell(float(u)), pl.format_cell(float(v))])
    print(f"{len(coords)} landmarks written to {path}")
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    from .simulate import write_path_dump

    chart = TrueChart(MongeSurface(args.surface), FourierEmbedding.build(args.kf, args.seed))
    keep = bool(args.dump)
    if args.dynamics == "rotation":
        sde = RotationSde()
        cfg = SimConfig(
            dt=0.01, horizon=args.horizon or 2.0, n_traj=args.n_traj or 500, seed=args.seed
        )
        z0 = stream(args.seed, "sim-init").uniform(-1, 1, size=(cfg.n_traj, 2))
        ens = simulate_ground_truth(
            chart, sde, z0, cfg, NoiseBank(args.seed), track_radii=True, keep_latent=keep
        )
        rep = radial_mfpt(ens, ens, radius=2.0)
        print(
            f"ground truth: {cfg.n_traj} trajectories, exit fraction "
            f"{ens.exit_fraction:.3f}, radial MFPT(r=2) {rep.gt_mfpt:.4f}"
        )
    else:
        sde = MuellerBrownSde()
        wells = WellSet()
        cfg = SimConfig(
            dt=0.005, horizon=args.horizon or 50.0, n_traj=args.n_traj or 2000, seed=args.seed
        )
        z0 = np.clip(
            wells.centers[0]
            + 0.1 * stream(args.seed, "sim-init").standard_normal((cfg.n_traj, 2)),
            -0.55,
            0.55,
        )
        ens = simulate_ground_truth(
            chart, sde, z0, cfg, NoiseBank(args.seed), wells=wells, keep_latent=keep
        )
        rep = interwell_mfpt(ens, wells)
        print(
            f"ground truth: {cfg.n_traj} trajectories, exit fraction "
            f"{ens.exit_fraction:.3f}, tau(0->1) {rep.mfpt[0, 1]:.3f} "
            f"({rep.counts[0, 1]} passages), tau(0->2) {rep.mfpt[0, 2]:.3f} "
            f"({rep.counts[0, 2]} passages)"
        )
    if args.dump:
        write_path_dump(args.dump, ens.latent)
        print(f"latent paths dumped to {args.dump}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.verb == "run":
        return cmd_run(args)
    if args.verb == "test-properties":
        failures = run_property_suite()
        return 1 if failures else 0
    if args.verb == "landmarks":
        return cmd_landmarks(args)
    if args.verb == "simulate":
        return cmd_simulate(args)
    raise AssertionError("unreachable")


if __name__ == "__main__":
    raise SystemExit(main())
