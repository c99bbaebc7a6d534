"""Experiment orchestration: one configuration drives landmark sampling, the
three training stages, evaluation, and simulation for each (condition, seed),
producing one flat result row per run.

Defaults reproduce the reference protocol: rotation runs use N=50 landmarks,
stage budgets 500/300/300 at learning rates 0.005/0.001/0.001 with batch 20,
and 500 trajectories at dt=0.01 over T=2; Mueller-Brown runs use N=200,
4000/3000/3000 epochs, and 2000 trajectories at dt=0.005 over T=50.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, fields, replace

import numpy as np

from . import chart_training as ct
from . import latent_sde as ls
from .dynamics import MuellerBrownSde, RotationSde, WellSet
from .evaluate import (
    AtlasModel,
    atlas_chart_metrics,
    chart_metrics,
    coefficient_metrics,
    extrapolation_sweep,
    interwell_errors,
    interwell_mfpt,
    radial_mfpt,
)
from .geometry import FourierEmbedding, MongeSurface, SURFACE_KINDS, TrueChart
from .rng import stream
from .simulate import NoiseBank, SimConfig, delta_net_landmarks, simulate_ground_truth, simulate_learned

SCHEMA_VERSION = 1
RUN_CONDITIONS = ct.CONDITIONS + ("atlas",)
DYNAMICS_KINDS = ("rotation", "mb")
EXTRAP_DELTAS = (0.05, 0.10, 0.15, 0.20, 0.25, 0.30)


@dataclass(frozen=True)
class ExperimentConfig:
    surface: str = "paraboloid"
    dynamics: str = "rotation"
    kf: int = 4
    n_landmarks: int = 50
    conditions: tuple[str, ...] = ("baseline", "T", "T+F")
    seeds: tuple[int, ...] = (0, 1, 2)
    stage1_epochs: int = 500
    stage2_epochs: int = 300
    stage3_epochs: int = 300
    stage1_lr: float = 0.005
    stage2_lr: float = 0.001
    stage3_lr: float = 0.001
    batch_size: int = 20
    sim_dt: float = 0.01
    sim_horizon: float = 2.0
    sim_n_traj: int = 500
    radial_radius: float = 2.0
    n_chart_points: int = 500
    n_coeff_points: int = 200
    run_mfpt: bool = True
    run_extrapolation: bool = True
    out_dir: str = "results"

    def __post_init__(self):
        if self.surface not in SURFACE_KINDS:
            raise ValueError(f"unknown surface {self.surface!r}")
        if self.dynamics not in DYNAMICS_KINDS:
            raise ValueError(f"unknown dynamics {self.dynamics!r}")
        for cond in self.conditions:
            if cond not in RUN_CONDITIONS:
                raise ValueError(f"unknown condition {cond!r}")

    @property
    def ambient_dim(self) -> int:
        return 3 + 2 * self.kf

    @property
    def chart_width(self) -> int:
        return 64 if self.ambient_dim <= 64 else 256

    @property
    def drift_hidden(self) -> list[int]:
        return [64, 64] if self.dynamics == "rotation" else [256, 256, 256]

    @property
    def diffusion_hidden(self) -> list[int]:
        return [64, 64]

    @property
    def landmark_domain(self):
        if self.dynamics == "rotation":
            return ((-1.0, 1.0), (-1.0, 1.0))
        return ((-0.55, 0.55), (-0.55, 0.55))


def rotation_defaults(**overrides) -> ExperimentConfig:
    return replace(ExperimentConfig(), **overrides)


def mb_defaults(**overrides) -> ExperimentConfig:
    base = ExperimentConfig(
        dynamics="mb",
        n_landmarks=200,
        stage1_epochs=4000,
        stage2_epochs=3000,
        stage3_epochs=3000,
        sim_dt=0.005,
        sim_horizon=50.0,
        sim_n_traj=2000,
        run_extrapolation=False,
    )
    return replace(base, **overrides)


# ---------------------------------------------------------------------------
# config file round trip (simple "key = value" lines)
# ---------------------------------------------------------------------------

_TUPLE_FIELDS = {"conditions", "seeds"}


def config_to_text(cfg: ExperimentConfig) -> str:
    lines = ["# chartsde experiment configuration"]
    for f in fields(cfg):
        val = getattr(cfg, f.name)
        if f.name in _TUPLE_FIELDS:
            val = ",".join(str(v) for v in val)
        lines.append(f"{f.name} = {val}")
    return "\n".join(lines) + "\n"


def config_from_text(text: str) -> ExperimentConfig:
    field_types = {f.name: f.type for f in fields(ExperimentConfig)}
    kwargs = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"bad config line: {raw!r}")
        key, val = (part.strip() for part in line.split("=", 1))
        if key not in field_types:
            raise ValueError(f"unknown config key {key!r}")
        kwargs[key] = _parse_value(key, val)
    return ExperimentConfig(**kwargs)


def _parse_value(key: str, val: str):
    if key == "conditions":
        return tuple(v.strip() for v in val.split(",") if v.strip())
    if key == "seeds":
        return tuple(int(v) for v in val.split(",") if v.strip())
    if key in ("run_mfpt", "run_extrapolation"):
        return val.lower() in ("1", "true", "yes")
    if key in ("surface", "dynamics", "out_dir"):
        return val
    if key in ("kf", "n_landmarks", "stage1_epochs", "stage2_epochs",
               "stage3_epochs", "batch_size", "sim_n_traj",
               "n_chart_points", "n_coeff_points"):
        return int(val)
    return float(val)


# ---------------------------------------------------------------------------
# result rows
# ---------------------------------------------------------------------------

RESULT_COLUMNS = (
    ["schema_version", "surface", "dynamics", "kf", "ambient_dim", "condition",
     "seed", "n_landmarks_requested", "n_landmarks", "n_excluded_targets",
     "rec_median", "tangent_median", "efid_median",
     "eb_median", "elam_median", "esigma_median", "sigma_min_grid"]
    + [f"extrap_{d:.2f}".replace(".", "p") for d in EXTRAP_DELTAS]
    + ["radial_radius", "radial_mfpt_gt", "radial_mfpt_model", "radial_mfpt_relerr",
       "mfpt01_gt", "mfpt01_model", "mfpt01_relerr",
       "mfpt02_gt", "mfpt02_model", "mfpt02_relerr",
       "exit_fraction_gt", "exit_fraction_model", "failed"]
)


def _empty_row(cfg: ExperimentConfig, condition: str, seed: int) -> dict:
    row = {col: float("nan") for col in RESULT_COLUMNS}
    row.update(
        schema_version=SCHEMA_VERSION,
        surface=cfg.surface,
        dynamics=cfg.dynamics,
        kf=cfg.kf,
        ambient_dim=cfg.ambient_dim,
        condition=condition,
        seed=seed,
        n_landmarks_requested=cfg.n_landmarks,
        failed=0,
    )
    return row


def format_cell(value) -> str:
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def run_single(cfg: ExperimentConfig, condition: str, seed: int) -> dict:
    """One full pipeline run; returns a flat result row.

    Training divergence marks the row failed instead of raising so sweeps
    keep going.
    """
    row = _empty_row(cfg, condition, seed)
    sde = RotationSde() if cfg.dynamics == "rotation" else MuellerBrownSde()
    chart_true = TrueChart(MongeSurface(cfg.surface), FourierEmbedding.build(cfg.kf, seed))

    coords = delta_net_landmarks(
        chart_true.metric, cfg.landmark_domain, cfg.n_landmarks, seed
    )
    marks = ct.build_landmark_set(chart_true, sde, coords)
    row["n_landmarks"] = marks.count

    (u_lo, u_hi), _ = cfg.landmark_domain
    eval_rng = stream(seed, "eval-points")
    z_chart = eval_rng.uniform(u_lo, u_hi, size=(cfg.n_chart_points, 2))
    z_coeff = eval_rng.uniform(u_lo, u_hi, size=(cfg.n_coeff_points, 2))

    if condition == "atlas":
        model = AtlasModel.from_landmarks(marks)
        chart_m, coeff_m = atlas_chart_metrics(model, chart_true, sde, z_chart)
        row.update(
            rec_median=chart_m.rec_median,
            tangent_median=chart_m.tangent_median,
            efid_median=chart_m.efid_median,
            eb_median=coeff_m.eb_median,
            elam_median=coeff_m.elam_median,
            n_excluded_targets=0,
        )
        return row

    sched = ct.StageOneSchedule(
        epochs=cfg.stage1_epochs,
        lr=cfg.stage1_lr,
        batch_size=cfg.batch_size,
        hidden_width=cfg.chart_width,
    )
    chart, report = ct.train_stage1(
        marks, ct.PenaltyConfig.for_condition(condition), sched, seed
    )
    if report.diverged:
        row["failed"] = 1
        return row

    targets = ls.build_targets(chart, marks)
    row["n_excluded_targets"] = targets.n_excluded
    drift_net, rep2 = ls.train_stage2(
        chart, targets, cfg.stage2_epochs, cfg.stage2_lr, seed, hidden=cfg.drift_hidden
    )
    diff_net, rep3 = ls.train_stage3(
        chart, targets, cfg.stage3_epochs, cfg.stage3_lr, seed, hidden=cfg.diffusion_hidden
    )
    if rep2.diverged or rep3.diverged:
        row["failed"] = 1
        return row

    chart_m = chart_metrics(chart, chart_true, sde, z_chart)
    coeff_m = coefficient_metrics(chart, drift_net, diff_net, chart_true, sde, z_coeff)
    row.update(
        rec_median=chart_m.rec_median,
        tangent_median=chart_m.tangent_median,
        efid_median=chart_m.efid_median,
        eb_median=coeff_m.eb_median,
        elam_median=coeff_m.elam_median,
        esigma_median=coeff_m.esigma_median,
        sigma_min_grid=ct.sigma_min_on_grid(chart, chart_true),
    )

    if cfg.run_extrapolation:
        curve = extrapolation_sweep(chart, chart_true, EXTRAP_DELTAS, seed=seed)
        for margin, err in curve:
            row[f"extrap_{margin:.2f}".replace(".", "p")] = err

    if cfg.run_mfpt:
        _run_mfpt(cfg, row, chart_true, sde, chart, drift_net, diff_net, seed)
    return row


def _run_mfpt(cfg, row, chart_true, sde, chart, drift_net, diff_net, seed):
    sim_cfg = SimConfig(
        dt=cfg.sim_dt, horizon=cfg.sim_horizon, n_traj=cfg.sim_n_traj, seed=seed
    )
    if cfg.dynamics == "rotation":
        # radial passage from a common initial point at the chart center
        z0 = np.zeros((sim_cfg.n_traj, 2))
        kwargs = dict(track_radii=True)
    else:
        wells = WellSet()
        init_rng = stream(seed, "sim-init")
        z0 = np.clip(
            wells.centers[0] + 0.1 * init_rng.standard_normal((sim_cfg.n_traj, 2)),
            -0.55,
            0.55,
        )
        kwargs = dict(wells=wells)
    gt = simulate_ground_truth(
        chart_true, sde, z0, sim_cfg, NoiseBank(seed), **kwargs
    )
    learned = simulate_learned(
        chart, drift_net, diff_net, chart_true.decode(z0), sim_cfg, NoiseBank(seed), **kwargs
    )
    row["exit_fraction_gt"] = gt.exit_fraction
    row["exit_fraction_model"] = learned.exit_fraction
    if cfg.dynamics == "rotation":
        rep = radial_mfpt(gt, learned, cfg.radial_radius)
        row.update(
            radial_radius=rep.radius,
            radial_mfpt_gt=rep.gt_mfpt,
            radial_mfpt_model=rep.model_mfpt,
            radial_mfpt_relerr=rep.rel_error,
        )
    else:
        wells = WellSet()
        rep_gt = interwell_mfpt(gt, wells)
        rep_model = interwell_mfpt(learned, wells)
        errs = interwell_errors(rep_gt, rep_model)
        row.update(
            mfpt01_gt=rep_gt.mfpt[0, 1],
            mfpt01_model=rep_model.mfpt[0, 1],
            mfpt01_relerr=errs[(0, 1)],
            mfpt02_gt=rep_gt.mfpt[0, 2],
            mfpt02_model=rep_model.mfpt[0, 2],
            mfpt02_relerr=errs[(0, 2)],
        )


def iter_runs(cfg: ExperimentConfig):
    for condition in cfg.conditions:
        for seed in cfg.seeds:
            yield condition, seed


def run_experiment(cfg: ExperimentConfig):
    """Sequential generator of result rows, one per (condition, seed)."""
    for condition, seed in iter_runs(cfg):
        t0 = time.monotonic()
        try:
            row = run_single(cfg, condition, seed)
        except Exception as exc:  # keep the sweep alive, flag the row
            row = _empty_row(cfg, condition, seed)
            row["failed"] = 1
            print(f"run ({condition}, seed {seed}) failed: {exc}")
        yield row, time.monotonic() - t0
