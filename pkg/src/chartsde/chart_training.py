"""Stage 1: train the chart by minimizing reconstruction plus tangent-bundle,
inverse-consistency, and (optionally) contractive penalties over landmarks.

The tangent penalty is evaluated through the O(D d^2) trace form
d - Tr(g^{-1} C C^T) with C = (D decoder)^T U, never materializing a D x D
projector; its parameter gradient flows through the joint value+Jacobian
reverse pass of the network kernel.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensorcore as tc
from .geometry import LearnedChart
from .rng import stream

CONDITIONS = ("baseline", "T", "F", "C", "T+F")

# Trace-form simplification (drop g^{-1}) is licensed only once the
# inverse-consistency residual is small at the sample.
SIMPLIFIED_TANGENT_GATE = 0.1
METRIC_EIG_FLOOR = 1e-10


@dataclass(frozen=True)
class PenaltyConfig:
    """Named ablation condition mapped to penalty weights."""

    condition: str = "T+F"
    lambda_t: float = 1.0
    lambda_f: float = 1.0
    lambda_c: float = 0.01

    @classmethod
    def for_condition(cls, condition: str) -> "PenaltyConfig":
        if condition not in CONDITIONS:
            raise ValueError(f"unknown condition {condition!r}")
        return cls(
            condition=condition,
            lambda_t=1.0 if condition in ("T", "T+F") else 0.0,
            lambda_f=1.0 if condition in ("F", "T+F") else 0.0,
            lambda_c=0.01 if condition == "C" else 0.0,
        )

    def __post_init__(self):
        if min(self.lambda_t, self.lambda_f, self.lambda_c) < 0:
            raise ValueError("penalty weights must be nonnegative")


@dataclass
class LandmarkSet:
    """Training data: ambient points with oracle drift, factored covariance,
    and the orthonormal tangent frames of the covariance's top-d spectrum."""

    points: np.ndarray        # (m, D)
    drift: np.ndarray         # (m, D)
    cov_factor: np.ndarray    # (m, D, d) left factor E of Lambda = E B E^T
    cov_core: np.ndarray      # (m, d, d) PSD core B
    frames: np.ndarray        # (m, D, d) orthonormal U_d per landmark
    frame_values: np.ndarray  # (m, d) top-d eigenvalues of Lambda

    def __post_init__(self):
        gram = np.einsum("mDi,mDj->mij", self.frames, self.frames)
        eye = np.eye(self.frames.shape[2])
        if np.abs(gram - eye).max() > 1e-10:
            raise ValueError("landmark frames are not orthonormal")

    @property
    def count(self) -> int:
        return self.points.shape[0]

    @property
    def ambient_dim(self) -> int:
        return self.points.shape[1]

    @property
    def latent_dim(self) -> int:
        return self.frames.shape[2]


def build_landmark_set(chart_true, sde, coords: np.ndarray) -> LandmarkSet:
    """Assemble oracle landmark data at the given latent coordinates."""
    from .dynamics import oracle_ambient_fields

    x, b, (jac, sigma) = oracle_ambient_fields(chart_true, sde, coords)
    m = x.shape[0]
    d = coords.shape[1]
    frames = np.empty((m, x.shape[1], d))
    values = np.empty((m, d))
    for i in range(m):
        vals, vecs = tc.factored_sym_eig(jac[i], sigma[i])
        if vals.shape[0] < d:
            raise ValueError("degenerate covariance at a landmark")
        frames[i] = vecs[:, :d]
        values[i] = vals[:d]
    return LandmarkSet(x, b, jac, sigma, frames, values)


@dataclass
class StageOneReport:
    """Per-epoch loss traces plus the final decoder-conditioning diagnostic."""

    total: list[float] = field(default_factory=list)
    reconstruction: list[float] = field(default_factory=list)
    tangent: list[float] = field(default_factory=list)
    inverse: list[float] = field(default_factory=list)
    contractive: list[float] = field(default_factory=list)
    sigma_min_grid: float = float("nan")
    diverged: bool = False


# ---------------------------------------------------------------------------
# loss terms (chart-level, per spec contracts)
# ---------------------------------------------------------------------------


def loss_reconstruction(chart: LearnedChart, x: np.ndarray) -> float:
    """Squared ambient reconstruction error at z = encode(x)."""
    x = np.asarray(x, dtype=float)
    return float(((chart.decode(chart.encode(x)) - x) ** 2).sum())


def loss_inverse_consistency(chart: LearnedChart, x: np.ndarray) -> float:
    """Frobenius penalty on D encoder . D decoder - I."""
    z = chart.encode(x)
    m = chart.encoder_jacobian(x) @ chart.decoder_jacobian(z) - np.eye(chart.latent_dim)
    return float((m * m).sum())


def loss_contractive(chart: LearnedChart, x: np.ndarray) -> float:
    """Squared Frobenius norm of the encoder Jacobian."""
    a = chart.encoder_jacobian(x)
    return float((a * a).sum())


def tangent_loss_trace_form(jac: np.ndarray, frame: np.ndarray) -> float:
    """d - Tr(g^{-1} C C^T) with C = jac^T frame: equals half the squared
    Frobenius distance between the decoder-range projector and frame frame^T.

    Near-singular metrics fall back to a clamped spectral inverse, which
    inflates the loss instead of aborting (transient degeneracy early in
    training should not kill a run).
    """
    jac = np.asarray(jac, dtype=float)
    d = jac.shape[1]
    g = jac.T @ jac
    g_inv = tc.inv_2x2_psd_batch(g[None], floor=METRIC_EIG_FLOOR)[0] if d == 2 else None
    if g_inv is None:
        res = tc.sym_eig(g)
        vals = np.maximum(res.values, METRIC_EIG_FLOOR)
        g_inv = (res.vectors / vals) @ res.vectors.T
    c = jac.T @ frame
    return float(d - np.trace(g_inv @ c @ c.T))


def loss_tangent(chart: LearnedChart, x: np.ndarray, frame: np.ndarray) -> float:
    """Tangent-bundle penalty 0.5 ||P_chart - frame frame^T||_F^2 in trace form."""
    z = chart.encode(x)
    return tangent_loss_trace_form(chart.decoder_jacobian(z), frame)


def tangent_loss_simplified(chart: LearnedChart, x: np.ndarray, frame: np.ndarray) -> float:
    """d - Tr(D encoder . frame frame^T . D decoder).

    Agrees with :func:`loss_tangent` once the inverse-consistency penalty has
    driven D encoder . D decoder close to the identity (diagnostic gate
    SIMPLIFIED_TANGENT_GATE); kept as a diagnostic because as a training
    objective it is unbounded below.
    """
    z = chart.encode(x)
    a = chart.encoder_jacobian(x)
    jac = chart.decoder_jacobian(z)
    return float(chart.latent_dim - np.trace(a @ frame @ frame.T @ jac))


# ---------------------------------------------------------------------------
# batched loss + gradient evaluation
# ---------------------------------------------------------------------------


def _batch_losses_and_grads(
    enc: tc.Mlp,
    dec: tc.Mlp,
    x: np.ndarray,
    frames: np.ndarray,
    cfg: PenaltyConfig,
):
    """Mean Stage-1 loss over a batch and its parameter gradients.

    Returns (per-term means dict, grads aligned with mlp_params(enc) +
    mlp_params(dec)).
    """
    n, dim = x.shape
    d = dec.n_in
    eye = np.eye(d)

    z, enc_jac, enc_cache = tc.mlp_value_jacobian(enc, x)
    xh, dec_jac, dec_cache = tc.mlp_value_jacobian(dec, z)

    rec_vec = xh - x
    rec = float((rec_vec**2).sum() / n)
    d_xh = 2.0 * rec_vec / n

    d_dec_jac = np.zeros_like(dec_jac)
    d_enc_jac = np.zeros_like(enc_jac)

    cycle = enc_jac @ dec_jac - eye  # (n, d, d)
    inv_val = float((cycle**2).sum() / n)
    tan_val = 0.0

    if cfg.lambda_t > 0.0:
        # Exact trace form d - Tr(g^{-1} C C^T) throughout.  The simplified
        # form that drops g^{-1} (see tangent_loss_simplified) is unbounded
        # below as a surrogate: the optimizer can push the trace past d
        # through encoder directions the cycle gate cannot see, so it is not
        # used as a training objective.
        g = np.swapaxes(dec_jac, 1, 2) @ dec_jac
        c = np.swapaxes(dec_jac, 1, 2) @ frames  # (n, d, d)
        g_inv = tc.inv_2x2_psd_batch(g, floor=METRIC_EIG_FLOOR)
        gc = g_inv @ c
        tan_per = d - np.einsum("nij,nij->n", gc, c)
        tan_val = float(tan_per.sum() / n)
        # d/dJ = -2 (U - J g^{-1} C) C^T g^{-1}
        u_minus = frames - dec_jac @ gc
        d_dec_jac += (cfg.lambda_t / n) * (-2.0 * u_minus @ np.swapaxes(gc, 1, 2))

    if cfg.lambda_f > 0.0:
        d_enc_jac += (2.0 * cfg.lambda_f / n) * (cycle @ np.swapaxes(dec_jac, 1, 2))
        d_dec_jac += (2.0 * cfg.lambda_f / n) * (np.swapaxes(enc_jac, 1, 2) @ cycle)

    con_val = float((enc_jac**2).sum() / n)
    if cfg.lambda_c > 0.0:
        d_enc_jac += (2.0 * cfg.lambda_c / n) * enc_jac

    dec_grads, d_z = tc.mlp_vj_backward(dec, dec_cache, d_xh, d_dec_jac)
    enc_grads, _ = tc.mlp_vj_backward(enc, enc_cache, d_z, d_enc_jac)

    total = rec + cfg.lambda_t * tan_val + cfg.lambda_f * inv_val + cfg.lambda_c * con_val
    terms = {
        "total": total,
        "reconstruction": rec,
        "tangent": tan_val,
        "inverse": inv_val,
        "contractive": con_val,
    }
    return terms, enc_grads + dec_grads


def stage1_loss(chart: LearnedChart, landmarks: LandmarkSet, cfg: PenaltyConfig) -> float:
    """Mean Stage-1 objective over a landmark set (no gradients)."""
    terms, _ = _batch_losses_and_grads(
        chart.encoder, chart.decoder, landmarks.points, landmarks.frames, cfg
    )
    return terms["total"]


def stage1_loss_gradient(
    chart: LearnedChart, landmarks: LandmarkSet, cfg: PenaltyConfig
) -> list[np.ndarray]:
    """Parameter gradients of the mean Stage-1 objective (encoder then decoder)."""
    _, grads = _batch_losses_and_grads(
        chart.encoder, chart.decoder, landmarks.points, landmarks.frames, cfg
    )
    return grads


# ---------------------------------------------------------------------------
# the Stage-1 trainer
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StageOneSchedule:
    epochs: int = 500
    lr: float = 0.005
    batch_size: int = 20
    warmup_frac: float = 0.2   # phase 1 runs at 2x lr on the same objective
    warmup_lr_scale: float = 2.0
    hidden_width: int = 64
    n_hidden: int = 2


def init_chart(
    ambient_dim: int, latent_dim: int, width: int, n_hidden: int, seed: int
) -> LearnedChart:
    enc_widths = [ambient_dim] + [width] * n_hidden + [latent_dim]
    dec_widths = [latent_dim] + [width] * n_hidden + [ambient_dim]
    enc = tc.mlp_init(enc_widths, stream(seed, "weights-encoder"))
    dec = tc.mlp_init(dec_widths, stream(seed, "weights-decoder"))
    return LearnedChart(enc, dec)


def train_stage1(
    landmarks: LandmarkSet,
    cfg: PenaltyConfig,
    schedule: StageOneSchedule,
    seed: int,
    chart: LearnedChart | None = None,
) -> tuple[LearnedChart, StageOneReport]:
    """Minimize the Stage-1 objective with Adam over a two-phase schedule.

    Deterministic given the seed: weight init and batch order come from
    dedicated named streams.  Divergence (non-finite loss) aborts with the
    report flagged rather than raising.
    """
    if landmarks.count < 1:
        raise ValueError("landmark set is empty")
    if chart is None:
        chart = init_chart(
            landmarks.ambient_dim,
            landmarks.latent_dim,
            schedule.hidden_width,
            schedule.n_hidden,
            seed,
        )
    params = tc.mlp_params(chart.encoder) + tc.mlp_params(chart.decoder)
    state = tc.adam_init(params, lr=schedule.lr)
    batch_rng = stream(seed, "batching")
    report = StageOneReport()

    warmup_epochs = int(round(schedule.warmup_frac * schedule.epochs))
    m = landmarks.count
    batch = min(schedule.batch_size, m)
    for epoch in range(schedule.epochs):
        state.lr = (
            schedule.lr * schedule.warmup_lr_scale
            if epoch < warmup_epochs
            else schedule.lr
        )
        order = batch_rng.permutation(m)
        sums = dict.fromkeys(
            ("total", "reconstruction", "tangent", "inverse", "contractive"), 0.0
        )
        n_batches = 0
        for lo in range(0, m, batch):
            idx = order[lo : lo + batch]
            terms, grads = _batch_losses_and_grads(
                chart.encoder,
                chart.decoder,
                landmarks.points[idx],
                landmarks.frames[idx],
                cfg,
            )
            if not np.isfinite(terms["total"]):
                report.diverged = True
                return chart, report
            tc.adam_step(state, params, grads)
            for k in sums:
                sums[k] += terms[k]
            n_batches += 1
        report.total.append(sums["total"] / n_batches)
        report.reconstruction.append(sums["reconstruction"] / n_batches)
        report.tangent.append(sums["tangent"] / n_batches)
        report.inverse.append(sums["inverse"] / n_batches)
        report.contractive.append(sums["contractive"] / n_batches)
    return chart, report


def sigma_min_on_grid(chart: LearnedChart, chart_true, grid_n: int = 50) -> float:
    """Worst decoder conditioning over the working region of the chart.

    The decoder is probed at the encoded images of a grid_n x grid_n surface
    grid, i.e. exactly where simulation and evaluation use it.
    """
    axis = np.linspace(-1.0, 1.0, grid_n)
    uu, vv = np.meshgrid(axis, axis)
    z_true = np.column_stack([uu.ravel(), vv.ravel()])
    z = chart.encode(chart_true.decode(z_true))
    jac = tc.mlp_input_jacobian(chart.decoder, z)
    worst = np.inf
    for j in jac:
        worst = min(worst, tc.min_singular_value(j))
    return float(worst)
