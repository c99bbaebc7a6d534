"""Reported metrics: chart quality, tangent fidelity, end-to-end ambient
coefficient errors, extrapolation, radial and inter-well mean first-passage
times, and the Gaussian-kernel landmark baseline simulator.

Everything here is read-only over trained artifacts.  Passage statistics are
computed per trajectory from well-label sequences, so concatenating
trajectories can never manufacture cross-trajectory passages.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensorcore as tc
from .chart_training import LandmarkSet
from .dynamics import WellSet, oracle_ambient_fields
from .rng import stream
from .simulate import SimConfig, NoiseBank, TrajectoryEnsemble


# ---------------------------------------------------------------------------
# chart and coefficient metrics
# ---------------------------------------------------------------------------


@dataclass
class ChartMetrics:
    rec_median: float
    tangent_median: float
    efid_median: float   # normal-space residual of the Ito-corrected drift
    n_points: int


@dataclass
class CoefficientMetrics:
    eb_median: float
    elam_median: float
    esigma_median: float
    n_points: int
    n_excluded: int = 0


def _oracle_frames(jac_true: np.ndarray, sigma_true: np.ndarray):
    """Orthonormal top-d frames of the factored oracle covariances."""
    m, _, d = jac_true.shape
    frames = np.empty_like(jac_true)
    for i in range(m):
        vals, vecs = tc.factored_sym_eig(jac_true[i], sigma_true[i])
        frames[i] = vecs[:, :d]
    return frames


def _true_drift_tangential(chart_true, sde, z_eval):
    """Oracle (x, b, Lambda factors, frames, b - q/2) at evaluation points."""
    x, b, (jac_t, sig_t) = oracle_ambient_fields(chart_true, sde, z_eval)
    hess = chart_true.decoder_hessians(z_eval)
    q = np.einsum("niab,nab->ni", hess, sig_t)
    return x, b, jac_t, sig_t, _oracle_frames(jac_t, sig_t), b - 0.5 * q


def chart_metrics(chart, chart_true, sde, z_eval: np.ndarray) -> ChartMetrics:
    """Per-seed medians of reconstruction, tangent error, and drift-residual
    fidelity over held-out points.

    The reference projector comes from the spectral truncation of the oracle
    covariance; the chart projector from the decoder Jacobian.  The fidelity
    term measures how much of the Ito-corrected drift (exactly tangential for
    the truth) leaks into the learned normal space.
    """
    z_eval = np.atleast_2d(z_eval)
    x, _, _, _, frames, t_vec = _true_drift_tangential(chart_true, sde, z_eval)
    z = chart.encode(x)
    xh = chart.decode(z)
    jac = chart.decoder_jacobian(z)
    rec = ((xh - x) ** 2).sum(axis=1)

    g = np.swapaxes(jac, 1, 2) @ jac
    g_inv = tc.inv_2x2_psd_batch(g)
    c = np.swapaxes(jac, 1, 2) @ frames
    gc = g_inv @ c
    d = chart.latent_dim
    tangent = 2.0 * (d - np.einsum("nij,nij->n", gc, c))

    w = np.einsum("nij,nj->ni", g_inv, np.einsum("nDi,nD->ni", jac, t_vec))
    resid = t_vec - np.einsum("nDi,ni->nD", jac, w)
    efid = (resid**2).sum(axis=1)

    return ChartMetrics(
        float(np.median(rec)),
        float(np.median(tangent)),
        float(np.median(efid)),
        len(z_eval),
    )


def coefficient_metrics(
    chart, drift_net, diff_net, chart_true, sde, z_eval: np.ndarray
) -> CoefficientMetrics:
    """End-to-end ambient errors of the full pipeline at held-out points.

    The learned latent coefficients are pushed to ambient space through the
    learned decoder (drift via Jacobian plus Ito correction, covariance via
    congruence) and compared with the oracle fields.  Points with a
    rank-deficient decoder Jacobian are excluded and counted.
    """
    z_eval = np.atleast_2d(z_eval)
    x, b, jac_t, sig_t, _, _ = _true_drift_tangential(chart_true, sde, z_eval)
    z = chart.encode(x)
    d = chart.latent_dim
    mu_hat = np.atleast_2d(tc.mlp_forward(drift_net, z))
    s_hat = np.atleast_2d(tc.mlp_forward(diff_net, z)).reshape(-1, d, d)
    cov_hat = s_hat @ np.swapaxes(s_hat, 1, 2)

    eb, elam, esig = [], [], []
    excluded = 0
    for i in range(len(z_eval)):
        jac = chart.decoder_jacobian(z[i])
        smin = tc.min_singular_value(jac)
        if smin <= 1e-10 * max(np.sqrt((jac * jac).sum()), 1e-300):
            excluded += 1
            continue
        b_hat = jac @ mu_hat[i] + 0.5 * chart.ito_correction(z[i], cov_hat[i])
        eb.append(float(((b_hat - b[i]) ** 2).sum()))

        # || J S J^T - Lambda ||_F^2 via the stacked factor, no D x D matrix
        f = np.concatenate([jac, jac_t[i]], axis=1)
        core = np.zeros((2 * d, 2 * d))
        core[:d, :d] = cov_hat[i]
        core[d:, d:] = -sig_t[i]
        m_small = core @ (f.T @ f)
        elam.append(float(np.trace(m_small @ m_small)))

        a = chart.encoder_jacobian(x[i])
        ae = a @ jac_t[i]
        sig_target = ae @ sig_t[i] @ ae.T
        g = jac.T @ jac
        gd = g @ (cov_hat[i] - sig_target)
        esig.append(float(np.trace(gd @ gd)))
    if not eb:
        return CoefficientMetrics(np.nan, np.nan, np.nan, 0, excluded)
    return CoefficientMetrics(
        float(np.median(eb)),
        float(np.median(elam)),
        float(np.median(esig)),
        len(eb),
        excluded,
    )


def extrapolation_sweep(
    chart,
    chart_true,
    deltas=(0.05, 0.10, 0.15, 0.20, 0.25, 0.30),
    n_points: int = 200,
    seed: int = 0,
) -> list[tuple[float, float]]:
    """Mean reconstruction error on frames beyond the training square.

    For each margin the points are sampled uniformly on
    [-1-margin, 1+margin]^2 minus [-1, 1]^2 by rejection.
    """
    if len(deltas) == 0:
        raise ValueError("empty extrapolation grid")
    rng = stream(seed, "extrapolation")
    out = []
    for margin in deltas:
        pts = []
        lim = 1.0 + margin
        while len(pts) < n_points:
            raw = rng.uniform(-lim, lim, size=(4 * n_points, 2))
            outside = (np.abs(raw) > 1.0).any(axis=1)
            pts.extend(raw[outside][: n_points - len(pts)])
        pts = np.asarray(pts)
        x = chart_true.decode(pts)
        err = ((chart.decode(chart.encode(x)) - x) ** 2).sum(axis=1)
        out.append((float(margin), float(err.mean())))
    return out


# ---------------------------------------------------------------------------
# mean first-passage times
# ---------------------------------------------------------------------------


@dataclass
class RadialMfpt:
    radius: float
    gt_mfpt: float
    model_mfpt: float
    rel_error: float
    n_gt: int
    n_model: int


def _first_passage_times(ens: TrajectoryEnsemble, radius: float) -> np.ndarray:
    """Per-trajectory first time ||x_k - x_0|| >= radius, capped at the
    horizon, over trajectories whose passage resolved before censoring.

    A passage observed no later than the first censor violation counts (the
    crossing happened while the path was still trusted); a trajectory that
    leaves the domain before reaching the radius is censored; one that never
    exits and never reaches the radius contributes the capped horizon.
    """
    if ens.radii is None:
        raise ValueError("ensemble was simulated without radius tracking")
    with np.errstate(invalid="ignore"):
        hit = ens.radii >= radius
    any_hit = hit.any(axis=1)
    hit_step = np.where(any_hit, hit.argmax(axis=1), ens.n_steps + 1)
    if ens.first_exit_step is None:
        # synthetic ensembles carry only the whole-path verdict
        exit_step = np.where(ens.censored, -1, ens.n_steps + 1)
    else:
        exit_step = ens.first_exit_step
    valid_hit = any_hit & (hit_step <= exit_step)
    capped = (~any_hit) & (exit_step > ens.n_steps)
    times = np.concatenate(
        [hit_step[valid_hit] * ens.dt, np.full(int(capped.sum()), ens.horizon)]
    )
    return times


def radial_mfpt(
    gt: TrajectoryEnsemble, model: TrajectoryEnsemble, radius: float = 2.0
) -> RadialMfpt:
    """Mean first-passage time to an ambient distance, paired GT vs model."""
    t_gt = _first_passage_times(gt, radius)
    t_model = _first_passage_times(model, radius)
    if t_gt.size == 0 or t_model.size == 0:
        raise ValueError("no uncensored trajectories to average")
    m_gt = float(t_gt.mean())
    m_model = float(t_model.mean())
    return RadialMfpt(
        radius, m_gt, m_model, abs(m_model - m_gt) / m_gt, t_gt.size, t_model.size
    )


def scan_passages(labels: np.ndarray, n_dwell: int) -> list[tuple[int, int, int]]:
    """Confirmed well-to-well passages in one label sequence.

    A passage from well i starts at the step the trajectory first occupies
    core i (after the previous arrival) and ends at the first step of
    n_dwell consecutive steps inside another core j; the passage time is
    backdated to that dwell start.  Returns (source, target, duration) in
    steps; the scan resumes from the arrival.
    """
    labels = np.asarray(labels)
    n = len(labels)
    passages: list[tuple[int, int, int]] = []
    source, source_step = -1, -1
    k = 0
    while k < n:
        lab = int(labels[k])
        if source == -1:
            if lab >= 0:
                source, source_step = lab, k
            k += 1
            continue
        if lab >= 0 and lab != source:
            if k + n_dwell <= n and bool((labels[k : k + n_dwell] == lab).all()):
                passages.append((source, lab, k - source_step))
                source, source_step = lab, k
        k += 1
    return passages


@dataclass
class InterwellMfpt:
    """Mean passage times tau[i][j] in time units with passage counts."""

    mfpt: np.ndarray    # (3, 3), NaN where no passages were recorded
    counts: np.ndarray  # (3, 3) int
    n_censored: int


def interwell_mfpt(ens: TrajectoryEnsemble, wells: WellSet) -> InterwellMfpt:
    if ens.labels is None:
        raise ValueError("ensemble was simulated without well labels")
    n_wells = len(wells.centers)
    sums = np.zeros((n_wells, n_wells))
    counts = np.zeros((n_wells, n_wells), dtype=int)
    for t in range(ens.n_traj):
        if ens.censored[t]:
            continue
        for i, j, steps in scan_passages(ens.labels[t], wells.n_dwell):
            sums[i, j] += steps * ens.dt
            counts[i, j] += 1
    with np.errstate(invalid="ignore"):
        mfpt = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return InterwellMfpt(mfpt, counts, int(ens.censored.sum()))


def interwell_errors(
    gt: InterwellMfpt, model: InterwellMfpt, pairs=((0, 1), (0, 2))
) -> dict[tuple[int, int], float]:
    """Relative per-pair MFPT errors; NaN where either side lacks passages.

    Only first-passage pairs out of the common start well are comparable;
    follow-on transitions inherit model-dependent entry distributions.
    """
    out = {}
    for i, j in pairs:
        tau_gt = gt.mfpt[i, j]
        tau_model = model.mfpt[i, j]
        if not np.isfinite(tau_gt) or not np.isfinite(tau_model):
            out[(i, j)] = float("nan")
        else:
            out[(i, j)] = float(abs(tau_model - tau_gt) / tau_gt)
    return out


# ---------------------------------------------------------------------------
# kernel-blending landmark baseline
# ---------------------------------------------------------------------------


def _orthonormalize_block(v: np.ndarray) -> np.ndarray:
    """Batched Gram-Schmidt on (n, D, k) blocks."""
    out = np.empty_like(v)
    for j in range(v.shape[2]):
        col = v[:, :, j]
        for i in range(j):
            col = col - np.einsum("nD,nD->n", out[:, :, i], col)[:, None] * out[:, :, i]
        norm = np.linalg.norm(col, axis=1, keepdims=True)
        out[:, :, j] = col / np.maximum(norm, 1e-300)
    return out


@dataclass
class AtlasModel:
    """Gaussian-kernel blend of per-landmark oracle drift and covariance.

    The simulator steps in ambient coordinates and re-projects every step
    onto the blended tangent plane anchored at the kernel-weighted landmark
    mean; the diffusion factor is the truncated rank-d square root of the
    blended covariance.
    """

    points: np.ndarray      # (N, D)
    drift: np.ndarray       # (N, D)
    cov_factor: np.ndarray  # (N, D, d)
    cov_core: np.ndarray    # (N, d, d)
    bandwidth: float
    power_iters: int = 60

    @classmethod
    def from_landmarks(cls, landmarks: LandmarkSet, bandwidth: float | None = None):
        if bandwidth is None:
            diffs = landmarks.points[:, None, :] - landmarks.points[None, :, :]
            dists = np.sqrt((diffs**2).sum(-1))
            np.fill_diagonal(dists, np.inf)
            bandwidth = 2.0 * float(np.median(dists.min(axis=1)))
        return cls(
            landmarks.points,
            landmarks.drift,
            landmarks.cov_factor,
            landmarks.cov_core,
            float(bandwidth),
        )

    @property
    def latent_dim(self) -> int:
        return self.cov_factor.shape[2]

    def weights(self, x: np.ndarray) -> np.ndarray:
        """Normalized kernel weights; rows sum to one exactly (softmax form).

        A query infinitely far from every landmark would underflow all
        kernels; the shifted exponent keeps the nearest landmark's weight
        positive, which is the nearest-landmark fallback.
        """
        x = np.atleast_2d(x)
        d2 = ((x[:, None, :] - self.points[None, :, :]) ** 2).sum(-1)
        logw = -d2 / (2.0 * self.bandwidth**2)
        logw = logw - logw.max(axis=1, keepdims=True)
        w = np.exp(logw)
        return w / w.sum(axis=1, keepdims=True)

    def blend_drift(self, w: np.ndarray) -> np.ndarray:
        return w @ self.drift

    def _cov_apply(self, w: np.ndarray, v: np.ndarray) -> np.ndarray:
        """(blended covariance) @ v for v of shape (n, D, k)."""
        t1 = np.einsum("mDi,nDk->nmik", self.cov_factor, v)
        t2 = np.einsum("mij,nmjk->nmik", self.cov_core, t1)
        return np.einsum("nm,mDi,nmik->nDk", w, self.cov_factor, t2)

    def blended_top_frame(self, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Top-d eigenvalues and orthonormal frames of the blended covariance.

        Batched subspace iteration on an enlarged block (d + 2 columns)
        followed by a Rayleigh-Ritz projection: convergence is driven by the
        gap below the block, not the possibly weak gap inside the top-d
        spectrum, so a fixed iteration budget suffices.
        """
        n = w.shape[0]
        d = self.latent_dim
        d_amb = self.points.shape[1]
        block = min(d + 2, d_amb)
        rng = np.random.default_rng(12345)  # fixed basis, deterministic
        v0 = tc.orthonormal_columns(rng.standard_normal((d_amb, block)))
        v = np.broadcast_to(v0, (n, d_amb, block)).copy()
        for _ in range(self.power_iters):
            v = _orthonormalize_block(self._cov_apply(w, v))
        av = self._cov_apply(w, v)
        small = np.einsum("nDj,nDk->njk", v, av)
        small = 0.5 * (small + np.swapaxes(small, 1, 2))
        vals = np.empty((n, d))
        frames = np.empty((n, d_amb, d))
        for i in range(n):
            ritz_vals, ritz_vecs = tc.jacobi_eigh(small[i])
            vals[i] = ritz_vals[:d]
            frames[i] = v[i] @ ritz_vecs[:, :d]
        return vals, frames

    def simulate(
        self,
        x0: np.ndarray,
        cfg: SimConfig,
        bank: NoiseBank,
        *,
        wells=None,
        track_radii: bool = False,
        censor_box=((-1.0, 1.0), (-1.0, 1.0)),
    ) -> TrajectoryEnsemble:
        """Ambient Euler-Maruyama with per-step tangent re-projection."""
        x0 = np.atleast_2d(np.asarray(x0, dtype=float))
        n = x0.shape[0]
        if n != cfg.n_traj:
            raise ValueError("initial-condition count must match cfg.n_traj")
        d = self.latent_dim
        n_steps = cfg.n_steps
        (u_lo, u_hi), (v_lo, v_hi) = censor_box
        root_dt = np.sqrt(cfg.dt)

        censored = np.zeros(n, dtype=bool)
        first_exit = np.full(n, n_steps + 1, dtype=np.int64)
        radii = np.zeros((n, n_steps + 1)) if track_radii else None
        labels = np.full((n, n_steps + 1), -1, dtype=np.int8) if wells is not None else None

        x = x0.copy()
        start = x0.copy()
        dw = bank.gaussian_block(np.arange(n), n_steps, d)

        def observe(k, x_now):
            uv = x_now[:, :2]
            finite = np.isfinite(x_now).all(axis=1)
            inside = (
                (uv[:, 0] >= u_lo) & (uv[:, 0] <= u_hi)
                & (uv[:, 1] >= v_lo) & (uv[:, 1] <= v_hi)
            )
            bad_now = ~(finite & inside)
            first_exit[bad_now & (first_exit > n_steps)] = k
            censored[:] |= bad_now
            if radii is not None:
                with np.errstate(invalid="ignore"):
                    radii[:, k] = np.sqrt(((x_now - start) ** 2).sum(axis=1))
            if labels is not None:
                labels[:, k] = wells.assign(uv)

        observe(0, x)
        for k in range(n_steps):
            w = self.weights(x)
            b = self.blend_drift(w)
            vals, frame = self.blended_top_frame(w)
            eta = frame * np.sqrt(np.maximum(vals, 0.0))[:, None, :]
            with np.errstate(over="ignore", invalid="ignore"):
                x = x + b * cfg.dt + np.einsum("nDk,nk->nD", eta, dw[:, k]) * root_dt
                # re-projection onto the blended tangent plane at the new point
                w_new = self.weights(np.nan_to_num(x, nan=1e6))
                _, frame_new = self.blended_top_frame(w_new)
                center = w_new @ self.points
                rel = x - center
                proj = np.einsum("nDk,nk->nD", frame_new, np.einsum("nDk,nD->nk", frame_new, rel))
                x = center + proj
            observe(k + 1, x)
        if labels is not None:
            labels[censored] = -1
        return TrajectoryEnsemble(
            dt=cfg.dt,
            n_steps=n_steps,
            censored=censored,
            exit_fraction=float(censored.mean()),
            radii=radii,
            labels=labels,
            first_exit_step=first_exit,
        )


def atlas_chart_metrics(model: AtlasModel, chart_true, sde, z_eval: np.ndarray):
    """Chart-quality and coefficient metrics for the kernel baseline.

    Reconstruction is the distance to the blended affine tangent plane;
    tangent/fidelity use the blended covariance's top-d frame; coefficient
    errors compare the blended fields directly with the oracle.
    """
    z_eval = np.atleast_2d(z_eval)
    x, b, jac_t, sig_t, frames_true, t_vec = _true_drift_tangential(chart_true, sde, z_eval)
    w = model.weights(x)
    vals, frames = model.blended_top_frame(w)
    center = w @ model.points
    rel = x - center
    proj = np.einsum("nDk,nk->nD", frames, np.einsum("nDk,nD->nk", frames, rel))
    rec = ((x - (center + proj)) ** 2).sum(axis=1)

    d = model.latent_dim
    cross = np.einsum("nDi,nDj->nij", frames, frames_true)
    tangent = 2.0 * (d - (cross**2).sum(axis=(1, 2)))

    t_proj = np.einsum("nDk,nk->nD", frames, np.einsum("nDk,nD->nk", frames, t_vec))
    efid = ((t_vec - t_proj) ** 2).sum(axis=1)

    b_blend = model.blend_drift(w)
    eb = ((b_blend - b) ** 2).sum(axis=1)

    # ||Lambda_blend - Lambda_true||_F^2 through stacked factors
    n_land, _, d_lat = model.cov_factor.shape
    f_land = np.transpose(model.cov_factor, (1, 0, 2)).reshape(model.points.shape[1], -1)
    gram_land = f_land.T @ f_land  # constant across evaluation points
    elam = np.empty(len(z_eval))
    for i in range(len(z_eval)):
        cross_i = f_land.T @ jac_t[i]
        m_top = np.concatenate([gram_land, cross_i], axis=1)
        m_bot = np.concatenate([cross_i.T, jac_t[i].T @ jac_t[i]], axis=1)
        m_all = np.concatenate([m_top, m_bot], axis=0)
        core = np.zeros_like(m_all)
        for j in range(n_land):
            sl = slice(j * d_lat, (j + 1) * d_lat)
            core[sl, sl] = w[i, j] * model.cov_core[j]
        core[n_land * d_lat :, n_land * d_lat :] = -sig_t[i]
        gm = core @ m_all
        elam[i] = np.trace(gm @ gm)

    chart_m = ChartMetrics(
        float(np.median(rec)), float(np.median(tangent)), float(np.median(efid)), len(z_eval)
    )
    coeff_m = CoefficientMetrics(
        float(np.median(eb)), float(np.median(elam)), float("nan"), len(z_eval)
    )
    return chart_m, coeff_m
