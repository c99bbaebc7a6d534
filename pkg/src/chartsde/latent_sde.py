"""Stages 2 and 3: fit the latent drift to the encoder-pullback target under
the metric-weighted norm, and the latent diffusion to the pulled-back
covariance under the metric-weighted trace loss, with the chart frozen.

Targets are computed once from the frozen chart.  The drift loss uses the
ambient rewrite ||r||_g^2 = ||(D decoder) r||^2; the diffusion net outputs a
d x d factor s directly (row-major), so s s^T is PSD by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensorcore as tc
from .chart_training import LandmarkSet
from .geometry import LearnedChart
from .rng import stream

METRIC_SPD_FLOOR = 1e-12


@dataclass
class LatentTargets:
    """Per-landmark encoded positions, drift/covariance targets, and metrics.

    Landmarks whose induced metric fails positive-definiteness are excluded
    (their targets would be meaningless); the count is kept for reports.
    """

    z: np.ndarray             # (m, d)
    mu: np.ndarray            # (m, d) encoder-pullback drift targets
    sigma_cov: np.ndarray     # (m, d, d) pulled-back covariance targets
    metric: np.ndarray        # (m, d, d) decoder metric g at z
    dec_jac: np.ndarray       # (m, D, d) frozen decoder Jacobians
    n_excluded: int = 0

    @property
    def count(self) -> int:
        return self.z.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.z.shape[1]


def build_targets(chart: LearnedChart, landmarks: LandmarkSet) -> LatentTargets:
    """Encode landmarks and assemble Stage-2/3 regression targets.

    The drift target is the encoder pullback A b + 0.5 <Lambda, Hess enc>
    contracted through the covariance spectrum (one HVP per eigenvector);
    the covariance target is B diag(lam) B^T with B = A U_d, so no D x D
    matrix is ever formed.
    """
    d = landmarks.latent_dim
    keep_z, keep_mu, keep_sig, keep_g, keep_jac = [], [], [], [], []
    excluded = 0
    for i in range(landmarks.count):
        x = landmarks.points[i]
        z = chart.encode(x)
        jac = chart.decoder_jacobian(z)
        g = jac.T @ jac
        vals_g = (
            tc.sym_eig_2x2(g[0, 0], g[0, 1], g[1, 1])[0]
            if d == 2
            else tc.sym_eig(g).values
        )
        if vals_g[-1] <= METRIC_SPD_FLOOR:
            excluded += 1
            continue
        a = chart.encoder_jacobian(x)
        u = landmarks.frames[i]
        lam_vals = landmarks.frame_values[i]
        quad = chart.encoder_hessian_quadratic(x, u.T)
        mu = a @ landmarks.drift[i] + 0.5 * (lam_vals @ quad)
        b_mat = a @ u
        sig = (b_mat * lam_vals) @ b_mat.T
        keep_z.append(z)
        keep_mu.append(mu)
        keep_sig.append(0.5 * (sig + sig.T))
        keep_g.append(g)
        keep_jac.append(jac)
    if not keep_z:
        raise ValueError("every landmark was excluded: chart metric degenerate")
    return LatentTargets(
        np.asarray(keep_z),
        np.asarray(keep_mu),
        np.asarray(keep_sig),
        np.asarray(keep_g),
        np.asarray(keep_jac),
        n_excluded=excluded,
    )


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def loss_drift(net: tc.Mlp, targets: LatentTargets, i: int) -> float:
    """Metric-weighted residual via the ambient rewrite ||J r||^2."""
    r = tc.mlp_forward(net, targets.z[i]) - targets.mu[i]
    jr = targets.dec_jac[i] @ r
    return float(jr @ jr)


def loss_diffusion(net: tc.Mlp, targets: LatentTargets, i: int) -> float:
    """Tr((g [s s^T - Sigma_target])^2) at landmark i."""
    d = targets.latent_dim
    s = tc.mlp_forward(net, targets.z[i]).reshape(d, d)
    delta = s @ s.T - targets.sigma_cov[i]
    m = targets.metric[i] @ delta
    return float(np.trace(m @ m))


def _drift_batch(net, targets):
    """Mean drift loss and parameter gradients over all targets."""
    m = targets.count
    pred = tc.mlp_forward(net, targets.z)
    r = pred - targets.mu
    gr = np.einsum("nij,nj->ni", targets.metric, r)
    loss = float(np.einsum("ni,ni->", r, gr) / m)
    seeds = 2.0 * gr / m
    grads = tc.mlp_param_gradient(net, targets.z, seeds)
    return loss, grads


def _diffusion_batch(net, targets):
    m = targets.count
    d = targets.latent_dim
    out = tc.mlp_forward(net, targets.z)
    s = out.reshape(m, d, d)
    delta = s @ np.swapaxes(s, 1, 2) - targets.sigma_cov
    g_delta = targets.metric @ delta
    loss = float(np.einsum("nij,nji->", g_delta, g_delta) / m)
    # d/ds Tr((g delta)^2) = 4 g delta g s
    grad_s = 4.0 * np.einsum("nij,njk,nkl,nlm->nim", targets.metric, delta, targets.metric, s)
    seeds = grad_s.reshape(m, d * d) / m
    grads = tc.mlp_param_gradient(net, targets.z, seeds)
    return loss, grads


@dataclass
class StageFitReport:
    losses: list[float]
    diverged: bool = False


def _subset(targets: LatentTargets, idx: np.ndarray) -> LatentTargets:
    return LatentTargets(
        targets.z[idx],
        targets.mu[idx],
        targets.sigma_cov[idx],
        targets.metric[idx],
        targets.dec_jac[idx],
    )


def _fit(
    net: tc.Mlp,
    targets: LatentTargets,
    epochs: int,
    lr: float,
    batch_fn,
    batch_size: int,
    seed: int,
    label: str,
):
    params = tc.mlp_params(net)
    state = tc.adam_init(params, lr=lr)
    report = StageFitReport(losses=[])
    m = targets.count
    batch = min(batch_size, m) if batch_size else m
    batch_rng = stream(seed, label)
    for _ in range(epochs):
        order = batch_rng.permutation(m)
        epoch_loss = 0.0
        n_batches = 0
        for lo in range(0, m, batch):
            sub = _subset(targets, order[lo : lo + batch])
            loss, grads = batch_fn(net, sub)
            if not np.isfinite(loss):
                report.diverged = True
                return net, report
            tc.adam_step(state, params, grads)
            epoch_loss += loss
            n_batches += 1
        report.losses.append(epoch_loss / n_batches)
    return net, report


def init_drift_net(
    latent_dim: int, hidden: list[int], seed: int, targets: LatentTargets | None = None
) -> tc.Mlp:
    """Glorot net; the output bias starts at the mean drift target so the
    regression only has to fit the variation around it."""
    net = tc.mlp_init([latent_dim] + hidden + [latent_dim], stream(seed, "weights-drift"))
    if targets is not None:
        net.biases[-1][:] = targets.mu.mean(axis=0)
    return net


def init_diffusion_net(
    latent_dim: int, hidden: list[int], seed: int, targets: LatentTargets | None = None
) -> tc.Mlp:
    """Glorot net whose output bias starts at the principal square root of
    the mean covariance target.

    A zero-output start would force the optimizer to grow the entire noise
    scale within the stage budget; starting at the mean-scale factor leaves
    only the state dependence to learn, and keeps the initial factor on the
    symmetric branch that pairs well with common random numbers.
    """
    net = tc.mlp_init(
        [latent_dim] + hidden + [latent_dim * latent_dim], stream(seed, "weights-diffusion")
    )
    if targets is not None:
        mean_cov = targets.sigma_cov.mean(axis=0)
        net.biases[-1][:] = tc.sqrtm_psd(0.5 * (mean_cov + mean_cov.T)).reshape(-1)
    return net


def train_stage2(
    chart: LearnedChart,
    targets: LatentTargets,
    epochs: int,
    lr: float,
    seed: int,
    hidden: list[int] | None = None,
    net: tc.Mlp | None = None,
    batch_size: int = 0,
) -> tuple[tc.Mlp, StageFitReport]:
    """Adam regression of the drift net onto the pullback targets.

    Full batch by default (batch_size 0); mini-batching reaches a lower
    landmark loss at equal budget but the rougher field simulates worse.
    The chart is read-only here; the frozen-chart contract is asserted by
    the test suite via parameter hashes.  Pass an existing net to continue
    training instead of initializing from the seed's stream.
    """
    if net is None:
        net = init_drift_net(targets.latent_dim, hidden or [64, 64], seed, targets)
    return _fit(net, targets, epochs, lr, _drift_batch, batch_size, seed, "batching-drift")


def train_stage3(
    chart: LearnedChart,
    targets: LatentTargets,
    epochs: int,
    lr: float,
    seed: int,
    hidden: list[int] | None = None,
    net: tc.Mlp | None = None,
    batch_size: int = 0,
) -> tuple[tc.Mlp, StageFitReport]:
    """Adam regression of the diffusion factor net (full batch by default,
    see train_stage2)."""
    if net is None:
        net = init_diffusion_net(targets.latent_dim, hidden or [64, 64], seed, targets)
    return _fit(net, targets, epochs, lr, _diffusion_batch, batch_size, seed, "batching-diffusion")
