"""Ground-truth latent SDEs and their oracle ambient coefficients.

Two dynamics drive the experiments: a rotation drift with state-dependent
anisotropic diffusion, and overdamped Langevin dynamics in a rescaled
Mueller-Brown potential with three metastable wells.  Both are closed form;
oracle ambient drift/covariance fields come from pushing them through the
analytic chart.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import AmbientCoefficients, LatentCoefficients, TrueChart

# Mueller-Brown potential table (exact values, compiled in).
MB_A = np.array([-200.0, -100.0, -170.0, 15.0])
MB_SMALL_A = np.array([-1.0, -1.0, -6.5, 0.7])
MB_SMALL_B = np.array([0.0, 0.0, 11.0, 0.6])
MB_SMALL_C = np.array([-10.0, -10.0, -6.5, 0.7])
MB_X0 = np.array([1.0, 0.0, -0.5, -1.0])
MB_Y0 = np.array([0.0, 0.5, 1.5, 1.0])

# Affine rescale onto the chart domain and the energy normalization.
MB_SCALE = 2.25
MB_SHIFT_X = -0.25
MB_SHIFT_Y = 1.0
MB_V0 = 200.0
MB_KBT = 0.10


@dataclass(frozen=True)
class RotationSde:
    """Rotation drift (-v, u) with upper-triangular state-dependent diffusion."""

    def drift(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return np.stack([-z[..., 1], z[..., 0]], axis=-1)

    def diffusion(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        u, v = z[..., 0], z[..., 1]
        sig = np.zeros(z.shape[:-1] + (2, 2))
        sig[..., 0, 0] = 1.0 + u**2 / 4.0
        sig[..., 0, 1] = u + v
        sig[..., 1, 1] = 1.0 + v**2 / 4.0
        return sig

    def coeffs(self, z: np.ndarray) -> LatentCoefficients:
        return LatentCoefficients.from_factor(self.drift(z), self.diffusion(z))


@dataclass(frozen=True)
class MuellerBrownSde:
    """Overdamped Langevin in the rescaled Mueller-Brown potential.

    The potential is evaluated at (x, y) = (2.25 u - 0.25, 2.25 v + 1.0) and
    divided by 200; the drift is its exact negative gradient, with the affine
    chain-rule factor 2.25 applied explicitly.  Diffusion is sqrt(2 kBT) I.
    """

    kbt: float = MB_KBT

    def _exponentials(self, z: np.ndarray):
        z = np.asarray(z, dtype=float)
        x = MB_SCALE * z[..., 0] + MB_SHIFT_X
        y = MB_SCALE * z[..., 1] + MB_SHIFT_Y
        dx = x[..., None] - MB_X0
        dy = y[..., None] - MB_Y0
        expo = MB_A * np.exp(
            MB_SMALL_A * dx**2 + MB_SMALL_B * dx * dy + MB_SMALL_C * dy**2
        )
        return expo, dx, dy

    def potential(self, z: np.ndarray) -> np.ndarray:
        expo, _, _ = self._exponentials(z)
        return expo.sum(axis=-1) / MB_V0

    def drift(self, z: np.ndarray) -> np.ndarray:
        expo, dx, dy = self._exponentials(z)
        dv_dx = (expo * (2.0 * MB_SMALL_A * dx + MB_SMALL_B * dy)).sum(axis=-1)
        dv_dy = (expo * (2.0 * MB_SMALL_C * dy + MB_SMALL_B * dx)).sum(axis=-1)
        return np.stack([dv_dx, dv_dy], axis=-1) * (-MB_SCALE / MB_V0)

    def diffusion(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        sig = np.zeros(z.shape[:-1] + (2, 2))
        amp = np.sqrt(2.0 * self.kbt)
        sig[..., 0, 0] = amp
        sig[..., 1, 1] = amp
        return sig

    def coeffs(self, z: np.ndarray) -> LatentCoefficients:
        return LatentCoefficients.from_factor(self.drift(z), self.diffusion(z))


@dataclass(frozen=True)
class WellSet:
    """Metastable well cores in rescaled (u, v) coordinates."""

    centers: np.ndarray = field(
        default_factory=lambda: np.array(
            [[-0.137, 0.196], [0.388, -0.432], [0.089, -0.237]]
        )
    )
    r_core: float = 0.08
    n_dwell: int = 10

    def __post_init__(self):
        diffs = self.centers[:, None, :] - self.centers[None, :, :]
        dists = np.sqrt((diffs**2).sum(-1))
        np.fill_diagonal(dists, np.inf)
        if dists.min() <= 2 * self.r_core:
            raise ValueError("well cores overlap")

    def assign(self, uv: np.ndarray) -> np.ndarray:
        """Per-point core label in {0, 1, 2} or -1 outside every core."""
        uv = np.asarray(uv, dtype=float)
        d2 = ((uv[..., None, :] - self.centers) ** 2).sum(-1)
        nearest = d2.argmin(axis=-1)
        inside = np.take_along_axis(d2, nearest[..., None], axis=-1)[..., 0] <= self.r_core**2
        labels = np.where(inside, nearest, -1).astype(np.int8)
        bad = ~np.isfinite(uv).all(axis=-1)
        labels[bad] = -1
        return labels


def oracle_ambient(chart: TrueChart, sde, z: np.ndarray) -> AmbientCoefficients:
    """Exact ambient drift and (factored) covariance at one latent point."""
    from .geometry import ito_local_to_ambient

    return ito_local_to_ambient(chart, np.asarray(z, dtype=float), sde.coeffs(z))


def oracle_ambient_fields(chart: TrueChart, sde, z: np.ndarray):
    """Vectorized oracle data over a batch of latent points.

    Returns (points X (n, D), drift b (n, D), covariance factors
    (J (n, D, d), Sigma (n, d, d))).
    """
    z = np.atleast_2d(np.asarray(z, dtype=float))
    x = chart.decode(z)
    jac = chart.decoder_jacobian(z)
    mu = sde.drift(z)
    sig = sde.diffusion(z)
    sigma_cov = sig @ np.swapaxes(sig, -1, -2)
    hess = chart.decoder_hessians(z)
    q = np.einsum("niab,nab->ni", hess, sigma_cov)
    b = np.einsum("nij,nj->ni", jac, mu) + 0.5 * q
    return x, b, (jac, sigma_cov)
