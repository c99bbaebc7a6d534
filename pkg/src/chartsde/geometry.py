"""Charts, embedded surfaces, tangent projectors, and the Ito conversion of
SDE coefficients between ambient and latent coordinates.

A chart pairs a decoder z -> x with an encoder x -> z.  Two implementations
share the same informal protocol: :class:`TrueChart` (closed-form Monge patch
plus Fourier embedding, linear exact encoder) and :class:`LearnedChart`
(MLP encoder/decoder whose Hessian contractions run through
Hessian-vector products).  Geometry operations are written against the
protocol so diagnostics run identically on both.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import tensorcore as tc
from .rng import stream

GC_REL_TOL = 1e-6  # geometric-consistency guard, relative to ||D decoder||_F


# ---------------------------------------------------------------------------
# surfaces and the ambient embedding
# ---------------------------------------------------------------------------

SURFACE_KINDS = ("paraboloid", "hyperbolic_paraboloid", "quartic_dome", "sinusoidal")


@dataclass(frozen=True)
class MongeSurface:
    """Closed-form graph surface (u, v) -> (u, v, f(u, v))."""

    kind: str

    def __post_init__(self):
        if self.kind not in SURFACE_KINDS:
            raise ValueError(f"unknown surface kind {self.kind!r}")

    def height(self, z: np.ndarray) -> np.ndarray:
        u, v = z[..., 0], z[..., 1]
        if self.kind == "paraboloid":
            return u**2 + v**2
        if self.kind == "hyperbolic_paraboloid":
            return u**2 - v**2
        if self.kind == "quartic_dome":
            return (u**2 + v**2) - (u**4 + v**4) / 2.0
        return np.sin(u + v)

    def gradient(self, z: np.ndarray) -> np.ndarray:
        u, v = z[..., 0], z[..., 1]
        if self.kind == "paraboloid":
            return np.stack([2 * u, 2 * v], axis=-1)
        if self.kind == "hyperbolic_paraboloid":
            return np.stack([2 * u, -2 * v], axis=-1)
        if self.kind == "quartic_dome":
            return np.stack([2 * u - 2 * u**3, 2 * v - 2 * v**3], axis=-1)
        c = np.cos(u + v)
        return np.stack([c, c], axis=-1)

    def hessian(self, z: np.ndarray) -> np.ndarray:
        u, v = z[..., 0], z[..., 1]
        shape = u.shape + (2, 2)
        h = np.zeros(shape)
        if self.kind == "paraboloid":
            h[..., 0, 0] = 2.0
            h[..., 1, 1] = 2.0
        elif self.kind == "hyperbolic_paraboloid":
            h[..., 0, 0] = 2.0
            h[..., 1, 1] = -2.0
        elif self.kind == "quartic_dome":
            h[..., 0, 0] = 2.0 - 6.0 * u**2
            h[..., 1, 1] = 2.0 - 6.0 * v**2
        else:
            s = -np.sin(u + v)
            h[..., 0, 0] = s
            h[..., 0, 1] = s
            h[..., 1, 0] = s
            h[..., 1, 1] = s
        return h


@dataclass(frozen=True)
class FourierEmbedding:
    """Smooth coordinate pairs a_k (sin, cos)(w_k . z + theta_k) appended to the
    base surface, lifting it to ambient dimension D = 3 + 2 K.

    Appending rows to the decoder Jacobian can only grow singular values, so
    the Monge-patch bound sigma_min >= 1 survives the embedding.
    """

    freqs: np.ndarray   # (K, 2)
    amps: np.ndarray    # (K,)
    phases: np.ndarray  # (K,)

    @classmethod
    def build(cls, k_pairs: int, seed: int) -> "FourierEmbedding":
        """First k integer grid frequencies by increasing order; phases seeded."""
        if k_pairs < 0:
            raise ValueError("k_pairs must be >= 0")
        grid = []
        radius = 1
        while len(grid) < k_pairs:
            grid = [
                (i, j)
                for i in range(-radius, radius + 1)
                for j in range(-radius, radius + 1)
                if (i > 0) or (i == 0 and j > 0)
            ]
            grid.sort(key=lambda p: (p[0] ** 2 + p[1] ** 2, p[0], p[1]))
            radius += 1
        freqs = np.array(grid[:k_pairs], dtype=float).reshape(k_pairs, 2)
        amps = 1.0 / (1.0 + np.sqrt((freqs**2).sum(axis=1)))
        phases = stream(seed, "fourier-phases").uniform(0.0, 2 * np.pi, size=k_pairs)
        return cls(freqs, amps, phases)

    @property
    def n_coords(self) -> int:
        return 2 * len(self.amps)

    def _angle(self, z: np.ndarray) -> np.ndarray:
        return z @ self.freqs.T + self.phases  # (..., K)

    def coords(self, z: np.ndarray) -> np.ndarray:
        t = self._angle(z)
        out = np.empty(z.shape[:-1] + (self.n_coords,))
        out[..., 0::2] = self.amps * np.sin(t)
        out[..., 1::2] = self.amps * np.cos(t)
        return out

    def jacobian(self, z: np.ndarray) -> np.ndarray:
        t = self._angle(z)
        jac = np.empty(z.shape[:-1] + (self.n_coords, 2))
        jac[..., 0::2, :] = (self.amps * np.cos(t))[..., None] * self.freqs
        jac[..., 1::2, :] = (-self.amps * np.sin(t))[..., None] * self.freqs
        return jac

    def hessians(self, z: np.ndarray) -> np.ndarray:
        t = self._angle(z)
        outer = np.einsum("ka,kb->kab", self.freqs, self.freqs)
        hess = np.empty(z.shape[:-1] + (self.n_coords, 2, 2))
        hess[..., 0::2, :, :] = (-self.amps * np.sin(t))[..., None, None] * outer
        hess[..., 1::2, :, :] = (-self.amps * np.cos(t))[..., None, None] * outer
        return hess


# ---------------------------------------------------------------------------
# charts
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrueChart:
    """Analytic embedding (u, v) -> (u, v, f(u, v), Fourier pairs...).

    The exact encoder is the linear projection onto the first two ambient
    coordinates, so encoder Hessian terms vanish identically.
    """

    surface: MongeSurface
    embedding: FourierEmbedding | None = None

    @property
    def latent_dim(self) -> int:
        return 2

    @property
    def ambient_dim(self) -> int:
        extra = self.embedding.n_coords if self.embedding is not None else 0
        return 3 + extra

    def decode(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        parts = [z, self.surface.height(z)[..., None]]
        if self.embedding is not None:
            parts.append(self.embedding.coords(z))
        return np.concatenate(parts, axis=-1)

    def encode(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float)[..., :2].copy()

    def decoder_jacobian(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        d = self.ambient_dim
        jac = np.zeros(z.shape[:-1] + (d, 2))
        jac[..., 0, 0] = 1.0
        jac[..., 1, 1] = 1.0
        jac[..., 2, :] = self.surface.gradient(z)
        if self.embedding is not None:
            jac[..., 3:, :] = self.embedding.jacobian(z)
        return jac

    def encoder_jacobian(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        d = self.ambient_dim
        jac = np.zeros(x.shape[:-1] + (2, d))
        jac[..., 0, 0] = 1.0
        jac[..., 1, 1] = 1.0
        return jac

    def decoder_hessians(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        hess = np.zeros(z.shape[:-1] + (self.ambient_dim, 2, 2))
        hess[..., 2, :, :] = self.surface.hessian(z)
        if self.embedding is not None:
            hess[..., 3:, :, :] = self.embedding.hessians(z)
        return hess

    def metric(self, z: np.ndarray) -> np.ndarray:
        # g = I + grad f grad f^T + sum_k a_k^2 w_k w_k^T: the Fourier pairs
        # contribute a constant block because sin^2 + cos^2 = 1.
        z = np.asarray(z, dtype=float)
        grad = self.surface.gradient(z)
        g = np.einsum("...a,...b->...ab", grad, grad)
        g[..., 0, 0] += 1.0
        g[..., 1, 1] += 1.0
        if self.embedding is not None:
            emb = self.embedding
            g = g + np.einsum("k,ka,kb->ab", emb.amps**2, emb.freqs, emb.freqs)
        return g

    def decoder_hessian_quadratic(self, z: np.ndarray, directions: np.ndarray) -> np.ndarray:
        hess = self.decoder_hessians(z)
        return np.einsum("ka,iab,kb->ki", directions, hess, directions)

    def encoder_hessian_quadratic(self, x: np.ndarray, directions: np.ndarray) -> np.ndarray:
        return np.zeros((np.atleast_2d(directions).shape[0], 2))

    def cycle_hessian_quadratic(self, z: np.ndarray, directions: np.ndarray) -> np.ndarray:
        # encoder o decoder is exactly the identity
        return np.zeros((np.atleast_2d(directions).shape[0], 2))

    def ito_correction(self, z: np.ndarray, sigma_cov: np.ndarray) -> np.ndarray:
        """Vector with components <sigma_cov, Hessian of decoder output i>."""
        return np.einsum("iab,ab->i", self.decoder_hessians(z), sigma_cov)


@dataclass
class LearnedChart:
    """MLP encoder (D -> d) and decoder (d -> D)."""

    encoder: tc.Mlp
    decoder: tc.Mlp

    def __post_init__(self):
        if self.encoder.n_in != self.decoder.n_out or self.encoder.n_out != self.decoder.n_in:
            raise ValueError("encoder/decoder widths are not a chart pair")

    @property
    def latent_dim(self) -> int:
        return self.decoder.n_in

    @property
    def ambient_dim(self) -> int:
        return self.decoder.n_out

    def decode(self, z: np.ndarray) -> np.ndarray:
        return tc.mlp_forward(self.decoder, z)

    def encode(self, x: np.ndarray) -> np.ndarray:
        return tc.mlp_forward(self.encoder, x)

    def decoder_jacobian(self, z: np.ndarray) -> np.ndarray:
        return tc.mlp_input_jacobian(self.decoder, z)

    def encoder_jacobian(self, x: np.ndarray) -> np.ndarray:
        return tc.mlp_input_jacobian(self.encoder, x)

    def metric(self, z: np.ndarray) -> np.ndarray:
        jac = self.decoder_jacobian(z)
        return np.swapaxes(jac, -1, -2) @ jac

    def decoder_hessian_quadratic(self, z: np.ndarray, directions: np.ndarray) -> np.ndarray:
        return tc.mlp_hvp_quadratic(self.decoder, z, directions)

    def encoder_hessian_quadratic(self, x: np.ndarray, directions: np.ndarray) -> np.ndarray:
        return tc.mlp_hvp_quadratic(self.encoder, x, directions)

    def cycle_hessian_quadratic(self, z: np.ndarray, directions: np.ndarray) -> np.ndarray:
        """Quadratic forms of the second derivative of encoder o decoder."""
        return tc.composed_hvp_quadratic(self.encoder, self.decoder, z, directions)

    def ito_correction(self, z: np.ndarray, sigma_cov: np.ndarray) -> np.ndarray:
        res = tc.sym_eig(np.asarray(sigma_cov, dtype=float))
        quad = self.decoder_hessian_quadratic(z, res.vectors.T)
        return res.values @ quad

    def copy(self) -> "LearnedChart":
        return LearnedChart(self.encoder.copy(), self.decoder.copy())


@dataclass(frozen=True)
class WarpedChart:
    """A TrueChart whose latent plane is precomposed with the triangular
    polynomial map (w1, w2) -> (w1, w2 + beta w1^2).

    The warp has a closed-form inverse, so encoder and decoder are exact
    inverses with nontrivial Hessians on both sides; this is the analytic
    nonlinear chart pair used by the diagnostic suites (the plain TrueChart
    encoder is linear and would make second-order identities vacuous).
    """

    base: TrueChart
    beta: float = 0.3

    @property
    def latent_dim(self) -> int:
        return 2

    @property
    def ambient_dim(self) -> int:
        return self.base.ambient_dim

    def _warp(self, w: np.ndarray) -> np.ndarray:
        out = np.array(w, dtype=float, copy=True)
        out[..., 1] += self.beta * out[..., 0] ** 2
        return out

    def _unwarp(self, z: np.ndarray) -> np.ndarray:
        out = np.array(z, dtype=float, copy=True)
        out[..., 1] -= self.beta * out[..., 0] ** 2
        return out

    def _d_warp(self, w: np.ndarray) -> np.ndarray:
        d = np.zeros(w.shape[:-1] + (2, 2))
        d[..., 0, 0] = 1.0
        d[..., 1, 1] = 1.0
        d[..., 1, 0] = 2.0 * self.beta * w[..., 0]
        return d

    def decode(self, w: np.ndarray) -> np.ndarray:
        return self.base.decode(self._warp(np.asarray(w, dtype=float)))

    def encode(self, x: np.ndarray) -> np.ndarray:
        return self._unwarp(self.base.encode(x))

    def decoder_jacobian(self, w: np.ndarray) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        return self.base.decoder_jacobian(self._warp(w)) @ self._d_warp(w)

    def encoder_jacobian(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        z = self.base.encode(x)
        d_inv = np.zeros(x.shape[:-1] + (2, 2))
        d_inv[..., 0, 0] = 1.0
        d_inv[..., 1, 1] = 1.0
        d_inv[..., 1, 0] = -2.0 * self.beta * z[..., 0]
        return d_inv @ self.base.encoder_jacobian(x)

    def decoder_hessians(self, w: np.ndarray) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        z = self._warp(w)
        d_warp = self._d_warp(w)
        base_h = self.base.decoder_hessians(z)
        base_j = self.base.decoder_jacobian(z)
        first = np.einsum("ca,icd,db->iab", d_warp, base_h, d_warp)
        warp_h = np.zeros((2, 2, 2))
        warp_h[1, 0, 0] = 2.0 * self.beta
        return first + np.einsum("ik,kab->iab", base_j, warp_h)

    def encoder_hessians(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        pi_jac = self.base.encoder_jacobian(x)
        inv_h = np.zeros((2, 2, 2))
        inv_h[1, 0, 0] = -2.0 * self.beta
        return np.einsum("jkl,ka,lb->jab", inv_h, pi_jac, pi_jac)

    def metric(self, w: np.ndarray) -> np.ndarray:
        jac = self.decoder_jacobian(w)
        return np.swapaxes(jac, -1, -2) @ jac

    def decoder_hessian_quadratic(self, w: np.ndarray, directions: np.ndarray) -> np.ndarray:
        hess = self.decoder_hessians(w)
        return np.einsum("ka,iab,kb->ki", directions, hess, directions)

    def encoder_hessian_quadratic(self, x: np.ndarray, directions: np.ndarray) -> np.ndarray:
        hess = self.encoder_hessians(x)
        return np.einsum("ka,iab,kb->ki", directions, hess, directions)

    def cycle_hessian_quadratic(self, w: np.ndarray, directions: np.ndarray) -> np.ndarray:
        # exact inverse pair: encoder o decoder is the identity
        return np.zeros((np.atleast_2d(directions).shape[0], 2))

    def ito_correction(self, w: np.ndarray, sigma_cov: np.ndarray) -> np.ndarray:
        return np.einsum("iab,ab->i", self.decoder_hessians(w), sigma_cov)


def reparameterize_chart(chart: LearnedChart, a_mat: np.ndarray) -> LearnedChart:
    """The chart in latent coordinates w with z = A w.

    The linear map is absorbed exactly into the decoder's first layer and the
    encoder's last layer, so the returned object is again a plain MLP pair.
    """
    a_mat = np.asarray(a_mat, dtype=float)
    new = chart.copy()
    new.decoder.weights[0] = new.decoder.weights[0] @ a_mat
    a_inv = np.linalg.inv(a_mat)
    new.encoder.weights[-1] = a_inv @ new.encoder.weights[-1]
    new.encoder.biases[-1] = a_inv @ new.encoder.biases[-1]
    return new


# ---------------------------------------------------------------------------
# SDE coefficient containers
# ---------------------------------------------------------------------------


@dataclass
class AmbientCoefficients:
    """Ambient drift b and PSD covariance of rank <= d.

    The covariance is carried factored as E @ core @ E^T whenever the
    producer knows the factor; a dense matrix is the fallback for opaque
    inputs.
    """

    b: np.ndarray
    lam_factor: tuple[np.ndarray, np.ndarray] | None = None
    lam_dense: np.ndarray | None = None

    def __post_init__(self):
        if self.lam_factor is None and self.lam_dense is None:
            raise ValueError("covariance missing: provide a factor or dense matrix")

    @property
    def ambient_dim(self) -> int:
        return self.b.shape[0]

    def lam(self) -> np.ndarray:
        if self.lam_dense is not None:
            return self.lam_dense
        e, core = self.lam_factor
        return e @ core @ e.T

    def lam_eig(self) -> tuple[np.ndarray, np.ndarray]:
        """Nonzero spectrum (values descending, vectors) of the covariance."""
        if self.lam_factor is not None:
            return tc.factored_sym_eig(*self.lam_factor)
        res = tc.sym_eig(self.lam_dense)
        return res.values, res.vectors

    def lam_apply(self, m: np.ndarray) -> np.ndarray:
        """Covariance times a (D, k) block."""
        if self.lam_factor is not None:
            e, core = self.lam_factor
            return e @ (core @ (e.T @ m))
        return self.lam_dense @ m


@dataclass
class LatentCoefficients:
    """Latent drift mu, covariance Sigma, and a factor sigma with
    sigma sigma^T = Sigma."""

    mu: np.ndarray
    sigma_cov: np.ndarray
    sigma: np.ndarray

    @classmethod
    def from_factor(cls, mu: np.ndarray, sigma: np.ndarray) -> "LatentCoefficients":
        sigma = np.asarray(sigma, dtype=float)
        return cls(np.asarray(mu, dtype=float), sigma @ sigma.T, sigma)

    @classmethod
    def from_covariance(cls, mu: np.ndarray, sigma_cov: np.ndarray) -> "LatentCoefficients":
        sigma_cov = np.asarray(sigma_cov, dtype=float)
        return cls(np.asarray(mu, dtype=float), sigma_cov, tc.sqrtm_psd(sigma_cov))


@dataclass
class BiasTerms:
    """Decomposition of the decoder-side minus encoder-side drift targets."""

    term_i: np.ndarray
    term_ii: np.ndarray
    term_iii: np.ndarray
    mu_dec: np.ndarray
    mu_enc: np.ndarray

    def residual(self) -> float:
        lhs = self.mu_dec - self.mu_enc
        rhs = self.term_i - 0.5 * self.term_ii - 0.5 * self.term_iii
        return float(np.linalg.norm(lhs - rhs))


# ---------------------------------------------------------------------------
# projectors
# ---------------------------------------------------------------------------


def tangent_projector(jac: np.ndarray) -> np.ndarray:
    """Orthogonal projector onto the column span of a full-rank D x d Jacobian."""
    jac = np.asarray(jac, dtype=float)
    smin = tc.min_singular_value(jac)
    smax = np.sqrt((jac * jac).sum())
    if smin <= 1e-12 * max(smax, 1e-300):
        raise ValueError("rank-deficient Jacobian has no tangent projector")
    h = tc.orthonormal_columns(jac)
    return h @ h.T


def projector_from_covariance(
    lam: AmbientCoefficients | np.ndarray, d: int
) -> np.ndarray:
    """Rank-d spectral projector of a PSD covariance.

    Warns when the eigengap separating the tangent from the normal spectrum
    degenerates (lam_d - lam_{d+1} <= 1e-10 lam_1).
    """
    if isinstance(lam, AmbientCoefficients):
        vals, vecs = lam.lam_eig()
        dim = lam.ambient_dim
    else:
        res = tc.sym_eig(np.asarray(lam, dtype=float))
        vals, vecs = res.values, res.vectors
        dim = vals.shape[0]
    if vals.shape[0] < d:
        raise ValueError("covariance rank below requested projector rank")
    lam_d = vals[d - 1]
    lam_next = vals[d] if vals.shape[0] > d else 0.0
    top = max(vals[0], 0.0)
    if lam_d - lam_next <= 1e-10 * max(top, 1e-300):
        warnings.warn("degenerate eigengap in covariance projector", RuntimeWarning)
    u = vecs[:, :d]
    del dim
    return u @ u.T


def covariance_frame(ambient: AmbientCoefficients, d: int) -> tuple[np.ndarray, np.ndarray]:
    """(top-d eigenvalues, orthonormal frame U_d) of the ambient covariance."""
    vals, vecs = ambient.lam_eig()
    if vals.shape[0] < d:
        raise ValueError("covariance rank below latent dimension")
    return vals[:d], vecs[:, :d]


# ---------------------------------------------------------------------------
# Ito transformation rules
# ---------------------------------------------------------------------------


def ito_local_to_ambient(chart, z: np.ndarray, local: LatentCoefficients) -> AmbientCoefficients:
    """Push latent (mu, Sigma) through the decoder at z.

    b = J mu + 0.5 q(Sigma) with q_i = <Sigma, Hessian of decoder comp i>;
    the covariance is returned factored as (J, Sigma).
    """
    jac = chart.decoder_jacobian(z)
    q = chart.ito_correction(z, local.sigma_cov)
    b = jac @ local.mu + 0.5 * q
    return AmbientCoefficients(b=b, lam_factor=(jac, local.sigma_cov))


def _gc_violation(jac: np.ndarray, ambient: AmbientCoefficients, d: int) -> bool:
    vals, vecs = ambient.lam_eig()
    top = vals[0] if vals.size else 0.0
    if top <= 0.0:
        return False  # zero covariance constrains nothing
    u = vecs[:, : min(d, vals.shape[0])]
    resid = jac - u @ (u.T @ jac)
    return np.linalg.norm(resid) > GC_REL_TOL * np.linalg.norm(jac)


def ito_ambient_to_local(chart, x: np.ndarray, ambient: AmbientCoefficients) -> LatentCoefficients:
    """Pull ambient (b, Lambda) back through the chart at x.

    Sigma = A Lambda A^T and mu = A (b - 0.5 q(Sigma)) with A the encoder
    Jacobian and q built from decoder Hessians at z = encode(x).  A
    geometric-consistency violation (range of Lambda off the tangent space)
    triggers a warning and the covariance is projected onto the tangent
    plane before use.
    """
    z = chart.encode(x)
    a = chart.encoder_jacobian(x)
    jac = chart.decoder_jacobian(z)
    d = chart.latent_dim
    if _gc_violation(jac, ambient, d):
        warnings.warn(
            "covariance range leaves the tangent space; projecting", RuntimeWarning
        )
        p = tangent_projector(jac)
        if ambient.lam_factor is not None:
            e, core = ambient.lam_factor
            ambient = AmbientCoefficients(b=ambient.b, lam_factor=(p @ e, core))
        else:
            ambient = AmbientCoefficients(b=ambient.b, lam_dense=p @ ambient.lam_dense @ p)
    if ambient.lam_factor is not None:
        e, core = ambient.lam_factor
        ae = a @ e
        sigma_cov = ae @ core @ ae.T
    else:
        sigma_cov = a @ ambient.lam_dense @ a.T
    sigma_cov = 0.5 * (sigma_cov + sigma_cov.T)
    q = chart.ito_correction(z, sigma_cov)
    mu = a @ (ambient.b - 0.5 * q)
    return LatentCoefficients.from_covariance(mu, sigma_cov)


def encoder_pullback_drift(chart, x: np.ndarray, ambient: AmbientCoefficients) -> np.ndarray:
    """Latent drift target A b + 0.5 <Lambda, encoder Hessian>.

    The Frobenius contraction runs over the covariance's nonzero spectrum,
    one Hessian-vector product per eigenvector, never touching the decoder.
    """
    a = chart.encoder_jacobian(x)
    vals, vecs = ambient.lam_eig()
    keep = np.abs(vals) > 1e-15 * max(np.abs(vals).max(initial=0.0), 1e-300)
    corr = np.zeros(chart.latent_dim)
    if np.any(keep):
        quad = chart.encoder_hessian_quadratic(x, vecs[:, keep].T)
        corr = vals[keep] @ quad
    return a @ ambient.b + 0.5 * corr


def bias_decomposition(chart, x: np.ndarray, ambient: AmbientCoefficients) -> BiasTerms:
    """Exact split of (decoder-side minus encoder-side) drift targets.

    mu_dec uses the metric pseudo-inverse g^{-1} J^T and the decoder-side
    covariance Sigma_hat; mu_enc is the encoder pullback.  The three terms
    are the pseudo-inverse/encoder gap, the cycle-Hessian bias, and the
    covariance mismatch; mu_dec - mu_enc = I - II/2 - III/2 holds exactly.

    Encoder derivatives are taken at the decoded point y = decode(encode(x)),
    the point where the second-derivative chain rule for encoder o decoder
    applies; for an imperfect chart y differs from x and evaluating at x
    would break the identity by O(reconstruction error).
    """
    z = chart.encode(x)
    jac = chart.decoder_jacobian(z)
    smin = tc.min_singular_value(jac)
    if smin <= 1e-10 * max(np.sqrt((jac * jac).sum()), 1e-300):
        raise ValueError("decoder Jacobian is rank deficient at the evaluation point")
    y = chart.decode(z)
    g = jac.T @ jac
    g_res = tc.sym_eig(g)
    g_inv = (g_res.vectors / g_res.values) @ g_res.vectors.T
    pinv = g_inv @ jac.T
    a = chart.encoder_jacobian(y)

    if ambient.lam_factor is not None:
        e, core = ambient.lam_factor
        pe = pinv @ e
        sigma_hat = pe @ core @ pe.T
    else:
        sigma_hat = pinv @ ambient.lam_dense @ pinv.T
    sigma_hat = 0.5 * (sigma_hat + sigma_hat.T)

    q_hat = chart.ito_correction(z, sigma_hat)
    drift_core = ambient.b - 0.5 * q_hat
    mu_dec = pinv @ drift_core
    mu_enc = encoder_pullback_drift(chart, y, ambient)

    term_i = (pinv - a) @ drift_core

    sh_res = tc.sym_eig(sigma_hat)
    quad_cycle = chart.cycle_hessian_quadratic(z, sh_res.vectors.T)
    term_ii = sh_res.values @ quad_cycle

    # Lambda - J Sigma_hat J^T, kept factored even when both parts are dense.
    if ambient.lam_factor is not None:
        e, core = ambient.lam_factor
        f = np.concatenate([e, jac], axis=1)
        gcore = np.zeros((f.shape[1], f.shape[1]))
        gcore[: e.shape[1], : e.shape[1]] = core
        gcore[e.shape[1]:, e.shape[1]:] = -sigma_hat
        vals3, vecs3 = tc.factored_sym_eig(f, gcore)
    else:
        diff = ambient.lam_dense - jac @ sigma_hat @ jac.T
        res3 = tc.sym_eig(0.5 * (diff + diff.T))
        vals3, vecs3 = res3.values, res3.vectors
    keep = np.abs(vals3) > 1e-14 * max(np.abs(vals3).max(initial=0.0), 1e-300)
    term_iii = np.zeros(chart.latent_dim)
    if np.any(keep):
        quad3 = chart.encoder_hessian_quadratic(y, vecs3[:, keep].T)
        term_iii = vals3[keep] @ quad3

    return BiasTerms(term_i, term_ii, term_iii, mu_dec, mu_enc)


def rho_distance(
    chart_a, chart_b, n_points: int = 2048, seed: int = 0, domain: float = 1.0
) -> float:
    """Function-space distance combining chart error and projector mismatch.

    rho^2 = mean ||decode_a - decode_b||^2 + 0.5 mean ||P_a - P_b||_F^2 over
    uniform Monte-Carlo points on the latent square; the projector term uses
    orthonormal frames so no ambient projector is materialized.
    """
    z = stream(seed, "rho-quadrature").uniform(-domain, domain, size=(n_points, 2))
    xa = chart_a.decode(z)
    xb = chart_b.decode(z)
    l2 = float(((xa - xb) ** 2).sum(axis=1).mean())
    ja = chart_a.decoder_jacobian(z)
    jb = chart_b.decoder_jacobian(z)
    d = z.shape[1]
    proj_sq = np.empty(n_points)
    for i in range(n_points):
        ha = tc.orthonormal_columns(ja[i])
        hb = tc.orthonormal_columns(jb[i])
        proj_sq[i] = 2.0 * (d - ((ha.T @ hb) ** 2).sum())
    return float(np.sqrt(l2 + 0.5 * proj_sq.mean()))


# ---------------------------------------------------------------------------
# coordinate invariance
# ---------------------------------------------------------------------------


def drift_norm_sq(g: np.ndarray, r: np.ndarray) -> float:
    """Metric-weighted squared norm r^T g r."""
    return float(r @ g @ r)


def cov_trace_sq(g: np.ndarray, delta_sigma: np.ndarray) -> float:
    """Tr((g delta_sigma)^2), the metric-weighted covariance discrepancy."""
    m = g @ delta_sigma
    return float(np.trace(m @ m))


@dataclass
class InvarianceReport:
    projector_dev: float
    drift_norm_dev: float
    cov_trace_dev: float

    def max_dev(self) -> float:
        return max(self.projector_dev, self.drift_norm_dev, self.cov_trace_dev)


def coordinate_reparam_check(
    chart: LearnedChart,
    a_mat: np.ndarray,
    z_points: np.ndarray,
    sample_seed: int = 0,
) -> InvarianceReport:
    """Compare geometric quantities across the reparameterization z = A w.

    At every point the tangent projector, the metric norm of a drift
    difference, and the metric-weighted covariance discrepancy are evaluated
    in both parameterizations; the report carries the worst deviations.
    Requires cond(A) <= 10 so the comparison stays numerically meaningful.
    """
    a_mat = np.asarray(a_mat, dtype=float)
    svals = np.sqrt(np.maximum(tc.sym_eig(a_mat.T @ a_mat).values, 0.0))
    if svals[-1] <= 0 or svals[0] / svals[-1] > 10.0 + 1e-9:
        raise ValueError("reparameterization condition number exceeds 10")
    other = reparameterize_chart(chart, a_mat)
    a_inv = np.linalg.inv(a_mat)
    rng = stream(sample_seed, "reparam-samples")
    z_points = np.atleast_2d(z_points)
    dev_p = dev_mu = dev_sig = 0.0
    for z in z_points:
        w = a_inv @ z
        j1 = chart.decoder_jacobian(z)
        j2 = other.decoder_jacobian(w)
        p1 = tangent_projector(j1)
        p2 = tangent_projector(j2)
        dev_p = max(dev_p, float(np.abs(p1 - p2).max()))
        g1 = j1.T @ j1
        g2 = j2.T @ j2
        dmu = rng.standard_normal(chart.latent_dim)
        n1 = drift_norm_sq(g1, dmu)
        n2 = drift_norm_sq(g2, a_inv @ dmu)
        dev_mu = max(dev_mu, abs(n1 - n2) / max(abs(n1), 1e-12))
        m = rng.standard_normal((chart.latent_dim, chart.latent_dim))
        dsig = m @ m.T - 0.5 * np.eye(chart.latent_dim)
        t1 = cov_trace_sq(g1, dsig)
        t2 = cov_trace_sq(g2, a_inv @ dsig @ a_inv.T)
        dev_sig = max(dev_sig, abs(t1 - t2) / max(abs(t1), 1e-12))
    return InvarianceReport(dev_p, dev_mu, dev_sig)
