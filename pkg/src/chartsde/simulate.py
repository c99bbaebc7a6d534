"""Euler-Maruyama integration with common random numbers, trajectory
censoring, and greedy metric delta-net landmark sampling.

The noise bank is counter-based: every trajectory owns a Philox stream keyed
by (noise key, trajectory index), and Gaussian increments come from
Box-Muller applied to that stream's uniforms.  Identical (seed, trajectory,
step) coordinates therefore produce identical increments for every consumer,
at any parallelism or generation order, which is what lets a ground-truth /
learned simulator pair share Brownian paths.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .rng import derived_key, stream

CENSOR_BOX = ((-1.0, 1.0), (-1.0, 1.0))  # decoded (u, v) domain


@dataclass(frozen=True)
class SimConfig:
    """Time grid and ensemble size for one simulation protocol."""

    dt: float
    horizon: float
    n_traj: int
    seed: int

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        steps = self.horizon / self.dt
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ValueError("horizon must be an integral number of steps")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))


class NoiseBank:
    """Replayable Gaussian increment streams, one per trajectory index."""

    def __init__(self, seed: int):
        self.key = derived_key(seed, "noise-bank")

    def gaussians(self, traj: int, n_steps: int, dim: int) -> np.ndarray:
        """The (n_steps, dim) increment block for one trajectory."""
        bit_gen = np.random.Philox(key=np.array([self.key, traj], dtype=np.uint64))
        u = np.random.Generator(bit_gen).random((2, n_steps, dim))
        # 1 - u lies in (0, 1], keeping the log finite.
        return np.sqrt(-2.0 * np.log1p(-u[0])) * np.cos(2.0 * np.pi * u[1])

    def gaussian_block(self, trajs: np.ndarray, n_steps: int, dim: int) -> np.ndarray:
        return np.stack([self.gaussians(int(t), n_steps, dim) for t in trajs])


def euler_maruyama(
    coeff_fn, z0: np.ndarray, dt: float, n_steps: int, increments: np.ndarray
) -> np.ndarray:
    """Single-path explicit scheme z_{k+1} = z + mu dt + sigma sqrt(dt) dW_k.

    coeff_fn maps a state (d,) to (mu (d,), sigma (d, d)).  Non-finite states
    propagate; the remaining path is filled with NaN for censoring downstream.
    """
    z0 = np.asarray(z0, dtype=float)
    if not np.isfinite(z0).all():
        raise ValueError("initial state must be finite")
    path = np.empty((n_steps + 1, z0.shape[0]))
    path[0] = z0
    root_dt = np.sqrt(dt)
    z = z0.copy()
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n_steps):
            mu, sig = coeff_fn(z)
            z = z + np.asarray(mu) * dt + np.asarray(sig) @ (root_dt * increments[k])
            if not np.isfinite(z).all():
                path[k + 1 :] = np.nan
                return path
            path[k + 1] = z
    return path


@dataclass
class TrajectoryEnsemble:
    """Paths plus the derived per-step observables the metrics need.

    Censored trajectories (decoded (u, v) ever outside the box, or any
    non-finite value) carry well label -1 at every step and are excluded
    from all passage statistics.  first_exit_step records when the censor
    predicate first fired (n_steps + 1 when it never did), so observables
    resolved before the exit, like a radial passage, can still count.
    """

    dt: float
    n_steps: int
    censored: np.ndarray                  # (n,) bool
    exit_fraction: float
    radii: np.ndarray | None = None       # (n, n_steps + 1) ambient distance from own start
    labels: np.ndarray | None = None      # (n, n_steps + 1) int8 well labels
    latent: np.ndarray | None = None      # (n, n_steps + 1, d) when kept
    first_exit_step: np.ndarray | None = None  # (n,) int

    @property
    def n_traj(self) -> int:
        return self.censored.shape[0]

    @property
    def horizon(self) -> float:
        return self.dt * self.n_steps


def run_ensemble(
    coeff_fn,
    decode_fn,
    z0: np.ndarray,
    cfg: SimConfig,
    bank: NoiseBank,
    *,
    wells=None,
    track_radii: bool = False,
    keep_latent: bool = False,
    censor_box=CENSOR_BOX,
    chunk: int = 512,
) -> TrajectoryEnsemble:
    """Integrate an ensemble in latent coordinates, decoding every step.

    coeff_fn maps states (n, d) to (mu (n, d), sigma (n, d, d)); decode_fn
    maps (n, d) to ambient (n, D).  Censoring, well labels, and radii are all
    computed from the decoded path, so ground-truth and learned ensembles
    receive the same treatment.
    """
    z0 = np.atleast_2d(np.asarray(z0, dtype=float))
    n, d = z0.shape
    if n != cfg.n_traj:
        raise ValueError("initial-condition count must match cfg.n_traj")
    n_steps = cfg.n_steps
    (u_lo, u_hi), (v_lo, v_hi) = censor_box

    censored = np.zeros(n, dtype=bool)
    first_exit = np.full(n, n_steps + 1, dtype=np.int64)
    radii = np.zeros((n, n_steps + 1)) if track_radii else None
    labels = np.full((n, n_steps + 1), -1, dtype=np.int8) if wells is not None else None
    latent = np.full((n, n_steps + 1, d), np.nan) if keep_latent else None
    root_dt = np.sqrt(cfg.dt)

    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        idx = np.arange(lo, hi)
        dw = bank.gaussian_block(idx, n_steps, d)
        z = z0[lo:hi].copy()
        x = decode_fn(z)
        x_start = x.copy()
        alive = np.ones(hi - lo, dtype=bool)
        exit_step = np.full(hi - lo, n_steps + 1, dtype=np.int64)

        def observe(k, z_now, x_now):
            uv = x_now[:, :2]
            finite = np.isfinite(x_now).all(axis=1) & np.isfinite(z_now).all(axis=1)
            inside = (
                (uv[:, 0] >= u_lo) & (uv[:, 0] <= u_hi)
                & (uv[:, 1] >= v_lo) & (uv[:, 1] <= v_hi)
            )
            bad_now = ~(finite & inside) & (exit_step > n_steps)
            exit_step[bad_now] = k
            if radii is not None:
                with np.errstate(invalid="ignore"):
                    radii[idx, k] = np.sqrt(((x_now - x_start) ** 2).sum(axis=1))
            if labels is not None:
                labels[idx, k] = wells.assign(uv)
            if latent is not None:
                latent[idx, k] = z_now

        observe(0, z, x)
        # post-exit states may legitimately overflow before the alive mask
        # retires them; those paths are already censored
        with np.errstate(over="ignore", invalid="ignore"):
            for k in range(n_steps):
                if alive.any():
                    za = z[alive]
                    mu, sig = coeff_fn(za)
                    step = mu * cfg.dt + np.einsum("nij,nj->ni", sig, dw[alive, k]) * root_dt
                    z[alive] = za + step
                    dead_now = ~np.isfinite(z).all(axis=1)
                    alive &= ~dead_now
                x = np.full_like(x_start, np.nan)
                if alive.any():
                    x[alive] = decode_fn(z[alive])
                observe(k + 1, z, x)
        first_exit[idx] = exit_step
        censored[idx] = exit_step <= n_steps

    if labels is not None:
        labels[censored] = -1
    return TrajectoryEnsemble(
        dt=cfg.dt,
        n_steps=n_steps,
        censored=censored,
        exit_fraction=float(censored.mean()) if n else 0.0,
        radii=radii,
        labels=labels,
        latent=latent,
        first_exit_step=first_exit,
    )


def simulate_ground_truth(
    chart, sde, z0: np.ndarray, cfg: SimConfig, bank: NoiseBank, **kw
) -> TrajectoryEnsemble:
    """Reference dynamics integrated in the true local coordinates."""

    def coeffs(z):
        return sde.drift(z), sde.diffusion(z)

    return run_ensemble(coeffs, chart.decode, z0, cfg, bank, **kw)


def simulate_learned(
    chart, drift_net, diff_net, x0: np.ndarray, cfg: SimConfig, bank: NoiseBank, **kw
) -> TrajectoryEnsemble:
    """Learned latent SDE integrated from encoded ambient initial conditions."""
    from .tensorcore import mlp_forward

    d = chart.latent_dim

    def coeffs(z):
        mu = mlp_forward(drift_net, z)
        sig = mlp_forward(diff_net, z).reshape(-1, d, d)
        return mu, sig

    z0 = chart.encode(np.atleast_2d(np.asarray(x0, dtype=float)))
    return run_ensemble(coeffs, chart.decode, z0, cfg, bank, **kw)


# ---------------------------------------------------------------------------
# optional binary path dump (debugging aid, off by default)
# ---------------------------------------------------------------------------

_DUMP_MAGIC = b"CSDE"
_DUMP_VERSION = 1


def write_path_dump(path, latent: np.ndarray) -> None:
    """Flat little-endian float64 dump of latent paths with a small header:
    magic, version, n_traj, n_steps, d."""
    latent = np.asarray(latent, dtype="<f8")
    if latent.ndim != 3:
        raise ValueError("expected paths of shape (n_traj, n_steps + 1, d)")
    n_traj, n_plus_1, dim = latent.shape
    header = np.array([_DUMP_VERSION, n_traj, n_plus_1 - 1, dim], dtype="<u8")
    with open(path, "wb") as fh:
        fh.write(_DUMP_MAGIC)
        fh.write(header.tobytes())
        fh.write(latent.tobytes())


def read_path_dump(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _DUMP_MAGIC:
            raise ValueError("not a path dump file")
        version, n_traj, n_steps, dim = np.frombuffer(fh.read(32), dtype="<u8")
        if version != _DUMP_VERSION:
            raise ValueError(f"unsupported dump version {version}")
        data = np.frombuffer(fh.read(), dtype="<f8")
    return data.reshape(int(n_traj), int(n_steps) + 1, int(dim))


# ---------------------------------------------------------------------------
# landmark sampling
# ---------------------------------------------------------------------------


def _greedy_net(
    cand: np.ndarray, metric_fn, delta: float, g_lower: float
) -> np.ndarray:
    """Greedy acceptance: keep a candidate iff its metric distance to every
    accepted point exceeds delta, the metric evaluated at pair midpoints.

    Pairs whose Euclidean gap already exceeds delta / sqrt(lower metric
    bound) skip the metric evaluation; the prefilter distances are computed
    blockwise against the accepted set to keep the scan fast.
    """
    n = len(cand)
    buf = np.empty_like(cand)
    count = 0
    gate2 = delta**2 / g_lower
    sep2 = delta**2
    block = 512
    for lo in range(0, n, block):
        blk = cand[lo : lo + block]
        pre = count
        d2_pre = (
            ((blk[:, None, :] - buf[None, :pre, :]) ** 2).sum(-1)
            if pre
            else np.empty((len(blk), 0))
        )
        for i in range(len(blk)):
            p = blk[i]
            near = []
            if pre:
                mask = d2_pre[i] <= gate2
                if mask.any():
                    near.append(buf[:pre][mask])
            if count > pre:
                fresh = buf[pre:count]
                dd = ((fresh - p) ** 2).sum(-1)
                if (dd <= gate2).any():
                    near.append(fresh[dd <= gate2])
            if near:
                close = np.concatenate(near, axis=0)
                g_mid = metric_fn(0.5 * (close + p))
                diff = p - close
                dist2 = np.einsum("ni,nij,nj->n", diff, g_mid, diff)
                if not np.all(dist2 > sep2):
                    continue
            buf[count] = p
            count += 1
    return buf[:count].copy()


def delta_net_landmarks(
    metric_fn,
    bounds: tuple[tuple[float, float], tuple[float, float]],
    n_target: int,
    pool_seed: int,
    *,
    g_lower: float = 1.0,
    tol_frac: float = 0.10,
    max_iters: int = 60,
    return_delta: bool = False,
):
    """Greedy metric delta-net whose size lands within +/-10% of n_target.

    A fixed uniform candidate pool of max(10000, 100 n_target) points is
    scanned greedily; the separation delta is found by bisection.  metric_fn
    maps (m, 2) points to (m, 2, 2) metric tensors; g_lower is a lower bound
    on its eigenvalues (1 for the embedded Monge patches), used only to
    prefilter pairs by Euclidean distance.
    """
    if n_target < 2:
        raise ValueError("need at least two landmarks")
    rng = stream(pool_seed, "landmark-pool")
    (u_lo, u_hi), (v_lo, v_hi) = bounds
    pool = max(10_000, 100 * n_target)
    cand = np.column_stack(
        [rng.uniform(u_lo, u_hi, size=pool), rng.uniform(v_lo, v_hi, size=pool)]
    )
    # Warm-start the bisection bracket from the Riemannian area: a net of
    # separation delta packs roughly area / delta^2 points.
    g_sample = metric_fn(cand[:256])
    det = g_sample[:, 0, 0] * g_sample[:, 1, 1] - g_sample[:, 0, 1] * g_sample[:, 1, 0]
    area = (u_hi - u_lo) * (v_hi - v_lo) * float(np.sqrt(np.maximum(det, 0.0)).mean())
    delta_mid = np.sqrt(area / n_target)
    delta_lo, delta_hi = delta_mid / 8.0, delta_mid * 8.0

    lo_count = int(np.ceil((1 - tol_frac) * n_target - 1e-9))
    hi_count = int(np.floor((1 + tol_frac) * n_target + 1e-9))

    def done(pts, delta):
        return (pts, float(delta)) if return_delta else pts

    best = None
    best_delta = float("nan")
    best_gap = np.inf
    for _ in range(max_iters):
        delta = np.sqrt(delta_lo * delta_hi)
        pts = _greedy_net(cand, metric_fn, delta, g_lower)
        m = len(pts)
        gap = abs(m - n_target)
        if gap < best_gap:
            best, best_delta, best_gap = pts, delta, gap
        if lo_count <= m <= hi_count:
            return done(pts, delta)
        if m > n_target:
            delta_lo = delta
        else:
            delta_hi = delta
        if delta_hi / delta_lo < 1.0 + 1e-9:
            break
    # Greedy counts step discontinuously in delta, so the bracket can pinch
    # around a jump that straddles the window; a fine scan usually recovers
    # a window hit before falling back to the closest achievable size.
    center = np.sqrt(delta_lo * delta_hi)
    for factor in np.linspace(0.75, 1.3, 23):
        delta = center * factor
        pts = _greedy_net(cand, metric_fn, delta, g_lower)
        m = len(pts)
        if lo_count <= m <= hi_count:
            return done(pts, delta)
        if abs(m - n_target) < best_gap:
            best, best_delta, best_gap = pts, delta, abs(m - n_target)
    warnings.warn(
        f"delta-net search settled at {len(best)} landmarks for target {n_target}",
        RuntimeWarning,
    )
    return done(best, best_delta)
