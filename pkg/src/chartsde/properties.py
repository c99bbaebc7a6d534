"""Runtime invariant suite: every exact identity the library is built on,
checked on randomized instances with fixed seeds.

Each check returns (name, passed, detail).  The CLI's `test-properties` verb
runs the whole suite and exits nonzero on any failure; the acceptance tests
reuse the same checks so there is a single source of truth for the
identities.
"""

from __future__ import annotations

import numpy as np

from . import chart_training as ct
from . import dynamics as dyn
from . import evaluate as ev
from . import geometry as geo
from . import simulate as sim
from . import tensorcore as tc

Check = tuple[str, bool, str]


def _random_net(rng, widths, scale=1.0) -> tc.Mlp:
    weights = [
        scale * rng.standard_normal((o, i)) / np.sqrt(i)
        for i, o in zip(widths[:-1], widths[1:])
    ]
    biases = [0.3 * scale * rng.standard_normal(o) for o in widths[1:]]
    return tc.Mlp(weights, biases)


def _dense_hessians(net: tc.Mlp, x: np.ndarray) -> np.ndarray:
    """Dense layer-propagated input Hessians; the independent counterpart of
    the forward-over-reverse HVP route."""
    n_in = net.n_in
    jac = np.eye(n_in)
    hess = np.zeros((n_in, n_in, n_in))
    h = np.asarray(x, dtype=float)
    last = net.n_layers - 1
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = w @ h + b
        jz = w @ jac
        hz = np.einsum("ab,bij->aij", w, hess)
        if l < last:
            h = np.tanh(z)
            d1 = 1.0 - h**2
            d2 = -2.0 * h * d1
            jac = d1[:, None] * jz
            hess = d1[:, None, None] * hz + d2[:, None, None] * np.einsum(
                "ai,aj->aij", jz, jz
            )
        else:
            h, jac, hess = z, jz, hz
    return hess


def _fd_jacobian(f, x, h=1e-5):
    cols = []
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * h))
    return np.stack(cols, axis=-1)


# ---------------------------------------------------------------------------
# checks
# ---------------------------------------------------------------------------


def check_ito_round_trip(tol: float = 1e-8, points_per_surface: int = 100) -> Check:
    """Pull back the pushforward of latent coefficients: identity on (mu, Sigma)."""
    rng = np.random.default_rng(100)
    worst = 0.0
    for kind in geo.SURFACE_KINDS:
        chart = geo.WarpedChart(
            geo.TrueChart(geo.MongeSurface(kind), geo.FourierEmbedding.build(4, 7)),
            beta=0.35,
        )
        for _ in range(points_per_surface):
            z = rng.uniform(-1, 1, 2)
            mu = rng.standard_normal(2)
            m = rng.standard_normal((2, 2))
            sig = m @ m.T + 0.2 * np.eye(2)
            local = geo.LatentCoefficients.from_covariance(mu, sig)
            amb = geo.ito_local_to_ambient(chart, z, local)
            back = geo.ito_ambient_to_local(chart, chart.decode(z), amb)
            worst = max(
                worst,
                float(np.abs(back.mu - mu).max()),
                float(np.abs(back.sigma_cov - sig).max()),
            )
    return ("ito_round_trip", worst <= tol, f"max deviation {worst:.3e} (tol {tol:g})")


def check_trace_form_equivalence(tol: float = 1e-10, n_cases: int = 100) -> Check:
    """Trace-form tangent loss equals the dense half projector distance."""
    rng = np.random.default_rng(101)
    worst = 0.0
    for dim in (11, 201):
        for _ in range(n_cases):
            jac = rng.standard_normal((dim, 2))
            frame = tc.orthonormal_columns(rng.standard_normal((dim, 2)))
            got = ct.tangent_loss_trace_form(jac, frame)
            g = jac.T @ jac
            p_hat = jac @ np.linalg.solve(g, jac.T)
            dense = 0.5 * np.linalg.norm(p_hat - frame @ frame.T) ** 2
            worst = max(worst, abs(got - dense))
    return ("trace_form_equivalence", worst <= tol, f"max |trace - dense| {worst:.3e}")


def check_bias_identity(tol: float = 1e-8, n_charts: int = 50) -> Check:
    """Decoder-minus-encoder drift target equals its three-term split."""
    rng = np.random.default_rng(102)
    worst = 0.0
    for k in range(n_charts):
        chart = geo.LearnedChart(
            _random_net(rng, [6, 8, 8, 2], scale=0.8),
            _random_net(rng, [2, 8, 8, 6], scale=0.8),
        )
        x = 0.5 * rng.standard_normal(6)
        e = rng.standard_normal((6, 2))
        m = rng.standard_normal((2, 2))
        amb = geo.AmbientCoefficients(
            b=rng.standard_normal(6), lam_factor=(e, m @ m.T + 0.1 * np.eye(2))
        )
        terms = geo.bias_decomposition(chart, x, amb)
        scale = max(
            1.0,
            float(np.linalg.norm(terms.term_i)),
            float(np.linalg.norm(terms.term_ii)),
            float(np.linalg.norm(terms.term_iii)),
        )
        worst = max(worst, terms.residual() / scale)
    return ("bias_identity", worst <= tol, f"max scaled residual {worst:.3e}")


def check_coordinate_invariance(tol: float = 1e-8, n_maps: int = 50) -> Check:
    """Projector, metric drift norm, and covariance trace are unchanged under
    latent reparameterizations with condition <= 10."""
    rng = np.random.default_rng(103)
    chart = geo.LearnedChart(
        _random_net(rng, [7, 10, 10, 2], scale=0.8),
        _random_net(rng, [2, 10, 10, 7], scale=0.8),
    )
    worst = 0.0
    for k in range(n_maps):
        q1, _ = np.linalg.qr(rng.standard_normal((2, 2)))
        q2, _ = np.linalg.qr(rng.standard_normal((2, 2)))
        smax = rng.uniform(0.5, 2.0)
        a = q1 @ np.diag([smax, smax / rng.uniform(1.0, 10.0)]) @ q2
        rep = geo.coordinate_reparam_check(
            chart, a, rng.standard_normal((3, 2)), sample_seed=k
        )
        worst = max(worst, rep.max_dev())
    return ("coordinate_invariance", worst <= tol, f"max deviation {worst:.3e}")


def check_frame_identities(tol: float = 1e-10, n_cases: int = 500) -> Check:
    """Half projector distance equals d - ||H1^T H2||^2 equals ||N1^T H2||^2."""
    rng = np.random.default_rng(104)
    worst = 0.0
    for _ in range(n_cases):
        h1 = tc.orthonormal_columns(rng.standard_normal((9, 2)))
        h2 = tc.orthonormal_columns(rng.standard_normal((9, 2)))
        n1 = tc.orthonormal_columns(np.eye(9) - h1 @ h1.T)
        lhs = 0.5 * np.linalg.norm(h1 @ h1.T - h2 @ h2.T) ** 2
        mid = 2 - np.linalg.norm(h1.T @ h2) ** 2
        rhs = np.linalg.norm(n1.T @ h2) ** 2
        worst = max(worst, abs(lhs - mid), abs(lhs - rhs))
    return ("projector_frame_identities", worst <= tol, f"max deviation {worst:.3e}")


def check_projection_lipschitz(n_cases: int = 500) -> Check:
    """||P(X) - P(Y)||_F <= sqrt(2)/s ||X - Y||_F on well-conditioned pairs."""
    rng = np.random.default_rng(105)
    ok = True
    margin = np.inf
    tested = 0
    for _ in range(n_cases):
        x = rng.standard_normal((8, 2))
        y = x + 0.3 * rng.standard_normal((8, 2))
        s = min(tc.min_singular_value(x), tc.min_singular_value(y))
        if s < 0.2:
            continue
        tested += 1
        lhs = np.linalg.norm(geo.tangent_projector(x) - geo.tangent_projector(y))
        rhs = np.sqrt(2.0) / s * np.linalg.norm(x - y)
        margin = min(margin, rhs - lhs)
        ok &= lhs <= rhs + 1e-12
    return (
        "projection_lipschitz",
        ok and tested > 300,
        f"{tested} pairs, min slack {margin:.3e}",
    )


def check_hessian_pullback_identity(tol: float = 1e-8, n_cases: int = 100) -> Check:
    """<Lambda, Hess encoder> = -(D encoder)<Sigma, Hess decoder> for exact
    inverse analytic pairs with tangential covariance."""
    rng = np.random.default_rng(106)
    worst = 0.0
    for kind in geo.SURFACE_KINDS:
        chart = geo.WarpedChart(
            geo.TrueChart(geo.MongeSurface(kind), geo.FourierEmbedding.build(3, 9)),
            beta=0.35,
        )
        for _ in range(n_cases // 4):
            w = rng.uniform(-1, 1, 2)
            m = rng.standard_normal((2, 2))
            sig = m @ m.T + 0.1 * np.eye(2)
            x = chart.decode(w)
            jac = chart.decoder_jacobian(w)
            lam = jac @ sig @ jac.T
            lhs = np.einsum("jab,ab->j", chart.encoder_hessians(x), lam)
            rhs = -chart.encoder_jacobian(x) @ chart.ito_correction(w, sig)
            worst = max(worst, float(np.abs(lhs - rhs).max()))
    return ("hessian_pullback_identity", worst <= tol, f"max deviation {worst:.3e}")


def check_rho_triangle(n_triples: int = 8) -> Check:
    """Triangle inequality of the chart distance on random chart triples."""
    rng = np.random.default_rng(107)
    ok = True
    min_slack = np.inf
    for k in range(n_triples):
        charts = [
            geo.LearnedChart(
                _random_net(rng, [5, 8, 2], scale=0.7),
                _random_net(rng, [2, 8, 5], scale=0.7),
            )
            for _ in range(3)
        ]
        d01 = geo.rho_distance(charts[0], charts[1], n_points=512, seed=k)
        d12 = geo.rho_distance(charts[1], charts[2], n_points=512, seed=k)
        d02 = geo.rho_distance(charts[0], charts[2], n_points=512, seed=k)
        slack = d01 + d12 - d02
        min_slack = min(min_slack, slack)
        ok &= slack >= -1e-12
    return ("rho_triangle_inequality", ok, f"min slack {min_slack:.3e}")


def check_autodiff_finite_differences(tol: float = 1e-5, n_nets: int = 50) -> Check:
    """Jacobian, HVP, and parameter gradients against central differences."""
    rng = np.random.default_rng(108)
    worst = 0.0
    for _ in range(n_nets):
        net = _random_net(rng, [3, 8, 2])
        x = rng.standard_normal(3)
        fd_jac = _fd_jacobian(lambda v: tc.mlp_forward(net, v), x)
        jac = tc.mlp_input_jacobian(net, x)
        worst = max(worst, np.abs(jac - fd_jac).max() / max(1.0, np.abs(fd_jac).max()))

        v = rng.standard_normal(3)
        h = 1e-5
        fd_hvp = (
            tc.mlp_input_jacobian(net, x + h * v) - tc.mlp_input_jacobian(net, x - h * v)
        ) / (2 * h)
        hvp = tc.mlp_input_hvp_full(net, x, v)
        worst = max(worst, np.abs(hvp - fd_hvp).max() / max(1.0, np.abs(fd_hvp).max()))

        seed_vec = rng.standard_normal(2)
        grads = tc.mlp_param_gradient(net, x, seed_vec)
        p = net.weights[0]
        idx = (rng.integers(p.shape[0]), rng.integers(p.shape[1]))
        keep = p[idx]
        hp = 1e-6
        p[idx] = keep + hp
        hi = float(seed_vec @ tc.mlp_forward(net, x))
        p[idx] = keep - hp
        lo = float(seed_vec @ tc.mlp_forward(net, x))
        p[idx] = keep
        fd = (hi - lo) / (2 * hp)
        worst = max(worst, abs(grads[0][idx] - fd) / max(1.0, abs(fd)))
    return ("autodiff_vs_finite_differences", worst <= tol, f"max rel err {worst:.3e}")


def check_stage1_gradient(tol: float = 1e-4) -> Check:
    """Full Stage-1 objective gradient against finite differences."""
    rng = np.random.default_rng(109)
    pts = rng.standard_normal((4, 5)) * 0.4
    e = rng.standard_normal((4, 5, 2))
    frames = np.stack([tc.orthonormal_columns(e[i]) for i in range(4)])
    marks = ct.LandmarkSet(
        pts,
        rng.standard_normal((4, 5)),
        e,
        np.broadcast_to(np.eye(2), (4, 2, 2)).copy(),
        frames,
        np.ones((4, 2)),
    )
    chart = geo.LearnedChart(
        _random_net(rng, [5, 8, 8, 2], scale=0.7),
        _random_net(rng, [2, 8, 8, 5], scale=0.7),
    )
    cfg = ct.PenaltyConfig("T+F", 1.0, 1.0, 0.01)
    grads = ct.stage1_loss_gradient(chart, marks, cfg)
    params = tc.mlp_params(chart.encoder) + tc.mlp_params(chart.decoder)
    h = 1e-6
    worst = 0.0
    for p, g in zip(params, grads):
        it = np.nditer(p, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            keep = p[idx]
            p[idx] = keep + h
            hi = ct.stage1_loss(chart, marks, cfg)
            p[idx] = keep - h
            lo = ct.stage1_loss(chart, marks, cfg)
            p[idx] = keep
            fd = (hi - lo) / (2 * h)
            denom = max(1.0, abs(fd))
            worst = max(worst, abs(g[idx] - fd) / denom)
            it.iternext()
    return ("stage1_gradient_vs_fd", worst <= tol, f"max rel err {worst:.3e}")


def check_hvp_contraction(tol: float = 1e-10, n_cases: int = 25) -> Check:
    """Spectral HVP contraction of <Lambda, encoder Hessian> equals the dense
    Hessian contraction."""
    rng = np.random.default_rng(110)
    worst = 0.0
    for _ in range(n_cases):
        net = _random_net(rng, [6, 9, 7, 2], scale=0.8)
        chart = geo.LearnedChart(net, _random_net(rng, [2, 9, 7, 6], scale=0.8))
        x = 0.5 * rng.standard_normal(6)
        e = rng.standard_normal((6, 2))
        m = rng.standard_normal((2, 2))
        core = m @ m.T + 0.1 * np.eye(2)
        b = rng.standard_normal(6)
        amb = geo.AmbientCoefficients(b=b, lam_factor=(e, core))
        got = geo.encoder_pullback_drift(chart, x, amb)
        dense = _dense_hessians(net, x)
        lam = e @ core @ e.T
        want = chart.encoder_jacobian(x) @ b + 0.5 * np.einsum("jab,ab->j", dense, lam)
        worst = max(worst, float(np.abs(got - want).max()))
    return ("hvp_contraction_vs_dense", worst <= tol, f"max deviation {worst:.3e}")


def check_mfpt_mechanics() -> Check:
    """Deterministic radial passage, dwell-confirmed scans, and bitwise-zero
    CRN error for identical models."""
    details = []
    ok = True

    # radial: speed v reaches radius r at time r/v up to one step
    dt, horizon = 0.1, 3.0
    speeds = np.array([0.8, 1.7])
    t_axis = np.arange(int(horizon / dt) + 1) * dt
    radii = speeds[:, None] * t_axis[None, :]
    ens = sim.TrajectoryEnsemble(
        dt=dt,
        n_steps=len(t_axis) - 1,
        censored=np.zeros(2, dtype=bool),
        exit_fraction=0.0,
        radii=radii,
    )
    rep = ev.radial_mfpt(ens, ens, radius=1.0)
    expect = np.mean([1.0 / 0.8, 1.0 / 1.7])
    ok &= abs(rep.gt_mfpt - expect) <= dt
    details.append(f"radial err {abs(rep.gt_mfpt - expect):.3e} (<= dt)")

    # dwell scan hand traces
    ok &= ev.scan_passages(np.array([0, 0, -1] + [1] * 10), 10) == [(0, 1, 3)]
    ok &= ev.scan_passages(np.array([0, 0] + [1] * 9 + [-1]), 10) == []

    # CRN: identical models, bitwise-equal passage statistics
    chart = geo.TrueChart(geo.MongeSurface("paraboloid"), geo.FourierEmbedding.build(2, 3))
    sde = dyn.RotationSde()
    cfg = sim.SimConfig(dt=0.01, horizon=1.0, n_traj=32, seed=5)
    z0 = np.random.default_rng(6).uniform(-0.5, 0.5, size=(32, 2))
    e1 = sim.simulate_ground_truth(chart, sde, z0, cfg, sim.NoiseBank(cfg.seed), track_radii=True)
    e2 = sim.simulate_ground_truth(chart, sde, z0, cfg, sim.NoiseBank(cfg.seed), track_radii=True)
    crn = ev.radial_mfpt(e1, e2, radius=1.0)
    ok &= crn.rel_error == 0.0
    details.append(f"crn rel err {crn.rel_error}")
    return ("mfpt_mechanics", bool(ok), "; ".join(details))


def check_dynamics_invariants() -> Check:
    """Conservative MB drift, tangential oracle covariances, SPD rotation noise."""
    ok = True
    details = []
    sde = dyn.MuellerBrownSde()
    rng = np.random.default_rng(111)
    h = 1e-5
    curl = 0.0
    for z in rng.uniform(-0.6, 0.6, size=(25, 2)):
        d1 = (sde.drift(z + [0, h])[0] - sde.drift(z - [0, h])[0]) / (2 * h)
        d2 = (sde.drift(z + [h, 0])[1] - sde.drift(z - [h, 0])[1]) / (2 * h)
        curl = max(curl, abs(d1 - d2))
    ok &= curl <= 1e-5
    details.append(f"mb curl {curl:.2e}")

    chart = geo.TrueChart(geo.MongeSurface("quartic_dome"), geo.FourierEmbedding.build(4, 5))
    rot = dyn.RotationSde()
    gc_worst = 0.0
    for z in rng.uniform(-1, 1, size=(20, 2)):
        amb = dyn.oracle_ambient(chart, rot, z)
        p = geo.tangent_projector(chart.decoder_jacobian(z))
        lam = amb.lam()
        gc_worst = max(
            gc_worst,
            np.linalg.norm(lam - p @ lam @ p) / max(np.linalg.norm(lam), 1e-300),
        )
    ok &= gc_worst <= 1e-10
    details.append(f"oracle tangency {gc_worst:.2e}")

    axis = np.linspace(-1, 1, 50)
    uu, vv = np.meshgrid(axis, axis)
    grid = np.stack([uu.ravel(), vv.ravel()], axis=-1)
    sig = rot.diffusion(grid)
    cov = sig @ np.swapaxes(sig, -1, -2)
    lam_min = tc.eigvals_2x2_batch(cov)[1].min()
    ok &= lam_min > 0
    details.append(f"rotation min eig {lam_min:.3f}")
    return ("dynamics_invariants", bool(ok), "; ".join(details))


def check_projector_idempotency(n_cases: int = 100) -> Check:
    rng = np.random.default_rng(112)
    worst_idem = worst_sym = 0.0
    for _ in range(n_cases):
        p = geo.tangent_projector(rng.standard_normal((11, 2)))
        worst_idem = max(worst_idem, np.linalg.norm(p @ p - p))
        worst_sym = max(worst_sym, np.linalg.norm(p - p.T))
    ok = worst_idem <= 1e-10 and worst_sym <= 1e-12
    return ("projector_idempotency", ok, f"idem {worst_idem:.2e}, sym {worst_sym:.2e}")


ALL_CHECKS = (
    check_ito_round_trip,
    check_trace_form_equivalence,
    check_bias_identity,
    check_coordinate_invariance,
    check_frame_identities,
    check_projection_lipschitz,
    check_hessian_pullback_identity,
    check_rho_triangle,
    check_autodiff_finite_differences,
    check_stage1_gradient,
    check_hvp_contraction,
    check_mfpt_mechanics,
    check_dynamics_invariants,
    check_projector_idempotency,
)


def run_property_suite(verbose: bool = True) -> int:
    """Run every check; returns the number of failures (0 means all pass)."""
    failures = 0
    for check in ALL_CHECKS:
        name, ok, detail = check()
        failures += not ok
        if verbose:
            print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return failures
