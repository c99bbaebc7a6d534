import numpy as np
import pytest

from chartsde import geometry as geo
from chartsde import tensorcore as tc
from analytic import WarpedChart
from oracles import central_diff_jacobian, dense_input_hessians, random_mlp, rel_err


def make_true_chart(kind="paraboloid", k_pairs=4, seed=0):
    emb = geo.FourierEmbedding.build(k_pairs, seed) if k_pairs else None
    return geo.TrueChart(geo.MongeSurface(kind), emb)


def make_learned_chart(rng, ambient_dim=7, width=10):
    enc = random_mlp(rng, [ambient_dim, width, width, 2], scale=0.8)
    dec = random_mlp(rng, [2, width, width, ambient_dim], scale=0.8)
    return geo.LearnedChart(enc, dec)


# ---------------------------------------------------------------------------
# surfaces / embedding self-consistency
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("kind", geo.SURFACE_KINDS)
def test_surface_derivatives_match_finite_differences(kind):
    surf = geo.MongeSurface(kind)
    rng = np.random.default_rng(0)
    for z in rng.uniform(-1, 1, size=(20, 2)):
        fd_grad = central_diff_jacobian(lambda p: np.array([surf.height(p)]), z)[0]
        assert rel_err(surf.gradient(z), fd_grad) <= 1e-6
        fd_hess = central_diff_jacobian(lambda p: surf.gradient(p), z, h=1e-5)
        assert rel_err(surf.hessian(z), fd_hess) <= 1e-6


def test_true_chart_jacobian_and_hessian_match_finite_differences():
    chart = make_true_chart("quartic_dome", k_pairs=4, seed=3)
    rng = np.random.default_rng(1)
    for z in rng.uniform(-1, 1, size=(5, 2)):
        fd_jac = central_diff_jacobian(lambda p: chart.decode(p), z)
        assert rel_err(chart.decoder_jacobian(z), fd_jac) <= 1e-6
        fd_hess = central_diff_jacobian(lambda p: chart.decoder_jacobian(p), z, h=1e-5)
        assert rel_err(chart.decoder_hessians(z), fd_hess) <= 1e-5


def test_fourier_embedding_dimensions_and_sigma_min():
    chart = make_true_chart("sinusoidal", k_pairs=4, seed=7)
    assert chart.ambient_dim == 11
    big = make_true_chart("paraboloid", k_pairs=99, seed=7)
    assert big.ambient_dim == 201
    rng = np.random.default_rng(2)
    for z in rng.uniform(-1, 1, size=(20, 2)):
        assert tc.min_singular_value(chart.decoder_jacobian(z)) >= 1.0 - 1e-12
        assert tc.min_singular_value(big.decoder_jacobian(z)) >= 1.0 - 1e-12


def test_fourier_embedding_deterministic_per_seed():
    a = geo.FourierEmbedding.build(4, 11)
    b = geo.FourierEmbedding.build(4, 11)
    c = geo.FourierEmbedding.build(4, 12)
    assert np.array_equal(a.phases, b.phases)
    assert not np.array_equal(a.phases, c.phases)
    assert np.array_equal(a.freqs, c.freqs)  # frequency order is fixed


# ---------------------------------------------------------------------------
# projectors
# ---------------------------------------------------------------------------


def test_tangent_projector_identity_embedding():
    j = np.vstack([np.eye(2), np.zeros((1, 2))])
    np.testing.assert_allclose(geo.tangent_projector(j), np.diag([1.0, 1.0, 0.0]), atol=1e-14)


def test_tangent_projector_paraboloid_origin():
    chart = make_true_chart("paraboloid", k_pairs=0)
    j = chart.decoder_jacobian(np.zeros(2))
    np.testing.assert_allclose(j, np.array([[1.0, 0], [0, 1.0], [0, 0]]), atol=1e-14)
    np.testing.assert_allclose(geo.tangent_projector(j), np.diag([1.0, 1.0, 0.0]), atol=1e-14)


def test_tangent_projector_range_invariance():
    rng = np.random.default_rng(3)
    for _ in range(10):
        j = rng.standard_normal((9, 2))
        a = rng.standard_normal((2, 2)) + 2 * np.eye(2)
        p1 = geo.tangent_projector(j)
        p2 = geo.tangent_projector(j @ a)
        assert np.abs(p1 - p2).max() <= 1e-12


def test_tangent_projector_idempotent_symmetric():
    rng = np.random.default_rng(4)
    for _ in range(20):
        p = geo.tangent_projector(rng.standard_normal((11, 2)))
        assert np.linalg.norm(p @ p - p) <= 1e-10
        assert np.linalg.norm(p - p.T) <= 1e-12


def test_tangent_projector_rank_deficient_raises():
    j = np.zeros((5, 2))
    j[:, 0] = 1.0
    j[:, 1] = 2.0  # parallel columns
    with pytest.raises(ValueError):
        geo.tangent_projector(j)


def test_projector_from_covariance_diag():
    p = geo.projector_from_covariance(np.diag([2.0, 1.0, 0.0]), d=2)
    np.testing.assert_allclose(p, np.diag([1.0, 1.0, 0.0]), atol=1e-12)


def test_projector_from_covariance_matches_tangent_projector():
    rng = np.random.default_rng(5)
    chart = make_true_chart("paraboloid", k_pairs=4, seed=1)
    for _ in range(10):
        z = rng.uniform(-1, 1, 2)
        jac = chart.decoder_jacobian(z)
        m = rng.standard_normal((2, 2))
        sig = m @ m.T + 0.3 * np.eye(2)
        amb = geo.AmbientCoefficients(b=np.zeros(chart.ambient_dim), lam_factor=(jac, sig))
        p_cov = geo.projector_from_covariance(amb, d=2)
        p_tan = geo.tangent_projector(jac)
        assert np.abs(p_cov - p_tan).max() <= 1e-8


def test_projector_from_covariance_factored_matches_dense_201():
    rng = np.random.default_rng(6)
    e = rng.standard_normal((201, 2))
    m = rng.standard_normal((2, 2))
    core = m @ m.T + 0.2 * np.eye(2)
    amb = geo.AmbientCoefficients(b=np.zeros(201), lam_factor=(e, core))
    p_fac = geo.projector_from_covariance(amb, d=2)
    p_dense = geo.projector_from_covariance(e @ core @ e.T, d=2)
    assert np.abs(p_fac - p_dense).max() <= 1e-8


def test_projector_from_covariance_degenerate_gap_warns():
    with pytest.warns(RuntimeWarning):
        geo.projector_from_covariance(np.eye(3), d=2)


# ---------------------------------------------------------------------------
# Ito rules
# ---------------------------------------------------------------------------


def test_local_to_ambient_paraboloid_example():
    chart = make_true_chart("paraboloid", k_pairs=0)
    local = geo.LatentCoefficients.from_covariance(np.array([1.0, 0.0]), np.eye(2))
    amb = geo.ito_local_to_ambient(chart, np.zeros(2), local)
    np.testing.assert_allclose(amb.b, [1.0, 0.0, 2.0], atol=1e-14)
    np.testing.assert_allclose(amb.lam(), np.diag([1.0, 1.0, 0.0]), atol=1e-14)


def test_local_to_ambient_zero_coefficients():
    chart = make_true_chart("sinusoidal", k_pairs=2, seed=0)
    local = geo.LatentCoefficients.from_covariance(np.zeros(2), np.zeros((2, 2)))
    amb = geo.ito_local_to_ambient(chart, np.array([0.3, -0.2]), local)
    np.testing.assert_allclose(amb.b, 0.0, atol=1e-15)
    np.testing.assert_allclose(amb.lam(), 0.0, atol=1e-15)


def test_local_to_ambient_linear_decoder_drops_correction():
    rng = np.random.default_rng(7)
    w = rng.standard_normal((5, 2))
    dec = tc.Mlp([w], [np.zeros(5)])
    enc = tc.Mlp([rng.standard_normal((2, 5))], [np.zeros(2)])
    chart = geo.LearnedChart(enc, dec)
    mu = rng.standard_normal(2)
    m = rng.standard_normal((2, 2))
    local = geo.LatentCoefficients.from_covariance(mu, m @ m.T)
    amb = geo.ito_local_to_ambient(chart, rng.standard_normal(2), local)
    np.testing.assert_allclose(amb.b, w @ mu, atol=1e-12)


def test_ambient_to_local_round_trip_paraboloid():
    chart = make_true_chart("paraboloid", k_pairs=0)
    local = geo.LatentCoefficients.from_covariance(np.array([1.0, 0.0]), np.eye(2))
    amb = geo.ito_local_to_ambient(chart, np.zeros(2), local)
    back = geo.ito_ambient_to_local(chart, chart.decode(np.zeros(2)), amb)
    np.testing.assert_allclose(back.mu, [1.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(back.sigma_cov, np.eye(2), atol=1e-12)
    np.testing.assert_allclose(back.sigma @ back.sigma.T, back.sigma_cov, atol=1e-12)


def test_round_trip_all_surfaces_warped_chart():
    rng = np.random.default_rng(8)
    for kind in geo.SURFACE_KINDS:
        chart = WarpedChart(make_true_chart(kind, k_pairs=4, seed=2), beta=0.4)
        for _ in range(25):
            z = rng.uniform(-1, 1, 2)
            mu = rng.standard_normal(2)
            m = rng.standard_normal((2, 2))
            sig = m @ m.T + 0.2 * np.eye(2)
            local = geo.LatentCoefficients.from_covariance(mu, sig)
            amb = geo.ito_local_to_ambient(chart, z, local)
            back = geo.ito_ambient_to_local(chart, chart.decode(z), amb)
            assert np.abs(back.mu - mu).max() <= 1e-8
            assert np.abs(back.sigma_cov - sig).max() <= 1e-8


def test_ambient_to_local_identity_chart():
    # d = D with identity encoder/decoder: coefficients pass through.
    ident = tc.Mlp([np.eye(2)], [np.zeros(2)])
    chart = geo.LearnedChart(ident.copy(), ident.copy())
    rng = np.random.default_rng(9)
    b = rng.standard_normal(2)
    m = rng.standard_normal((2, 2))
    lam = m @ m.T
    amb = geo.AmbientCoefficients(b=b, lam_dense=lam)
    loc = geo.ito_ambient_to_local(chart, rng.standard_normal(2), amb)
    np.testing.assert_allclose(loc.mu, b, atol=1e-12)
    np.testing.assert_allclose(loc.sigma_cov, lam, atol=1e-12)


def test_ambient_to_local_gc_violation_warns_and_projects():
    chart = make_true_chart("paraboloid", k_pairs=0)
    x = chart.decode(np.array([0.2, -0.1]))
    lam = np.diag([1.0, 1.0, 5.0])  # normal-direction mass violates GC
    amb = geo.AmbientCoefficients(b=np.zeros(3), lam_dense=lam)
    with pytest.warns(RuntimeWarning):
        loc = geo.ito_ambient_to_local(chart, x, amb)
    assert np.isfinite(loc.sigma_cov).all()


def test_hessian_pullback_identity_warped_pairs():
    # <Lambda, encoder Hessian> == -A <Sigma, decoder Hessian> for exact
    # inverse pairs with tangential covariance.
    rng = np.random.default_rng(10)
    for kind in geo.SURFACE_KINDS:
        chart = WarpedChart(make_true_chart(kind, k_pairs=3, seed=4), beta=0.35)
        for _ in range(25):
            w = rng.uniform(-1, 1, 2)
            m = rng.standard_normal((2, 2))
            sig = m @ m.T + 0.1 * np.eye(2)
            x = chart.decode(w)
            jac = chart.decoder_jacobian(w)
            lam = jac @ sig @ jac.T
            enc_h = chart.encoder_hessians(x)
            lhs = np.einsum("jab,ab->j", enc_h, lam)
            rhs = -chart.encoder_jacobian(x) @ chart.ito_correction(w, sig)
            assert np.abs(lhs - rhs).max() <= 1e-8


# ---------------------------------------------------------------------------
# encoder pullback drift
# ---------------------------------------------------------------------------


def test_encoder_pullback_linear_encoder_drops_hessian_term():
    chart = make_true_chart("paraboloid", k_pairs=0)
    local = geo.LatentCoefficients.from_covariance(np.array([1.0, 0.0]), np.eye(2))
    amb = geo.ito_local_to_ambient(chart, np.zeros(2), local)
    mu = geo.encoder_pullback_drift(chart, chart.decode(np.zeros(2)), amb)
    np.testing.assert_allclose(mu, [1.0, 0.0], atol=1e-12)


def test_encoder_pullback_matches_dense_hessian_contraction():
    rng = np.random.default_rng(11)
    chart = make_learned_chart(rng, ambient_dim=7)
    for _ in range(10):
        x = rng.standard_normal(7) * 0.5
        e = rng.standard_normal((7, 2))
        m = rng.standard_normal((2, 2))
        core = m @ m.T + 0.1 * np.eye(2)
        b = rng.standard_normal(7)
        amb = geo.AmbientCoefficients(b=b, lam_factor=(e, core))
        got = geo.encoder_pullback_drift(chart, x, amb)
        dense_h = dense_input_hessians(chart.encoder, x)  # (2, 7, 7)
        lam = e @ core @ e.T
        expected = chart.encoder_jacobian(x) @ b + 0.5 * np.einsum(
            "jab,ab->j", dense_h, lam
        )
        assert np.abs(got - expected).max() <= 1e-10


# ---------------------------------------------------------------------------
# bias decomposition
# ---------------------------------------------------------------------------


def test_bias_terms_vanish_for_exact_inverse_pair():
    rng = np.random.default_rng(12)
    chart = WarpedChart(make_true_chart("quartic_dome", k_pairs=3, seed=5), beta=0.3)
    z = rng.uniform(-0.8, 0.8, 2)
    m = rng.standard_normal((2, 2))
    local = geo.LatentCoefficients.from_covariance(
        rng.standard_normal(2), m @ m.T + 0.2 * np.eye(2)
    )
    amb = geo.ito_local_to_ambient(chart, z, local)
    terms = geo.bias_decomposition(chart, chart.decode(z), amb)
    assert np.abs(terms.term_i).max() <= 1e-9
    assert np.abs(terms.term_ii).max() <= 1e-9
    assert np.abs(terms.term_iii).max() <= 1e-9
    assert np.abs(terms.mu_dec - terms.mu_enc).max() <= 1e-9
    assert terms.residual() <= 1e-10


def test_bias_identity_random_charts():
    rng = np.random.default_rng(13)
    for _ in range(15):
        chart = make_learned_chart(rng, ambient_dim=6, width=8)
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
        assert terms.residual() <= 1e-8 * scale


def test_bias_cycle_term_zero_for_linear_pair():
    rng = np.random.default_rng(14)
    w = rng.standard_normal((5, 2))
    dec = tc.Mlp([w], [rng.standard_normal(5)])
    enc_w = np.linalg.pinv(w)
    enc = tc.Mlp([enc_w], [-enc_w @ dec.biases[0]])
    chart = geo.LearnedChart(enc, dec)
    e = rng.standard_normal((5, 2))
    m = rng.standard_normal((2, 2))
    amb = geo.AmbientCoefficients(
        b=rng.standard_normal(5), lam_factor=(e, m @ m.T)
    )
    terms = geo.bias_decomposition(chart, rng.standard_normal(5), amb)
    assert np.abs(terms.term_ii).max() <= 1e-12


# ---------------------------------------------------------------------------
# coordinate invariance
# ---------------------------------------------------------------------------


def random_conditioned_matrix(rng, cond_max=10.0):
    q1, _ = np.linalg.qr(rng.standard_normal((2, 2)))
    q2, _ = np.linalg.qr(rng.standard_normal((2, 2)))
    smax = rng.uniform(0.5, 2.0)
    smin = smax / rng.uniform(1.0, cond_max)
    return q1 @ np.diag([smax, smin]) @ q2


def test_reparam_identity_is_exact():
    rng = np.random.default_rng(15)
    chart = make_learned_chart(rng)
    rep = geo.coordinate_reparam_check(chart, np.eye(2), rng.standard_normal((3, 2)))
    assert rep.max_dev() == 0.0


def test_reparam_scaling_by_two():
    rng = np.random.default_rng(16)
    chart = make_learned_chart(rng)
    rep = geo.coordinate_reparam_check(chart, 2 * np.eye(2), rng.standard_normal((5, 2)))
    assert rep.max_dev() <= 1e-10


def test_reparam_random_invariance():
    rng = np.random.default_rng(17)
    chart = make_learned_chart(rng)
    for i in range(10):
        a = random_conditioned_matrix(rng)
        rep = geo.coordinate_reparam_check(
            chart, a, rng.standard_normal((4, 2)), sample_seed=i
        )
        assert rep.max_dev() <= 1e-8


def test_reparam_rejects_ill_conditioned():
    rng = np.random.default_rng(18)
    chart = make_learned_chart(rng)
    with pytest.raises(ValueError):
        geo.coordinate_reparam_check(chart, np.diag([1.0, 0.01]), np.zeros((1, 2)))


# ---------------------------------------------------------------------------
# projector identity / Lipschitz lemmas
# ---------------------------------------------------------------------------


def orthonormal_complement(h):
    d_amb = h.shape[0]
    full = np.linalg.qr(np.concatenate([h, np.random.default_rng(0).standard_normal((d_amb, d_amb))], axis=1))[0]
    # columns of full beyond span(h): use projector-based construction instead
    p = h @ h.T
    resid = np.eye(d_amb) - p
    return tc.orthonormal_columns(resid)


def test_projector_frame_identities():
    rng = np.random.default_rng(19)
    for _ in range(100):
        d_amb, d_lat = 9, 2
        h1 = tc.orthonormal_columns(rng.standard_normal((d_amb, d_lat)))
        h2 = tc.orthonormal_columns(rng.standard_normal((d_amb, d_lat)))
        n1 = orthonormal_complement(h1)
        p1, p2 = h1 @ h1.T, h2 @ h2.T
        lhs = 0.5 * np.linalg.norm(p1 - p2) ** 2
        mid = d_lat - np.linalg.norm(h1.T @ h2) ** 2
        rhs = np.linalg.norm(n1.T @ h2) ** 2
        assert abs(lhs - mid) <= 1e-10
        assert abs(lhs - rhs) <= 1e-10


def test_projection_map_lipschitz_bound():
    rng = np.random.default_rng(20)
    for _ in range(100):
        x = rng.standard_normal((8, 2))
        y = x + 0.3 * rng.standard_normal((8, 2))
        s = min(tc.min_singular_value(x), tc.min_singular_value(y))
        if s < 0.2:
            continue
        lhs = np.linalg.norm(geo.tangent_projector(x) - geo.tangent_projector(y))
        rhs = np.sqrt(2.0) / s * np.linalg.norm(x - y)
        assert lhs <= rhs + 1e-12
