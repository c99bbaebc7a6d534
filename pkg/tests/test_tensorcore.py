import numpy as np
import pytest

from chartsde import tensorcore as tc
from oracles import (
    central_diff_jacobian,
    dense_input_hessians,
    fd_param_gradient,
    mlp_forward_looped,
    numpy_eigh_desc,
    random_mlp,
    rel_err,
)


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------


def test_forward_zero_weights_returns_last_bias():
    rng = np.random.default_rng(0)
    net = tc.mlp_init([3, 8, 2], rng)
    for w in net.weights:
        w[:] = 0.0
    net.biases[0][:] = rng.standard_normal(8)
    net.biases[1][:] = [0.7, -1.2]
    out = tc.mlp_forward(net, rng.standard_normal(3))
    np.testing.assert_allclose(out, [0.7, -1.2], rtol=0, atol=0)


def test_forward_scalar_chain_is_tanh():
    net = tc.Mlp([np.array([[1.0]]), np.array([[1.0]])], [np.zeros(1), np.zeros(1)])
    assert tc.mlp_forward(net, np.array([0.0]))[0] == 0.0
    x = np.array([0.3])
    np.testing.assert_allclose(tc.mlp_forward(net, x)[0], np.tanh(0.3), atol=1e-15)


def test_forward_matches_looped_reevaluation():
    rng = np.random.default_rng(1)
    net = random_mlp(rng, [3, 8, 2])
    for _ in range(5):
        x = rng.standard_normal(3)
        np.testing.assert_allclose(
            tc.mlp_forward(net, x), mlp_forward_looped(net, x), atol=1e-14
        )


def test_forward_batch_matches_per_sample():
    rng = np.random.default_rng(2)
    net = random_mlp(rng, [4, 6, 3])
    xs = rng.standard_normal((7, 4))
    batch = tc.mlp_forward(net, xs)
    for i in range(7):
        np.testing.assert_allclose(batch[i], tc.mlp_forward(net, xs[i]), atol=1e-15)


def test_forward_dimension_mismatch_raises():
    net = tc.mlp_init([3, 4, 2], np.random.default_rng(0))
    with pytest.raises(ValueError):
        tc.mlp_forward(net, np.zeros(5))


# ---------------------------------------------------------------------------
# input Jacobian
# ---------------------------------------------------------------------------


def test_jacobian_of_linear_layer_is_weight_matrix():
    rng = np.random.default_rng(3)
    w = rng.standard_normal((4, 3))
    net = tc.Mlp([w], [rng.standard_normal(4)])
    np.testing.assert_allclose(tc.mlp_input_jacobian(net, rng.standard_normal(3)), w)


def test_jacobian_scalar_symbolic():
    w = 1.37
    net = tc.Mlp([np.array([[w]]), np.array([[1.0]])], [np.zeros(1), np.zeros(1)])
    x = np.array([0.41])
    expected = w * (1 - np.tanh(w * 0.41) ** 2)
    np.testing.assert_allclose(tc.mlp_input_jacobian(net, x)[0, 0], expected, atol=1e-14)


def test_jacobian_matches_finite_differences():
    rng = np.random.default_rng(4)
    for _ in range(10):
        net = random_mlp(rng, [3, 8, 2])
        x = rng.standard_normal(3)
        fd = central_diff_jacobian(lambda v: tc.mlp_forward(net, v), x)
        assert rel_err(tc.mlp_input_jacobian(net, x), fd) <= 1e-6


# ---------------------------------------------------------------------------
# Hessian-vector products
# ---------------------------------------------------------------------------


def test_hvp_linear_net_is_zero():
    rng = np.random.default_rng(5)
    net = tc.Mlp([rng.standard_normal((3, 4))], [rng.standard_normal(3)])
    v = rng.standard_normal(4)
    for j in range(3):
        np.testing.assert_allclose(tc.mlp_input_hvp(net, rng.standard_normal(4), j, v), 0.0)


def test_hvp_scalar_symbolic():
    w = 0.9
    net = tc.Mlp([np.array([[w]]), np.array([[1.0]])], [np.zeros(1), np.zeros(1)])
    x = np.array([0.6])
    t = np.tanh(w * 0.6)
    expected = -2.0 * t * (1 - t**2) * w**2
    got = tc.mlp_input_hvp(net, x, 0, np.array([1.0]))
    np.testing.assert_allclose(got[0], expected, atol=1e-14)


def test_hvp_matches_jacobian_finite_differences():
    rng = np.random.default_rng(6)
    h = 1e-5
    for _ in range(5):
        net = random_mlp(rng, [3, 8, 8, 2])
        x = rng.standard_normal(3)
        v = rng.standard_normal(3)
        fd = (
            tc.mlp_input_jacobian(net, x + h * v)
            - tc.mlp_input_jacobian(net, x - h * v)
        ) / (2 * h)
        for j in range(2):
            assert rel_err(tc.mlp_input_hvp(net, x, j, v), fd[j]) <= 1e-5


def test_hvp_is_linear_in_direction():
    rng = np.random.default_rng(7)
    net = random_mlp(rng, [4, 6, 3])
    x = rng.standard_normal(4)
    v1, v2 = rng.standard_normal(4), rng.standard_normal(4)
    for j in range(3):
        lhs = tc.mlp_input_hvp(net, x, j, v1 + v2)
        rhs = tc.mlp_input_hvp(net, x, j, v1) + tc.mlp_input_hvp(net, x, j, v2)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_hvp_full_and_quadratic_match_dense_hessians():
    rng = np.random.default_rng(8)
    net = random_mlp(rng, [3, 7, 5, 2])
    x = rng.standard_normal(3)
    dense = dense_input_hessians(net, x)
    v = rng.standard_normal(3)
    np.testing.assert_allclose(
        tc.mlp_input_hvp_full(net, x, v), dense @ v, atol=1e-12
    )
    vs = rng.standard_normal((4, 3))
    quad = tc.mlp_hvp_quadratic(net, x, vs)
    expected = np.einsum("ki,jil,kl->kj", vs, dense, vs)
    np.testing.assert_allclose(quad, expected, atol=1e-12)


def test_hvp_out_of_range_output_raises():
    net = tc.mlp_init([2, 4, 2], np.random.default_rng(0))
    with pytest.raises(ValueError):
        tc.mlp_input_hvp(net, np.zeros(2), 2, np.ones(2))


def test_composed_hvp_matches_finite_differences():
    rng = np.random.default_rng(9)
    inner = random_mlp(rng, [2, 6, 4])
    outer = random_mlp(rng, [4, 5, 2])
    x = rng.standard_normal(2)
    v = rng.standard_normal(2)

    def comp(z):
        return tc.mlp_forward(outer, tc.mlp_forward(inner, z))

    h = 1e-5
    jac = lambda z: central_diff_jacobian(comp, z, h=1e-6)
    fd_h_v = (jac(x + h * v) - jac(x - h * v)) / (2 * h)
    quad = tc.composed_hvp_quadratic(outer, inner, x, v[None, :])
    np.testing.assert_allclose(quad[0], fd_h_v @ v, rtol=2e-4, atol=1e-6)


# ---------------------------------------------------------------------------
# parameter gradients
# ---------------------------------------------------------------------------


def test_param_gradient_zero_seed():
    rng = np.random.default_rng(10)
    net = random_mlp(rng, [3, 5, 2])
    grads = tc.mlp_param_gradient(net, rng.standard_normal(3), np.zeros(2))
    assert all(np.all(g == 0) for g in grads)


def test_param_gradient_single_linear_layer():
    rng = np.random.default_rng(11)
    net = tc.Mlp([rng.standard_normal((2, 3))], [rng.standard_normal(2)])
    x = rng.standard_normal(3)
    s = rng.standard_normal(2)
    gw, gb = tc.mlp_param_gradient(net, x, s)
    np.testing.assert_allclose(gw, np.outer(s, x), atol=1e-15)
    np.testing.assert_allclose(gb, s, atol=1e-15)


def test_param_gradient_matches_finite_differences():
    rng = np.random.default_rng(12)
    for _ in range(3):
        net = random_mlp(rng, [3, 6, 2])
        x = rng.standard_normal(3)
        s = rng.standard_normal(2)
        exact = tc.mlp_param_gradient(net, x, s)
        fd = fd_param_gradient(net, x, s)
        for a, b in zip(exact, fd):
            assert rel_err(a, b) <= 1e-6


# ---------------------------------------------------------------------------
# value+Jacobian joint reverse mode
# ---------------------------------------------------------------------------


def _vj_scalar_loss(net, x, gy, gj):
    y, j, _ = tc.mlp_value_jacobian(net, x[None, :])
    return float((gy * y[0]).sum() + (gj * j[0]).sum())


def test_vj_backward_matches_finite_differences():
    rng = np.random.default_rng(13)
    net = random_mlp(rng, [3, 6, 2])
    x = rng.standard_normal(3)
    gy = rng.standard_normal(2)
    gj = rng.standard_normal((2, 3))
    _, _, cache = tc.mlp_value_jacobian(net, x[None, :])
    grads, dx = tc.mlp_vj_backward(net, cache, gy[None, :], gj[None, :, :])

    h = 1e-6
    for p, g in zip(tc.mlp_params(net), grads):
        it = np.nditer(p, flags=["multi_index"])
        fd = np.zeros_like(p)
        while not it.finished:
            idx = it.multi_index
            keep = p[idx]
            p[idx] = keep + h
            hi = _vj_scalar_loss(net, x, gy, gj)
            p[idx] = keep - h
            lo = _vj_scalar_loss(net, x, gy, gj)
            p[idx] = keep
            fd[idx] = (hi - lo) / (2 * h)
            it.iternext()
        assert rel_err(g, fd) <= 1e-6

    fd_x = central_diff_jacobian(
        lambda v: np.array([_vj_scalar_loss(net, v, gy, gj)]), x, h=1e-6
    )[0]
    assert rel_err(dx[0], fd_x) <= 1e-6


def test_vj_backward_batch_sums_samples():
    rng = np.random.default_rng(14)
    net = random_mlp(rng, [3, 5, 2])
    xs = rng.standard_normal((4, 3))
    gy = rng.standard_normal((4, 2))
    gj = rng.standard_normal((4, 2, 3))
    _, _, cache = tc.mlp_value_jacobian(net, xs)
    grads, dx = tc.mlp_vj_backward(net, cache, gy, gj)
    acc = [np.zeros_like(g) for g in grads]
    for i in range(4):
        _, _, ci = tc.mlp_value_jacobian(net, xs[i][None, :])
        gi, dxi = tc.mlp_vj_backward(net, ci, gy[i][None, :], gj[i][None, :, :])
        np.testing.assert_allclose(dxi[0], dx[i], atol=1e-13)
        for a, b in zip(acc, gi):
            a += b
    for a, b in zip(acc, grads):
        np.testing.assert_allclose(a, b, atol=1e-12)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


def test_adam_zero_gradient_keeps_params():
    rng = np.random.default_rng(15)
    params = [rng.standard_normal((3, 2)), rng.standard_normal(3)]
    before = [p.copy() for p in params]
    state = tc.adam_init(params, lr=0.1)
    tc.adam_step(state, params, [np.zeros_like(p) for p in params])
    for p, b in zip(params, before):
        np.testing.assert_array_equal(p, b)
    assert state.step == 1


def test_adam_first_step_is_sign_scaled():
    g = np.array([0.3, -2.0, 1e-4])
    params = [np.zeros(3)]
    state = tc.adam_init(params, lr=0.01)
    tc.adam_step(state, params, [g.copy()])
    expected = -0.01 * g / (np.abs(g) + 1e-8)
    np.testing.assert_allclose(params[0], expected, rtol=1e-12)


def test_adam_descends_quadratic():
    # Independent scripted descent on f(w) = w^2 confirms both the bound and
    # that the implementation reproduces the textbook recursion exactly.
    w_ref, m, v = 1.0, 0.0, 0.0
    lr, b1, b2, eps = 0.05, 0.9, 0.999, 1e-8
    for t in range(1, 101):
        g = 2 * w_ref
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w_ref -= lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
    assert abs(w_ref) < 0.5

    params = [np.array([1.0])]
    state = tc.adam_init(params, lr=0.05)
    for _ in range(100):
        tc.adam_step(state, params, [2 * params[0]])
    np.testing.assert_allclose(params[0][0], w_ref, atol=1e-12)


def test_adam_shape_mismatch_raises():
    params = [np.zeros(3)]
    state = tc.adam_init(params, lr=0.1)
    with pytest.raises(ValueError):
        tc.adam_step(state, params, [np.zeros(4)])


# ---------------------------------------------------------------------------
# symmetric eigensolvers
# ---------------------------------------------------------------------------


def test_sym_eig_diagonal():
    res = tc.sym_eig(np.diag([3.0, 1.0, 0.0]))
    np.testing.assert_allclose(res.values, [3.0, 1.0, 0.0], atol=1e-14)
    np.testing.assert_allclose(np.abs(res.vectors), np.eye(3), atol=1e-12)


def test_sym_eig_2x2_hand_solved():
    res = tc.sym_eig(np.array([[2.0, 1.0], [1.0, 2.0]]))
    np.testing.assert_allclose(res.values, [3.0, 1.0], atol=1e-14)


def test_sym_eig_low_rank_psd_201():
    rng = np.random.default_rng(16)
    v = rng.standard_normal((201, 2))
    a = v @ v.T
    res = tc.sym_eig(a)
    assert res.values[2] <= 1e-8 * res.values[0]
    np.testing.assert_allclose(res.vectors.T @ res.vectors, np.eye(201), atol=1e-10)
    recon = (res.vectors * res.values) @ res.vectors.T
    assert np.linalg.norm(recon - a) <= 1e-8 * np.linalg.norm(a)


def test_sym_eig_random_against_numpy():
    rng = np.random.default_rng(17)
    for n in (2, 5, 11, 30):
        m = rng.standard_normal((n, n))
        a = m + m.T
        res = tc.sym_eig(a)
        vals_np, _ = numpy_eigh_desc(a)
        np.testing.assert_allclose(res.values, vals_np, atol=1e-10 * n)
        assert np.all(np.diff(res.values) <= 1e-12)
        np.testing.assert_allclose(res.vectors.T @ res.vectors, np.eye(n), atol=1e-10)
        recon = (res.vectors * res.values) @ res.vectors.T
        assert np.linalg.norm(recon - a) <= 1e-8 * np.linalg.norm(a)


def test_sym_eig_rejects_asymmetric():
    with pytest.raises(ValueError):
        tc.sym_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_factored_sym_eig_matches_dense():
    rng = np.random.default_rng(18)
    e = rng.standard_normal((201, 2))
    core = rng.standard_normal((2, 2))
    core = core @ core.T
    vals, vecs = tc.factored_sym_eig(e, core)
    dense = e @ core @ e.T
    vals_np, vecs_np = numpy_eigh_desc(dense)
    np.testing.assert_allclose(vals, vals_np[:2], rtol=1e-10, atol=1e-10)
    recon = (vecs * vals) @ vecs.T
    assert np.linalg.norm(recon - dense) <= 1e-8 * np.linalg.norm(dense)


def test_factored_sym_eig_indefinite_core():
    rng = np.random.default_rng(19)
    e = rng.standard_normal((11, 4))
    core = rng.standard_normal((4, 4))
    core = 0.5 * (core + core.T)
    vals, vecs = tc.factored_sym_eig(e, core)
    dense = e @ core @ e.T
    recon = (vecs * vals) @ vecs.T
    assert np.linalg.norm(recon - dense) <= 1e-10 * max(np.linalg.norm(dense), 1)


# ---------------------------------------------------------------------------
# min singular value / misc small-matrix helpers
# ---------------------------------------------------------------------------


def test_min_singular_value_monge_patch_at_least_one():
    rng = np.random.default_rng(20)
    for _ in range(20):
        df = rng.standard_normal((1, 2))
        j = np.vstack([np.eye(2), df])
        assert tc.min_singular_value(j) >= 1.0 - 1e-12


def test_min_singular_value_identity_embedding():
    j = np.vstack([np.eye(2), np.zeros((3, 2))])
    assert abs(tc.min_singular_value(j) - 1.0) <= 1e-14


def test_min_singular_value_against_numpy():
    rng = np.random.default_rng(21)
    for cols in (1, 2, 3, 5):
        for _ in range(10):
            j = rng.standard_normal((12, cols))
            exact = np.sqrt(numpy_eigh_desc(j.T @ j)[0][-1])
            assert rel_err(tc.min_singular_value(j), exact) <= 1e-10


def test_sqrtm_psd_2x2():
    rng = np.random.default_rng(22)
    for _ in range(20):
        m = rng.standard_normal((2, 2))
        s = m @ m.T
        r = tc.sqrtm_psd(s)
        np.testing.assert_allclose(r @ r.T, s, atol=1e-12)
        np.testing.assert_allclose(r, r.T, atol=1e-12)
        assert tc.sym_eig(r).values[-1] >= -1e-12
    np.testing.assert_allclose(tc.sqrtm_psd(np.zeros((2, 2))), np.zeros((2, 2)))


def test_inv_2x2_psd_batch_plain_and_clamped():
    rng = np.random.default_rng(23)
    m = rng.standard_normal((30, 2, 2))
    g = np.einsum("nij,nkj->nik", m, m) + 0.1 * np.eye(2)
    inv = tc.inv_2x2_psd_batch(g)
    np.testing.assert_allclose(np.einsum("nij,njk->nik", g, inv),
                               np.broadcast_to(np.eye(2), (30, 2, 2)), atol=1e-10)
    degenerate = np.array([[[1.0, 0.0], [0.0, 0.0]]])
    inv_d = tc.inv_2x2_psd_batch(degenerate, floor=1e-10)
    assert np.isfinite(inv_d).all()
    np.testing.assert_allclose(inv_d[0, 0, 0], 1.0, atol=1e-12)


def test_kernels_are_pure():
    rng = np.random.default_rng(24)
    net = random_mlp(rng, [3, 6, 2])
    x = rng.standard_normal(3)
    assert np.array_equal(tc.mlp_forward(net, x), tc.mlp_forward(net, x))
    a = rng.standard_normal((5, 5))
    a = a + a.T
    r1, r2 = tc.sym_eig(a), tc.sym_eig(a)
    assert np.array_equal(r1.values, r2.values)
    assert np.array_equal(r1.vectors, r2.vectors)
