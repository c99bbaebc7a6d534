"""Self-contained numerical kernels: symmetric eigensolvers and a small
feedforward-network engine with exact derivatives.

Everything operates on dense, row-major float64 numpy arrays.  The network
engine implements tanh MLPs (identity output layer) and provides, without
any autodiff framework:

* batched forward evaluation,
* exact input Jacobians via the layer-wise chain rule,
* reverse-mode parameter gradients,
* forward-over-reverse Hessian-vector products, and
* joint reverse mode through the (value, Jacobian) pair, which is what
  chart training needs to differentiate Jacobian-dependent penalties.

The symmetric eigensolver is a cyclic Jacobi iteration so the package does
not depend on an external eigen routine; closed-form 2x2/3x3 paths cover
the small matrices that dominate the hot loops.

All kernels are pure: identical inputs give bit-identical outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# ---------------------------------------------------------------------------
# MLP
# ---------------------------------------------------------------------------


@dataclass
class Mlp:
    """Fully connected net, tanh on hidden layers, identity output.

    weights[l] has shape (width_{l+1}, width_l); biases[l] has shape
    (width_{l+1},).
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def n_in(self) -> int:
        return self.weights[0].shape[1]

    @property
    def n_out(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def widths(self) -> list[int]:
        return [self.n_in] + [w.shape[0] for w in self.weights]

    def copy(self) -> "Mlp":
        return Mlp([w.copy() for w in self.weights], [b.copy() for b in self.biases])


def mlp_init(widths: list[int], rng: np.random.Generator) -> Mlp:
    """Glorot-uniform weights, zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Mlp(weights, biases)


def mlp_params(net: Mlp) -> list[np.ndarray]:
    """Flat list of parameter arrays (views, so in-place updates hit the net)."""
    out: list[np.ndarray] = []
    for w, b in zip(net.weights, net.biases):
        out.append(w)
        out.append(b)
    return out


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return x[None, :], True
    return x, False


def mlp_forward(net: Mlp, x: np.ndarray) -> np.ndarray:
    """Evaluate the net; x is (n_in,) or (n, n_in)."""
    X, single = _as_batch(x)
    if X.shape[1] != net.n_in:
        raise ValueError(f"input width {X.shape[1]} != {net.n_in}")
    h = X
    last = net.n_layers - 1
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w.T + b
        h = np.tanh(z) if l < last else z
    return h[0] if single else h


def _forward_activations(net: Mlp, X: np.ndarray) -> list[np.ndarray]:
    """Post-activation values per level; hs[0] is the input, hs[-1] the output."""
    hs = [X]
    last = net.n_layers - 1
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = hs[-1] @ w.T + b
        hs.append(np.tanh(z) if l < last else z)
    return hs


def mlp_param_gradient(
    net: Mlp, x: np.ndarray, seed: np.ndarray
) -> list[np.ndarray]:
    """Gradients of seed . output w.r.t. every parameter (summed over batch).

    Returned in the same order as :func:`mlp_params`.
    """
    X, _ = _as_batch(x)
    S, _ = _as_batch(seed)
    if S.shape != (X.shape[0], net.n_out):
        raise ValueError("seed shape must match (batch, n_out)")
    hs = _forward_activations(net, X)
    grads: list[np.ndarray] = [np.empty(0)] * (2 * net.n_layers)
    delta = S
    for l in range(net.n_layers - 1, -1, -1):
        grads[2 * l] = delta.T @ hs[l]
        grads[2 * l + 1] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ net.weights[l]) * (1.0 - hs[l] ** 2)
    return grads


@dataclass
class _VjCache:
    hs: list[np.ndarray]          # (n, w_l) post-activation, levels 0..L
    js: list[np.ndarray]          # (n, w_l, n_in) post-activation Jacobian, levels 0..L
    jzs: list[np.ndarray | None]  # (n, w_{l+1}, n_in) pre-activation Jacobian per layer


def mlp_value_jacobian(
    net: Mlp, x: np.ndarray
) -> tuple[np.ndarray, np.ndarray, _VjCache]:
    """Batched value and input Jacobian.

    Returns (Y (n, n_out), J (n, n_out, n_in), cache); the cache feeds
    :func:`mlp_vj_backward`.
    """
    X, _ = _as_batch(x)
    n = X.shape[0]
    if X.shape[1] != net.n_in:
        raise ValueError(f"input width {X.shape[1]} != {net.n_in}")
    h = X
    j = np.broadcast_to(np.eye(net.n_in), (n, net.n_in, net.n_in)).copy()
    hs, js, jzs = [h], [j], []
    last = net.n_layers - 1
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w.T + b
        jz = np.matmul(w, j)
        if l < last:
            h = np.tanh(z)
            j = (1.0 - h**2)[:, :, None] * jz
        else:
            h = z
            j = jz
        hs.append(h)
        js.append(j)
        jzs.append(jz)
    return hs[-1], js[-1], _VjCache(hs, js, jzs)


def mlp_vj_backward(
    net: Mlp, cache: _VjCache, d_value: np.ndarray, d_jac: np.ndarray | None
) -> tuple[list[np.ndarray], np.ndarray]:
    """Reverse pass through the (value, Jacobian) computation.

    d_value (n, n_out) and d_jac (n, n_out, n_in) are the loss adjoints of
    the outputs of :func:`mlp_value_jacobian`.  Returns (param gradients in
    :func:`mlp_params` order summed over batch, adjoint of the input X).
    The input-identity Jacobian seed is constant, so only the value path
    contributes to the input adjoint.
    """
    hs, js, jzs = cache.hs, cache.js, cache.jzs
    n, n_in = hs[0].shape
    if d_jac is None:
        d_jac = np.zeros((n, net.n_out, n_in))
    d_h = np.asarray(d_value, dtype=float)
    d_j = np.asarray(d_jac, dtype=float)
    grads: list[np.ndarray] = [np.empty(0)] * (2 * net.n_layers)
    last = net.n_layers - 1
    for l in range(net.n_layers - 1, -1, -1):
        if l == last:
            d_z = d_h
            d_jz = d_j
        else:
            h_out = hs[l + 1]
            d_act = 1.0 - h_out**2
            # Jacobian path enters the activation derivative diag(1-h^2).
            curve = np.sum(d_j * jzs[l], axis=2) * (-2.0 * h_out * d_act)
            d_z = d_h * d_act + curve
            d_jz = d_act[:, :, None] * d_j
        grads[2 * l] = d_z.T @ hs[l] + np.einsum("nai,nbi->ab", d_jz, js[l])
        grads[2 * l + 1] = d_z.sum(axis=0)
        d_h = d_z @ net.weights[l]
        d_j = np.matmul(net.weights[l].T, d_jz)
    return grads, d_h


def mlp_input_jacobian(net: Mlp, x: np.ndarray) -> np.ndarray:
    """Input Jacobian; (n_out, n_in) for a single x, (n, n_out, n_in) batched."""
    X, single = _as_batch(x)
    _, J, _ = mlp_value_jacobian(net, X)
    return J[0] if single else J


# -- forward-over-reverse Hessian-vector products ---------------------------


@dataclass
class _DualCache:
    hs: list[np.ndarray]    # (w_l,) post-activation
    hds: list[np.ndarray]   # (k, w_l) activation tangents per direction
    zds: list[np.ndarray | None]  # (k, w_{l+1}) pre-activation tangents


def mlp_dual_forward(
    net: Mlp, x: np.ndarray, directions: np.ndarray
) -> tuple[np.ndarray, np.ndarray, _DualCache]:
    """Forward pass carrying tangents along k input directions.

    x is (n_in,), directions is (k, n_in).  Returns (y, y_dot (k, n_out),
    cache for :func:`mlp_dual_backward`).
    """
    x = np.asarray(x, dtype=float)
    V = np.atleast_2d(np.asarray(directions, dtype=float))
    if x.shape != (net.n_in,) or V.shape[1] != net.n_in:
        raise ValueError("dimension mismatch")
    h, hd = x, V
    hs, hds, zds = [h], [hd], []
    last = net.n_layers - 1
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = w @ h + b
        zd = hd @ w.T
        if l < last:
            h = np.tanh(z)
            hd = zd * (1.0 - h**2)
        else:
            h = z
            hd = zd
        hs.append(h)
        hds.append(hd)
        zds.append(zd)
    return hs[-1], hds[-1], _DualCache(hs, hds, zds)


def mlp_dual_backward(
    net: Mlp, cache: _DualCache, seed: np.ndarray, seed_dot: np.ndarray | None
) -> tuple[np.ndarray, np.ndarray]:
    """Reverse pass with dual numbers from a dual forward pass.

    seed is (m, n_out); seed_dot is (k, m, n_out) or None for zero.  Returns
    (g (m, n_in), g_dot (k, m, n_in)) where g rows are input gradients of
    seed[m] . output and g_dot carries their directional derivatives.
    """
    hs, zds = cache.hs, cache.zds
    seed = np.atleast_2d(np.asarray(seed, dtype=float))
    k = cache.hds[0].shape[0]
    m = seed.shape[0]
    g = seed
    gd = (
        np.zeros((k, m, net.n_out))
        if seed_dot is None
        else np.asarray(seed_dot, dtype=float)
    )
    last = net.n_layers - 1
    for l in range(net.n_layers - 1, -1, -1):
        if l == last:
            u, ud = g, gd
        else:
            h = hs[l + 1]
            d_act = 1.0 - h**2
            dd = -2.0 * h * d_act * cache.zds[l]  # (k, w) tangent of diag(1-h^2)
            u = g * d_act
            ud = gd * d_act + g[None, :, :] * dd[:, None, :]
        g = u @ net.weights[l]
        gd = ud @ net.weights[l]
    return g, gd


def mlp_input_hvp(
    net: Mlp, x: np.ndarray, out_index: int, v: np.ndarray
) -> np.ndarray:
    """(Hessian of output component out_index) @ v, without forming the Hessian."""
    if not 0 <= out_index < net.n_out:
        raise ValueError("out_index out of range")
    _, _, cache = mlp_dual_forward(net, x, np.asarray(v, dtype=float)[None, :])
    seed = np.zeros((1, net.n_out))
    seed[0, out_index] = 1.0
    _, gd = mlp_dual_backward(net, cache, seed, None)
    return gd[0, 0]


def mlp_input_hvp_full(net: Mlp, x: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rows (Hessian of output j) @ v for every output j; shape (n_out, n_in)."""
    _, _, cache = mlp_dual_forward(net, x, np.asarray(v, dtype=float)[None, :])
    _, gd = mlp_dual_backward(net, cache, np.eye(net.n_out), None)
    return gd[0]


def mlp_hvp_quadratic(net: Mlp, x: np.ndarray, directions: np.ndarray) -> np.ndarray:
    """Q[m, j] = directions[m] . (Hessian of output j) @ directions[m].

    One dual forward pass shared by all k directions, one batched reverse.
    """
    V = np.atleast_2d(np.asarray(directions, dtype=float))
    _, _, cache = mlp_dual_forward(net, x, V)
    _, gd = mlp_dual_backward(net, cache, np.eye(net.n_out), None)
    return np.einsum("kji,ki->kj", gd, V)


def composed_hvp_quadratic(
    outer: Mlp, inner: Mlp, x: np.ndarray, directions: np.ndarray
) -> np.ndarray:
    """Quadratic Hessian forms of the composition outer(inner(x)).

    Q[m, j] = v_m . (Hessian of (outer o inner)^j)(x) @ v_m, evaluated by
    chaining dual forward and dual reverse passes through both nets.
    """
    V = np.atleast_2d(np.asarray(directions, dtype=float))
    k = V.shape[0]
    y, yd, cache_in = mlp_dual_forward(inner, x, V)
    _, _, cache_out = mlp_dual_forward(outer, y, yd)
    g, gd = mlp_dual_backward(outer, cache_out, np.eye(outer.n_out), None)
    g2, gd2 = mlp_dual_backward(inner, cache_in, g, gd)
    del g2
    return np.einsum("kji,ki->kj", gd2, V)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """Bias-corrected Adam moments for a flat parameter list."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_init(params: list[np.ndarray], lr: float) -> AdamState:
    return AdamState(
        lr=lr,
        m=[np.zeros_like(p) for p in params],
        v=[np.zeros_like(p) for p in params],
    )


def adam_step(
    state: AdamState, params: list[np.ndarray], grads: list[np.ndarray]
) -> None:
    """One in-place Adam update; learning rate read from state.lr each call."""
    if len(params) != len(state.m) or len(grads) != len(params):
        raise ValueError("parameter/gradient list length mismatch")
    state.step += 1
    c1 = 1.0 - state.beta1**state.step
    c2 = 1.0 - state.beta2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError("parameter/gradient shape mismatch")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# ---------------------------------------------------------------------------
# Symmetric eigendecomposition
# ---------------------------------------------------------------------------


@dataclass
class SymEigResult:
    values: np.ndarray   # descending
    vectors: np.ndarray  # orthonormal columns, vectors[:, i] pairs values[i]


def sym_eig_2x2(a: float, b: float, c: float) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form eigendecomposition of [[a, b], [b, c]]; values descending."""
    half_tr = 0.5 * (a + c)
    disc = np.hypot(0.5 * (a - c), b)
    lo, hi = half_tr - disc, half_tr + disc
    if disc <= 1e-300 * max(1.0, abs(half_tr)):
        return np.array([hi, lo]), np.eye(2)
    # Eigenvector for hi: pick the better conditioned of the two expressions.
    if abs(hi - c) >= abs(hi - a):
        v = np.array([hi - c, b])
    else:
        v = np.array([b, hi - a])
    nrm = np.linalg.norm(v)
    if nrm == 0.0:
        v = np.array([1.0, 0.0])
        nrm = 1.0
    v /= nrm
    q = np.array([[v[0], -v[1]], [v[1], v[0]]])
    return np.array([hi, lo]), q


def _sym_eigvals_3x3(a: np.ndarray) -> np.ndarray:
    """Closed-form eigenvalues (descending) of a symmetric 3x3 matrix."""
    p1 = a[0, 1] ** 2 + a[0, 2] ** 2 + a[1, 2] ** 2
    if p1 == 0.0:
        return np.sort(np.diag(a))[::-1].copy()
    q = np.trace(a) / 3.0
    p2 = (a[0, 0] - q) ** 2 + (a[1, 1] - q) ** 2 + (a[2, 2] - q) ** 2 + 2.0 * p1
    p = np.sqrt(p2 / 6.0)
    bm = (a - q * np.eye(3)) / p
    r = np.clip(np.linalg.det(bm) / 2.0, -1.0, 1.0)
    phi = np.arccos(r) / 3.0
    e1 = q + 2.0 * p * np.cos(phi)
    e3 = q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
    return np.array([e1, 3.0 * q - e1 - e3, e3])


def jacobi_eigh(
    a: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100
) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi rotations; returns (values descending, orthonormal Q)."""
    a = np.array(a, dtype=float, copy=True)
    n = a.shape[0]
    q = np.eye(n)
    scale = np.sqrt((a * a).sum())
    if scale == 0.0:
        return np.zeros(n), q
    # Rotations below this threshold cannot move the off-diagonal mass above
    # tol * ||A||_F, so skipping them is safe.
    skip = tol * scale / (n * n)
    off_diag = ~np.eye(n, dtype=bool)
    for _ in range(max_sweeps):
        off = np.sqrt((a[off_diag] ** 2).sum())
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for r in range(p + 1, n):
                apr = a[p, r]
                if abs(apr) <= skip:
                    continue
                tau = (a[r, r] - a[p, p]) / (2.0 * apr)
                t = np.sign(tau) if tau != 0.0 else 1.0
                t = t / (abs(tau) + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                rot_p = a[p].copy()
                rot_r = a[r].copy()
                a[p] = c * rot_p - s * rot_r
                a[r] = s * rot_p + c * rot_r
                col_p = a[:, p].copy()
                col_r = a[:, r].copy()
                a[:, p] = c * col_p - s * col_r
                a[:, r] = s * col_p + c * col_r
                a[p, r] = 0.0
                a[r, p] = 0.0
                qp = q[:, p].copy()
                qr = q[:, r].copy()
                q[:, p] = c * qp - s * qr
                q[:, r] = s * qp + c * qr
    vals = np.diag(a).copy()
    order = np.argsort(vals)[::-1]
    return vals[order], q[:, order]


def sym_eig(a: np.ndarray, sym_tol: float = 1e-10) -> SymEigResult:
    """Full spectral decomposition of a symmetric matrix.

    Raises ValueError when max|A - A^T| exceeds sym_tol * max(1, max|A|).
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("square matrix required")
    bound = sym_tol * max(1.0, np.abs(a).max() if a.size else 0.0)
    if np.abs(a - a.T).max() > bound:
        raise ValueError("matrix is not symmetric within tolerance")
    a = 0.5 * (a + a.T)
    if a.shape[0] == 2:
        vals, q = sym_eig_2x2(a[0, 0], a[0, 1], a[1, 1])
    else:
        vals, q = jacobi_eigh(a)
    return SymEigResult(vals, q)


def orthonormal_columns(e: np.ndarray, rank_tol: float = 1e-12) -> np.ndarray:
    """Orthonormal basis of the column span via modified Gram-Schmidt.

    One re-orthogonalization pass keeps Q^T Q = I to ~1e-14.  Columns whose
    residual drops below rank_tol times the largest column norm are dropped,
    so the result has exactly rank(e) columns.
    """
    e = np.asarray(e, dtype=float)
    ref = np.sqrt((e * e).sum(axis=0)).max() if e.size else 0.0
    cols: list[np.ndarray] = []
    for j in range(e.shape[1]):
        v = e[:, j].copy()
        for u in cols:
            v -= (u @ v) * u
        for u in cols:
            v -= (u @ v) * u
        nrm = np.linalg.norm(v)
        if nrm > rank_tol * max(ref, 1e-300):
            cols.append(v / nrm)
    if not cols:
        return np.zeros((e.shape[0], 0))
    return np.stack(cols, axis=1)


def factored_sym_eig(
    e: np.ndarray, core: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of E @ core @ E^T without forming the D x D matrix.

    core must be symmetric (it may be indefinite).  Returns the nonzero part
    of the spectrum: (values sorted by descending value, vectors (D, r)).
    """
    q = orthonormal_columns(e)
    if q.shape[1] == 0:
        return np.zeros(0), q
    t = q.T @ e
    small = t @ core @ t.T
    small = 0.5 * (small + small.T)
    if small.shape[0] == 2:
        vals, vecs = sym_eig_2x2(small[0, 0], small[0, 1], small[1, 1])
    else:
        vals, vecs = jacobi_eigh(small)
    return vals, q @ vecs


def min_singular_value(j: np.ndarray) -> float:
    """Smallest singular value of a tall matrix, via its small Gram matrix."""
    j = np.asarray(j, dtype=float)
    if j.ndim != 2 or j.shape[0] < j.shape[1]:
        raise ValueError("expected a tall matrix")
    gram = j.T @ j
    k = gram.shape[0]
    if k == 1:
        lam_min = gram[0, 0]
    elif k == 2:
        lam_min = sym_eig_2x2(gram[0, 0], gram[0, 1], gram[1, 1])[0][-1]
    elif k == 3:
        lam_min = _sym_eigvals_3x3(gram)[-1]
    else:
        lam_min = jacobi_eigh(gram)[0][-1]
    return float(np.sqrt(max(lam_min, 0.0)))


def sqrtm_psd(s: np.ndarray) -> np.ndarray:
    """Principal square root of a PSD matrix; closed form for 2x2."""
    s = np.asarray(s, dtype=float)
    if s.shape == (2, 2):
        det = max(s[0, 0] * s[1, 1] - s[0, 1] * s[1, 0], 0.0)
        root_det = np.sqrt(det)
        denom = np.sqrt(max(s[0, 0] + s[1, 1] + 2.0 * root_det, 0.0))
        if denom == 0.0:
            return np.zeros((2, 2))
        return (s + root_det * np.eye(2)) / denom
    res = sym_eig(s)
    vals = np.clip(res.values, 0.0, None)
    return (res.vectors * np.sqrt(vals)) @ res.vectors.T


# -- batched 2x2 helpers for the training hot loop --------------------------


def eigvals_2x2_batch(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(largest, smallest) eigenvalues of a batch of symmetric 2x2 matrices."""
    a, b, c = g[:, 0, 0], g[:, 0, 1], g[:, 1, 1]
    half_tr = 0.5 * (a + c)
    disc = np.hypot(0.5 * (a - c), b)
    return half_tr + disc, half_tr - disc


def inv_2x2_psd_batch(g: np.ndarray, floor: float = 1e-10) -> np.ndarray:
    """Inverses of symmetric PSD 2x2 matrices, eigenvalues clamped at floor.

    The plain cofactor inverse is used where the spectrum is safely above
    the floor; degenerate entries fall back to a clamped spectral inverse.
    """
    g = np.asarray(g, dtype=float)
    hi, lo = eigvals_2x2_batch(g)
    out = np.empty_like(g)
    safe = lo > floor
    if np.any(safe):
        a, b, c = g[safe, 0, 0], g[safe, 0, 1], g[safe, 1, 1]
        det = a * c - b * b
        inv = np.empty((safe.sum(), 2, 2))
        inv[:, 0, 0] = c / det
        inv[:, 1, 1] = a / det
        inv[:, 0, 1] = -b / det
        inv[:, 1, 0] = -b / det
        out[safe] = inv
    for idx in np.flatnonzero(~safe):
        vals, q = sym_eig_2x2(g[idx, 0, 0], g[idx, 0, 1], g[idx, 1, 1])
        vals = np.maximum(vals, floor)
        out[idx] = (q / vals) @ q.T
    return out
