"""Primitive kernel families and their hyperparameter gradients.

Every family evaluates a closed-form covariance k(x, y) on a chosen subset of
input dimensions.  Positive hyperparameters (variances, lengthscales, periods,
the rational-quadratic shape) are stored as unconstrained raw values and mapped
through softplus; frequency vectors are stored directly.  All gradients are
taken with respect to the raw values, so the softplus chain factor sigmoid(raw)
is already included.

Families:

    rbf    k = s2 * exp(-1/2 sum_d tau_d^2 / l_d^2)
    per    k = s2 * exp(-2 sum_d sin^2(pi tau_d / p_d) / l_d^2)
    lin    k = s2 * x.y
    rq     k = (1 + u / (2 a))^(-a),  u = sum_d tau_d^2 / l_d^2  (unit variance)
    wn     k = s2 * [x == y]
    const  k = s2
    cos    k = s2 * cos(mu . tau)
    cexp   k = exp(i mu . tau)

with tau = x - y restricted to the active dimensions.  cexp is the only family
with a nonzero imaginary part; it is conjugate-symmetric, and its real part is
the cosine kernel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .util import SOFTPLUS_FLOOR, sigmoid, softplus, softplus_inverse

KINDS = ("rbf", "per", "lin", "rq", "wn", "const", "cos", "cexp")

# Families whose raw parameter count scales with the active dimension count.
_VAR_ONLY = ("lin", "wn", "const")


@dataclass(frozen=True)
class Primitive:
    """A primitive kernel slot: family tag plus active input dimensions.

    dims=None means the full input vector; otherwise a tuple of dimension
    indices.  shared_lengthscale collapses the per-dimension lengthscales
    (and periods, for `per`) of rbf/rq/per to a single shared value.
    """

    kind: str
    dims: tuple[int, ...] | None = None
    shared_lengthscale: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown primitive kind {self.kind!r}")
        if self.dims is not None:
            if len(self.dims) == 0:
                raise ValueError("dims must be nonempty")
            object.__setattr__(self, "dims", tuple(int(i) for i in self.dims))

    def active_dims(self, d: int) -> tuple[int, ...]:
        if self.dims is None:
            return tuple(range(d))
        if any(i < 0 or i >= d for i in self.dims):
            raise ValueError(f"dims {self.dims} outside input dimension {d}")
        return self.dims

    def n_lengthscales(self, d: int) -> int:
        return 1 if self.shared_lengthscale else len(self.active_dims(d))

    def n_params(self, d: int) -> int:
        q = len(self.active_dims(d))
        nl = self.n_lengthscales(d)
        if self.kind == "rbf":
            return 1 + nl
        if self.kind == "per":
            return 1 + 2 * nl
        if self.kind == "rq":
            return 1 + nl
        if self.kind in _VAR_ONLY:
            return 1
        if self.kind == "cos":
            return 1 + q
        if self.kind == "cexp":
            return q
        raise AssertionError(self.kind)

    @property
    def is_complex(self) -> bool:
        return self.kind == "cexp"


class PairwiseCache:
    """Memoized pairwise quantities for one (X, Y) pair.

    Evaluating a network repeatedly with changing hyperparameters but fixed
    inputs (the training loop) only pays for the coordinate differences once.
    """

    def __init__(self, X: np.ndarray, Y: np.ndarray):
        self.X = X
        self.Y = Y
        self.symmetric = X is Y
        self._store: dict = {}

    def diffs(self, dims: tuple[int, ...]) -> np.ndarray:
        key = ("diffs", dims)
        if key not in self._store:
            sub_x = self.X[:, dims]
            sub_y = self.Y[:, dims]
            self._store[key] = sub_x.T[:, :, None] - sub_y.T[:, None, :]
        return self._store[key]

    def sqdiffs(self, dims: tuple[int, ...]) -> np.ndarray:
        key = ("sqdiffs", dims)
        if key not in self._store:
            self._store[key] = self.diffs(dims) ** 2
        return self._store[key]

    def dot(self, dims: tuple[int, ...]) -> np.ndarray:
        key = ("dot", dims)
        if key not in self._store:
            self._store[key] = self.X[:, dims] @ self.Y[:, dims].T
        return self._store[key]

    def eqmask(self, dims: tuple[int, ...]) -> np.ndarray:
        key = ("eq", dims)
        if key not in self._store:
            self._store[key] = np.all(
                self.X[:, dims][:, None, :] == self.Y[:, dims][None, :, :], axis=-1
            )
        return self._store[key]


def _split_raw(prim: Primitive, raw: np.ndarray, d: int):
    """Return the constrained view of a raw vector as a dict."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape != (prim.n_params(d),):
        raise ValueError(
            f"{prim.kind} on {len(prim.active_dims(d))} dims expects "
            f"{prim.n_params(d)} raw parameters, got {raw.shape}"
        )
    nl = prim.n_lengthscales(d)
    if prim.kind == "rbf":
        return {"var": softplus(raw[0]), "ls": softplus(raw[1 : 1 + nl]) + SOFTPLUS_FLOOR}
    if prim.kind == "per":
        return {
            "var": softplus(raw[0]),
            "ls": softplus(raw[1 : 1 + nl]) + SOFTPLUS_FLOOR,
            "period": softplus(raw[1 + nl : 1 + 2 * nl]) + SOFTPLUS_FLOOR,
        }
    if prim.kind == "rq":
        return {
            "alpha": softplus(raw[0]) + SOFTPLUS_FLOOR,
            "ls": softplus(raw[1 : 1 + nl]) + SOFTPLUS_FLOOR,
        }
    if prim.kind in _VAR_ONLY:
        return {"var": softplus(raw[0])}
    if prim.kind == "cos":
        return {"var": softplus(raw[0]), "mu": raw[1:]}
    if prim.kind == "cexp":
        return {"mu": raw}
    raise AssertionError(prim.kind)


def constrained_params(prim: Primitive, raw, d: int) -> dict:
    """Public constrained view (variances, lengthscales, ... as positive floats).

    rq carries an implicit unit variance: the surrounding network weights own
    the output scale, keeping the family at one shape plus lengthscales.
    """
    view = _split_raw(prim, np.asarray(raw, dtype=np.float64), d)
    if prim.kind == "rq":
        view = {"var": 1.0, **view}
    return view


def gram(prim: Primitive, raw, X: np.ndarray, Y: np.ndarray, cache: PairwiseCache | None = None) -> np.ndarray:
    """Dense kernel matrix k(x_i, y_j); complex128 only for cexp."""
    if cache is None:
        cache = PairwiseCache(X, Y)
    d = X.shape[1]
    dims = prim.active_dims(d)
    p = _split_raw(prim, raw, d)

    if prim.kind == "rbf":
        sq = cache.sqdiffs(dims)
        u = _weighted_sum(1.0 / _bcast(p["ls"], len(dims)) ** 2, sq)
        return p["var"] * np.exp(-0.5 * u)
    if prim.kind == "per":
        s = np.sin(np.pi * cache.diffs(dims) / _col(p["period"], len(dims)))
        u = _weighted_sum(1.0 / _bcast(p["ls"], len(dims)) ** 2, s * s)
        return p["var"] * np.exp(-2.0 * u)
    if prim.kind == "lin":
        return p["var"] * cache.dot(dims)
    if prim.kind == "rq":
        u = _weighted_sum(1.0 / _bcast(p["ls"], len(dims)) ** 2, cache.sqdiffs(dims))
        a = p["alpha"]
        return np.exp(-a * np.log1p(u / (2.0 * a)))
    if prim.kind == "wn":
        return p["var"] * cache.eqmask(dims).astype(np.float64)
    if prim.kind == "const":
        n, m = cache.X.shape[0], cache.Y.shape[0]
        return np.full((n, m), p["var"])
    if prim.kind == "cos":
        phase = np.tensordot(p["mu"], cache.diffs(dims), axes=(0, 0))
        return p["var"] * np.cos(phase)
    if prim.kind == "cexp":
        phase = np.tensordot(p["mu"], cache.diffs(dims), axes=(0, 0))
        return np.exp(1j * phase)
    raise AssertionError(prim.kind)


def _bcast(values: np.ndarray, q: int) -> np.ndarray:
    """Expand a shared (length-1) parameter vector to q dimensions."""
    return values if values.shape[0] == q else np.repeat(values, q)


def _weighted_sum(weights: np.ndarray, stacked: np.ndarray) -> np.ndarray:
    """sum_d weights[d] * stacked[d] via one BLAS matvec over the flat view."""
    q, n, m = stacked.shape
    return (weights @ stacked.reshape(q, n * m)).reshape(n, m)


def _stack_contract(stacked: np.ndarray, weight_matrix: np.ndarray) -> np.ndarray:
    """Per-slice contraction sum_nm stacked[d] * weight_matrix, as a matvec."""
    q, n, m = stacked.shape
    return stacked.reshape(q, n * m) @ weight_matrix.ravel()


def _col(values: np.ndarray, q: int) -> np.ndarray:
    return _bcast(values, q)[:, None, None]


def gram_grads(prim: Primitive, raw, X: np.ndarray, Y: np.ndarray, cache: PairwiseCache | None = None) -> np.ndarray:
    """Stack of dk/draw_i matrices, shape (n_params, n, m).

    Includes the sigmoid chain factor for softplus-mapped parameters.
    """
    if cache is None:
        cache = PairwiseCache(X, Y)
    d = X.shape[1]
    dims = prim.active_dims(d)
    q = len(dims)
    raw = np.asarray(raw, dtype=np.float64)
    p = _split_raw(prim, raw, d)
    shared = prim.shared_lengthscale

    if prim.kind == "rbf":
        sq = cache.sqdiffs(dims)
        ls = _bcast(p["ls"], q)
        u = _weighted_sum(1.0 / ls**2, sq)
        e = np.exp(-0.5 * u)
        g_var = e * sigmoid(raw[0])
        per_dim = (p["var"] * e)[None] * sq / ls[:, None, None] ** 3
        g_ls = per_dim.sum(axis=0, keepdims=True) if shared else per_dim
        chain = sigmoid(raw[1:])[:, None, None]
        return np.concatenate([g_var[None], g_ls * chain], axis=0)

    if prim.kind == "per":
        tau = cache.diffs(dims)
        ls = _bcast(p["ls"], q)
        period = _bcast(p["period"], q)
        ang = np.pi * tau / period[:, None, None]
        s = np.sin(ang)
        u = _weighted_sum(1.0 / ls**2, s * s)
        e = np.exp(-2.0 * u)
        k = p["var"] * e
        g_var = e * sigmoid(raw[0])
        d_ls = k[None] * 4.0 * s * s / ls[:, None, None] ** 3
        d_per = (
            k[None]
            * (2.0 * np.pi * tau / (ls**2 * period**2)[:, None, None])
            * np.sin(2.0 * ang)
        )
        if shared:
            d_ls = d_ls.sum(axis=0, keepdims=True)
            d_per = d_per.sum(axis=0, keepdims=True)
        nl = prim.n_lengthscales(d)
        chain_ls = sigmoid(raw[1 : 1 + nl])[:, None, None]
        chain_per = sigmoid(raw[1 + nl :])[:, None, None]
        return np.concatenate([g_var[None], d_ls * chain_ls, d_per * chain_per], axis=0)

    if prim.kind == "lin":
        return (cache.dot(dims) * sigmoid(raw[0]))[None]

    if prim.kind == "rq":
        sq = cache.sqdiffs(dims)
        ls = _bcast(p["ls"], q)
        a = p["alpha"]
        u = _weighted_sum(1.0 / ls**2, sq)
        w = 1.0 + u / (2.0 * a)
        logw = np.log(w)
        base = np.exp(-(a + 1.0) * logw)
        per_dim = base[None] * sq / ls[:, None, None] ** 3
        g_ls = per_dim.sum(axis=0, keepdims=True) if shared else per_dim
        g_alpha = (base * w) * (-logw + u / (2.0 * a * w))
        chain_a = sigmoid(raw[0])
        chain_ls = sigmoid(raw[1:])[:, None, None]
        return np.concatenate([(g_alpha * chain_a)[None], g_ls * chain_ls], axis=0)

    if prim.kind == "wn":
        return (cache.eqmask(dims).astype(np.float64) * sigmoid(raw[0]))[None]

    if prim.kind == "const":
        n, m = cache.X.shape[0], cache.Y.shape[0]
        return np.full((1, n, m), sigmoid(raw[0]))

    if prim.kind == "cos":
        tau = cache.diffs(dims)
        phase = np.tensordot(p["mu"], tau, axes=(0, 0))
        g_var = np.cos(phase) * sigmoid(raw[0])
        g_mu = -p["var"] * np.sin(phase)[None] * tau
        return np.concatenate([g_var[None], g_mu], axis=0)

    if prim.kind == "cexp":
        tau = cache.diffs(dims)
        phase = np.tensordot(p["mu"], tau, axes=(0, 0))
        return 1j * tau * np.exp(1j * phase)[None]

    raise AssertionError(prim.kind)


def gram_diag(prim: Primitive, raw, X: np.ndarray) -> np.ndarray:
    """Vector of k(x_i, x_i); every family except lin is constant on the diagonal."""
    d = X.shape[1]
    dims = prim.active_dims(d)
    p = _split_raw(prim, raw, d)
    n = X.shape[0]
    if prim.kind == "lin":
        return p["var"] * np.einsum("nd,nd->n", X[:, dims], X[:, dims])
    if prim.kind == "rq":
        return np.ones(n)
    if prim.kind == "cexp":
        return np.ones(n, dtype=np.complex128)
    return np.full(n, p["var"])


def gram_grad_contract(
    prim: Primitive,
    raw,
    adjoint: np.ndarray,
    cache: PairwiseCache,
    value: np.ndarray,
) -> np.ndarray:
    """sum_nm Re(adjoint * conj(dk/draw_p)) without materializing gradients.

    `value` is the already-computed kernel matrix for this primitive (from a
    forward pass), which the smooth families reuse instead of re-running
    their transcendental functions.  Equivalent to contracting
    :func:`gram_grads` with the adjoint, but one tensordot per parameter
    block instead of a (P, n, m) intermediate.
    """
    d = cache.X.shape[1]
    dims = prim.active_dims(d)
    q = len(dims)
    raw = np.asarray(raw, dtype=np.float64)
    p = _split_raw(prim, raw, d)
    shared = prim.shared_lengthscale
    # real families: Re(adjoint * conj(dk)) = Re(adjoint) * dk
    gr = adjoint.real if np.iscomplexobj(adjoint) else adjoint

    if prim.kind == "rbf":
        k = value.real
        w = gr * k
        sq = cache.sqdiffs(dims)
        contract = _stack_contract(sq, w)
        if shared:
            contract = contract.sum(keepdims=True)
        ls = p["ls"]
        g_ls = contract / ls**3 * sigmoid(raw[1:])
        g_var = float((w / p["var"]).sum()) * sigmoid(raw[0]) if p["var"] > 0 else 0.0
        return np.concatenate([[g_var], g_ls])

    if prim.kind == "rq":
        k = value.real
        sq = cache.sqdiffs(dims)
        ls = _bcast(p["ls"], q)
        a = p["alpha"]
        u = _weighted_sum(1.0 / ls**2, sq)
        w_mat = 1.0 + u / (2.0 * a)
        base = k / w_mat
        contract = _stack_contract(sq, gr * base)
        if shared:
            contract = contract.sum(keepdims=True)
        g_ls = contract / p["ls"] ** 3 * sigmoid(raw[1:])
        g_alpha = float((gr * k * (-np.log(w_mat) + u / (2.0 * a * w_mat))).sum())
        return np.concatenate([[g_alpha * sigmoid(raw[0])], g_ls])

    if prim.kind == "per":
        k = value.real
        tau = cache.diffs(dims)
        ls = _bcast(p["ls"], q)
        period = _bcast(p["period"], q)
        ang = np.pi * tau / period[:, None, None]
        s2 = np.sin(ang) ** 2
        wk = gr * k
        c_ls = _stack_contract(s2, wk) * 4.0 / ls**3
        c_per = _stack_contract(tau * np.sin(2.0 * ang), wk) * 2.0 * np.pi / (ls**2 * period**2)
        if shared:
            c_ls = c_ls.sum(keepdims=True)
            c_per = c_per.sum(keepdims=True)
        nl = prim.n_lengthscales(d)
        g_var = float((wk / p["var"]).sum()) * sigmoid(raw[0]) if p["var"] > 0 else 0.0
        return np.concatenate(
            [[g_var], c_ls * sigmoid(raw[1 : 1 + nl]), c_per * sigmoid(raw[1 + nl :])]
        )

    if prim.kind == "lin":
        return np.array([float((gr * cache.dot(dims)).sum()) * sigmoid(raw[0])])

    if prim.kind == "wn":
        return np.array([float(gr[cache.eqmask(dims)].sum()) * sigmoid(raw[0])])

    if prim.kind == "const":
        return np.array([float(gr.sum()) * sigmoid(raw[0])])

    if prim.kind == "cos":
        tau = cache.diffs(dims)
        phase = np.tensordot(p["mu"], tau, axes=(0, 0))
        g_var = float((gr * np.cos(phase)).sum()) * sigmoid(raw[0])
        w = gr * (p["var"] * np.sin(phase))
        g_mu = -_stack_contract(tau, w)
        return np.concatenate([[g_var], g_mu])

    if prim.kind == "cexp":
        # Re(adjoint * conj(i tau e^{i phase})) = tau * Im(adjoint * conj(value))
        tau = cache.diffs(dims)
        w = np.imag(adjoint * np.conj(value))
        return _stack_contract(tau, w)

    raise AssertionError(prim.kind)


def eval_primitive(prim: Primitive, raw, x, y) -> complex:
    """Single-pair kernel value; scalar form of :func:`gram`."""
    X, Y = _pair(prim, x, y)
    return complex(gram(prim, raw, X, Y)[0, 0])


def grad_primitive(prim: Primitive, raw, x, y) -> np.ndarray:
    """Single-pair raw-parameter partials, complex vector of length n_params."""
    X, Y = _pair(prim, x, y)
    return gram_grads(prim, raw, X, Y)[:, 0, 0].astype(np.complex128)


def _pair(prim: Primitive, x, y):
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"x and y must be equal-length vectors, got {x.shape} vs {y.shape}")
    prim.active_dims(x.shape[0])
    return x[None, :], y[None, :]


# ---------------------------------------------------------------------------
# data-driven initialization


def _log_jitter(rng: np.random.Generator, scale: float = 0.2) -> float:
    return float(np.exp(rng.uniform(-scale, scale)))


def _median_distances(X: np.ndarray | None, dims: tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    """Median absolute pairwise difference per active dimension (1.0 fallback)."""
    if X is None or X.shape[0] < 2:
        return np.ones(len(dims))
    sub = X[:, dims]
    if sub.shape[0] > 200:
        idx = rng.choice(sub.shape[0], size=200, replace=False)
        sub = sub[idx]
    diffs = np.abs(sub[:, None, :] - sub[None, :, :])
    iu = np.triu_indices(sub.shape[0], k=1)
    med = np.median(diffs[iu], axis=0)
    med[~(med > 0)] = 1.0
    return med


def _span(X: np.ndarray | None, dims: tuple[int, ...]) -> np.ndarray:
    if X is None or X.shape[0] < 2:
        return np.ones(len(dims))
    span = X[:, dims].max(axis=0) - X[:, dims].min(axis=0)
    span[~(span > 0)] = 1.0
    return span


def init_raw(
    prim: Primitive,
    d: int,
    rng: np.random.Generator,
    X: np.ndarray | None = None,
    period_frac: float | None = None,
    freq_multiple: int = 1,
) -> np.ndarray:
    """Heuristic initial raw parameters for one primitive slot.

    Lengthscales start at the per-dimension median pairwise distance with
    +-20% log-jitter; periods at period_frac of the data span (callers place
    several periodic slots log-spaced over [span/20, span]); linear variance
    at 1/q; frequencies at multiples of 2*pi/span.
    """
    dims = prim.active_dims(d)
    q = len(dims)
    med = _median_distances(X, dims, rng)
    if prim.shared_lengthscale:
        med = np.array([float(np.median(med))])
    span = _span(X, dims)

    def sp_inv(v):
        return softplus_inverse(np.maximum(v, 1e-6))

    if prim.kind == "rbf":
        var = 1.0 * _log_jitter(rng)
        ls = med * np.array([_log_jitter(rng) for _ in med])
        return np.concatenate([[sp_inv(var)], sp_inv(ls)])
    if prim.kind == "rq":
        alpha = 1.0 * _log_jitter(rng)
        ls = med * np.array([_log_jitter(rng) for _ in med])
        return np.concatenate([[sp_inv(alpha)], sp_inv(ls)])
    if prim.kind == "per":
        var = 1.0 * _log_jitter(rng)
        ls = 1.0 * med * np.array([_log_jitter(rng) for _ in med])
        frac = 0.25 if period_frac is None else period_frac
        base_span = np.array([float(np.median(span))]) if prim.shared_lengthscale else span
        period = frac * base_span * np.array([_log_jitter(rng) for _ in base_span])
        return np.concatenate([[sp_inv(var)], sp_inv(ls), sp_inv(period)])
    if prim.kind == "lin":
        return np.array([sp_inv(1.0 / q * _log_jitter(rng))])
    if prim.kind == "wn":
        return np.array([sp_inv(0.1 * _log_jitter(rng))])
    if prim.kind == "const":
        return np.array([sp_inv(1.0 * _log_jitter(rng))])
    if prim.kind == "cos":
        var = 1.0 * _log_jitter(rng)
        mu = 2.0 * np.pi * freq_multiple / span * np.array([_log_jitter(rng) for _ in span])
        return np.concatenate([[sp_inv(var)], mu])
    if prim.kind == "cexp":
        return 2.0 * np.pi * freq_multiple / span * np.array([_log_jitter(rng) for _ in span])
    raise AssertionError(prim.kind)
