"""Exact GP inference on Cartesian grids with axis-factorized kernels.

The kernel is a product of one-dimensional kernels along each grid axis, so
the full covariance over all N grid sites is a Kronecker product of small
per-axis matrices: matrix-vector products cost O(N * sum_d n_d) instead of
O(N^2).  Partially observed grids are completed with placeholder targets at
the missing sites carrying near-infinite noise (precision epsilon), which
keeps the Kronecker algebra intact:

    (K_N + D_N) alpha = y_N,
    D_N = diag(noise_var at observed sites, 1/epsilon at missing sites),

solved by preconditioned conjugate gradients with the diagonal preconditioner
C = D_N^{-1/2}.  The log-determinant over the observed block is approximated
from the Kronecker eigenvalues: the M largest eigenvalues of K_N, scaled by
M/N, stand in for the spectrum of K_M (exact when the grid is fully
observed).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh, solve_triangular

from .gp import _chol_with_jitter
from .graph import NetworkSpec, ParameterStore, ProductSpec, forward_matrix
from .train import AdamState, TrainConfig, adam_step, clip_global_norm
from .util import NumericError, SpecError, softplus, softplus_inverse

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class CgConfig:
    tol: float = 1e-6
    max_iters: int = 1000
    epsilon: float = 1e-6  # imaginary-observation precision; their noise is 1/epsilon

    def __post_init__(self):
        if self.tol <= 0 or self.epsilon <= 0:
            raise ValueError("tol and epsilon must be positive")


@dataclass(eq=False)
class GridSpec:
    """Per-dimension coordinates, observation mask, and per-axis kernels.

    observed_mask is a boolean vector over all prod(n_d) sites in row-major
    axis order.
    """

    axes: tuple[np.ndarray, ...]
    observed_mask: np.ndarray
    per_axis_specs: tuple[NetworkSpec, ...]

    def __post_init__(self):
        self.axes = tuple(np.asarray(a, dtype=np.float64).ravel() for a in self.axes)
        for a in self.axes:
            if a.size < 1 or np.any(np.diff(a) <= 0):
                raise SpecError("grid axes must be strictly increasing")
        self.observed_mask = np.asarray(self.observed_mask, dtype=bool).ravel()
        if self.observed_mask.size != self.total_sites:
            raise SpecError(
                f"mask covers {self.observed_mask.size} sites, grid has {self.total_sites}"
            )
        if not self.observed_mask.any():
            raise SpecError("at least one grid site must be observed")
        if len(self.per_axis_specs) != len(self.axes):
            raise SpecError("one per-axis kernel network required per dimension")
        for spec in self.per_axis_specs:
            spec.validate(1)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(a.size for a in self.axes)

    @property
    def total_sites(self) -> int:
        return int(np.prod([a.size for a in self.axes]))

    @property
    def observed_count(self) -> int:
        return int(self.observed_mask.sum())

    def default_stores(self) -> list[ParameterStore]:
        return [ParameterStore.from_spec(s, 1) for s in self.per_axis_specs]

    def points(self) -> np.ndarray:
        """All grid sites as an (N, D) array in row-major order."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.column_stack([m.ravel() for m in mesh])


def kron_matvec(axis_grams: list[np.ndarray], v: np.ndarray) -> np.ndarray:
    """(K_1 kron ... kron K_D) @ v via per-axis tensor contractions."""
    shape = tuple(k.shape[0] for k in axis_grams)
    n = int(np.prod(shape))
    v = np.asarray(v, dtype=np.float64).ravel()
    if v.size != n:
        raise ValueError(f"vector length {v.size} does not match grid size {n}")
    x = v.reshape(shape)
    for d, k in enumerate(axis_grams):
        x = np.moveaxis(np.tensordot(k, x, axes=(1, d)), 0, d)
    return x.ravel()


def axis_gram_matrices(grid: GridSpec, stores: list[ParameterStore] | None = None) -> list[np.ndarray]:
    stores = grid.default_stores() if stores is None else stores
    grams = []
    for axis, spec, store in zip(grid.axes, grid.per_axis_specs, stores):
        pts = axis[:, None]
        k = forward_matrix(spec, store, pts, pts).values
        grams.append(0.5 * (k + k.T))
    return grams


def _noise_diagonal(grid: GridSpec, noise_var: float, cfg: CgConfig) -> np.ndarray:
    d = np.full(grid.total_sites, 1.0 / cfg.epsilon)
    d[grid.observed_mask] = noise_var
    return d


def _pcg(matvec, b: np.ndarray, precond_diag: np.ndarray, tol: float, max_iters: int,
         strict: bool = True):
    """Conjugate gradients with a diagonal (Jacobi) preconditioner.

    Equivalent to running plain CG on the symmetrically scaled system
    C A C z = C b with C = precond_diag^{-1/2}.  With strict=False the best
    iterate is returned even when the tolerance was not reached (training
    objectives tolerate approximate solves; final answers should not).
    """
    x = np.zeros_like(b)
    r = b.copy()
    norm_b = float(np.linalg.norm(b))
    if norm_b == 0.0:
        return x, 0, 0.0
    z = r / precond_diag
    p = z.copy()
    gamma = float(r @ z)
    for it in range(1, max_iters + 1):
        ap = matvec(p)
        denom = float(p @ ap)
        if denom <= 0:
            raise NumericError(f"CG breakdown at iteration {it}: p^T A p = {denom:.3e}")
        step = gamma / denom
        x += step * p
        r -= step * ap
        rel = float(np.linalg.norm(r)) / norm_b
        if rel <= tol:
            return x, it, rel
        z = r / precond_diag
        gamma_new = float(r @ z)
        p = z + (gamma_new / gamma) * p
        gamma = gamma_new
    if strict:
        raise NumericError(
            f"CG did not reach tol={tol:.1e} within {max_iters} iterations "
            f"(final relative residual {rel:.3e})"
        )
    return x, max_iters, rel


def solve_completed_grid(
    grid: GridSpec,
    y_observed: np.ndarray,
    noise_var: float,
    cfg: CgConfig = CgConfig(),
    stores: list[ParameterStore] | None = None,
    strict: bool = True,
) -> np.ndarray:
    """Solve (K_N + D_N) alpha = y_N with zeros filled in at missing sites."""
    y_observed = np.asarray(y_observed, dtype=np.float64).ravel()
    if y_observed.size != grid.observed_count:
        raise ValueError(
            f"y has {y_observed.size} entries, grid observes {grid.observed_count}"
        )
    if not np.all(np.isfinite(y_observed)):
        raise ValueError("observations must be finite")
    grams = axis_gram_matrices(grid, stores)
    dvec = _noise_diagonal(grid, noise_var, cfg)
    y_full = np.zeros(grid.total_sites)
    y_full[grid.observed_mask] = y_observed

    def matvec(v):
        return kron_matvec(grams, v) + dvec * v

    alpha, _, _ = _pcg(matvec, y_full, dvec, cfg.tol, cfg.max_iters, strict=strict)
    return alpha


def logdet_approx(
    grid: GridSpec,
    noise_var: float,
    stores: list[ParameterStore] | None = None,
) -> float:
    """Approximate ln|K_M + noise_var I| over the observed sites.

    Kronecker structure gives the eigenvalues of K_N as products of per-axis
    eigenvalues; the M largest, scaled by M/N, approximate the observed-block
    spectrum (exactly when M = N).
    """
    grams = axis_gram_matrices(grid, stores)
    eigs = None
    for k in grams:
        w = eigh(k, eigvals_only=True)
        eigs = w if eigs is None else np.multiply.outer(eigs, w).ravel()
    eigs = np.sort(eigs)[::-1]
    m, n = grid.observed_count, grid.total_sites
    lam = np.maximum(eigs[:m] * (m / n), 0.0)
    return float(np.sum(np.log(lam + noise_var)))


def grid_log_marginal(
    grid: GridSpec,
    y_observed: np.ndarray,
    noise_var: float,
    cfg: CgConfig = CgConfig(),
    stores: list[ParameterStore] | None = None,
    strict: bool = True,
) -> float:
    """Approximate log marginal likelihood: CG quadratic term + spectral log-det."""
    alpha = solve_completed_grid(grid, y_observed, noise_var, cfg, stores, strict=strict)
    y_full = np.zeros(grid.total_sites)
    y_full[grid.observed_mask] = y_observed
    quad = float(y_full @ alpha)
    logdet = logdet_approx(grid, noise_var, stores)
    m = grid.observed_count
    return -0.5 * quad - 0.5 * logdet - 0.5 * m * LOG_2PI


# ---------------------------------------------------------------------------
# texture extrapolation


@dataclass
class TextureResult:
    mean: np.ndarray
    std: np.ndarray | None
    heldout_rmse: float
    trace: list[tuple[int, float, float]] = field(default_factory=list)
    noise_var: float = 0.0
    wall_time: float = 0.0


def _dominant_period(values: np.ndarray, coords: np.ndarray) -> float | None:
    """Period of the strongest nonzero Fourier mode of a 1-d profile."""
    v = values - values.mean()
    if v.size < 8 or not np.any(v):
        return None
    power = np.abs(np.fft.rfft(v)) ** 2
    if power.size < 3:
        return None
    k = 1 + int(np.argmax(power[1:]))
    span = coords[-1] - coords[0]
    if k == 0 or span <= 0:
        return None
    return float(span / k)


def axis_network(
    kind: str,
    coords: np.ndarray,
    profile: np.ndarray | None = None,
    rng: np.random.Generator | None = None,
    variance: float = 1.0,
) -> NetworkSpec:
    """A 1-d kernel network for one grid axis.

    kind 'per' or 'rbf' exposes a single primitive directly; 'nkn4' mixes
    lin/rbf/rq/per through a small Linear4-Product2-Linear1 trunk.  Periodic
    primitives are seeded with the dominant Fourier period of the observed
    profile when one is available; `variance` sets the per-axis signal
    variance (the product across axes should match the data variance).
    """
    from .presets import _linear_init, _slot  # local import to avoid a cycle

    if rng is None:
        rng = np.random.default_rng(0)
    X = coords[:, None]
    span = float(coords[-1] - coords[0]) if coords.size > 1 else 1.0
    period = None if profile is None else _dominant_period(profile, coords)
    frac = (period / span) if period else 0.25

    def per_slot():
        slot = _slot("per", 1, rng, X, period_frac=frac)
        raw = slot.raw_init.copy()
        raw[0] = softplus_inverse(max(variance, 1e-4))
        raw[1] = softplus_inverse(1.0)  # within-period smoothness
        return type(slot)(slot.prim, raw)

    if kind == "per":
        return NetworkSpec((per_slot(),), ())
    if kind == "rbf":
        slot = _slot("rbf", 1, rng, X)
        raw = slot.raw_init.copy()
        raw[0] = softplus_inverse(max(variance, 1e-4))
        return NetworkSpec((type(slot)(slot.prim, raw),), ())
    if kind == "nkn4":
        slots = (
            _slot("lin", 1, rng, X),
            _slot("rbf", 1, rng, X),
            _slot("rq", 1, rng, X),
            per_slot(),
        )
        layers = (
            _linear_init(4, 4, rng, bias=True),
            ProductSpec(2),
            _linear_init(1, 2, rng, bias=True),
        )
        return NetworkSpec(slots, layers)
    raise SpecError(f"unknown axis kernel kind {kind!r}")


def _flatten_stores(stores: list[ParameterStore], noise_raw: float) -> np.ndarray:
    return np.concatenate([s.flat for s in stores] + [[noise_raw]])


def _unflatten_stores(theta: np.ndarray, templates: list[ParameterStore]):
    stores = []
    off = 0
    for t in templates:
        stores.append(t.with_flat(theta[off : off + t.param_count]))
        off += t.param_count
    return stores, float(theta[off])


def fit_grid(
    grid: GridSpec,
    y_observed: np.ndarray,
    noise_var: float = 0.01,
    train: TrainConfig | None = None,
    cfg: CgConfig = CgConfig(),
) -> tuple[list[ParameterStore], float, list]:
    """Train per-axis hyperparameters and noise by Adam ascent.

    The spectral log-det approximation makes the objective cheap but not
    smoothly differentiable through the eigenvalue ordering, so gradients use
    central finite differences over the (small) hyperparameter vector.
    """
    if train is None:
        train = TrainConfig(iters=60, lr=0.08, log_every=10)
    templates = grid.default_stores()
    theta = _flatten_stores(templates, float(softplus_inverse(noise_var)))
    # objective noise from the CG solve must stay well under the FD step
    tight = CgConfig(tol=min(cfg.tol, 1e-8), max_iters=max(cfg.max_iters, 3000), epsilon=cfg.epsilon)

    def objective(vec: np.ndarray) -> float:
        stores, noise_raw = _unflatten_stores(vec, templates)
        return grid_log_marginal(
            grid, y_observed, float(softplus(noise_raw)), tight, stores, strict=False
        )

    adam = AdamState.zeros(theta.size)
    trace = []
    start = time.monotonic()
    for it in range(train.iters):
        grad = np.empty_like(theta)
        for i in range(theta.size):
            h = 1e-4 * max(1.0, abs(theta[i]))
            up, dn = theta.copy(), theta.copy()
            up[i] += h
            dn[i] -= h
            grad[i] = (objective(up) - objective(dn)) / (2.0 * h)
        if it % max(1, train.log_every) == 0 or it == train.iters - 1:
            trace.append((it, objective(theta), time.monotonic() - start))
        grad = clip_global_norm(grad, train.clip_norm)
        theta, adam = adam_step(adam, theta, grad, train)
    stores, noise_raw = _unflatten_stores(theta, templates)
    return stores, float(softplus(noise_raw)), trace


def grid_predict(
    grid: GridSpec,
    y_observed: np.ndarray,
    noise_var: float,
    stores: list[ParameterStore] | None = None,
    cfg: CgConfig = CgConfig(),
    with_std: bool = True,
    dense_limit: int = 4200,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Posterior mean (and optional std) at every grid site.

    The predictive variance needs one linear solve per site; below
    dense_limit sites the whole posterior is computed through one dense
    factorization (which also sidesteps CG on badly conditioned trained
    kernels), above it the mean comes from CG and the std output is skipped.
    """
    grams = axis_gram_matrices(grid, stores)
    if with_std and grid.total_sites <= dense_limit:
        from scipy.linalg import cho_solve

        k_dense = grams[0]
        for k in grams[1:]:
            k_dense = np.kron(k_dense, k)
        shifted = k_dense.copy()
        shifted.flat[:: grid.total_sites + 1] += _noise_diagonal(grid, noise_var, cfg)
        low, _ = _chol_with_jitter(shifted)
        y_full = np.zeros(grid.total_sites)
        y_full[grid.observed_mask] = np.asarray(y_observed, dtype=np.float64).ravel()
        alpha = cho_solve((low, True), y_full)
        mean = k_dense @ alpha
        v = solve_triangular(low, k_dense, lower=True)
        var = np.diag(k_dense) - np.einsum("ij,ij->j", v, v) + noise_var
        return mean, np.sqrt(np.maximum(var, 0.0))
    alpha = solve_completed_grid(grid, y_observed, noise_var, cfg, stores)
    mean = kron_matvec(grams, alpha)
    return mean, None


def texture_extrapolate(
    image: np.ndarray,
    heldout_mask: np.ndarray,
    axis_kind: str = "per",
    train: TrainConfig | None = None,
    cfg: CgConfig = CgConfig(),
    seed: int = 0,
    truth: np.ndarray | None = None,
) -> TextureResult:
    """Complete a partially observed grayscale image with a grid GP.

    `image` holds intensities in [0, 1]; `heldout_mask` marks pixels treated
    as missing.  Per-axis kernels of `axis_kind` are trained on the observed
    pixels, the full image is predicted, and when the held-out truth is known
    (from `truth` or from `image` itself) the held-out RMSE is reported.
    """
    start = time.monotonic()
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError("texture extrapolation expects a 2-d image")
    heldout_mask = np.asarray(heldout_mask, dtype=bool)
    if heldout_mask.shape != image.shape:
        raise ValueError("mask shape must match image shape")
    observed = ~heldout_mask.ravel()

    rows, cols = image.shape
    axes = (np.arange(rows, dtype=np.float64) / rows, np.arange(cols, dtype=np.float64) / cols)
    y_mean = float(image.ravel()[observed].mean())
    centered = image - y_mean
    y_obs = centered.ravel()[observed]
    signal_var = float(np.var(y_obs)) or 1.0

    obs_grid = np.where(heldout_mask, np.nan, centered)
    profiles = (
        np.nanmean(obs_grid, axis=1),
        np.nanmean(obs_grid, axis=0),
    )
    rng = np.random.default_rng(seed)
    specs = tuple(
        axis_network(
            axis_kind,
            axes[d],
            profile=np.nan_to_num(profiles[d], nan=0.0),
            rng=rng,
            variance=float(np.sqrt(signal_var)),
        )
        for d in range(2)
    )
    grid = GridSpec(axes=axes, observed_mask=observed, per_axis_specs=specs)

    stores, noise_var, trace = fit_grid(
        grid, y_obs, noise_var=max(0.01 * signal_var, 1e-6), train=train, cfg=cfg
    )
    mean_flat, std_flat = grid_predict(grid, y_obs, noise_var, stores, cfg)
    mean = mean_flat.reshape(image.shape) + y_mean
    std = None if std_flat is None else std_flat.reshape(image.shape)

    reference = image if truth is None else np.asarray(truth, dtype=np.float64)
    if heldout_mask.any():
        resid = (mean - reference)[heldout_mask]
        rmse = float(np.sqrt(np.mean(resid**2)))
    else:
        rmse = float("nan")
    return TextureResult(
        mean=mean,
        std=std,
        heldout_rmse=rmse,
        trace=trace,
        noise_var=noise_var,
        wall_time=time.monotonic() - start,
    )


# ---------------------------------------------------------------------------
# PGM (P2/P5) grayscale image files


def read_pgm(path) -> np.ndarray:
    """8-bit PGM reader returning intensities scaled to [0, 1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    tokens: list[bytes] = []
    i = 0
    while len(tokens) < 4 and i < len(data):
        while i < len(data) and data[i : i + 1].isspace():
            i += 1
        if data[i : i + 1] == b"#":
            while i < len(data) and data[i : i + 1] != b"\n":
                i += 1
            continue
        start = i
        while i < len(data) and not data[i : i + 1].isspace():
            i += 1
        tokens.append(data[start:i])
    if len(tokens) < 4 or tokens[0] not in (b"P2", b"P5"):
        raise ValueError(f"{path}: not a P2/P5 PGM file")
    width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if tokens[0] == b"P2":
        values = np.array(data[i:].split(), dtype=np.float64)
    else:
        i += 1  # single whitespace after maxval
        if maxval > 255:
            raise ValueError("only 8-bit P5 images are supported")
        values = np.frombuffer(data[i : i + width * height], dtype=np.uint8).astype(np.float64)
    if values.size != width * height:
        raise ValueError(f"{path}: expected {width * height} pixels, got {values.size}")
    return (values / maxval).reshape(height, width)


def write_pgm(path, image: np.ndarray) -> None:
    """Write intensities in [0, 1] as an ASCII (P2) 8-bit PGM."""
    clipped = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    pixels = np.round(clipped * 255).astype(int)
    lines = [f"P2\n{image.shape[1]} {image.shape[0]}\n255\n"]
    for row in pixels:
        lines.append(" ".join(str(v) for v in row) + "\n")
    with open(path, "w") as fh:
        fh.writelines(lines)
