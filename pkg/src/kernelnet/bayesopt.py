"""Expected-improvement Bayesian optimization on additive benchmark functions.

Benchmarks (minimization):

    stybtang(x)            = 1/2 sum_i (x_i^4 - 16 x_i^2 + 5 x_i)   on [-4, 4]^d
    michalewicz(x)         = -sum_i sin(x_i) sin^(2m)(i x_i^2 / pi) on [0, pi]^d
    stybtang_transform(x)  = stybtang(Q x), Q block-orthonormal over a random
                             partition of the dimensions

The loop samples 10 uniform initial points, then repeatedly refits a GP
surrogate (warm-started Adam), scores a fresh uniform candidate pool with
expected improvement, and queries the best candidate.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .gp import GpModel, Posterior
from .presets import plain_kernel_spec, preset
from .train import AdamState, TrainConfig, fit
from .graph import LinearSpec, NetworkSpec, PrimitiveSlot
from .primitives import Primitive, init_raw
from .util import NumericError, SpecError, softplus_inverse

BENCHMARK_NAMES = ("stybtang", "michalewicz", "stybtang_transform")


@dataclass(frozen=True, eq=False)
class Benchmark:
    name: str
    d: int
    domain: np.ndarray  # (d, 2) per-dimension [lo, hi]
    m: int = 10  # michalewicz steepness
    partition: tuple[tuple[int, ...], ...] | None = None
    rotation: np.ndarray | None = None  # block-orthonormal Q, transform only

    def contains(self, x: np.ndarray) -> bool:
        return bool(
            np.all(x >= self.domain[:, 0] - 1e-12) and np.all(x <= self.domain[:, 1] + 1e-12)
        )


def _random_block_rotation(d: int, rng: np.random.Generator):
    """Random partition of dimensions and per-block orthonormal matrices."""
    perm = rng.permutation(d)
    parts: list[tuple[int, ...]] = []
    i = 0
    while i < d:
        size = int(min(rng.integers(2, 4), d - i))
        parts.append(tuple(int(j) for j in perm[i : i + size]))
        i += size
    q = np.eye(d)
    for part in parts:
        block = rng.normal(size=(len(part), len(part)))
        qb, _ = np.linalg.qr(block)
        idx = np.ix_(part, part)
        q[idx] = qb
    return tuple(parts), q


def make_benchmark(name: str, d: int, m: int = 10, seed: int = 0) -> Benchmark:
    if name == "stybtang":
        domain = np.tile([-4.0, 4.0], (d, 1))
        parts = tuple((i,) for i in range(d))
        return Benchmark(name, d, domain, m, parts, None)
    if name == "michalewicz":
        domain = np.tile([0.0, np.pi], (d, 1))
        parts = tuple((i,) for i in range(d))
        return Benchmark(name, d, domain, m, parts, None)
    if name == "stybtang_transform":
        domain = np.tile([-4.0, 4.0], (d, 1))
        parts, q = _random_block_rotation(d, np.random.default_rng(seed))
        return Benchmark(name, d, domain, m, parts, q)
    raise SpecError(f"unknown benchmark {name!r}; expected one of {BENCHMARK_NAMES}")


def _stybtang(x: np.ndarray) -> float:
    return float(0.5 * np.sum(x**4 - 16.0 * x**2 + 5.0 * x))


def eval_benchmark(b: Benchmark, x) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size != b.d:
        raise ValueError(f"benchmark is {b.d}-dimensional, got {x.size} coordinates")
    if not b.contains(x):
        raise ValueError("point outside the benchmark domain")
    if b.name == "stybtang":
        return _stybtang(x)
    if b.name == "stybtang_transform":
        return _stybtang(b.rotation @ x if b.rotation is not None else x)
    if b.name == "michalewicz":
        i = np.arange(1, b.d + 1)
        return float(-np.sum(np.sin(x) * np.sin(i * x**2 / np.pi) ** (2 * b.m)))
    raise AssertionError(b.name)


def expected_improvement(post: Posterior, best: float) -> np.ndarray:
    """EI for minimization: (best - mu) Phi(z) + sigma phi(z), z = (best - mu)/sigma."""
    mean = np.asarray(post.mean, dtype=np.float64)
    var = np.asarray(post.variance, dtype=np.float64)
    if np.any(var < 0):
        raise ValueError("negative predictive variance")
    sigma = np.sqrt(var)
    improve = best - mean
    out = np.maximum(improve, 0.0)
    pos = sigma > 0
    z = improve[pos] / sigma[pos]
    out[pos] = improve[pos] * norm.cdf(z) + sigma[pos] * norm.pdf(z)
    return out


def oracle_spec(b: Benchmark, rng: np.random.Generator, X: np.ndarray | None = None) -> NetworkSpec:
    """Additive surrogate matching the benchmark's true group structure:
    a trainable nonnegative mix of one rbf kernel per additive group."""
    parts = b.partition or tuple((i,) for i in range(b.d))
    slots = []
    for part in parts:
        prim = Primitive("rbf", dims=tuple(part), shared_lengthscale=True)
        slots.append(PrimitiveSlot(prim, init_raw(prim, b.d, rng, X)))
    k = len(slots)
    w = softplus_inverse((1.0 / k) * np.exp(rng.uniform(-0.2, 0.2, size=(1, k))))
    return NetworkSpec(tuple(slots), (LinearSpec(1, w),))


def surrogate_spec(
    kind: str, b: Benchmark, rng: np.random.Generator, X: np.ndarray | None = None
) -> NetworkSpec:
    """nkn: per-dimension rbf units through the mixing trunk; rbf: one isotropic
    rbf; 2rbf: sum of two isotropic rbf; oracle: true additive structure."""
    if kind == "nkn":
        return preset("bo_additive", b.d, rng, X=X)
    if kind == "rbf":
        return plain_kernel_spec("rbf", b.d, rng, X=X, shared_lengthscale=True)
    if kind == "2rbf":
        slots = tuple(
            PrimitiveSlot(
                Primitive("rbf", shared_lengthscale=True),
                init_raw(Primitive("rbf", shared_lengthscale=True), b.d, rng, X),
            )
            for _ in range(2)
        )
        w = softplus_inverse(0.5 * np.exp(rng.uniform(-0.2, 0.2, size=(1, 2))))
        return NetworkSpec(slots, (LinearSpec(1, w),))
    if kind == "oracle":
        return oracle_spec(b, rng, X)
    raise SpecError(f"unknown surrogate {kind!r}")


@dataclass
class BoResult:
    best_trace: np.ndarray  # best-so-far after each function query
    X: np.ndarray
    y: np.ndarray
    wall_time: float = 0.0
    skipped_refits: int = 0


def run_bo(
    b: Benchmark,
    surrogate: str = "nkn",
    iters: int = 100,
    seed: int = 0,
    n_init: int = 10,
    pool_size: int = 2000,
    refit_iters: int = 500,
    refit_lr: float = 0.01,
    fixed_pool: np.ndarray | None = None,
) -> BoResult:
    """Minimize the benchmark with EI over uniform candidate pools.

    Each iteration refits the surrogate with `refit_iters` Adam steps
    warm-started from the previous parameters and optimizer moments, scores a
    fresh pool of uniform candidates (or `fixed_pool` when given), and queries
    the EI argmax.  Deterministic for a fixed seed.  Surrogate numeric
    failures fall back to querying a random candidate, at most 3 consecutive
    times.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    start = time.monotonic()
    rng = np.random.default_rng(seed)
    lo, hi = b.domain[:, 0], b.domain[:, 1]

    X = rng.uniform(lo, hi, size=(n_init, b.d))
    y = np.array([eval_benchmark(b, row) for row in X])
    best_trace = list(np.minimum.accumulate(y))

    spec = surrogate_spec(surrogate, b, rng, X)
    flat: np.ndarray | None = None
    adam: AdamState | None = None
    skipped = 0
    consecutive_failures = 0

    for _ in range(iters):
        if fixed_pool is not None:
            pool = np.asarray(fixed_pool, dtype=np.float64)
        else:
            pool = rng.uniform(lo, hi, size=(pool_size, b.d))
        model = GpModel.create(spec, X, y, noise_var=0.01)
        if flat is not None:
            keep = min(flat.size, model.store.flat.size)
            warm = model.store.flat.copy()
            warm[:keep] = flat[:keep]
            model = model.with_flat(warm)
        try:
            cfg = TrainConfig(iters=refit_iters, lr=refit_lr, log_every=0, clip_norm=1e3)
            res = fit(model, cfg, state=adam)
            model, adam = res.model, res.adam_state
            flat = model.store.flat.copy()
            post = model.predict(pool)
            ei = expected_improvement(post, best=float(y.min()))
            pick = int(np.argmax(ei))
            consecutive_failures = 0
        except NumericError:
            consecutive_failures += 1
            skipped += 1
            if consecutive_failures > 3:
                raise
            flat, adam = None, None  # drop the poisoned warm start
            pick = int(rng.integers(len(pool)))
        x_next = pool[pick]
        y_next = eval_benchmark(b, x_next)
        X = np.vstack([X, x_next])
        y = np.append(y, y_next)
        best_trace.append(float(y.min()))

    return BoResult(
        best_trace=np.asarray(best_trace),
        X=X,
        y=y,
        wall_time=time.monotonic() - start,
        skipped_refits=skipped,
    )
