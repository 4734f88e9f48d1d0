"""Exact Gaussian-process regression on a network kernel.

Given training pairs (X, y) and a kernel network, the model is

    y = f(X) + eps,   f ~ GP(0, k_theta),   eps ~ N(0, noise_var * I)

with noise_var = softplus(noise_raw).  The log marginal likelihood

    L = -1/2 y^T (K + noise_var I)^{-1} y - 1/2 ln|K + noise_var I| - n/2 ln 2pi

is computed through a Cholesky factorization with an escalating diagonal
jitter ladder.  Its gradient uses the trace identity

    dL/dtheta = tr(Abar dK/dtheta),   Abar = 1/2 (alpha alpha^T - (K+s2 I)^{-1})

with Abar handed to the network's reverse pass as the output adjoint; the
noise raw receives tr(Abar) * sigmoid(noise_raw) through the diagonal.

Inputs and targets are standardized to zero mean / unit scale internally and
all predictions are returned in original units.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.linalg.lapack import dpotri

from .graph import (
    NOISE_KEY,
    NetworkSpec,
    ParameterStore,
    backward,
    forward_diag,
    forward_matrix,
    spec_from_dict,
    spec_to_dict,
)
from .primitives import PairwiseCache
from .util import NumericError, SpecError, sigmoid, softplus, softplus_inverse

LOG_2PI = float(np.log(2.0 * np.pi))

# Relative jitter ladder tried before declaring the kernel matrix unusable.
JITTER_LEVELS = (0.0, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2)


@dataclass
class Standardizer:
    """Per-column affine map for X and a scalar affine map for y."""

    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: float
    y_scale: float

    @classmethod
    def fit(cls, X: np.ndarray, y: np.ndarray) -> "Standardizer":
        if X.shape[0] == 0:
            return cls(np.zeros(X.shape[1]), np.ones(X.shape[1]), 0.0, 1.0)
        x_mean = X.mean(axis=0)
        x_scale = X.std(axis=0)
        x_scale[~(x_scale > 0)] = 1.0
        y_mean = float(y.mean())
        y_scale = float(y.std())
        if not y_scale > 0:
            y_scale = 1.0
        return cls(x_mean, x_scale, y_mean, y_scale)

    @classmethod
    def identity(cls, d: int) -> "Standardizer":
        return cls(np.zeros(d), np.ones(d), 0.0, 1.0)

    def transform_x(self, X: np.ndarray) -> np.ndarray:
        return (X - self.x_mean) / self.x_scale

    def transform_y(self, y: np.ndarray) -> np.ndarray:
        return (y - self.y_mean) / self.y_scale

    def restore_mean(self, mean_std: np.ndarray) -> np.ndarray:
        return self.y_mean + self.y_scale * mean_std

    def restore_variance(self, var_std: np.ndarray) -> np.ndarray:
        return self.y_scale**2 * var_std

    def to_dict(self) -> dict:
        return {
            "x_mean": self.x_mean.tolist(),
            "x_scale": self.x_scale.tolist(),
            "y_mean": self.y_mean,
            "y_scale": self.y_scale,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Standardizer":
        return cls(
            np.asarray(doc["x_mean"], dtype=np.float64),
            np.asarray(doc["x_scale"], dtype=np.float64),
            float(doc["y_mean"]),
            float(doc["y_scale"]),
        )


@dataclass
class Posterior:
    """Predictive mean and variance (noise included) in original y units."""

    mean: np.ndarray
    variance: np.ndarray


class GpModel:
    """A kernel network bound to a training set, with trainable parameters."""

    def __init__(
        self,
        spec: NetworkSpec,
        store: ParameterStore,
        train_x: np.ndarray,
        train_y: np.ndarray,
        standardizer: Standardizer,
    ):
        if spec.is_complex and not spec.output_take_real:
            raise SpecError("GP regression requires a real-valued output kernel")
        self.spec = spec
        self.store = store
        self.train_x = np.asarray(train_x, dtype=np.float64)
        self.train_y = np.asarray(train_y, dtype=np.float64)
        self.standardizer = standardizer
        self.xs = standardizer.transform_x(self.train_x)
        self.ys = standardizer.transform_y(self.train_y)
        self._cache = PairwiseCache(self.xs, self.xs) if self.n > 0 else None

    @classmethod
    def create(
        cls,
        spec: NetworkSpec,
        X: np.ndarray,
        y: np.ndarray,
        noise_var: float = 0.1,
        standardize: bool = True,
    ) -> "GpModel":
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(y, dtype=np.float64).ravel()
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
        if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
            raise ValueError("training data must be finite")
        std = Standardizer.fit(X, y) if standardize else Standardizer.identity(X.shape[1])
        store = ParameterStore.from_spec(spec, X.shape[1], noise_raw=float(softplus_inverse(noise_var)))
        return cls(spec, store, X, y, std)

    @property
    def n(self) -> int:
        return self.train_x.shape[0]

    @property
    def d(self) -> int:
        return self.train_x.shape[1]

    @property
    def noise_var(self) -> float:
        return float(softplus(self.store.noise_raw))

    def with_flat(self, flat: np.ndarray) -> "GpModel":
        """Same data and cache, different parameter vector."""
        clone = object.__new__(GpModel)
        clone.spec = self.spec
        clone.store = self.store.with_flat(flat)
        clone.train_x, clone.train_y = self.train_x, self.train_y
        clone.standardizer = self.standardizer
        clone.xs, clone.ys = self.xs, self.ys
        clone._cache = self._cache
        return clone

    # convenience method forms of the module-level operations
    def lml(self) -> float:
        return log_marginal_likelihood(self)

    def lml_and_grad(self) -> tuple[float, np.ndarray]:
        return _lml_and_grad(self, want_grad=True)

    def predict(self, X_star: np.ndarray) -> Posterior:
        return predict(self, X_star)


def _chol_with_jitter(K: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky of K (+ jitter * mean-diagonal if needed)."""
    mean_diag = float(np.mean(np.diag(K)))
    scale = mean_diag if mean_diag > 0 else 1.0
    last_err: Exception | None = None
    for level in JITTER_LEVELS:
        try:
            shifted = K if level == 0.0 else K + (level * scale) * np.eye(K.shape[0])
            return cholesky(shifted, lower=True, check_finite=False), level * scale
        except np.linalg.LinAlgError as err:  # pragma: no cover - scipy raises its own
            last_err = err
        except Exception as err:
            last_err = err
    diag = np.diag(K)
    raise NumericError(
        "Cholesky factorization failed at every jitter level "
        f"(up to {JITTER_LEVELS[-1]:.0e} * mean diag); "
        f"diag range [{diag.min():.3e}, {diag.max():.3e}], "
        f"mean {mean_diag:.3e}: {last_err}"
    )


def _factorize(model: GpModel, retain: bool):
    """Shifted kernel matrix, its Cholesky factor, and alpha = Ktilde^{-1} y."""
    if model.n < 1:
        raise ValueError("log marginal likelihood needs at least one training point")
    result = forward_matrix(
        model.spec, model.store, model.xs, model.xs, cache=model._cache, retain=retain
    )
    out, retained = result if retain else (result, None)
    K = out.values
    K = 0.5 * (K + K.T)  # kill factorization-order asymmetry
    Ktilde = K + model.noise_var * np.eye(model.n)
    L, jitter = _chol_with_jitter(Ktilde)
    alpha = cho_solve((L, True), model.ys, check_finite=False)
    return K, L, alpha, retained


def log_marginal_likelihood(model: GpModel) -> float:
    """ln N(y | 0, K + noise_var I) on the standardized training targets."""
    _, L, alpha, _ = _factorize(model, retain=False)
    return float(
        -0.5 * model.ys @ alpha
        - np.sum(np.log(np.diag(L)))
        - 0.5 * model.n * LOG_2PI
    )


def _lml_and_grad(model: GpModel, want_grad: bool = True):
    _, L, alpha, retained = _factorize(model, retain=True)
    lml = float(
        -0.5 * model.ys @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * model.n * LOG_2PI
    )
    if not want_grad:
        return lml, None
    kinv, info = dpotri(L, lower=1)
    if info != 0:
        raise NumericError(f"triangular inversion failed (dpotri info={info})")
    kinv = kinv + np.tril(kinv, -1).T
    abar = 0.5 * (np.outer(alpha, alpha) - kinv)
    grad = backward(model.spec, model.store, retained, abar)
    off, _ = model.store.layout[NOISE_KEY]
    grad[off] = float(np.trace(abar)) * sigmoid(model.store.noise_raw)
    return lml, grad


def grad_log_marginal(model: GpModel) -> np.ndarray:
    """Gradient of the log marginal likelihood over the flat parameter vector."""
    return _lml_and_grad(model, want_grad=True)[1]


def predict(model: GpModel, X_star: np.ndarray) -> Posterior:
    """Posterior predictive mean and variance (with noise) at new inputs."""
    X_star = np.asarray(X_star, dtype=np.float64)
    if X_star.ndim == 1:
        X_star = X_star[:, None]
    if X_star.shape[1] != model.d and model.n > 0:
        raise ValueError(f"X_star has {X_star.shape[1]} columns, expected {model.d}")
    xs_star = model.standardizer.transform_x(X_star)
    k_star_diag = forward_diag(model.spec, model.store, xs_star)

    if model.n == 0:
        mean_std = np.zeros(X_star.shape[0])
        var_std = k_star_diag + model.noise_var
    else:
        _, L, alpha, _ = _factorize(model, retain=False)
        k_cross = forward_matrix(model.spec, model.store, xs_star, model.xs).values
        mean_std = k_cross @ alpha
        v = solve_triangular(L, k_cross.T, lower=True, check_finite=False)
        var_std = k_star_diag - np.einsum("ij,ij->j", v, v) + model.noise_var
    var_std = np.maximum(var_std, 0.0)
    return Posterior(
        mean=model.standardizer.restore_mean(mean_std),
        variance=model.standardizer.restore_variance(var_std),
    )


# ---------------------------------------------------------------------------
# checkpoints, JSON schema "nkn-model/1"

MODEL_SCHEMA = "nkn-model/1"


def model_to_dict(model: GpModel) -> dict:
    return {
        "schema": MODEL_SCHEMA,
        "spec": spec_to_dict(model.spec),
        "params": model.store.flat.tolist(),
        "noise_raw": model.store.noise_raw,
        "standardizer": model.standardizer.to_dict(),
        "train_x": model.train_x.tolist(),
        "train_y": model.train_y.tolist(),
    }


def model_from_dict(doc: dict) -> GpModel:
    if doc.get("schema") != MODEL_SCHEMA:
        raise SpecError(f"expected schema {MODEL_SCHEMA!r}, got {doc.get('schema')!r}")
    spec = spec_from_dict(doc["spec"])
    train_x = np.asarray(doc["train_x"], dtype=np.float64)
    train_y = np.asarray(doc["train_y"], dtype=np.float64)
    if train_x.ndim == 1:
        train_x = train_x.reshape(len(train_y), -1)
    if train_x.size == 0:
        train_x = train_x.reshape(0, max(1, train_x.shape[-1] if train_x.ndim else 1))
    std = Standardizer.from_dict(doc["standardizer"])
    d = train_x.shape[1] if train_x.shape[0] else len(std.x_mean)
    store = ParameterStore.from_spec(spec, d)
    flat = np.asarray(doc["params"], dtype=np.float64)
    store = store.with_flat(flat)
    model = GpModel(spec, store, train_x.reshape(-1, d), train_y, std)
    return model
