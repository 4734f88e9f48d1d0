"""Adam ascent on the log marginal likelihood."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .gp import GpModel
from .util import NumericError


@dataclass(frozen=True)
class TrainConfig:
    iters: int = 20000
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    log_every: int = 100
    seed: int = 0
    clip_norm: float = 1e3

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.iters < 1:
            raise ValueError("iters must be >= 1")

    def to_dict(self) -> dict:
        return {
            "iters": self.iters,
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "log_every": self.log_every,
            "seed": self.seed,
            "clip_norm": self.clip_norm,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in doc.items() if k in known})


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def clip_global_norm(grad: np.ndarray, max_norm: float) -> np.ndarray:
    norm = float(np.linalg.norm(grad))
    if max_norm > 0 and norm > max_norm:
        return grad * (max_norm / norm)
    return grad


def adam_step(
    state: AdamState, params: np.ndarray, grad: np.ndarray, cfg: TrainConfig
) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update, ascending along `grad`."""
    if not np.all(np.isfinite(grad)):
        raise NumericError(f"non-finite gradient at iteration {state.t + 1}")
    if grad.shape != params.shape:
        raise ValueError("gradient shape does not match parameters")
    t = state.t + 1
    m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grad
    v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grad**2
    m_hat = m / (1.0 - cfg.beta1**t)
    v_hat = v / (1.0 - cfg.beta2**t)
    new_params = params + cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
    return new_params, AdamState(m, v, t)


@dataclass
class FitResult:
    model: GpModel
    trace: list[tuple[int, float, float]] = field(default_factory=list)
    wall_time: float = 0.0
    adam_state: AdamState | None = None

    @property
    def final_lml(self) -> float:
        return self.trace[-1][1]


def fit(
    model: GpModel,
    cfg: TrainConfig,
    state: AdamState | None = None,
    callback=None,
) -> FitResult:
    """Run cfg.iters Adam steps maximizing the log marginal likelihood.

    Returns the trained model and a (iteration, lml, seconds) trace sampled
    every cfg.log_every steps plus the endpoints.  Deterministic given the
    data, config, and starting parameters; wall-clock entries are the only
    run-dependent values.  Passing `state` warm-starts the moment estimates
    for incremental refits.
    """
    start = time.monotonic()
    flat = model.store.flat.copy()
    adam = state if state is not None else AdamState.zeros(flat.size)
    current = model.with_flat(flat)
    trace: list[tuple[int, float, float]] = []
    lml = None
    for it in range(cfg.iters):
        try:
            lml, grad = current.lml_and_grad()
        except NumericError as err:
            raise NumericError(f"at iteration {adam.t + 1}: {err}") from err
        if it == 0 or (cfg.log_every > 0 and it % cfg.log_every == 0):
            trace.append((it, lml, time.monotonic() - start))
        grad = clip_global_norm(grad, cfg.clip_norm)
        flat, adam = adam_step(adam, flat, grad, cfg)
        current = current.with_flat(flat)
        if callback is not None:
            callback(it, lml, current)
    final_lml = current.lml()
    trace.append((cfg.iters, final_lml, time.monotonic() - start))
    return FitResult(
        model=current,
        trace=trace,
        wall_time=time.monotonic() - start,
        adam_state=adam,
    )
