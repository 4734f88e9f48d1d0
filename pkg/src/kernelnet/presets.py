"""Named network architectures with data-driven initialization.

Linear weights start near 1/fan-in (so each mixed unit begins close to the
mean of its inputs) with +-20% log-jitter; per-unit biases, where present,
start small.  Primitive hyperparameters are initialized from the training
inputs when provided: lengthscales from median pairwise distances, periods
log-spaced across the data span, frequencies at multiples of 2*pi/span.
"""

from __future__ import annotations

import numpy as np

from .graph import LinearSpec, NetworkSpec, PrimitiveSlot, ProductSpec
from .primitives import Primitive, init_raw
from .util import SpecError, softplus_inverse

PRESET_NAMES = ("heuristic", "default6", "sm", "bo_additive")


def _linear_init(
    out_width: int,
    in_width: int,
    rng: np.random.Generator,
    bias: bool,
    weight_target: float | None = None,
) -> LinearSpec:
    target = (1.0 / in_width) if weight_target is None else weight_target
    w = target * np.exp(rng.uniform(-0.2, 0.2, size=(out_width, in_width)))
    b = None
    if bias:
        b = softplus_inverse(0.05 * np.exp(rng.uniform(-0.2, 0.2, size=out_width)))
    return LinearSpec(out_width, softplus_inverse(w), b)


def _mixing_stack(n_in: int, rng: np.random.Generator, bias: bool = True) -> tuple:
    """The Linear8-Product4-Linear4-Product2-Linear1 trunk."""
    return (
        _linear_init(8, n_in, rng, bias),
        ProductSpec(2),
        _linear_init(4, 4, rng, bias),
        ProductSpec(2),
        _linear_init(1, 2, rng, bias),
    )


def _slot(kind: str, d: int, rng, X, **kw) -> PrimitiveSlot:
    dims = kw.pop("dims", None)
    shared = kw.pop("shared_lengthscale", False)
    prim = Primitive(kind, dims=dims, shared_lengthscale=shared)
    return PrimitiveSlot(prim, init_raw(prim, d, rng, X, **kw))


def _period_fracs(count: int) -> np.ndarray:
    return np.geomspace(1.0 / 20.0, 1.0, count + 2)[1:-1]


def preset(
    name: str,
    d: int,
    rng: np.random.Generator | None = None,
    X: np.ndarray | None = None,
    q: int | None = None,
) -> NetworkSpec:
    """Build a named architecture for d-dimensional inputs.

    heuristic      one nonnegative mix of periodic, linear, smooth, constant
    default6       2 rq + 2 rbf + 2 lin through the 8-4-4-2-1 mixing trunk
    sm(q)          q smooth*cosine products summed: a trainable spectral mixture
    bo_additive    one 1-d rbf per input dimension through the mixing trunk
    """
    if rng is None:
        rng = np.random.default_rng(0)
    if name == "heuristic":
        slots = (
            _slot("per", d, rng, X, period_frac=float(_period_fracs(1)[0])),
            _slot("lin", d, rng, X),
            _slot("rbf", d, rng, X),
            _slot("const", d, rng, X),
        )
        return NetworkSpec(slots, ( _linear_init(1, 4, rng, bias=False), ))
    if name == "default6":
        slots = (
            _slot("rq", d, rng, X),
            _slot("rq", d, rng, X),
            _slot("rbf", d, rng, X),
            _slot("rbf", d, rng, X),
            _slot("lin", d, rng, X),
            _slot("lin", d, rng, X),
        )
        return NetworkSpec(slots, _mixing_stack(6, rng))
    if name == "sm":
        if not q or q < 1:
            raise SpecError("sm preset requires q >= 1 mixture components")
        slots = []
        for comp in range(1, q + 1):
            slots.append(_slot("rbf", d, rng, X))
            slots.append(_slot("cos", d, rng, X, freq_multiple=comp))
        layers = (ProductSpec(2), _linear_init(1, q, rng, bias=False))
        return NetworkSpec(tuple(slots), layers)
    if name == "bo_additive":
        slots = tuple(_slot("rbf", d, rng, X, dims=(i,)) for i in range(d))
        return NetworkSpec(slots, _mixing_stack(d, rng))
    raise SpecError(f"unknown preset {name!r}; expected one of {PRESET_NAMES}")


def plain_kernel_spec(
    kind: str,
    d: int,
    rng: np.random.Generator | None = None,
    X: np.ndarray | None = None,
    shared_lengthscale: bool = False,
) -> NetworkSpec:
    """A single primitive exposed directly as the output kernel (baselines)."""
    if rng is None:
        rng = np.random.default_rng(0)
    slot = _slot(kind, d, rng, X, shared_lengthscale=shared_lengthscale)
    return NetworkSpec((slot,), ())
