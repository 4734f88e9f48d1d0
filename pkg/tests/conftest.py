"""Shared helpers: relative-error metric, random network generator, and an
independent scalar-path evaluator used as the oracle for matrix forwards."""

from __future__ import annotations

import numpy as np
import pytest

from kernelnet.graph import (
    ActivationSpec,
    LinearSpec,
    NetworkSpec,
    PrimitiveSlot,
    ProductSpec,
)
from kernelnet.primitives import Primitive, eval_primitive, init_raw
from kernelnet.util import softplus

REAL_KINDS = ("rbf", "per", "lin", "rq", "wn", "const", "cos")


def rel_err(a, b, floor: float = 1.0) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / np.maximum(floor, np.maximum(np.abs(a), np.abs(b)))))


def random_primitive_slot(rng: np.random.Generator, d: int, kinds=REAL_KINDS) -> PrimitiveSlot:
    kind = str(rng.choice(list(kinds)))
    prim = Primitive(kind)
    raw = rng.normal(0.0, 1.0, size=prim.n_params(d))
    return PrimitiveSlot(prim, raw)


def random_network(
    rng: np.random.Generator,
    d: int,
    max_modules: int = 3,
    kinds=REAL_KINDS,
    allow_activation: bool = False,
) -> NetworkSpec:
    """Random alternating Linear/Product network ending in width 1."""
    n_prim = int(rng.integers(2, 6))
    slots = tuple(random_primitive_slot(rng, d, kinds) for _ in range(n_prim))
    layers: list = []
    width = n_prim
    for _ in range(int(rng.integers(1, max_modules + 1))):
        out = int(rng.integers(1, 5)) * 2
        layers.append(LinearSpec(out, rng.normal(-1.0, 0.8, size=(out, width)),
                                 rng.normal(-2.0, 0.5, size=out) if rng.random() < 0.5 else None))
        width = out
        layers.append(ProductSpec(2))
        width //= 2
        if allow_activation and rng.random() < 0.3:
            layers.append(ActivationSpec("poly", (0.1, 0.5, 0.2)))
    layers.append(LinearSpec(1, rng.normal(-1.0, 0.8, size=(1, width))))
    return NetworkSpec(slots, tuple(layers))


def scalar_forward(spec: NetworkSpec, store, x, y) -> complex:
    """Independent single-pair evaluation: explicit Python loops over units."""
    values = [
        eval_primitive(slot.prim, store.get(("prim", i)), x, y)
        for i, slot in enumerate(spec.primitives)
    ]
    for li, layer in enumerate(spec.layers):
        if isinstance(layer, LinearSpec):
            w = softplus(store.get(("layer", li, "w")))
            b = None if layer.bias_init is None else softplus(store.get(("layer", li, "b")))
            nxt = []
            for o in range(layer.out_width):
                acc = 0.0 + 0.0j
                for i_in, v in enumerate(values):
                    acc += w[o, i_in] * v
                if b is not None:
                    acc += b[o]
                nxt.append(acc)
            values = nxt
        elif isinstance(layer, ProductSpec):
            nxt = []
            for j in range(0, len(values), layer.arity):
                acc = 1.0 + 0.0j
                for v in values[j : j + layer.arity]:
                    acc *= v
                nxt.append(acc)
            values = nxt
        else:
            if layer.tag == "exp":
                values = [np.exp(v) for v in values]
            elif layer.tag == "poly":
                values = [sum(c * v**k for k, c in enumerate(layer.coefficients)) for v in values]
    out = values[0]
    return out.real if spec.output_take_real else out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
