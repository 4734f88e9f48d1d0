"""Kernel networks: layered sum/product combinations of primitive kernels.

A network's first layer holds primitive kernel slots; later layers alternate
nonnegative linear mixing (weights softplus-mapped from unconstrained raws,
optional nonnegative per-unit bias acting as an added constant kernel) and
parameter-free elementwise products of consecutive unit groups.  Closure of
kernels under both operations makes every unit of the graph a valid kernel;
an optional final real part supports complex-valued intermediate units.

The module provides dense forward evaluation over point sets and reverse-mode
differentiation of sum(adjoint * Re(output)) with respect to every raw
parameter.  Complex units follow the convention that real and imaginary parts
are independent real quantities, which yields the conjugate-pairing rules

    linear   g_in = W^T g_out
    product  g_a  = g_out * conj(b),   g_b = g_out * conj(a)
    analytic g_in = g_out * conj(f'(z))

for the adjoint g of each unit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .primitives import (
    PairwiseCache,
    Primitive,
    gram,
    gram_diag,
    gram_grad_contract,
)
from .util import NumericError, SpecError, StateError, check_finite, sigmoid, softplus


@dataclass(frozen=True, eq=False)
class PrimitiveSlot:
    prim: Primitive
    raw_init: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "raw_init", np.asarray(self.raw_init, dtype=np.float64).copy()
        )


@dataclass(frozen=True, eq=False)
class LinearSpec:
    """Nonnegative linear mixing layer; weights_init is the raw (pre-softplus)
    matrix of shape (out_width, in_width); bias_init raw vector or None."""

    out_width: int
    weights_init: np.ndarray
    bias_init: np.ndarray | None = None

    def __post_init__(self):
        w = np.asarray(self.weights_init, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != self.out_width:
            raise SpecError(
                f"linear weights shape {w.shape} does not match out_width {self.out_width}"
            )
        object.__setattr__(self, "weights_init", w.copy())
        if self.bias_init is not None:
            b = np.asarray(self.bias_init, dtype=np.float64)
            if b.shape != (self.out_width,):
                raise SpecError(f"linear bias shape {b.shape} != ({self.out_width},)")
            object.__setattr__(self, "bias_init", b.copy())

    @property
    def in_width(self) -> int:
        return self.weights_init.shape[1]


@dataclass(frozen=True)
class ProductSpec:
    """Elementwise product of consecutive groups of `arity` units."""

    arity: int = 2

    def __post_init__(self):
        if self.arity < 2:
            raise SpecError("product arity must be at least 2")


_ACTIVATIONS = ("identity", "exp", "poly")


@dataclass(frozen=True)
class ActivationSpec:
    """Elementwise activation: identity, exp, or a positive-coefficient
    polynomial sum(c_k z^k)."""

    tag: str = "identity"
    coefficients: tuple[float, ...] = ()

    def __post_init__(self):
        if self.tag not in _ACTIVATIONS:
            raise SpecError(f"unknown activation {self.tag!r}")
        if self.tag == "poly":
            if not self.coefficients:
                raise SpecError("poly activation needs coefficients")
            if any(c < 0 for c in self.coefficients):
                raise SpecError("poly activation coefficients must be nonnegative")
        object.__setattr__(
            self, "coefficients", tuple(float(c) for c in self.coefficients)
        )


LayerSpec = LinearSpec | ProductSpec | ActivationSpec


@dataclass(frozen=True, eq=False)
class NetworkSpec:
    """Static description of a kernel network plus initial raw parameters."""

    primitives: tuple[PrimitiveSlot, ...]
    layers: tuple[LayerSpec, ...]
    output_take_real: bool = True

    def __post_init__(self):
        object.__setattr__(self, "primitives", tuple(self.primitives))
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.primitives:
            raise SpecError("network needs at least one primitive")

    @property
    def n_primitives(self) -> int:
        return len(self.primitives)

    @property
    def is_complex(self) -> bool:
        return any(s.prim.is_complex for s in self.primitives)

    def widths(self) -> list[int]:
        """Unit counts entering each layer, ending with the output width."""
        w = [self.n_primitives]
        for i, layer in enumerate(self.layers):
            if isinstance(layer, LinearSpec):
                if layer.in_width != w[-1]:
                    raise SpecError(
                        f"layer[{i}]: linear expects width {layer.in_width}, got {w[-1]}"
                    )
                w.append(layer.out_width)
            elif isinstance(layer, ProductSpec):
                if w[-1] % layer.arity:
                    raise SpecError(
                        f"layer[{i}]: width {w[-1]} not divisible by arity {layer.arity}"
                    )
                w.append(w[-1] // layer.arity)
            else:
                w.append(w[-1])
        return w

    def max_width(self) -> int:
        return max(self.widths())

    def edge_count(self) -> int:
        """Number of weighted/product connections (forward-pass cost measure)."""
        m = 0
        w = self.n_primitives
        for layer in self.layers:
            if isinstance(layer, LinearSpec):
                m += layer.out_width * layer.in_width
                if layer.bias_init is not None:
                    m += layer.out_width
                w = layer.out_width
            elif isinstance(layer, ProductSpec):
                m += w
                w //= layer.arity
            else:
                m += w
        return m

    def validate(self, d: int) -> None:
        widths = self.widths()
        if widths[-1] != 1:
            raise SpecError(f"final layer output width is {widths[-1]}, expected 1")
        for i, slot in enumerate(self.primitives):
            expect = slot.prim.n_params(d)
            if slot.raw_init.shape != (expect,):
                raise SpecError(
                    f"primitive[{i}]:{slot.prim.kind} expects {expect} raw "
                    f"parameters for {d}-d inputs, got {slot.raw_init.shape}"
                )


# ---------------------------------------------------------------------------
# parameter storage


NOISE_KEY = ("noise",)


class ParameterStore:
    """Flat float64 vector of every trainable raw parameter plus a layout map.

    Slices cover, in order: each primitive's raw vector, each linear layer's
    raw weight matrix and (if present) raw bias, and the observation-noise raw
    owned by the GP layer.
    """

    def __init__(self, flat: np.ndarray, layout: dict, shapes: dict):
        self.flat = np.asarray(flat, dtype=np.float64)
        self.layout = layout
        self.shapes = shapes

    @classmethod
    def from_spec(cls, spec: NetworkSpec, d: int, noise_raw: float = 0.0) -> "ParameterStore":
        spec.validate(d)
        layout: dict = {}
        shapes: dict = {}
        chunks: list[np.ndarray] = []
        offset = 0

        def add(key, arr):
            nonlocal offset
            arr = np.asarray(arr, dtype=np.float64)
            layout[key] = (offset, arr.size)
            shapes[key] = arr.shape
            chunks.append(arr.ravel())
            offset += arr.size

        for i, slot in enumerate(spec.primitives):
            add(("prim", i), slot.raw_init)
        for li, layer in enumerate(spec.layers):
            if isinstance(layer, LinearSpec):
                add(("layer", li, "w"), layer.weights_init)
                if layer.bias_init is not None:
                    add(("layer", li, "b"), layer.bias_init)
        add(NOISE_KEY, np.array([noise_raw]))
        return cls(np.concatenate(chunks), layout, shapes)

    def get(self, key) -> np.ndarray:
        off, size = self.layout[key]
        return self.flat[off : off + size].reshape(self.shapes[key])

    def set(self, key, value) -> None:
        off, size = self.layout[key]
        self.flat[off : off + size] = np.asarray(value, dtype=np.float64).ravel()

    @property
    def noise_raw(self) -> float:
        return float(self.get(NOISE_KEY)[0])

    @property
    def param_count(self) -> int:
        return self.flat.size

    def copy(self) -> "ParameterStore":
        return ParameterStore(self.flat.copy(), self.layout, self.shapes)

    def with_flat(self, flat: np.ndarray) -> "ParameterStore":
        if flat.shape != self.flat.shape:
            raise ValueError("flat vector shape mismatch")
        return ParameterStore(np.asarray(flat, dtype=np.float64), self.layout, self.shapes)


# ---------------------------------------------------------------------------
# forward / backward


@dataclass(frozen=True)
class KernelValueMatrix:
    """Dense kernel evaluations for one network node (cross or symmetric)."""

    values: np.ndarray
    symmetric: bool


@dataclass
class Retained:
    """Per-node values kept by a forward pass for reuse in backward."""

    cache: PairwiseCache
    node_values: list[np.ndarray] = field(default_factory=list)
    output: np.ndarray | None = None


def _poly_eval(z: np.ndarray, coeffs: tuple[float, ...]) -> np.ndarray:
    out = np.zeros_like(z)
    for c in reversed(coeffs):
        out = out * z + c
    return out


def _poly_deriv(z: np.ndarray, coeffs: tuple[float, ...]) -> np.ndarray:
    out = np.zeros_like(z)
    for k in range(len(coeffs) - 1, 0, -1):
        out = out * z + k * coeffs[k]
    return out


def forward_matrix(
    spec: NetworkSpec,
    store: ParameterStore,
    X: np.ndarray,
    Y: np.ndarray | None = None,
    cache: PairwiseCache | None = None,
    retain: bool = False,
    finite_checks: bool = True,
):
    """Evaluate the network's output kernel matrix over X x Y.

    Returns a KernelValueMatrix, or (KernelValueMatrix, Retained) when
    retain=True.  Cost is O(n*m) per network connection.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = X if Y is None else np.asarray(Y, dtype=np.float64)
    if X.ndim != 2 or Y.ndim != 2 or X.shape[1] != Y.shape[1]:
        raise ValueError(f"X, Y must be 2-d with equal column counts, got {X.shape}, {Y.shape}")
    if X.shape[0] == 0 or Y.shape[0] == 0:
        raise ValueError("X and Y must be nonempty")
    spec.validate(X.shape[1])
    if cache is None:
        cache = PairwiseCache(X, Y)

    dtype = np.complex128 if spec.is_complex else np.float64
    n, m = X.shape[0], Y.shape[0]
    values = np.empty((spec.n_primitives, n, m), dtype=dtype)
    for i, slot in enumerate(spec.primitives):
        values[i] = gram(slot.prim, store.get(("prim", i)), X, Y, cache)
        if finite_checks:
            check_finite(values[i], f"primitive[{i}]:{slot.prim.kind}")

    retained = Retained(cache=cache) if retain else None
    if retain:
        retained.node_values.append(values)

    for li, layer in enumerate(spec.layers):
        if isinstance(layer, LinearSpec):
            w = softplus(store.get(("layer", li, "w")))
            flat = values.reshape(values.shape[0], n * m)
            out = (w @ flat).reshape(layer.out_width, n, m)
            if layer.bias_init is not None:
                out += softplus(store.get(("layer", li, "b")))[:, None, None]
            values = out
            name = f"layer[{li}]:linear"
        elif isinstance(layer, ProductSpec):
            grouped = values.reshape(-1, layer.arity, n, m)
            values = grouped.prod(axis=1)
            name = f"layer[{li}]:product"
        else:
            if layer.tag == "exp":
                values = np.exp(values)
            elif layer.tag == "poly":
                values = _poly_eval(values, layer.coefficients)
            name = f"layer[{li}]:activation"
        if finite_checks:
            check_finite(values, name)
        if retain:
            retained.node_values.append(values)

    out = values[0]
    if spec.output_take_real:
        out = np.ascontiguousarray(out.real)
    result = KernelValueMatrix(values=out, symmetric=cache.symmetric)
    if retain:
        retained.output = out
        return result, retained
    return result


def backward(
    spec: NetworkSpec,
    store: ParameterStore,
    retained: Retained | None,
    adjoint: np.ndarray,
) -> np.ndarray:
    """Gradient of sum(adjoint * Re(output)) over the flat parameter vector.

    The noise slot is left at zero; the GP layer owns its contribution.
    """
    if retained is None or retained.output is None or not retained.node_values:
        raise StateError("backward requires the Retained values of a forward pass")
    adjoint = np.asarray(adjoint, dtype=np.float64)
    if adjoint.shape != retained.output.shape:
        raise ValueError(
            f"adjoint shape {adjoint.shape} does not match output {retained.output.shape}"
        )

    grad = np.zeros_like(store.flat)
    is_complex = spec.is_complex
    dtype = np.complex128 if is_complex else np.float64
    conj = np.conj if is_complex else (lambda x: x)
    g = adjoint.astype(dtype)[None, :, :]

    for li in range(len(spec.layers) - 1, -1, -1):
        layer = spec.layers[li]
        vin = retained.node_values[li]
        vout = retained.node_values[li + 1]
        if isinstance(layer, LinearSpec):
            raw_w = store.get(("layer", li, "w"))
            w = softplus(raw_w)
            nm = vin.shape[1] * vin.shape[2]
            gw = (g.reshape(g.shape[0], nm) @ conj(vin).reshape(vin.shape[0], nm).T).real
            off, size = store.layout[("layer", li, "w")]
            grad[off : off + size] = (gw * sigmoid(raw_w)).ravel()
            if layer.bias_init is not None:
                raw_b = store.get(("layer", li, "b"))
                gb = g.real.sum(axis=(1, 2))
                off, size = store.layout[("layer", li, "b")]
                grad[off : off + size] = gb * sigmoid(raw_b)
            g = (w.T @ g.reshape(g.shape[0], nm)).reshape(vin.shape)
        elif isinstance(layer, ProductSpec):
            a = layer.arity
            grouped = vin.reshape(-1, a, *vin.shape[1:])
            if a == 2:
                gin = np.empty_like(grouped)
                np.multiply(g, conj(grouped[:, 1]), out=gin[:, 0])
                np.multiply(g, conj(grouped[:, 0]), out=gin[:, 1])
            else:
                prefix = np.ones_like(grouped)
                suffix = np.ones_like(grouped)
                prefix[:, 1:] = np.cumprod(grouped[:, :-1], axis=1)
                suffix[:, :-1] = np.cumprod(grouped[:, :0:-1], axis=1)[:, ::-1]
                gin = g[:, None] * conj(prefix * suffix)
            g = gin.reshape(vin.shape)
        else:
            if layer.tag == "exp":
                g = g * conj(vout)
            elif layer.tag == "poly":
                g = g * conj(_poly_deriv(vin, layer.coefficients))

    cache = retained.cache
    prim_values = retained.node_values[0]
    for i, slot in enumerate(spec.primitives):
        raw = store.get(("prim", i))
        off, size = store.layout[("prim", i)]
        grad[off : off + size] = gram_grad_contract(
            slot.prim, raw, g[i], cache, prim_values[i]
        )
    return grad


def forward_diag(spec: NetworkSpec, store: ParameterStore, X: np.ndarray) -> np.ndarray:
    """Vector of k(x_i, x_i) without forming the full matrix; O(n) per edge."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("X must be a nonempty 2-d array")
    spec.validate(X.shape[1])
    dtype = np.complex128 if spec.is_complex else np.float64
    values = np.empty((spec.n_primitives, X.shape[0]), dtype=dtype)
    for i, slot in enumerate(spec.primitives):
        values[i] = gram_diag(slot.prim, store.get(("prim", i)), X)
    for li, layer in enumerate(spec.layers):
        if isinstance(layer, LinearSpec):
            out = softplus(store.get(("layer", li, "w"))) @ values
            if layer.bias_init is not None:
                out += softplus(store.get(("layer", li, "b")))[:, None]
            values = out
        elif isinstance(layer, ProductSpec):
            values = values.reshape(-1, layer.arity, X.shape[0]).prod(axis=1)
        else:
            if layer.tag == "exp":
                values = np.exp(values)
            elif layer.tag == "poly":
                values = _poly_eval(values, layer.coefficients)
    out = values[0]
    if spec.output_take_real:
        out = np.ascontiguousarray(out.real)
    check_finite(out, "output diagonal")
    return out


# ---------------------------------------------------------------------------
# JSON schema "nkn-spec/1"

SPEC_SCHEMA = "nkn-spec/1"


def spec_to_dict(spec: NetworkSpec) -> dict:
    layers = []
    for layer in spec.layers:
        if isinstance(layer, LinearSpec):
            layers.append(
                {
                    "kind": "linear",
                    "out_width": layer.out_width,
                    "weights_raw": layer.weights_init.tolist(),
                    "bias_raw": None if layer.bias_init is None else layer.bias_init.tolist(),
                }
            )
        elif isinstance(layer, ProductSpec):
            layers.append({"kind": "product", "arity": layer.arity})
        else:
            layers.append(
                {
                    "kind": "activation",
                    "tag": layer.tag,
                    "coefficients": list(layer.coefficients),
                }
            )
    return {
        "schema": SPEC_SCHEMA,
        "primitives": [
            {
                "kind": s.prim.kind,
                "dims": None if s.prim.dims is None else list(s.prim.dims),
                "shared_lengthscale": s.prim.shared_lengthscale,
                "raw_init": s.raw_init.tolist(),
            }
            for s in spec.primitives
        ],
        "layers": layers,
        "output_take_real": spec.output_take_real,
    }


def spec_from_dict(doc: dict) -> NetworkSpec:
    if doc.get("schema") != SPEC_SCHEMA:
        raise SpecError(f"expected schema {SPEC_SCHEMA!r}, got {doc.get('schema')!r}")
    prims = tuple(
        PrimitiveSlot(
            prim=Primitive(
                kind=p["kind"],
                dims=None if p.get("dims") is None else tuple(p["dims"]),
                shared_lengthscale=bool(p.get("shared_lengthscale", False)),
            ),
            raw_init=np.asarray(p["raw_init"], dtype=np.float64),
        )
        for p in doc["primitives"]
    )
    layers: list[LayerSpec] = []
    for entry in doc["layers"]:
        kind = entry["kind"]
        if kind == "linear":
            bias = entry.get("bias_raw")
            layers.append(
                LinearSpec(
                    out_width=int(entry["out_width"]),
                    weights_init=np.asarray(entry["weights_raw"], dtype=np.float64),
                    bias_init=None if bias is None else np.asarray(bias, dtype=np.float64),
                )
            )
        elif kind == "product":
            layers.append(ProductSpec(arity=int(entry["arity"])))
        elif kind == "activation":
            layers.append(
                ActivationSpec(
                    tag=entry["tag"], coefficients=tuple(entry.get("coefficients", ()))
                )
            )
        else:
            raise SpecError(f"unknown layer kind {kind!r}")
    return NetworkSpec(
        primitives=prims,
        layers=tuple(layers),
        output_take_real=bool(doc.get("output_take_real", True)),
    )
