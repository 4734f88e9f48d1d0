"""Compile positive-weighted kernel polynomials into sum/product networks.

A positive-weighted polynomial (PWP) over primitive kernels k_1..k_B is

    k(x, y) = sum_t w_t * prod_j k_j(x, y)^p_tj,   w_t > 0, p_tj in N.

Any such polynomial is exactly representable by a network whose layers never
exceed width 2B+6.  The construction threads a fixed state of B+3 units
through a chain of Linear+Product modules:

    [one, k_1, ..., k_B, accumulator, scratch]

Each module pairs every state unit with a partner so the product layer either
preserves it (partner = one), multiplies the scratch by a primitive or by
itself (squaring), or folds `accumulator + w_t * scratch` and resets the
scratch.  Monomials are built on the scratch unit either by left-to-right
binary exponentiation (real primitives) or one factor at a time (complex
primitives, where sequential rounding errors cancel statistically instead of
being doubled by every squaring).

Weight matrices are data here, not trainable initializations, so raw values
are chosen to make softplus round-trip exact (structural zeros use a raw
whose softplus underflows to 0.0).
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np

from .graph import LinearSpec, NetworkSpec, PrimitiveSlot, ProductSpec
from .primitives import Primitive
from .util import RAW_ZERO, SpecError, exact_softplus_inverse


@dataclass(frozen=True)
class PwpTerm:
    weight: float
    exponents: tuple[int, ...]

    def __post_init__(self):
        if not self.weight > 0:
            raise SpecError(f"PWP weights must be strictly positive, got {self.weight}")
        exps = tuple(int(p) for p in self.exponents)
        if any(p < 0 for p in exps):
            raise SpecError("PWP exponents must be nonnegative integers")
        object.__setattr__(self, "exponents", exps)

    @property
    def degree(self) -> int:
        return sum(self.exponents)


@dataclass(frozen=True)
class PwpExpr:
    terms: tuple[PwpTerm, ...]

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        widths = {len(t.exponents) for t in self.terms}
        if len(widths) > 1:
            raise SpecError("all PWP terms must share the primitive count")

    @property
    def degree(self) -> int:
        return max((t.degree for t in self.terms), default=0)

    def evaluate(self, primitive_values: np.ndarray) -> np.ndarray:
        """Direct evaluation given per-primitive kernel values (stacked on axis 0)."""
        values = np.asarray(primitive_values)
        out = np.zeros(values.shape[1:], dtype=values.dtype)
        for term in self.terms:
            mono = np.ones(values.shape[1:], dtype=values.dtype)
            for j, p in enumerate(term.exponents):
                if p:
                    mono = mono * values[j] ** p
            out = out + term.weight * mono
        return out


def _term_ops(term: PwpTerm, strategy: str) -> list[tuple]:
    """Multiplication schedule turning scratch==1 into the term's monomial.

    binary: left-to-right square-and-multiply over the joint exponent bits
    (logarithmic module count).  sequential: one multiplication per unit of
    degree; more modules, but for unit-modulus complex primitives the rounding
    of each step stays uncorrelated instead of being doubled by squarings,
    which roughly halves the worst-case error of high powers.
    """
    ops: list[tuple] = []
    if strategy == "sequential":
        for j, p in enumerate(term.exponents):
            ops.extend([("mul", j)] * p)
    else:
        bits = max((p.bit_length() for p in term.exponents), default=0)
        for i in range(bits - 1, -1, -1):
            if i != bits - 1:
                ops.append(("square",))
            for j, p in enumerate(term.exponents):
                if (p >> i) & 1:
                    ops.append(("mul", j))
    ops.append(("add", term.weight))
    return ops


def compile_pwp(pwp: PwpExpr, primitives, exponent_strategy: str = "auto") -> NetworkSpec:
    """Build a network that evaluates `pwp` exactly over the given primitives.

    `primitives` is the ordered sequence of PrimitiveSlot the polynomial
    indexes into; every layer of the result has width at most 2B+6.
    exponent_strategy picks the monomial schedule ("binary", "sequential");
    "auto" uses sequential for complex primitives and binary otherwise.
    """
    slots = tuple(primitives)
    B = len(slots)
    if not pwp.terms:
        raise SpecError("cannot compile an empty PWP term list")
    if any(len(t.exponents) != B for t in pwp.terms):
        raise SpecError("PWP exponent vectors must have one entry per primitive")
    if exponent_strategy == "auto":
        exponent_strategy = (
            "sequential" if any(s.prim.is_complex for s in slots) else "binary"
        )
    if exponent_strategy not in ("binary", "sequential"):
        raise SpecError(f"unknown exponent strategy {exponent_strategy!r}")

    one_raw = exact_softplus_inverse(1.0)
    state = B + 3  # [one, k_1..k_B, acc, scr]
    idx_one, idx_acc, idx_scr = 0, B + 1, B + 2

    def module(op: tuple, first: bool) -> list:
        """One Linear(2B+6)+Product(2) module applying `op` to the state."""
        in_width = B if first else state
        w = np.full((2 * state, in_width), RAW_ZERO)
        bias = np.full(2 * state, RAW_ZERO) if first else None

        def route(slot_row: int, src: int):
            # value of pre-product unit slot_row := 1.0 * state[src]
            if first:
                if src == idx_one or src == idx_scr:
                    bias[slot_row] = one_raw  # constants start at 1
                elif src == idx_acc:
                    pass  # accumulator starts at 0: all-zero row
                else:
                    w[slot_row, src - 1] = one_raw  # primitive j sits at input j-1
            else:
                w[slot_row, src] = one_raw

        for unit in range(state):
            a, b = 2 * unit, 2 * unit + 1
            if unit == idx_acc:
                if op[0] == "add":
                    if first:
                        raise AssertionError("add cannot be the first module")
                    w[a, idx_acc] = one_raw
                    w[a, idx_scr] = exact_softplus_inverse(float(op[1]))
                else:
                    route(a, idx_acc)
                route(b, idx_one)
            elif unit == idx_scr:
                if op[0] == "square":
                    route(a, idx_scr)
                    route(b, idx_scr)
                elif op[0] == "mul":
                    route(a, idx_scr)
                    route(b, op[1] + 1)
                else:  # add: reset scratch to one
                    route(a, idx_one)
                    route(b, idx_one)
            else:
                route(a, idx_one)
                route(b, unit)
        return [LinearSpec(2 * state, w, bias), ProductSpec(2)]

    ops: list[tuple] = []
    for term in pwp.terms:
        ops.extend(_term_ops(term, exponent_strategy))
    # the state itself must exist before the first arithmetic op
    layers: list = []
    first = True
    for op in ops:
        if first and op[0] == "add":
            layers.extend(module(("noop",), first=True))
            first = False
        layers.extend(module(op, first=first))
        first = False

    final = np.full((1, state), RAW_ZERO)
    final[0, idx_acc] = one_raw
    layers.append(LinearSpec(1, final))
    return NetworkSpec(primitives=slots, layers=tuple(layers), output_take_real=True)


# ---------------------------------------------------------------------------
# A spectral-mixture family that needs only one complex exponential primitive


def example1_kernel(n: int, d: int):
    """Geometric spectral mixture realizable through one complex exponential.

    Returns (pwp, primitive_slot, reference) where the polynomial applies
    powers 4^t with weights C(n,2)^(2t) to the unit-frequency complex
    exponential, and reference(tau_rows) evaluates the target

        k*(tau) = sum_{t=1}^{n+1} C(n,2)^(2t) cos(4^t * sum(tau))

    directly.  For n=1 the binomial coefficient is zero, so the term list is
    empty and the target is identically zero.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    slot = PrimitiveSlot(Primitive("cexp"), raw_init=np.ones(d))
    c = float(comb(n, 2))
    terms = tuple(
        PwpTerm(c ** (2 * t), (4**t,)) for t in range(1, n + 2) if c > 0
    )
    pwp = PwpExpr(terms)

    def reference(tau: np.ndarray) -> np.ndarray:
        tau = np.asarray(tau, dtype=np.float64)
        s = tau.sum(axis=-1)
        out = np.zeros_like(s)
        for t in range(1, n + 2):
            out += c ** (2 * t) * np.cos(4.0**t * s)
        return out

    return pwp, slot, reference


def example1_network(n: int, d: int):
    """Compiled network for :func:`example1_kernel` plus the reference.

    The degenerate n=1 case (no positive-weight terms) maps to a network with
    an exactly zero output weight.
    """
    pwp, slot, reference = example1_kernel(n, d)
    if pwp.terms:
        return compile_pwp(pwp, (slot,)), reference
    zero = NetworkSpec(
        primitives=(slot,),
        layers=(LinearSpec(1, np.full((1, 1), RAW_ZERO)),),
        output_take_real=True,
    )
    return zero, reference
