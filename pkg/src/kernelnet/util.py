"""Shared numeric helpers: positivity transforms and error types."""

from __future__ import annotations

import numpy as np
from scipy.special import expit

# Floor added to softplus outputs that end up in a denominator (lengthscales,
# periods, rational-quadratic shape), so a runaway raw parameter cannot
# produce a division by zero.
SOFTPLUS_FLOOR = 1e-8


class SpecError(ValueError):
    """A network or experiment description violates its structural contract."""


class NumericError(ArithmeticError):
    """A numeric computation failed (non-finite values, factorization, CG)."""


class StateError(RuntimeError):
    """An operation was called before the state it needs was produced."""


def softplus(raw):
    """Elementwise ln(1 + e^x), stable for large |x|."""
    return np.logaddexp(0.0, raw)


def sigmoid(raw):
    """Derivative of softplus."""
    return expit(raw)


def softplus_inverse(value):
    """Inverse of softplus; value must be positive.

    Stable at both ends: for large v, ln(e^v - 1) = v + ln(1 - e^-v).
    """
    v = np.asarray(value, dtype=np.float64)
    if np.any(v <= 0):
        raise ValueError("softplus_inverse requires positive input")
    small = v < 30.0
    out = np.where(
        small,
        np.log(np.expm1(np.where(small, v, 1.0))),
        v + np.log1p(-np.exp(-np.where(small, 1.0, v))),
    )
    return out if out.ndim else float(out)


def exact_softplus_inverse(value: float) -> float:
    """softplus_inverse nudged by ulps so softplus(result) == value exactly.

    Used by the polynomial compiler, where weight matrices are data and
    round-trip error through the positivity transform would otherwise
    accumulate across many layers.  Falls back to the plain inverse when no
    exact preimage exists within a few ulps.
    """
    if value <= 0:
        raise ValueError("exact_softplus_inverse requires positive input")
    raw = float(softplus_inverse(value))
    if float(softplus(raw)) == value:
        return raw
    for steps in range(1, 6):
        for cand in (np.nextafter(raw, np.inf), np.nextafter(raw, -np.inf)):
            for _ in range(steps - 1):
                cand = np.nextafter(cand, cand * 2 if cand > raw else -np.inf)
            if float(softplus(cand)) == value:
                return float(cand)
        raw_up = raw
        raw_dn = raw
        for _ in range(steps):
            raw_up = np.nextafter(raw_up, np.inf)
            raw_dn = np.nextafter(raw_dn, -np.inf)
        for cand in (raw_up, raw_dn):
            if float(softplus(cand)) == value:
                return float(cand)
    return raw


# Raw value whose softplus is exactly 0.0 in float64 (e^-800 underflows),
# used for structural zeros in compiled weight matrices.
RAW_ZERO = -800.0


def tune_allocator(threshold_bytes: int = 512 * 1024 * 1024) -> bool:
    """Keep transient numpy buffers on the heap instead of mmap-ing them.

    Training loops allocate many MB-scale temporaries per step; glibc's
    default dynamic mmap threshold turns each one into an mmap/munmap pair
    plus a page-fault storm, which can dominate the actual arithmetic.
    Raising the threshold lets the allocator reuse those buffers.  No-op on
    non-glibc platforms.
    """
    import ctypes

    try:
        libc = ctypes.CDLL("libc.so.6", use_errno=True)
        m_trim_threshold, m_mmap_threshold = -1, -3
        ok = libc.mallopt(m_mmap_threshold, threshold_bytes)
        ok &= libc.mallopt(m_trim_threshold, threshold_bytes)
        return bool(ok)
    except (OSError, AttributeError):
        return False


def as_float_matrix(x, name: str = "array") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ValueError(f"{name} must be a 2-d array, got shape {x.shape}")
    return x


def check_finite(arr: np.ndarray, node: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in node '{node}'")
