"""Input validation helpers, in the spirit of ``sklearn.utils.validation``."""

from __future__ import annotations

import math
from numbers import Integral, Real

import numpy as np

from .exceptions import ContractViolation

#: tolerance accepted for user-supplied probability vectors
PROB_TOL = 1e-9
#: drift that internal computations may silently renormalize away
DRIFT_TOL = 1e-12


def check_prob_vector(v, *, n=None, tol=PROB_TOL, name="probability vector",
                      error=ContractViolation):
    """Return ``v`` as a float array after checking it lies on the simplex.

    Entries must be nonnegative and sum to one within ``tol``. When ``n`` is
    given the length must match.
    """
    arr = np.asarray(v, dtype=float)
    if arr.ndim != 1:
        raise error(f"{name} must be one-dimensional, got shape {arr.shape}")
    if n is not None and arr.shape[0] != n:
        raise error(f"{name} must have length {n}, got {arr.shape[0]}")
    if arr.shape[0] == 0:
        raise error(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise error(f"{name} has non-finite entries")
    if np.any(arr < 0):
        raise error(f"{name} has negative entries: {arr}")
    total = arr.sum()
    if abs(total - 1.0) > tol:
        raise error(f"{name} sums to {total!r}, not 1")
    return arr


def check_stochastic_rows(arr, *, tol=PROB_TOL, name="array", error=ContractViolation):
    """Check that every slice along the last axis is a probability vector."""
    arr = np.asarray(arr, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise error(f"{name} has non-finite entries")
    neg = np.argwhere(arr < 0)
    if neg.size:
        raise error(f"{name} has a negative entry at index {tuple(int(i) for i in neg[0])}")
    dev = np.abs(arr.sum(axis=-1) - 1.0)
    bad = np.argwhere(dev > tol)
    if bad.size:
        idx = tuple(int(i) for i in bad[0])
        raise error(f"{name} row {idx} sums to {arr[idx].sum()!r}, not 1")
    return arr


def check_positive(value, name, *, allow_zero=False):
    """Check a finite, strictly positive (or nonnegative) real scalar."""
    if isinstance(value, bool) or not isinstance(value, Real):
        raise ContractViolation(f"{name} must be a real number, got {value!r}")
    value = float(value)
    if not math.isfinite(value) or value < 0 or (value == 0 and not allow_zero):
        bound = ">= 0" if allow_zero else "> 0"
        raise ContractViolation(f"{name} must be finite and {bound}, got {value!r}")
    return value


def check_positive_int(value, name, *, minimum=1):
    if isinstance(value, bool) or not isinstance(value, Integral) or value < minimum:
        raise ContractViolation(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def check_unit_interval(value, name):
    """Check ``0 < value < 1``."""
    value = check_positive(value, name)
    if value >= 1:
        raise ContractViolation(f"{name} must lie in (0, 1), got {value!r}")
    return value


def check_finite(arr, name):
    arr = np.asarray(arr, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ContractViolation(f"{name} has non-finite entries")
    return arr


def check_same_shape(a, b, what):
    if np.shape(a) != np.shape(b):
        raise ContractViolation(f"{what} shape mismatch: {np.shape(a)} vs {np.shape(b)}")


def renormalize(p, *, drift=DRIFT_TOL, error=ContractViolation, what="vector"):
    """Remove floating-point drift from a probability vector.

    Vectors whose sum deviates from one by more than ``drift`` (or that have
    entries below ``-drift``) are rejected rather than silently fixed.
    """
    p = np.asarray(p, dtype=float)
    total = p.sum(axis=-1, keepdims=True)
    if np.any(np.abs(total - 1.0) > drift) or np.any(p < -drift):
        raise error(f"{what} drifted off the simplex (sum={np.ravel(total)})")
    p = np.clip(p, 0.0, None)
    return p / p.sum(axis=-1, keepdims=True)
