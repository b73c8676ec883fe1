"""Evaluation of a single B-spline from its local knot vector.

All routines work on one local knot vector of length ``degree + 2`` and are
vectorized over the evaluation points.  The half-open convention is used for
the degree-zero indicators; intervals ending at ``right_closed_at`` (the
domain maximum) are treated as closed so that open knot vectors interpolate
their last coefficient at the domain edge.
"""

from __future__ import annotations

import numpy as np


def basis_value(knots, degree: int, x, right_closed_at: float | None = None) -> np.ndarray:
    """Value of the B-spline with local knots ``knots`` at points ``x``.

    ``knots`` must be non-decreasing with ``degree + 2`` entries.
    """
    t = np.asarray(knots, dtype=float)
    x = np.asarray(x, dtype=float)
    p = degree
    if t.shape[0] != p + 2:
        raise ValueError(f"expected {p + 2} local knots, got {t.shape[0]}")

    levels = []
    for j in range(p + 1):
        ind = (x >= t[j]) & (x < t[j + 1])
        if right_closed_at is not None and t[j] < t[j + 1] and t[j + 1] >= right_closed_at:
            ind = ind | (x == t[j + 1])
        levels.append(ind.astype(float))
    for d in range(1, p + 1):
        for j in range(p + 1 - d):
            acc = np.zeros_like(levels[j])
            den = t[j + d] - t[j]
            if den > 0.0:
                acc += (x - t[j]) / den * levels[j]
            den = t[j + d + 1] - t[j + 1]
            if den > 0.0:
                acc += (t[j + d + 1] - x) / den * levels[j + 1]
            levels[j] = acc
    return levels[0]


def basis_deriv(knots, degree: int, x, order: int,
                right_closed_at: float | None = None) -> np.ndarray:
    """``order``-th derivative of the B-spline with local knots ``knots``."""
    if order == 0:
        return basis_value(knots, degree, x, right_closed_at)
    t = np.asarray(knots, dtype=float)
    p = degree
    if p == 0:
        return np.zeros_like(np.asarray(x, dtype=float))
    out = np.zeros_like(np.asarray(x, dtype=float))
    den = t[p] - t[0]
    if den > 0.0:
        out = out + (p / den) * basis_deriv(t[:-1], p - 1, x, order - 1, right_closed_at)
    den = t[p + 1] - t[1]
    if den > 0.0:
        out = out - (p / den) * basis_deriv(t[1:], p - 1, x, order - 1, right_closed_at)
    return out
