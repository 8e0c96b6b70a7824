"""Closed-form (non-exact) intervals: Wald, adjusted Wald, hybrid score.

These are the classical normal-approximation baselines.  All three return
intervals truncated to [-1, 1]; the Wald interval is deliberately left in its
textbook form (zero-width at degenerate corners), since its poor small-sample
behaviour is part of what the exact methods are measured against.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import ndtri

from .citable import CiTable, truncate
from .probcore import DomainError


def normal_quantile(q: float) -> float:
    """Inverse standard normal CDF."""
    if not 0.0 < q < 1.0:
        raise DomainError(f"quantile argument must lie strictly in (0,1), got {q}")
    return float(ndtri(q))


def wald_ci(n: int, m: int, x: int, y: int, alpha: float) -> tuple[float, float]:
    """Plain Wald interval for p1 - p2, truncated to [-1, 1]."""
    _check_outcome(n, m, x, y)
    z = normal_quantile(1 - alpha / 2)
    p1, p2 = x / n, y / m
    se = math.sqrt(p1 * (1 - p1) / n + p2 * (1 - p2) / m)
    diff = p1 - p2
    return truncate(diff - z * se, diff + z * se)


def ac_ci(n: int, m: int, x: int, y: int, alpha: float) -> tuple[float, float]:
    """Adjusted Wald interval: one pseudo success and failure per sample.

    Both the centring proportions and the variance use the augmented counts
    (x+1)/(n+2) and (y+1)/(m+2).
    """
    _check_outcome(n, m, x, y)
    z = normal_quantile(1 - alpha / 2)
    nn, mm = n + 2, m + 2
    p1, p2 = (x + 1) / nn, (y + 1) / mm
    se = math.sqrt(p1 * (1 - p1) / nn + p2 * (1 - p2) / mm)
    diff = p1 - p2
    return truncate(diff - z * se, diff + z * se)


def wilson_roots(n: int, x: int, alpha: float) -> tuple[float, float]:
    """The two solutions p of (phat - p)^2 * n = z^2 * p * (1 - p).

    This is the score (Wilson) equation for a single proportion; the roots
    always exist and lie in [0, 1] (clipped against last-ulp drift).
    """
    if not 0 <= x <= n:
        raise DomainError(f"x={x} outside 0..{n}")
    z = normal_quantile(1 - alpha / 2)
    ph = x / n
    a = n + z * z
    b = -(2 * n * ph + z * z)
    c = n * ph * ph
    disc = math.sqrt(max(b * b - 4 * a * c, 0.0))
    lo = (-b - disc) / (2 * a)
    hi = (-b + disc) / (2 * a)
    return min(max(lo, 0.0), 1.0), min(max(hi, 0.0), 1.0)


def hs_ci(n: int, m: int, x: int, y: int, alpha: float) -> tuple[float, float]:
    """Hybrid score interval: Wilson bounds per margin, recombined variances.

    The lower limit spends the lower Wilson bound of sample 1 against the
    upper bound of sample 2, and vice versa for the upper limit.
    """
    _check_outcome(n, m, x, y)
    z = normal_quantile(1 - alpha / 2)
    p1, p2 = x / n, y / m
    l1, u1 = wilson_roots(n, x, alpha)
    l2, u2 = wilson_roots(m, y, alpha)
    diff = p1 - p2
    lo = diff - z * math.sqrt(l1 * (1 - l1) / n + u2 * (1 - u2) / m)
    hi = diff + z * math.sqrt(u1 * (1 - u1) / n + l2 * (1 - l2) / m)
    return truncate(lo, hi)


_CELL_FUNCS = {"wald": wald_ci, "ac": ac_ci, "hs": hs_ci}


def closed_form_table(method: str, n: int, m: int, alpha: float) -> CiTable:
    """Build the full (n+1) x (m+1) table for one closed-form method."""
    try:
        cell = _CELL_FUNCS[method]
    except KeyError:
        raise DomainError(f"unknown closed-form method {method!r}") from None
    lo = np.empty((n + 1, m + 1))
    hi = np.empty((n + 1, m + 1))
    for x in range(n + 1):
        for y in range(m + 1):
            lo[x, y], hi[x, y] = cell(n, m, x, y, alpha)
    return CiTable(n=n, m=m, alpha=alpha, method=method, lower=lo, upper=hi)


def _check_outcome(n: int, m: int, x: int, y: int) -> None:
    if not (0 <= x <= n and 0 <= y <= m):
        raise DomainError(f"outcome ({x},{y}) outside {{0..{n}}}x{{0..{m}}}")
