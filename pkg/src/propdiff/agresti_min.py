"""Exact intervals by score-statistic inversion with nuisance maximization.

For each candidate difference delta, outcomes are ranked by a score statistic
standardized with the restricted MLE (the likelihood maximizer subject to
p1 - p2 = delta).  The worst-case tail probability of the observed score over
all grid pairs on the delta slice decides whether delta enters the confidence
set; the interval is the hull of that set.  Exactness at every grid pair
follows from the test-inversion argument.
"""

from __future__ import annotations

import numpy as np

from .citable import CiTable
from .probcore import (
    DeltaPairSet,
    DomainError,
    Grid,
    delta_grid,
    joint_slice_matrix,
    make_pair_set,
    prob_grid,
)

_MLE_TOL = 1e-12
_DEGENERATE_VAR = 1e-11
_ZERO_NUM = 1e-16


def _loglik(p1, x, y, n, m, delta):
    """Constrained log-likelihood at p1 (p2 = p1 - delta).

    Probabilities are floored at 1e-300, so a zero count times the floored log
    contributes exactly 0 and positive counts drive the value toward -inf as
    they should.
    """
    p1 = np.asarray(p1, dtype=float)
    p2 = p1 - delta
    tiny = 1e-300
    return (
        x * np.log(np.maximum(p1, tiny))
        + (n - x) * np.log(np.maximum(1.0 - p1, tiny))
        + y * np.log(np.maximum(p2, tiny))
        + (m - y) * np.log(np.maximum(1.0 - p2, tiny))
    )


def _restricted_mle_vec(n: int, m: int, xs: np.ndarray, ys: np.ndarray, delta: float):
    """Vectorized ternary search for the constrained MLE of many outcomes.

    The constrained log-likelihood is concave in p1, so shrinking the bracket
    by thirds converges to the maximizer (or to the boundary when the
    likelihood is monotone on the feasible range).
    """
    lo_edge = max(0.0, delta)
    hi_edge = min(1.0, 1.0 + delta)
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    lo = np.full(xs.shape, lo_edge)
    hi = np.full(xs.shape, hi_edge)
    if hi_edge - lo_edge > 0:
        iters = int(np.ceil(np.log((hi_edge - lo_edge) / _MLE_TOL) / np.log(1.5))) + 2
        for _ in range(iters):
            m1 = lo + (hi - lo) / 3.0
            m2 = hi - (hi - lo) / 3.0
            f1 = _loglik(m1, xs, ys, n, m, delta)
            f2 = _loglik(m2, xs, ys, n, m, delta)
            take_lo = f1 < f2
            lo = np.where(take_lo, m1, lo)
            hi = np.where(take_lo, hi, m2)
    p1 = np.clip((lo + hi) / 2.0, lo_edge, hi_edge)
    # polish interior maximizers: ternary alone is limited to ~1e-9 by float
    # noise in likelihood comparisons; Newton on the score brings the interior
    # root to machine accuracy (edge maximizers are left where they are)
    interior = (p1 > lo_edge + 1e-9) & (p1 < hi_edge - 1e-9)
    if interior.any():
        tiny = 1e-300
        for _ in range(4):
            q2 = p1 - delta
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                g = (
                    xs / np.maximum(p1, tiny)
                    - (n - xs) / np.maximum(1.0 - p1, tiny)
                    + ys / np.maximum(q2, tiny)
                    - (m - ys) / np.maximum(1.0 - q2, tiny)
                )
                h = -(
                    xs / np.maximum(p1, tiny) ** 2
                    + (n - xs) / np.maximum(1.0 - p1, tiny) ** 2
                    + ys / np.maximum(q2, tiny) ** 2
                    + (m - ys) / np.maximum(1.0 - q2, tiny) ** 2
                )
                step = np.where(np.isfinite(g / h), g / h, 0.0)
            p1 = np.where(interior, np.clip(p1 - step, lo_edge, hi_edge), p1)
    # snap to the feasible edge: a maximizer within tolerance of the boundary
    # is the boundary (matters for the degenerate-variance convention below)
    p1 = np.where(np.abs(p1 - lo_edge) < 10 * _MLE_TOL, lo_edge, p1)
    p1 = np.where(np.abs(p1 - hi_edge) < 10 * _MLE_TOL, hi_edge, p1)
    p2 = np.clip(p1 - delta, 0.0, 1.0)
    return p1, p2


def restricted_mle(n: int, m: int, x: int, y: int, delta: float) -> tuple[float, float]:
    """MLE of (p1, p2) under the constraint p1 - p2 = delta."""
    if not -1.0 <= delta <= 1.0:
        raise DomainError(f"delta={delta} outside [-1, 1]")
    p1, p2 = _restricted_mle_vec(n, m, np.array([x]), np.array([y]), delta)
    return float(p1[0]), float(p2[0])


def score_matrix(n: int, m: int, delta: float) -> np.ndarray:
    """Score statistic for every outcome cell, flattened row-major (x, y)."""
    xs, ys = np.divmod(np.arange((n + 1) * (m + 1)), m + 1)
    p1, p2 = _restricted_mle_vec(n, m, xs, ys, delta)
    num = (xs / n - ys / m - delta) ** 2
    den = p1 * (1 - p1) / n + p2 * (1 - p2) / m
    z = np.empty(len(xs))
    degenerate = den < _DEGENERATE_VAR
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(degenerate, np.where(num < _ZERO_NUM, 0.0, np.inf), num / np.maximum(den, 1e-300))
    z[num < _ZERO_NUM] = 0.0
    return z


def score_stat(n: int, m: int, x: int, y: int, delta: float) -> float:
    """Squared score statistic of one outcome at one difference."""
    return float(score_matrix(n, m, delta)[x * (m + 1) + y])


def _lambda_matrix(n: int, m: int, delta: float, pairs: DeltaPairSet) -> np.ndarray:
    """Worst-case tail probability of each cell's score over the delta slice.

    Ties in the score are grouped so every outcome with an equal score lands
    in the same tail.
    """
    if pairs.is_empty:
        raise DomainError(f"empty pair slice at delta={delta}")
    z = score_matrix(n, m, delta)
    F = joint_slice_matrix(n, m, pairs.p1, pairs.p2)
    order = np.argsort(-z, kind="stable")
    csum = np.cumsum(F[:, order], axis=1)
    lam = np.empty(len(z))
    zs = z[order]
    i = 0
    while i < len(zs):
        j = i
        while j + 1 < len(zs) and zs[j + 1] == zs[i]:
            j += 1
        tail_max = csum[:, j].max()
        lam[order[i : j + 1]] = tail_max
        i = j + 1
    return lam


def lam(n: int, m: int, x: int, y: int, delta: float, P: Grid) -> float:
    """Worst-case tail probability for one observed outcome at one delta."""
    pairs = make_pair_set(delta, P)
    return float(_lambda_matrix(n, m, delta, pairs)[x * (m + 1) + y])


def am_table(n: int, m: int, alpha: float, D: Grid, P: Grid) -> CiTable:
    """Invert the score test over grid D into an interval per outcome.

    The confidence set {delta : lambda > alpha} need not be an interval; the
    returned limits are its hull.
    """
    ncells = (n + 1) * (m + 1)
    member_lo = np.full(ncells, np.nan)
    member_hi = np.full(ncells, np.nan)
    for dval in D.values:
        pairs = make_pair_set(float(dval), P)
        if pairs.is_empty:
            continue
        lamv = _lambda_matrix(n, m, float(dval), pairs)
        inside = lamv > alpha
        member_lo = np.where(inside & np.isnan(member_lo), dval, member_lo)
        member_hi = np.where(inside, dval, member_hi)
    if np.isnan(member_lo).any():
        raise DomainError("empty confidence set for some outcome; grid too coarse")
    step = D.d if D.equally_spaced else None
    return CiTable(
        n=n, m=m, alpha=alpha, method="am",
        lower=member_lo.reshape(n + 1, m + 1),
        upper=member_hi.reshape(n + 1, m + 1),
        grid_meta={"d_step": step, "p_step": P.d if P.equally_spaced else None},
    )


def am1_table(n: int, m: int, alpha: float) -> CiTable:
    """Coarse-grid mode: differences and proportions on step 0.01."""
    t = am_table(n, m, alpha, delta_grid(0.01), prob_grid(0.01))
    t.method = "am1"
    return t


def am2_table(n: int, m: int, alpha: float) -> CiTable:
    """Fine-grid mode: differences and proportions on step 0.001."""
    t = am_table(n, m, alpha, delta_grid(0.001), prob_grid(0.001))
    t.method = "am2"
    return t
