"""One-sample length-optimal intervals by acceptance-interval enumeration.

For a single binomial proportion the optimal construction is local: at each
grid probability enumerate all shortest covering intervals of outcomes, prune
the ones that cannot sit inside a monotone chain, pick one chain, and invert.
The result is a set of n+1 confidence intervals whose total size (in grid
points) is provably minimal for the chosen grid.
"""

from __future__ import annotations

import numpy as np

from .citable import CiTable
from .probcore import DomainError, Grid, pmf_vector, prob_grid


def enumerate_one_sample_mars(n: int, p1: float, alpha: float) -> list[tuple[int, int]]:
    """All minimal acceptance intervals {r..t} with P(r <= X <= t) >= 1-alpha.

    Sweeps r upward, finding for each r the smallest t that still covers;
    intervals of minimal length among those are the minimal regions.
    """
    if not 0.0 <= p1 <= 1.0:
        raise DomainError(f"p1={p1} outside [0,1]")
    probs = pmf_vector(n, p1)
    cum = np.concatenate([[0.0], np.cumsum(probs)])  # cum[k] = P(X <= k-1)
    need = 1.0 - alpha

    def cover(r: int, t: int) -> float:
        return cum[t + 1] - cum[r]

    candidates = []
    t = 0
    for r in range(n + 1):
        t = max(t, r)
        while t <= n and cover(r, t) < need:
            t += 1
        if t > n:
            break  # past the critical r: no interval starting here covers
        candidates.append((r, t))
    if not candidates:
        # only possible when nothing covers, which the full interval refutes
        raise DomainError("no covering interval found; inconsistent inputs")
    best = min(t - r for r, t in candidates)
    return [(r, t) for r, t in candidates if t - r == best]


def _monotone(a: tuple[int, int], b: tuple[int, int]) -> bool:
    """Does (a, b) keep both endpoints nondecreasing (a at the smaller p1)?"""
    return a[0] <= b[0] and a[1] <= b[1]


def filter_monotone(mars_by_p: list[list[tuple[int, int]]]) -> list[list[tuple[int, int]]]:
    """Drop regions with no monotone partner at a neighbouring grid point.

    Forward and backward passes repeat until nothing changes: one removal can
    strand a neighbour whose only partner it was.
    """
    cur = [list(ms) for ms in mars_by_p]
    changed = True
    while changed:
        changed = False
        for i in range(len(cur) - 1):
            kept = [s for s in cur[i] if any(_monotone(s, t) for t in cur[i + 1])]
            if len(kept) != len(cur[i]):
                cur[i] = kept
                changed = True
        for i in range(1, len(cur)):
            kept = [t for t in cur[i] if any(_monotone(s, t) for s in cur[i - 1])]
            if len(kept) != len(cur[i]):
                cur[i] = kept
                changed = True
        if any(not ms for ms in cur):
            raise DomainError("monotonicity filtering emptied a grid point")
    return cur


def choose_ordering(filtered: list[list[tuple[int, int]]]) -> list[tuple[int, int]]:
    """One region per grid point forming a monotone chain.

    Deterministic choice: the lexicographically smallest (r, t) compatible
    with the previously chosen region.  Fixed-point filtering guarantees a
    compatible candidate always exists.
    """
    chain: list[tuple[int, int]] = []
    for i, options in enumerate(filtered):
        if not options:
            raise DomainError(f"no acceptance region left at grid index {i}")
        if not chain:
            chain.append(min(options))
            continue
        ok = [s for s in options if _monotone(chain[-1], s)]
        if not ok:
            raise DomainError(f"no monotone continuation at grid index {i}")
        chain.append(min(ok))
    return chain


def bs_one_table(n: int, alpha: float, P: Grid | None = None) -> CiTable:
    """The one-sample optimal interval table over grid P (default step 0.001)."""
    if P is None:
        P = prob_grid(0.001)
    mars = [enumerate_one_sample_mars(n, p, alpha) for p in P.values]
    chain = choose_ordering(filter_monotone(mars))

    lower = np.empty(n + 1)
    upper = np.empty(n + 1)
    member_count = 0
    for x in range(n + 1):
        hit = np.array([r <= x <= t for r, t in chain])
        if not hit.any():
            raise DomainError(f"outcome {x} belongs to no chosen region")
        idx = np.flatnonzero(hit)
        if not (np.diff(idx) == 1).all():
            raise DomainError(f"confidence set for outcome {x} has holes")
        member_count += len(idx)
        lower[x] = P.values[idx[0]]
        upper[x] = P.values[idx[-1]]
    chain_count = sum(t - r + 1 for r, t in chain)
    if member_count != chain_count:
        raise DomainError("inversion bookkeeping mismatch")

    return CiTable(
        n=n, m=None, alpha=alpha, method="bs-one", lower=lower, upper=upper,
        grid_meta={"p_step": P.d if P.equally_spaced else None, "p_size": len(P)},
    )
