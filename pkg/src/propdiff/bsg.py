"""Per-difference minimal acceptance regions and their inversion to intervals.

Each difference delta on the grid gets a minimum-cardinality set of outcome
cells whose probability is at least 1-alpha under every active (p1, p2) pair
of the delta slice.  That selection problem is a small binary covering
program; it is solved by the branch-and-bound engine with lazy coverage rows.
Inverting the per-delta regions gives confidence sets that are provably
smallest in total grid size but need not be intervals; the table builder
fills the gaps, which costs length but preserves coverage.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .citable import CiTable
from .milp import LinearRow, MilpModel, MilpSolution, solve_milp
from .probcore import (
    DeltaPairSet,
    DomainError,
    Grid,
    delta_grid,
    joint_slice_matrix,
    make_pair_set,
    prob_grid,
)


@dataclass(frozen=True)
class TwoSampleMar:
    """A minimal acceptance region for one difference value."""

    delta: float
    cells: frozenset[tuple[int, int]]

    @property
    def cardinality(self) -> int:
        return len(self.cells)

    def contains(self, x: int, y: int) -> bool:
        return (x, y) in self.cells

    def to_json_dict(self) -> dict:
        return {
            "delta": self.delta,
            "cardinality": self.cardinality,
            "cells": sorted(self.cells),
        }


def deficit_peaks(deficit: np.ndarray, threshold: float = 1e-8) -> np.ndarray:
    """Indices of local maxima of the deficit curve that exceed ``threshold``.

    Along a slice the rows of neighbouring pairs are nearly identical, so a
    violated stretch is handled by its single worst pair; cutting at peaks
    kills the zigzag where each round only shifts the binding pair by one.
    """
    d = deficit
    left = np.empty_like(d)
    right = np.empty_like(d)
    left[0], right[-1] = -np.inf, -np.inf
    left[1:] = d[:-1]
    right[:-1] = d[1:]
    return np.flatnonzero((d > threshold) & (d >= left) & (d >= right))


def _coverage_lazy(F: np.ndarray, need: float, prefix: str, batch: int = 64):
    """Lazy generator returning the worst violated coverage-row peaks at a point.

    Stateless on purpose: rows already in the working LP are enforced there,
    so they simply stop being violated and are never emitted twice.
    """

    def generator(x):
        deficit = need - F @ x[: F.shape[1]]
        bad = deficit_peaks(deficit)
        if not len(bad):
            return []
        bad = bad[np.argsort(-deficit[bad], kind="stable")][:batch]
        rows = []
        for i in bad:
            nz = np.flatnonzero(F[i] > 0.0)
            rows.append(LinearRow(nz, F[i, nz], ">=", need, f"{prefix}p{i}"))
        return rows

    return generator


def greedy_cover(F: np.ndarray, need: float, priority: np.ndarray | None = None) -> np.ndarray:
    """LP-guided greedy cover with reverse pruning; returns a 0/1 vector.

    Cells are added in order of LP weight (deficit reduction as tie-break)
    until every row reaches ``need``, then redundant cells are removed again,
    least-attractive first.
    """
    ncells = F.shape[1]
    pri = np.zeros(ncells) if priority is None else np.asarray(priority, dtype=float)
    cov = np.zeros(F.shape[0])
    chosen: list[int] = []
    remaining = set(range(ncells))
    while (cov < need - 1e-12).any():
        deficit = np.maximum(need - cov, 0.0)
        gain = deficit @ F  # total shortfall each cell would absorb
        best = max(remaining, key=lambda c: (pri[c], gain[c], -c))
        if gain[best] <= 0.0:
            raise DomainError("uncoverable slice row; probabilities inconsistent")
        chosen.append(best)
        remaining.discard(best)
        cov = cov + F[:, best]
    for c in sorted(chosen, key=lambda c: (pri[c], -c)):
        trial = cov - F[:, c]
        if (trial >= need - 1e-12).all():
            chosen.remove(c)
            cov = trial
    out = np.zeros(ncells)
    out[chosen] = 1.0
    return out


def build_op1(n: int, m: int, alpha: float, delta: float, pairs: DeltaPairSet,
              lazy_threshold: int = 256) -> MilpModel:
    """Binary covering model: pick fewest cells keeping every slice pair covered.

    Slices with at most ``lazy_threshold`` pairs get their coverage rows added
    up front; larger slices get a uniform subsample statically and the rest
    through the lazy generator.  A greedy rounding heuristic is attached so
    the search starts from a near-optimal incumbent.
    """
    if pairs.is_empty:
        raise DomainError(f"empty pair slice at delta={delta}")
    ncells = (n + 1) * (m + 1)
    model = MilpModel(name=f"mar(delta={delta})")
    for x in range(n + 1):
        for y in range(m + 1):
            model.add_binary(obj=1.0, name=f"r_{x}_{y}")
    F = joint_slice_matrix(n, m, pairs.p1, pairs.p2)
    need = 1.0 - alpha
    if len(pairs) <= lazy_threshold:
        seed = np.arange(len(pairs))
        model.lazy_generator = None
    else:
        seed = np.unique(np.round(np.linspace(0, len(pairs) - 1, lazy_threshold)).astype(int))
        model.lazy_generator = _coverage_lazy(F, need, "cov")
    for i in seed:
        nz = np.flatnonzero(F[i] > 0.0)
        model.add_row(nz, F[i, nz], ">=", need, f"cov{i}")
    model.heuristic = lambda xlp: greedy_cover(F, need, priority=xlp[:ncells])
    model.objective_granularity = 1.0
    model._coverage_matrix = F  # kept for exact post-hoc verification
    return model


def _cells_from_x(n: int, m: int, x: np.ndarray) -> frozenset[tuple[int, int]]:
    picked = np.flatnonzero(np.round(x[: (n + 1) * (m + 1)]) > 0.5)
    return frozenset((int(c) // (m + 1), int(c) % (m + 1)) for c in picked)


def _verify_mar(model: MilpModel, x: np.ndarray, alpha: float) -> None:
    """Exact re-check of every slice coverage row, independent of the solver."""
    F = model._coverage_matrix
    r = np.round(x[: F.shape[1]])
    worst = float((F @ r).min())
    if worst < 1.0 - alpha - 1e-7:
        raise DomainError(f"solver returned a non-covering region (min {worst})")


def solve_op1(n: int, m: int, alpha: float, delta: float, pairs: DeltaPairSet,
              warm_start: np.ndarray | None = None,
              time_limit: float | None = None) -> tuple[TwoSampleMar, MilpSolution]:
    """One minimal acceptance region (deterministic tie choice from the search)."""
    model = build_op1(n, m, alpha, delta, pairs)
    sol = solve_milp(model, warm_start=warm_start, time_limit=time_limit)
    if not sol.feasible:
        raise DomainError(f"no acceptance region found at delta={delta} ({sol.status})")
    _verify_mar(model, sol.x, alpha)
    return TwoSampleMar(delta, _cells_from_x(n, m, sol.x)), sol


def enumerate_all_mars(n: int, m: int, alpha: float, delta: float,
                       pairs: DeltaPairSet, max_regions: int = 64,
                       time_limit: float | None = None) -> list[TwoSampleMar]:
    """All minimum-cardinality acceptance regions for one delta.

    Found by re-solving with a cardinality cap at the optimum and a no-good
    cut per region already seen, until the program turns infeasible.
    """
    model = build_op1(n, m, alpha, delta, pairs)
    sol = solve_milp(model, time_limit=time_limit, promote_pool=True)
    if not sol.feasible:
        raise DomainError(f"no acceptance region at delta={delta}")
    _verify_mar(model, sol.x, alpha)
    k0 = int(round(sol.objective))
    ncells = (n + 1) * (m + 1)
    model.add_row(np.arange(ncells), np.ones(ncells), "<=", float(k0), "card-cap")
    found = [TwoSampleMar(delta, _cells_from_x(n, m, sol.x))]
    while len(found) < max_regions:
        last = np.round(sol.x[:ncells])
        coef = np.where(last > 0.5, -1.0, 1.0)
        model.add_row(np.arange(ncells), coef, ">=", 1.0 - float(last.sum()),
                      f"nogood{len(found)}")
        sol = solve_milp(model, time_limit=time_limit, promote_pool=True)
        if not sol.feasible:
            return found
        _verify_mar(model, sol.x, alpha)
        mar = TwoSampleMar(delta, _cells_from_x(n, m, sol.x))
        if mar.cardinality != k0 or mar in found:
            return found
        found.append(mar)
    raise DomainError(f"more than {max_regions} optimal regions at delta={delta}")


def _mode_grids(mode: str) -> tuple[Grid, Grid | None]:
    if mode == "bsg1":
        return delta_grid(0.01), prob_grid(0.02)
    if mode == "bsg2":
        return delta_grid(0.001), None  # per-delta pair grids
    raise DomainError(f"unknown mode {mode!r}; expected 'bsg1' or 'bsg2'")


def bsg_table(n: int, m: int, alpha: float, mode: str = "bsg1",
              D: Grid | None = None, P: Grid | None = None,
              log=None) -> CiTable:
    """Generalized Blyth-Still table: solve one region per delta, then invert.

    Confidence sets with holes are filled to their hull.  A cell left in no
    region at all receives the single grid difference nearest to x/n - y/m and
    is flagged in the table notes.  Empty slices (no active pairs, possible
    when the difference grid is finer than the proportion grid) contribute no
    region and are skipped.
    """
    defD, defP = _mode_grids(mode)
    D = D or defD
    if mode == "bsg1":
        P = P or defP
    ncells = (n + 1) * (m + 1)
    member_lo = np.full(ncells, np.nan)
    member_hi = np.full(ncells, np.nan)
    prev_x: np.ndarray | None = None
    empty_slices = 0
    for dval in D.values:
        dval = float(dval)
        pairs = (make_pair_set(dval, P) if mode == "bsg1"
                 else make_pair_set(dval, mode="per_delta"))
        if pairs.is_empty:
            empty_slices += 1
            continue
        warm = None
        if prev_x is not None:
            model_check = build_op1(n, m, alpha, dval, pairs)
            F = model_check._coverage_matrix
            if float((F @ prev_x).min()) >= 1.0 - alpha:
                warm = prev_x
        mar, sol = solve_op1(n, m, alpha, dval, pairs, warm_start=warm)
        prev_x = np.round(sol.x[:ncells])
        if log:
            log(f"delta={dval:+.3f}: |region|={mar.cardinality} nodes={sol.node_count}")
        inside = prev_x > 0.5
        member_lo = np.where(inside & np.isnan(member_lo), dval, member_lo)
        member_hi = np.where(inside, dval, member_hi)

    orphans = []
    if np.isnan(member_lo).any():
        xs, ys = np.divmod(np.arange(ncells), m + 1)
        for c in np.flatnonzero(np.isnan(member_lo)):
            natural = xs[c] / n - ys[c] / m
            nearest = D.values[int(np.argmin(np.abs(D.values - natural)))]
            member_lo[c] = member_hi[c] = nearest
            orphans.append((int(xs[c]), int(ys[c])))

    notes = {"empty_slices": empty_slices}
    if orphans:
        notes["cells_without_region"] = orphans
    return CiTable(
        n=n, m=m, alpha=alpha, method=mode,
        lower=member_lo.reshape(n + 1, m + 1),
        upper=member_hi.reshape(n + 1, m + 1),
        grid_meta={"d_step": D.d if D.equally_spaced else None,
                   "p_step": (P.d if P is not None and P.equally_spaced else None),
                   "pair_mode": "intersect" if mode == "bsg1" else "per_delta"},
        notes=notes,
    )
