"""Globally length-optimal interval systems for the difference of proportions.

One mixed-integer program chooses all (n+1)(m+1) intervals at once: continuous
endpoints per outcome cell, one binary per (cell, delta) marking membership,
linking rows that force the binary pattern to match the interval, and one
coverage row per active (p1, p2) pair.  Minimizing the summed interval length
under exact grid coverage is the two-sample analogue of the one-sample optimal
construction, where the per-delta decomposition provably fails.

Solver support beyond the raw formulation (all exact, nothing heuristic about
the guarantee):

- per-delta cardinality rows: the minimum acceptance-region size of each slice
  (a small covering program) lower-bounds how many cells may carry that delta,
  which makes the relaxation bound nearly sharp;
- an interval local search (shrink / shift / repair moves over grid-indexed
  endpoints with incremental margin updates) that supplies strong incumbents
  through the engine's heuristic hook;
- optional branching on endpoint grid positions instead of the membership
  binaries.

The raw optimum ("full1") can be widened by a full or half grid step per side
("full2"/"full3") to trade a known amount of length for off-grid coverage.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .agresti_min import am_table
from .bsg import deficit_peaks
from .citable import CiTable
from .milp import LinearRow, MilpModel, MilpSolution, solve_milp
from .probcore import (
    DomainError,
    Grid,
    delta_grid,
    joint_slice_matrix,
    make_pair_set,
    prob_grid,
)

COVER_TOL = 1e-7  # exact-coverage slack accepted anywhere in this module


@dataclass
class FullConfig:
    """Grids and solver switches for the global optimization."""

    d_step: float = 0.01
    p_step: float = 0.01
    symmetry: bool = False
    objective: str = "plain"  # or "penalized"
    time_limit: float | None = 1800.0
    extension: str = "none"  # "none" (full1), "full_step" (full2), "half_step" (full3)
    branching: str = "binary"  # or "endpoint"
    slice_card_rows: bool = True
    heuristic_seed: int = 0
    heuristic_root_rounds: int = 600
    heuristic_node_rounds: int = 40
    heuristic_node_period: int = 20
    variable_budget: int = 120_000

    def grids(self) -> tuple[Grid, Grid]:
        return delta_grid(self.d_step), prob_grid(self.p_step)


class SliceData:
    """Per-delta pair probability matrices for one (n, m, alpha, D, P) instance."""

    def __init__(self, n: int, m: int, alpha: float, D: Grid, P: Grid):
        self.n, self.m, self.alpha = n, m, alpha
        self.D = D
        self.deltas = D.values
        self.ncells = (n + 1) * (m + 1)
        self.need = 1.0 - alpha
        self.F: list[np.ndarray | None] = []
        for dv in D.values:
            ps = make_pair_set(float(dv), P)
            self.F.append(None if ps.is_empty else joint_slice_matrix(n, m, ps.p1, ps.p2))

    @property
    def n_slices(self) -> int:
        return len(self.deltas)

    def margins(self, a: np.ndarray, b: np.ndarray) -> list[np.ndarray | None]:
        """Coverage minus requirement per pair, for intervals given as indices."""
        out = []
        for t, F in enumerate(self.F):
            if F is None:
                out.append(None)
                continue
            member = ((a <= t) & (t <= b)).astype(float)
            out.append(F @ member - self.need)
        return out

    def worst_deficit(self, a: np.ndarray, b: np.ndarray) -> float:
        worst = 0.0
        for mg in self.margins(a, b):
            if mg is not None and len(mg):
                worst = max(worst, float(-mg.min()))
        return worst


class _IntervalSearch:
    """Local search over grid-indexed intervals with incremental margins.

    Moves: shrink one endpoint by a step when every pair of the slice being
    vacated stays covered; sideways shifts at equal length; greedy repair that
    extends the cheapest useful cell toward a violated slice.  Perturbation
    rounds (random shrinks, then repair and descent) escape local optima; all
    randomness is seeded, so runs are reproducible.
    """

    def __init__(self, data: SliceData, seed: int = 0):
        self.data = data
        self.rng = np.random.default_rng(seed)
        self.best_a: np.ndarray | None = None
        self.best_b: np.ndarray | None = None
        self.best_units = np.inf

    # -- move primitives -------------------------------------------------
    def _can_drop(self, margins, t: int, c: int) -> bool:
        F = self.data.F[t]
        if F is None:
            return True
        return bool((margins[t] - F[:, c] >= -1e-12).all())

    def _drop(self, margins, t: int, c: int) -> None:
        F = self.data.F[t]
        if F is not None:
            margins[t] = margins[t] - F[:, c]

    def _add(self, margins, t: int, c: int) -> None:
        F = self.data.F[t]
        if F is not None:
            margins[t] = margins[t] + F[:, c]

    def descend(self, a, b, margins) -> int:
        """First-improvement shrink sweeps until no endpoint can retract."""
        ncells = self.data.ncells
        improved = True
        gained = 0
        while improved:
            improved = False
            for c in range(ncells):
                while a[c] < b[c] and self._can_drop(margins, a[c], c):
                    self._drop(margins, a[c], c)
                    a[c] += 1
                    gained += 1
                    improved = True
                while a[c] < b[c] and self._can_drop(margins, b[c], c):
                    self._drop(margins, b[c], c)
                    b[c] -= 1
                    gained += 1
                    improved = True
        return gained

    def repair(self, a, b, margins) -> None:
        """Extend cells greedily until every slice pair is covered again."""
        nT = self.data.n_slices
        while True:
            worst_t, worst_def = -1, 1e-12
            for t in range(nT):
                mg = margins[t]
                if mg is not None and len(mg):
                    d = float(-mg.min())
                    if d > worst_def:
                        worst_t, worst_def = t, d
            if worst_t < 0:
                return
            F = self.data.F[worst_t]
            deficit = np.maximum(-margins[worst_t], 0.0)
            outside = np.flatnonzero((a > worst_t) | (b < worst_t))
            if not len(outside):
                raise DomainError("violated slice already contains every cell")
            steps = np.where(a[outside] > worst_t, a[outside] - worst_t, worst_t - b[outside])
            benefit = deficit @ F[:, outside]
            score = benefit / steps
            pick = outside[int(np.argmax(score))]
            if benefit[int(np.argmax(score))] <= 0.0:
                pick = outside[int(np.argmax(benefit))]
            if a[pick] > worst_t:
                for t in range(worst_t, a[pick]):
                    self._add(margins, t, pick)
                a[pick] = worst_t
            else:
                for t in range(b[pick] + 1, worst_t + 1):
                    self._add(margins, t, pick)
                b[pick] = worst_t

    def _shift_pass(self, a, b, margins, rounds: int) -> None:
        """Sideways drift at constant length, to escape plateau lock-in."""
        ncells = self.data.ncells
        nT = self.data.n_slices
        for _ in range(rounds):
            c = int(self.rng.integers(ncells))
            right = bool(self.rng.integers(2))
            if right and b[c] + 1 < nT and self._can_drop(margins, a[c], c):
                self._add(margins, b[c] + 1, c)
                self._drop(margins, a[c], c)
                a[c] += 1
                b[c] += 1
            elif not right and a[c] > 0 and self._can_drop(margins, b[c], c):
                self._add(margins, a[c] - 1, c)
                self._drop(margins, b[c], c)
                a[c] -= 1
                b[c] -= 1

    # -- driver ----------------------------------------------------------
    def run(self, a0: np.ndarray, b0: np.ndarray, rounds: int) -> tuple[np.ndarray, np.ndarray]:
        """Repair + descend from a start, then perturbation rounds; keeps best."""
        a, b = a0.copy(), b0.copy()
        margins = self.data.margins(a, b)
        self.repair(a, b, margins)
        self.descend(a, b, margins)
        self._record(a, b)
        for _ in range(rounds):
            a2, b2 = self.best_a.copy(), self.best_b.copy()
            margins = self.data.margins(a2, b2)
            self._shift_pass(a2, b2, margins, rounds=self.data.ncells // 2)
            k = int(self.rng.integers(1, 5))
            cells = self.rng.integers(0, self.data.ncells, size=k)
            for c in cells:
                for _ in range(int(self.rng.integers(1, 3))):
                    if a2[c] < b2[c]:
                        side = self.rng.integers(2)
                        if side:
                            self._drop(margins, a2[c], c)
                            a2[c] += 1
                        else:
                            self._drop(margins, b2[c], c)
                            b2[c] -= 1
            self.repair(a2, b2, margins)
            self.descend(a2, b2, margins)
            self._record(a2, b2)
        return self.best_a.copy(), self.best_b.copy()

    def _record(self, a, b) -> None:
        units = int(np.sum(b - a))
        if units < self.best_units:
            self.best_units = units
            self.best_a, self.best_b = a.copy(), b.copy()


@dataclass
class _Layout:
    """Variable layout of the interval-system program."""

    ncells: int
    nT: int
    d: float
    delta0: float

    def l(self, c: int) -> int:
        return c

    def u(self, c: int) -> int:
        return self.ncells + c

    def r0(self, t: int) -> int:
        return 2 * self.ncells + t * self.ncells

    @property
    def n_vars(self) -> int:
        return 2 * self.ncells + self.ncells * self.nT


def slice_min_cardinalities(n: int, m: int, alpha: float, D: Grid, P: Grid,
                            log=None) -> list[int | None]:
    """Minimum acceptance-region size per delta slice (None for empty slices).

    Solved per slice as a covering program; consecutive slices warm-start each
    other.  These are valid lower bounds on how many cells any feasible
    interval system assigns to each delta.
    """
    from .bsg import build_op1

    out: list[int | None] = []
    prev: np.ndarray | None = None
    ncells = (n + 1) * (m + 1)
    for dv in D.values:
        ps = make_pair_set(float(dv), P)
        if ps.is_empty:
            out.append(None)
            continue
        model = build_op1(n, m, alpha, float(dv), ps)
        warm = None
        if prev is not None and float((model._coverage_matrix @ prev).min()) >= 1.0 - alpha:
            warm = prev
        sol = solve_milp(model, warm_start=warm)
        if not sol.feasible:
            raise DomainError(f"slice at delta={dv} has no acceptance region")
        prev = np.round(sol.x[:ncells])
        out.append(int(round(sol.objective)))
        if log:
            log(f"slice {dv:+.3f}: min cells {out[-1]}")
    return out


def build_op2(n: int, m: int, alpha: float, config: FullConfig | None = None,
              data: SliceData | None = None,
              slice_cards: list[int | None] | None = None,
              log=None) -> MilpModel:
    """The full interval-system program as a mixed-integer model.

    Rows: per-(cell, delta) linking, per-cell counting (the equality form when
    the delta grid is equally spaced), explicit lower <= upper, lazy coverage
    rows, optional per-slice cardinality bounds and endpoint symmetry.
    """
    config = config or FullConfig()
    D, P = config.grids()
    ncells = (n + 1) * (m + 1)
    nT = len(D)
    lay = _Layout(ncells=ncells, nT=nT, d=D.d, delta0=float(D.values[0]))
    if lay.n_vars > config.variable_budget:
        raise DomainError(
            f"{lay.n_vars} variables exceed the configured budget {config.variable_budget}"
        )
    if config.objective == "penalized" and D.d_min <= 0:
        raise DomainError("penalized objective needs a positive minimal grid gap")
    if data is None:
        data = SliceData(n, m, alpha, D, P)

    model = MilpModel(name=f"intervals(n={n},m={m},alpha={alpha})")
    for c in range(ncells):
        model.add_var(-1.0, 1.0, obj=-1.0, name=f"l{c}")
    for c in range(ncells):
        model.add_var(-1.0, 1.0, obj=1.0, name=f"u{c}")
    r_pen = 0.0
    if config.objective == "penalized":
        r_pen = -D.d_min / (2.0 * ncells * nT)
    for t in range(nT):
        for c in range(ncells):
            model.add_binary(obj=r_pen, name=f"r{c}_{t}")

    deltas = D.values
    for c in range(ncells):
        for t in range(nT):
            r = lay.r0(t) + c
            model.add_row([r, lay.l(c)], [2.0, 1.0], "<=", float(deltas[t]) + 2.0)
            model.add_row([r, lay.u(c)], [2.0, -1.0], "<=", 2.0 - float(deltas[t]))
    for c in range(ncells):
        idx = [lay.r0(t) + c for t in range(nT)] + [lay.u(c), lay.l(c)]
        if D.equally_spaced:
            inv_d = round(1.0 / D.d, 9)
            model.add_row(idx, [1.0] * nT + [-inv_d, inv_d], "==", 1.0, f"count{c}")
        else:
            model.add_row(idx, [1.0] * nT + [-1.0 / D.d_max, 1.0 / D.d_max], ">=", 1.0)
            model.add_row(idx, [1.0] * nT + [-1.0 / D.d_min, 1.0 / D.d_min], "<=", 1.0)
        model.add_row([lay.u(c), lay.l(c)], [1.0, -1.0], ">=", 0.0, f"len{c}")

    if config.symmetry:
        for x in range(n + 1):
            for y in range(m + 1):
                c = x * (m + 1) + y
                cr = (n - x) * (m + 1) + (m - y)
                model.add_row([lay.u(c), lay.l(cr)], [1.0, 1.0], "==", 0.0, f"sym{c}")

    if config.slice_card_rows:
        if slice_cards is None:
            slice_cards = slice_min_cardinalities(n, m, alpha, D, P, log=log)
        for t, k in enumerate(slice_cards):
            if k:
                idx = np.arange(lay.r0(t), lay.r0(t) + ncells)
                model.add_row(idx, np.ones(ncells), ">=", float(k), f"card{t}")

    model.lazy_generator = _op2_coverage_lazy(data, lay)
    model.heuristic = _op2_heuristic(data, lay, config)
    if config.branching == "endpoint":
        model.branch_hint = _endpoint_brancher(lay)
    if config.objective == "plain":
        model.objective_granularity = D.d
    model._op2_layout = lay
    model._op2_data = data
    return model


def _op2_coverage_lazy(data: SliceData, lay: _Layout, per_slice: int = 4,
                       total_cap: int = 400):
    """Separate violated coverage rows, a few deficit peaks per slice."""

    def generator(x):
        rows: list[LinearRow] = []
        for t, F in enumerate(data.F):
            if F is None:
                continue
            rt = x[lay.r0(t) : lay.r0(t) + lay.ncells]
            deficit = data.need - F @ rt
            peaks = deficit_peaks(deficit)
            if not len(peaks):
                continue
            peaks = peaks[np.argsort(-deficit[peaks], kind="stable")][:per_slice]
            base = lay.r0(t)
            for i in peaks:
                nz = np.flatnonzero(F[i] > 0.0)
                rows.append(LinearRow(base + nz, F[i, nz], ">=", data.need, f"cov{t}_{i}"))
            if len(rows) >= total_cap:
                break
        return rows

    return generator


def _intervals_to_assignment(a: np.ndarray, b: np.ndarray, lay: _Layout) -> np.ndarray:
    x = np.zeros(lay.n_vars)
    x[: lay.ncells] = lay.delta0 + a * lay.d
    x[lay.ncells : 2 * lay.ncells] = lay.delta0 + b * lay.d
    ts = np.arange(lay.nT)[:, None]
    member = (a[None, :] <= ts) & (ts <= b[None, :])
    x[2 * lay.ncells :] = member.astype(float).reshape(-1)
    return x


def _assignment_to_intervals(x: np.ndarray, lay: _Layout) -> tuple[np.ndarray, np.ndarray]:
    a = np.round((x[: lay.ncells] - lay.delta0) / lay.d).astype(int)
    b = np.round((x[lay.ncells : 2 * lay.ncells] - lay.delta0) / lay.d).astype(int)
    return np.clip(a, 0, lay.nT - 1), np.clip(b, 0, lay.nT - 1)


def _op2_heuristic(data: SliceData, lay: _Layout, config: FullConfig):
    """Engine hook: interval search seeded by the node relaxation."""
    search = _IntervalSearch(data, seed=config.heuristic_seed)
    state = {"calls": 0}

    def hook(xlp):
        state["calls"] += 1
        first = state["calls"] == 1
        if not first and state["calls"] % config.heuristic_node_period != 1:
            return None
        lv = xlp[: lay.ncells]
        uv = xlp[lay.ncells : 2 * lay.ncells]
        a = np.clip(np.floor((lv - lay.delta0) / lay.d + 1e-9).astype(int), 0, lay.nT - 1)
        b = np.clip(np.ceil((uv - lay.delta0) / lay.d - 1e-9).astype(int), 0, lay.nT - 1)
        b = np.maximum(a, b)
        rounds = config.heuristic_root_rounds if first else config.heuristic_node_rounds
        before = search.best_units
        a, b = search.run(a, b, rounds)
        if search.best_units >= before and not first:
            return None
        return _intervals_to_assignment(a, b, lay)

    return hook


def _endpoint_brancher(lay: _Layout):
    """Branch on the endpoint variable farthest from a grid point."""

    def hint(x, lbv, ubv):
        ends = x[: 2 * lay.ncells]
        pos = (ends - lay.delta0) / lay.d
        frac = np.abs(pos - np.round(pos))
        frac[ubv[: 2 * lay.ncells] - lbv[: 2 * lay.ncells] < lay.d / 2] = 0.0
        j = int(np.argmax(frac))
        if frac[j] <= 1e-6:
            return None
        down = lay.delta0 + np.floor(pos[j]) * lay.d
        up = lay.delta0 + np.ceil(pos[j]) * lay.d
        return j, float(down), float(up)

    return hint


def warm_assignment_from_table(table: CiTable, model: MilpModel) -> np.ndarray:
    """Encode an existing interval table as a feasible program assignment."""
    lay: _Layout = model._op2_layout
    lo = table.lower.reshape(-1)
    hi = table.upper.reshape(-1)
    a = np.round((lo - lay.delta0) / lay.d)
    b = np.round((hi - lay.delta0) / lay.d)
    if (np.abs(lay.delta0 + a * lay.d - lo) > 1e-9).any() or (
        np.abs(lay.delta0 + b * lay.d - hi) > 1e-9
    ).any():
        raise DomainError("warm-start endpoints do not sit on the delta grid")
    return _intervals_to_assignment(a.astype(int), b.astype(int), lay)


def full_table(
    n: int,
    m: int,
    alpha: float,
    config: FullConfig | None = None,
    warm_start: CiTable | None = None,
    log=None,
) -> tuple[CiTable, MilpSolution]:
    """Solve the interval-system program; returns the table and solver stats.

    The warm start defaults to the score-inversion table on the same grids,
    which is always feasible here (its endpoints sit on the delta grid and its
    coverage is exact at every grid pair).
    """
    config = config or FullConfig()
    D, P = config.grids()
    data = SliceData(n, m, alpha, D, P)
    if warm_start is None:
        if log:
            log("computing score-inversion warm start")
        warm_start = am_table(n, m, alpha, D, P)
    model = build_op2(n, m, alpha, config, data=data, log=log)
    x0 = warm_assignment_from_table(warm_start, model)
    sol = solve_milp(model, warm_start=x0, time_limit=config.time_limit, log=log)
    lay: _Layout = model._op2_layout
    a, b = _assignment_to_intervals(sol.x, lay)
    worst = data.worst_deficit(a, b)
    if worst > COVER_TOL:
        raise DomainError(f"incumbent violates exact coverage by {worst}")
    _check_indicator_consistency(sol.x, a, b, lay)
    lower = (lay.delta0 + a * lay.d).reshape(n + 1, m + 1)
    upper = (lay.delta0 + b * lay.d).reshape(n + 1, m + 1)
    table = CiTable(
        n=n, m=m, alpha=alpha, method="full1",
        lower=lower, upper=upper,
        grid_meta={"d_step": config.d_step, "p_step": config.p_step,
                   "symmetry": config.symmetry, "objective": config.objective},
        notes={"status": sol.status, "objective": sol.objective, "bound": sol.bound,
               "gap": sol.gap, "nodes": sol.node_count, "wall_time": sol.wall_time},
    )
    return table, sol


def _check_indicator_consistency(x: np.ndarray, a: np.ndarray, b: np.ndarray,
                                 lay: _Layout) -> None:
    """Membership binaries must equal the interval indicator, cell by cell."""
    r = np.round(x[2 * lay.ncells :]).reshape(lay.nT, lay.ncells)
    ts = np.arange(lay.nT)[:, None]
    member = ((a[None, :] <= ts) & (ts <= b[None, :])).astype(float)
    if not np.array_equal(r, member):
        raise DomainError("indicator variables inconsistent with interval endpoints")


def extend_table(table: CiTable, extension: str) -> CiTable:
    """Widen every interval by a full or half grid step per side, truncated.

    The step comes from the table's own grid metadata, so the extension tracks
    whatever delta grid produced the optimum.
    """
    d = table.grid_meta.get("d_step")
    if d is None:
        raise DomainError("table carries no delta-grid step to extend by")
    if extension == "full_step":
        e, name = d, "full2"
    elif extension == "half_step":
        e, name = d / 2.0, "full3"
    else:
        raise DomainError(f"unknown extension {extension!r}")
    lower = np.maximum(table.lower - e, -1.0)
    upper = np.minimum(table.upper + e, 1.0)
    out = CiTable(
        n=table.n, m=table.m, alpha=table.alpha, method=name,
        lower=lower, upper=upper,
        grid_meta=dict(table.grid_meta), notes=dict(table.notes),
    )
    out.grid_meta["extension"] = e
    return out
