"""A small 0/1 mixed-integer linear programming engine.

Models are linear objectives over bounded continuous variables and binaries,
with sparse constraint rows plus an optional *lazy row generator*: a callback
that, given a candidate point, returns whichever constraint rows it violates.
Lazy rows keep the working LP small when the full row set is huge but mostly
slack (the coverage constraints of the acceptance-region programs are the
motivating case).

The search is branch and bound: best-bound node selection with depth-first
plunging, most-fractional branching on binaries (model hooks may override the
branching choice and inject primal heuristics), verified warm starts, a
wall-clock limit, and incumbent/bound gap reporting.  Node relaxations are
solved by the HiGHS dual simplex through scipy.optimize.linprog, which is
deterministic for a fixed row and column order.
"""

from __future__ import annotations

import heapq
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

FEAS_TOL = 1e-7
LAZY_TOL = 1e-8
INT_TOL = 1e-6


class MilpError(Exception):
    pass


class InfeasibleWarmStart(MilpError):
    pass


@dataclass
class LinearRow:
    """One sparse constraint row: sum(coef * x[idx]) <sense> rhs."""

    idx: np.ndarray
    coef: np.ndarray
    sense: str  # "<=", ">=" or "=="
    rhs: float
    name: str = ""

    def __post_init__(self):
        self.idx = np.asarray(self.idx, dtype=np.int64)
        self.coef = np.asarray(self.coef, dtype=float)
        if self.idx.shape != self.coef.shape:
            raise MilpError("row index/coefficient shape mismatch")
        if self.sense not in ("<=", ">=", "=="):
            raise MilpError(f"bad row sense {self.sense!r}")

    def violation(self, x: np.ndarray) -> float:
        lhs = float(self.coef @ x[self.idx])
        if self.sense == "<=":
            return lhs - self.rhs
        if self.sense == ">=":
            return self.rhs - lhs
        return abs(lhs - self.rhs)


class MilpModel:
    """Sparse MILP in minimization form."""

    def __init__(self, name: str = ""):
        self.name = name
        self.lb: list[float] = []
        self.ub: list[float] = []
        self.is_binary: list[bool] = []
        self.obj: list[float] = []
        self.var_names: list[str] = []
        self.rows: list[LinearRow] = []
        self.lazy_generator = None  # callback(x) -> list[LinearRow] violated at x
        self.heuristic = None  # callback(x_lp) -> feasible x or None
        self.branch_hint = None  # callback(x, lbv, ubv) -> (var, down_ub, up_lb) or None
        self.objective_granularity: float | None = None

    @property
    def n_vars(self) -> int:
        return len(self.lb)

    def add_var(self, lb: float, ub: float, obj: float = 0.0, name: str = "") -> int:
        if lb > ub:
            raise MilpError(f"variable bounds inverted: [{lb}, {ub}]")
        self.lb.append(float(lb))
        self.ub.append(float(ub))
        self.is_binary.append(False)
        self.obj.append(float(obj))
        self.var_names.append(name or f"x{len(self.lb) - 1}")
        return len(self.lb) - 1

    def add_binary(self, obj: float = 0.0, name: str = "") -> int:
        i = self.add_var(0.0, 1.0, obj, name or f"b{len(self.lb)}")
        self.is_binary[i] = True
        return i

    def add_row(self, idx, coef, sense: str, rhs: float, name: str = "") -> LinearRow:
        row = LinearRow(np.asarray(idx), np.asarray(coef), sense, float(rhs), name)
        if len(row.idx) and (row.idx.min() < 0 or row.idx.max() >= self.n_vars):
            raise MilpError(f"row {name!r} references undeclared variables")
        self.rows.append(row)
        return row

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return (
            np.asarray(self.obj),
            np.asarray(self.lb),
            np.asarray(self.ub),
            np.asarray(self.is_binary, dtype=bool),
        )

    def compiled(self):
        """Assembled static rows, cached until a row is added."""
        if getattr(self, "_compiled", None) is None or self._compiled_len != len(self.rows):
            self._compiled = _assemble(self.rows, self.n_vars)
            self._compiled_len = len(self.rows)
        return self._compiled

    def dump_lp(self, path: str) -> None:
        """Write the model in LP text format with 17-significant-digit numbers."""

        def num(v: float) -> str:
            return f"{v:.17g}"

        def terms(idx, coef) -> str:
            parts = []
            for i, a in zip(idx, coef):
                sign = "+" if a >= 0 else "-"
                parts.append(f"{sign} {num(abs(a))} {self.var_names[i]}")
            return " ".join(parts) if parts else "0"

        with open(path, "w") as fh:
            fh.write(f"\\ model {self.name}\nMinimize\n obj: ")
            nz = [(i, c) for i, c in enumerate(self.obj) if c != 0.0]
            fh.write(terms([i for i, _ in nz], [c for _, c in nz]))
            fh.write("\nSubject To\n")
            for k, row in enumerate(self.rows):
                op = {"<=": "<=", ">=": ">=", "==": "="}[row.sense]
                fh.write(f" c{k}: {terms(row.idx, row.coef)} {op} {num(row.rhs)}\n")
            fh.write("Bounds\n")
            for i in range(self.n_vars):
                if not self.is_binary[i]:
                    fh.write(f" {num(self.lb[i])} <= {self.var_names[i]} <= {num(self.ub[i])}\n")
            bins = [self.var_names[i] for i in range(self.n_vars) if self.is_binary[i]]
            if bins:
                fh.write("Binaries\n " + " ".join(bins) + "\n")
            fh.write("End\n")


@dataclass
class LpResult:
    status: str  # "optimal", "infeasible", "unbounded"
    x: np.ndarray | None
    objective: float


@dataclass
class MilpSolution:
    status: str  # "optimal", "feasible_time_limit", "infeasible"
    x: np.ndarray | None
    objective: float
    bound: float
    gap: float
    node_count: int
    wall_time: float
    pool_size: int = 0

    @property
    def feasible(self) -> bool:
        return self.x is not None


def _assemble(rows: list[LinearRow], n_vars: int):
    """Split rows into (A_ub, b_ub, A_eq, b_eq) sparse matrices."""

    def build(rs: list[LinearRow], flip_ge: bool):
        if not rs:
            return None, None
        lens = np.fromiter((len(r.idx) for r in rs), dtype=np.int64, count=len(rs))
        rowind = np.repeat(np.arange(len(rs)), lens)
        colind = np.concatenate([r.idx for r in rs]) if len(rs) else np.zeros(0, np.int64)
        sign = np.repeat(
            np.fromiter(((-1.0 if (flip_ge and r.sense == ">=") else 1.0) for r in rs),
                        dtype=float, count=len(rs)),
            lens,
        )
        vals = np.concatenate([r.coef for r in rs]) * sign
        rhs = np.fromiter(
            ((-r.rhs if (flip_ge and r.sense == ">=") else r.rhs) for r in rs),
            dtype=float, count=len(rs),
        )
        A = sp.csr_matrix((vals, (rowind, colind)), shape=(len(rs), n_vars))
        return A, rhs

    A_ub, b_ub = build([r for r in rows if r.sense != "=="], True)
    A_eq, b_eq = build([r for r in rows if r.sense == "=="], False)
    return A_ub, b_ub, A_eq, b_eq


class _LpWorkspace:
    """Caches assembled constraint matrices across node solves."""

    def __init__(self, model: MilpModel):
        self.model = model
        self.obj, self.lb0, self.ub0, self.binmask = model.arrays()
        self.static = model.compiled()
        self.pool: list[LinearRow] = []
        self._pool_mat = None
        self._pool_len = -1

    def add_pool_rows(self, rows: list[LinearRow]) -> None:
        self.pool.extend(rows)

    def _stacked(self):
        if self._pool_len != len(self.pool):
            A_ub, b_ub, A_eq, b_eq = self.static
            if self.pool:
                P_ub, p_ub, P_eq, p_eq = _assemble(self.pool, self.model.n_vars)
                if P_ub is not None:
                    A_ub = P_ub if A_ub is None else sp.vstack([A_ub, P_ub], format="csr")
                    b_ub = p_ub if b_ub is None else np.concatenate([b_ub, p_ub])
                if P_eq is not None:
                    A_eq = P_eq if A_eq is None else sp.vstack([A_eq, P_eq], format="csr")
                    b_eq = p_eq if b_eq is None else np.concatenate([b_eq, p_eq])
            self._pool_mat = (A_ub, b_ub, A_eq, b_eq)
            self._pool_len = len(self.pool)
        return self._pool_mat

    def solve(self, lbv: np.ndarray, ubv: np.ndarray) -> LpResult:
        A_ub, b_ub, A_eq, b_eq = self._stacked()
        res = linprog(
            self.obj,
            A_ub=A_ub,
            b_ub=b_ub,
            A_eq=A_eq,
            b_eq=b_eq,
            bounds=np.column_stack([lbv, ubv]),
            method="highs-ds",
            # enforce rows well below LAZY_TOL, or separated rows would keep
            # looking violated and the cutting loop could never stabilize
            options={
                "primal_feasibility_tolerance": 1e-9,
                "dual_feasibility_tolerance": 1e-9,
            },
        )
        if res.status == 0:
            return LpResult("optimal", res.x, float(res.fun))
        if res.status == 2:
            return LpResult("infeasible", None, np.inf)
        if res.status == 3:
            return LpResult("unbounded", None, -np.inf)
        raise MilpError(f"LP solve failed (HiGHS status {res.status}): {res.message}")


def solve_lp(model: MilpModel, lb=None, ub=None) -> LpResult:
    """Solve the LP relaxation (integrality dropped) of ``model``."""
    ws = _LpWorkspace(model)
    lbv = ws.lb0 if lb is None else np.asarray(lb, dtype=float)
    ubv = ws.ub0 if ub is None else np.asarray(ub, dtype=float)
    return ws.solve(lbv, ubv)


def verify_assignment(model: MilpModel, x: np.ndarray, tol: float = FEAS_TOL,
                      check_lazy: bool = True) -> list[str]:
    """All constraint violations of ``x`` beyond ``tol`` (empty means feasible)."""
    x = np.asarray(x, dtype=float)
    bad = []
    _, lb0, ub0, binmask = model.arrays()
    if (x < lb0 - tol).any() or (x > ub0 + tol).any():
        bad.append("variable bound violated")
    if binmask.any():
        frac = np.abs(x[binmask] - np.round(x[binmask]))
        if frac.max(initial=0.0) > INT_TOL:
            bad.append("binary variable fractional")
    A_ub, b_ub, A_eq, b_eq = model.compiled()
    if A_ub is not None:
        viol = A_ub @ x - b_ub
        worst = int(np.argmax(viol))
        if viol[worst] > tol:
            bad.append(f"row {worst} violated by {viol[worst]:.3g}")
    if A_eq is not None:
        viol = np.abs(A_eq @ x - b_eq)
        worst = int(np.argmax(viol))
        if viol[worst] > tol:
            bad.append(f"equality row {worst} violated by {viol[worst]:.3g}")
    if check_lazy and model.lazy_generator is not None:
        for row in model.lazy_generator(x) or []:
            v = row.violation(x)
            if v > tol:
                bad.append(f"lazy row {row.name or '?'} violated by {v:.3g}")
    return bad


@dataclass(order=True)
class _Node:
    bound: float
    seq: int
    parent: "_Node | None" = field(compare=False, default=None, repr=False)
    var: int = field(compare=False, default=-1)
    is_lower: bool = field(compare=False, default=False)
    val: float = field(compare=False, default=0.0)
    depth: int = field(compare=False, default=0)


def _materialize(node: _Node, lb0: np.ndarray, ub0: np.ndarray):
    """Walk the branching path and build this node's variable bounds."""
    lbv = lb0.copy()
    ubv = ub0.copy()
    cur = node
    while cur is not None and cur.var >= 0:
        if cur.is_lower:
            lbv[cur.var] = max(lbv[cur.var], cur.val)
        else:
            ubv[cur.var] = min(ubv[cur.var], cur.val)
        cur = cur.parent
    return lbv, ubv


def _round_bound(bound: float, granularity: float | None) -> float:
    """Tighten a relaxation bound when feasible objectives sit on a lattice."""
    if granularity is None or not np.isfinite(bound):
        return bound
    return float(np.ceil((bound - 1e-6) / granularity) * granularity)


def solve_milp(
    model: MilpModel,
    warm_start: np.ndarray | None = None,
    time_limit: float | None = None,
    gap_tol: float = 0.0,
    node_limit: int | None = None,
    promote_pool: bool = False,
    log=None,
) -> MilpSolution:
    """Branch and bound with lazy rows, warm start and wall-clock limit.

    The warm start, when given, must be feasible (it is verified against every
    row including lazy ones; an infeasible warm start raises
    InfeasibleWarmStart).  On hitting the time limit the best incumbent and
    the proven bound so far are returned with status "feasible_time_limit".
    """
    t0 = time.monotonic()
    ws = _LpWorkspace(model)
    obj, lb0, ub0, binmask = ws.obj, ws.lb0, ws.ub0, ws.binmask
    binidx = np.flatnonzero(binmask)
    gran = model.objective_granularity

    incumbent = None
    incumbent_obj = np.inf
    if warm_start is not None:
        x0 = np.asarray(warm_start, dtype=float).copy()
        bad = verify_assignment(model, x0)
        if bad:
            raise InfeasibleWarmStart("; ".join(bad[:5]))
        x0[binidx] = np.round(x0[binidx])
        incumbent, incumbent_obj = x0, float(obj @ x0)

    def out_of_time() -> bool:
        return time_limit is not None and time.monotonic() - t0 > time_limit

    seq = 0
    nodes_done = 0
    heap: list[_Node] = []
    dive: list[_Node] = []
    dive.append(_Node(bound=-np.inf, seq=seq))
    exhausted = True

    def abs_gap_ok(bound: float) -> bool:
        return incumbent_obj - _round_bound(bound, gran) <= gap_tol * max(abs(incumbent_obj), 1e-12) + 1e-12

    while heap or dive:
        if out_of_time() or (node_limit is not None and nodes_done >= node_limit):
            exhausted = False
            break
        if dive:
            node = dive.pop()
        else:
            node = heapq.heappop(heap)
            if incumbent is not None and gap_tol > 0 and abs_gap_ok(node.bound):
                heapq.heappush(heap, node)  # keep it for honest bound reporting
                exhausted = False
                break
        if _round_bound(node.bound, gran) >= incumbent_obj - 1e-9:
            continue
        nodes_done += 1
        lbv, ubv = _materialize(node, lb0, ub0)

        # solve the node LP, separating violated lazy rows until clean
        lp = None
        for _ in range(200):
            lp = ws.solve(lbv, ubv)
            if lp.status != "optimal" or model.lazy_generator is None:
                break
            violated = [r for r in model.lazy_generator(lp.x) if r.violation(lp.x) > LAZY_TOL]
            if not violated:
                break
            ws.add_pool_rows(violated)
        if lp.status == "infeasible":
            continue
        if lp.status == "unbounded":
            raise MilpError("unbounded relaxation; model is missing bounds")
        node.bound = max(node.bound, lp.objective)
        if _round_bound(node.bound, gran) >= incumbent_obj - 1e-9:
            continue

        xlp = lp.x
        frac = np.abs(xlp[binidx] - np.round(xlp[binidx])) if len(binidx) else np.zeros(0)
        if frac.size == 0 or frac.max() <= INT_TOL:
            # candidate: pin binaries at their rounded values, re-solve the
            # continuous part so static rows hold exactly, then screen lazily
            lbf, ubf = lbv.copy(), ubv.copy()
            rounded = np.round(xlp[binidx])
            lbf[binidx] = rounded
            ubf[binidx] = rounded
            fixed = ws.solve(lbf, ubf)
            if fixed.status != "optimal":
                if frac.size and frac.max() > 0:
                    j = binidx[np.argmax(frac)]
                    seq = _branch(node, j, 0.0, 1.0, xlp[j] >= 0.5, heap, dive, seq)
                continue
            cand = fixed.x.copy()
            cand[binidx] = rounded
            if model.lazy_generator is not None:
                violated = [r for r in model.lazy_generator(cand) if r.violation(cand) > LAZY_TOL]
                if violated:
                    ws.add_pool_rows(violated)
                    seq += 1
                    node.seq = seq
                    dive.append(node)  # revisit with the strengthened pool
                    continue
            cobj = float(obj @ cand)
            if cobj < incumbent_obj - 1e-12:
                incumbent, incumbent_obj = cand, cobj
                if log:
                    log(f"incumbent {cobj:.6f} at node {nodes_done}")
            continue

        if model.heuristic is not None:
            hx = model.heuristic(xlp)
            if hx is not None:
                hx = np.asarray(hx, dtype=float)
                hobj = float(obj @ hx)
                if hobj < incumbent_obj - 1e-12 and not verify_assignment(model, hx):
                    incumbent, incumbent_obj = hx, hobj
                    if log:
                        log(f"heuristic incumbent {hobj:.6f} at node {nodes_done}")

        choice = model.branch_hint(xlp, lbv, ubv) if model.branch_hint else None
        if choice is None:
            j = binidx[int(np.argmax(frac))]
            down_ub, up_lb = 0.0, 1.0
            go_up = xlp[j] - np.floor(xlp[j]) >= 0.5
        else:
            j, down_ub, up_lb = choice
            go_up = xlp[j] >= (down_ub + up_lb) / 2
        seq = _branch(node, j, down_ub, up_lb, go_up, heap, dive, seq)

    wall = time.monotonic() - t0
    if promote_pool and ws.pool:
        # keep separated rows for follow-up solves on the same model
        model.rows.extend(ws.pool)
    open_bounds = [n.bound for n in heap] + [n.bound for n in dive]
    if exhausted or not open_bounds:
        bound = incumbent_obj
    else:
        bound = min(_round_bound(min(open_bounds), gran), incumbent_obj)
    if incumbent is None:
        if exhausted:
            return MilpSolution("infeasible", None, np.inf, np.inf, 0.0,
                                nodes_done, wall, len(ws.pool))
        return MilpSolution("feasible_time_limit", None, np.inf, bound, np.inf,
                            nodes_done, wall, len(ws.pool))
    gap = max(0.0, (incumbent_obj - bound) / max(abs(incumbent_obj), 1e-12))
    status = "optimal" if exhausted and gap <= 1e-12 else ("optimal" if exhausted else "feasible_time_limit")
    return MilpSolution(status, incumbent, incumbent_obj, bound, gap,
                        nodes_done, wall, len(ws.pool))


def _branch(node: _Node, j: int, down_ub: float, up_lb: float, go_up: bool,
            heap: list, dive: list, seq: int) -> int:
    down = _Node(node.bound, seq + 1, node, j, False, down_ub, node.depth + 1)
    up = _Node(node.bound, seq + 2, node, j, True, up_lb, node.depth + 1)
    near, far = (up, down) if go_up else (down, up)
    heapq.heappush(heap, far)
    dive.append(near)
    return seq + 2
