"""Exact binomial mass functions and the parameter grids used for inversion.

Everything downstream (test inversion, acceptance-region optimization, coverage
evaluation) reduces to sums of products of two binomial pmfs over a grid of
(p1, p2) pairs with a fixed difference.  This module owns those primitives:

- pmf / joint_pmf: log-gamma based binomial mass, exact at p in {0, 1}
- Grid: a sorted grid of probabilities or differences, stored as integer
  indices over a decimal step so membership tests never suffer float drift
- make_pair_set: the (p1, p2) pairs active for a given difference delta,
  either by intersecting a single grid with its shifted self or by building
  the per-delta equal-jump grids used by the fine-grid generalized method
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

PAIR_TOL = 1e-9  # tolerance for "p1 - p2 == delta" membership on decimal grids


class DomainError(ValueError):
    """Argument outside the mathematically valid domain."""


@dataclass(frozen=True)
class BinomialParams:
    """Trial count and success probability of one binomial sample."""

    n: int
    p: float

    def __post_init__(self):
        if self.n < 1 or int(self.n) != self.n:
            raise DomainError(f"n must be a positive integer, got {self.n}")
        if not 0.0 <= self.p <= 1.0:
            raise DomainError(f"p must lie in [0, 1], got {self.p}")


_LOGFACT = np.zeros(1)


def _logfact(upto: int) -> np.ndarray:
    """Cached log k! for k = 0..upto."""
    global _LOGFACT
    if len(_LOGFACT) <= upto:
        _LOGFACT = gammaln(np.arange(max(upto + 1, 2 * len(_LOGFACT))) + 1.0)
    return _LOGFACT


def log_binom_coeff(n: int, k) -> np.ndarray | float:
    lf = _logfact(n)
    return lf[n] - lf[k] - lf[np.asarray(n) - k]


def pmf(params: BinomialParams, k: int) -> float:
    """P(X = k) for X ~ Binomial(params.n, params.p)."""
    n = params.n
    if not 0 <= k <= n:
        raise DomainError(f"k={k} outside 0..{n}")
    return float(binom_pmf_matrix(n, np.array([params.p]))[0, k])


def pmf_vector(n: int, p: float) -> np.ndarray:
    """All of P(X = 0..n) in one shot."""
    return binom_pmf_matrix(n, np.array([p]))[0]


def binom_pmf_matrix(n: int, ps: np.ndarray) -> np.ndarray:
    """Binomial pmf table, shape (len(ps), n+1); rows are exact at p in {0,1}.

    Inputs are clipped to [0, 1]: grid arithmetic upstream can leave a few
    ulps of drift past the endpoints, which must not turn into NaNs here.
    Rows with p > 1/2 are computed at 1-p and flipped (1-p is exact there),
    which makes the p -> 1-p reflection symmetry hold bit for bit whenever
    the mirrored probability is exactly representable.
    """
    ps = np.clip(np.asarray(ps, dtype=float), 0.0, 1.0)
    flip = ps > 0.5
    peff = np.where(flip, 1.0 - ps, ps)
    ks = np.arange(n + 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        logs = (
            log_binom_coeff(n, ks)[None, :]
            + ks[None, :] * np.log(peff[:, None])
            + (n - ks)[None, :] * np.log1p(-peff[:, None])
        )
    out = np.exp(logs)
    at0 = peff == 0.0
    if at0.any():
        out[at0, :] = 0.0
        out[at0, 0] = 1.0
    if flip.any():
        out[flip] = out[flip, ::-1]
    return out


def joint_pmf(n: int, m: int, p1: float, p2: float, x: int, y: int) -> float:
    """P(X = x, Y = y) for independent X ~ Bin(n, p1), Y ~ Bin(m, p2)."""
    return pmf(BinomialParams(n, p1), x) * pmf(BinomialParams(m, p2), y)


def joint_pmf_table(n: int, m: int, p1: float, p2: float) -> np.ndarray:
    """Full (n+1, m+1) joint pmf table for one parameter pair."""
    return np.outer(pmf_vector(n, p1), pmf_vector(m, p2))


def joint_slice_matrix(n: int, m: int, p1s: np.ndarray, p2s: np.ndarray) -> np.ndarray:
    """Joint pmf over outcome cells for many pairs at once.

    Returns shape (len(p1s), (n+1)*(m+1)) with cells flattened row-major,
    i.e. column x*(m+1)+y holds P(X=x, Y=y).
    """
    A = binom_pmf_matrix(n, np.asarray(p1s, dtype=float))
    B = binom_pmf_matrix(m, np.asarray(p2s, dtype=float))
    return (A[:, :, None] * B[:, None, :]).reshape(len(A), (n + 1) * (m + 1))


@dataclass(frozen=True)
class Grid:
    """A finite sorted grid, kept as integer indices over a decimal step.

    ``values[i] == offset + indices[i] * step`` (when built regularly), so
    membership and difference tests can be done in integer arithmetic.  Grids
    built from raw values lose that invariant and fall back to tolerance
    comparisons.
    """

    values: np.ndarray
    step: float | None = None
    indices: np.ndarray | None = None
    offset: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or len(v) == 0:
            raise DomainError("grid needs at least one value")
        if len(v) > 1 and not (np.diff(v) > 0).all():
            raise DomainError("grid values must be strictly increasing")
        object.__setattr__(self, "values", v)

    @classmethod
    def regular(cls, lo: float, hi: float, step: float) -> "Grid":
        """Grid {lo, lo+step, ..., hi}; lo and hi must be step multiples."""
        i0 = int(round(lo / step))
        i1 = int(round(hi / step))
        if abs(i0 * step - lo) > PAIR_TOL or abs(i1 * step - hi) > PAIR_TOL:
            raise DomainError("lo/hi are not multiples of step")
        idx = np.arange(i0, i1 + 1)
        return cls(values=idx * step, step=step, indices=idx)

    @classmethod
    def from_values(cls, values) -> "Grid":
        return cls(values=np.asarray(values, dtype=float))

    def __len__(self) -> int:
        return len(self.values)

    @property
    def gaps(self) -> np.ndarray:
        return np.diff(self.values)

    @property
    def d_min(self) -> float:
        return float(self.gaps.min()) if len(self) > 1 else 0.0

    @property
    def d_max(self) -> float:
        return float(self.gaps.max()) if len(self) > 1 else 0.0

    @property
    def equally_spaced(self) -> bool:
        if len(self) < 2:
            return True
        if self.step is not None:
            return True
        return bool((np.abs(self.gaps - self.gaps[0]) <= 1e-12).all())

    @property
    def d(self) -> float:
        """Common step when equally spaced."""
        if not self.equally_spaced:
            raise DomainError("grid is not equally spaced")
        return self.step if self.step is not None else (self.d_min if len(self) > 1 else 0.0)

    def index_of(self, value: float, tol: float = PAIR_TOL) -> int | None:
        """Position of ``value`` in the grid, or None if absent (within tol)."""
        i = int(np.searchsorted(self.values, value))
        for j in (i - 1, i, i + 1):
            if 0 <= j < len(self.values) and abs(self.values[j] - value) <= tol:
                return j
        return None

    def __contains__(self, value: float) -> bool:
        return self.index_of(value) is not None


def delta_grid(step: float = 0.01) -> Grid:
    """The default difference grid {-1, -1+step, ..., 1}."""
    return Grid.regular(-1.0, 1.0, step)


def prob_grid(step: float = 0.01) -> Grid:
    """The default proportion grid {0, step, ..., 1}."""
    return Grid.regular(0.0, 1.0, step)


@dataclass(frozen=True)
class DeltaPairSet:
    """The (p1, p2) pairs active for one difference value delta."""

    delta: float
    p1: np.ndarray
    p2: np.ndarray

    def __post_init__(self):
        if not -1.0 - PAIR_TOL <= self.delta <= 1.0 + PAIR_TOL:
            raise DomainError(f"delta={self.delta} outside [-1, 1]")
        if len(self.p1) != len(self.p2):
            raise DomainError("p1/p2 length mismatch")
        if len(self.p1):
            bad = (
                (self.p1 < -PAIR_TOL)
                | (self.p1 > 1 + PAIR_TOL)
                | (self.p2 < -PAIR_TOL)
                | (self.p2 > 1 + PAIR_TOL)
                | (np.abs(self.p1 - self.p2 - self.delta) > 1e-12)
            )
            if bad.any():
                raise DomainError("pair outside unit square or off the delta constraint")

    def __len__(self) -> int:
        return len(self.p1)

    @property
    def is_empty(self) -> bool:
        return len(self.p1) == 0

    @property
    def pairs(self) -> list[tuple[float, float]]:
        return list(zip(self.p1.tolist(), self.p2.tolist()))


def make_pair_set(delta: float, P: Grid | None = None, mode: str = "intersect") -> DeltaPairSet:
    """Active (p1, p2) pairs for a difference ``delta``.

    mode="intersect": all (p1, p1-delta) with both coordinates on grid P
    (tolerance PAIR_TOL).  An empty result is returned as-is; the caller
    decides whether that is an error.

    mode="per_delta": the 101-point equal-jump grid spanning the feasible p1
    range for this delta (the fine-grid generalized Blyth-Still choice);
    P is ignored.
    """
    if not -1.0 - PAIR_TOL <= delta <= 1.0 + PAIR_TOL:
        raise DomainError(f"delta={delta} outside [-1, 1]")
    if mode == "intersect":
        if P is None:
            raise DomainError("intersect mode needs a grid P")
        p1 = P.values
        want = p1 - delta
        lo = np.searchsorted(P.values, want - PAIR_TOL, side="left")
        ok = (lo < len(P.values)) & (np.abs(P.values[np.minimum(lo, len(P.values) - 1)] - want) <= PAIR_TOL)
        p1v = p1[ok]
        # p2 is taken from the grid itself: recomputing p1 - delta in floats
        # can stray a few ulps outside [0, 1]
        p2v = P.values[lo[ok]]
        return DeltaPairSet(delta=delta, p1=p1v, p2=p2v)
    if mode == "per_delta":
        if delta >= 0:
            lo_p, hi_p = delta, 1.0
        else:
            lo_p, hi_p = 0.0, 1.0 + delta
        p1v = np.linspace(lo_p, hi_p, 101)
        return DeltaPairSet(delta=delta, p1=p1v, p2=p1v - delta)
    raise DomainError(f"unknown pair-set mode {mode!r}")
