"""Confidence-interval tables: one interval per observable outcome.

A two-sample table maps each outcome (x, y) in {0..n} x {0..m} to an interval
[lower, upper] for the difference p1 - p2; a one-sample table (m is None) maps
x in {0..n} to an interval for p1.  Tables are the common currency between the
construction methods, the evaluation criteria and the file formats.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .probcore import DomainError


@dataclass
class CiTable:
    """Interval system indexed by outcome.

    ``lower`` and ``upper`` have shape (n+1, m+1) for two-sample tables and
    shape (n+1,) for one-sample tables (m is None).
    """

    n: int
    m: int | None
    alpha: float
    method: str
    lower: np.ndarray
    upper: np.ndarray
    grid_meta: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        shape = (self.n + 1,) if self.m is None else (self.n + 1, self.m + 1)
        if self.lower.shape != shape or self.upper.shape != shape:
            raise DomainError(f"table arrays must have shape {shape}")
        if (self.upper - self.lower < -1e-12).any():
            raise DomainError("lower > upper somewhere in the table")
        lo_ok = -1.0 if self.m is not None else 0.0
        if (self.lower < lo_ok - 1e-12).any() or (self.upper > 1.0 + 1e-12).any():
            raise DomainError("interval endpoint outside the parameter range")

    @property
    def n_cells(self) -> int:
        return self.lower.size

    def interval(self, x: int, y: int | None = None) -> tuple[float, float]:
        if self.m is None:
            return float(self.lower[x]), float(self.upper[x])
        return float(self.lower[x, y]), float(self.upper[x, y])

    def total_length(self) -> float:
        return float(np.sum(self.upper - self.lower))

    def avg_length(self) -> float:
        return self.total_length() / self.n_cells

    def reflected(self) -> "CiTable":
        """The table induced by the p -> 1-p symmetry of both samples.

        Outcome (x, y) maps to (n-x, m-y) and the difference flips sign, so
        the reflected interval of cell (x, y) is [-u(n-x, m-y), -l(n-x, m-y)].
        """
        if self.m is None:
            lo = 1.0 - self.upper[::-1]
            hi = 1.0 - self.lower[::-1]
        else:
            lo = -self.upper[::-1, ::-1]
            hi = -self.lower[::-1, ::-1]
        return CiTable(self.n, self.m, self.alpha, self.method + "-reflected",
                       lo.copy(), hi.copy(), dict(self.grid_meta), dict(self.notes))


def truncate(lo: float, hi: float, bound: float = 1.0) -> tuple[float, float]:
    """Clip an interval to [-bound, bound]."""
    return max(lo, -bound), min(hi, bound)
