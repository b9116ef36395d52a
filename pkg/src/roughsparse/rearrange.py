"""Non-increasing rearrangements on cell sets.

All functions use the right-continuous convention
``f*(t) = inf{a >= 0 : |{|f| > a}| <= t}``, which for a cell set with equal
cell measure ``c`` gives ``f*(t) = sorted_desc[floor(t / c)]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, ParameterError
from .field import Cube, GridFunction


@dataclass(frozen=True, eq=False)
class Rearrangement:
    sorted_values: np.ndarray
    cell_measure: float

    @property
    def total(self) -> float:
        return self.sorted_values.size * self.cell_measure

    def breakpoints(self) -> np.ndarray:
        """Left endpoints of the steps: 0, c, 2c, ..."""
        return np.arange(self.sorted_values.size) * self.cell_measure

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        j = np.floor(t / self.cell_measure * (1.0 + 1e-12)).astype(np.int64)
        v = np.concatenate([self.sorted_values, [0.0]])
        out = v[np.clip(j, 0, self.sorted_values.size)]
        return out if out.ndim else float(out)

    def integral(self, p: float = 1.0) -> float:
        return float(np.sum(self.sorted_values**p) * self.cell_measure)


def rearrange_values(values, cell_measure: float) -> Rearrangement:
    a = np.abs(np.asarray(values, dtype=float)).ravel()
    if a.size == 0:
        raise InvalidInputError("cannot rearrange over an empty set")
    return Rearrangement(-np.sort(-a), cell_measure)


def rearrange(f: GridFunction, mask=None) -> Rearrangement:
    """Rearrangement of |f| over the cells selected by ``mask`` (default: all)."""
    vals = f.values if mask is None else f.values[np.asarray(mask, dtype=bool)]
    return rearrange_values(vals, f.cell_measure)


def quantile_index(lam: float, count: int) -> int:
    """Position in the descending sort that realizes (F chi_Q)*(lam |Q|).

    ``lam = 1`` is clamped to the last cell so the full-measure quantile is the
    minimum over Q rather than the trailing zero.
    """
    if not (0.0 < lam <= 1.0):
        raise ParameterError(f"lambda must lie in (0, 1], got {lam}")
    j = int(math.floor(lam * count * (1.0 + 1e-12)))
    return min(j, count - 1)


def quantile_values(block, lam: float) -> float:
    a = np.abs(np.asarray(block, dtype=float)).ravel()
    j = quantile_index(lam, a.size)
    # the (j+1)-th largest value
    return float(np.partition(a, a.size - 1 - j)[a.size - 1 - j])


def quantile(f: GridFunction, Q: Cube, lam: float) -> float:
    """(f chi_Q)*(lam |Q|) for a grid-aligned cube Q."""
    start, size = f.cell_range(Q)
    return quantile_values(f.block(start, size), lam)


def weak_quasinorm_values(values, cell_measure: float, p: float = 1.0) -> float:
    """sup_a a |{|F| > a}|^(1/p), attained just below one of the cell values."""
    a = -np.sort(-np.abs(np.asarray(values, dtype=float)).ravel())
    if a.size == 0 or a[0] == 0:
        return 0.0
    meas = np.arange(1, a.size + 1) * cell_measure
    return float(np.max(a * meas ** (1.0 / p)))


def weak_quasinorm(F: GridFunction, p: float = 1.0) -> float:
    return weak_quasinorm_values(F.values, F.cell_measure, p)
