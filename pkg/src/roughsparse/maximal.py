"""Maximal operators on grid functions.

Every supremum over cubes runs over a finite :class:`CubeFamily`, so each
maximal function computed here is a lower bound for its continuum
counterpart.  A cube contains a point when the point's cell lies in it.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage, signal

from .dyadic import DyadicLattice
from .errors import InvalidInputError, ParameterError
from .field import EXPL, Cube, GridFunction, OrliczGauge, orlicz_average_values
from .rearrange import quantile_index
from .sio import OperatorHandle, apply_fft, local_fields


@dataclass(frozen=True, eq=False)
class CubeFamily:
    """Grid-aligned cubes grouped by side, stored as cell-index corners.

    ``starts[m]`` is an integer array (c, n) of lower-corner cell indices of
    the cubes with ``m`` cells per side, relative to the grid ``origin``/``k``.
    """

    n: int
    k: int
    origin: Tuple[float, ...]
    starts: Dict[int, np.ndarray]

    @classmethod
    def from_cubes(cls, f: GridFunction, cubes: Iterable[Cube]) -> "CubeFamily":
        groups: Dict[int, list] = {}
        for Q in cubes:
            start, size = f.cell_range(Q)
            groups.setdefault(size, []).append(start)
        starts = {m: np.array(sorted(set(map(tuple, v))), dtype=np.int64).reshape(-1, f.n) for m, v in groups.items()}
        return cls(f.n, f.k, tuple(f.lower), dict(sorted(starts.items())))

    @classmethod
    def dyadic(
        cls,
        f: GridFunction,
        min_cells: int = 4,
        max_side: Optional[float] = None,
        shifted: bool = False,
    ) -> "CubeFamily":
        """Standard dyadic cubes inside the grid box with sides in [min_cells h, max_side].

        ``max_side`` defaults to half the shortest box side.  With ``shifted``
        the cubes translated by half their side along every axis are added.
        The standard lattice is anchored at the real origin.
        """
        if max_side is None:
            max_side = 0.5 * float(np.min(f.upper - f.lower))
        starts: Dict[int, np.ndarray] = {}
        m = int(min_cells)
        if m < 1 or m & (m - 1):
            raise ParameterError("min_cells must be a power of two")
        while m * f.h <= max_side * (1 + 1e-12):
            offsets = [0] + ([m // 2] if shifted and m > 1 else [])
            rows = []
            for off in offsets:
                axes = []
                for a in range(f.n):
                    lo_idx = int(round(f.lower[a] / f.h))
                    first = (-(lo_idx - off) % m)
                    axes.append(np.arange(first, f.shape[a] - m + 1, m))
                if all(len(ax) for ax in axes):
                    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, f.n)
                    rows.append(grid)
            if rows:
                starts[m] = np.concatenate(rows).astype(np.int64)
            m *= 2
        return cls(f.n, f.k, tuple(f.lower), starts)

    def check_grid(self, f: GridFunction) -> None:
        if f.n != self.n or f.k != self.k or not np.allclose(f.lower, self.origin):
            raise InvalidInputError("cube family was built for a different grid")

    @property
    def sizes(self) -> List[int]:
        return list(self.starts)

    def __len__(self) -> int:
        return int(sum(len(v) for v in self.starts.values()))

    def cubes(self) -> List[Cube]:
        h = 2.0**-self.k
        org = np.asarray(self.origin)
        return [Cube.from_corner(org + st * h, m * h) for m, arr in self.starts.items() for st in arr]

    def index(self, shape) -> Dict[tuple, List[int]]:
        """Per-cell list of positions (in ``cubes()`` order) of the containing cubes."""
        out: Dict[tuple, List[int]] = {}
        i = 0
        for m, arr in self.starts.items():
            for st in arr:
                for cell in np.ndindex(*(m,) * self.n):
                    idx = tuple(int(s + c) for s, c in zip(st, cell))
                    if all(0 <= x < d for x, d in zip(idx, shape)):
                        out.setdefault(idx, []).append(i)
                i += 1
        return out

    def fingerprint(self) -> tuple:
        return tuple((m, arr.tobytes()) for m, arr in self.starts.items())


@dataclass(frozen=True)
class MaximalConfig:
    lam: float = 0.5
    p: float = 1.0
    gauge: Optional[OrliczGauge] = None
    family: Optional[CubeFamily] = None

    def __post_init__(self):
        if not (0 < self.lam < 1):
            raise ParameterError(f"lambda must lie in (0, 1), got {self.lam}")
        if not (self.p >= 1):
            raise ParameterError(f"p must be at least 1, got {self.p}")


def _family(f: GridFunction, family: Optional[CubeFamily]) -> CubeFamily:
    fam = CubeFamily.dyadic(f) if family is None else family
    fam.check_grid(f)
    if len(fam) == 0:
        raise ParameterError("empty cube family")
    return fam


def _spread_max(shape, n: int, size: int, starts: np.ndarray, vals: np.ndarray, out: np.ndarray) -> None:
    """out = max(out, value of each cube on its cells), clipped to the grid."""
    for st, v in zip(starts, vals):
        sl = tuple(slice(max(s, 0), max(min(s + size, d), 0)) for s, d in zip(st, shape))
        np.maximum(out[sl], v, out=out[sl])


# ---------------------------------------------------------------------------
# excluded applications, memoized


_CACHE: Dict[tuple, np.ndarray] = {}
_CACHE_LOCK = threading.Lock()
_CACHE_LIMIT = 64


def clear_cache() -> None:
    with _CACHE_LOCK:
        _CACHE.clear()


def excluded_blocks(T: OperatorHandle, f: GridFunction, size: int, starts: np.ndarray) -> np.ndarray:
    """T(f chi_{R^n minus 3Q}) on Q for each listed cube, shape (c, size, ..., size).

    Computed as the full application minus the local one on 3Q.  Cubes with
    no support of f outside 3Q get exact zeros.
    """
    key = (T.key, f.fingerprint(), int(size), starts.tobytes())
    with _CACHE_LOCK:
        hit = _CACHE.get(key)
    if hit is not None:
        return hit
    n, m = f.n, int(size)
    Tf = apply_fft(T, f).values
    loc = local_fields(T, f, m, starts)
    padded_Tf = np.pad(Tf, m)
    # support cells inside 3Q, counted exactly with integer prefix sums
    supp = np.pad((f.values != 0).astype(np.int64), 2 * m)
    total = int(supp.sum())
    cs = supp
    for a in range(n):
        cs = np.cumsum(cs, axis=a)
    cs = np.pad(cs, [(1, 0)] * n)
    out = np.empty_like(loc)
    for i, st in enumerate(starts):
        sl = tuple(slice(s + m, s + 2 * m) for s in st)
        inside = _box_sum(cs, [s + m for s in st], 3 * m)
        if inside >= total:
            out[i] = 0.0
        else:
            out[i] = padded_Tf[sl] - loc[i]
    out.setflags(write=False)
    with _CACHE_LOCK:
        if len(_CACHE) >= _CACHE_LIMIT:
            _CACHE.clear()
        _CACHE[key] = out
    return out


def _box_sum(cs: np.ndarray, lo, width: int) -> float:
    """Sum over the box [lo, lo + width) from an inclusive prefix-sum array padded by one."""
    n = len(lo)
    total = 0.0
    for corner in np.ndindex(*(2,) * n):
        idx = tuple(l + width * c for l, c in zip(lo, corner))
        sign = (-1) ** (n - sum(corner))
        total += sign * cs[idx]
    return float(total)


def _per_cube(T, f, family, stat) -> GridFunction:
    fam = _family(f, family)
    out = np.zeros(f.shape)
    for m, starts in fam.starts.items():
        if len(starts) == 0:
            continue
        blocks = excluded_blocks(T, f, m, starts).reshape(len(starts), -1)
        _spread_max(f.shape, f.n, m, starts, stat(np.abs(blocks)), out)
    return f.with_values(out)


# ---------------------------------------------------------------------------
# local-average maximal functions


def hl_maximal(f: GridFunction, s: float = 1.0, family: Optional[CubeFamily] = None) -> GridFunction:
    """Hardy-Littlewood maximal function M_s f = M(|f|^s)^(1/s).

    Without a family, the supremum runs over every grid-aligned cube inside
    the box (all positions, all sides), computed with prefix sums and a
    sliding maximum.
    """
    if s < 1:
        raise ParameterError(f"s must be at least 1, got {s}")
    g = np.abs(f.values) ** s
    out = np.zeros(f.shape)
    if family is not None:
        family.check_grid(f)
        for m, starts in family.starts.items():
            avgs = np.array([_padded(g, st, m).mean() for st in starts])
            _spread_max(f.shape, f.n, m, starts, avgs, out)
        return f.with_values(out ** (1.0 / s))
    n = f.n
    cs = g
    for a in range(n):
        cs = np.cumsum(cs, axis=a)
    cs = np.pad(cs, [(1, 0)] * n)
    for m in range(1, min(f.shape) + 1):
        # averages of every m-cube, indexed by lower corner
        sums = np.zeros(tuple(d - m + 1 for d in f.shape))
        for corner in np.ndindex(*(2,) * n):
            sl = tuple(slice(m * c, m * c + d - m + 1) for c, d in zip(corner, f.shape))
            sums += (-1) ** (n - sum(corner)) * cs[sl]
        avg = sums / m**n
        # a cell at i is covered by corners i - m + 1 .. i
        padded = np.pad(avg, [(m - 1, m - 1)] * n, constant_values=-np.inf)
        win = _window_max(padded, m)
        np.maximum(out, win, out=out)
    return f.with_values(np.maximum(out, 0.0) ** (1.0 / s))


def _window_max(padded: np.ndarray, m: int) -> np.ndarray:
    """Max over the trailing window of length m along each axis, cropped to the grid."""
    out = padded
    for a in range(padded.ndim):
        out = ndimage.maximum_filter1d(out, size=m, axis=a, origin=-(m // 2), mode="constant", cval=-np.inf)
    return out[tuple(slice(0, d - m + 1) for d in padded.shape)]


def _padded(values: np.ndarray, start, size: int) -> np.ndarray:
    pads = [(max(0, -s), max(0, s + size - d)) for s, d in zip(start, values.shape)]
    sl = tuple(slice(max(s, 0), min(s + size, d)) for s, d in zip(start, values.shape))
    return np.pad(values[sl], pads)


def dyadic_maximal(f: GridFunction, D: DyadicLattice) -> GridFunction:
    """sup over the lattice cubes containing each cell of the average of |f|."""
    absf = np.abs(f.values)
    out = np.zeros(f.shape)
    for level in D.levels:
        side = D.side_ticks(level) * D.tick
        m = side / f.h
        if m < 1 - 1e-9 or abs(m - round(m)) > 1e-9:
            continue
        for q in D.cubes_meeting(f.lower, f.upper, level):
            start, size = f.cell_range(D.to_cube(q))
            avg = _padded(absf, start, size).mean()
            sl = tuple(slice(max(s, 0), max(min(s + size, d), 0)) for s, d in zip(start, f.shape))
            np.maximum(out[sl], avg, out=out[sl])
    return f.with_values(out)


# ---------------------------------------------------------------------------
# excluded-application maximal functions


def _quantile_rows(absblocks: np.ndarray, lam: float) -> np.ndarray:
    c, M = absblocks.shape
    j = quantile_index(lam, M)
    return np.partition(absblocks, M - 1 - j, axis=1)[:, M - 1 - j]


def m_lambda(T: OperatorHandle, f: GridFunction, cfg: MaximalConfig) -> GridFunction:
    """M_{lam,T} f: sup over cubes of the lam|Q| quantile of T(f chi outside 3Q) on Q."""
    return _per_cube(T, f, cfg.family, lambda b: _quantile_rows(b, cfg.lam))


def m_lambda_sweep(T: OperatorHandle, f: GridFunction, lams: Sequence[float], family: Optional[CubeFamily] = None) -> Dict[float, GridFunction]:
    """m_lambda for several lambdas, sorting each cube's block once."""
    fam = _family(f, family)
    outs = {lam: np.zeros(f.shape) for lam in lams}
    for m, starts in fam.starts.items():
        if len(starts) == 0:
            continue
        blocks = np.abs(excluded_blocks(T, f, m, starts).reshape(len(starts), -1))
        desc = -np.sort(-blocks, axis=1)
        for lam in lams:
            j = quantile_index(lam, desc.shape[1])
            _spread_max(f.shape, f.n, m, starts, desc[:, j], outs[lam])
    return {lam: f.with_values(v) for lam, v in outs.items()}


def _p_rows(absblocks: np.ndarray, p: float) -> np.ndarray:
    if math.isinf(p):
        return absblocks.max(axis=1)
    return np.mean(absblocks**p, axis=1) ** (1.0 / p)


def m_p(T: OperatorHandle, f: GridFunction, cfg: MaximalConfig) -> GridFunction:
    """sup over cubes of the p-average of T(f chi outside 3Q) on Q; p = inf gives M_T."""
    return _per_cube(T, f, cfg.family, lambda b: _p_rows(b, cfg.p))


def m_T(T: OperatorHandle, f: GridFunction, family: Optional[CubeFamily] = None) -> GridFunction:
    return _per_cube(T, f, family, lambda b: b.max(axis=1))


def m_orlicz(T: OperatorHandle, f: GridFunction, cfg: MaximalConfig) -> GridFunction:
    """sup over cubes of the Orlicz (default exp L) average of the excluded application."""
    gauge = cfg.gauge or EXPL

    def stat(b):
        return np.array([orlicz_average_values(row, gauge) for row in b])

    return _per_cube(T, f, cfg.family, stat)


def bilinear_m(T: OperatorHandle, f: GridFunction, g: GridFunction, family: Optional[CubeFamily] = None) -> GridFunction:
    """sup over cubes of (1/|Q|) int_Q |T(f chi outside 3Q)| |g|."""
    if not f.same_grid(g):
        raise InvalidInputError("f and g live on different grids")
    fam = _family(f, family)
    absg = np.abs(g.values)
    out = np.zeros(f.shape)
    for m, starts in fam.starts.items():
        if len(starts) == 0:
            continue
        blocks = np.abs(excluded_blocks(T, f, m, starts))
        gb = np.stack([_padded(absg, st, m) for st in starts])
        vals = (blocks * gb).reshape(len(starts), -1).mean(axis=1)
        _spread_max(f.shape, f.n, m, starts, vals, out)
    return f.with_values(out)


# ---------------------------------------------------------------------------
# annular pieces


def annular_maximal(omega, j: int, f: GridFunction, family: Optional[CubeFamily] = None) -> GridFunction:
    """M_T for T the convolution with the annular piece K_j."""
    return m_T(OperatorHandle("annular", omega, j=j), f, family)


def annular_vanishing_side(j: int) -> float:
    """Cubes with at least this side give M_{T_j} contribution zero.

    K_j lives on 2^(j-1) <= |x| <= 2^(j+1), while points of Q and of the
    complement of 3Q are at least l_Q apart.
    """
    return 2.0 ** (j + 1)


def annular_pointwise_bound(omega, j: int, f: GridFunction) -> GridFunction:
    """sup|Omega| 2^{-(j-1)n} int over |y - x| <= 2^j (2 + sqrt(n)/2) of |f|, at each cell.

    Valid for cube families whose sides are at most 2^(j-1).
    """
    n = f.n
    radius = 2.0**j * (2.0 + math.sqrt(n) / 2.0)
    reach = int(math.ceil(radius / f.h)) + 1
    axes = [np.arange(-reach, reach + 1)] * n
    grid = np.meshgrid(*axes, indexing="ij")
    dist = np.sqrt(sum(g.astype(float) ** 2 for g in grid)) * f.h
    ball = (dist <= radius).astype(float)
    mass = signal.fftconvolve(np.abs(f.values), ball, mode="same") * f.cell_measure
    mass = np.maximum(mass, 0.0)
    return f.with_values(omega.sup_norm * 2.0 ** (-(j - 1) * n) * mass)


def chebyshev_factor(lam: float, p: float) -> float:
    return lam ** (-1.0 / p)
