"""Dyadic lattices, the 3^n shifted system, and Calderon-Zygmund decomposition.

Lattice geometry is integer arithmetic in *ticks*, where one tick is the side
of the finest cube in the level window, ``2**k_min``.  A lattice of scale
``s`` (1 for ordinary lattices, 3 for the tripled ones) has at level ``k``
the cubes with side ``s * 2**(k - k_min)`` ticks whose lower corners are
``anchor + side * Z^n``.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import AlignmentError, DomainError, ParameterError
from .field import Cube, GridFunction


@dataclass(frozen=True, order=True)
class DyadicCube:
    lattice_id: str
    level: int
    coords: Tuple[int, ...]

    def to_dict(self) -> dict:
        return {"lattice_id": self.lattice_id, "level": self.level, "coords": list(self.coords)}

    @classmethod
    def from_dict(cls, d: dict) -> "DyadicCube":
        return cls(d["lattice_id"], int(d["level"]), tuple(int(c) for c in d["coords"]))


@dataclass(frozen=True)
class DyadicLattice:
    dimension: int
    k_min: int
    k_max: int
    anchor: Tuple[int, ...] = None
    scale: int = 1
    lattice_id: str = "D"

    def __post_init__(self):
        if self.dimension < 1:
            raise ParameterError("dimension must be positive")
        if self.k_min > self.k_max:
            raise ParameterError(f"empty level range [{self.k_min}, {self.k_max}]")
        if self.anchor is None:
            object.__setattr__(self, "anchor", (0,) * self.dimension)
        object.__setattr__(self, "anchor", tuple(int(a) for a in self.anchor))
        if len(self.anchor) != self.dimension:
            raise ParameterError("anchor has the wrong dimension")

    @classmethod
    def standard(cls, dimension: int, k_min: int, k_max: int) -> "DyadicLattice":
        return cls(dimension, k_min, k_max)

    @property
    def tick(self) -> float:
        return 2.0**self.k_min

    @property
    def levels(self) -> range:
        return range(self.k_min, self.k_max + 1)

    def side_ticks(self, level: int) -> int:
        return self.scale * 2 ** (level - self.k_min)

    def level_shift(self, level: int) -> Tuple[int, ...]:
        """Corner offset of the level-``level`` grid, reduced modulo its side (ticks)."""
        s = self.side_ticks(level)
        return tuple(a % s for a in self.anchor)

    def cube(self, level: int, coords) -> DyadicCube:
        return DyadicCube(self.lattice_id, int(level), tuple(int(c) for c in coords))

    def lower_ticks(self, q: DyadicCube) -> Tuple[int, ...]:
        s = self.side_ticks(q.level)
        return tuple(a + s * c for a, c in zip(self.anchor, q.coords))

    def to_cube(self, q: DyadicCube) -> Cube:
        lo = np.array(self.lower_ticks(q), dtype=float) * self.tick
        return Cube.from_corner(lo, self.side_ticks(q.level) * self.tick)

    def contains_box(self, lower_ticks, side_ticks: int) -> Optional[DyadicCube]:
        """The lattice cube with this corner and side, if there is one."""
        for level in self.levels:
            s = self.side_ticks(level)
            if s == side_ticks:
                offs = [lt - a for lt, a in zip(lower_ticks, self.anchor)]
                if all(o % s == 0 for o in offs):
                    return self.cube(level, [o // s for o in offs])
                return None
        return None

    def children(self, q: DyadicCube) -> List[DyadicCube]:
        if q.level <= self.k_min:
            return []
        return [
            self.cube(q.level - 1, [2 * c + b for c, b in zip(q.coords, bits)])
            for bits in itertools.product((0, 1), repeat=self.dimension)
        ]

    def parent(self, q: DyadicCube) -> Optional[DyadicCube]:
        if q.level >= self.k_max:
            return None
        return self.cube(q.level + 1, [c // 2 for c in q.coords])

    def containing(self, x, level: int) -> DyadicCube:
        """The level-``level`` cube whose half-open extent holds the point x."""
        t = np.asarray(x, dtype=float) / self.tick
        s = self.side_ticks(level)
        return self.cube(level, [int(np.floor((ti - a) / s)) for ti, a in zip(t, self.anchor)])

    def cubes_meeting(self, lower, upper, level: int) -> List[DyadicCube]:
        """Cubes of one level meeting the open box (lower, upper)."""
        s = self.side_ticks(level)
        lo = np.asarray(lower, dtype=float) / self.tick
        hi = np.asarray(upper, dtype=float) / self.tick
        ranges = []
        for a, l, u in zip(self.anchor, lo, hi):
            c0 = int(np.floor((l - a) / s))
            c1 = int(np.ceil((u - a) / s))
            ranges.append(range(c0, c1))
        return [self.cube(level, c) for c in itertools.product(*ranges)]

    def to_dict(self) -> dict:
        return {
            "dimension": self.dimension,
            "k_min": self.k_min,
            "k_max": self.k_max,
            "anchor": list(self.anchor),
            "scale": self.scale,
            "lattice_id": self.lattice_id,
        }


@dataclass(frozen=True)
class ShiftedSystem:
    base: DyadicLattice
    derived: Tuple[DyadicLattice, ...]
    residues: Tuple[Tuple[int, ...], ...]

    def lattice(self, lattice_id: str) -> DyadicLattice:
        for L in (self.base,) + self.derived:
            if L.lattice_id == lattice_id:
                return L
        raise KeyError(lattice_id)

    def classify_triple(self, q: DyadicCube) -> List[DyadicCube]:
        """All derived-lattice cubes equal to 3Q (one when the system is correct)."""
        side = self.base.side_ticks(q.level)
        lo = [t - side for t in self.base.lower_ticks(q)]
        hits = [L.contains_box(lo, 3 * side) for L in self.derived]
        return [h for h in hits if h is not None]

    def ancestors_of_triple_size(self, q: DyadicCube, lattice: DyadicLattice) -> List[DyadicCube]:
        """Cubes R of ``lattice`` with side 3 l_Q and Q inside R, by enumeration."""
        side = self.base.side_ticks(q.level)
        lo = self.base.lower_ticks(q)
        big = 3 * side
        out = []
        choices = []
        for l, a in zip(lo, lattice.anchor):
            # every candidate corner within one big side of Q
            c0 = (l - big - a) // big
            choices.append([c for c in range(c0, c0 + 3) if a + big * c <= l and l + side <= a + big * (c + 1)])
        level = q.level
        for coords in itertools.product(*choices):
            out.append(lattice.cube(level, coords))
        return out


def triple_residues(k_min: int, k_max: int, top: int) -> Dict[int, int]:
    """Residues mod 3 of the tripled-cube corner index, level by level.

    A tripled child's corner index is twice its parent's modulo 3, so one
    choice at the top level fixes every level below.
    """
    res = {k_max: top % 3}
    for k in range(k_max, k_min, -1):
        res[k - 1] = (2 * res[k]) % 3
    return res


def three_lattice(D: DyadicLattice) -> ShiftedSystem:
    """The 3^n lattices whose union contains 3Q for every Q in D."""
    if D.scale != 1:
        raise ParameterError("three_lattice needs an ordinary (scale 1) lattice")
    if D.k_min > D.k_max:
        raise ParameterError("empty level range")
    K = D.k_max - D.k_min
    lattices, residues = [], []
    for rho in itertools.product(range(3), repeat=D.dimension):
        anchor = tuple(a + (2**K) * r for a, r in zip(D.anchor, rho))
        lid = f"{D.lattice_id}3[{','.join(map(str, rho))}]"
        lattices.append(DyadicLattice(D.dimension, D.k_min, D.k_max, anchor, 3, lid))
        residues.append(rho)
    return ShiftedSystem(D, tuple(lattices), tuple(residues))


def verify_three_lattice(system: ShiftedSystem, extent_ticks: int) -> dict:
    """Exhaustive check over every base cube inside [0, extent)^n (ticks).

    Counts cubes whose triple is in zero or several derived lattices, and
    (cube, lattice) pairs without a unique tripled-size container.
    """
    D = system.base
    membership_violations = 0
    uniqueness_violations = 0
    checked = 0
    for level in D.levels:
        side = D.side_ticks(level)
        per_axis = []
        for a in D.anchor:
            c0 = int(np.ceil((0 - a) / side))
            c1 = int(np.floor((extent_ticks - a) / side))
            per_axis.append(range(c0, c1))
        for coords in itertools.product(*per_axis):
            q = D.cube(level, coords)
            checked += 1
            if len(system.classify_triple(q)) != 1:
                membership_violations += 1
            for L in system.derived:
                if len(system.ancestors_of_triple_size(q, L)) != 1:
                    uniqueness_violations += 1
    return {
        "cubes_checked": checked,
        "lattices": len(system.derived),
        "membership_violations": membership_violations,
        "uniqueness_violations": uniqueness_violations,
    }


def reduction_cube(Q: Cube, D: DyadicLattice) -> Cube:
    """Cube R of D with center(Q) in R and l_Q/2 < l_R <= l_Q."""
    level = int(np.floor(np.log2(Q.side) + 1e-12))
    if not (D.k_min <= level <= D.k_max):
        raise DomainError(f"cube side {Q.side} outside the lattice window")
    return D.to_cube(D.containing(Q.center, level))


# ---------------------------------------------------------------------------
# Calderon-Zygmund decomposition


@dataclass
class CZDecomposition:
    height: float
    lattice: DyadicLattice
    cubes: List[DyadicCube]
    good: GridFunction
    bad: Dict[DyadicCube, GridFunction] = field(default_factory=dict)

    @property
    def levels(self) -> List[int]:
        return sorted({q.level for q in self.cubes})

    def bad_total(self) -> GridFunction:
        out = np.zeros(self.good.shape)
        for q, b in self.bad.items():
            start, size = self.good.cell_range(self.lattice.to_cube(q))
            out[tuple(slice(s, s + size) for s in start)] += b.values
        return self.good.with_values(out)

    def stopping_measure(self) -> float:
        return float(sum(self.lattice.to_cube(q).measure for q in self.cubes))

    def to_json(self) -> str:
        return json.dumps(
            {"height": self.height, "lattice": self.lattice.to_dict(), "cubes": [q.to_dict() for q in self.cubes]},
            sort_keys=True,
        )


def cz_roots(f: GridFunction, D: DyadicLattice) -> List[DyadicCube]:
    """Top-level cubes of D meeting the support of f (all of them if f = 0)."""
    mask = f.support_mask()
    roots = D.cubes_meeting(f.lower, f.upper, D.k_max)
    if not mask.any():
        return roots
    keep = []
    for q in roots:
        start, size = _cells(f, D, q)
        if _block(mask.astype(float), start, size).any():
            keep.append(q)
    return keep


def _cells(f: GridFunction, D: DyadicLattice, q: DyadicCube):
    try:
        return f.cell_range(D.to_cube(q))
    except AlignmentError:
        raise AlignmentError(f"lattice cube {q} does not align with cells of side {f.h}") from None


def _block(values: np.ndarray, start, size: int) -> np.ndarray:
    sl = tuple(slice(max(s, 0), max(min(s + size, dim), 0)) for s, dim in zip(start, values.shape))
    return values[sl]


def cz_decompose(f: GridFunction, D: DyadicLattice, height: float) -> CZDecomposition:
    """Maximal cubes of D with <|f|>_P > height, descending from the roots.

    A root that already exceeds the height is selected as is; the bound on
    the good part is then only guaranteed below the roots.
    """
    if not height > 0:
        raise ParameterError(f"height must be positive, got {height}")
    absf = np.abs(f.values)
    good = np.array(f.values, dtype=float)
    cubes: List[DyadicCube] = []
    bad: Dict[DyadicCube, GridFunction] = {}
    stack = list(reversed(cz_roots(f, D)))
    while stack:
        q = stack.pop()
        start, size = _cells(f, D, q)
        if any(s < 0 or s + size > dim for s, dim in zip(start, f.shape)):
            raise DomainError(f"cube {q} leaves the grid box; enlarge the box to the lattice roots")
        sl = tuple(slice(s, s + size) for s in start)
        total = float(absf[sl].sum())
        if total > height * size**f.n:
            vals = f.values[sl]
            avg = float(vals.sum()) / size**f.n
            cubes.append(q)
            bad[q] = GridFunction(D.to_cube(q).lower, f.k, vals - avg)
            good[sl] = avg
        elif size > 1:
            stack.extend(reversed(D.children(q)))
    return CZDecomposition(height, D, cubes, f.with_values(good), bad)


def level_sum(d: CZDecomposition, level: int) -> GridFunction:
    """Sum of the bad atoms whose cube has side 2**level."""
    out = np.zeros(d.good.shape)
    for q, b in d.bad.items():
        if q.level == level:
            start, size = d.good.cell_range(d.lattice.to_cube(q))
            out[tuple(slice(s, s + size) for s in start)] += b.values
    return d.good.with_values(out)


def family_to_json(cubes: Sequence[DyadicCube]) -> str:
    return json.dumps([q.to_dict() for q in cubes], sort_keys=True)


def family_from_json(text: str) -> List[DyadicCube]:
    return [DyadicCube.from_dict(d) for d in json.loads(text)]
