"""Sparse families and the constructive sparse domination of a bilinear form.

The construction works on a grid padded to the bounding box of the root
cubes, with f and g extended by zero.  Each processed cube Q0 gets two
score functions on its cells:

* ``|T(f chi_{3Q0})| / <f>_{q,3Q0}``
* the local bilinear maximal function over dyadic subcubes of Q0, divided by
  ``<f>_{r,3Q0} <g>_{s,Q0}``

Thresholds A, B cut off the exceptional sets E1, E2; a Calderon-Zygmund
decomposition of ``chi_{E1 u E2}`` at height 2^-(n+1) yields the stopping
cubes, and the recursion continues inside each of them.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .dyadic import DyadicLattice, cz_decompose
from .errors import DomainError, InvalidInputError, ParameterError
from .field import Cube, GridFunction, p_average_values
from .sio import OperatorHandle, apply_fft, local_fields


@dataclass
class SparseFamily:
    """Cubes with witness cell masks on a common grid.

    ``grid`` fixes the cell geometry; ``witness[i]`` is a boolean mask over
    the cells of ``cubes[i]`` (shape (m,)*n, m cells per side).
    """

    grid: GridFunction
    cubes: List[Cube]
    witness: List[np.ndarray]
    eta: float

    def __len__(self):
        return len(self.cubes)

    def witness_cells(self, i: int) -> np.ndarray:
        """Global cell indices (c, n) of witness i."""
        start, _ = self.grid.cell_range(self.cubes[i])
        return np.argwhere(self.witness[i]) + np.asarray(start)

    def to_json(self) -> str:
        items = []
        for Q, w in zip(self.cubes, self.witness):
            items.append({"cube": Q.to_dict(), "witness_rle": rle_encode(w.ravel())})
        return json.dumps(
            {"eta": self.eta, "k": self.grid.k, "origin": list(map(float, self.grid.lower)), "cubes": items},
            sort_keys=True,
        )


def rle_encode(bits: np.ndarray) -> List[int]:
    """Run lengths of a boolean sequence, starting with a run of False."""
    bits = np.asarray(bits, dtype=bool)
    runs, cur, count = [], False, 0
    for b in bits:
        if b == cur:
            count += 1
        else:
            runs.append(count)
            cur, count = b, 1
    runs.append(count)
    return runs


def rle_decode(runs: Sequence[int]) -> np.ndarray:
    out, cur = [], False
    for r in runs:
        out.extend([cur] * int(r))
        cur = not cur
    return np.array(out, dtype=bool)


@dataclass
class TraceEntry:
    cube: Cube
    A: float
    B: float
    e1: float
    e2: float
    stopping: List[Cube]
    depth: int
    leaf: bool

    @property
    def stopping_measure(self) -> float:
        return float(sum(P.measure for P in self.stopping))

    def satisfies_bounds(self) -> bool:
        n = self.cube.n
        cap = self.cube.measure / 2 ** (n + 3)
        tol = 1e-12 * self.cube.measure
        return self.e1 <= cap + tol and self.e2 <= cap + tol and self.stopping_measure <= self.cube.measure / 2 + tol

    def to_dict(self) -> dict:
        return {
            "cube": self.cube.to_dict(),
            "A": self.A,
            "B": self.B,
            "e1": self.e1,
            "e2": self.e2,
            "stopping": [P.to_dict() for P in self.stopping],
            "depth": self.depth,
            "leaf": self.leaf,
        }


ConstructionTrace = List[TraceEntry]


@dataclass(frozen=True)
class Exponents:
    q: float = 1.0
    r: float = 1.0
    s: float = 1.0

    def __post_init__(self):
        if not (1 <= self.q <= self.r) or self.s < 1:
            raise ParameterError(f"need 1 <= q <= r and s >= 1, got {self}")

    @property
    def nu(self) -> float:
        return 1.0 / (1.0 / self.r + 1.0 / self.s)


@dataclass(frozen=True)
class Thresholds:
    """Weak and bilinear norm estimates from which the fixed thresholds A and B are built."""

    weak_norm: float
    bilinear_norm: float

    def constants(self, n: int, e: Exponents) -> Tuple[float, float]:
        A = (8 * 6**n) ** (1 / e.q) * self.weak_norm
        B = (2 ** (n + 3)) ** (1 / e.nu) * 3 ** (n / e.r) * self.bilinear_norm
        return A, B


# ---------------------------------------------------------------------------
# partition of the support


def support_cube(f: GridFunction) -> Cube:
    """Smallest grid-aligned cube with a power-of-two cell count covering supp f."""
    mask = f.support_mask()
    if not mask.any():
        return f.cube_from_cells(tuple([0] * f.n), 1)
    idx = np.argwhere(mask)
    lo, hi = idx.min(axis=0), idx.max(axis=0) + 1
    m = 1
    while m < int(np.max(hi - lo)):
        m *= 2
    return f.cube_from_cells(tuple(int(x) for x in lo), m)


def partition_support(f: GridFunction, domain: Optional[Tuple[Sequence[float], Sequence[float]]] = None) -> List[Cube]:
    """Q0 covering supp f, then rings of 3^n - 1 congruent cubes tiling 3^g Q0 minus 3^(g-1) Q0.

    Rings stop once the box ``domain`` (default: the grid box of f) is
    covered; ring cubes missing the domain are dropped.  Every returned R
    satisfies supp f inside 3R.
    """
    lower, upper = (f.lower, f.upper) if domain is None else (np.asarray(domain[0], float), np.asarray(domain[1], float))
    if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
        raise DomainError("the domain must be bounded")
    Q0 = support_cube(f)
    roots = [Q0]
    inner = Q0
    tol = 1e-12
    while not (np.all(inner.lower <= lower + tol) and np.all(inner.upper >= upper - tol)):
        side = inner.side
        for shift in np.ndindex(*(3,) * f.n):
            if all(s == 1 for s in shift):
                continue
            corner = inner.lower + (np.array(shift) - 1) * side
            R = Cube.from_corner(corner, side)
            if np.all(R.upper > lower + tol) and np.all(R.lower < upper - tol):
                roots.append(R)
        inner = inner.dilate(3)
    return roots


# ---------------------------------------------------------------------------
# construction


def _avg(block: np.ndarray, p: float) -> float:
    return p_average_values(block, p)


def _padded_grid(f: GridFunction, g: GridFunction, roots: List[Cube]) -> Tuple[GridFunction, GridFunction, tuple]:
    lo = np.min([R.lower for R in roots] + [f.lower], axis=0)
    hi = np.max([R.upper for R in roots] + [f.upper], axis=0)
    base = GridFunction.zeros(lo, hi, f.k)
    start, _ = base.cell_range(Cube.from_corner(f.lower, f.h))
    sl = tuple(slice(s, s + d) for s, d in zip(start, f.shape))
    fv = np.zeros(base.shape)
    gv = np.zeros(base.shape)
    fv[sl] = f.values
    gv[sl] = g.values
    return base.with_values(fv), base.with_values(gv), sl


class _RootFields:
    """Per-level fields L_P = T(f chi_{3P}) on P for the dyadic subcubes of a root."""

    def __init__(self, T: OperatorHandle, f: GridFunction, start, size: int):
        self.start = np.asarray(start)
        self.size = size
        self.levels: Dict[int, np.ndarray] = {}
        n = f.n
        m = size
        while m >= 1:
            per = size // m
            corners = np.stack(np.meshgrid(*[np.arange(per) * m] * n, indexing="ij"), axis=-1).reshape(-1, n)
            L = local_fields(T, f, m, corners + self.start)
            # tile back into a root-shaped array
            arr = L.reshape((per,) * n + (m,) * n)
            order = [x for a in range(n) for x in (a, n + a)]
            self.levels[m] = arr.transpose(order).reshape((size,) * n)
            if m == 1 or (m & (m - 1)):
                break
            m //= 2

    def block(self, m: int, start, size: int) -> np.ndarray:
        rel = np.asarray(start) - self.start
        return self.levels[m][tuple(slice(r, r + size) for r in rel)]


def _block_mean(a: np.ndarray, m: int) -> np.ndarray:
    """Means over the m-blocks of a cube array, broadcast back to cells."""
    n = a.ndim
    size = a.shape[0]
    per = size // m
    shaped = a.reshape(sum(((per, m) for _ in range(n)), ()))
    means = shaped.mean(axis=tuple(2 * i + 1 for i in range(n)))
    out = means
    for ax in range(n):
        out = np.repeat(out, m, axis=ax)
    return out


def _threshold(scores: np.ndarray, n: int) -> Tuple[float, int]:
    """Smallest value a with #{scores > a} <= count / 2^(n+3)."""
    flat = -np.sort(-scores.ravel())
    j = int(math.floor(flat.size / 2 ** (n + 3)))
    a = float(flat[min(j, flat.size - 1)])
    return a, int(np.count_nonzero(scores > a))


def local_stopping(
    Q0: Cube,
    f: GridFunction,
    g: GridFunction,
    T: OperatorHandle,
    exps: Exponents = Exponents(),
    mode: str = "calibrated",
    thresholds: Optional[Thresholds] = None,
    depth: int = 0,
    _fields: Optional[_RootFields] = None,
) -> Tuple[List[Cube], TraceEntry]:
    """Exceptional sets on Q0 and the stopping cubes of their CZ decomposition."""
    if mode not in ("calibrated", "paper-constants"):
        raise ParameterError(f"unknown mode {mode!r}")
    if mode == "paper-constants" and thresholds is None:
        raise ParameterError("paper-constants mode needs norm estimates")
    n = f.n
    start, m = f.cell_range(Q0)
    if _fields is None:
        _fields = _RootFields(T, f, start, m)
    fblock3 = f.block(tuple(s - m for s in start), 3 * m)
    gblock = g.block(start, m)
    fq = _avg(fblock3, exps.q)
    fr = _avg(fblock3, exps.r)
    gs = _avg(gblock, exps.s)
    LQ = _fields.block(m, start, m)

    score1 = np.abs(LQ) / fq if fq > 0 else np.zeros_like(LQ)
    # cubes that cannot be halved down to single cells end the recursion
    leaf = m == 1 or (m & (m - 1)) != 0
    mbil = np.zeros_like(LQ)
    absg = np.abs(gblock)
    if not leaf and fr > 0 and gs > 0:
        sub = m // 2
        while sub >= 1:
            diff = np.abs(LQ - _fields.block(sub, start, m)) * absg
            np.maximum(mbil, _block_mean(diff, sub), out=mbil)
            sub //= 2
    score2 = mbil / (fr * gs) if fr > 0 and gs > 0 else np.zeros_like(LQ)

    cell = f.cell_measure
    if leaf:
        A = float(score1.max())
        B = 0.0
        return [], TraceEntry(Q0, A, B, 0.0, 0.0, [], depth, True)
    if mode == "calibrated":
        A, _ = _threshold(score1, n)
        B, _ = _threshold(score2, n)
    else:
        A, B = thresholds.constants(n, exps)
    E1 = score1 > A
    E2 = score2 > B
    E = (E1 | E2).astype(float)
    stopping: List[Cube] = []
    if E.any():
        level = int(round(math.log2(m))) - f.k
        anchor = tuple(int(round(x / f.h)) for x in Q0.lower)
        lattice = DyadicLattice(n, -f.k, level - 1, anchor, 1, "DQ")
        chiE = GridFunction(Q0.lower, f.k, E)
        cz = cz_decompose(chiE, lattice, 2.0 ** -(n + 1))
        stopping = [lattice.to_cube(q) for q in cz.cubes]
    entry = TraceEntry(Q0, A, B, float(E1.sum() * cell), float(E2.sum() * cell), stopping, depth, False)
    return stopping, entry


@dataclass
class SparseResult:
    family: SparseFamily
    K: float
    trace: ConstructionTrace
    grid: GridFunction
    mode: str
    boundary_note: str = ""


def sparse_dominate(
    f: GridFunction,
    g: GridFunction,
    T: OperatorHandle,
    exps: Exponents = Exponents(),
    mode: str = "calibrated",
    thresholds: Optional[Thresholds] = None,
    domain=None,
) -> SparseResult:
    """Build S = {3Q : Q processed} and K = max(A + B) so that |<Tf, g>| <= K Lambda(S)."""
    if not f.same_grid(g):
        raise InvalidInputError("f and g live on different grids")
    if not (np.all(np.isfinite(f.values)) and np.all(np.isfinite(g.values))):
        raise DomainError("f and g must be finite")
    roots = partition_support(f, domain)
    fp, gp, _ = _padded_grid(f, g, roots)
    cubes: List[Cube] = []
    witness: List[np.ndarray] = []
    trace: ConstructionTrace = []
    for R in roots:
        start, m = fp.cell_range(R)
        fields = _RootFields(T, fp, start, m)
        stack = [(R, 0)]
        while stack:
            Q, depth = stack.pop()
            stop, entry = local_stopping(Q, fp, gp, T, exps, mode, thresholds, depth, fields)
            trace.append(entry)
            qs, qm = fp.cell_range(Q)
            mask = np.ones((qm,) * fp.n, dtype=bool)
            for P in stop:
                ps, pm = fp.cell_range(P)
                rel = tuple(slice(a - b, a - b + pm) for a, b in zip(ps, qs))
                mask[rel] = False
            cubes.append(Q)
            witness.append(mask)
            stack.extend((P, depth + 1) for P in reversed(stop))
    K = max((e.A + e.B for e in trace), default=0.0)
    triples = [Q.dilate(3) for Q in cubes]
    # witnesses of 3Q: the same cells, placed inside the tripled cube
    tripled = []
    for Q, w in zip(cubes, witness):
        m = w.shape[0]
        big = np.zeros((3 * m,) * fp.n, dtype=bool)
        big[tuple(slice(m, 2 * m) for _ in range(fp.n))] = w
        tripled.append(big)
    family = SparseFamily(fp, triples, tripled, 1.0 / (2 * 3**f.n))
    note = ""
    if any(np.any(R.dilate(3).lower < fp.lower - 1e-12) or np.any(R.dilate(3).upper > fp.upper + 1e-12) for R in roots):
        note = "tripled roots leave the computational box; f is extended by zero there"
    return SparseResult(family, K, trace, fp, mode, note)


# ---------------------------------------------------------------------------
# forms and checks


def sparse_form(S: SparseFamily, f: GridFunction, g: GridFunction, r: float = 1.0, s: float = 1.0) -> float:
    """sum over Q in S of <f>_{r,Q} <g>_{s,Q} |Q|, with zero extension."""
    if r < 1 or s < 1:
        raise ParameterError("exponents must be at least 1")
    total = 0.0
    for Q in S.cubes:
        start, size = f.cell_range(Q)
        total += _avg(f.block(start, size), r) * _avg(g.block(start, size), s) * Q.measure
    return float(total)


def verify_sparseness(S: SparseFamily, eta: float) -> dict:
    """Witness containment, cell-exact disjointness, and the eta lower bound."""
    grid = S.grid
    owner: Dict[tuple, int] = {}
    overlaps = 0
    contained = True
    worst = math.inf
    for i, (Q, w) in enumerate(zip(S.cubes, S.witness)):
        start, m = grid.cell_range(Q)
        if w.shape != (m,) * grid.n:
            contained = False
        cells = np.argwhere(w) + np.asarray(start)
        for c in map(tuple, cells):
            if c in owner:
                overlaps += 1
            else:
                owner[c] = i
        worst = min(worst, w.sum() / w.size if w.size else 0.0)
    if not S.cubes:
        worst = 1.0
    ok = contained and overlaps == 0 and worst >= eta * (1 - 1e-12)
    return {
        "pass": bool(ok),
        "eta": eta,
        "worst_ratio": float(worst),
        "overlaps": overlaps,
        "contained": contained,
        "cubes": len(S.cubes),
    }


def bilinear_value(T: OperatorHandle, f: GridFunction, g: GridFunction) -> float:
    """<Tf, g> on the grid."""
    return float(np.sum(apply_fft(T, f).values * g.values) * f.cell_measure)


def domination_sides(T: OperatorHandle, f: GridFunction, g: GridFunction, result: SparseResult, exps: Exponents) -> Tuple[float, float]:
    """(int |Tf||g|, K Lambda_{r,s}(S; f, g)) computed independently."""
    fp = result.grid
    fpad, gpad = _pad_to(f, fp), _pad_to(g, fp)
    lhs = float(np.sum(np.abs(apply_fft(T, fpad).values) * np.abs(gpad.values)) * fp.cell_measure)
    rhs = result.K * sparse_form(result.family, fpad, gpad, exps.r, exps.s)
    return lhs, rhs


def _pad_to(f: GridFunction, grid: GridFunction) -> GridFunction:
    start, _ = grid.cell_range(Cube.from_corner(f.lower, f.h))
    out = np.zeros(grid.shape)
    out[tuple(slice(s, s + d) for s, d in zip(start, f.shape))] = f.values
    return grid.with_values(out)


def duality_gap(T: OperatorHandle, f: GridFunction, g: GridFunction) -> float:
    """|<Tf, g> - <f, T^adj g>|."""
    a = bilinear_value(T, f, g)
    b = float(np.sum(f.values * apply_fft(T.adjoint_op(), g).values) * f.cell_measure)
    return abs(a - b)
