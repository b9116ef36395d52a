"""Grid-sampled functions, cubes, and local averages.

A :class:`GridFunction` is piecewise constant on the cells of a uniform grid
of side ``h = 2**-k`` covering an axis-aligned box.  Every integral is an
exact finite sum over cells; values outside the box are zero.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AlignmentError, InvalidInputError, ParameterError

_ALIGN_TOL = 1e-9


@dataclass(frozen=True)
class Cube:
    center: tuple
    side: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in np.atleast_1d(self.center)))
        if not self.side > 0:
            raise InvalidInputError(f"cube side must be positive, got {self.side}")

    @classmethod
    def from_corner(cls, lower, side: float) -> "Cube":
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        return cls(tuple(lower + side / 2.0), float(side))

    @property
    def n(self) -> int:
        return len(self.center)

    @property
    def lower(self) -> np.ndarray:
        return np.array(self.center) - self.side / 2.0

    @property
    def upper(self) -> np.ndarray:
        return np.array(self.center) + self.side / 2.0

    @property
    def measure(self) -> float:
        return self.side**self.n

    def dilate(self, factor: float) -> "Cube":
        return Cube(self.center, self.side * factor)

    def contains_points(self, pts) -> np.ndarray:
        """Closed-cube membership for points of shape (..., n)."""
        pts = np.asarray(pts, dtype=float).reshape(-1, self.n) if self.n > 1 else np.asarray(pts, dtype=float)[..., None]
        return np.all((pts >= self.lower) & (pts <= self.upper), axis=-1)

    def contains_cube(self, other: "Cube", tol: float = 1e-12) -> bool:
        return bool(np.all(other.lower >= self.lower - tol) and np.all(other.upper <= self.upper + tol))

    def to_dict(self) -> dict:
        return {"center": list(self.center), "side": self.side}


class GridFunction:
    """Real values on the cells of a uniform grid over a box.

    Parameters
    ----------
    origin : lower corner of the box
    k : cell side is ``2**-k``
    values : array with one axis per dimension
    """

    __slots__ = ("origin", "k", "values")

    def __init__(self, origin, k: int, values):
        values = np.array(values, dtype=float)
        origin = tuple(float(o) for o in np.atleast_1d(origin))
        if values.ndim != len(origin):
            raise InvalidInputError(f"values have {values.ndim} axes but origin has {len(origin)}")
        values.setflags(write=False)
        self.origin = origin
        self.k = int(k)
        self.values = values

    # --- construction -------------------------------------------------

    @classmethod
    def zeros(cls, lower, upper, k: int) -> "GridFunction":
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        h = 2.0**-k
        shape = np.rint((upper - lower) / h).astype(int)
        if np.any(np.abs(shape * h - (upper - lower)) > _ALIGN_TOL) or np.any(shape <= 0):
            raise AlignmentError("box extents must be positive multiples of the cell side")
        return cls(lower, k, np.zeros(tuple(shape)))

    @classmethod
    def from_callable(cls, fn, lower, upper, k: int) -> "GridFunction":
        """Sample ``fn`` at cell centers (``fn`` takes n coordinate arrays)."""
        z = cls.zeros(lower, upper, k)
        return z.with_values(fn(*z.center_coords()))

    def with_values(self, values) -> "GridFunction":
        values = np.broadcast_to(np.asarray(values, dtype=float), self.shape)
        return GridFunction(self.origin, self.k, values)

    def like(self, values) -> "GridFunction":
        return self.with_values(values)

    # --- geometry -----------------------------------------------------

    @property
    def n(self) -> int:
        return self.values.ndim

    @property
    def h(self) -> float:
        return 2.0**-self.k

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def cell_measure(self) -> float:
        return self.h**self.n

    @property
    def lower(self) -> np.ndarray:
        return np.array(self.origin)

    @property
    def upper(self) -> np.ndarray:
        return np.array(self.origin) + np.array(self.shape) * self.h

    def axis_centers(self, axis: int) -> np.ndarray:
        return self.origin[axis] + (np.arange(self.shape[axis]) + 0.5) * self.h

    def center_coords(self) -> list:
        """Cell-center coordinate arrays, one per axis, broadcast to the grid shape."""
        return np.meshgrid(*[self.axis_centers(a) for a in range(self.n)], indexing="ij")

    def centers(self) -> np.ndarray:
        """Cell centers with shape ``shape + (n,)``."""
        return np.stack(self.center_coords(), axis=-1)

    def same_grid(self, other: "GridFunction") -> bool:
        return self.k == other.k and self.origin == other.origin and self.shape == other.shape

    def index_of_point(self, x) -> tuple:
        """Index of the cell containing point x."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        idx = np.floor((x - self.lower) / self.h).astype(int)
        if np.any(idx < 0) or np.any(idx >= np.array(self.shape)):
            raise InvalidInputError(f"point {x} outside the grid")
        return tuple(int(i) for i in idx)

    def cell_range(self, cube: Cube) -> tuple:
        """Integer ``(start, size)`` of a grid-aligned cube in cell units; may exceed the grid."""
        h = self.h
        start = (cube.lower - self.lower) / h
        size = cube.side / h
        istart = np.rint(start)
        isize = round(size)
        if np.any(np.abs(istart - start) > _ALIGN_TOL) or abs(isize - size) > _ALIGN_TOL or isize < 1:
            raise AlignmentError(f"{cube} is not aligned with the grid (h={h})")
        return tuple(int(s) for s in istart), int(isize)

    def cube_from_cells(self, start, size: int) -> Cube:
        return Cube.from_corner(self.lower + np.asarray(start) * self.h, size * self.h)

    def block(self, start, size: int) -> np.ndarray:
        """Values on the cube of cells ``start .. start+size``, zero outside the grid."""
        return _padded_block(self.values, start, size)

    # --- norms --------------------------------------------------------

    def norm(self, p: float = 2.0) -> float:
        a = np.abs(self.values)
        if math.isinf(p):
            return float(a.max(initial=0.0))
        return float((np.sum(a**p) * self.cell_measure) ** (1.0 / p))

    def integral(self) -> float:
        return float(self.values.sum() * self.cell_measure)

    def support_mask(self) -> np.ndarray:
        return self.values != 0

    def __add__(self, other):
        if isinstance(other, GridFunction):
            _require_same_grid(self, other)
            return self.with_values(self.values + other.values)
        return self.with_values(self.values + other)

    def __sub__(self, other):
        if isinstance(other, GridFunction):
            _require_same_grid(self, other)
            return self.with_values(self.values - other.values)
        return self.with_values(self.values - other)

    def __mul__(self, c):
        if isinstance(c, GridFunction):
            _require_same_grid(self, c)
            return self.with_values(self.values * c.values)
        return self.with_values(self.values * c)

    __rmul__ = __mul__

    def __neg__(self):
        return self.with_values(-self.values)

    def __abs__(self):
        return self.with_values(np.abs(self.values))

    def __repr__(self):
        return f"GridFunction(origin={self.origin}, k={self.k}, shape={self.shape})"

    def fingerprint(self) -> tuple:
        return (self.origin, self.k, self.shape, self.values.tobytes())

    # --- I/O ----------------------------------------------------------

    def metadata(self) -> dict:
        return {
            "dims": list(self.shape),
            "k": self.k,
            "h": self.h,
            "box": {"lower": list(self.lower), "upper": list(self.upper)},
        }

    def save(self, path) -> None:
        """Flat binary (header + little-endian float64 values) plus a JSON sidecar."""
        path = Path(path)
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<ii", self.n, self.k))
            fh.write(struct.pack(f"<{self.n}q", *self.shape))
            fh.write(struct.pack(f"<{self.n}d", *self.origin))
            fh.write(np.ascontiguousarray(self.values, dtype="<f8").tobytes())
        path.with_suffix(path.suffix + ".json").write_text(json.dumps(self.metadata(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path) -> "GridFunction":
        data = Path(path).read_bytes()
        if data[: len(_MAGIC)] != _MAGIC:
            raise InvalidInputError(f"{path}: not a grid-function file")
        off = len(_MAGIC)
        n, k = struct.unpack_from("<ii", data, off)
        off += 8
        shape = struct.unpack_from(f"<{n}q", data, off)
        off += 8 * n
        origin = struct.unpack_from(f"<{n}d", data, off)
        off += 8 * n
        values = np.frombuffer(data, dtype="<f8", offset=off).reshape(shape)
        return cls(origin, k, values)

    def to_csv(self, path) -> None:
        """One row per cell: center coordinates then value."""
        cols = [c.ravel() for c in self.center_coords()] + [self.values.ravel()]
        header = ",".join([f"x{i}" for i in range(self.n)] + ["value"])
        np.savetxt(path, np.column_stack(cols), delimiter=",", header=header, comments="", fmt="%.17g")


_MAGIC = b"RSGRID1\0"


def _require_same_grid(a: GridFunction, b: GridFunction):
    if not a.same_grid(b):
        raise AlignmentError("grid functions live on different grids")


def _padded_block(values: np.ndarray, start, size: int) -> np.ndarray:
    n = values.ndim
    out = np.zeros((size,) * n, dtype=values.dtype)
    src, dst = [], []
    for a in range(n):
        lo, hi = start[a], start[a] + size
        clo, chi = max(lo, 0), min(hi, values.shape[a])
        if clo >= chi:
            return out
        src.append(slice(clo, chi))
        dst.append(slice(clo - lo, chi - lo))
    out[tuple(dst)] = values[tuple(src)]
    return out


# ---------------------------------------------------------------------------
# Orlicz gauges


@dataclass(frozen=True)
class OrliczGauge:
    """Young function: ``power`` (t^p), ``LlogL`` (t log(e+t)) or ``expL`` (e^t - 1)."""

    tag: str
    p: float = 1.0

    def __post_init__(self):
        if self.tag not in ("power", "LlogL", "expL"):
            raise InvalidInputError(f"unknown gauge {self.tag!r}")
        if self.tag == "power" and self.p < 1:
            raise ParameterError("power gauge needs p >= 1")

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.tag == "power":
            return t**self.p
        if self.tag == "LlogL":
            return t * np.log(math.e + t)
        with np.errstate(over="ignore"):
            return np.expm1(t)


def power(p: float) -> OrliczGauge:
    return OrliczGauge("power", p)


LLOGL = OrliczGauge("LlogL")
EXPL = OrliczGauge("expL")


# ---------------------------------------------------------------------------
# averages


def p_average_values(block: np.ndarray, p: float) -> float:
    """(mean |v|^p)^(1/p) over the cells of a cube; p = inf gives the max."""
    a = np.abs(block)
    if math.isinf(p):
        return float(a.max(initial=0.0))
    if p == 1:
        return float(a.mean())
    return float(np.mean(a**p) ** (1.0 / p))


def p_average(f: GridFunction, Q: Cube, p: float) -> float:
    """<f>_{p,Q} = (|Q|^-1 int_Q |f|^p)^(1/p), exact over cells."""
    if p < 1:
        raise ParameterError(f"p must be >= 1, got {p}")
    start, size = f.cell_range(Q)
    return p_average_values(f.block(start, size), p)


def orlicz_average_values(block: np.ndarray, gauge: OrliczGauge, rtol: float = 1e-10) -> float:
    """inf{a > 0 : mean(phi(|v|/a)) <= 1} by bisection."""
    a = np.abs(np.asarray(block, dtype=float)).ravel()
    top = float(a.max(initial=0.0))
    if top == 0.0:
        return 0.0
    if gauge.tag == "power":
        return float(np.mean(a**gauge.p) ** (1.0 / gauge.p))

    def excess(alpha):
        with np.errstate(over="ignore"):
            return float(np.mean(gauge(a / alpha))) - 1.0

    hi = top
    while excess(hi) > 0:
        hi *= 2.0
    lo = hi / 2.0
    while excess(lo) <= 0:
        hi, lo = lo, lo / 2.0
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if excess(mid) > 0:
            lo = mid
        else:
            hi = mid
    return hi


def orlicz_average(f: GridFunction, Q: Cube, gauge: OrliczGauge) -> float:
    start, size = f.cell_range(Q)
    return orlicz_average_values(f.block(start, size), gauge)


def exclude(f: GridFunction, Q: Cube) -> GridFunction:
    """f times the indicator of the complement of 3Q (cells judged by their centers)."""
    inside = Cube(Q.center, 3.0 * Q.side).contains_points(f.centers()).reshape(f.shape)
    return f.with_values(np.where(inside, 0.0, f.values))
