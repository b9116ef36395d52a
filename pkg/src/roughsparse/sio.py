"""Discrete singular integral operators on grid functions.

Every operator is a convolution with kernel weights ``w(d) = K(d h) h^n``
indexed by integer cell offsets ``d``.  The diagonal ``d = 0`` is always
excluded, so sums are finite and no principal value is taken.  For the
homogeneous kinds the weights ``Omega(d/|d|)/|d|^n`` do not depend on h.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np
from scipy import signal

from .errors import ConvergenceError, ParameterError, ResolutionError
from .field import Cube, GridFunction
from .kernel import RadialCutoff, SphereKernel, mollified_kernel

KINDS = ("rough", "rough-difference", "smooth-mollified", "annular", "identity-test")


@dataclass(frozen=True, eq=False)
class OperatorHandle:
    """Which kernel to convolve with.

    ``adjoint=True`` flips the kernel, d -> -d.
    """

    kind: str
    omega: Optional[SphereKernel] = None
    eps: Optional[float] = None
    j: Optional[int] = None
    adjoint: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown operator kind {self.kind!r}")
        if self.kind != "identity-test" and self.omega is None:
            raise ParameterError(f"{self.kind} needs a kernel")
        if self.kind in ("rough-difference", "smooth-mollified") and not (self.eps and 0 < self.eps < 1):
            raise ParameterError("mollified kinds need 0 < eps < 1")
        if self.kind == "annular" and self.j is None:
            raise ParameterError("annular kind needs j")

    @classmethod
    def rough(cls, omega):
        return cls("rough", omega)

    @classmethod
    def identity(cls):
        return cls("identity-test")

    def adjoint_op(self) -> "OperatorHandle":
        return OperatorHandle(self.kind, self.omega, self.eps, self.j, not self.adjoint)

    @property
    def key(self) -> tuple:
        return (self.kind, None if self.omega is None else self.omega.key, self.eps, self.j, self.adjoint)

    @property
    def linear(self) -> bool:
        return True

    def angular_samples(self) -> np.ndarray:
        """Angular profile of the homogeneous kinds."""
        if self.kind == "rough" or self.kind == "annular":
            return self.omega.samples
        smooth = mollified_kernel(self.omega, self.eps).samples
        if self.kind == "smooth-mollified":
            return smooth
        return self.omega.samples - smooth

    def weights(self, offsets: np.ndarray, k: int, n: Optional[int] = None) -> np.ndarray:
        """Weights for integer offsets of shape (..., n) (n=1: shape (...))."""
        if n is None:
            n = 1 if self.omega is None else self.omega.dimension
        return _weights(self, offsets, k, n)

    def __repr__(self):
        extra = "".join(
            f", {name}={val}" for name, val in (("eps", self.eps), ("j", self.j)) if val is not None
        )
        return f"OperatorHandle({self.kind}{extra}{', adjoint' if self.adjoint else ''})"


def _weights(T: OperatorHandle, offsets, k: int, n: int) -> np.ndarray:
    d = np.asarray(offsets)
    if T.adjoint:
        d = -d
    if T.kind == "identity-test":
        zero = d == 0 if n == 1 else np.all(d == 0, axis=-1)
        return zero.astype(float)
    omega = T.omega
    if omega.dimension != n:
        raise ParameterError(f"kernel is {omega.dimension}-dimensional, grid is {n}-dimensional")
    if n == 1:
        r = np.abs(d).astype(float)
        idx = np.where(d > 0, 0, 1)
    else:
        r = np.hypot(d[..., 0], d[..., 1]).astype(float)
        idx = omega.direction_index(d)
    samples = T.angular_samples()
    safe = np.where(r == 0, 1.0, r)
    w = np.where(r == 0, 0.0, samples[idx] / safe**n)
    if T.kind == "annular":
        h = 2.0**-k
        w = w * RadialCutoff.psi(r * h * 2.0**-T.j)
    return w


_KERNEL_CACHE: dict = {}
_KERNEL_LOCK = threading.Lock()


def kernel_array(T: OperatorHandle, n: int, reach, k: int) -> np.ndarray:
    """Weights on offsets ``-reach..reach`` along each axis, centered."""
    reach = tuple(int(r) for r in np.broadcast_to(reach, (n,)))
    key = (T.key, n, reach, k)
    with _KERNEL_LOCK:
        hit = _KERNEL_CACHE.get(key)
    if hit is not None:
        return hit
    axes = [np.arange(-r, r + 1) for r in reach]
    if n == 1:
        arr = _weights(T, axes[0], k, 1)
    else:
        arr = _weights(T, np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1), k, n)
    arr.setflags(write=False)
    with _KERNEL_LOCK:
        if len(_KERNEL_CACHE) > 256:
            _KERNEL_CACHE.clear()
        _KERNEL_CACHE[key] = arr
    return arr


# ---------------------------------------------------------------------------
# full application


def apply_direct(T: OperatorHandle, f: GridFunction, targets=None) -> np.ndarray:
    """Reference O(N^2) summation sum_y w(x - y) f(y) at cell index ``targets``.

    ``targets`` is an integer array (m, n) of cell indices (may lie outside
    the grid); default is every cell.  Returns values in target order.
    """
    n = f.n
    src = np.argwhere(f.values != 0)
    fv = f.values[tuple(src.T)]
    if targets is None:
        targets = np.argwhere(np.ones(f.shape, dtype=bool))
    targets = np.asarray(targets).reshape(-1, n)
    out = np.zeros(targets.shape[0])
    if src.shape[0] == 0:
        return out
    chunk = max(1, 4_000_000 // src.shape[0])
    for s in range(0, targets.shape[0], chunk):
        d = targets[s : s + chunk, None, :] - src[None, :, :]
        w = T.weights(d[..., 0] if n == 1 else d, f.k, n)
        out[s : s + chunk] = w @ fv
    return out


def apply_fft(T: OperatorHandle, f: GridFunction) -> GridFunction:
    """Same sum on every cell of the grid by zero-padded FFT convolution."""
    reach = tuple(s - 1 for s in f.shape)
    kern = kernel_array(T, f.n, reach, f.k)
    full = signal.fftconvolve(f.values, kern, mode="full")
    sl = tuple(slice(r, r + s) for r, s in zip(reach, f.shape))
    return f.with_values(full[sl])


def apply(T: OperatorHandle, f: GridFunction, method: str = "fft") -> GridFunction:
    if method == "direct":
        return f.with_values(apply_direct(T, f).reshape(f.shape))
    return apply_fft(T, f)


def apply_excluded(T: OperatorHandle, f: GridFunction, Q: Cube) -> GridFunction:
    """T(f chi_{R^n minus 3Q}) on the cells of Q, by direct summation."""
    start, size = f.cell_range(Q)
    n = f.n
    src = np.argwhere(f.values != 0)
    lo = np.array(start) - size
    hi = np.array(start) + 2 * size
    outside = np.any((src < lo) | (src >= hi), axis=1)
    g = np.zeros(f.shape)
    g[tuple(src[outside].T)] = f.values[tuple(src[outside].T)]
    targets = np.stack(
        np.meshgrid(*[np.arange(start[a], start[a] + size) for a in range(n)], indexing="ij"), axis=-1
    ).reshape(-1, n)
    vals = apply_direct(T, f.with_values(g), targets).reshape((size,) * n)
    return GridFunction(Q.lower, f.k, vals)


# ---------------------------------------------------------------------------
# truncations


def _offset_radius(n: int, reach, h: float) -> np.ndarray:
    axes = [np.arange(-r, r + 1) for r in reach]
    if n == 1:
        return np.abs(axes[0]) * h
    grid = np.meshgrid(*axes, indexing="ij")
    return np.sqrt(sum(g.astype(float) ** 2 for g in grid)) * h


def apply_truncated(T: OperatorHandle, f: GridFunction, delta: float, method: str = "fft") -> GridFunction:
    """T^(delta) f(x) = sum over |y - x| > delta of w(x - y) f(y), at every cell."""
    if delta < f.h * (1 - 1e-12):
        raise ResolutionError(f"truncation {delta} is finer than the cell side {f.h}")
    reach = tuple(s - 1 for s in f.shape)
    if method == "direct":
        n = f.n
        src = np.argwhere(f.values != 0)
        fv = f.values[tuple(src.T)]
        tgt = np.argwhere(np.ones(f.shape, dtype=bool))
        out = np.zeros(tgt.shape[0])
        if src.shape[0]:
            chunk = max(1, 4_000_000 // src.shape[0])
            for s in range(0, tgt.shape[0], chunk):
                d = tgt[s : s + chunk, None, :] - src[None, :, :]
                r = np.sqrt(np.sum(d.astype(float) ** 2, axis=-1)) * f.h
                w = T.weights(d[..., 0] if n == 1 else d, f.k, n) * (r > delta)
                out[s : s + chunk] = w @ fv
        return f.with_values(out.reshape(f.shape))
    kern = kernel_array(T, f.n, reach, f.k) * (_offset_radius(f.n, reach, f.h) > delta)
    full = signal.fftconvolve(f.values, kern, mode="full")
    sl = tuple(slice(r, r + s) for r, s in zip(reach, f.shape))
    return f.with_values(full[sl])


def default_delta_grid(f: GridFunction) -> list:
    """Dyadic truncation scales from h up to the box diameter."""
    diam = float(np.linalg.norm(f.upper - f.lower))
    out, d = [], f.h
    while d <= diam:
        out.append(d)
        d *= 2.0
    return out


def maximal_truncation(T: OperatorHandle, f: GridFunction, delta_grid: Optional[Iterable[float]] = None) -> GridFunction:
    """Cellwise max over the grid of scales of |T^(delta) f|."""
    grid = default_delta_grid(f) if delta_grid is None else list(delta_grid)
    if not grid:
        raise ParameterError("empty truncation grid")
    best = np.zeros(f.shape)
    for delta in grid:
        best = np.maximum(best, np.abs(apply_truncated(T, f, delta).values))
    return f.with_values(best)


# ---------------------------------------------------------------------------
# L2 operator norm


def symbol_sup(T: OperatorHandle, shape, k: int, oversample: int = 4) -> float:
    """sup of |DFT| of the kernel truncated to the box's offsets (an upper bound for the norm)."""
    n = len(shape)
    reach = tuple(s - 1 for s in shape)
    kern = kernel_array(T, n, reach, k)
    size = tuple(oversample * (2 * r + 1) for r in reach)
    return float(np.abs(np.fft.fftn(kern, s=size, axes=tuple(range(kern.ndim)))).max())


def opnorm_l2(
    T: OperatorHandle,
    shape,
    k: int = 0,
    tol: float = 1e-4,
    max_iter: int = 10_000,
    seed: int = 0,
) -> float:
    """Largest singular value of T on grid functions over a box of ``shape`` cells.

    Zero padding outside the box.  Power iteration on T^adj T with the
    adjoint applied as the flipped kernel; stops when the estimate changes
    by less than ``tol`` relatively.
    """
    shape = tuple(int(s) for s in np.atleast_1d(shape))
    n = len(shape)
    reach = tuple(s - 1 for s in shape)
    kern = np.array(kernel_array(T, n, reach, k))
    if not np.any(kern):
        return 0.0
    flipped = kern[(slice(None, None, -1),) * n]
    sl = tuple(slice(r, r + s) for r, s in zip(reach, shape))
    fft_shape = tuple(2 * s - 1 + 2 * r for s, r in zip(shape, reach))
    fshape = [int(2 ** math.ceil(math.log2(m))) for m in fft_shape]
    axes = tuple(range(n))
    K = np.fft.rfftn(kern, fshape, axes=axes)
    Kt = np.fft.rfftn(flipped, fshape, axes=axes)

    def conv(x, F):
        full = np.fft.irfftn(np.fft.rfftn(x, fshape, axes=axes) * F, fshape, axes=axes)
        return full[sl]

    rng = np.random.default_rng(seed)
    x = rng.standard_normal(shape)
    x /= np.linalg.norm(x)
    prev = 0.0
    for _ in range(max_iter):
        y = conv(x, K)
        sigma = float(np.linalg.norm(y))
        if sigma == 0.0:
            return 0.0
        if abs(sigma - prev) <= tol * sigma:
            return sigma
        prev = sigma
        x = conv(y, Kt)
        x /= np.linalg.norm(x)
    raise ConvergenceError(f"power iteration did not settle in {max_iter} steps (last {prev:.6g})")


# ---------------------------------------------------------------------------
# batched local applications


def local_fields(T: OperatorHandle, f: GridFunction, size: int, starts) -> np.ndarray:
    """T(f chi_{3Q}) on Q for every cube Q of ``size`` cells with corner index in ``starts``.

    ``starts`` is an integer array (c, n).  Returns an array (c, size, ..., size).
    Values of f outside the grid are zero.
    """
    n = f.n
    starts = np.asarray(starts, dtype=np.int64).reshape(-1, n)
    m = int(size)
    pad = m
    padded = np.pad(f.values, pad)
    c = starts.shape[0]
    patches = np.empty((c,) + (3 * m,) * n)
    for i, st in enumerate(starts):
        sl = tuple(slice(s, s + 3 * m) for s in st)
        patches[i] = padded[sl]
    reach = 2 * m - 1
    kern = kernel_array(T, n, (reach,) * n, f.k)
    axes = tuple(range(1, n + 1))
    if m <= 2:
        # tiny patches: a direct sum is cheaper than FFTs
        out = np.zeros((c,) + (m,) * n)
        src = np.arange(3 * m)
        for tgt in np.ndindex(*(m,) * n):
            w = kern[np.ix_(*[t + m + reach - src for t in tgt])]
            out[(slice(None),) + tgt] = np.tensordot(patches, w, axes=(axes, tuple(range(n))))
        return out
    full = signal.fftconvolve(patches, kern[None], mode="full", axes=axes)
    sl = (slice(None),) + tuple(slice(3 * m - 1, 4 * m - 1) for _ in range(n))
    return full[sl]
