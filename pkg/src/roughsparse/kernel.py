"""Rough spherical kernels and the objects derived from them.

A kernel is stored as samples of an angular profile ``Omega`` on the unit
sphere of R^n (n = 1 or 2).  For n = 1 the sphere is the two points
``+1, -1`` (in that order); for n = 2 it is ``N`` equispaced angles
``2*pi*k/N``.  Angular lookups are nearest-sample, so the profile stays
piecewise constant and ``sup |Omega|`` is exact.
"""

from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Union

import numpy as np
from scipy import integrate

from .errors import InvalidInputError, ParameterError, SingularityError

LOG2 = math.log(2.0)

PRESETS = ("hilbert", "cos", "sign-bands", "random-rademacher")


@dataclass(frozen=True, eq=False)
class SphereKernel:
    """Samples of a mean-zero angular profile on S^{n-1}."""

    dimension: int
    samples: np.ndarray
    sup_norm: float = field(init=False)

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float).copy()
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        n = self.dimension
        if n not in (1, 2):
            raise InvalidInputError(f"dimension must be 1 or 2, got {n}")
        if samples.ndim != 1 or samples.size == 0:
            raise InvalidInputError("samples must be a nonempty 1-d sequence")
        if n == 1 and samples.size != 2:
            raise InvalidInputError("n=1 kernels carry exactly two samples (theta=+1, -1)")
        if n == 2:
            N = samples.size
            if N < 8 or N & (N - 1):
                raise InvalidInputError(f"n=2 needs a power-of-two sample count >= 8, got {N}")
        sup = float(np.max(np.abs(samples)))
        object.__setattr__(self, "sup_norm", sup)
        if abs(samples.mean()) > 1e-12 * sup + 1e-300:
            raise InvalidInputError(
                f"profile mean {samples.mean():.3e} is not zero; use project_zero_mean"
            )

    @property
    def n_samples(self) -> int:
        return self.samples.size

    @property
    def key(self) -> tuple:
        return (self.dimension, self.samples.tobytes())

    def angles(self) -> np.ndarray:
        """Sample angles (n=2) or sample directions +1, -1 (n=1)."""
        if self.dimension == 1:
            return np.array([1.0, -1.0])
        return 2.0 * np.pi * np.arange(self.n_samples) / self.n_samples

    def direction_index(self, x) -> np.ndarray:
        """Index of the nearest sample to the direction of each point of ``x``.

        ``x`` has shape ``(...,)`` for n=1 and ``(..., 2)`` for n=2.
        """
        x = np.asarray(x, dtype=float)
        if self.dimension == 1:
            return np.where(x > 0, 0, 1)
        N = self.n_samples
        ang = np.arctan2(x[..., 1], x[..., 0])
        return np.rint(ang * (N / (2.0 * np.pi))).astype(np.int64) % N

    def profile(self, x) -> np.ndarray:
        """Omega(x/|x|) by nearest-sample lookup."""
        return self.samples[self.direction_index(x)]

    def __repr__(self):
        return f"SphereKernel(n={self.dimension}, N={self.n_samples}, sup={self.sup_norm:.4g})"


def project_zero_mean(raw_samples, dimension: int) -> SphereKernel:
    """Subtract the uniform mean from raw angular samples."""
    raw = np.asarray(raw_samples, dtype=float)
    if raw.size == 0:
        raise InvalidInputError("empty sample list")
    centered = raw - raw.mean()
    # a second pass removes the rounding residue of the first
    centered = centered - centered.mean()
    return SphereKernel(dimension, centered)


def preset_kernel(name: str, dimension: int, n_samples: int = 64, seed: int = 0) -> SphereKernel:
    """Named test kernels.

    ``hilbert``: sign of the first coordinate (n=1: the Hilbert kernel 1/x).
    ``cos``: cos(theta).  ``sign-bands``: +-1 on four alternating quadrant
    bands.  ``random-rademacher``: seeded +-1 per sample, mean removed.
    """
    if dimension == 1:
        if name == "random-rademacher":
            s = 1.0 if np.random.default_rng(seed).integers(2) else -1.0
            return SphereKernel(1, [s, -s])
        if name in PRESETS:
            return SphereKernel(1, [1.0, -1.0])
        raise InvalidInputError(f"unknown preset {name!r}")
    if dimension != 2:
        raise InvalidInputError(f"dimension must be 1 or 2, got {dimension}")
    theta = 2.0 * np.pi * np.arange(n_samples) / n_samples
    if name == "hilbert":
        raw = np.sign(np.round(np.cos(theta), 12))
    elif name == "cos":
        raw = np.cos(theta)
    elif name == "sign-bands":
        raw = np.sign(np.round(np.cos(2.0 * theta), 12))
    elif name == "random-rademacher":
        rng = np.random.default_rng(seed)
        raw = rng.choice([-1.0, 1.0], size=n_samples)
    else:
        raise InvalidInputError(f"unknown preset {name!r}")
    return project_zero_mean(raw, 2)


def load_kernel_spec(spec: Union[dict, str, Path]) -> SphereKernel:
    """Build a kernel from ``{"dimension", "samples"}`` or ``{"dimension", "preset", "seed"}``."""
    if not isinstance(spec, dict):
        spec = json.loads(Path(spec).read_text())
    if "dimension" not in spec:
        raise InvalidInputError("kernel spec needs a 'dimension'")
    n = int(spec["dimension"])
    if "samples" in spec:
        return project_zero_mean(spec["samples"], n)
    if "preset" in spec:
        return preset_kernel(
            spec["preset"], n, n_samples=int(spec.get("n_samples", 64)), seed=int(spec.get("seed", 0))
        )
    raise InvalidInputError("kernel spec needs 'samples' or 'preset'")


def kernel_spec_dict(omega: SphereKernel) -> dict:
    return {"dimension": omega.dimension, "samples": [float(v) for v in omega.samples]}


def kernel_value(omega: SphereKernel, x) -> np.ndarray:
    """K(x) = Omega(x/|x|) / |x|^n, vectorized over points."""
    x = np.asarray(x, dtype=float)
    n = omega.dimension
    r = np.abs(x) if n == 1 else np.hypot(x[..., 0], x[..., 1])
    if np.any(r == 0):
        raise SingularityError("kernel evaluated at the origin")
    val = omega.profile(x) / r**n
    return val if val.ndim else float(val)


# ---------------------------------------------------------------------------
# mollifier


@functools.lru_cache(maxsize=None)
def _bump_normalizer(n: int) -> float:
    bump = lambda r: math.exp(-1.0 / (1.0 - r * r)) if r < 1.0 else 0.0
    if n == 1:
        val, _ = integrate.quad(bump, -1.0, 1.0, epsabs=1e-14, epsrel=1e-13)
    else:
        val, _ = integrate.quad(lambda r: 2.0 * np.pi * r * bump(r), 0.0, 1.0, epsabs=1e-14, epsrel=1e-13)
    return 1.0 / val


@dataclass(frozen=True)
class MollifierSpec:
    """The bump c_n exp(-1/(1-|x|^2)) on |x| < 1, rescaled to width ``epsilon``."""

    epsilon: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ParameterError(f"epsilon must be positive, got {self.epsilon}")

    @staticmethod
    def profile(r2, n: int) -> np.ndarray:
        """phi as a function of |x|^2."""
        r2 = np.asarray(r2, dtype=float)
        out = np.zeros_like(r2)
        inside = r2 < 1.0
        out[inside] = np.exp(-1.0 / (1.0 - r2[inside]))
        return _bump_normalizer(n) * out

    def scaled(self, r2, n: int) -> np.ndarray:
        """phi_eps as a function of |x|^2."""
        eps = self.epsilon
        return self.profile(np.asarray(r2) / eps**2, n) / eps**n


def _bump_nodes(eps: float, n: int, m: int):
    """Midpoint nodes and weights phi_eps(z) dz over the support |z| < eps."""
    mol = MollifierSpec(eps)
    g = -eps + (np.arange(m) + 0.5) * (2.0 * eps / m)
    dz = 2.0 * eps / m
    if n == 1:
        z = g
        w = mol.scaled(z * z, 1) * dz
        keep = w > 0
        return z[keep], w[keep]
    zx, zy = np.meshgrid(g, g, indexing="ij")
    r2 = zx**2 + zy**2
    w = mol.scaled(r2, 2) * dz * dz
    keep = w > 0
    return np.stack([zx[keep], zy[keep]], axis=-1), w[keep]


def _ray_crossing(proj, z2, radius):
    """Positive t solving |t*theta - z| = radius, given proj = theta.z and z2 = |z|^2."""
    return proj + np.sqrt(proj * proj - z2 + radius * radius)


def _check_eps(eps: float):
    if not (0.0 < eps < 1.0):
        raise ParameterError(f"epsilon must lie in (0, 1), got {eps}")


def mollified_omega(
    omega: SphereKernel,
    m: MollifierSpec,
    theta,
    resolution: int = 4096,
    bump_resolution: int | None = None,
) -> float:
    """Omega_eps(theta) = (1/log 2) int_0^inf (Omega_0 * phi_eps)(t theta) t^{n-1} dt.

    ``theta`` is +1/-1 for n=1 and an angle (or a 2-vector) for n=2.  The
    convolution is expanded over midpoint nodes z of the bump; for each z the
    radial integrand is supported on the t-interval where |t theta - z| lies
    in [1, 2], which sits inside [1-eps, 2+eps], and is integrated there by
    the midpoint rule with ``resolution`` nodes.
    """
    eps = m.epsilon
    _check_eps(eps)
    n = omega.dimension
    if bump_resolution is None:
        bump_resolution = 1024 if n == 1 else 64
    z, wz = _bump_nodes(eps, n, bump_resolution)
    u = (np.arange(resolution) + 0.5) / resolution
    if n == 1:
        sgn = 1.0 if float(theta) > 0 else -1.0
        proj, z2 = sgn * z, z * z
    else:
        th = np.asarray(theta, dtype=float)
        e = np.array([math.cos(th), math.sin(th)]) if th.ndim == 0 else th / np.hypot(*th)
        proj, z2 = z @ e, np.sum(z * z, axis=-1)
    t1 = _ray_crossing(proj, z2, 1.0)
    t2 = _ray_crossing(proj, z2, 2.0)
    total = 0.0
    chunk = max(1, 2_000_000 // resolution)
    for s in range(0, z.shape[0], chunk):
        a, b = t1[s : s + chunk, None], t2[s : s + chunk, None]
        dt = (b - a)[:, 0] / resolution
        t = a + (b - a) * u
        if n == 1:
            x = sgn * t - z[s : s + chunk, None]
            vals = omega.profile(x) / np.abs(x)
        else:
            x = t[..., None] * e - z[s : s + chunk, None, :]
            r2 = np.sum(x * x, axis=-1)
            vals = omega.profile(x) / r2 * t
        total += float(np.sum(wz[s : s + chunk] * dt * vals.sum(axis=1)))
    return total / LOG2


@functools.lru_cache(maxsize=64)
def _angular_profile_cdf(eps: float, fine_bins: int, resolution: int, bump_resolution: int):
    """Cumulative angular weight of the n=2 mollification, seen from direction 0.

    Returns the cumulative weight evaluated at the ``fine_bins + 1`` edges of
    a uniform partition of [-pi, pi).  Omega_eps(theta) is the integral of
    Omega(theta + beta) against this weight.
    """
    z, wz = _bump_nodes(eps, 2, bump_resolution)
    proj, z2 = z[:, 0], np.sum(z * z, axis=-1)
    t1 = _ray_crossing(proj, z2, 1.0)
    t2 = _ray_crossing(proj, z2, 2.0)
    u = (np.arange(resolution) + 0.5) / resolution
    hist = np.zeros(fine_bins)
    chunk = max(1, 2_000_000 // resolution)
    for s in range(0, z.shape[0], chunk):
        a, b = t1[s : s + chunk, None], t2[s : s + chunk, None]
        dt = (b - a) / resolution
        t = a + (b - a) * u
        xx = t - z[s : s + chunk, 0:1]
        yy = -np.broadcast_to(z[s : s + chunk, 1:2], t.shape)
        beta = np.arctan2(yy, xx)
        w = wz[s : s + chunk, None] * dt * t / (xx * xx + yy * yy)
        idx = np.floor((beta + np.pi) * (fine_bins / (2.0 * np.pi))).astype(np.int64) % fine_bins
        hist += np.bincount(idx.ravel(), weights=w.ravel(), minlength=fine_bins)
    cdf = np.concatenate([[0.0], np.cumsum(hist)]) / LOG2
    cdf.setflags(write=False)
    return cdf


class MollifiedProfile:
    """Omega_eps as a function of direction, for n = 2.

    Evaluates the integral of the piecewise-constant Omega against a
    finely tabulated angular weight; continuous in theta, so it can be
    differentiated numerically.
    """

    def __init__(self, omega: SphereKernel, eps: float, fine_factor: int = 64,
                 resolution: int = 512, bump_resolution: int = 96):
        _check_eps(eps)
        if omega.dimension != 2:
            raise InvalidInputError("MollifiedProfile is for n=2 kernels")
        self.omega = omega
        self.eps = eps
        self.fine_bins = 2 * omega.n_samples * fine_factor
        self._cdf = _angular_profile_cdf(eps, self.fine_bins, resolution, bump_resolution)
        self._edges = -np.pi + 2.0 * np.pi * np.arange(self.fine_bins + 1) / self.fine_bins

    @property
    def total_weight(self) -> float:
        return float(self._cdf[-1])

    def _C(self, beta):
        beta = (np.asarray(beta) + np.pi) % (2.0 * np.pi) - np.pi
        return np.interp(beta, self._edges, self._cdf)

    def __call__(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        N = self.omega.n_samples
        half = np.pi / N
        centers = 2.0 * np.pi * np.arange(N) / N
        lo = centers[:, None] - half - theta.ravel()[None, :]
        hi = centers[:, None] + half - theta.ravel()[None, :]
        clo, chi = self._C(lo), self._C(hi)
        wrapped = ((lo + np.pi) % (2 * np.pi)) > ((hi + np.pi) % (2 * np.pi))
        w = chi - clo + np.where(wrapped, self._cdf[-1], 0.0)
        out = self.omega.samples @ w
        return out.reshape(theta.shape) if theta.ndim else float(out[0])

    def kernel(self, x) -> np.ndarray:
        """K_eps(x) = Omega_eps(x/|x|)/|x|^2."""
        x = np.asarray(x, dtype=float)
        r2 = x[..., 0] ** 2 + x[..., 1] ** 2
        if np.any(r2 == 0):
            raise SingularityError("kernel evaluated at the origin")
        return self(np.arctan2(x[..., 1], x[..., 0])) / r2


@functools.lru_cache(maxsize=128)
def _mollified_samples_cached(key: tuple, eps: float) -> np.ndarray:
    n, raw = key
    omega = SphereKernel(n, np.frombuffer(raw, dtype=float))
    if n == 1:
        m = MollifierSpec(eps)
        vals = np.array([mollified_omega(omega, m, 1.0), mollified_omega(omega, m, -1.0)])
    else:
        vals = MollifiedProfile(omega, eps)(omega.angles())
    vals.setflags(write=False)
    return vals


def mollified_kernel(omega: SphereKernel, eps: float) -> SphereKernel:
    """Omega_eps sampled at the sample directions of ``omega``."""
    _check_eps(eps)
    vals = _mollified_samples_cached(omega.key, float(eps))
    return SphereKernel(omega.dimension, vals - vals.mean())


def mollified_sup_bound(omega: SphereKernel) -> float:
    """(1/log 2)(3^n/n) ||Omega||_inf."""
    n = omega.dimension
    return 3.0**n / n / LOG2 * omega.sup_norm


# ---------------------------------------------------------------------------
# radial partition of unity


def _glue(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    pos = s > 0
    out[pos] = np.exp(-1.0 / s[pos])
    return out


class RadialCutoff:
    """psi(t) = h(t) - h(2t) with a C-infinity transition h.

    h is 1 on (0, 1], 0 on [2, inf) and e(2-t)/(e(2-t)+e(t-1)) in between,
    where e(s) = exp(-1/s) for s > 0.  The sum over j of psi(2^-j t)
    telescopes to 1.
    """

    @staticmethod
    def h(t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        a, b = _glue(2.0 - t), _glue(t - 1.0)
        out = np.where(t <= 1.0, 1.0, 0.0)
        mid = (t > 1.0) & (t < 2.0)
        out = np.where(mid, a / np.where(mid, a + b, 1.0), out)
        return out if out.ndim else float(out)

    @classmethod
    def psi(cls, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return cls.h(t) - cls.h(2.0 * t)


def annular_piece_value(omega: SphereKernel, j: int, x, cutoff: RadialCutoff = RadialCutoff()) -> np.ndarray:
    """K_j(x) = psi(2^-j |x|) K(x)."""
    x = np.asarray(x, dtype=float)
    r = np.abs(x) if omega.dimension == 1 else np.hypot(x[..., 0], x[..., 1])
    return cutoff.psi(r * 2.0**-j) * kernel_value(omega, x)


# ---------------------------------------------------------------------------
# Fourier transform of the annulus restriction


def omega0_fourier(omega: SphereKernel, xi, resolution: int = 4096) -> complex:
    """Midpoint approximation of int Omega_0(x) exp(-2 pi i x.xi) dx over 1 <= |x| <= 2.

    In polar form Omega_0(x) dx = Omega(sigma) dr/r dsigma; every angular
    bin gets the same number of sub-nodes so a mean-zero profile integrates
    to exactly zero at xi = 0.
    """
    r = 1.0 + (np.arange(resolution) + 0.5) / resolution
    dr = 1.0 / resolution
    if omega.dimension == 1:
        xi = float(np.asarray(xi).ravel()[0]) if np.ndim(xi) else float(xi)
        ph = np.exp(-2j * np.pi * r * xi) / r * dr
        return complex(omega.samples[0] * ph.sum() + omega.samples[1] * np.conj(ph).sum())
    xi = np.asarray(xi, dtype=float)
    N = omega.n_samples
    sub = max(1, resolution // N)
    dsig = 2.0 * np.pi / (N * sub)
    sig = -np.pi / N + (np.arange(N * sub) + 0.5) * dsig
    owner = np.arange(N * sub) // sub
    proj = np.cos(sig) * xi[0] + np.sin(sig) * xi[1]
    radial = np.empty(sig.size, dtype=complex)
    chunk = max(1, 4_000_000 // resolution)
    for s in range(0, sig.size, chunk):
        ph = np.exp(-2j * np.pi * proj[s : s + chunk, None] * r[None, :])
        radial[s : s + chunk] = (ph / r).sum(axis=1) * dr
    return complex(np.sum(omega.samples[owner] * radial) * dsig)


# ---------------------------------------------------------------------------
# Dini moduli


@dataclass(frozen=True)
class DiniModulus:
    omega: Callable[[np.ndarray], np.ndarray]
    dini_constant: float


def dini_of_mollified(eps: float) -> DiniModulus:
    """omega(t) = min(1, t/eps); its Dini integral is 1 + log(1/eps)."""
    if not (0.0 < eps <= 1.0):
        raise ParameterError(f"epsilon must lie in (0, 1], got {eps}")
    return DiniModulus(
        omega=lambda t: np.minimum(1.0, np.asarray(t, dtype=float) / eps),
        dini_constant=1.0 + math.log(1.0 / eps),
    )


def dini_constant_numeric(modulus: DiniModulus, breakpoints=()) -> float:
    """Adaptive quadrature of int_0^1 omega(t) dt/t."""
    val, _ = integrate.quad(
        lambda t: float(modulus.omega(t)) / t, 0.0, 1.0, points=list(breakpoints) or None,
        epsabs=1e-13, epsrel=1e-12, limit=200,
    )
    return val
