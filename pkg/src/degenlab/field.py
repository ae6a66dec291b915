"""Space-time fields on a periodic box and the exact spectral solver.

The solution of u_t = a^{ij} u_{ij} + b^i u_i + c u + f, u(0) = 0, is

    u(t, x) = int_0^t e^{C(s,t)} E[f(s, x + B(s,t) + Z_{s,t})] ds,
    Z_{s,t} ~ N(0, 2 int_s^t A),

and each expectation is a Fourier multiplier. Degenerate covariances need no
special handling: the multiplier simply stops decaying in null directions.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import fft as sfft
from scipy import integrate, ndimage

from .profiles import CoefficientProfile

FIELD_HEADER = struct.Struct("<qqdq")  # d, n, L, number of time slices


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform grid on the torus [-L, L)^d with n points per axis."""

    dimension: int
    n: int
    halfwidth: float

    def __post_init__(self):
        if self.dimension not in (1, 2, 3):
            raise ValueError("dimension must be 1, 2 or 3")
        if self.n < 2 or self.n & (self.n - 1):
            raise ValueError("n must be a power of two")
        if self.halfwidth <= 0:
            raise ValueError("halfwidth must be positive")

    @property
    def spacing(self) -> float:
        return 2.0 * self.halfwidth / self.n

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dimension

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.dimension

    @property
    def axis(self) -> np.ndarray:
        return -self.halfwidth + self.spacing * np.arange(self.n)

    def coords(self) -> list[np.ndarray]:
        return np.meshgrid(*([self.axis] * self.dimension), indexing="ij")

    def points(self) -> np.ndarray:
        """Grid points as an array of shape (n, ..., n, d)."""
        return np.stack(self.coords(), axis=-1)

    def index_of(self, x) -> tuple:
        """Nearest grid index of point x."""
        x = np.asarray(x, dtype=float)
        idx = np.rint((x + self.halfwidth) / self.spacing).astype(int) % self.n
        return tuple(int(i) for i in idx)

    def wavenumbers(self) -> list[np.ndarray]:
        """Angular wavenumbers in rfftn layout, each broadcastable to the spectrum."""
        d, h = self.dimension, self.spacing
        out = []
        for ax in range(d):
            if ax == d - 1:
                k = 2.0 * math.pi * sfft.rfftfreq(self.n, h)
            else:
                k = 2.0 * math.pi * sfft.fftfreq(self.n, h)
            shape = [1] * d
            shape[ax] = k.size
            out.append(k.reshape(shape))
        return out

    def nyquist_masks(self) -> list[np.ndarray]:
        """Per-axis masks that are 0 on the Nyquist plane, for odd-order derivatives."""
        d, n = self.dimension, self.n
        out = []
        for ax in range(d):
            size = n // 2 + 1 if ax == d - 1 else n
            m = np.ones(size)
            m[n // 2] = 0.0
            shape = [1] * d
            shape[ax] = size
            out.append(m.reshape(shape))
        return out


@dataclass(frozen=True, eq=False)
class SpaceTimeField:
    """Real samples ``values[k]`` of a function on the torus at ``times[k]``."""

    grid: SpatialGrid
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        if values.shape != times.shape + self.grid.shape:
            raise ValueError(f"values shape {values.shape} does not match {times.shape + self.grid.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")

    def slice_at(self, t: float) -> np.ndarray:
        k = np.flatnonzero(np.isclose(self.times, t, rtol=0.0, atol=1e-12))
        if k.size == 0:
            raise KeyError(f"no slice at t={t}")
        return self.values[k[0]]

    def interpolate(self, k: int, x) -> np.ndarray:
        """Periodic multilinear interpolation of slice k at points x of shape (..., d)."""
        x = np.asarray(x, dtype=float)
        coords = ((x + self.grid.halfwidth) / self.grid.spacing).reshape(-1, self.grid.dimension).T
        out = ndimage.map_coordinates(self.values[k], coords, order=1, mode="grid-wrap")
        return out.reshape(x.shape[:-1])

    def spectral_interpolate(self, k: int, x) -> np.ndarray:
        """Trigonometric interpolant of slice k at points x of shape (..., d).

        Exact for band-limited data; the Nyquist mode enters as a cosine.
        """
        g = self.grid
        x = np.asarray(x, dtype=float)
        pts = x.reshape(-1, g.dimension) + g.halfwidth
        coef = sfft.fftn(self.values[k]) / g.n**g.dimension
        xi = 2.0 * math.pi * sfft.fftfreq(g.n, g.spacing)
        letters = "abc"[: g.dimension]
        phases = [np.exp(1j * np.outer(pts[:, ax], xi)) for ax in range(g.dimension)]
        spec = ",".join(f"p{c}" for c in letters) + f",{letters}->p"
        out = np.einsum(spec, *phases, coef).real
        return out.reshape(x.shape[:-1])


@dataclass(frozen=True)
class KernelSpec:
    """Gaussian covariance, drift shift and scalar growth over one interval (s, t)."""

    sigma: np.ndarray
    shift: np.ndarray
    growth: float = 0.0

    @classmethod
    def from_profile(cls, profile: CoefficientProfile, s: float, t: float) -> "KernelSpec":
        return cls(profile.integral_matrix(s, t), profile.integral_vector(s, t), float(profile.integral_scalar(s, t)))


def _exponent(grid: SpatialGrid, sigma, shift, growth):
    """Log of the multiplier, batched over leading axes of sigma/shift/growth."""
    ks = grid.wavenumbers()
    d = grid.dimension
    sigma = np.asarray(sigma, dtype=float)
    shift = np.asarray(shift, dtype=float)
    growth = np.asarray(growth, dtype=float)
    pad = (Ellipsis,) + (None,) * d
    expo = growth[pad] + 0j
    for i in range(d):
        expo = expo + 1j * shift[..., i][pad] * ks[i]
        expo = expo - 0.5 * sigma[..., i, i][pad] * ks[i] ** 2
        for j in range(i + 1, d):
            expo = expo - sigma[..., i, j][pad] * (ks[i] * ks[j])
    return expo


def multiplier(grid: SpatialGrid, k: KernelSpec) -> np.ndarray:
    return np.exp(_exponent(grid, k.sigma, k.shift, k.growth))


def _axes(grid):
    return tuple(range(-grid.dimension, 0))


def apply_kernel(g, k: KernelSpec, grid: SpatialGrid, workers=None) -> np.ndarray:
    """``e^{growth} E[g(x + shift + Z)]`` with ``Z ~ N(0, sigma)``, on the torus."""
    g = np.asarray(g, dtype=float)
    ax = _axes(grid)
    spec = sfft.rfftn(g, axes=ax, workers=workers)
    return sfft.irfftn(spec * multiplier(grid, k), s=grid.shape, axes=ax, workers=workers)


def midpoints(T: float, M: int) -> np.ndarray:
    h = T / M
    return h * (np.arange(M) + 0.5)


def node_times(T: float, M: int) -> np.ndarray:
    return np.linspace(0.0, T, M + 1)


def _grid_step(f: SpaceTimeField) -> float:
    times = f.times
    h = 2.0 * times[0]
    if h <= 0 or not np.allclose(times, midpoints(h * times.size, times.size), rtol=0.0, atol=1e-12 * max(1.0, h * times.size)):
        raise ValueError("forcing must be sampled at the midpoints of a uniform time grid")
    return h


def solve_exact(f: SpaceTimeField, profile: CoefficientProfile, workers=None, chunk_elems: int = 4_000_000) -> SpaceTimeField:
    """Midpoint-in-time, exact-in-space solution on the node grid t_m = m h.

    ``f`` must be sampled at midpoints s_k = (k + 1/2) h, k < M. Returns u at
    the M + 1 nodes with u(0) = 0 and
    u(t_m) = h * sum_{k<m} kernel(s_k, t_m)[f(s_k)].
    """
    grid = f.grid
    h = _grid_step(f)
    M = f.times.size
    s = f.times
    tn = h * np.arange(M + 1)
    ax = _axes(grid)
    F = sfft.rfftn(f.values, axes=ax, workers=workers)
    nfreq = int(np.prod(F.shape[1:]))
    step = max(1, chunk_elems // nfreq)
    U = np.zeros((M + 1,) + F.shape[1:], dtype=complex)
    for m in range(1, M + 1):
        t = tn[m]
        acc = np.zeros(F.shape[1:], dtype=complex)
        for k0 in range(0, m, step):
            k1 = min(m, k0 + step)
            sk = s[k0:k1]
            expo = _exponent(grid, profile.integral_matrix(sk, t), profile.integral_vector(sk, t), profile.integral_scalar(sk, t))
            acc += np.einsum("k...,k...->...", np.exp(expo), F[k0:k1])
        U[m] = h * acc
    u = sfft.irfftn(U, s=grid.shape, axes=ax, workers=workers)
    u[0] = 0.0
    return SpaceTimeField(grid, tn, u)


def hessian(u: SpaceTimeField, workers=None) -> list[list[SpaceTimeField]]:
    """Spectral second derivatives ``H[i][j] = u_{x^i x^j}``."""
    grid = u.grid
    ax = _axes(grid)
    ks = grid.wavenumbers()
    masks = grid.nyquist_masks()
    U = sfft.rfftn(u.values, axes=ax, workers=workers)
    d = grid.dimension
    H = [[None] * d for _ in range(d)]
    for i in range(d):
        for j in range(i, d):
            if i == j:
                mult = -(ks[i] ** 2)
            else:
                mult = -(ks[i] * masks[i]) * (ks[j] * masks[j])
            vals = sfft.irfftn(U * mult, s=grid.shape, axes=ax, workers=workers)
            H[i][j] = H[j][i] = SpaceTimeField(grid, u.times, vals)
    return H


def hessian_frobenius(u: SpaceTimeField, workers=None) -> SpaceTimeField:
    """Pointwise Frobenius norm of the Hessian, the realization of |u_xx|."""
    H = hessian(u, workers)
    d = u.grid.dimension
    sq = sum(H[i][j].values ** 2 for i in range(d) for j in range(d))
    return SpaceTimeField(u.grid, u.times, np.sqrt(sq))


def lp_norm(values, p: float, grid: SpatialGrid) -> float | np.ndarray:
    """Discrete L_p norm over the spatial axes; leading axes are kept."""
    v = np.abs(np.asarray(values, dtype=float))
    ax = _axes(grid)
    if math.isinf(p):
        return v.max(axis=ax)
    return (np.sum(v**p, axis=ax) * grid.cell_volume) ** (1.0 / p)


def lp_norms(f: SpaceTimeField, p: float) -> np.ndarray:
    return lp_norm(f.values, p, f.grid)


def _translate(u: SpaceTimeField, profile: CoefficientProfile, sign: float, workers=None) -> SpaceTimeField:
    grid = u.grid
    zeros = np.zeros_like(u.times)
    shift = sign * profile.integral_vector(zeros, u.times)
    growth = sign * profile.integral_scalar(zeros, u.times)
    sigma = np.zeros(u.times.shape + (grid.dimension, grid.dimension))
    ax = _axes(grid)
    spec = sfft.rfftn(u.values, axes=ax, workers=workers)
    vals = sfft.irfftn(spec * np.exp(_exponent(grid, sigma, shift, growth)), s=grid.shape, axes=ax, workers=workers)
    return SpaceTimeField(grid, u.times, vals)


def transform_reduce(u: SpaceTimeField, profile: CoefficientProfile, workers=None) -> SpaceTimeField:
    """v(t, x) = e^{-C(t)} u(t, x - B(t)), removing drift and growth."""
    return _translate(u, profile, -1.0, workers)


def inverse_transform_reduce(v: SpaceTimeField, profile: CoefficientProfile, workers=None) -> SpaceTimeField:
    """u(t, x) = e^{C(t)} v(t, x + B(t))."""
    return _translate(v, profile, 1.0, workers)


def mixed_norm(u: SpaceTimeField, p: float, q: float) -> float:
    """(int_0^T ||u(t)||_p^q dt)^{1/q} by the trapezoid rule on the node grid."""
    norms = lp_norms(u, p)
    return float(integrate.trapezoid(norms**q, u.times) ** (1.0 / q))


def solve_refined(forcing, profile, grid, T, M: int = 128, p: float = 2.0, q: float = 2.0, rtol: float = 1e-3, max_doublings: int = 4, workers=None):
    """Double M until the mixed L_q(L_p) norm of u changes by less than ``rtol``.

    Returns ``(u, f, M)`` for the accepted resolution.
    """
    f = forcing.sample(grid, midpoints(T, M))
    u = solve_exact(f, profile, workers)
    prev = mixed_norm(u, p, q)
    for _ in range(max_doublings):
        M2 = 2 * M
        f2 = forcing.sample(grid, midpoints(T, M2))
        u2 = solve_exact(f2, profile, workers)
        cur = mixed_norm(u2, p, q)
        M, f, u = M2, f2, u2
        if abs(cur - prev) <= rtol * max(abs(cur), 1e-300):
            break
        prev = cur
    return u, f, M


def required_halfwidth(profile: CoefficientProfile, T: float, support_radius: float, samples: int = 257) -> float:
    """Box half-width so the kernel mass leaving the box is negligible.

    L = max |int_0^t b| + 8 sqrt(lambda_max(Sigma(0, T))) + support radius of f.
    """
    ts = np.linspace(0.0, T, samples)
    shift = profile.integral_vector(np.zeros_like(ts), ts)
    shift_mag = float(np.max(np.linalg.norm(shift, axis=-1))) if shift.size else 0.0
    lam = float(np.linalg.eigvalsh(profile.integral_matrix(0.0, T))[-1])
    return shift_mag + 8.0 * math.sqrt(max(lam, 0.0)) + support_radius


# -- binary import / export ---------------------------------------------------


def write_field(path, f: SpaceTimeField) -> tuple[Path, Path]:
    """Write ``path`` (header + little-endian float64 payload) and ``path.json``."""
    path = Path(path)
    g = f.grid
    with open(path, "wb") as fh:
        fh.write(FIELD_HEADER.pack(g.dimension, g.n, g.halfwidth, f.times.size))
        fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())
    side = path.with_name(path.name + ".json")
    side.write_text(
        json.dumps(
            {
                "dimension": g.dimension,
                "n": g.n,
                "halfwidth": g.halfwidth,
                "spacing": g.spacing,
                "times": [float(t) for t in f.times],
                "layout": "C order, axes (time, x1, ..., xd); x_j = -L + j*spacing",
                "dtype": "<f8",
            },
            indent=2,
        )
    )
    return path, side


def read_field(path) -> SpaceTimeField:
    path = Path(path)
    raw = path.read_bytes()
    d, n, L, nt = FIELD_HEADER.unpack_from(raw)
    grid = SpatialGrid(d, n, L)
    values = np.frombuffer(raw, dtype="<f8", offset=FIELD_HEADER.size).reshape((nt,) + grid.shape)
    side = path.with_name(path.name + ".json")
    if side.exists():
        times = np.array(json.loads(side.read_text())["times"], dtype=float)
    else:
        times = np.arange(nt, dtype=float)
    return SpaceTimeField(grid, times, values.copy())
