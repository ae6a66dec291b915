"""The canonical two-dimensional coefficient suite and resolution sizing.

Five diffusion profiles span the regimes of interest:

* ``identity``: A = I.
* ``anisotropic``: A = diag(1, 4).
* ``window``: A = I off [1, 2) and A = 0 on it, so delta vanishes there.
* ``unbounded``: A = (1 + t^{-1/2}) I, integrable but unbounded at t = 0.
* ``rotating``: A = R(t) diag(1, 3) R(t)^T with R the rotation by angle t.

Each is paired with lower-order variants b = (1, -1), c = +1 or -1.
"""

from __future__ import annotations

import math

import numpy as np

from .field import SpatialGrid, required_halfwidth
from .forcing import GaussianForcing
from .profiles import CoefficientProfile, constant, cosine, monomial, power, sine

SUITE_NAMES = ("identity", "anisotropic", "window", "unbounded", "rotating")
WINDOW = (1.0, 2.0)

# exp(-x^2/2) < 1e-12 beyond x = 7.434; a Gaussian of std sigma has spectrum
# below that at the Nyquist wavenumber when sigma * pi / h >= 7.434.
SPECTRAL_TAIL = 7.434


def base_profile(name: str, horizon: float = 3.0) -> CoefficientProfile:
    """One canonical profile with b = c = 0."""
    d = 2
    if name == "identity":
        terms = [constant(np.eye(d))]
    elif name == "anisotropic":
        terms = [constant(np.diag([1.0, 4.0]))]
    elif name == "window":
        t0, t1 = WINDOW
        terms = [constant(np.eye(d), (0.0, t0)), constant(np.eye(d), (t1, math.inf))]
    elif name == "unbounded":
        terms = [constant(np.eye(d)), power(np.eye(d), -0.5)]
    elif name == "rotating":
        # R(t) diag(1, 3) R(t)^T = 2 I + cos(2t) diag(-1, 1) + sin(2t) [[0, -1], [-1, 0]]
        terms = [
            constant(2.0 * np.eye(d)),
            cosine(np.diag([-1.0, 1.0]), 2.0),
            sine(np.array([[0.0, -1.0], [-1.0, 0.0]]), 2.0),
        ]
    else:
        raise KeyError(f"unknown canonical profile {name!r}")
    return CoefficientProfile(d, terms, horizon=horizon, name=name)


def lower_order_variants(profile: CoefficientProfile) -> list[CoefficientProfile]:
    """The profile itself plus b = (1, -1) with c = +1 and with c = -1."""
    b = [constant([1.0, -1.0])]
    return [
        profile,
        profile.with_lower_order(b, [constant(1.0)], name=f"{profile.name}+drift+growth"),
        profile.with_lower_order(b, [constant(-1.0)], name=f"{profile.name}+drift+decay"),
    ]


def canonical_profiles(horizon: float = 3.0, variants: bool = True) -> list[CoefficientProfile]:
    out = []
    for name in SUITE_NAMES:
        base = base_profile(name, horizon)
        out.extend(lower_order_variants(base) if variants else [base])
    return out


def canonical_forcing(variance: float, center=(0.0, 0.0), horizon: float = 3.0) -> GaussianForcing:
    """Gaussian bump with time factor (1 + t/2), switched off on the degenerate window.

    Keeping the forcing away from the window keeps every improper right-hand
    side finite, so the explicit-constant checks are never vacuous on the suite.
    """
    t0, t1 = WINDOW
    terms = [constant(1.0, (0.0, t0)), monomial(0.5, 1, (0.0, t0))]
    if horizon > t1:
        terms += [constant(1.0, (t1, math.inf)), monomial(0.5, 1, (t1, math.inf))]
    return GaussianForcing(2, variance, center, time_terms=tuple(terms))


def resolved_box(profiles, T: float, n: int, center_radius: float = 0.0) -> tuple[float, float]:
    """Half-width L and forcing variance v0 for an n-point grid.

    The box must hold the kernel mass of every profile plus the bump
    (L >= A + 8 sqrt(v0)) while the bump stays spectrally resolved, i.e. its
    spectrum at the Nyquist wavenumber pi n / (2L) is below 1e-12, which means
    sqrt(v0) >= kappa L with kappa = 2 SPECTRAL_TAIL / (pi n). Both hold with
    equality at L = A / (1 - 8 kappa).
    """
    kappa = SPECTRAL_TAIL * 2.0 / (math.pi * n)
    if 8.0 * kappa >= 1.0:
        raise ValueError(f"n = {n} is too small to resolve a bump inside the box")
    A = max(required_halfwidth(pr, T, 0.0) for pr in profiles) + center_radius
    L = A / (1.0 - 8.0 * kappa)
    v0 = (kappa * L) ** 2
    return L, v0


def suite_grid(profiles, T: float, n: int = 64, dimension: int = 2) -> tuple[SpatialGrid, float]:
    L, v0 = resolved_box(profiles, T, n)
    return SpatialGrid(dimension, n, L), v0
