"""Symbolic separable forcing terms: a Gaussian bump times a time profile."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .profiles import PrimitiveTerm, constant


@dataclass(frozen=True)
class GaussianForcing:
    """f(t, x) = amplitude * g(t) * N(center, variance * I)(x).

    ``time_terms`` are scalar primitive terms summed to give g(t), so windows
    (constant with support), monomials and integrable powers are all allowed.
    An amplitude of zero gives the zero forcing.
    """

    dimension: int
    variance: float
    center: tuple = ()
    amplitude: float = 1.0
    time_terms: Sequence[PrimitiveTerm] = field(default_factory=lambda: (constant(1.0),))

    def __post_init__(self):
        if self.variance <= 0:
            raise ValueError("variance must be positive")
        center = tuple(float(c) for c in self.center) or (0.0,) * self.dimension
        if len(center) != self.dimension:
            raise ValueError("center must have one entry per dimension")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "time_terms", tuple(self.time_terms))

    @property
    def is_zero(self) -> bool:
        return self.amplitude == 0.0 or not self.time_terms

    @property
    def support_radius(self) -> float:
        """Radius beyond which the bump is below ~1e-14 of its peak."""
        return float(np.linalg.norm(self.center)) + 8.0 * math.sqrt(self.variance)

    def time_factor(self, t):
        t = np.asarray(t, dtype=float)
        g = np.zeros(t.shape)
        for term in self.time_terms:
            g = g + float(term.coefficient) * term.shape(t)
        return self.amplitude * g

    def spatial(self, x):
        """Unit-mass Gaussian density evaluated at points x of shape (..., d)."""
        x = np.asarray(x, dtype=float)
        r2 = np.sum((x - np.asarray(self.center)) ** 2, axis=-1)
        norm = (2.0 * math.pi * self.variance) ** (-self.dimension / 2.0)
        return norm * np.exp(-0.5 * r2 / self.variance)

    def evaluate_shifted(self, t: float, points, disp) -> np.ndarray:
        """f(t, x_i + D_j) for query points x_i (q, d) and displacements D_j (n, d); shape (q, n)."""
        y = np.asarray(points, dtype=float) - np.asarray(self.center)
        disp = np.asarray(disp, dtype=float)
        r2 = np.sum(y**2, axis=1)[:, None] + 2.0 * (y @ disp.T) + np.sum(disp**2, axis=1)[None, :]
        norm = (2.0 * math.pi * self.variance) ** (-self.dimension / 2.0)
        return float(self.time_factor(t)) * norm * np.exp(-0.5 / self.variance * r2)

    def __call__(self, t, x):
        return self.time_factor(t) * self.spatial(x)

    def sample(self, grid, times):
        """Sample on ``grid`` at ``times`` as a SpaceTimeField."""
        from .field import SpaceTimeField

        times = np.asarray(times, dtype=float)
        spatial = self.spatial(grid.points())
        values = self.time_factor(times)[(slice(None),) + (None,) * grid.dimension] * spatial[None]
        return SpaceTimeField(grid, times, values)

    def rescaled(self, lam: float) -> "GaussianForcing":
        """Forcing ``lam * f(lam * t, x)``."""
        return GaussianForcing(
            self.dimension,
            self.variance,
            self.center,
            self.amplitude,
            tuple(t.rescaled(lam) for t in self.time_terms),
        )

    def lp_norm(self, p: float) -> float:
        """Exact spatial L_p norm of the unit-amplitude Gaussian bump on R^d."""
        d, v = self.dimension, self.variance
        if math.isinf(p):
            return (2.0 * math.pi * v) ** (-d / 2.0)
        return (2.0 * math.pi * v) ** (-d / 2.0 * (1.0 - 1.0 / p)) * p ** (-d / (2.0 * p))


def zero_forcing(dimension: int) -> GaussianForcing:
    return GaussianForcing(dimension, 1.0, amplitude=0.0)
