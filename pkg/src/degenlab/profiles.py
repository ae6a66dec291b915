"""Time-dependent coefficient triples (A, b, c) with exact antiderivatives.

A profile is a finite sum of primitive terms per coefficient. Every term has a
closed-form antiderivative, so covariance integrals, drifts and growth factors
are exact. The ellipticity function ``delta`` (smallest eigenvalue of A), the
time change ``alpha`` and its generalized inverse ``beta`` live here as well.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import integrate

from .errors import NotPSDError, OutOfRangeError, SingularEvaluationError

TERM_KINDS = ("constant", "monomial", "power", "cos", "sin")

EIG_CLAMP = 1e-12
ALPHA_RTOL = 1e-10
BISECTION_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class PrimitiveTerm:
    """``coefficient * phi(t) * 1[t0 <= t < t1]``.

    ``phi`` is 1 (constant), ``t**k`` (monomial, integer k >= 0), ``t**gamma``
    (power, gamma > -1), ``cos(frequency*t)`` or ``sin(frequency*t)``.
    """

    kind: str
    coefficient: np.ndarray
    exponent: float = 0.0
    frequency: float = 0.0
    support: tuple[float, float] = (0.0, math.inf)

    def __post_init__(self):
        if self.kind not in TERM_KINDS:
            raise ValueError(f"unknown term kind {self.kind!r}")
        object.__setattr__(self, "coefficient", np.asarray(self.coefficient, dtype=float))
        t0, t1 = (float(v) for v in self.support)
        if not (0.0 <= t0 < t1):
            raise ValueError(f"support must satisfy 0 <= t0 < t1, got {self.support}")
        object.__setattr__(self, "support", (t0, t1))
        if self.kind == "constant":
            object.__setattr__(self, "exponent", 0.0)
        elif self.kind == "monomial":
            k = float(self.exponent)
            if k < 0 or k != int(k):
                raise ValueError("monomial exponent must be a nonnegative integer")
        elif self.kind == "power":
            if not self.exponent > -1.0:
                raise ValueError("power exponent must exceed -1 for local integrability")
        if not np.all(np.isfinite(self.coefficient)):
            raise ValueError("term coefficient must be finite")

    @property
    def singular_at_zero(self) -> bool:
        return self.kind == "power" and self.exponent < 0 and self.support[0] == 0.0

    def shape(self, t):
        """Scalar factor phi(t) times the support indicator; vectorized over t."""
        t = np.asarray(t, dtype=float)
        t0, t1 = self.support
        inside = (t >= t0) & (t < t1)
        if self.kind == "constant":
            phi = np.ones_like(t)
        elif self.kind in ("monomial", "power"):
            with np.errstate(divide="ignore"):
                phi = np.power(t, self.exponent)
        elif self.kind == "cos":
            phi = np.cos(self.frequency * t)
        else:
            phi = np.sin(self.frequency * t)
        return np.where(inside, phi, 0.0)

    def primitive(self, a, b):
        """Integral of ``shape`` over [a, b] (a <= b); vectorized over a, b."""
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        t0, t1 = self.support
        lo = np.maximum(a, t0)
        hi = np.maximum(np.minimum(b, t1), lo)
        if self.kind in ("constant", "monomial", "power"):
            e = self.exponent + 1.0
            return (np.power(hi, e) - np.power(lo, e)) / e
        w = self.frequency
        if w == 0.0:
            return hi - lo if self.kind == "cos" else np.zeros_like(hi)
        if self.kind == "cos":
            return (np.sin(w * hi) - np.sin(w * lo)) / w
        return (np.cos(w * lo) - np.cos(w * hi)) / w

    def value(self, t):
        s = self.shape(t)
        return np.multiply.outer(s, self.coefficient)

    def integral(self, a, b):
        return np.multiply.outer(self.primitive(a, b), self.coefficient)

    def rescaled(self, lam: float) -> "PrimitiveTerm":
        """Term for ``lam * g(lam * t)`` where g is this term."""
        t0, t1 = self.support
        support = (t0 / lam, t1 / lam)
        if self.kind in ("monomial", "power"):
            coef = self.coefficient * lam ** (self.exponent + 1.0)
            return PrimitiveTerm(self.kind, coef, self.exponent, 0.0, support)
        if self.kind == "constant":
            return PrimitiveTerm("constant", self.coefficient * lam, support=support)
        return PrimitiveTerm(self.kind, self.coefficient * lam, 0.0, self.frequency * lam, support)


def constant(coef, support=(0.0, math.inf)) -> PrimitiveTerm:
    return PrimitiveTerm("constant", coef, support=support)


def monomial(coef, k: int, support=(0.0, math.inf)) -> PrimitiveTerm:
    return PrimitiveTerm("monomial", coef, exponent=k, support=support)


def power(coef, gamma: float, support=(0.0, math.inf)) -> PrimitiveTerm:
    return PrimitiveTerm("power", coef, exponent=gamma, support=support)


def cosine(coef, frequency: float, support=(0.0, math.inf)) -> PrimitiveTerm:
    return PrimitiveTerm("cos", coef, frequency=frequency, support=support)


def sine(coef, frequency: float, support=(0.0, math.inf)) -> PrimitiveTerm:
    return PrimitiveTerm("sin", coef, frequency=frequency, support=support)


def _sum_terms(terms: Sequence[PrimitiveTerm], shape: tuple, t, integral_to=None):
    t = np.asarray(t, dtype=float)
    base = t.shape
    if integral_to is not None:
        integral_to = np.asarray(integral_to, dtype=float)
        base = np.broadcast_shapes(base, integral_to.shape)
    out = np.zeros(base + shape)
    for term in terms:
        if integral_to is None:
            out = out + term.value(t)
        else:
            out = out + term.integral(t, integral_to)
    return out


class CoefficientProfile:
    """Coefficients A(t) (d x d), b(t) (d), c(t) given as sums of primitive terms.

    Matrix coefficients are symmetrized on construction and A(t) is checked to
    be positive semidefinite on a dense sample of [0, horizon].
    """

    def __init__(
        self,
        dimension: int,
        a_terms: Iterable[PrimitiveTerm],
        b_terms: Iterable[PrimitiveTerm] = (),
        c_terms: Iterable[PrimitiveTerm] = (),
        horizon: float = 1.0,
        name: str = "profile",
    ):
        if dimension not in (1, 2, 3):
            raise ValueError("dimension must be 1, 2 or 3")
        d = self.dimension = int(dimension)
        self.horizon = float(horizon)
        self.name = name
        a_list = []
        for term in a_terms:
            coef = np.asarray(term.coefficient, dtype=float)
            if coef.ndim == 0:
                coef = coef * np.eye(d)
            if coef.shape != (d, d):
                raise ValueError(f"a-term coefficient must be {d}x{d}, got {coef.shape}")
            coef = 0.5 * (coef + coef.T)
            a_list.append(PrimitiveTerm(term.kind, coef, term.exponent, term.frequency, term.support))
        b_list = []
        for term in b_terms:
            coef = np.broadcast_to(np.asarray(term.coefficient, dtype=float), (d,)).copy()
            b_list.append(PrimitiveTerm(term.kind, coef, term.exponent, term.frequency, term.support))
        c_list = []
        for term in c_terms:
            coef = np.asarray(term.coefficient, dtype=float)
            if coef.ndim != 0:
                raise ValueError("c-term coefficient must be scalar")
            c_list.append(term)
        self.a_terms = tuple(a_list)
        self.b_terms = tuple(b_list)
        self.c_terms = tuple(c_list)
        self.isotropic = all(
            np.allclose(t.coefficient, t.coefficient[0, 0] * np.eye(d), atol=0.0, rtol=0.0)
            for t in self.a_terms
        )
        self._alpha_cache: dict = {}
        self._check_psd()

    def __repr__(self):
        return f"CoefficientProfile(name={self.name!r}, d={self.dimension}, horizon={self.horizon})"

    # -- evaluation -------------------------------------------------------

    def a(self, t):
        return _sum_terms(self.a_terms, (self.dimension, self.dimension), t)

    def b(self, t):
        return _sum_terms(self.b_terms, (self.dimension,), t)

    def c(self, t):
        return _sum_terms(self.c_terms, (), t)

    def integral_a(self, s, t):
        """Exact ``int_s^t A``; vectorized over s (t may also be an array)."""
        return _sum_terms(self.a_terms, (self.dimension, self.dimension), s, integral_to=t)

    def integral_matrix(self, s, t):
        """Covariance ``2 int_s^t A(r) dr`` of the driving Gaussian increment."""
        return 2.0 * self.integral_a(s, t)

    def integral_vector(self, s, t):
        return _sum_terms(self.b_terms, (self.dimension,), s, integral_to=t)

    def integral_scalar(self, s, t):
        return _sum_terms(self.c_terms, (), s, integral_to=t)

    def breakpoints(self, upper: float | None = None) -> np.ndarray:
        """Finite support endpoints of the A-terms inside (0, upper)."""
        upper = self.horizon if upper is None else upper
        pts = {v for term in self.a_terms for v in term.support if 0.0 < v < upper}
        return np.array(sorted(pts))

    @property
    def singular_at_zero(self) -> bool:
        return any(t.singular_at_zero for t in self.a_terms)

    def _check_psd(self):
        if not self.a_terms:
            return
        ts = np.linspace(0.0, self.horizon, 2049)
        ts = np.concatenate([ts, self.breakpoints()])
        if self.singular_at_zero:
            ts = ts[ts > 0]
        lam = np.linalg.eigvalsh(self.a(ts))[:, 0]
        bad = lam < -EIG_CLAMP
        if np.any(bad):
            t_bad = ts[np.argmax(bad)]
            raise NotPSDError(f"A(t) is not positive semidefinite at t={t_bad:g} (min eig {lam[bad].min():.3g})")

    # -- derived profiles ---------------------------------------------------

    def time_rescaled(self, lam: float, name: str | None = None) -> "CoefficientProfile":
        """Profile with coefficients ``lam * A(lam t)``, ``lam * b(lam t)``, ``lam * c(lam t)``."""
        return CoefficientProfile(
            self.dimension,
            [t.rescaled(lam) for t in self.a_terms],
            [t.rescaled(lam) for t in self.b_terms],
            [t.rescaled(lam) for t in self.c_terms],
            horizon=self.horizon / lam,
            name=name or f"{self.name}@lambda={lam:g}",
        )

    def with_lower_order(self, b_terms=(), c_terms=(), name: str | None = None) -> "CoefficientProfile":
        return CoefficientProfile(
            self.dimension, self.a_terms, b_terms, c_terms, horizon=self.horizon, name=name or self.name
        )

    def without_lower_order(self) -> "CoefficientProfile":
        return CoefficientProfile(self.dimension, self.a_terms, horizon=self.horizon, name=f"{self.name}/reduced")


# -- ellipticity and time change ---------------------------------------------


def delta_of(profile: CoefficientProfile, t: float) -> float:
    """Smallest eigenvalue of A(t), clamped below at zero."""
    a = profile.a(float(t))
    if not np.all(np.isfinite(a)):
        raise SingularEvaluationError(f"A(t) diverges at t={t}")
    lam = np.linalg.eigvalsh(a)[0]
    return max(float(lam), 0.0)


def delta_values(profile: CoefficientProfile, ts) -> np.ndarray:
    """Vectorized ``delta``; returns +inf where a power term diverges."""
    ts = np.asarray(ts, dtype=float)
    a = profile.a(ts)
    if profile.isotropic:
        lam = a[..., 0, 0]
    else:
        finite = np.all(np.isfinite(a), axis=(-2, -1))
        lam = np.full(ts.shape, np.inf)
        if np.any(finite):
            lam[finite] = np.linalg.eigvalsh(a[finite])[..., 0]
    return np.maximum(lam, 0.0)


def _alpha_segment(profile: CoefficientProfile, lo: float, hi: float) -> float:
    if hi <= lo:
        return 0.0
    if profile.isotropic:
        return float(profile.integral_a(lo, hi)[0, 0])
    pts = [p for p in profile.breakpoints(upper=math.inf) if lo < p < hi]
    val, _ = integrate.quad(
        lambda r: delta_values(profile, r).item(),
        lo,
        hi,
        points=pts or None,
        epsabs=1e-14,
        epsrel=ALPHA_RTOL,
        limit=500,
    )
    return val


def alpha(profile: CoefficientProfile, t: float, epsilon: float = 0.0) -> float:
    """``int_0^t (delta(s) + epsilon) ds``."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    return _alpha_segment(profile, 0.0, float(t)) + epsilon * float(t)


def alpha_many(profile: CoefficientProfile, ts, epsilon: float = 0.0) -> np.ndarray:
    """``alpha`` at many times, accumulated over sorted segments."""
    ts = np.asarray(ts, dtype=float)
    flat = ts.ravel()
    if profile.isotropic:
        vals = profile.integral_a(np.zeros_like(flat), flat)[:, 0, 0]
    else:
        key = flat.tobytes()
        vals = profile._alpha_cache.get(key)
        if vals is None:
            order = np.argsort(flat)
            vals = np.empty_like(flat)
            acc, prev = 0.0, 0.0
            for i in order:
                acc += _alpha_segment(profile, prev, flat[i])
                prev = flat[i]
                vals[i] = acc
            if len(profile._alpha_cache) < 64:
                profile._alpha_cache[key] = vals
            vals = vals.copy()
    return (vals + epsilon * flat).reshape(ts.shape)


def beta(profile: CoefficientProfile, s: float, epsilon: float = 0.0, horizon: float | None = None) -> float:
    """Generalized inverse of ``alpha_epsilon`` on [0, horizon].

    With epsilon > 0 this is the unique root of alpha_eps(t) = s. With
    epsilon = 0 it is the right-continuous inverse ``inf{t : alpha(t) > s}``,
    which jumps across plateaus where delta vanishes.
    """
    T = profile.horizon if horizon is None else float(horizon)
    top = alpha(profile, T, epsilon)
    if s < 0 or s > top * (1 + 1e-14) + 1e-15:
        raise OutOfRangeError(f"s={s} outside [0, alpha_eps(T)={top}]")
    lo, hi = 0.0, T
    if epsilon > 0:
        if s == 0:
            return 0.0
        # relative in t: near t = 0 alpha may have unbounded slope (delta ~ t^-1/2)
        while hi - lo > BISECTION_TOL * min(1.0, hi):
            mid = 0.5 * (lo + hi)
            if mid <= lo or mid >= hi:
                break
            if alpha(profile, mid, epsilon) < s:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)
    while hi - lo > BISECTION_TOL:
        mid = 0.5 * (lo + hi)
        if alpha(profile, mid) > s:
            hi = mid
        else:
            lo = mid
    return hi


@dataclass(frozen=True)
class DegeneracyTrace:
    """delta, alpha_eps and beta_eps bound to one profile and one epsilon."""

    profile: CoefficientProfile
    epsilon: float = 0.0

    def delta(self, t):
        return delta_values(self.profile, t)

    def alpha(self, t):
        return alpha_many(self.profile, t, self.epsilon)

    def beta(self, s, horizon=None):
        return beta(self.profile, s, self.epsilon, horizon)


# -- matrix square roots -------------------------------------------------------


def matrix_sqrt_psd(m) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition (batched over leading axes)."""
    m = np.asarray(m, dtype=float)
    m = 0.5 * (m + np.swapaxes(m, -1, -2))
    lam, vec = np.linalg.eigh(m)
    if np.any(lam < -EIG_CLAMP):
        raise NotPSDError(f"matrix has eigenvalue {lam.min():.3g} < -{EIG_CLAMP:g}")
    root = np.sqrt(np.clip(lam, 0.0, None))
    return (vec * root[..., None, :]) @ np.swapaxes(vec, -1, -2)
