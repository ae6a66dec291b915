"""Muckenhoupt A_q weights on the real line.

Supported forms are the constant weight, power weights ``amplitude * |t|^beta``
and tabulated piecewise-constant weights. All three have exact interval
integrals of ``w^r``, which the A_q sweep relies on.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import AdmissibilityError
from .profiles import CoefficientProfile, alpha

OVERFLOW_CAP = 1e12
FORMS = ("constant", "power", "tabulated")


@dataclass(frozen=True, eq=False)
class Weight:
    form: str
    q: float = 2.0
    beta: float = 0.0
    amplitude: float = 1.0
    knots: np.ndarray | None = None
    samples: np.ndarray | None = None
    aq_constant_estimate: float | None = None

    def __post_init__(self):
        if self.form not in FORMS:
            raise ValueError(f"unknown weight form {self.form!r}")
        if not self.q > 1:
            raise ValueError("q must exceed 1")
        if self.amplitude <= 0:
            raise ValueError("amplitude must be positive")
        if self.form == "tabulated":
            knots = np.asarray(self.knots, dtype=float)
            samples = np.asarray(self.samples, dtype=float)
            if knots.ndim != 1 or knots.shape != samples.shape or knots.size < 1:
                raise ValueError("tabulated weights need matching 1-d knots and samples")
            if np.any(np.diff(knots) <= 0):
                raise ValueError("knots must be strictly increasing")
            if np.any(samples <= 0) or not np.all(np.isfinite(samples)):
                raise ValueError("tabulated samples must be positive and finite")
            object.__setattr__(self, "knots", knots)
            object.__setattr__(self, "samples", samples)

    # -- constructors -----------------------------------------------------

    @classmethod
    def unit(cls, q: float = 2.0) -> "Weight":
        return cls("constant", q)

    @classmethod
    def power_law(cls, beta: float, q: float = 2.0, validate: bool = True) -> "Weight":
        w = cls("power", q, beta=float(beta))
        if validate and not w.admissible:
            raise AdmissibilityError(f"|t|^{beta} is not in A_{q}: need -1 < beta < {q - 1}")
        return w

    @classmethod
    def tabulated(cls, knots, samples, q: float = 2.0) -> "Weight":
        return cls("tabulated", q, knots=knots, samples=samples)

    @classmethod
    def from_csv(cls, path, q: float = 2.0) -> "Weight":
        """Read (t, w) pairs, one per row; a non-numeric header row is skipped."""
        ts, ws = [], []
        with open(Path(path), newline="") as fh:
            for row in csv.reader(fh):
                if not row:
                    continue
                try:
                    t, w = float(row[0]), float(row[1])
                except ValueError:
                    continue
                ts.append(t)
                ws.append(w)
        return cls.tabulated(ts, ws, q)

    @property
    def label(self) -> str:
        if self.form == "constant":
            return "unit"
        if self.form == "power":
            return f"power({self.beta:g})"
        return f"tabulated({self.knots.size})"

    @property
    def admissible(self) -> bool:
        """Membership in A_q decidable from the form alone."""
        if self.form == "power":
            return -1.0 < self.beta < self.q - 1.0
        return True

    def dilated(self, lam: float) -> "Weight":
        """The weight t -> w(lam * t)."""
        if self.form == "power":
            return replace(self, amplitude=self.amplitude * lam**self.beta, aq_constant_estimate=None)
        if self.form == "tabulated":
            return replace(self, knots=self.knots / lam, aq_constant_estimate=None)
        return self

    # -- evaluation -------------------------------------------------------

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.form == "constant":
            return self.amplitude * np.ones_like(t)
        if self.form == "power":
            with np.errstate(divide="ignore"):
                return self.amplitude * np.power(np.abs(t), self.beta)
        idx = np.clip(np.searchsorted(self.knots, t, side="right") - 1, 0, self.knots.size - 1)
        return self.amplitude * self.samples[idx]

    def integral_power(self, a, b, r: float):
        """Exact ``int_a^b w(t)^r dt`` (a <= b), +inf where it diverges; vectorized."""
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        scale = self.amplitude**r
        if self.form == "constant":
            return scale * (b - a)
        if self.form == "power":
            e = self.beta * r
            if e <= -1.0:
                touches = (a <= 0.0) & (b >= 0.0) & (b > a)
                with np.errstate(divide="ignore", invalid="ignore"):
                    F = np.sign(b) * np.abs(b) ** (e + 1) / (e + 1) - np.sign(a) * np.abs(a) ** (e + 1) / (e + 1)
                return np.where(touches, np.inf, scale * F)
            F = lambda t: np.sign(t) * np.abs(t) ** (e + 1) / (e + 1)
            return scale * (F(b) - F(a))
        return scale * (self._tab_cumulative(b, r) - self._tab_cumulative(a, r))

    def _tab_cumulative(self, t, r):
        """Antiderivative of w^r anchored at the first knot, with constant extension."""
        knots, vals = self.knots, self.samples**r
        seg = np.concatenate([[0.0], np.cumsum(vals[:-1] * np.diff(knots))])
        idx = np.clip(np.searchsorted(knots, t, side="right") - 1, 0, knots.size - 1)
        return seg[idx] + vals[idx] * (t - knots[idx])


def interval_aq_values(w: Weight, q: float, a, b) -> np.ndarray:
    """(avg_I w) * (avg_I w^{-1/(q-1)})^{q-1} on intervals I = (a, b)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    length = b - a
    with np.errstate(over="ignore", invalid="ignore"):
        mean_w = w.integral_power(a, b, 1.0) / length
        mean_dual = w.integral_power(a, b, -1.0 / (q - 1.0)) / length
        return mean_w * mean_dual ** (q - 1.0)


def aq_constant(w: Weight, q: float | None = None, domain=(-1.0, 1.0), levels: int = 10) -> float:
    """Lower estimate of [w]_{A_q}: sup over dyadic subintervals of ``domain``.

    Level l contributes the 2^l intervals of length |domain| / 2^l, so the
    estimate is non-decreasing in ``levels``. Returns ``math.inf`` (the
    divergence flag) when some average is infinite or exceeds the overflow
    cap, which signals that w is not in A_q.
    """
    q = w.q if q is None else q
    if not q > 1:
        raise ValueError("q must exceed 1")
    if levels < 0:
        raise ValueError("levels must be nonnegative")
    lo, hi = (float(v) for v in domain)
    if not hi > lo:
        raise ValueError("domain must be a nonempty interval")
    best = 0.0
    for level in range(levels + 1):
        edges = np.linspace(lo, hi, 2**level + 1)
        vals = interval_aq_values(w, q, edges[:-1], edges[1:])
        if not np.all(np.isfinite(vals)) or np.any(vals > OVERFLOW_CAP):
            return math.inf
        best = max(best, float(vals.max()))
    return best


def with_estimate(w: Weight, domain=(-1.0, 1.0), levels: int = 10) -> Weight:
    return replace(w, aq_constant_estimate=aq_constant(w, w.q, domain, levels))


def weight_at_alpha(w: Weight, profile: CoefficientProfile, t: float, epsilon: float = 0.0) -> float:
    """w(alpha(t) + epsilon * t)."""
    return float(w(alpha(profile, t) + epsilon * t))
