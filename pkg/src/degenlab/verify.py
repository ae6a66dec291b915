"""Both sides of the weighted a priori estimates, evaluated on solved fields.

Time integrals use the midpoint rule on the solver's node grid: coefficient
data (delta, alpha, the weights, e^{-qC}) is evaluated exactly at midpoints
s_k, while solution norms, which live on nodes, are averaged from the two
neighbouring nodes. Forcing norms live on midpoints already.

Right-hand sides are improper when delta vanishes where f does not, so they
are evaluated along a decreasing epsilon schedule with delta + epsilon in
place of delta and w(alpha + epsilon t) in place of w(alpha).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import AdmissibilityError
from .field import SpaceTimeField, hessian_frobenius, lp_norms, midpoints, solve_exact
from .profiles import CoefficientProfile, alpha_many, delta_values
from .weights import Weight, aq_constant

ESTIMATE_IDS = (
    "sup_estimate",
    "lq_lp_estimate",
    "hessian_estimate",
    "sup_power",
    "lq_lp_power",
    "hessian_power",
    "lp_contraction",
    "holder_bound",
)

DEFAULT_TOL = 0.05
CONVERGENCE_RTOL = 1e-3
DIVERGENCE_FACTOR = 1e12
CONTRACTION_ATOL = 1e-9
AQ_LEVELS = 12

CONVERGED = "converged"
DIVERGENT = "divergent"
INDETERMINATE = "indeterminate"


def default_eps_schedule(k_max: int = 60, base: float = 2.0) -> np.ndarray:
    return base ** -np.arange(k_max + 1, dtype=float)


@dataclass
class EstimateReport:
    estimate_id: str
    lhs: float
    rhs: float
    explicit_constant: float | None
    empirical_ratio: float | None
    epsilon_trace: list = field(default_factory=list)
    parameters: dict = field(default_factory=dict)
    passed: bool = False
    vacuous: bool = False
    status: str = CONVERGED
    note: str = ""

    def to_dict(self) -> dict:
        d = asdict(self)
        d["epsilon_trace"] = [[_json_float(e), _json_float(r)] for e, r in self.epsilon_trace]
        for key in ("lhs", "rhs", "explicit_constant", "empirical_ratio"):
            d[key] = _json_float(d[key])
        return d


def _json_float(x):
    if x is None:
        return None
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if math.isnan(x):
        return "nan"
    return x


@dataclass(frozen=True)
class RhsResult:
    value: float
    status: str
    trace: tuple

    @property
    def divergent(self) -> bool:
        return self.status == DIVERGENT


# -- time-grid data ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TimeData:
    """Coefficient data on the midpoints of a uniform node grid."""

    nodes: np.ndarray
    mids: np.ndarray
    h: float
    growth_nodes: np.ndarray  # C(t_m) = int_0^{t_m} c
    growth_mids: np.ndarray
    delta: np.ndarray
    alpha: np.ndarray
    alpha_T: float

    @classmethod
    def build(cls, profile: CoefficientProfile, nodes) -> "TimeData":
        nodes = np.asarray(nodes, dtype=float)
        M = nodes.size - 1
        h = float(nodes[-1] / M)
        mids = midpoints(nodes[-1], M)
        zn, zm = np.zeros_like(nodes), np.zeros_like(mids)
        return cls(
            nodes,
            mids,
            h,
            np.asarray(profile.integral_scalar(zn, nodes), dtype=float),
            np.asarray(profile.integral_scalar(zm, mids), dtype=float),
            delta_values(profile, mids),
            alpha_many(profile, mids),
            float(alpha_many(profile, nodes[-1:])[0]),
        )


def _node_to_mid(norms: np.ndarray) -> np.ndarray:
    return 0.5 * (norms[:-1] + norms[1:])


def _weight_values(w, t):
    return np.asarray(w(t), dtype=float) * np.ones_like(t)


# -- left-hand sides --------------------------------------------------------------


def lhs_sup(u: SpaceTimeField, profile: CoefficientProfile, p: float, q: float) -> float:
    """max over nodes of ||u(t)||_p^q e^{-q C(t)}."""
    norms = lp_norms(u, p)
    growth = np.asarray(profile.integral_scalar(np.zeros_like(u.times), u.times), dtype=float)
    return float(np.max(norms**q * np.exp(-q * growth)))


def lhs_weighted(norms, times, w, profile: CoefficientProfile, q: float, td: TimeData | None = None) -> float:
    """Midpoint rule for int ||.||_p^q e^{-qC} w(alpha) delta over (0, T).

    ``norms`` are per-node norms of u or of |u_xx|; ``times`` the node grid.
    """
    td = td or TimeData.build(profile, times)
    nm = _node_to_mid(np.asarray(norms, dtype=float))
    active = td.delta > 0
    out = np.zeros_like(nm)
    with np.errstate(over="ignore", invalid="ignore"):
        out[active] = nm[active] ** q * np.exp(-q * td.growth_mids[active]) * _weight_values(w, td.alpha[active]) * td.delta[active]
    return float(td.h * np.sum(out))


# -- right-hand side --------------------------------------------------------------


def rhs_epsilon(f_norms, td: TimeData, w, q: float, epsilon: float) -> float:
    """sum_k h ||f(s_k)||^q e^{-qC(s_k)} w(alpha(s_k) + eps s_k) (delta(s_k) + eps)^{1-q}."""
    f_norms = np.asarray(f_norms, dtype=float)
    active = f_norms > 0
    if not np.any(active):
        return 0.0
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        terms = (
            f_norms[active] ** q
            * np.exp(-q * td.growth_mids[active])
            * _weight_values(w, td.alpha[active] + epsilon * td.mids[active])
            * (td.delta[active] + epsilon) ** (1.0 - q)
        )
        total = td.h * np.sum(terms)
    return float(total) if np.isfinite(total) else math.inf


def _relchange(a: float, b: float) -> float:
    if a == b:
        return 0.0
    return abs(a - b) / max(abs(a), abs(b))


def rhs_from_norms(f_norms, td: TimeData, w, q: float, eps_schedule=None) -> RhsResult:
    """Run the epsilon schedule and classify the improper integral."""
    sched = default_eps_schedule() if eps_schedule is None else np.asarray(eps_schedule, dtype=float)
    if sched.size < 2 or np.any(np.diff(sched) >= 0) or np.any(sched <= 0):
        raise ValueError("eps_schedule must be positive and strictly decreasing")
    trace = []
    for k, eps in enumerate(sched):
        r = rhs_epsilon(f_norms, td, w, q, float(eps))
        trace.append((float(eps), r))
        vals = [v for _, v in trace]
        if not math.isfinite(r):
            return RhsResult(math.inf, DIVERGENT, tuple(trace))
        if k >= 2 and _relchange(vals[-1], vals[-2]) < CONVERGENCE_RTOL and _relchange(vals[-2], vals[-3]) < CONVERGENCE_RTOL:
            direct = rhs_epsilon(f_norms, td, w, q, 0.0)
            if math.isfinite(direct):
                limit = direct
            else:
                e1, e0 = trace[-1][0], trace[-2][0]
                limit = vals[-1] + (vals[-1] - vals[-2]) * e1 / (e0 - e1)
            return RhsResult(float(limit), CONVERGED, tuple(trace))
        monotone = all(b >= a for a, b in zip(vals, vals[1:]))
        if monotone and vals[0] > 0 and r > DIVERGENCE_FACTOR * vals[0]:
            return RhsResult(math.inf, DIVERGENT, tuple(trace))
    return RhsResult(trace[-1][1], INDETERMINATE, tuple(trace))


def rhs_weighted(f: SpaceTimeField, w, profile: CoefficientProfile, p: float, q: float, eps_schedule=None) -> RhsResult:
    """Improper right-hand side for forcing sampled at the midpoints of a uniform grid."""
    M = f.times.size
    T = 2.0 * f.times[0] * M
    td = TimeData.build(profile, np.linspace(0.0, T, M + 1))
    return rhs_from_norms(lp_norms(f, p), td, w, q, eps_schedule)


# -- explicit constants -----------------------------------------------------------


def sup_constant(w: Weight, q: float, alpha_T: float) -> float:
    """[int_0^{alpha(T)} w^{-1/(q-1)}]^{q-1}."""
    return float(w.integral_power(0.0, alpha_T, -1.0 / (q - 1.0))) ** (q - 1.0)


def sup_power_constant(beta_w: float, q: float, alpha_T: float) -> float:
    """[(q-1)/(q-1-beta)]^{q-1} alpha(T)^{q-1-beta}."""
    return ((q - 1.0) / (q - 1.0 - beta_w)) ** (q - 1.0) * alpha_T ** (q - 1.0 - beta_w)


_AQ_CACHE: dict = {}


def aq_for(w: Weight, q: float, alpha_T: float, levels: int = AQ_LEVELS) -> float:
    """A_q estimate on the symmetric domain [-alpha(T), alpha(T)] (or [-1, 1] if alpha(T) = 0)."""
    R = alpha_T if alpha_T > 0 else 1.0
    if w.form == "tabulated":
        return aq_constant(w, q, (-R, R), levels)
    key = (w.form, q, w.beta, w.amplitude, R, levels)
    if key not in _AQ_CACHE:
        _AQ_CACHE[key] = aq_constant(w, q, (-R, R), levels)
    return _AQ_CACHE[key]


def check_power_admissible(beta_w: float, q: float):
    if not -1.0 < beta_w < q - 1.0:
        raise AdmissibilityError(f"beta_w = {beta_w} outside (-1, q - 1) = (-1, {q - 1})")


# -- report assembly --------------------------------------------------------------


def _ratio(lhs: float, rhs: float) -> float | None:
    if math.isfinite(rhs) and rhs > 0:
        return lhs / rhs
    if rhs == 0 and lhs == 0:
        return 0.0
    return None


def _judge(estimate_id, lhs, res: RhsResult, constant, params, tol) -> EstimateReport:
    trace = list(res.trace)
    ratio = _ratio(lhs, res.value)
    rep = EstimateReport(estimate_id, lhs, res.value, constant, ratio, trace, params, status=res.status)
    if res.status == DIVERGENT:
        rep.passed = math.isfinite(lhs)
        rep.vacuous = True
        rep.note = "vacuous: improper right-hand side diverges"
        return rep
    rhs = res.value
    if res.status == INDETERMINATE:
        vals = [v for _, v in trace]
        if not all(b >= a for a, b in zip(vals, vals[1:])):
            rep.note = "indeterminate epsilon limit"
            return rep
        rep.note = "indeterminate epsilon limit; last value used as a lower bound"
    if constant is None:
        rep.passed = ratio is not None and math.isfinite(ratio)
    elif not math.isfinite(constant):
        rep.note = "explicit constant diverges"
    else:
        rep.passed = lhs <= (1.0 + tol) * constant * rhs + 1e-300
    return rep


def _params(profile, u, p, q, w=None, beta_w=None, tol=None, **extra) -> dict:
    out = {"profile": profile.name, "p": p, "q": q, "T": float(u.times[-1]), "M": int(u.times.size - 1), "n": u.grid.n}
    if w is not None:
        out["weight"] = w.label
    if beta_w is not None:
        out["beta_w"] = beta_w
    elif w is not None and w.form in ("constant", "power"):
        out["beta_w"] = w.beta
    if tol is not None:
        out["tol"] = tol
    out.update(extra)
    return out


def _check_pair(u: SpaceTimeField, f: SpaceTimeField):
    M = u.times.size - 1
    if f.times.size != M or not np.allclose(f.times, midpoints(u.times[-1], M), rtol=0.0, atol=1e-12):
        raise ValueError("f must be sampled at the midpoints of u's node grid")


class _Context:
    """Norms and time data shared by the checks on one solved problem."""

    def __init__(self, u, f, profile, hess=None, workers=None):
        _check_pair(u, f)
        self.u, self.f, self.profile = u, f, profile
        self.td = TimeData.build(profile, u.times)
        self._hess = hess
        self._workers = workers
        self._norms = {}

    def u_norms(self, p):
        return self._cached(("u", p), lambda: lp_norms(self.u, p))

    def f_norms(self, p):
        return self._cached(("f", p), lambda: lp_norms(self.f, p))

    def h_norms(self, p):
        def compute():
            if self._hess is None:
                self._hess = hessian_frobenius(self.u, self._workers)
            return lp_norms(self._hess, p)

        return self._cached(("h", p), compute)

    def _cached(self, key, fn):
        if key not in self._norms:
            self._norms[key] = fn()
        return self._norms[key]

    def rhs(self, p, q, w, eps_schedule):
        key = ("rhs", p, q, _weight_key(w), None if eps_schedule is None else tuple(eps_schedule))
        return self._cached(key, lambda: rhs_from_norms(self.f_norms(p), self.td, w, q, eps_schedule))

    def lhs_sup(self, p, q):
        return float(np.max(self.u_norms(p) ** q * np.exp(-q * self.td.growth_nodes)))


def _weight_key(w: Weight) -> tuple:
    knots = None if w.knots is None else (w.knots.tobytes(), w.samples.tobytes())
    return (w.form, w.q, w.beta, w.amplitude, knots)


def _ctx(u, f, profile, hess=None, ctx=None):
    return ctx if ctx is not None else _Context(u, f, profile, hess)


def check_sup_estimate(u, f, profile, w: Weight, p, q, tol=DEFAULT_TOL, eps_schedule=None, ctx=None) -> EstimateReport:
    c = _ctx(u, f, profile, ctx=ctx)
    const = sup_constant(w, q, c.td.alpha_T)
    return _judge("sup_estimate", c.lhs_sup(p, q), c.rhs(p, q, w, eps_schedule), const, _params(profile, u, p, q, w, tol=tol), tol)


def check_lq_lp_estimate(u, f, profile, w: Weight, p, q, tol=DEFAULT_TOL, eps_schedule=None, aq_levels=AQ_LEVELS, ctx=None) -> EstimateReport:
    c = _ctx(u, f, profile, ctx=ctx)
    aq = aq_for(w, q, c.td.alpha_T, aq_levels)
    const = aq * c.td.alpha_T**q
    lhs = lhs_weighted(c.u_norms(p), u.times, w, profile, q, c.td)
    params = _params(profile, u, p, q, w, tol=tol, aq_constant=aq, aq_levels=aq_levels)
    return _judge("lq_lp_estimate", lhs, c.rhs(p, q, w, eps_schedule), const, params, tol)


def check_hessian_estimate(u, f, profile, w: Weight, p, q, eps_schedule=None, hess=None, ctx=None) -> EstimateReport:
    c = _ctx(u, f, profile, hess=hess, ctx=ctx)
    lhs = lhs_weighted(c.h_norms(p), u.times, w, profile, q, c.td)
    return _judge("hessian_estimate", lhs, c.rhs(p, q, w, eps_schedule), None, _params(profile, u, p, q, w), DEFAULT_TOL)


def check_power_variants(u, f, profile, p, q, beta_w, tol=DEFAULT_TOL, eps_schedule=None, aq_levels=AQ_LEVELS, hess=None, ctx=None) -> list[EstimateReport]:
    """sup, L_q(L_p) and Hessian estimates for w = |t|^beta_w with closed-form constants."""
    check_power_admissible(beta_w, q)
    c = _ctx(u, f, profile, hess=hess, ctx=ctx)
    w = Weight.power_law(beta_w, q)
    res = c.rhs(p, q, w, eps_schedule)
    aT = c.td.alpha_T
    sup = _judge("sup_power", c.lhs_sup(p, q), res, sup_power_constant(beta_w, q, aT), _params(profile, u, p, q, w, beta_w, tol), tol)
    aq = aq_for(w, q, aT, aq_levels)
    lq = _judge(
        "lq_lp_power",
        lhs_weighted(c.u_norms(p), u.times, w, profile, q, c.td),
        res,
        aq * aT**q,
        _params(profile, u, p, q, w, beta_w, tol, aq_constant=aq, aq_levels=aq_levels),
        tol,
    )
    hs = _judge("hessian_power", lhs_weighted(c.h_norms(p), u.times, w, profile, q, c.td), res, None, _params(profile, u, p, q, w, beta_w), tol)
    return [sup, lq, hs]


def check_holder_bound(u, f, profile, h1: Callable, h2: Callable, p, q, tol=DEFAULT_TOL, ctx=None) -> EstimateReport:
    """int ||u||^q e^{-qC} h1 <= (1+tol) int h1(t) [int_0^t h2^{-1/(q-1)}]^{q-1} int_0^t ||f||^q e^{-qC} h2 dt."""
    c = _ctx(u, f, profile, ctx=ctx)
    td = c.td
    H1 = _weight_values(h1, td.mids)
    H2 = _weight_values(h2, td.mids)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        lhs = td.h * np.sum(_node_to_mid(c.u_norms(p)) ** q * np.exp(-q * td.growth_mids) * H1)
        fterm = c.f_norms(p) ** q * np.exp(-q * td.growth_mids) * H2
        fterm = np.where(c.f_norms(p) > 0, fterm, 0.0)
        dual = np.concatenate([[0.0], np.cumsum(td.h * H2 ** (-1.0 / (q - 1.0)))])
        forcing = np.concatenate([[0.0], np.cumsum(td.h * fterm)])
        outer_nodes = np.where(forcing > 0, dual ** (q - 1.0) * forcing, 0.0)
        rhs = td.h * np.sum(H1 * _node_to_mid(outer_nodes))
    lhs, rhs = float(lhs), float(rhs)
    rep = EstimateReport("holder_bound", lhs, rhs, 1.0, _ratio(lhs, rhs), [], _params(profile, u, p, q, tol=tol))
    if math.isfinite(rhs):
        rep.passed = lhs <= (1.0 + tol) * rhs + 1e-300
    else:
        rep.passed, rep.vacuous, rep.status = math.isfinite(lhs), True, DIVERGENT
        rep.note = "vacuous: right-hand side diverges"
    return rep


def check_lp_contraction(u, f, profile, p, atol=CONTRACTION_ATOL, ctx=None, q=None) -> EstimateReport:
    """e^{-C(t)} ||u(t)||_p <= sum_{s_k < t} h e^{-C(s_k)} ||f(s_k)||_p + atol at every node.

    The reported lhs/rhs pair is taken at the node with the largest ratio;
    ``q`` only labels the report.
    """
    c = _ctx(u, f, profile, ctx=ctx)
    td = c.td
    left = c.u_norms(p) * np.exp(-td.growth_nodes)
    right = np.concatenate([[0.0], np.cumsum(td.h * c.f_norms(p) * np.exp(-td.growth_mids))])
    with np.errstate(divide="ignore", invalid="ignore"):
        score = np.where(right > 0, left / right, np.where(left > 0, np.inf, 0.0))
    worst = int(np.argmax(score))
    lhs, rhs = float(left[worst]), float(right[worst])
    rep = EstimateReport(
        "lp_contraction", lhs, rhs, 1.0, _ratio(lhs, rhs), [],
        _params(profile, u, p, q, atol=atol, worst_time=float(u.times[worst])),
    )
    rep.passed = bool(np.all(left <= right + atol))
    return rep


# -- scans ------------------------------------------------------------------------


@dataclass(frozen=True)
class ScanParams:
    pq_pairs: Sequence[tuple] = ((2.0, 2.0), (2.0, 3.0), (3.0, 2.0))
    beta_values: Sequence[float] = (0.0, 0.5, -0.5)
    tol: float = DEFAULT_TOL
    eps_schedule: Sequence[float] | None = None
    aq_levels: int = AQ_LEVELS
    extra_weights: Sequence[Weight] = ()


def verify_solution(u, f, profile, params: ScanParams, workers=None) -> list[EstimateReport]:
    """Every estimate for one solved problem.

    Per (p, q): lp_contraction and holder_bound once; per admissible beta_w:
    the generic sup / L_q(L_p) / Hessian checks with w = |t|^beta_w and the
    three power variants. Extra weights add the three generic checks each.
    """
    ctx = _Context(u, f, profile, workers=workers)
    unit = lambda t: np.ones_like(np.asarray(t, dtype=float))
    out = []
    for p, q in params.pq_pairs:
        out.append(check_lp_contraction(u, f, profile, p, ctx=ctx, q=q))
        out.append(check_holder_bound(u, f, profile, unit, unit, p, q, params.tol, ctx=ctx))
        weights = []
        for beta_w in params.beta_values:
            check_power_admissible(beta_w, q)
            weights.append((beta_w, Weight.power_law(beta_w, q)))
        weights += [(None, Weight(w.form, q, w.beta, w.amplitude, w.knots, w.samples)) for w in params.extra_weights]
        for beta_w, w in weights:
            sched = params.eps_schedule
            out.append(check_sup_estimate(u, f, profile, w, p, q, params.tol, sched, ctx=ctx))
            out.append(check_lq_lp_estimate(u, f, profile, w, p, q, params.tol, sched, params.aq_levels, ctx=ctx))
            out.append(check_hessian_estimate(u, f, profile, w, p, q, sched, ctx=ctx))
            if beta_w is not None:
                out.extend(check_power_variants(u, f, profile, p, q, beta_w, params.tol, sched, params.aq_levels, ctx=ctx))
    return out


def summarize(reports: Sequence[EstimateReport]) -> dict:
    ratios = [
        r.empirical_ratio
        for r in reports
        if r.estimate_id in ("hessian_estimate", "hessian_power") and r.empirical_ratio is not None and not r.vacuous
    ]
    failed = [r for r in reports if not r.passed]
    return {
        "reports": len(reports),
        "passed": len(reports) - len(failed),
        "failed": len(failed),
        "vacuous": sum(r.vacuous for r in reports),
        "max_hessian_ratio": max(ratios) if ratios else None,
        "failed_ids": sorted({f"{r.estimate_id}:{r.parameters.get('profile')}" for r in failed}),
    }


def scan_profiles(profiles: Sequence[CoefficientProfile], forcing, grid, T: float, M: int, params: ScanParams | None = None, threads: int = 1, workers=None):
    """Solve every profile with the same forcing and run all checks.

    Returns ``(reports, summary)``; report order follows ``profiles``.
    """
    params = params or ScanParams()
    f = forcing.sample(grid, midpoints(T, M)) if not isinstance(forcing, SpaceTimeField) else forcing

    def run(profile):
        u = solve_exact(f, profile, workers)
        return verify_solution(u, f, profile, params, workers)

    if threads and threads > 1 and len(profiles) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(run, profiles))
    else:
        chunks = [run(pr) for pr in profiles]
    reports = [r for chunk in chunks for r in chunk]
    return reports, summarize(reports)


def scan_rescaling(base: CoefficientProfile, forcing, grid, T: float, M: int, lambdas=(0.5, 1.0, 2.0, 10.0), p: float = 2.0, q: float = 2.0, eps_schedule=None, workers=None):
    """Hessian ratio for a_lam = lam a(lam t), f_lam = lam g(lam t, x) on [0, T / lam], w = 1.

    Each member keeps M time steps, so its grid is the image of the base grid
    under the change of variables. Returns ``(rows, spread)`` with spread
    = (max - min) / min of the ratios.
    """
    w = Weight.unit(q)
    rows = []
    for lam in lambdas:
        prof = base.time_rescaled(lam)
        g = forcing.rescaled(lam)
        Tl = T / lam
        f = g.sample(grid, midpoints(Tl, M))
        u = solve_exact(f, prof, workers)
        rep = check_hessian_estimate(u, f, prof, w, p, q, eps_schedule)
        rows.append({"lambda": float(lam), "horizon": Tl, "lhs": rep.lhs, "rhs": rep.rhs, "ratio": rep.empirical_ratio, "status": rep.status})
    ratios = np.array([r["ratio"] for r in rows], dtype=float)
    spread = float((ratios.max() - ratios.min()) / ratios.min())
    return rows, spread
