"""Reproducible experiments over the canonical suite.

Each function returns raw measurements (z-scores, errors, reports); pass/fail
thresholds are applied by the caller, so the same code serves the
self-check at reduced resolution and the acceptance tests at full size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .field import SpatialGrid, inverse_transform_reduce, midpoints, solve_exact, transform_reduce
from .forcing import GaussianForcing
from .paths import mc_solution, mc_time_grid, simulate, split_simulate
from .profiles import alpha, constant, power
from .suite import SUITE_NAMES, WINDOW, base_profile, canonical_forcing, canonical_profiles, resolved_box
from .verify import (
    ScanParams,
    check_lp_contraction,
    check_lq_lp_estimate,
    check_sup_estimate,
    scan_profiles,
    scan_rescaling,
    sup_constant,
    sup_power_constant,
)
from .weights import Weight, aq_constant


def probe_indices(values: np.ndarray, count: int = 16, floor: float = 0.01) -> list[tuple]:
    """Grid indices spread evenly in rank over the points where values >= floor * max."""
    flat = values.ravel()
    cand = np.flatnonzero(flat >= floor * flat.max())
    cand = cand[np.argsort(flat[cand], kind="stable")]
    pick = cand[np.unique(np.round(np.linspace(0, cand.size - 1, count)).astype(int))]
    return [np.unravel_index(i, values.shape) for i in pick]


def cross_validation(T=1.0, n=64, M=64, n_paths=100_000, seed=0, probes=16, variants=False, threads=1):
    """Monte Carlo versus spectral solution at probe grid points, at t = T.

    The Monte Carlo time quadrature uses the solver's midpoints, so the two
    estimates differ only by sampling error and periodization.
    """
    profiles = canonical_profiles(T, variants)
    L, v0 = resolved_box(profiles, T, n)
    grid = SpatialGrid(2, n, L)
    forcing = canonical_forcing(v0, horizon=T)
    f = forcing.sample(grid, midpoints(T, M))
    rows = []
    for i, prof in enumerate(profiles):
        u = solve_exact(f, prof)
        uT = u.values[-1]
        idx = probe_indices(uT, probes)
        pts = np.array([grid.axis[list(ix)] for ix in idx])
        ens = simulate(prof, mc_time_grid([T], M), n_paths, seed + i, threads=threads)
        res = mc_solution(forcing, prof, [(T, x) for x in pts], ens, M)
        for ix, x, (est, se) in zip(idx, pts, res):
            s = float(uT[ix])
            rows.append({"profile": prof.name, "x": tuple(x), "spectral": s, "mc": est, "se": se, "z": (est - s) / se})
    return rows


def _second_moments(samples: np.ndarray):
    n = samples.shape[0]
    m = np.einsum("nki,nkj->kij", samples, samples) / n
    diag = np.diagonal(m, axis1=-2, axis2=-1)
    se = np.sqrt((diag[..., :, None] * diag[..., None, :] + m**2) / n)
    return m, se


def splitting_law(T=1.0, steps=16, n_paths=100_000, seed=0, threads=1, names=SUITE_NAMES):
    """Componentwise covariance of direct vs split ensembles, z-scored.

    Second moments use the known zero mean; their Gaussian standard error is
    sqrt((S_ii S_jj + S_ij^2) / n). Returns per profile the z-scores at all
    grid times (shape (steps + 1, d, d)) and the floor used.
    """
    times = np.linspace(0.0, T, steps + 1)
    out = {}
    for i, name in enumerate(names):
        prof = base_profile(name, T)
        direct = simulate(prof, times, n_paths, seed + 2 * i, threads=threads)
        split = split_simulate(prof, None, times, n_paths, seed + 2 * i + 1, threads=threads)
        m1, se1 = _second_moments(direct.samples)
        m2, se2 = _second_moments(split.combined.samples)
        se = np.sqrt(se1**2 + se2**2)
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(se > 0, (m1 - m2) / se, 0.0)
        exact = prof.integral_matrix(np.zeros_like(times), times)
        with np.errstate(divide="ignore", invalid="ignore"):
            z_exact = np.where(se2 > 0, (m2 - exact) / se2, 0.0)
        out[name] = {"z": z, "z_exact": z_exact, "floor": split.delta_floor}
    return out


def transform_equivalence(T=1.0, n=64, M=64, base="identity"):
    """Direct solve with (a, b, c) vs inverse transform of the reduced solve.

    The reduced forcing is e^{-C(t)} f(t, x - B(t)). Returns the relative
    L_inf error per growth coefficient c in {1, -1, t^{-1/2}}.
    """
    prof0 = base_profile(base, T)
    b = [constant([1.0, -1.0])]
    cases = {"c=1": [constant(1.0)], "c=-1": [constant(-1.0)], "c=t^-1/2": [power(1.0, -0.5)]}
    L, v0 = resolved_box([prof0.with_lower_order(b, c) for c in cases.values()], T, n)
    grid = SpatialGrid(2, n, L)
    f = canonical_forcing(v0, horizon=T).sample(grid, midpoints(T, M))
    reduced = prof0.without_lower_order()
    out = {}
    for label, c in cases.items():
        prof = prof0.with_lower_order(b, c, name=f"{base}+{label}")
        direct = solve_exact(f, prof)
        g = transform_reduce(f, prof)
        back = inverse_transform_reduce(solve_exact(g, reduced), prof)
        out[label] = float(np.max(np.abs(direct.values - back.values)) / np.max(np.abs(direct.values)))
    return out


def contraction(T=3.0, n=64, M=128, ps=(1.0, 2.0, math.inf)):
    """L_p contraction reports on every base profile (b = c = 0)."""
    profiles = canonical_profiles(T, variants=False)
    L, v0 = resolved_box(profiles, T, n)
    grid = SpatialGrid(2, n, L)
    f = canonical_forcing(v0, horizon=T).sample(grid, midpoints(T, M))
    reports = []
    for prof in profiles:
        u = solve_exact(f, prof)
        reports.extend(check_lp_contraction(u, f, prof, p) for p in ps)
    return reports


ACCEPTANCE_PARAMS = ScanParams(pq_pairs=((2.0, 2.0), (2.0, 3.0), (3.0, 2.0)), beta_values=(0.0, 0.5, -0.5))


def explicit_constants(T=3.0, n=64, M=128, params=ACCEPTANCE_PARAMS, threads=1):
    """All estimate reports over the full suite (bases and lower-order variants)."""
    profiles = canonical_profiles(T, variants=True)
    L, v0 = resolved_box(profiles, T, n)
    grid = SpatialGrid(2, n, L)
    return scan_profiles(profiles, canonical_forcing(v0, horizon=T), grid, T, M, params, threads)


def sup_anchor():
    """Sup-estimate constant at q = 2, beta = 1/2, delta = 1, T = 1, both ways."""
    prof = base_profile("identity", 1.0)
    aT = alpha(prof, 1.0)
    return sup_power_constant(0.5, 2.0, aT), sup_constant(Weight.power_law(0.5, 2.0), 2.0, aT)


@dataclass
class DichotomyResult:
    inside: object
    outside: object
    outside_lq: object


def improper_dichotomy(T=3.0, n=64, M=120):
    """Window profile with forcing inside the degenerate window vs before it.

    M is chosen so the window edges fall on grid nodes.
    """
    prof = base_profile("window", T)
    L, v0 = resolved_box([prof], T, n)
    grid = SpatialGrid(2, n, L)
    t0, t1 = WINDOW
    inside = GaussianForcing(2, v0, time_terms=(constant(1.0, (t0 + 0.2, t1 - 0.2)),))
    outside = GaussianForcing(2, v0, time_terms=(constant(1.0, (0.0, t0)),))
    w = Weight.unit(2.0)
    wp = Weight.power_law(0.5, 2.0)
    res = []
    for g in (inside, outside):
        f = g.sample(grid, midpoints(T, M))
        u = solve_exact(f, prof)
        res.append((u, f))
    rin = check_sup_estimate(*res[0], prof, w, 2.0, 2.0)
    rout = check_sup_estimate(*res[1], prof, w, 2.0, 2.0)
    rlq = check_lq_lp_estimate(*res[1], prof, wp, 2.0, 2.0)
    return DichotomyResult(rin, rout, rlq)


def rescaling(T=1.0, n=64, M=128, lambdas=(0.5, 1.0, 2.0, 10.0), base="identity"):
    prof = base_profile(base, T)
    L, v0 = resolved_box([prof.time_rescaled(lam) for lam in lambdas], T, n)
    grid = SpatialGrid(2, n, L)
    forcing = canonical_forcing(v0, horizon=T)
    return scan_rescaling(prof, forcing, grid, T, M, lambdas)


def random_power_weights(count=100, seed=0):
    """(beta, q) pairs with q in (1.2, 4) and beta uniform in the admissible range."""
    rng = np.random.default_rng(seed)
    qs = rng.uniform(1.2, 4.0, count)
    betas = rng.uniform(-0.98, 0.98, count) * np.where(rng.random(count) < 0.5, 1.0, qs - 1.0)
    betas = np.clip(betas, -0.98, 0.98 * (qs - 1.0))
    return list(zip(betas.tolist(), qs.tolist()))


def refinement_monotone(count=100, seed=0, levels=8):
    """For random power weights, the largest drop of the estimate under refinement."""
    worst = 0.0
    for beta_w, q in random_power_weights(count, seed):
        w = Weight.power_law(beta_w, q)
        prev = 0.0
        for lv in range(1, levels + 1):
            cur = aq_constant(w, q, (-1.0, 1.0), lv)
            worst = max(worst, prev - cur)
            prev = cur
    return worst

