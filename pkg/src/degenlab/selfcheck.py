"""Invariant and property checks on the canonical suite at reduced resolution."""

from __future__ import annotations

import math
import time

import numpy as np

from . import experiments as ex
from .field import KernelSpec, SpatialGrid, apply_kernel
from .profiles import alpha_many, beta, constant, matrix_sqrt_psd
from .suite import SUITE_NAMES, base_profile
from .weights import Weight, aq_constant


def _kernel_semigroup() -> float:
    grid = SpatialGrid(2, 64, 20.0)
    g = np.exp(-0.5 * np.sum(grid.points() ** 2, axis=-1) / 4.0)
    worst = 0.0
    for name in SUITE_NAMES:
        prof = base_profile(name, 3.0).with_lower_order([constant([1.0, -1.0])], [constant(0.5)])
        s, m, t = 0.3, 1.1, 2.4
        two = apply_kernel(apply_kernel(g, KernelSpec.from_profile(prof, s, m), grid), KernelSpec.from_profile(prof, m, t), grid)
        one = apply_kernel(g, KernelSpec.from_profile(prof, s, t), grid)
        worst = max(worst, float(np.max(np.abs(two - one))))
    return worst


def _time_change() -> bool:
    ok = True
    for name in SUITE_NAMES:
        prof = base_profile(name, 3.0)
        ts = np.linspace(0.0, 3.0, 61)
        a = alpha_many(prof, ts)
        ok &= bool(np.all(np.diff(a) >= -1e-12))
        # generalized inverse: alpha(beta(s)) = s, and beta(alpha(t)) >= t with a jump across plateaus
        for t in ts[1::10]:
            s = float(alpha_many(prof, [t])[0])
            b = beta(prof, s)
            ok &= b >= t - 1e-9 and abs(float(alpha_many(prof, [b])[0]) - s) <= 1e-9
    return ok


def _sqrt_roundtrip() -> float:
    worst = 0.0
    for name in SUITE_NAMES:
        prof = base_profile(name, 3.0)
        ts = np.linspace(0.0, 3.0, 31)
        sig = prof.integral_matrix(np.zeros_like(ts), ts)
        r = matrix_sqrt_psd(sig)
        worst = max(worst, float(np.max(np.abs(r @ r - sig))))
    return worst


def checks(n_paths: int = 10_000, M: int = 64, seed: int = 0, threads: int = 1):
    """Yield (name, passed, detail) for each invariant."""
    err = _kernel_semigroup()
    yield "kernel semigroup", err <= 1e-12, f"max abs diff {err:.2e}"
    yield "time change monotone, beta inverts alpha", _time_change(), ""
    err = _sqrt_roundtrip()
    yield "PSD square root round trip", err <= 1e-10, f"max abs error {err:.2e}"

    rows = ex.cross_validation(M=M, n_paths=n_paths, seed=seed, threads=threads)
    frac = float(np.mean([abs(r["z"]) <= 3.0 for r in rows]))
    yield "Monte Carlo vs spectral", frac >= 0.95, f"{frac:.1%} of {len(rows)} probes within 3 SE"

    reps = ex.contraction(M=M)
    yield "L_p contraction", all(r.passed for r in reps), f"{len(reps)} reports"

    reports, summary = ex.explicit_constants(M=M, threads=threads)
    yield "explicit-constant estimates", summary["failed"] == 0, f"{summary['passed']}/{summary['reports']} passed, max Hessian ratio {summary['max_hessian_ratio']:.3g}"

    c1, c2 = ex.sup_anchor()
    yield "sup constant anchor", abs(c1 - 2.0) <= 1e-10 and abs(c2 - 2.0) <= 1e-10, f"{c1!r}, {c2!r}"

    d = ex.improper_dichotomy()
    ok = d.inside.status == "divergent" and d.inside.vacuous and d.inside.passed and d.outside.status == "converged" and d.outside.passed
    yield "improper right-hand side dichotomy", ok, f"inside {d.inside.status}, outside {d.outside.status}"

    rows, spread = ex.rescaling(M=M)
    yield "time-rescaling invariance", spread < 0.02, f"spread {spread:.2e}"

    law = ex.splitting_law(n_paths=n_paths, seed=seed, threads=threads)
    zmax = max(float(np.max(np.abs(v["z"]))) for v in law.values())
    yield "splitting law", zmax <= 4.0, f"max |z| {zmax:.2f}"

    errs = ex.transform_equivalence(M=M)
    yield "transform equivalence", max(errs.values()) <= 1e-9, ", ".join(f"{k}: {v:.1e}" for k, v in errs.items())

    unit = aq_constant(Weight.unit(2.0), 2.0, (-1.0, 1.0), 8)
    bad = aq_constant(Weight.power_law(1.1, 2.0, validate=False), 2.0, (-1.0, 1.0), 8)
    drop = ex.refinement_monotone(count=100, seed=seed)
    yield "A_q weights", unit == 1.0 and math.isinf(bad) and drop <= 1e-12, f"[1] = {unit}, outside range -> {bad}, worst drop {drop:.1e}"


def run_selfcheck(threads: int = 1, seed: int = 0) -> int:
    start = time.perf_counter()
    failed = 0
    for name, ok, detail in checks(seed=seed, threads=threads):
        failed += not ok
        print(f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else ""), flush=True)
    print(f"selfcheck: {'ok' if not failed else f'{failed} failed'} in {time.perf_counter() - start:.1f}s")
    return 0 if not failed else 1
