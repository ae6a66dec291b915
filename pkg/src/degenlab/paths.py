"""Exact Gaussian simulation of X_t = sqrt(2) int_0^t sqrt(A(s)) dB_s and Monte Carlo
evaluation of the solution representation.

Because A depends on time only, the increment of X over [t_k, t_{k+1}] is
exactly N(0, 2 int A), so there is no time-stepping bias. Normals come from a
counter-based Philox stream keyed by (seed, stream, path block, step), so the
ensemble is identical regardless of how blocks are distributed over threads.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import FloorTooLargeError, NotPSDError, QueryOutsideGridError
from .profiles import CoefficientProfile, constant, delta_values, matrix_sqrt_psd

BLOCK_SIZE = 4096
ENSEMBLE_HEADER = struct.Struct("<qqqQ")  # d, M+1, n_paths, seed

STREAM_DIRECT = 0
STREAM_ISOTROPIC = 1
STREAM_REMAINDER = 2

TIME_ATOL = 1e-12


def normal_block(seed: int, stream: int, block: int, step: int, size: int, d: int) -> np.ndarray:
    """Standard normals for one (stream, block, step) cell of the counter space."""
    ss = np.random.SeedSequence(seed, spawn_key=(stream, block, step))
    return np.random.Generator(np.random.Philox(ss)).standard_normal((size, d))


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    times: np.ndarray
    samples: np.ndarray  # (n_paths, M+1, d)
    seed: int
    profile_id: str = ""

    @property
    def n_paths(self) -> int:
        return self.samples.shape[0]

    @property
    def dimension(self) -> int:
        return self.samples.shape[2]

    def time_index(self, t: float) -> int:
        k = np.flatnonzero(np.abs(self.times - t) <= TIME_ATOL * max(1.0, abs(t)))
        if k.size == 0:
            raise QueryOutsideGridError(f"time {t} is not on the ensemble grid")
        return int(k[0])

    def at(self, t: float) -> np.ndarray:
        return self.samples[:, self.time_index(t)]

    def write(self, path) -> Path:
        """Flat little-endian layout: header (d, M+1, n_paths, seed) then float64 samples."""
        path = Path(path)
        n, m, d = self.samples.shape
        with open(path, "wb") as fh:
            fh.write(ENSEMBLE_HEADER.pack(d, m, n, self.seed & 0xFFFFFFFFFFFFFFFF))
            fh.write(np.ascontiguousarray(self.times, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(self.samples, dtype="<f8").tobytes())
        return path

    @classmethod
    def read(cls, path, profile_id: str = "") -> "PathEnsemble":
        raw = Path(path).read_bytes()
        d, m, n, seed = ENSEMBLE_HEADER.unpack_from(raw)
        off = ENSEMBLE_HEADER.size
        times = np.frombuffer(raw, dtype="<f8", count=m, offset=off)
        samples = np.frombuffer(raw, dtype="<f8", offset=off + 8 * m).reshape(n, m, d)
        return cls(times.copy(), samples.copy(), int(seed), profile_id)


@dataclass(frozen=True, eq=False)
class SplitEnsemble:
    x1: PathEnsemble
    x2: PathEnsemble
    delta_floor: float

    @property
    def combined(self) -> PathEnsemble:
        return PathEnsemble(self.x1.times, self.x1.samples + self.x2.samples, self.x1.seed, self.x2.profile_id)


def _check_times(times) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size < 1 or times[0] != 0.0 or np.any(np.diff(times) <= 0):
        raise ValueError("times must be strictly increasing and start at 0")
    return times


def _simulate_roots(roots: np.ndarray, times, n_paths, seed, stream, profile_id, threads) -> PathEnsemble:
    M, d = roots.shape[0], roots.shape[1]
    samples = np.zeros((n_paths, M + 1, d))
    nblocks = -(-n_paths // BLOCK_SIZE)

    def run(b):
        lo, hi = b * BLOCK_SIZE, min(n_paths, (b + 1) * BLOCK_SIZE)
        pos = np.zeros((hi - lo, d))
        for k in range(M):
            pos = pos + normal_block(seed, stream, b, k, hi - lo, d) @ roots[k].T
            samples[lo:hi, k + 1] = pos

    if threads and threads > 1 and nblocks > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run, range(nblocks)))
    else:
        for b in range(nblocks):
            run(b)
    return PathEnsemble(times, samples, int(seed), profile_id)


def simulate(profile: CoefficientProfile, times, n_paths: int, seed: int, stream: int = STREAM_DIRECT, threads: int = 1) -> PathEnsemble:
    """Paths of X at ``times`` with exact increments S_k Z, S_k = sqrt(Sigma(t_k, t_{k+1}))."""
    times = _check_times(times)
    if n_paths < 1:
        raise ValueError("n_paths must be positive")
    sig = profile.integral_matrix(times[:-1], times[1:])
    roots = matrix_sqrt_psd(sig)
    return _simulate_roots(roots, times, n_paths, seed, stream, profile.name, threads)


def default_floor(profile: CoefficientProfile, times, refine: int = 8) -> float:
    """Minimum of delta over the grid refined ``refine`` times per interval."""
    times = np.asarray(times, dtype=float)
    if times.size < 2:
        return 0.0
    frac = np.linspace(0.0, 1.0, refine + 1)
    dense = (times[:-1, None] + np.diff(times)[:, None] * frac[None, :]).ravel()
    dense = dense[dense > 0] if profile.singular_at_zero else dense
    return float(np.min(delta_values(profile, dense)))


def split_simulate(profile: CoefficientProfile, delta_floor: float | None, times, n_paths: int, seed: int, threads: int = 1) -> SplitEnsemble:
    """X = X1 + X2 with X1 = sqrt(2 floor) W and X2 driven by A - floor I, independently."""
    times = _check_times(times)
    if delta_floor is None:
        delta_floor = default_floor(profile, times)
    if delta_floor < 0:
        raise ValueError("delta_floor must be nonnegative")
    d = profile.dimension
    dt = np.diff(times)
    sig1 = 2.0 * delta_floor * dt[:, None, None] * np.eye(d)
    sig2 = profile.integral_matrix(times[:-1], times[1:]) - sig1
    frac = np.linspace(0.0, 1.0, 9)
    dense = (times[:-1, None] + dt[:, None] * frac[None, :]).ravel()
    dense = dense[dense > 0] if profile.singular_at_zero else dense
    if np.any(delta_values(profile, dense) < delta_floor - 1e-12):
        raise FloorTooLargeError(f"A(t) - {delta_floor:g} I is not PSD on the sampled grid")
    try:
        roots2 = matrix_sqrt_psd(sig2)
    except NotPSDError as exc:
        raise FloorTooLargeError(str(exc)) from exc
    x1 = _simulate_roots(np.sqrt(2.0 * delta_floor * dt)[:, None, None] * np.eye(d), times, n_paths, seed, STREAM_ISOTROPIC, f"{profile.name}/isotropic", threads)
    x2 = _simulate_roots(roots2, times, n_paths, seed, STREAM_REMAINDER, f"{profile.name}/remainder", threads)
    return SplitEnsemble(x1, x2, float(delta_floor))


# -- Monte Carlo evaluation of the representation --------------------------------


def quadrature_nodes(t: float, n: int) -> np.ndarray:
    return (np.arange(n) + 0.5) * (t / n)


def mc_time_grid(query_times: Sequence[float], n_time_quadrature: int) -> np.ndarray:
    """Sorted ensemble grid holding 0, the query times and their midpoint nodes."""
    pts = {0.0}
    for t in query_times:
        pts.add(float(t))
        pts.update(float(s) for s in quadrature_nodes(t, n_time_quadrature))
    return np.array(sorted(pts))


def _forcing_evaluator(f) -> Callable[[float, np.ndarray], np.ndarray]:
    from .field import SpaceTimeField

    if isinstance(f, SpaceTimeField):

        def evaluate(s, x):
            k = np.flatnonzero(np.abs(f.times - s) <= TIME_ATOL * max(1.0, s))
            if k.size == 0:
                raise QueryOutsideGridError(f"forcing field has no slice at s={s}")
            return f.interpolate(int(k[0]), x)

        return evaluate
    return lambda s, x: f(s, x)


def mc_solution(f, profile: CoefficientProfile, query_points, ensemble: PathEnsemble, n_time_quadrature: int = 64):
    """Estimate u(t, x) at each (t, x) with its Monte Carlo standard error.

    Per path the midpoint sum over s of e^{C(s,t)} f(s, x + B(s,t) + X_t - X_s)
    is formed; the estimate is the path mean and the error its standard
    deviation over sqrt(n_paths). ``f`` is a SpaceTimeField (interpolated
    multilinearly) or any callable f(s, x).
    """
    evaluate = _forcing_evaluator(f)
    batched = getattr(f, "evaluate_shifted", None)
    queries = [(float(t), np.asarray(x, dtype=float)) for t, x in query_points]
    n = ensemble.n_paths
    results = [None] * len(queries)
    by_time: dict[float, list[int]] = {}
    for i, (t, _) in enumerate(queries):
        by_time.setdefault(t, []).append(i)
    for t, idx in by_time.items():
        it = ensemble.time_index(t)
        nodes = quadrature_nodes(t, n_time_quadrature)
        w = t / n_time_quadrature
        acc = np.zeros((len(idx), n))
        if t > 0:
            xt = ensemble.samples[:, it]
            for s in nodes:
                disp = xt - ensemble.samples[:, ensemble.time_index(s)] + profile.integral_vector(s, t)
                growth = float(np.exp(profile.integral_scalar(s, t)))
                if batched is not None:
                    acc += w * growth * batched(s, np.stack([queries[i][1] for i in idx]), disp)
                    continue
                for j, i in enumerate(idx):
                    acc[j] += w * growth * evaluate(s, queries[i][1] + disp)
        for j, i in enumerate(idx):
            est = float(acc[j].mean())
            se = float(acc[j].std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
            results[i] = (est, se)
    return results
