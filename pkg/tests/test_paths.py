import math

import numpy as np
import pytest

from degenlab.errors import FloorTooLargeError, QueryOutsideGridError
from degenlab.field import SpatialGrid, midpoints, solve_exact
from degenlab.forcing import GaussianForcing, zero_forcing
from degenlab.paths import (
    BLOCK_SIZE,
    PathEnsemble,
    default_floor,
    mc_solution,
    mc_time_grid,
    normal_block,
    quadrature_nodes,
    simulate,
    split_simulate,
)
from degenlab.profiles import CoefficientProfile, constant
from degenlab.suite import SUITE_NAMES, base_profile


def iso(scale, d=2, horizon=3.0):
    return CoefficientProfile(d, [constant(scale * np.eye(d))], horizon=horizon)


def test_half_identity_gives_unit_covariance():
    n = 40_000
    ens = simulate(iso(0.5), [0.0, 1.0], n, seed=3)
    x = ens.at(1.0)
    cov = x.T @ x / n
    se = np.sqrt((np.outer(np.diag(cov), np.diag(cov)) + cov**2) / n)
    assert np.all(np.abs(cov - np.eye(2)) <= 4 * se)


def test_fully_degenerate_paths_stay_at_origin():
    ens = simulate(iso(0.0), np.linspace(0, 1, 5), 100, seed=1)
    assert np.all(ens.samples == 0.0)


@pytest.mark.parametrize("name", SUITE_NAMES)
def test_paths_start_at_origin_and_have_zero_mean(name):
    prof = base_profile(name)
    times = np.linspace(0.0, 3.0, 7)
    n = 20_000
    ens = simulate(prof, times, n, seed=11)
    assert np.all(ens.samples[:, 0] == 0.0)
    for k, t in enumerate(times[1:], start=1):
        bound = 4 * math.sqrt(np.trace(prof.integral_matrix(0.0, t)) / n)
        assert np.all(np.abs(ens.samples[:, k].mean(axis=0)) <= bound)


def test_increments_on_disjoint_intervals_uncorrelated():
    prof = base_profile("rotating")
    n = 40_000
    ens = simulate(prof, [0.0, 0.5, 1.5], n, seed=5)
    d1 = ens.samples[:, 1]
    d2 = ens.samples[:, 2] - ens.samples[:, 1]
    cross = d1.T @ d2 / n
    se = np.sqrt(np.outer(np.mean(d1**2, axis=0), np.mean(d2**2, axis=0)) / n)
    assert np.all(np.abs(cross) <= 4 * se)


def test_determinism_and_thread_invariance():
    prof = base_profile("anisotropic")
    times = np.linspace(0.0, 1.0, 4)
    n = 2 * BLOCK_SIZE + 17
    a = simulate(prof, times, n, seed=42)
    b = simulate(prof, times, n, seed=42, threads=3)
    c = simulate(prof, times, n, seed=43)
    np.testing.assert_array_equal(a.samples, b.samples)
    assert not np.array_equal(a.samples, c.samples)


def test_counter_streams_are_distinct():
    a = normal_block(1, 0, 0, 0, 8, 2)
    assert not np.array_equal(a, normal_block(1, 1, 0, 0, 8, 2))
    assert not np.array_equal(a, normal_block(1, 0, 1, 0, 8, 2))
    assert not np.array_equal(a, normal_block(1, 0, 0, 1, 8, 2))
    np.testing.assert_array_equal(a, normal_block(1, 0, 0, 0, 8, 2))


def test_bad_time_grid_rejected():
    with pytest.raises(ValueError):
        simulate(iso(1.0), [0.1, 0.5], 10, seed=0)
    with pytest.raises(ValueError):
        simulate(iso(1.0), [0.0, 0.5, 0.5], 10, seed=0)


def test_query_outside_grid():
    ens = simulate(iso(1.0), [0.0, 1.0], 4, seed=0)
    with pytest.raises(QueryOutsideGridError):
        ens.at(0.5)


def test_ensemble_round_trip(tmp_path):
    ens = simulate(base_profile("rotating"), [0.0, 0.2, 0.9], 33, seed=2**40 + 5)
    path = ens.write(tmp_path / "paths.bin")
    back = PathEnsemble.read(path)
    assert back.seed == ens.seed
    np.testing.assert_array_equal(back.times, ens.times)
    np.testing.assert_array_equal(back.samples, ens.samples)


# -- splitting ------------------------------------------------------------------


def test_zero_floor_puts_everything_in_remainder():
    sp = split_simulate(base_profile("rotating"), 0.0, [0.0, 0.5, 1.0], 50, seed=1)
    assert np.all(sp.x1.samples == 0.0)
    np.testing.assert_array_equal(sp.combined.samples, sp.x2.samples)


def test_full_floor_leaves_no_remainder():
    sp = split_simulate(iso(1.0), 1.0, [0.0, 0.5, 1.0], 50, seed=1)
    np.testing.assert_allclose(sp.x2.samples, 0.0, atol=1e-7)


def test_floor_above_delta_rejected():
    with pytest.raises(FloorTooLargeError):
        split_simulate(base_profile("rotating"), 1.5, [0.0, 1.0], 10, seed=0)


def test_default_floor_is_grid_minimum():
    times = np.linspace(0.0, 3.0, 7)
    assert default_floor(base_profile("window"), times) == 0.0
    assert default_floor(base_profile("rotating"), times) == pytest.approx(1.0, abs=1e-12)
    assert default_floor(base_profile("unbounded"), times) == pytest.approx(1 + 3.0**-0.5, rel=1e-12)


@pytest.mark.parametrize("name", ["identity", "anisotropic", "rotating", "unbounded"])
def test_split_parts_have_their_covariances(name):
    prof = base_profile(name)
    times = np.linspace(0.0, 1.0, 3)
    n = 30_000
    sp = split_simulate(prof, None, times, n, seed=8)
    floor = sp.delta_floor
    for part, target in (
        (sp.x1, 2 * floor * times[-1] * np.eye(2)),
        (sp.x2, prof.integral_matrix(0.0, 1.0) - 2 * floor * np.eye(2)),
    ):
        x = part.samples[:, -1]
        cov = x.T @ x / n
        se = np.sqrt((np.outer(np.diag(target), np.diag(target)) + target**2) / n)
        assert np.all(np.abs(cov - target) <= 4 * se + 1e-12)


def test_split_streams_independent():
    sp = split_simulate(base_profile("anisotropic"), 1.0, [0.0, 1.0], 40_000, seed=9)
    a, b = sp.x1.samples[:, 1], sp.x2.samples[:, 1]
    cross = a.T @ b / a.shape[0]
    se = np.sqrt(np.outer(np.mean(a**2, 0), np.mean(b**2, 0)) / a.shape[0])
    assert np.all(np.abs(cross) <= 4 * se)


# -- Monte Carlo representation ----------------------------------------------------


def test_mc_zero_forcing():
    prof = base_profile("identity", 1.0)
    ens = simulate(prof, mc_time_grid([1.0], 8), 100, seed=0)
    res = mc_solution(zero_forcing(2), prof, [(1.0, np.zeros(2))], ens, 8)
    assert res == [(0.0, 0.0)]


def test_mc_time_grid_contains_nodes():
    grid = mc_time_grid([1.0, 0.5], 4)
    for t in (0.0, 0.5, 1.0, *quadrature_nodes(1.0, 4), *quadrature_nodes(0.5, 4)):
        assert np.any(np.isclose(grid, t, atol=0.0))


def test_mc_matches_spectral_solution():
    T, M, n = 1.0, 16, 64
    prof = base_profile("unbounded", T).with_lower_order([constant([1.0, -1.0])], [constant(1.0)])
    g = SpatialGrid(2, n, 40.0)
    forcing = GaussianForcing(2, 16.0)
    u = solve_exact(forcing.sample(g, midpoints(T, M)), prof)
    idx = [g.index_of(x) for x in ([0.0, 0.0], [2.5, -2.5], [5.0, 0.0])]
    pts = [np.array([g.axis[i], g.axis[j]]) for i, j in idx]
    ens = simulate(prof, mc_time_grid([T], M), 20_000, seed=21)
    for (est, se), ix in zip(mc_solution(forcing, prof, [(T, x) for x in pts], ens, M), idx):
        assert abs(est - u.values[-1][ix]) <= 4 * se


def test_mc_field_forcing_matches_symbolic():
    T, M = 0.5, 8
    prof = base_profile("identity", T)
    g = SpatialGrid(2, 64, 20.0)
    forcing = GaussianForcing(2, 9.0)
    f = forcing.sample(g, midpoints(T, M))
    ens = simulate(prof, mc_time_grid([T], M), 2_000, seed=4)
    q = [(T, np.zeros(2))]
    (sym, _), = mc_solution(forcing, prof, q, ens, M)
    (fld, _), = mc_solution(f, prof, q, ens, M)
    # multilinear interpolation error of a well-resolved bump
    assert fld == pytest.approx(sym, rel=1e-2)
