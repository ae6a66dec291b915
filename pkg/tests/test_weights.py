import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

from degenlab.errors import AdmissibilityError
from degenlab.profiles import CoefficientProfile, constant
from degenlab.suite import base_profile
from degenlab.weights import Weight, aq_constant, interval_aq_values, weight_at_alpha, with_estimate


def brute_aq(w, q, grid):
    """Sup of the A_q product over every interval between grid points, by quad."""
    best = 0.0
    for i, a in enumerate(grid):
        for b in grid[i + 1 :]:
            pts = [0.0] if a < 0.0 < b else None
            m1 = quad(lambda t: float(w(t)), a, b, points=pts, epsrel=1e-10)[0] / (b - a)
            m2 = quad(lambda t: float(w(t)) ** (-1 / (q - 1)), a, b, points=pts, epsrel=1e-10)[0] / (b - a)
            best = max(best, m1 * m2 ** (q - 1))
    return best


@pytest.mark.parametrize("q", [1.1, 2.0, 3.5, 10.0])
def test_unit_weight_constant_is_exactly_one(q):
    assert aq_constant(Weight.unit(q), q, (-1, 1), 10) == 1.0


@pytest.mark.parametrize("q", [1.5, 2.0, 3.0])
def test_power_outside_range_flags_divergence(q):
    w = Weight.power_law(q - 1 + 0.1, q, validate=False)
    assert not w.admissible
    assert aq_constant(w, q) == math.inf
    assert aq_constant(Weight.power_law(-1.05, q, validate=False), q) == math.inf


@pytest.mark.parametrize("beta", [-1.0, -1.5, 1.0, 1.2])
def test_power_constructor_rejects_inadmissible(beta):
    with pytest.raises(AdmissibilityError):
        Weight.power_law(beta, 2.0)


def test_sqrt_weight_is_stable_and_below_brute_force():
    w = Weight.power_law(0.5, 2.0)
    a8, a9 = aq_constant(w, 2.0, (-1, 1), 8), aq_constant(w, 2.0, (-1, 1), 9)
    assert math.isfinite(a8)
    assert abs(a9 - a8) / a8 < 0.01
    # intervals [0, b] all give (2/3) * 2 = 4/3 by scaling
    assert a9 == pytest.approx(4.0 / 3.0, rel=1e-12)
    # dyadic intervals are a subset of all intervals: a certified lower bound
    brute = brute_aq(w, 2.0, np.linspace(-1, 1, 21))
    assert a9 <= brute + 1e-9
    assert brute < 1.6


@pytest.mark.parametrize("beta,q", [(0.5, 2.0), (-0.5, 2.0), (1.5, 3.0), (-0.3, 1.5)])
def test_interval_values_match_quadrature(beta, q):
    w = Weight.power_law(beta, q)
    for a, b in [(-1.0, 1.0), (0.0, 0.3), (-0.7, 0.2), (0.1, 0.9), (-0.9, -0.4)]:
        got = float(interval_aq_values(w, q, a, b))
        pts = [0.0] if a < 0.0 < b else None
        m1 = quad(lambda t: abs(t) ** beta, a, b, points=pts, epsrel=1e-11)[0] / (b - a)
        m2 = quad(lambda t: abs(t) ** (-beta / (q - 1)), a, b, points=pts, epsrel=1e-11)[0] / (b - a)
        assert got == pytest.approx(m1 * m2 ** (q - 1), rel=1e-8)


@pytest.mark.parametrize("r", [1.0, -1.0, 0.5, -2.0])
def test_tabulated_integral_matches_quadrature(r):
    w = Weight.tabulated([-1.0, -0.2, 0.5, 1.5], [2.0, 0.5, 1.0, 3.0])
    for a, b in [(-2.0, 2.0), (-0.5, 0.7), (0.6, 0.9), (1.6, 3.0)]:
        ref = quad(lambda t: float(w(t)) ** r, a, b, points=[-1.0, -0.2, 0.5, 1.5], limit=200)[0]
        assert float(w.integral_power(a, b, r)) == pytest.approx(ref, rel=1e-9)


def test_tabulated_is_piecewise_constant_with_extension():
    w = Weight.tabulated([0.0, 1.0], [2.0, 3.0])
    np.testing.assert_array_equal(w([-5.0, 0.0, 0.5, 1.0, 7.0]), [2.0, 2.0, 2.0, 3.0, 3.0])


def test_tabulated_rejects_bad_samples():
    with pytest.raises(ValueError):
        Weight.tabulated([0.0, 1.0], [1.0, 0.0])
    with pytest.raises(ValueError):
        Weight.tabulated([1.0, 0.0], [1.0, 1.0])


def test_csv_weight(tmp_path):
    path = tmp_path / "w.csv"
    path.write_text("t,w\n-1,2\n0,1\n1,4\n")
    w = Weight.from_csv(path, q=3.0)
    assert w.form == "tabulated" and w.q == 3.0
    np.testing.assert_array_equal(w.knots, [-1.0, 0.0, 1.0])
    assert aq_constant(w, 3.0) >= 1.0


@pytest.mark.parametrize("lam", [0.5, 2.0])
@pytest.mark.parametrize("beta,q", [(0.5, 2.0), (-0.5, 2.0), (1.2, 3.0)])
def test_dilation_invariance(lam, beta, q):
    w = Weight.power_law(beta, q)
    a, b = aq_constant(w, q, (-1, 1), 10), aq_constant(w.dilated(lam), q, (-1, 1), 10)
    assert abs(a - b) / a < 0.01


def test_dilated_evaluation():
    w = Weight.power_law(0.5, 2.0)
    assert float(w.dilated(4.0)(1.0)) == pytest.approx(2.0)
    t = Weight.tabulated([0.0, 1.0], [1.0, 5.0])
    assert float(t.dilated(2.0)(0.6)) == 5.0


@given(
    beta=st.floats(-0.95, 0.95),
    q=st.floats(1.2, 4.0),
    lo=st.floats(-2.0, 0.5),
    width=st.floats(0.1, 3.0),
)
def test_refinement_monotone_and_at_least_one(beta, q, lo, width):
    w = Weight.power_law(beta * min(1.0, q - 1.0), q)
    prev = 0.0
    for level in range(7):
        cur = aq_constant(w, q, (lo, lo + width), level)
        assert cur >= prev - 1e-12
        assert cur >= 1.0 - 1e-12
        prev = cur


def test_with_estimate_fills_field():
    w = with_estimate(Weight.power_law(0.5, 2.0), levels=6)
    assert w.aq_constant_estimate == pytest.approx(4.0 / 3.0)


def test_aq_constant_rejects_bad_arguments():
    w = Weight.unit()
    with pytest.raises(ValueError):
        aq_constant(w, 1.0)
    with pytest.raises(ValueError):
        aq_constant(w, 2.0, (1.0, 1.0))
    with pytest.raises(ValueError):
        aq_constant(w, 2.0, levels=-1)


def test_weight_at_alpha_examples():
    unit_delta = CoefficientProfile(1, [constant(np.eye(1))], horizon=3.0)
    assert weight_at_alpha(Weight.unit(), unit_delta, 1.3) == 1.0
    assert weight_at_alpha(Weight.power_law(1.0, 2.5), unit_delta, 0.5) == pytest.approx(0.5)
    step = CoefficientProfile(1, [constant(np.eye(1), (1.0, math.inf))], horizon=3.0)
    assert weight_at_alpha(Weight.power_law(0.5, 2.0), step, 2.0) == pytest.approx(1.0)


def test_weight_at_alpha_epsilon_shift():
    prof = base_profile("window")
    w = Weight.power_law(1.0, 3.0)
    # alpha(1.5) = 1 on the window; the shift adds eps * t
    assert weight_at_alpha(w, prof, 1.5, 0.2) == pytest.approx(1.0 + 0.3)
