import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate
from scipy.stats import foldnorm, norm

from donutrd.cohort import RdSpec
from donutrd.errors import DegenerateInferenceError, IdentifiabilityError
from donutrd.estimators import rd_from_arrays
from donutrd.honest import (
    HonestSettings,
    SmoothnessBound,
    estimate_m,
    honest_cv,
    honest_interval,
    interval_from_bias,
    smoothness_from_arrays,
    worst_case_bias,
)

from conftest import make_cohort


# ---------------------------------------------------------------- critical value

@pytest.mark.parametrize("t, expected", [(0.0, 1.959964), (1.0, 2.646146), (10.0, 11.644854)])
def test_cv_values(t, expected):
    assert honest_cv(t, 0.05) == pytest.approx(expected, abs=1e-6)


@given(st.floats(0, 30), st.sampled_from([0.01, 0.05, 0.1, 0.32]))
def test_cv_matches_folded_normal_quantile(t, alpha):
    # |Z + t| is folded normal with shape t; its 1 - alpha quantile is the critical value.
    assert honest_cv(t, alpha) == pytest.approx(foldnorm(t).ppf(1 - alpha), abs=1e-7)


def test_cv_large_t_approaches_one_sided_quantile():
    assert honest_cv(10.0) == pytest.approx(10 + norm.ppf(0.95), abs=1e-3)
    assert honest_cv(40.0) == pytest.approx(40 + norm.ppf(0.95), abs=1e-9)


def test_cv_strictly_increasing_and_bounded_below():
    grid = np.arange(0, 10.25, 0.25)
    cvs = np.array([honest_cv(t) for t in grid])
    assert np.all(np.diff(cvs) > 0)
    assert np.all(cvs >= norm.ppf(0.975) - 1e-12)
    # Continuity: a tiny step in t moves the value by a tiny amount.
    assert abs(honest_cv(1e-9) - honest_cv(0.0)) < 1e-6


def test_cv_rejects_bad_arguments():
    with pytest.raises(ValueError):
        honest_cv(-1.0)
    with pytest.raises(ValueError):
        honest_cv(1.0, alpha=1.5)


# ---------------------------------------------------------------- worst-case bias

def test_taylor_hand_example():
    assert worst_case_bias([(1, 0.5), (2, 0.5)], None, 2.0, "taylor") == pytest.approx(2.5)
    # Non-negative weights: the exact class bound coincides with the Taylor form.
    assert worst_case_bias([(1, 0.5), (2, 0.5)], None, 2.0, "holder") == pytest.approx(2.5)


def test_zero_m_and_linearity():
    w = [(-3, 1.0), (-2, -3.0), (-1, 3.0)]
    assert worst_case_bias(w, w, 0.0) == 0.0
    b = worst_case_bias(w, None, 1.0)
    assert worst_case_bias(w, None, 2.0) == pytest.approx(2 * b)
    assert worst_case_bias(w, None, SmoothnessBound(2.0)) == pytest.approx(2 * b)


def _g(pairs, t):
    d = np.abs(pairs[:, 0])
    return np.sum(pairs[:, 1] * np.clip(d - t, 0, None))


def _weights(order, kernel, h=10.0, side="below"):
    ages = np.arange(55, 65) if side == "below" else np.arange(66, 76)
    ages = np.repeat(ages, 3)
    fit = rd_from_arrays(np.concatenate([ages, 130 - ages]), np.zeros(2 * ages.size),
                         RdSpec(order=order, kernel=kernel, bandwidth=h))
    return fit


@pytest.mark.parametrize("order", [1, 2, 3])
@pytest.mark.parametrize("kernel", ["triangular", "uniform"])
def test_holder_bias_matches_quadrature(order, kernel):
    fit = _weights(order, kernel)
    total = 0.0
    for side in (fit.below, fit.above):
        pairs = side.centered_weights
        top = np.abs(pairs[:, 0]).max()
        knots = np.unique(np.abs(pairs[:, 0]))
        total += integrate.quad(lambda t: abs(_g(pairs, t)), 0, top, points=knots, limit=200,
                                epsabs=1e-13)[0]
    assert worst_case_bias(fit.below, fit.above, 1.0) == pytest.approx(total, rel=1e-8)


@pytest.mark.parametrize("order", [1, 2])
def test_holder_bias_is_attained(order):
    # f'' = m * sign(G) with f(c) = f'(c) = 0 reaches the bound.
    fit = _weights(order, "triangular")
    m = 3.0
    pairs = fit.below.centered_weights
    d = np.abs(pairs[:, 0])
    grid = np.linspace(0, d.max(), 200001)
    sign = np.sign([_g(pairs, t) for t in grid])
    values = []
    for di in d:
        mask = grid <= di
        values.append(integrate.trapezoid(m * (di - grid[mask]) * sign[mask], grid[mask]))
    attained = abs(np.sum(pairs[:, 1] * np.array(values)))
    bound = worst_case_bias(fit.below, None, m)
    assert attained == pytest.approx(bound, rel=1e-4)


@pytest.mark.parametrize("order", [1, 2, 3])
def test_taylor_dominates_holder(order):
    fit = _weights(order, "triangular")
    assert worst_case_bias(fit.below, fit.above, 1.0, "taylor") >= \
        worst_case_bias(fit.below, fit.above, 1.0, "holder") - 1e-12


@given(st.lists(st.tuples(st.integers(1, 10), st.floats(-2, 2)), min_size=1, max_size=12),
       st.floats(0, 10))
def test_bias_symmetric_under_side_swap(pairs, m):
    below = [(-d, w) for d, w in pairs]
    above = [(d, w) for d, w in pairs]
    for fc in ("holder", "taylor"):
        assert worst_case_bias(below, None, m, fc) == pytest.approx(worst_case_bias(None, above, m, fc))


@pytest.mark.parametrize("order", [1, 2])
def test_bias_non_decreasing_in_donut_radius(order):
    ages = np.repeat(np.arange(55, 76), 4)
    y = np.zeros(ages.size)
    biases = [worst_case_bias(f.below, f.above, 1.0) for f in
              (rd_from_arrays(ages, y, RdSpec(order=order, donut_radius=r)) for r in range(4))]
    assert np.all(np.diff(biases) >= -1e-12)


# ---------------------------------------------------------------- intervals

def _noisy_fit(seed=0, m=None):
    rng = np.random.default_rng(seed)
    ages = rng.integers(55, 76, 400)
    y = 0.3 * (ages - 65) + rng.normal(size=400)
    return ages, y, rd_from_arrays(ages, y, RdSpec(), smoothness=m)


def test_m_zero_reproduces_conventional():
    _, _, fit = _noisy_fit(m=SmoothnessBound(0.0))
    lo, hi = fit.conventional_ci
    assert fit.honest.lower == pytest.approx(lo, abs=1e-9)
    assert fit.honest.upper == pytest.approx(hi, abs=1e-9)
    assert fit.honest.worst_case_bias == 0.0


def test_interval_shape_and_monotonicity():
    _, _, fit = _noisy_fit()
    widths = []
    for m in (0.01, 0.02, 0.04, 0.08):
        ci = honest_interval(fit, m)
        assert ci.upper - ci.lower == pytest.approx(2 * ci.critical_value * fit.se)
        assert ci.lower < fit.jump < ci.upper
        widths.append(ci.upper - ci.lower)
    assert np.all(np.diff(widths) > 0)
    narrow = honest_interval(fit, 0.02, alpha=0.10)
    wide = honest_interval(fit, 0.02, alpha=0.01)
    assert wide.upper - wide.lower > narrow.upper - narrow.lower


def test_width_grows_with_donut_when_bias_dominates():
    rng = np.random.default_rng(5)
    ages = np.repeat(np.arange(55, 76), 30)
    y = rng.normal(size=ages.size)
    widths = []
    for r in range(3):
        fit = rd_from_arrays(ages, y, RdSpec(donut_radius=r), smoothness=SmoothnessBound(5.0))
        widths.append(fit.honest.upper - fit.honest.lower)
    assert np.all(np.diff(widths) > 0)


def test_zero_se_with_bias_is_degenerate():
    with pytest.raises(DegenerateInferenceError):
        interval_from_bias(1.0, 0.0, 0.5)
    ci = interval_from_bias(1.0, 0.0, 0.0)
    assert (ci.lower, ci.upper) == (1.0, 1.0)


# ---------------------------------------------------------------- smoothness bound

def test_m_from_exact_quadratic():
    ages = np.repeat(np.arange(50, 81), 2)
    cohort = make_cohort(ages, (ages - 65.0) ** 2)
    bound = estimate_m(cohort, "oop", scale_factor=4)
    assert bound.m == pytest.approx(8.0, rel=1e-9)
    assert estimate_m(cohort, "oop", 4, interpretation="coefficient").m == pytest.approx(4.0)


def test_m_zero_for_linear_outcome_and_proportional_in_scale():
    ages = np.repeat(np.arange(50, 81), 2)
    linear = make_cohort(ages, 3 + 2.0 * (ages - 65))
    assert estimate_m(linear, "oop", 6).m == pytest.approx(0.0, abs=1e-9)
    rng = np.random.default_rng(0)
    noisy = make_cohort(ages, rng.uniform(0, 100, ages.size))
    ms = [estimate_m(noisy, "oop", s).m for s in (2, 4, 6)]
    assert ms[1] == pytest.approx(2 * ms[0]) and ms[2] == pytest.approx(3 * ms[0])


def test_m_ignores_threshold_rows_and_needs_three_ages():
    ages = np.repeat(np.arange(50, 81), 2)
    y = (ages - 65.0) ** 2
    y[ages == 65] = 1e6
    assert smoothness_from_arrays(ages, y, 65).m == pytest.approx(8.0)
    with pytest.raises(IdentifiabilityError):
        smoothness_from_arrays(np.array([63, 64, 66, 67, 68]), np.ones(5), 65)


def test_settings_validation():
    with pytest.raises(ValueError):
        HonestSettings(alpha=0)
    with pytest.raises(ValueError):
        HonestSettings(function_class="lipschitz")


def test_coverage_with_curvature_at_the_bound():
    # f'' = m on both sides with the known m supplied: coverage must hold.
    m, reps = 0.2, 1000
    rng = np.random.default_rng(2024)
    ages = np.repeat(np.arange(55, 76), 20)
    x = ages - 65.0
    f = 0.5 * m * x ** 2 * np.where(x < 0, 1.0, -1.0) + 1.0 * (x > 0)
    bound = SmoothnessBound(m)
    covered = 0
    for _ in range(reps):
        y = f + rng.normal(size=ages.size)
        fit = rd_from_arrays(ages, y, RdSpec(order=1), smoothness=bound)
        covered += fit.honest.lower <= 1.0 <= fit.honest.upper
    mc_error = 1.96 * np.sqrt(0.95 * 0.05 / reps)
    assert covered / reps >= 0.95 - mc_error
