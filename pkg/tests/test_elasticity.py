import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from donutrd.elasticity import (
    PedResult,
    baselines,
    bootstrap_ped,
    compute_ped,
    ped_point,
    replicate_ped,
)
from donutrd.errors import (
    DegenerateBaselineError,
    EmptySideError,
    UndefinedElasticityError,
    UnstableBootstrapError,
)
from donutrd.estimators import AnalysisSpecs
from donutrd.simulate import CohortParams, OutcomeModel, simulate_cohort

from conftest import make_cohort

SPECS = AnalysisSpecs.default()


def test_compute_ped_examples():
    assert compute_ped(-0.1, 0.8, 100, 50) == pytest.approx(-0.0625)
    assert compute_ped(0.0, 0.8, 100, 50) == 0.0


def test_compute_ped_reproduces_headline_ratio():
    q_pre = 0.9
    p_pre = 73.7 * q_pre
    assert compute_ped(-0.063, q_pre, 232, p_pre) == pytest.approx(-0.020, abs=5e-4)


def test_compute_ped_errors():
    with pytest.raises(UndefinedElasticityError):
        compute_ped(-0.1, 0.9, 0.0, 66)
    with pytest.raises(DegenerateBaselineError):
        compute_ped(-0.1, 0.0, 10.0, 66)
    with pytest.raises(DegenerateBaselineError):
        compute_ped(-0.1, 0.9, 10.0, -1)


@given(st.floats(-1, 1), st.floats(0.01, 1), st.floats(1, 500), st.floats(1, 500))
def test_ped_sign_follows_delta_q(dq, q, dp, p):
    ped = compute_ped(dq, q, dp, p)
    assert ped == pytest.approx((dq / q) / (dp / p), rel=1e-12)
    assert np.sign(ped) == np.sign(dq)


def _baseline_cohort(adherence):
    ages = np.repeat(np.arange(55, 76), 3)
    return make_cohort(ages, np.full(ages.size, 66.0), adherence=adherence(ages - 65.0))


@pytest.mark.parametrize("mode", ["boundary", "window"])
def test_constant_baselines(mode):
    cohort = _baseline_cohort(lambda x: np.full(x.size, 0.9))
    assert baselines(cohort, SPECS, mode) == pytest.approx((0.9, 66.0))


def test_linear_adherence_baselines():
    cohort = _baseline_cohort(lambda x: 0.9 - 0.01 * x)
    q_b, _ = baselines(cohort, SPECS, "boundary")
    q_w, _ = baselines(cohort, SPECS, "window", window=5)
    assert q_b == pytest.approx(0.9, abs=1e-12)
    assert q_w == pytest.approx(0.93, abs=1e-12)


def test_baseline_errors():
    cohort = make_cohort(np.array([66, 67, 68]), np.ones(3))
    with pytest.raises(EmptySideError):
        baselines(cohort, SPECS, "window")
    zero = _baseline_cohort(lambda x: np.zeros(x.size))
    with pytest.raises(DegenerateBaselineError):
        baselines(zero, SPECS, "boundary")
    with pytest.raises(ValueError):
        baselines(zero, SPECS, "median")


@pytest.fixture(scope="module")
def cohort():
    return simulate_cohort(CohortParams(seed=21))


def test_same_seed_gives_identical_result(cohort):
    a = bootstrap_ped(cohort, SPECS, 400, seed=9)
    b = bootstrap_ped(cohort, SPECS, 400, seed=9)
    assert a == b
    np.testing.assert_array_equal(a.draws, b.draws)
    assert repr(a) == repr(b)


def test_seed_changes_only_the_ci(cohort):
    a = bootstrap_ped(cohort, SPECS, 400, seed=1)
    b = bootstrap_ped(cohort, SPECS, 400, seed=2)
    assert a.ped == b.ped
    assert a.ci != b.ci


@pytest.mark.parametrize("mode, itt", [("boundary", False), ("window", False), ("boundary", True)])
def test_fast_path_matches_row_level_pipeline(cohort, mode, itt):
    res = bootstrap_ped(cohort, SPECS, 200, seed=5, baseline_mode=mode, itt=itt)
    for r in (0, 1, 17, 199):
        slow = replicate_ped(cohort, SPECS, 5, r, mode, itt=itt)
        assert res.draws[r] == pytest.approx(slow, rel=1e-9)


def test_fast_path_with_donut_and_uniform_kernel(cohort):
    specs = AnalysisSpecs.default(donut_radius=1, bandwidth=8, kernel="uniform")
    res = bootstrap_ped(cohort, specs, 200, seed=3)
    for r in (0, 50):
        assert res.draws[r] == pytest.approx(replicate_ped(cohort, specs, 3, r), rel=1e-9)
    assert res.ped == pytest.approx(ped_point(cohort, specs)["ped"], rel=1e-12)


def test_ci_contains_median_replicate(cohort):
    res = bootstrap_ped(cohort, SPECS, 999, seed=0)
    med = np.nanmedian(res.draws)
    assert res.ci[0] <= med <= res.ci[1]
    assert isinstance(res, PedResult)


def test_itt_and_fuzzy_elasticities_coincide(cohort):
    fuzzy = ped_point(cohort, SPECS)
    itt = ped_point(cohort, SPECS, itt=True)
    assert itt["ped"] == pytest.approx(fuzzy["ped"], rel=1e-12)


def test_scale_invariance_in_oop(cohort):
    scaled = cohort.with_columns(oop=cohort.column("oop") * 7.5)
    a = bootstrap_ped(cohort, SPECS, 200, seed=4)
    b = bootstrap_ped(scaled, SPECS, 200, seed=4)
    assert b.ped == pytest.approx(a.ped, rel=1e-10)
    np.testing.assert_allclose(b.draws, a.draws, rtol=1e-9)


def test_noiseless_cohort_has_zero_width_ci():
    params = CohortParams(
        seed=2, p_below=0.0, p_above=1.0,
        oop=OutcomeModel(below=(66.0, 0.5), complier_jump=232.0),
        adherence=OutcomeModel(below=(0.9, -0.002), complier_jump=-0.063),
    )
    cohort = simulate_cohort(params)
    res = bootstrap_ped(cohort, SPECS, 200, seed=1)
    assert res.ci[1] - res.ci[0] == pytest.approx(0.0, abs=1e-12)
    assert res.ped == pytest.approx(res.ci[0], abs=1e-12)
    assert res.ped == pytest.approx((-0.063 / 0.9) / (232 / 66.0), rel=1e-9)


def test_failure_ceiling():
    # First stage of about 0.33 against a floor of 0.30: many replicates fall below.
    cohort = simulate_cohort(CohortParams(seed=1, p_below=0.30, p_above=0.42))
    with pytest.raises(UnstableBootstrapError):
        bootstrap_ped(cohort, SPECS, 200, seed=0, floor=0.30)
    res = bootstrap_ped(cohort, SPECS, 200, seed=0, floor=0.30, max_failure_rate=1.0)
    assert res.failed_replicates > 40
    assert np.isnan(res.draws).sum() == res.failed_replicates


def test_argument_checks(cohort):
    with pytest.raises(ValueError):
        bootstrap_ped(cohort, SPECS, 100)
    with pytest.raises(ValueError):
        bootstrap_ped(cohort, SPECS, 200, baseline_mode="median")


def test_zero_price_change_is_undefined():
    ages = np.repeat(np.arange(55, 76), 3)
    cohort = make_cohort(ages, np.full(ages.size, 66.0), adherence=np.where(ages > 65, 0.8, 0.9))
    with pytest.raises(UndefinedElasticityError):
        ped_point(cohort, SPECS)
