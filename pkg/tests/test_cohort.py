import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st

from donutrd.cohort import (
    Cohort,
    Observation,
    RdSpec,
    apply_donut,
    compute_pdc,
    load_cohort,
    standardize_oop,
    write_cohort,
)
from donutrd.errors import (
    DataError,
    EmptyCohortError,
    EmptySideError,
    SchemaError,
    UnsupportedFillError,
)
from donutrd.simulate import CohortParams, simulate_cohort

from conftest import make_cohort

HEADER = "id,age,treated,oop,adherence\n"


def write(tmp_path, body, header=HEADER):
    path = tmp_path / "cohort.csv"
    path.write_text(header + body)
    return path


def test_row_maps_to_observation(tmp_path):
    path = write(tmp_path, "p1,64,0,120.0,0.95\np2,66,1,80.0,0.9\n")
    obs = load_cohort(path).observations[0]
    assert obs == Observation(id="p1", age=64, treated=False, oop=120.0, adherence=0.95)


def test_invalid_row_is_rejected_and_counted(tmp_path):
    path = write(tmp_path, "p1,64,0,120.0,0.95\np2,66,1,80.0,1.2\np3,67,1,10.0,0.5\n")
    cohort = load_cohort(path)
    assert len(cohort) == 2
    assert cohort.provenance.rejected == 1
    assert list(cohort.ids) == ["p1", "p3"]


def test_one_sided_file_raises(tmp_path):
    rows = "".join(f"p{a},{a},0,1.0,0.5\n" for a in range(60, 65))
    with pytest.raises(EmptySideError):
        load_cohort(write(tmp_path, rows))


def test_missing_file_and_column(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_cohort(tmp_path / "nope.csv")
    with pytest.raises(SchemaError):
        load_cohort(write(tmp_path, "p1,64,0,1.0\n", header="id,age,treated,oop\n"))


def test_zero_valid_rows(tmp_path):
    with pytest.raises(EmptyCohortError):
        load_cohort(write(tmp_path, "p1,64,0,-5,0.5\np2,66,1,1.0,3\n"))


def test_schema_mapping_renames_columns(tmp_path):
    path = write(tmp_path, "a,64,0,1.0,0.5\nb,66,1,2.0,0.6\n", header="pid,years,d,cost,pdc\n")
    cohort = load_cohort(path, schema={"id": "pid", "age": "years", "treated": "d",
                                       "oop": "cost", "adherence": "pdc"})
    assert list(cohort.ages) == [64, 66]


def test_observation_invariants():
    with pytest.raises(DataError):
        Observation(id="x", age=30, treated=False, oop=1.0, adherence=0.5)
    with pytest.raises(DataError):
        Observation(id="x", age=60, treated=False, oop=-1.0, adherence=0.5)


@pytest.mark.parametrize("ages, radius, kept, dropped", [
    ([63, 64, 65, 65, 66], 0, [63, 64, 66], 2),
    ([63, 64, 65, 66, 67], 1, [63, 67], 3),
    ([63, 64, 66, 67], 0, [63, 64, 66, 67], 0),
])
def test_apply_donut_examples(ages, radius, kept, dropped):
    cohort = make_cohort(ages, np.ones(len(ages)))
    out = apply_donut(cohort, RdSpec(donut_radius=radius))
    assert list(out.ages) == kept
    assert out.provenance.donut_dropped == dropped


def test_apply_donut_empty_side():
    cohort = make_cohort([63, 64, 65, 66], np.ones(4))
    with pytest.raises(EmptySideError):
        apply_donut(cohort, RdSpec(donut_radius=1))


@given(st.lists(st.integers(55, 75), min_size=2, max_size=60), st.integers(0, 3))
def test_apply_donut_idempotent(ages, radius):
    ages = np.array(ages)
    spec = RdSpec(donut_radius=radius)
    left = (ages < 65 - radius).any() and (ages > 65 + radius).any()
    cohort = make_cohort(ages, np.ones(ages.size))
    if not left:
        with pytest.raises(EmptySideError):
            apply_donut(cohort, spec)
        return
    once = apply_donut(cohort, spec)
    twice = apply_donut(once, spec)
    assert once == twice
    assert twice.provenance.donut_dropped == once.provenance.donut_dropped


def test_write_load_round_trip_is_exact(tmp_path):
    cohort = simulate_cohort(CohortParams(n=300, seed=11))
    path = write_cohort(cohort, tmp_path / "c.csv")
    back = load_cohort(path)
    pd.testing.assert_frame_equal(back.frame, cohort.frame, check_exact=True)
    assert back.provenance.rejected == 0


@given(st.lists(st.floats(0, 1e6, allow_nan=False), min_size=4, max_size=20))
def test_round_trip_property(tmp_path_factory, values):
    n = len(values)
    ages = np.where(np.arange(n) % 2 == 0, 60, 70)
    cohort = make_cohort(ages, values, adherence=np.linspace(0, 1, n))
    path = write_cohort(cohort, tmp_path_factory.mktemp("rt") / "c.csv")
    assert load_cohort(path).frame.equals(cohort.frame)


def test_standardize_oop_examples():
    assert standardize_oop([(90, 300.0, 0.0)]) == 300.0
    assert standardize_oop([(30, 100, 0), (30, 110, 0), (30, 120, 0)]) == pytest.approx(330.0)
    assert standardize_oop([{"days_supplied": 30, "patient_pay": 150.0, "coupon": 50.0}]) == 300.0


def test_standardize_oop_errors():
    with pytest.raises(DataError):
        standardize_oop([(30, 10.0, 20.0)])
    with pytest.raises(UnsupportedFillError):
        standardize_oop([(60, 10.0, 0.0)])


fills = st.lists(st.tuples(st.sampled_from([30, 90]), st.floats(0, 1000), st.floats(0, 1)),
                 min_size=1, max_size=8)


@given(fills, st.randoms())
def test_standardize_oop_order_invariant(raw, rnd):
    fl = [(d, pay, pay * frac) for d, pay, frac in raw]
    shuffled = fl[:]
    rnd.shuffle(shuffled)
    assert standardize_oop(shuffled) == pytest.approx(standardize_oop(fl), rel=1e-12, abs=1e-9)


@pytest.mark.parametrize("days, expected", [(45, 0.5), (120, 1.0), (0, 0.0)])
def test_compute_pdc_examples(days, expected):
    assert compute_pdc(days, 90) == expected


@given(st.integers(0, 500), st.integers(0, 500), st.integers(1, 365))
def test_compute_pdc_monotone_and_bounded(a, b, window):
    lo, hi = sorted((a, b))
    assert 0.0 <= compute_pdc(lo, window) <= compute_pdc(hi, window) <= 1.0


def test_rdspec_validation():
    with pytest.raises(ValueError):
        RdSpec(bandwidth=1, donut_radius=1)
    with pytest.raises(ValueError):
        RdSpec(kernel="epanechnikov")
    with pytest.raises(ValueError):
        RdSpec(order=4)


def test_cohort_column_and_covariates():
    cohort = make_cohort([60, 70], [1.0, 2.0], sex=[0.0, 1.0])
    assert cohort.covariate_keys == ["sex"]
    assert cohort.column("sex").tolist() == [0.0, 1.0]
    with pytest.raises(SchemaError):
        cohort.column("missing")
    assert isinstance(cohort, Cohort)
