import numpy as np
import pandas as pd
import pytest
from hypothesis import HealthCheck, settings

from donutrd.cohort import Cohort
from donutrd.simulate import CohortParams, simulate_cohort

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def make_cohort(ages, oop, adherence=None, treated=None, threshold=65, **covariates):
    ages = np.asarray(ages)
    n = ages.size
    frame = {
        "id": [f"r{i}" for i in range(n)],
        "age": ages,
        "treated": (ages > threshold).astype(int) if treated is None else np.asarray(treated),
        "oop": np.asarray(oop, dtype=float),
        "adherence": np.full(n, 0.9) if adherence is None else np.asarray(adherence, dtype=float),
    }
    frame.update(covariates)
    return Cohort(pd.DataFrame(frame), threshold=threshold)


def share_cohort(p_below, p_above, rf_below=100.0, rf_jump=135.0, per_age=1000):
    """Per-age treated shares fixed exactly; outcome constant on each side."""
    ages, treated = [], []
    for age in range(55, 76):
        p = p_below if age < 65 else p_above
        k = int(round(p * per_age))
        ages += [age] * per_age
        treated += [1] * k + [0] * (per_age - k)
    ages = np.array(ages)
    oop = np.where(ages > 65, rf_below + rf_jump, rf_below)
    return make_cohort(ages, oop, treated=treated)


@pytest.fixture(scope="session")
def calibrated_cohort():
    return simulate_cohort(CohortParams(seed=3))


@pytest.fixture
def grid_ages():
    """Every age from 50 to 80, five rows each."""
    return np.repeat(np.arange(50, 81), 5)
