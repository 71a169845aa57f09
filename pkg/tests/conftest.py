"""Shared fixtures: a hand-checkable 12-patient snapshot and a factory for
random partially observed snapshots."""

import numpy as np
import pytest

from adaptrial.estimator import InterimSnapshot, PatientRecord, WorkingModels


def _patient(i, arm, z1, x, y):
    return PatientRecord(id=f"p{i:02d}", arm=arm, z={"z1": z1}, x=x, y=y)


@pytest.fixture
def golden_records():
    """12 patients, 4 per follow-up cohort, balanced arms.

    Sized so every working model falls back to its closed-form
    intercept-only floor, which keeps all estimates exact fractions.
    """
    return [
        _patient(1, 1, 1.0, 1.0, 1.0), _patient(2, 1, 0.0, 0.0, 0.0),
        _patient(3, 0, 1.0, 1.0, 1.0), _patient(4, 0, 0.0, 0.0, 1.0),
        _patient(5, 1, 1.0, 1.0, None), _patient(6, 1, 0.0, 0.0, None),
        _patient(7, 0, 0.0, 1.0, None), _patient(8, 0, 1.0, 0.0, None),
        _patient(9, 1, 1.0, None, None), _patient(10, 1, 0.0, None, None),
        _patient(11, 0, 0.0, None, None), _patient(12, 0, 1.0, None, None),
    ]


@pytest.fixture
def golden_snapshot(golden_records):
    return InterimSnapshot.from_records(golden_records)


@pytest.fixture
def golden_models():
    return WorkingModels.from_formulas("y ~ x + z1", "y ~ z1")


@pytest.fixture
def make_snapshot():
    """Factory for random snapshots with every cohort populated and both
    arms represented among the complete cases."""

    def make(seed, n=80, with_x=True):
        rng = np.random.default_rng(seed)
        arm = (rng.random(n) < 0.5).astype(float)
        arm[:4] = (1, 1, 0, 0)
        z1 = rng.normal(size=n)
        u = rng.random(n)
        y_obs = u < 0.35
        x_obs = u < 0.7 if with_x else y_obs.copy()
        y_obs[:4] = True
        x_obs[:4] = True
        x = (rng.random(n) < 0.5).astype(float)
        prob = 0.25 + 0.5 * x if with_x else np.full(n, 0.5)
        y = (rng.random(n) < prob).astype(float)
        y[:4] = (1.0, 0.0, 1.0, 0.0)
        table = {"arm": arm, "z1": z1, "y": np.where(y_obs, y, np.nan)}
        if with_x:
            table["x"] = np.where(x_obs, x, np.nan)
        snap = InterimSnapshot(table, np.ones(n, dtype=bool), x_obs, y_obs,
                               0.0, None, float("nan"))
        snap.validate()
        return snap

    return make
