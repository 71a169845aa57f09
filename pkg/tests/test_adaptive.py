"""Combination test and sample size reassessment."""

import math

import numpy as np
import pytest
from scipy import stats

from adaptrial.adaptive import (
    CombinationPlan,
    combination_test,
    observed_theta,
    reassess_sample_size,
    second_stage_statistic,
)
from adaptrial.errors import InvalidFraction, NonPositiveTheta

THETA = 3.2415155500846544


def test_plan_validates_the_weight():
    CombinationPlan(0.5)
    for w in (0.0, 1.0, -0.2, 1.3):
        with pytest.raises(InvalidFraction):
            CombinationPlan(w)


def test_second_stage_statistic_values():
    assert second_stage_statistic(math.sqrt(0.5) * 1.3, 1.3, 0.5) == pytest.approx(0.0, abs=1e-12)
    want = (2.0 - math.sqrt(0.5)) / math.sqrt(0.5)
    assert second_stage_statistic(2.0, 1.0, 0.5) == pytest.approx(want, rel=1e-12)
    with pytest.raises(InvalidFraction):
        second_stage_statistic(1.0, 1.0, 0.0)
    with pytest.raises(InvalidFraction):
        second_stage_statistic(1.0, 1.0, 1.0)


def test_unadapted_trial_reproduces_the_naive_statistic():
    """Splitting a final statistic at t and recombining with w = t is the
    identity, so an unadapted trial reaches the same decision either way."""
    rng = np.random.default_rng(17)
    for _ in range(200):
        t = float(rng.uniform(0.05, 0.95))
        z_t = float(rng.normal())
        z_final = float(rng.normal(loc=1.0))
        z2 = second_stage_statistic(z_final, z_t, t)
        back = math.sqrt(t) * z_t + math.sqrt(1.0 - t) * z2
        assert back == pytest.approx(z_final, abs=1e-10)
        p, _reject = combination_test(z_t, z2, CombinationPlan(w=t))
        assert p == pytest.approx(float(stats.norm.sf(z_final)), abs=1e-12)


def test_combination_test_reference_points():
    p, reject = combination_test(0.0, 0.0, CombinationPlan(0.5))
    assert p == pytest.approx(0.5, abs=1e-12)
    assert not reject
    # weight degeneracy: all mass on the first stage
    p, _ = combination_test(1.7, -9.0, CombinationPlan(1.0 - 1e-9))
    assert p == pytest.approx(float(stats.norm.sf(1.7)), abs=1e-4)


def test_combination_test_level_under_the_null():
    rng = np.random.default_rng(23)
    n = 100_000
    z1, z2 = rng.standard_normal(n), rng.standard_normal(n)
    for w in (0.3, 0.5, 0.562):
        plan = CombinationPlan(w)
        rejections = np.mean([
            combination_test(a, b, plan)[1] for a, b in zip(z1[:20000], z2[:20000])
        ])
        # the combined statistic is exactly standard normal under H0
        assert rejections == pytest.approx(0.025, abs=3 * math.sqrt(0.025 * 0.975 / 20000))


def test_observed_theta():
    assert observed_theta(1.2, 0.36) == pytest.approx(2.0)
    with pytest.raises(NonPositiveTheta):
        observed_theta(0.0, 0.5)
    with pytest.raises(NonPositiveTheta):
        observed_theta(-1.0, 0.5)
    with pytest.raises(InvalidFraction):
        observed_theta(1.0, 0.0)


# ---------------------------------------------------------------------------
# sample size reassessment


def _plan():
    return CombinationPlan(w=0.5, alpha=0.025, beta=0.10)


def test_ssr_on_track_interior():
    n = 1000
    res = reassess_sample_size(THETA * math.sqrt(0.5), 0.5, n, 400, _plan())
    assert res.n_second_stage / n == pytest.approx(0.2952238966028506, rel=1e-9)
    assert res.n_new == 2 * math.ceil((0.2952238966028506 + 0.5) * n / 2)
    assert res.rationale == "Interior"
    assert not res.capped


def test_ssr_huge_effect_needs_no_further_recruitment():
    res = reassess_sample_size(10.0, 0.5, 1000, 600, _plan())
    assert res.n_second_stage == 0.0
    assert res.n_new == 600
    assert res.rationale == "NoFurtherRecruitment"


def test_ssr_null_effect_hits_the_cap():
    n = 1000
    res = reassess_sample_size(0.0, 0.5, n, 600, _plan(), cap_multiplier=2.0)
    assert res.n_second_stage / n == pytest.approx(1.563629904651787, rel=1e-9)
    assert res.capped
    assert res.n_new == 2 * n
    assert res.rationale == "AtCap"


def test_ssr_below_floor_keeps_recruited_patients():
    # strong effect: the formula asks for less than already recruited
    res = reassess_sample_size(3.0, 0.5, 1000, 900, _plan())
    assert 0.0 < res.n_second_stage
    assert res.n_new == 900
    assert res.rationale == "BelowFloor"


def test_ssr_no_decrease_mode_floors_at_the_plan():
    res = reassess_sample_size(2.6, 0.5, 1000, 600, _plan(), allow_decrease=False)
    assert res.n_new >= 1000
    res2 = reassess_sample_size(2.6, 0.5, 1000, 600, _plan(), allow_decrease=True)
    assert res2.n_new < 1000


def test_ssr_rounds_up_to_even():
    for z in np.linspace(0.2, 2.8, 27):
        res = reassess_sample_size(float(z), 0.5, 999, 500, _plan())
        assert res.n_new % 2 == 0
        assert res.n_new <= 2 * math.floor(999 * 2.0 / 2)


def test_ssr_is_nonincreasing_in_the_interim_statistic():
    sizes = [
        reassess_sample_size(float(z), 0.5, 1000, 500, _plan()).n_new
        for z in np.linspace(-2.0, 6.0, 81)
    ]
    assert all(a >= b for a, b in zip(sizes, sizes[1:]))


def test_ssr_observed_drift_mode():
    z_t, t = 1.5, 0.5
    res = reassess_sample_size(z_t, t, 1000, 500, _plan(),
                               theta=observed_theta(z_t, t))
    # the observed drift is much weaker than the design drift, so the
    # reassessment asks for more patients
    res_design = reassess_sample_size(z_t, t, 1000, 500, _plan())
    assert res.n_new > res_design.n_new


def test_ssr_rejects_bad_inputs():
    with pytest.raises(InvalidFraction):
        reassess_sample_size(1.0, 0.0, 1000, 500, _plan())
    with pytest.raises(NonPositiveTheta):
        reassess_sample_size(1.0, 0.5, 1000, 500, _plan(), theta=-0.1)
    with pytest.raises(ValueError):
        reassess_sample_size(1.0, 0.5, 1000, 2100, _plan(), cap_multiplier=2.0)
