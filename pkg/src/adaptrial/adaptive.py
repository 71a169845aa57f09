"""Sample size reassessment and the two-stage combination test.

After an interim look the second stage can be re-powered using the interim
B-value.  Type I error control does not rely on the re-powering rule: the
final test combines the interim statistic and an (asymptotically)
independent increment statistic with pre-specified weights, so any rule
that only looks at first-stage data is admissible.

The combination weight w plays the role the planned information fraction
would have had without the adaptation; it must be fixed before unblinding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import InvalidFraction, NonPositiveTheta
from .glm import normal_cdf, normal_quantile

RATIONALE_NO_FURTHER = "NoFurtherRecruitment"
RATIONALE_BELOW_FLOOR = "BelowFloor"
RATIONALE_INTERIOR = "Interior"
RATIONALE_AT_CAP = "AtCap"


@dataclass(frozen=True)
class CombinationPlan:
    """Pre-specified pieces of the two-stage test."""

    w: float
    alpha: float = 0.025
    beta: float = 0.10

    def __post_init__(self):
        if not 0.0 < self.w < 1.0:
            raise InvalidFraction(f"combination weight w = {self.w} outside (0, 1)")
        if not 0.0 < self.alpha < 1.0 or not 0.0 < self.beta < 1.0:
            raise ValueError("alpha and beta must lie in (0, 1)")


def second_stage_statistic(z_final: float, z_t: float, t_tilde: float) -> float:
    """Standardized increment from the interim look to the final analysis.

    ``t_tilde`` is the realized information fraction of the interim look
    relative to the final analysis actually performed.
    """
    if not 0.0 < t_tilde < 1.0:
        raise InvalidFraction(f"t_tilde = {t_tilde} outside (0, 1)")
    return (z_final - math.sqrt(t_tilde) * z_t) / math.sqrt(1.0 - t_tilde)


def combination_test(z1: float, z2: float, plan: CombinationPlan) -> tuple[float, bool]:
    """Weighted inverse-normal combination of the two stage statistics.

    Returns (p, reject).  Valid at level alpha for any fixed weight, whatever
    data-dependent rule chose the second-stage sample size.
    """
    z = math.sqrt(plan.w) * z1 + math.sqrt(1.0 - plan.w) * z2
    p = 1.0 - normal_cdf(z)
    return p, p < plan.alpha


def observed_theta(z_t: float, t: float) -> float:
    """Drift implied by the interim estimate itself: Z_t / sqrt(t)."""
    if not 0.0 < t <= 1.0:
        raise InvalidFraction(f"t = {t} outside (0, 1]")
    if z_t <= 0.0:
        raise NonPositiveTheta(
            f"interim z = {z_t:.4f}; no positive effect to carry forward"
        )
    return z_t / math.sqrt(t)


@dataclass(frozen=True)
class SsrResult:
    """Outcome of a sample size reassessment."""

    n_new: int
    n_second_stage: float
    capped: bool
    rationale: str


def reassess_sample_size(z_t: float, t: float, n_planned: int, n_recruited: int,
                         plan: CombinationPlan, cap_multiplier: float = 2.0,
                         allow_decrease: bool = True,
                         theta: float | None = None) -> SsrResult:
    """Choose the total sample size that restores power 1 - beta.

    The second-stage requirement solves the conditional power equation at
    drift ``theta`` (design drift by default; pass ``observed_theta(z_t, t)``
    to carry the interim estimate forward).  ``t`` is the pre-specified
    combination weight, not the realized information fraction.

    The result never falls below the number already recruited, optionally
    never below the original plan, and never exceeds
    ``cap_multiplier * n_planned``.  Totals are rounded up to even so both
    arms stay balanced in expectation.
    """
    if not 0.0 < t < 1.0:
        raise InvalidFraction(f"t = {t} outside (0, 1)")
    if theta is None:
        theta = normal_quantile(1.0 - plan.alpha) + normal_quantile(1.0 - plan.beta)
    if theta <= 0.0:
        raise NonPositiveTheta(f"theta = {theta}")
    if n_recruited > n_planned * cap_multiplier:
        raise ValueError("more patients recruited than the cap allows")

    z_a = normal_quantile(1.0 - plan.alpha)
    z_b = normal_quantile(plan.beta)  # negative for beta < 1/2
    need = (z_a - z_t * math.sqrt(t)) / math.sqrt(1.0 - t) - z_b
    second = max(0.0, need) ** 2 * n_planned / theta ** 2

    raw_total = second + t * n_planned
    if not allow_decrease:
        raw_total = max(raw_total, float(n_planned))
    target = max(float(n_recruited), raw_total)
    cap = cap_multiplier * n_planned
    capped = target > cap
    total = min(target, cap)
    n_new = 2 * math.ceil(total / 2.0)
    if n_new > cap:
        n_new = 2 * math.floor(cap / 2.0)

    if second == 0.0:
        rationale = RATIONALE_NO_FURTHER
    elif capped:
        rationale = RATIONALE_AT_CAP
    elif raw_total < n_recruited:
        rationale = RATIONALE_BELOW_FLOOR
    else:
        rationale = RATIONALE_INTERIOR
    return SsrResult(n_new=int(n_new), n_second_stage=second, capped=capped,
                     rationale=rationale)
