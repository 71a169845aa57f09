"""Information tracking, conditional power and futility decisions.

The interim Z statistic follows (approximately) a Brownian motion in the
information fraction t, with B(t) = Z_t * sqrt(t) and drift theta equal to
the standardized treatment effect at full information.  The information
fraction is estimated as the ratio of the anticipated full-information
variance to the current variance of the interim estimator; a more efficient
interim estimator therefore sits further along the Brownian time axis at
the same calendar time.

Futility is declared when conditional power drops below a boundary.  The
default boundary spends the type II error like an O'Brien-Fleming function,
so it is lenient early and approaches 1 - beta late.  A fixed conditional
power cutoff is also available.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyCohort1, InvalidFraction, NonPositiveVariance, ZeroVariance
from .estimator import EffectEstimate, InterimSnapshot, fit_with_fallback, _subset
from .glm import normal_cdf, normal_quantile, predict_mean

CONTINUE = "continue"
STOP_FUTILITY = "stop"

# information fractions are pushed off the boundary by this much before any
# conditional power evaluation
_T_EPS = 1e-9


def design_theta(alpha: float, beta: float) -> float:
    """Brownian drift the trial was powered for: z_{1-alpha} + z_{1-beta}."""
    return normal_quantile(1.0 - alpha) + normal_quantile(1.0 - beta)


def interim_z(diff: float, s2: float) -> float:
    """Wald statistic for the interim effect estimate."""
    if not s2 > 0.0:
        raise NonPositiveVariance(f"s2 = {s2}")
    return diff / math.sqrt(s2)


def final_variance_unblinded(snapshot: InterimSnapshot, n_planned: int) -> float:
    """Anticipated variance of the final complete-data estimator.

    Patients with observed Y form a representative sample of the final
    analysis population, so the variance of the final difference in means is
    estimated from their influence values, scaled to ``n_planned`` patients.
    Arm means and the randomized share are taken within that complete
    subset, which makes the estimate coincide exactly with the interim s2
    when the snapshot is already fully observed.
    """
    cy = snapshot.y_observed
    if not cy.any():
        raise EmptyCohort1("no observed primary endpoints")
    arm = snapshot.table["arm"][cy]
    y = snapshot.table["y"][cy]
    m1 = arm == 1
    if not m1.any() or m1.all():
        raise EmptyCohort1("observed primary endpoints cover only one arm")
    pi = float(np.mean(m1))
    mu1 = float(np.mean(y[m1]))
    mu0 = float(np.mean(y[~m1]))
    phi = np.where(m1, (y - mu1) / pi, -(y - mu0) / (1.0 - pi))
    var = float(np.var(phi, ddof=1))
    if var <= 0.0:
        raise ZeroVariance("complete responses are constant")
    return var / n_planned


def information_fraction(interim_s2: float, final_var: float) -> float:
    """Fraction of the final information already accrued, clamped to (0, 1]."""
    if not interim_s2 > 0.0:
        raise NonPositiveVariance(f"interim s2 = {interim_s2}")
    if not final_var > 0.0:
        raise NonPositiveVariance(f"final variance = {final_var}")
    return min(final_var / interim_s2, 1.0)


def conditional_power(z_t: float, t: float, theta: float, alpha: float = 0.025) -> float:
    """Probability of crossing z_{1-alpha} at t = 1 given B(t), drift theta."""
    if not 0.0 < t < 1.0:
        raise InvalidFraction(f"t = {t} outside (0, 1)")
    b_t = z_t * math.sqrt(t)
    z_a = normal_quantile(1.0 - alpha)
    return 1.0 - normal_cdf((z_a - b_t - theta * (1.0 - t)) / math.sqrt(1.0 - t))


@dataclass(frozen=True)
class FutilityBoundary:
    """Conditional power cutoff gamma(t): stop when CP(t) < gamma(t)."""

    kind: str  # "obrien-fleming-beta" or "fixed"
    alpha: float = 0.025
    beta: float = 0.10
    threshold: float | None = None  # fixed cutoff, used by kind "fixed"

    @classmethod
    def obrien_fleming(cls, alpha: float = 0.025, beta: float = 0.10):
        return cls("obrien-fleming-beta", alpha, beta)

    @classmethod
    def fixed(cls, threshold: float, alpha: float = 0.025, beta: float = 0.10):
        return cls("fixed", alpha, beta, threshold)

    def spent_beta(self, t: float) -> float:
        """Cumulative type II error spent by information fraction t."""
        t = min(max(t, _T_EPS), 1.0)
        return 2.0 - 2.0 * normal_cdf(normal_quantile(1.0 - self.beta / 2.0) / math.sqrt(t))

    def threshold_at(self, t: float) -> float:
        """Conditional power cutoff at information fraction t."""
        if not t > 0.0:
            raise InvalidFraction(f"t = {t} must be positive")
        if self.kind == "fixed":
            if self.threshold is None:
                raise ValueError("fixed boundary needs a threshold")
            return self.threshold
        if self.kind != "obrien-fleming-beta":
            raise ValueError(f"unknown boundary kind '{self.kind}'")
        t = min(t, 1.0 - _T_EPS)
        spent = self.spent_beta(t)
        # B-scale stopping bound: continue while B(t) >= theta*t - z_{1-spent}*sqrt(t),
        # restated as the conditional power value attained on that bound
        z_spent = normal_quantile(1.0 - spent)
        z_beta = normal_quantile(1.0 - self.beta)
        return 1.0 - normal_cdf((z_spent * math.sqrt(t) - z_beta) / math.sqrt(1.0 - t))


def futility_decision(cp: float, t: float, boundary: FutilityBoundary) -> str:
    """``"stop"`` when conditional power is strictly below the boundary."""
    return STOP_FUTILITY if cp < boundary.threshold_at(t) else CONTINUE


@dataclass
class MonitoringState:
    """Everything the interim look computed, in one place."""

    t: float
    z_t: float
    b_t: float
    theta: float
    cp: float
    threshold: float
    decision: str
    s2: float
    final_var: float


def assess_futility(effect: EffectEstimate, snapshot: InterimSnapshot,
                    n_planned: int, boundary: FutilityBoundary,
                    theta: float | None = None) -> MonitoringState:
    """Run the whole interim look on an existing effect estimate.

    ``theta`` defaults to the design drift implied by the boundary's alpha
    and beta.  The snapshot passed here must be the one the estimate was
    computed on (its complete cases anchor the final variance).
    """
    if theta is None:
        theta = design_theta(boundary.alpha, boundary.beta)
    final_var = final_variance_unblinded(snapshot, n_planned)
    t = information_fraction(effect.s2, final_var)
    z_t = interim_z(effect.diff, effect.s2)
    t_cp = min(t, 1.0 - _T_EPS)
    cp = conditional_power(z_t, t_cp, theta, boundary.alpha)
    thr = boundary.threshold_at(t_cp)
    decision = STOP_FUTILITY if cp < thr else CONTINUE
    return MonitoringState(
        t=t, z_t=z_t, b_t=z_t * math.sqrt(t), theta=theta, cp=cp,
        threshold=thr, decision=decision, s2=effect.s2, final_var=final_var,
    )


def blinded_information_fraction(snapshot: InterimSnapshot, h_spec, f_spec,
                                 n_planned: int, pi_design: float = 0.5) -> float:
    """Information fraction computed without using treatment assignments.

    Both variances are formed from pooled (arm-agnostic) quantities: the
    final variance from the raw spread of observed responses, the interim
    variance from pooled influence values built on working models fit to
    both arms at once.  The design allocation probability enters both
    denominators and cancels in the ratio.
    """
    rec = snapshot.recruited
    cx = snapshot.x_observed[rec]
    cy = snapshot.y_observed[rec]
    if not cy.any():
        raise EmptyCohort1("no observed primary endpoints")
    sub = _subset(snapshot.table, rec)
    n_rec = int(rec.sum())
    y = np.where(cy, np.nan_to_num(sub["y"]), 0.0)
    mu = float(np.mean(y[cy]))
    num_spread = float(np.mean((y[cy] - mu) ** 2))
    if num_spread <= 0.0:
        raise ZeroVariance("observed responses are constant")
    scale = pi_design * (1.0 - pi_design)
    numerator = num_spread / (n_planned * scale)

    cohort2 = cx & ~cy
    if cohort2.any():
        h_fit = fit_with_fallback(h_spec, _subset(sub, cy))
        yhat = np.zeros(n_rec)
        yhat[cx] = predict_mean(h_fit, _subset(sub, cx))
    else:
        yhat = y.copy()
    if (~cx).any():
        ystar = np.where(cy, y, yhat)
        tab12 = dict(_subset(sub, cx))
        tab12[f_spec.response] = ystar[cx]
        f_fit = fit_with_fallback(f_spec, tab12)
        yhat_prime = predict_mean(f_fit, sub)
    else:
        yhat_prime = yhat.copy()

    pi_x = float(np.mean(cx))
    pi_y = float(np.sum(cy) / np.sum(cx))
    cxf = cx.astype(float)
    cyf = cy.astype(float)
    phi = (
        cyf * cxf / (pi_y * pi_x) * (y - yhat)
        + cxf / pi_x * (yhat - yhat_prime)
        + yhat_prime
        - mu
    )
    denominator = float(np.mean(phi ** 2)) / (n_rec * scale)
    if denominator <= 0.0:
        raise ZeroVariance("pooled influence values are all zero")
    return min(numerator / denominator, 1.0)
