"""Interim treatment effect estimation from partially observed follow-up.

At an interim look the recruited patients split into cohorts by how far
their follow-up has progressed:

* cohort 1: primary endpoint Y observed (and the short-term endpoint X),
* cohort 2: X observed, Y still pending,
* cohort 3: only baseline covariates Z observed,
* cohort 4: not yet recruited.

Per arm, a working model for Y given (X, Z) is fit on cohort 1 and used to
impute cohort 2; a second working model for the (partly imputed) response
given Z alone is fit on cohorts 1 and 2 and used to impute cohort 3.  The
arm mean estimate averages observed and imputed responses over all
recruited patients, and the per-patient influence values give a variance
estimate for the treatment effect contrast.  Randomization guarantees
consistency even when both working models are wrong.

Working model fits fall back along a fixed ladder (drop interactions, then
drop main effects from the right, then intercept only) when a fit fails or
the cohort is too small to support it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CompleteSeparation,
    EmptyCohort1,
    InconsistentIndicators,
    NonConvergence,
    RankDeficient,
    ZeroVariance,
)
from .glm import DesignSpec, FittedGlm, fit_canonical_glm, fit_intercept_only, predict_mean

# a candidate working model is only fit when it has at least this many rows
# per parameter beyond the parameter count itself
MIN_EXTRA_ROWS = 5


@dataclass
class PatientRecord:
    """One patient as read from a dataset (missing values are None)."""

    id: str
    arm: int
    z: dict[str, float]
    x: float | None = None
    y: float | None = None
    arrival_time: float | None = None


@dataclass
class InterimSnapshot:
    """Columnar view of a trial at one calendar time.

    ``table`` maps column names to aligned arrays and always contains
    ``arm``, the covariate columns and ``y``; ``x`` is present only when the
    design measures a short-term endpoint.  Unobserved ``x``/``y`` entries
    hold nan and are flagged by the indicator arrays.  Rows with
    ``recruited`` False are patients that exist in the generating process
    but have not arrived yet; they are ignored by every estimator.
    """

    table: dict[str, np.ndarray]
    recruited: np.ndarray
    x_observed: np.ndarray
    y_observed: np.ndarray
    calendar_time: float
    lag_x: float | None
    lag_y: float
    ids: tuple[str, ...] | None = None
    arrival: np.ndarray | None = None

    @property
    def n_rows(self) -> int:
        return len(self.recruited)

    @property
    def n_recruited(self) -> int:
        return int(np.sum(self.recruited))

    @property
    def has_x(self) -> bool:
        return "x" in self.table

    @property
    def pi_hat(self) -> float:
        """Observed share of recruited patients in arm 1."""
        return float(np.mean(self.table["arm"][self.recruited] == 1))

    @property
    def pi_x_hat(self) -> float:
        """Observed share of recruited patients with X available."""
        return float(np.mean(self.x_observed[self.recruited]))

    @property
    def pi_y_hat(self) -> float:
        """Observed share of X-complete patients with Y available."""
        n_x = int(np.sum(self.x_observed))
        if n_x == 0:
            return float("nan")
        return float(np.sum(self.y_observed) / n_x)

    @classmethod
    def from_followup(cls, table, arrival, calendar_time, lag_x, lag_y, ids=None):
        """Snapshot of fully simulated data where observability is a pure
        function of arrival time and the two follow-up lags."""
        arrival = np.asarray(arrival, dtype=float)
        recruited = arrival <= calendar_time
        elapsed = calendar_time - arrival
        y_obs = recruited & (elapsed >= lag_y)
        if lag_x is None:
            x_obs = y_obs.copy()
        else:
            x_obs = recruited & (elapsed >= lag_x)
        cols = {}
        for name, values in table.items():
            v = np.asarray(values, dtype=float).copy()
            if name == "x":
                v[~x_obs] = np.nan
            elif name == "y":
                v[~y_obs] = np.nan
            cols[name] = v
        snap = cls(cols, recruited, x_obs, y_obs, float(calendar_time),
                   lag_x, lag_y, ids=ids, arrival=arrival)
        snap.validate()
        return snap

    @classmethod
    def from_records(cls, records, lag_x=None, lag_y=float("nan"), calendar_time=None):
        """Snapshot built from patient records; observability is inferred
        from the missingness pattern.

        When no record carries an X value the design is treated as having no
        short-term endpoint.  If arrival times and both lags are available,
        the indicators are checked against them.
        """
        records = list(records)
        if not records:
            raise InconsistentIndicators("empty dataset")
        z_names = sorted(records[0].z.keys())
        for r in records:
            if sorted(r.z.keys()) != z_names:
                raise InconsistentIndicators(
                    f"record '{r.id}': covariate columns differ from first record"
                )
        n = len(records)
        measured_x = any(r.x is not None for r in records)
        cols = {"arm": np.array([float(r.arm) for r in records])}
        for name in z_names:
            cols[name] = np.array([float(r.z[name]) for r in records])
        if measured_x:
            cols["x"] = np.array(
                [np.nan if r.x is None else float(r.x) for r in records]
            )
        cols["y"] = np.array([np.nan if r.y is None else float(r.y) for r in records])
        y_obs = np.array([r.y is not None for r in records])
        if measured_x:
            x_obs = np.array([r.x is not None for r in records])
        else:
            x_obs = y_obs.copy()
        for r, xo, yo in zip(records, x_obs, y_obs):
            if yo and not xo:
                raise InconsistentIndicators(
                    f"record '{r.id}': Y observed but X missing"
                )
        arrivals = None
        if all(r.arrival_time is not None for r in records):
            arrivals = np.array([float(r.arrival_time) for r in records])
        if calendar_time is None:
            calendar_time = float(np.max(arrivals)) if arrivals is not None else 0.0
        if arrivals is not None and lag_x is not None and np.isfinite(lag_y):
            elapsed = calendar_time - arrivals
            for r, el, xo, yo in zip(records, elapsed, x_obs, y_obs):
                if xo != (el >= lag_x) or yo != (el >= lag_y):
                    raise InconsistentIndicators(
                        f"record '{r.id}': observed data inconsistent with "
                        f"arrival time and follow-up lags"
                    )
        snap = cls(cols, np.ones(n, dtype=bool), x_obs, y_obs,
                   float(calendar_time), lag_x, lag_y,
                   ids=tuple(r.id for r in records), arrival=arrivals)
        snap.validate()
        return snap

    def validate(self) -> None:
        arm = self.table["arm"]
        bad = ~np.isin(arm, (0.0, 1.0))
        if bad.any():
            raise InconsistentIndicators(f"{self._name(bad)}: arm must be 0 or 1")
        if (self.y_observed & ~self.x_observed).any():
            bad = self.y_observed & ~self.x_observed
            raise InconsistentIndicators(f"{self._name(bad)}: Y observed before X")
        if (self.x_observed & ~self.recruited).any():
            bad = self.x_observed & ~self.recruited
            raise InconsistentIndicators(f"{self._name(bad)}: data for unrecruited patient")
        y = self.table["y"]
        bad = self.y_observed & ~np.isfinite(y)
        if bad.any():
            raise InconsistentIndicators(f"{self._name(bad)}: Y flagged observed but missing")
        if self.has_x:
            bad = self.x_observed & ~np.isfinite(self.table["x"])
            if bad.any():
                raise InconsistentIndicators(
                    f"{self._name(bad)}: X flagged observed but missing"
                )

    def _name(self, mask) -> str:
        i = int(np.flatnonzero(mask)[0])
        if self.ids is not None:
            return f"record '{self.ids[i]}'"
        return f"row {i}"

    def restrict(self, mask) -> "InterimSnapshot":
        """New snapshot containing only rows where ``mask`` holds."""
        mask = np.asarray(mask, dtype=bool)
        return InterimSnapshot(
            {k: v[mask] for k, v in self.table.items()},
            self.recruited[mask],
            self.x_observed[mask],
            self.y_observed[mask],
            self.calendar_time,
            self.lag_x,
            self.lag_y,
            ids=tuple(np.asarray(self.ids, dtype=object)[mask]) if self.ids else None,
            arrival=self.arrival[mask] if self.arrival is not None else None,
        )


def partition_cohorts(snapshot: InterimSnapshot) -> dict[int, np.ndarray]:
    """Row indices of the four follow-up cohorts."""
    rec, xo, yo = snapshot.recruited, snapshot.x_observed, snapshot.y_observed
    return {
        1: np.flatnonzero(yo),
        2: np.flatnonzero(xo & ~yo),
        3: np.flatnonzero(rec & ~xo),
        4: np.flatnonzero(~rec),
    }


@dataclass(frozen=True)
class WorkingModels:
    """The four working model specs: per-arm Y|X,Z and per-arm Y|Z."""

    h1: DesignSpec
    h0: DesignSpec
    f1: DesignSpec
    f0: DesignSpec

    def __post_init__(self):
        for name in ("h1", "h0", "f1", "f0"):
            spec = getattr(self, name)
            if not spec.intercept:
                raise ValueError(
                    f"{name} must keep its intercept; without one the imputation "
                    f"residuals no longer sum to zero"
                )
        for name in ("f1", "f0"):
            spec = getattr(self, name)
            for term in spec.terms:
                if "x" in term.columns:
                    raise ValueError(
                        f"{name} must not reference x (term '{term.label}'); it is "
                        f"used to predict for patients whose X is unobserved"
                    )

    @classmethod
    def from_formulas(cls, h: str, f: str, h0: str | None = None, f0: str | None = None):
        """Build from formula strings, defaulting to the same spec per arm."""
        return cls(
            DesignSpec.parse(h),
            DesignSpec.parse(h0 if h0 is not None else h),
            DesignSpec.parse(f),
            DesignSpec.parse(f0 if f0 is not None else f),
        )


@dataclass
class ArmEstimate:
    """Arm mean with the imputations and fits that produced it."""

    arm: int
    mu: float
    n: int
    yhat: np.ndarray
    yhat_prime: np.ndarray
    h_fit: FittedGlm | None
    f_fit: FittedGlm | None


@dataclass
class EffectEstimate:
    """Treatment effect estimate with influence-based variance."""

    mu1: float
    mu0: float
    diff: float
    s2: float
    n_recruited: int
    influence: np.ndarray
    pi_hat: float
    pi_x_hat: float
    pi_y_hat: float
    models: dict[str, FittedGlm | None] = field(default_factory=dict)


def _fallback_ladder(spec: DesignSpec):
    yield spec
    mains = tuple(t for t in spec.terms if len(t.columns) == 1)
    if len(mains) != len(spec.terms):
        yield DesignSpec(spec.response, mains, spec.intercept)
    for k in range(len(mains) - 1, 0, -1):
        yield DesignSpec(spec.response, mains[:k], spec.intercept)


def fit_with_fallback(spec: DesignSpec, table) -> FittedGlm:
    """Fit ``spec``, walking down the fallback ladder on failure.

    Candidates with fewer than ``n_params + MIN_EXTRA_ROWS`` rows are
    skipped.  The intercept-only floor always succeeds (closed form), even
    for a degenerate all-0 or all-1 response.
    """
    n = len(np.asarray(table[spec.response]))
    for cand in _fallback_ladder(spec):
        if not cand.terms:
            break  # the closed-form floor below is this fit, done exactly
        if n < cand.n_params + MIN_EXTRA_ROWS:
            continue
        try:
            return fit_canonical_glm(cand, table, "binomial-logit")
        except (NonConvergence, CompleteSeparation, RankDeficient):
            continue
    return fit_intercept_only(table[spec.response])


def _subset(table, mask):
    return {k: v[mask] for k, v in table.items()}


def estimate_arm_mean(snapshot: InterimSnapshot, arm: int,
                      h_spec: DesignSpec, f_spec: DesignSpec) -> ArmEstimate:
    """Estimate one arm's response probability from a partial snapshot.

    Returns an :class:`ArmEstimate` whose prediction arrays align with the
    arm's recruited rows in snapshot order.  Raises EmptyCohort1 when the
    arm has no patient with an observed primary endpoint.
    """
    sel = snapshot.recruited & (snapshot.table["arm"] == arm)
    cy = snapshot.y_observed[sel]
    if not cy.any():
        raise EmptyCohort1(f"arm {arm} has no observed primary endpoint")
    sub = _subset(snapshot.table, sel)
    cx = snapshot.x_observed[sel]
    n = int(sel.sum())
    y = np.where(cy, np.nan_to_num(sub["y"]), 0.0)

    cohort2 = cx & ~cy
    if cohort2.any():
        h_fit = fit_with_fallback(h_spec, _subset(sub, cy))
        yhat = np.zeros(n)
        yhat[cx] = predict_mean(h_fit, _subset(sub, cx))
    else:
        # nothing to impute from X; the observed responses stand in for
        # the first-stage predictions and the algebra collapses as needed
        h_fit = None
        yhat = y.copy()

    cohort3 = ~cx
    if cohort3.any():
        ystar = np.where(cy, y, yhat)
        tab12 = _subset(sub, cx)
        tab12 = dict(tab12)
        tab12[f_spec.response] = ystar[cx]
        f_fit = fit_with_fallback(f_spec, tab12)
        yhat_prime = predict_mean(f_fit, sub)
    else:
        f_fit = None
        yhat_prime = yhat.copy()

    mu = float(np.mean(np.where(cy, y, np.where(cx, yhat, yhat_prime))))
    return ArmEstimate(arm, mu, n, yhat, yhat_prime, h_fit, f_fit)


def estimate_effect(snapshot: InterimSnapshot, models: WorkingModels) -> EffectEstimate:
    """Treatment effect estimate with its influence-based variance.

    The difference ``mu1 - mu0`` of the arm estimates is paired with the
    per-patient influence values over all recruited patients; their sample
    variance divided by the number recruited estimates the variance of the
    difference.  Raises ZeroVariance when that variance is exactly zero.
    """
    rec = snapshot.recruited
    n_rec = int(rec.sum())
    if n_rec < 2:
        raise ZeroVariance(f"only {n_rec} recruited patients")
    est1 = estimate_arm_mean(snapshot, 1, models.h1, models.f1)
    est0 = estimate_arm_mean(snapshot, 0, models.h0, models.f0)

    arm = snapshot.table["arm"][rec]
    cx = snapshot.x_observed[rec].astype(float)
    cy = snapshot.y_observed[rec].astype(float)
    y = np.where(cy > 0, np.nan_to_num(snapshot.table["y"][rec]), 0.0)
    pi = float(np.mean(arm == 1))
    pi_x = float(np.mean(cx))
    n_x = float(np.sum(cx))
    pi_y = float(np.sum(cy) / n_x) if n_x > 0 else float("nan")

    influence = np.zeros(n_rec)
    for est, mask, sign, denom in (
        (est1, arm == 1, 1.0, pi),
        (est0, arm == 0, -1.0, 1.0 - pi),
    ):
        yh = np.zeros(n_rec)
        yhp = np.zeros(n_rec)
        yh[mask] = est.yhat
        yhp[mask] = est.yhat_prime
        term = (
            cy * cx / (pi_y * pi_x) * (y - yh)
            + cx / pi_x * (yh - yhp)
            + yhp
            - est.mu
        )
        influence[mask] = sign * term[mask] / denom

    s2 = float(np.var(influence, ddof=1)) / n_rec
    if s2 <= 0.0:
        raise ZeroVariance("influence values are constant")
    return EffectEstimate(
        mu1=est1.mu, mu0=est0.mu, diff=est1.mu - est0.mu, s2=s2,
        n_recruited=n_rec, influence=influence,
        pi_hat=pi, pi_x_hat=pi_x, pi_y_hat=pi_y,
        models={"h1": est1.h_fit, "h0": est0.h_fit,
                "f1": est1.f_fit, "f0": est0.f_fit},
    )


def intercept_only_models() -> WorkingModels:
    spec = DesignSpec("y", (), True)
    return WorkingModels(spec, spec, spec, spec)


def reduce_for_method(snapshot: InterimSnapshot, method: str,
                      models: WorkingModels) -> tuple[InterimSnapshot, WorkingModels]:
    """Restrict a snapshot to the rows a given analysis method may use.

    ``proposal`` keeps everything.  ``standard`` keeps only patients with an
    observed primary endpoint (a complete-case analysis).  ``x_only`` keeps
    patients with an observed short-term endpoint and regresses on X alone,
    never predicting for covariate-only patients.
    """
    if method == "proposal":
        return snapshot, models
    if method == "standard":
        return snapshot.restrict(snapshot.y_observed), intercept_only_models()
    if method == "x_only":
        reduced = snapshot.restrict(snapshot.x_observed)
        h = DesignSpec.parse("y ~ x")
        f = DesignSpec("y", (), True)
        return reduced, WorkingModels(h, h, f, f)
    raise ValueError(f"unknown method '{method}'")
