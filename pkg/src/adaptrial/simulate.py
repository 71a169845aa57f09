"""Monte Carlo simulation of two-arm trials with staggered recruitment.

A replication draws one trial from the generative model: Poisson arrivals,
Bernoulli(1/2) assignment, covariates bootstrapped from a seed table, then
the short-term and primary endpoints from logistic models.  The whole
patient pool (up to the reassessment cap) is drawn up front, so extending
recruitment just means reading more rows; this keeps the no-reassessment
companion analysis of every replication on shared random numbers.

Randomness is counter based: each replication derives four independent
Philox streams (arrivals, assignment and covariates, short-term endpoint,
primary endpoint) keyed by (master seed, replication, stream).  Results are
therefore identical whatever the worker count or execution order.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields

import numpy as np

from .adaptive import (
    CombinationPlan,
    combination_test,
    observed_theta,
    reassess_sample_size,
    second_stage_statistic,
)
from .errors import AdaptrialError, FailureBudgetExceeded, TriggerUnreachable
from .estimator import (
    InterimSnapshot,
    WorkingModels,
    estimate_effect,
    intercept_only_models,
    reduce_for_method,
)
from .glm import (
    DesignSpec,
    expit,
    fit_canonical_glm,
    linear_predictor,
    normal_quantile,
    predict_mean,
)
from .monitoring import (
    CONTINUE,
    FutilityBoundary,
    assess_futility,
    blinded_information_fraction,
    final_variance_unblinded,
    information_fraction,
    interim_z,
)

METHODS = ("proposal", "standard", "x_only")

# numeric trigger scans step this many days before refining to the daily grid
_SCAN_STEP = 32
_T_EPS = 1e-9


@dataclass
class ScenarioConfig:
    """Fully resolved simulation scenario (defaults already applied)."""

    n_per_arm: int
    alpha: float
    beta: float
    rate_per_day: float
    lag_x_days: float | None
    lag_y_days: float
    covariates: dict[str, np.ndarray]
    x_model: dict | None
    y_model: dict
    working: WorkingModels
    method: str
    trigger_kind: str  # "fixed_day" or "information_fraction"
    trigger_day: float | None
    trigger_target: float | None
    boundary: FutilityBoundary
    ssr_enabled: bool
    cap_multiplier: float
    allow_decrease: bool
    theta_mode: str  # "design" or "observed"
    w: float
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def n_total(self) -> int:
        return 2 * self.n_per_arm

    @property
    def pool_size(self) -> int:
        if not self.ssr_enabled:
            return self.n_total
        return 2 * math.ceil(self.cap_multiplier * self.n_total / 2.0)

    @property
    def combination_plan(self) -> CombinationPlan:
        return CombinationPlan(self.w, self.alpha, self.beta)


def _stream(master_seed: int, rep: int, idx: int) -> np.random.Generator:
    key = ((idx + 1) << 96) | ((rep & 0xFFFFFFFF) << 64) | (master_seed & 0xFFFFFFFFFFFFFFFF)
    return np.random.Generator(np.random.Philox(key=key))


def generate_trial(config: ScenarioConfig, master_seed: int, rep: int) -> dict[str, np.ndarray]:
    """Draw one full patient pool; columns arrival, arm, z..., (x,) y."""
    n = config.pool_size
    gaps = _stream(master_seed, rep, 0).exponential(1.0 / config.rate_per_day, size=n)
    arrival = np.cumsum(gaps)

    g_cov = _stream(master_seed, rep, 1)
    arm = (g_cov.random(n) < 0.5).astype(float)
    seed_rows = len(next(iter(config.covariates.values())))
    idx = g_cov.integers(0, seed_rows, size=n)
    table: dict[str, np.ndarray] = {"arrival": arrival, "arm": arm}
    for name, col in config.covariates.items():
        table[name] = col[idx]

    model_view = dict(table)
    model_view["a"] = arm  # generative coefficient maps call the assignment "a"
    if config.x_model is not None:
        eta_x = linear_predictor(config.x_model, model_view)
        table["x"] = (_stream(master_seed, rep, 2).random(n) < expit(eta_x)).astype(float)
        model_view["x"] = table["x"]
    eta_y = linear_predictor(config.y_model, model_view)
    table["y"] = (_stream(master_seed, rep, 3).random(n) < expit(eta_y)).astype(float)
    return table


def snapshot_at(trial: dict, day: float, n_active: int,
                config: ScenarioConfig) -> InterimSnapshot:
    """Snapshot of the first ``n_active`` pool patients at calendar ``day``."""
    cols = {k: v[:n_active] for k, v in trial.items() if k != "arrival"}
    return InterimSnapshot.from_followup(
        cols, trial["arrival"][:n_active], day, config.lag_x_days, config.lag_y_days,
    )


def _t_hat(trial, day, config) -> float:
    """Method-appropriate information fraction at ``day`` (nan on failure)."""
    try:
        snap, models = reduce_for_method(
            snapshot_at(trial, day, config.n_total, config), config.method, config.working
        )
        effect = estimate_effect(snap, models)
        final_var = final_variance_unblinded(snap, config.n_total)
        return information_fraction(effect.s2, final_var)
    except AdaptrialError:
        return float("nan")


def interim_day(trial: dict, config: ScenarioConfig) -> float:
    """Calendar day of the interim look implied by the trigger."""
    if config.trigger_kind == "fixed_day":
        return float(config.trigger_day)
    target = float(config.trigger_target)
    n = config.n_total
    last = float(trial["arrival"][n - 1])
    if config.method == "standard":
        # the complete-case information fraction is exactly the cohort-1
        # share, so the crossing day follows from the arrival times alone
        k = math.ceil(target * n)
        if k > n:
            raise TriggerUnreachable(f"target {target} needs more than n patients")
        return float(math.ceil(trial["arrival"][k - 1] + config.lag_y_days))
    start = int(math.ceil(config.lag_y_days)) + 1
    end = int(math.ceil(last + config.lag_y_days))
    hit = None
    for day in range(start, end + 1, _SCAN_STEP):
        t = _t_hat(trial, float(day), config)
        if t >= target:
            hit = day
            break
    if hit is None:
        t = _t_hat(trial, float(end), config)
        if not t >= target:
            raise TriggerUnreachable(
                f"information fraction never reached {target} by day {end}"
            )
        hit = end
    # refine on the daily grid: walk back while the target still holds
    while hit > start:
        t = _t_hat(trial, float(hit - 1), config)
        if not t >= target:
            break
        hit -= 1
    return float(hit)


@dataclass
class RepResult:
    """Flat per-replication record (nan for fields that did not apply)."""

    rep: int
    error: str | None = None
    day: float = float("nan")
    n_recruited: int = 0
    pct_recruited: float = float("nan")
    t: float = float("nan")
    t_blinded: float = float("nan")
    s2: float = float("nan")
    diff: float = float("nan")
    z_t: float = float("nan")
    b_t: float = float("nan")
    cp: float = float("nan")
    threshold: float = float("nan")
    stopped: bool = False
    z1_final: float = float("nan")
    reject_no_interim: bool = False
    reject_futility_only: bool = False
    n_final: int = 0
    capped: bool = False
    rationale: str = ""
    t_tilde: float = float("nan")
    z2: float = float("nan")
    p_comb: float = float("nan")
    reject_ssr: bool = False
    z2_diag: float = float("nan")
    b1: float = float("nan")


def run_replication(config: ScenarioConfig, master_seed: int, rep: int) -> RepResult:
    """Simulate one trial end to end, with its no-reassessment companion.

    Every replication records three decisions on shared data: the single
    stage test on the originally planned patients, the futility-gated
    version of it, and (when enabled) the combination test at the
    reassessed sample size.
    """
    out = RepResult(rep=rep)
    trial = generate_trial(config, master_seed, rep)
    n = config.n_total
    z_a = normal_quantile(1.0 - config.alpha)

    day = interim_day(trial, config)
    snap_full = snapshot_at(trial, day, n, config)
    snap, models = reduce_for_method(snap_full, config.method, config.working)
    effect = estimate_effect(snap, models)
    state = assess_futility(effect, snap, n, config.boundary)

    out.day = day
    out.n_recruited = snap_full.n_recruited
    out.pct_recruited = 100.0 * snap_full.n_recruited / n
    out.t = state.t
    try:
        out.t_blinded = blinded_information_fraction(snap, models.h1, models.f1, n)
    except AdaptrialError:
        pass
    out.s2 = effect.s2
    out.diff = effect.diff
    out.z_t = state.z_t
    out.b_t = state.b_t
    out.cp = state.cp
    out.threshold = state.threshold
    out.stopped = state.decision != CONTINUE

    # single stage analysis on the originally planned sample size
    day_full = float(trial["arrival"][n - 1]) + config.lag_y_days
    final_snap = snapshot_at(trial, day_full, n, config)
    final_eff = estimate_effect(final_snap, intercept_only_models())
    out.z1_final = interim_z(final_eff.diff, final_eff.s2)
    out.b1 = out.z1_final
    out.reject_no_interim = out.z1_final > z_a
    out.reject_futility_only = (not out.stopped) and out.reject_no_interim
    t_diag = min(max(state.t, _T_EPS), 1.0 - _T_EPS)
    out.z2_diag = second_stage_statistic(out.z1_final, state.z_t, t_diag)

    if not config.ssr_enabled:
        out.n_final = out.n_recruited if out.stopped else n
        out.reject_ssr = out.reject_futility_only
        return out

    if out.stopped:
        out.n_final = out.n_recruited
        out.reject_ssr = False
        return out

    theta = None
    if config.theta_mode == "observed":
        theta = observed_theta(state.z_t, state.t)
    res = reassess_sample_size(
        state.z_t, config.w, n, out.n_recruited, config.combination_plan,
        cap_multiplier=config.cap_multiplier, allow_decrease=config.allow_decrease,
        theta=theta,
    )
    out.n_final = res.n_new
    out.capped = res.capped
    out.rationale = res.rationale

    day_new = float(trial["arrival"][res.n_new - 1]) + config.lag_y_days
    snap_new = snapshot_at(trial, day_new, res.n_new, config)
    eff_new = estimate_effect(snap_new, intercept_only_models())
    z_new = interim_z(eff_new.diff, eff_new.s2)
    t_tilde = min(max(eff_new.s2 / effect.s2, _T_EPS), 1.0 - _T_EPS)
    out.t_tilde = t_tilde
    out.z2 = second_stage_statistic(z_new, state.z_t, t_tilde)
    out.p_comb, out.reject_ssr = combination_test(state.z_t, out.z2, config.combination_plan)
    return out


def _safe_replication(args) -> RepResult:
    config, master_seed, rep = args
    try:
        return run_replication(config, master_seed, rep)
    except Exception as exc:  # noqa: BLE001 - failures are budgeted, not fatal
        return RepResult(rep=rep, error=f"{type(exc).__name__}: {exc}")


@dataclass
class OperatingCharacteristics:
    """Aggregated Monte Carlo results with standard errors on the rates."""

    reps: int
    failures: int
    stop_futility_rate: float
    stop_futility_se: float
    reject_rate_no_interim: float
    reject_rate_no_ssr: float
    reject_rate_ssr: float
    reject_se: float
    power_loss: float
    mean_t: float
    mean_days_to_interim: float
    mean_pct_recruited: float
    mean_sample_size: float
    sd_sample_size: float
    sample_size_quantiles: tuple[float, float, float, float, float]
    switch_up_rate: float
    switch_down_rate: float
    at_cap_rate: float

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out


def summarize(results: list[RepResult], config: ScenarioConfig) -> OperatingCharacteristics:
    """Reduce per-replication records to operating characteristics."""
    ok = [r for r in results if r.error is None]
    failures = len(results) - len(ok)
    m = len(ok)
    if m == 0:
        raise AdaptrialError("no replication succeeded")

    def rate(flag):
        return float(np.mean([getattr(r, flag) for r in ok]))

    def se(p):
        return math.sqrt(max(p * (1.0 - p), 0.0) / m)

    stop = rate("stopped")
    no_int = rate("reject_no_interim")
    no_ssr = rate("reject_futility_only")
    with_ssr = rate("reject_ssr")
    n_final = np.array([r.n_final for r in ok], dtype=float)
    cont = [r for r in ok if not r.stopped]
    n_tot = config.n_total
    if cont:
        up = float(np.mean([r.n_final > n_tot for r in cont]))
        down = float(np.mean([r.n_final < n_tot for r in cont]))
        at_cap = float(np.mean([r.capped for r in cont]))
    else:
        up = down = at_cap = float("nan")
    return OperatingCharacteristics(
        reps=m,
        failures=failures,
        stop_futility_rate=stop,
        stop_futility_se=se(stop),
        reject_rate_no_interim=no_int,
        reject_rate_no_ssr=no_ssr,
        reject_rate_ssr=with_ssr,
        reject_se=se(with_ssr),
        power_loss=no_int - no_ssr,
        mean_t=float(np.nanmean([r.t for r in ok])),
        mean_days_to_interim=float(np.nanmean([r.day for r in ok])),
        mean_pct_recruited=float(np.nanmean([r.pct_recruited for r in ok])),
        mean_sample_size=float(np.mean(n_final)),
        sd_sample_size=float(np.std(n_final, ddof=1)) if m > 1 else 0.0,
        sample_size_quantiles=tuple(
            float(np.quantile(n_final, q)) for q in (0.0, 0.25, 0.5, 0.75, 1.0)
        ),
        switch_up_rate=up,
        switch_down_rate=down,
        at_cap_rate=at_cap,
    )


FAILURE_BUDGET = 0.001


def run_monte_carlo(config: ScenarioConfig, reps: int, master_seed: int,
                    threads: int = 1) -> tuple[OperatingCharacteristics, list[RepResult]]:
    """Run ``reps`` replications, in parallel when ``threads`` > 1.

    Replication order and random streams are independent of the worker
    count, so outputs are identical for any ``threads``.  Failed
    replications are tolerated up to ``FAILURE_BUDGET`` of the total;
    beyond that an AdaptrialError is raised.
    """
    jobs = [(config, master_seed, rep) for rep in range(reps)]
    if threads > 1:
        chunk = max(1, reps // (threads * 8))
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_safe_replication, jobs, chunksize=chunk))
    else:
        results = [_safe_replication(j) for j in jobs]
    failures = [r for r in results if r.error is not None]
    if len(failures) > FAILURE_BUDGET * reps:
        sample = "; ".join(r.error for r in failures[:3])
        raise FailureBudgetExceeded(
            f"{len(failures)} of {reps} replications failed (budget "
            f"{FAILURE_BUDGET:.1%}): {sample}"
        )
    return summarize(results, config), results


@dataclass
class R2Result:
    """Latent-scale variance decomposition of a fitted outcome model."""

    total: float
    from_x: float
    from_z: float


def compute_r_squared(table, outcome_spec: DesignSpec,
                      x_on_z_spec: DesignSpec | None = None) -> R2Result:
    """Share of latent outcome variance explained, split into X and Z parts.

    The outcome model is logistic; explained variance is the empirical
    variance of its linear predictor against a residual scale of pi^2 / 4.
    When the outcome model contains a plain ``x`` term, ``x_on_z_spec``
    (fit by least squares) supplies the projection of X onto the
    covariates; the X share is then the part of the X coefficient's
    contribution orthogonal to the covariates.  The two shares add up to
    the total exactly provided the projection spans every covariate term
    of the outcome model, interactions included.
    """
    fit = fit_canonical_glm(outcome_spec, table, "binomial-logit")
    lin = outcome_spec.matrix(table) @ fit.coefficients
    denom = float(np.var(lin, ddof=1)) + math.pi ** 2 / 4.0
    total = float(np.var(lin, ddof=1)) / denom

    x_positions = [
        i for i, t in enumerate(outcome_spec.terms)
        if t.columns == ("x",) and t.transform == "identity"
    ]
    if not x_positions:
        return R2Result(total=total, from_x=0.0, from_z=total)
    if x_on_z_spec is None:
        raise ValueError("outcome model contains x: need x_on_z_spec to split")
    beta1 = float(fit.coefficients[x_positions[0] + (1 if outcome_spec.intercept else 0)])
    qfit = fit_canonical_glm(x_on_z_spec, table, "gaussian-identity")
    qhat = predict_mean(qfit, table)
    resid = np.asarray(table["x"], dtype=float) - qhat
    from_x = beta1 ** 2 * float(np.var(resid, ddof=1)) / denom
    z_part = lin - beta1 * resid
    from_z = float(np.var(z_part, ddof=1)) / denom
    return R2Result(total=total, from_x=from_x, from_z=from_z)
