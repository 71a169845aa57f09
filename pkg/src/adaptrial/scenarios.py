"""Bundled simulation scenarios.

Each builder returns a plain nested dict in the same shape the TOML config
files use, so a scenario can be produced either way and the two routes stay
interchangeable.  Covariates are resampled with replacement from a bundled
table of 132 baseline profiles (a synthetic stand-in with one standardized
continuous covariate, one binary and one three-level factor).

The generative coefficient sets are calibrated against that table:

* ``single_covariate``: one continuous covariate drives the outcome, there
  is no short-term endpoint, and a knob c scales how prognostic the
  covariate is.  At c = 0 the marginal success probabilities are
  0.627 (treatment) and 0.443 (control); at c = 2 they are 0.60 / 0.45 and
  the outcome model explains about 20 percent of the latent variance.
* ``short_term``: a short-term endpoint X plus three covariates with
  interactions; marginals 0.49 (treatment) / 0.60 (control).  Variants
  select progressively misspecified working models.
* ``ssr``: X plus one covariate, effect scaled by c in {0, 0.5, 1, 1.5};
  control marginal 0.47 at every c, treatment 0.60 at c = 1, and an exact
  null at c = 0 because every treatment term carries the c factor.

The first scenario recruits 8 patients a month; the other two recruit 15 a
month, which reproduces the cohort split those designs are quoted with
(about 48 percent of patients fully observed when 75 percent are
recruited, rather than 61 percent under the slower rate).
"""

from __future__ import annotations

import csv
import importlib.resources

import numpy as np

DAYS_PER_MONTH = 30.4375
DEFAULT_RATE_PER_MONTH = 8.0
DEFAULT_LAG_X_MONTHS = 4.0
DEFAULT_LAG_Y_MONTHS = 15.0


def load_seed_covariates() -> dict[str, np.ndarray]:
    """The bundled 132-row covariate table as columns z1, z2, z3."""
    ref = importlib.resources.files("adaptrial.data").joinpath("seed_covariates.csv")
    with ref.open("r", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return {
        name: np.array([float(r[name]) for r in rows])
        for name in ("z1", "z2", "z3")
    }


def _base(n_per_arm: int) -> dict:
    return {
        "design": {
            "n_per_arm": n_per_arm,
            "alpha": 0.025,
            "beta": 0.10,
        },
        "recruitment": {
            "rate_per_month": DEFAULT_RATE_PER_MONTH,
            "lag_x_months": DEFAULT_LAG_X_MONTHS,
            "lag_y_months": DEFAULT_LAG_Y_MONTHS,
        },
        "interim": {
            "method": "proposal",
            "trigger": {"kind": "fixed_day"},
        },
        "boundary": {"kind": "obrien_fleming"},
        "ssr": {"enabled": False},
    }


def single_covariate(c: float, effect: str = "superiority",
                     n_per_arm: int = 227) -> dict:
    """One prognostic covariate, no short-term endpoint.

    ``effect`` is ``"superiority"`` (treatment works) or ``"null"`` (all
    treatment terms zeroed; used for futility operating characteristics).
    """
    if effect not in ("superiority", "null"):
        raise ValueError(f"unknown effect '{effect}'")
    on = 1.0 if effect == "superiority" else 0.0
    cfg = _base(n_per_arm)
    cfg["recruitment"]["lag_x_months"] = None  # no short-term endpoint
    cfg["generate"] = {
        "y_model": {
            "intercept": -0.23,
            "a": 0.75 * on,
            "z1": c * 0.39,
            "a:z1": c * 0.17 * on,
        },
    }
    cfg["working_models"] = {"h": "y ~ z1", "f": "y ~ z1"}
    return cfg


# short-term scenario: control-arm linear predictor and treatment additions,
# intercept and treatment main effect calibrated to marginals 0.60 / 0.49
_ST_CONTROL = {
    "intercept": -0.453403,
    "x": 1.9,
    "z1": 0.35,
    "z2": 0.25,
    "z3": -0.2,
    "z1:z2": 0.4,
    "z1:z3": -0.3,
}
_ST_TREATMENT = {
    "a": -0.395150,
    "a:x": -0.4,
    "a:z1": 0.2,
    "a:z2": -0.15,
    "a:z3": 0.1,
    "a:z1:z2": 0.3,
    "a:z1:z3": -0.2,
}
_ST_X_MODEL = {"intercept": 0.1, "z1": 0.8, "z2": -0.4, "z3": 0.3}

SHORT_TERM_WORKING = {
    "correct": {
        "h": "y ~ x + z1 + z2 + z3 + z1:z2 + z1:z3",
        "f": "y ~ z1 + z2 + z3 + z1:z2 + z1:z3",
    },
    "no_interaction": {"h": "y ~ x + z1 + z2 + z3", "f": "y ~ z1 + z2 + z3"},
    "z1_only": {"h": "y ~ x + z1", "f": "y ~ z1"},
    "abs_z1": {"h": "y ~ x + abs(z1)", "f": "y ~ abs(z1)"},
    "z3_only": {"h": "y ~ x + z3", "f": "y ~ z3"},
}


def short_term(working: str = "correct", effect: str = "superiority",
               n_per_arm: int = 421) -> dict:
    """Short-term endpoint plus three covariates with interactions.

    ``working`` picks one of the working model variants in
    ``SHORT_TERM_WORKING``; the generative model never changes, so variants
    differ only in how well the analysis model approximates it.
    """
    if working not in SHORT_TERM_WORKING:
        raise ValueError(f"unknown working model set '{working}'")
    if effect not in ("superiority", "null"):
        raise ValueError(f"unknown effect '{effect}'")
    y_model = dict(_ST_CONTROL)
    if effect == "superiority":
        y_model.update(_ST_TREATMENT)
    cfg = _base(n_per_arm)
    cfg["recruitment"]["rate_per_month"] = 15.0
    cfg["generate"] = {"x_model": dict(_ST_X_MODEL), "y_model": y_model}
    cfg["working_models"] = dict(SHORT_TERM_WORKING[working])
    return cfg


def short_term_true_diff() -> float:
    """Marginal treatment effect of the superiority variant, by enumeration."""
    from .glm import expit, linear_predictor

    z = load_seed_covariates()
    px = expit(linear_predictor(_ST_X_MODEL, z))
    model = dict(_ST_CONTROL)
    model.update(_ST_TREATMENT)
    diff = 0.0
    for a in (1.0, 0.0):
        sign = 1.0 if a == 1.0 else -1.0
        for xv, wx in ((1.0, px), (0.0, 1.0 - px)):
            t = dict(z)
            t["a"] = np.full_like(z["z1"], a)
            t["x"] = np.full_like(z["z1"], xv)
            diff += sign * float(np.mean(wx * expit(linear_predictor(model, t))))
    return diff


# reassessment scenario: treatment terms all scale with c, so c = 0 is an
# exact null; intercept and a-coefficient calibrated to 0.47 / 0.60 at c = 1
_SSR_OMEGA = {
    "intercept": -1.031719,
    "x": 1.6,
    "z1": 0.4,
    "a": 0.546538,
    "a:x": 0.30,
    "a:z1": 0.17,
}


def ssr(c: float, n_per_arm: int = 319) -> dict:
    """Sample size reassessment scenario with effect knob c."""
    cfg = _base(n_per_arm)
    cfg["recruitment"]["rate_per_month"] = 15.0
    cfg["generate"] = {
        "x_model": {"intercept": 0.2, "z1": 0.9},
        "y_model": {
            "intercept": _SSR_OMEGA["intercept"],
            "x": _SSR_OMEGA["x"],
            "z1": _SSR_OMEGA["z1"],
            "a": c * _SSR_OMEGA["a"],
            "a:x": c * _SSR_OMEGA["a:x"],
            "a:z1": c * _SSR_OMEGA["a:z1"],
        },
    }
    cfg["working_models"] = {"h": "y ~ x + z1", "f": "y ~ z1"}
    cfg["ssr"] = {
        "enabled": True,
        "cap_multiplier": 2.0,
        "allow_decrease": True,
        "theta_mode": "design",
    }
    return cfg


PRESETS = {
    "single_covariate": single_covariate,
    "short_term": short_term,
    "ssr": ssr,
}
