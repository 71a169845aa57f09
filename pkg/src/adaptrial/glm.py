"""Canonical-link GLM fitting on columnar data, plus normal distribution helpers.

Data is represented as a plain mapping from column name to a 1-d numpy float
array ("table").  Model structure is a :class:`DesignSpec` parsed from a small
formula grammar::

    y ~ x + z1 + z1:z2 + abs(z1)

Terms are main effects, products of two or three columns, or an absolute
value transform of one column.  An intercept is always included unless the
term list contains a literal ``0``.

Two families are supported, both with their canonical link:

* ``"binomial-logit"``: iteratively reweighted least squares.  Responses may
  be fractional in [0, 1] (quasi-binomial working responses), which the
  imputation steps of the interim estimator rely on.
* ``"gaussian-identity"``: ordinary least squares, solved in closed form.

The normal CDF and quantile live here because every other module needs them
and the package does not depend on scipy at runtime.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CompleteSeparation, MissingColumn, NonConvergence, RankDeficient

MAX_ITER = 25
DEVIANCE_RTOL = 1e-8
SEPARATION_BOUND = 30.0

FAMILIES = ("binomial-logit", "gaussian-identity")


def expit(eta):
    """Numerically stable inverse logit, elementwise."""
    eta = np.asarray(eta, dtype=float)
    out = np.empty_like(eta)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    e = np.exp(eta[~pos])
    out[~pos] = e / (1.0 + e)
    return out


@dataclass(frozen=True)
class Term:
    """One non-intercept model term: a product of columns or abs(column)."""

    columns: tuple[str, ...]
    transform: str = "identity"  # "identity" or "abs"

    @property
    def label(self) -> str:
        if self.transform == "abs":
            return f"abs({self.columns[0]})"
        return ":".join(self.columns)

    def evaluate(self, table) -> np.ndarray:
        cols = []
        for name in self.columns:
            if name not in table:
                raise MissingColumn(f"column '{name}' required by term '{self.label}'")
            cols.append(np.asarray(table[name], dtype=float))
        if self.transform == "abs":
            return np.abs(cols[0])
        out = cols[0].copy()
        for c in cols[1:]:
            out = out * c
        return out


def parse_term(token: str) -> Term:
    """Parse a single term label such as ``z1``, ``z1:z2`` or ``abs(z1)``."""
    token = token.strip()
    if token.startswith("abs(") and token.endswith(")"):
        inner = token[4:-1].strip()
        if not inner or ":" in inner:
            raise ValueError(f"abs() takes a single column name, got '{token}'")
        return Term((inner,), "abs")
    parts = [p.strip() for p in token.split(":")]
    if not all(parts) or len(parts) > 3:
        raise ValueError(f"bad term '{token}': expected 1 to 3 column names")
    return Term(tuple(parts))


@dataclass(frozen=True)
class DesignSpec:
    """Response name plus ordered model terms (intercept handled separately)."""

    response: str
    terms: tuple[Term, ...] = ()
    intercept: bool = True

    @classmethod
    def parse(cls, formula: str) -> "DesignSpec":
        """Parse ``"y ~ x + z1 + z1:z2"``.  ``1`` is the (default) intercept,
        a literal ``0`` suppresses it."""
        if "~" not in formula:
            raise ValueError(f"formula '{formula}' lacks '~'")
        lhs, rhs = formula.split("~", 1)
        response = lhs.strip()
        if not response:
            raise ValueError(f"formula '{formula}' lacks a response")
        terms = []
        intercept = True
        for token in rhs.split("+"):
            token = token.strip()
            if not token or token == "1":
                continue
            if token in ("0", "-1"):
                intercept = False
                continue
            terms.append(parse_term(token))
        labels = [t.label for t in terms]
        if len(set(labels)) != len(labels):
            raise ValueError(f"formula '{formula}' repeats a term")
        return cls(response, tuple(terms), intercept)

    @property
    def n_params(self) -> int:
        return len(self.terms) + (1 if self.intercept else 0)

    def column_labels(self) -> list[str]:
        labels = ["(intercept)"] if self.intercept else []
        labels.extend(t.label for t in self.terms)
        return labels

    def matrix(self, table) -> np.ndarray:
        """Build the dense design matrix for this spec over ``table``."""
        n = len(np.asarray(table[self.response])) if self.response in table else None
        cols = []
        if self.intercept:
            cols.append(None)  # placeholder, filled once n is known
        for term in self.terms:
            cols.append(term.evaluate(table))
        if n is None:
            for c in cols:
                if c is not None:
                    n = len(c)
                    break
        if n is None:
            # intercept-only spec and the response is absent: cannot size it
            raise MissingColumn(f"column '{self.response}' not in table")
        out = np.empty((n, len(cols)))
        for j, c in enumerate(cols):
            out[:, j] = 1.0 if c is None else c
        return out

    def describe(self) -> str:
        rhs = " + ".join(t.label for t in self.terms) if self.terms else "1"
        if not self.intercept:
            rhs = "0 + " + rhs if self.terms else "0"
        return f"{self.response} ~ {rhs}"


@dataclass
class FittedGlm:
    """A fitted model: spec, family, coefficients and fit diagnostics.

    ``fitted_constant`` is set only for the degenerate intercept-only case
    where the response mean is exactly 0 or 1; predictions then return that
    constant instead of going through the (infinite) canonical parameter.
    """

    design: DesignSpec
    family: str
    coefficients: np.ndarray
    deviance: float
    n_iter: int
    converged: bool
    n_obs: int
    fitted_constant: float | None = field(default=None)


def _binomial_deviance(y, mu):
    mu = np.clip(mu, 1e-12, 1.0 - 1e-12)
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(y > 0, y * np.log(np.where(y > 0, y, 1.0) / mu), 0.0)
        b = np.where(y < 1, (1 - y) * np.log(np.where(y < 1, 1 - y, 1.0) / (1 - mu)), 0.0)
    return 2.0 * float(np.sum(a + b))


def _check_rank(x: np.ndarray, labels) -> None:
    if x.shape[0] < x.shape[1]:
        raise RankDeficient(
            f"{x.shape[0]} rows for {x.shape[1]} parameters ({', '.join(labels)})"
        )
    s = np.linalg.svd(x, compute_uv=False)
    if s[0] == 0.0 or s[-1] <= 1e-10 * s[0]:
        raise RankDeficient(f"design matrix is rank deficient ({', '.join(labels)})")


def fit_canonical_glm(design: DesignSpec, table, family: str) -> FittedGlm:
    """Fit ``design`` to ``table`` by maximum (quasi-)likelihood.

    Args:
        design: model structure; ``design.response`` must be a column of
            ``table`` with values in [0, 1] for the binomial family.
        table: mapping of column name to 1-d array.
        family: one of ``FAMILIES``.

    Returns:
        FittedGlm with canonical-link coefficients.

    Raises:
        MissingColumn: a term or the response is absent from ``table``.
        RankDeficient: the design matrix has linearly dependent columns.
        CompleteSeparation: a logistic coefficient escaped past 30.
        NonConvergence: IRLS failed to converge in 25 iterations.
    """
    if family not in FAMILIES:
        raise ValueError(f"unknown family '{family}'")
    if design.response not in table:
        raise MissingColumn(f"response column '{design.response}' not in table")
    y = np.asarray(table[design.response], dtype=float)
    x = design.matrix(table)
    _check_rank(x, design.column_labels())

    if family == "gaussian-identity":
        xtx = x.T @ x
        beta = np.linalg.solve(xtx, x.T @ y)
        resid = y - x @ beta
        return FittedGlm(design, family, beta, float(resid @ resid), 1, True, len(y))

    # Logistic IRLS from beta = 0, converging on relative deviance change.
    beta = np.zeros(x.shape[1])
    eta = x @ beta
    mu = expit(eta)
    dev = _binomial_deviance(y, mu)
    for it in range(1, MAX_ITER + 1):
        w = np.maximum(mu * (1.0 - mu), 1e-10)
        z = eta + (y - mu) / w
        xw = x * w[:, None]
        beta = np.linalg.solve(xw.T @ x, xw.T @ z)
        if np.max(np.abs(beta)) > SEPARATION_BOUND:
            raise CompleteSeparation(
                f"coefficient left [-{SEPARATION_BOUND:g}, {SEPARATION_BOUND:g}] "
                f"fitting {design.describe()}"
            )
        eta = x @ beta
        mu = expit(eta)
        new_dev = _binomial_deviance(y, mu)
        rel = abs(new_dev - dev) / (abs(dev) + 1e-10)
        dev = new_dev
        if rel < DEVIANCE_RTOL:
            return FittedGlm(design, family, beta, dev, it, True, len(y))
    raise NonConvergence(f"IRLS did not converge fitting {design.describe()}")


def fit_intercept_only(response_values, family: str = "binomial-logit") -> FittedGlm:
    """Closed-form intercept-only fit.

    For the logistic family the MLE is logit of the mean.  When the mean is
    exactly 0 or 1 the canonical parameter is infinite; the fit then carries
    the mean itself and predicts it directly.
    """
    y = np.asarray(response_values, dtype=float)
    design = DesignSpec("y", (), True)
    ybar = float(np.mean(y))
    if family == "gaussian-identity":
        rss = float(np.sum((y - ybar) ** 2))
        return FittedGlm(design, family, np.array([ybar]), rss, 1, True, len(y))
    if 0.0 < ybar < 1.0:
        coef = math.log(ybar / (1.0 - ybar))
        dev = _binomial_deviance(y, np.full_like(y, ybar))
        return FittedGlm(design, family, np.array([coef]), dev, 1, True, len(y))
    sign = 1.0 if ybar >= 1.0 else -1.0
    return FittedGlm(
        design, "binomial-logit", np.array([sign * SEPARATION_BOUND]),
        0.0, 1, True, len(y), fitted_constant=ybar,
    )


def predict_mean(fit: FittedGlm, table) -> np.ndarray:
    """Predicted mean response for every row of ``table``."""
    if fit.fitted_constant is not None:
        n = len(np.asarray(next(iter(table.values()))))
        return np.full(n, fit.fitted_constant)
    # the design matrix builder needs a response column only to size an
    # intercept-only matrix; give it any existing column instead
    spec = fit.design
    if spec.response not in table:
        some = next(iter(table))
        spec = DesignSpec(some, spec.terms, spec.intercept)
    eta = spec.matrix(table) @ fit.coefficients
    if fit.family == "binomial-logit":
        return expit(eta)
    return eta


def linear_predictor(coefficients: dict, table) -> np.ndarray:
    """Evaluate a coefficient map such as ``{"intercept": -0.2, "a:z1": 0.4}``.

    Keys other than ``intercept`` use the term grammar, so products and
    abs() transforms work the same way they do in model formulas.
    """
    n = len(np.asarray(next(iter(table.values()))))
    eta = np.zeros(n)
    for key, coef in coefficients.items():
        if key == "intercept":
            eta = eta + float(coef)
        else:
            eta = eta + float(coef) * parse_term(key).evaluate(table)
    return eta


# ---------------------------------------------------------------------------
# Normal distribution helpers.

_SQRT2 = math.sqrt(2.0)


def normal_cdf(x: float) -> float:
    """Standard normal CDF via the complementary error function."""
    return 0.5 * math.erfc(-x / _SQRT2)


# Rational approximation coefficients (Acklam), polished by one Newton step.
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)


def normal_quantile(p: float) -> float:
    """Inverse standard normal CDF, accurate to about 1e-12 after polishing."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"quantile requires 0 < p < 1, got {p}")
    p_low, p_high = 0.02425, 1.0 - 0.02425
    if p < p_low:
        q = math.sqrt(-2.0 * math.log(p))
        x = ((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
             / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    elif p <= p_high:
        q = p - 0.5
        r = q * q
        x = ((((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
             / (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0))
    else:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        x = -((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
              / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    # One Newton step against the erfc-based CDF tightens the tail error.
    err = normal_cdf(x) - p
    x -= err * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
    return x
