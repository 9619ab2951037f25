"""Ordinary least squares with classical standard errors and p-values."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import linalg as sla
from scipy import stats as sps

__all__ = ["RegressionResult", "ols", "standardize"]


@dataclass(frozen=True)
class RegressionResult:
    names: tuple
    coefficients: np.ndarray
    standard_errors: np.ndarray
    t_statistics: np.ndarray
    p_values: np.ndarray
    r_squared: float
    n_obs: int

    def as_table(self) -> list:
        return [
            {
                "name": name,
                "coefficient": float(c),
                "standard_error": float(se),
                "t_statistic": float(t),
                "p_value": float(p),
            }
            for name, c, se, t, p in zip(
                self.names,
                self.coefficients,
                self.standard_errors,
                self.t_statistics,
                self.p_values,
            )
        ]


def ols(
    design: np.ndarray,
    response: np.ndarray,
    names: Optional[Sequence[str]] = None,
) -> RegressionResult:
    """Fit response ~ design by least squares.

    The design matrix must include its own intercept column and be full
    rank with more observations than predictors.  Standard errors are the
    classical homoskedastic ones; p-values are two-sided t-tests with
    n - p degrees of freedom.
    """
    x = np.asarray(design, dtype=float)
    y = np.asarray(response, dtype=float)
    if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.size:
        raise ValueError("design must be (n, p) and response length n")
    n, p = x.shape
    if names is None:
        names = tuple(f"x{j}" for j in range(p))
    if len(names) != p:
        raise ValueError("one name per design column required")
    if n <= p:
        raise ValueError(f"need more observations ({n}) than predictors ({p})")

    # pivoted QR exposes which columns break full rank
    _, r_mat, pivots = sla.qr(x, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r_mat))
    tol = diag.max() * max(n, p) * np.finfo(float).eps if diag.size else 0.0
    rank = int((diag > tol).sum())
    if rank < p:
        offending = [names[j] for j in sorted(pivots[rank:])]
        raise ValueError(f"design matrix is rank deficient; columns {offending}")

    gram = x.T @ x
    beta = np.linalg.solve(gram, x.T @ y)
    residuals = y - x @ beta
    dof = n - p
    sigma2 = float(residuals @ residuals) / dof
    cov = sigma2 * np.linalg.inv(gram)
    se = np.sqrt(np.diag(cov))
    with np.errstate(divide="ignore", invalid="ignore"):
        t_stats = np.where(se > 0, beta / se, np.inf * np.sign(beta))
    p_values = 2.0 * sps.t.sf(np.abs(t_stats), dof)

    ss_res = float(residuals @ residuals)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res == 0 else np.nan)
    return RegressionResult(
        names=tuple(names),
        coefficients=beta,
        standard_errors=se,
        t_statistics=t_stats,
        p_values=p_values,
        r_squared=r2,
        n_obs=n,
    )


def standardize(values) -> np.ndarray:
    """Center to zero mean and scale to unit sample standard deviation."""
    v = np.asarray(values, dtype=float)
    if v.ndim != 1:
        raise ValueError("standardize expects a vector")
    sd = v.std(ddof=1)
    if sd == 0 or not np.isfinite(sd):
        raise ValueError("cannot standardize a constant vector")
    return (v - v.mean()) / sd
