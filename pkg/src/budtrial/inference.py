"""Frequentist analysis of completed trials: Fisher tests, bootstrap-calibrated
tests and effect estimates."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import InvalidSpecError
from .posteriors import TrialHistory


class UnstableQuantileWarning(UserWarning):
    """Too few null replications for a stable tail quantile."""


@dataclass(frozen=True)
class TwoByTwo:
    arm_responders: int
    arm_nonresponders: int
    control_responders: int
    control_nonresponders: int

    def __post_init__(self):
        if min(self.arm_responders, self.arm_nonresponders, self.control_responders, self.control_nonresponders) < 0:
            raise InvalidSpecError("table counts must be nonnegative")


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float | None
    reject: bool
    level: float


def fisher_exact_one_sided(table: TwoByTwo) -> float:
    """P-value of Fisher's exact test against the alternative arm rate > control rate.

    Tables with an empty arm or control margin return 1.
    """
    return float(
        fisher_one_sided_arrays(
            table.arm_responders,
            table.arm_responders + table.arm_nonresponders,
            table.control_responders,
            table.control_responders + table.control_nonresponders,
        )
    )


def fisher_one_sided_arrays(x_arm, n_arm, x_ctrl, n_ctrl):
    """Vectorised one-sided Fisher p-values; P(X >= x_arm) for the hypergeometric X."""
    x_arm, n_arm, x_ctrl, n_ctrl = (np.asarray(v, dtype=np.int64) for v in (x_arm, n_arm, x_ctrl, n_ctrl))
    total = n_arm + n_ctrl
    succ = x_arm + x_ctrl
    p = stats.hypergeom.sf(x_arm - 1, total, succ, n_arm)
    return np.where((n_arm == 0) | (n_ctrl == 0), 1.0, np.clip(p, 0.0, 1.0))


def fisher_by_enumeration(x_arm, n_arm, x_ctrl, n_ctrl) -> float:
    """Same p-value by listing every table with the observed margins (for checking)."""
    from math import comb

    if n_arm == 0 or n_ctrl == 0:
        return 1.0
    s = x_arm + x_ctrl
    total = comb(n_arm + n_ctrl, s)
    tail = sum(comb(n_arm, k) * comb(n_ctrl, s - k) for k in range(x_arm, min(n_arm, s) + 1))
    return tail / total


def difference_statistic(x_arm, n_arm, x_ctrl, n_ctrl):
    """Observed response-rate difference; 0 when either group is empty."""
    x_arm, n_arm, x_ctrl, n_ctrl = (np.asarray(v, dtype=float) for v in (x_arm, n_arm, x_ctrl, n_ctrl))
    ok = (n_arm > 0) & (n_ctrl > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        d = x_arm / n_arm - x_ctrl / n_ctrl
    return np.where(ok, d, 0.0)


def pooled_z_statistic(x_arm, n_arm, x_ctrl, n_ctrl):
    """Two-proportion z statistic with pooled variance; 0 when undefined."""
    x_arm, n_arm, x_ctrl, n_ctrl = (np.asarray(v, dtype=float) for v in (x_arm, n_arm, x_ctrl, n_ctrl))
    with np.errstate(divide="ignore", invalid="ignore"):
        pooled = (x_arm + x_ctrl) / (n_arm + n_ctrl)
        se = np.sqrt(pooled * (1 - pooled) * (1 / n_arm + 1 / n_ctrl))
        z = (x_arm / n_arm - x_ctrl / n_ctrl) / se
    return np.where(np.isfinite(z), z, 0.0)


STATISTICS = {"difference": difference_statistic, "pooled_z": pooled_z_statistic}


def bootstrap_threshold(null_statistics, level: float):
    """Rejection threshold: the empirical (1 - level) quantile of null statistics, per column."""
    null = np.asarray(null_statistics, dtype=float)
    if not 0 < level < 1:
        raise InvalidSpecError("level must lie in (0, 1)")
    if null.shape[0] < 200:
        warnings.warn(f"only {null.shape[0]} null replications; the tail quantile is unstable", UnstableQuantileWarning)
    return np.quantile(null, 1.0 - level, axis=0, method="higher")


def bootstrap_calibrated_test(statistics, null_statistics, level: float = 0.1):
    """Decisions ``statistic > threshold`` with the threshold calibrated on null replications.

    Returns ``(threshold, decisions)``.
    """
    thr = bootstrap_threshold(null_statistics, level)
    return thr, np.asarray(statistics) > thr


def effect_estimates(history: TrialHistory, truth=None, prior=(1.0, 1.0)):
    """Posterior-mean and raw-proportion effects of arms >= 1 against arm 0.

    With ``truth`` (true response rates per arm) the squared errors are returned too.
    """
    alpha, beta = history.beta_arrays()
    post = alpha / (alpha + beta)
    n = np.asarray(history.assignment_counts, dtype=float)
    succ = alpha - prior[0]
    with np.errstate(divide="ignore", invalid="ignore"):
        raw = np.where(n > 0, succ / np.where(n > 0, n, 1.0), np.nan)
    out = {"posterior_mean": post[1:] - post[0], "raw_proportion": raw[1:] - raw[0]}
    if truth is not None:
        truth = np.asarray(truth, dtype=float)
        gamma = truth[1:] - truth[0]
        out["sq_err_posterior_mean"] = (out["posterior_mean"] - gamma) ** 2
        out["sq_err_raw_proportion"] = (out["raw_proportion"] - gamma) ** 2
    return out


def exact_estimator_mse(n: int, theta: float, prior=(1.0, 1.0)):
    """Exact MSE of the posterior mean and of the raw proportion for one arm with n patients."""
    s = np.arange(n + 1)
    w = stats.binom.pmf(s, n, theta)
    post = (prior[0] + s) / (prior[0] + prior[1] + n)
    raw = s / n if n > 0 else np.full_like(s, np.nan, dtype=float)
    return float(np.sum(w * (post - theta) ** 2)), float(np.sum(w * (raw - theta) ** 2))
