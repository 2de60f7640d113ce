"""Significance tests, effect sizes and the score-versus-Neutral-rate regression."""
import logging
import math
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
import statsmodels.api as sm
from scipy import stats

from .errors import DegenerateTestError, MetricError, RankError

logger = logging.getLogger(__name__)

TIERS = ("bonferroni", "uncorrected", "not_significant")


def _samples(sample_a: Sequence[float], sample_b: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    a = np.asarray(sample_a, dtype=float)
    b = np.asarray(sample_b, dtype=float)
    if len(a) < 2 or len(b) < 2:
        raise MetricError(f"Both samples need at least 2 values, got {len(a)} and {len(b)}")
    return a, b


def welch_one_tailed(sample_a: Sequence[float], sample_b: Sequence[float]) -> float:
    """Upper-tail Welch t-test p-value for mean(a) > mean(b)."""
    a, b = _samples(sample_a, sample_b)
    if a.var(ddof=1) == 0 and b.var(ddof=1) == 0:
        p_value = 0.0 if a.mean() > b.mean() else 1.0
        raise DegenerateTestError("Both samples have zero variance", p_value=p_value)
    return float(stats.ttest_ind(a, b, equal_var=False, alternative="greater").pvalue)


def cohens_d(sample_a: Sequence[float], sample_b: Sequence[float]) -> float:
    a, b = _samples(sample_a, sample_b)
    na, nb = len(a), len(b)
    pooled = math.sqrt(((na - 1) * a.var(ddof=1) + (nb - 1) * b.var(ddof=1)) / (na + nb - 2))
    if pooled == 0:
        raise DegenerateTestError("Pooled standard deviation is zero")
    return float((a.mean() - b.mean()) / pooled)


def bonferroni_threshold(m: int, alpha: float = 0.05) -> float:
    if m < 1:
        raise MetricError(f"Number of tests must be >= 1, got {m}")
    return alpha / m


@dataclass(frozen=True)
class SignificanceReport:
    comparison: str
    model: str
    dataset: str
    p_value: float
    cohens_d: float
    m: int
    significant_bonferroni: bool
    significant_uncorrected: bool
    degenerate: bool = False

    @property
    def tier(self) -> str:
        if self.significant_bonferroni:
            return "bonferroni"
        if self.significant_uncorrected:
            return "uncorrected"
        return "not_significant"

    def to_json(self) -> dict:
        return {
            "comparison": self.comparison,
            "model": self.model,
            "dataset": self.dataset,
            "p_value": self.p_value,
            "cohens_d": None if math.isnan(self.cohens_d) else self.cohens_d,
            "m": self.m,
            "significant_bonferroni": self.significant_bonferroni,
            "significant_uncorrected": self.significant_uncorrected,
            "tier": self.tier,
            "degenerate": self.degenerate,
        }


def significance_report(
    sample_a: Sequence[float],
    sample_b: Sequence[float],
    m: int,
    comparison: str = "",
    model: str = "",
    dataset: str = "",
    alpha: float = 0.05,
) -> SignificanceReport:
    degenerate = False
    try:
        p_value = welch_one_tailed(sample_a, sample_b)
    except DegenerateTestError as e:
        logger.warning("Degenerate Welch test for %s on %s: using p=%s", comparison, dataset, e.p_value)
        p_value, degenerate = e.p_value, True
    try:
        d = cohens_d(sample_a, sample_b)
    except DegenerateTestError:
        d, degenerate = float("nan"), True
    return SignificanceReport(
        comparison=comparison,
        model=model,
        dataset=dataset,
        p_value=p_value,
        cohens_d=d,
        m=m,
        significant_bonferroni=p_value < bonferroni_threshold(m, alpha),
        significant_uncorrected=p_value < alpha,
        degenerate=degenerate,
    )


@dataclass(frozen=True)
class RegressionResult:
    n: int
    intercept: float
    slope: float
    slope_se: float
    slope_ci95: Tuple[float, float]
    r: float
    r_squared: float
    p_value: float
    rmse: float

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "intercept": self.intercept,
            "slope": self.slope,
            "slope_se": self.slope_se,
            "slope_ci95": list(self.slope_ci95),
            "r": self.r,
            "r_squared": self.r_squared,
            "p_value": self.p_value,
            "rmse": self.rmse,
        }


def regress_vs_neutral_rate(points: Sequence[Tuple[float, float]], alpha: float = 0.05) -> RegressionResult:
    """OLS of score on Neutral base rate with an intercept."""
    if len(points) < 3:
        raise MetricError(f"Regression needs at least 3 points, got {len(points)}")
    x = np.asarray([p[0] for p in points], dtype=float)
    y = np.asarray([p[1] for p in points], dtype=float)
    if np.ptp(x) == 0:
        raise RankError("Neutral base rate is constant across units; slope is undefined")
    fit = sm.OLS(y, sm.add_constant(x)).fit()
    intercept, slope = (float(v) for v in fit.params)
    low, high = (float(v) for v in fit.conf_int(alpha)[1])
    r_squared = float(fit.rsquared)
    return RegressionResult(
        n=len(points),
        intercept=intercept,
        slope=slope,
        slope_se=float(fit.bse[1]),
        slope_ci95=(low, high),
        r=math.copysign(math.sqrt(max(r_squared, 0.0)), slope),
        r_squared=r_squared,
        p_value=float(fit.pvalues[1]),
        rmse=math.sqrt(float(fit.ssr) / len(points)),
    )
