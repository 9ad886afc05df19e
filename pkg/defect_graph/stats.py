from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy.stats import norm, rankdata

from .errors import EvaluationError

logger = logging.getLogger(__name__)

ALPHA = 0.05
LARGE_EFFECT = 0.33
EXACT_MAX_N = 12


@dataclass(frozen=True)
class WilcoxonResult:
    p_value: float
    statistic: float  # sum of ranks of positive differences
    n: int  # pairs left after dropping zero differences
    exact: bool
    degenerate: bool = False


@dataclass(frozen=True)
class StatTestResult:
    '''
    Paired comparison of two samples of one measure.

    Attributes:
        p_value: Two-sided Wilcoxon signed-rank p.
        p_value_bonferroni: p scaled by the number of comparisons, capped at 1.
        cliffs_delta: Effect size in [-1, 1]; positive when the first sample is larger.
        significant: Adjusted p below 0.05.
        large_effect: |delta| >= 0.33.
    '''
    measure: str
    p_value: float
    p_value_bonferroni: float
    cliffs_delta: float
    significant: bool
    large_effect: bool
    degenerate: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def _paired(a: Sequence[float], b: Sequence[float]) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise EvaluationError(f"paired samples differ in length ({a.size} vs {b.size})")
    return a - b


def exact_signed_rank_counts(ranks: np.ndarray, statistic: float) -> tuple[int, int]:
    '''
    Count sign patterns whose positive-rank sum is <= and >= `statistic`.

    All 2^n patterns are enumerated, so keep n small.
    '''
    n = ranks.size
    patterns = (np.arange(2 ** n, dtype=np.int64)[:, None] >> np.arange(n)) & 1
    sums = patterns @ ranks
    return int(np.sum(sums <= statistic)), int(np.sum(sums >= statistic))


def wilcoxon_signed_rank(a: Sequence[float], b: Sequence[float]) -> WilcoxonResult:
    '''
    Two-sided Wilcoxon signed-rank test on paired samples.

    Zero differences are dropped and tied magnitudes get average ranks.
    For up to 12 remaining pairs the p-value comes from enumerating every sign
    assignment; above that a normal approximation with tie correction is used.
    All-zero differences give p = 1 with `degenerate` set.
    '''
    d = _paired(a, b)
    d = d[d != 0]
    n = d.size
    if n == 0:
        return WilcoxonResult(p_value=1.0, statistic=0.0, n=0, exact=True, degenerate=True)
    if n < 5:
        logger.warning("Wilcoxon test on only %d non-zero pair(s); p-values are coarse", n)

    ranks = rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())

    if n <= EXACT_MAX_N:
        le, ge = exact_signed_rank_counts(ranks, w_plus)
        p = min(1.0, 2.0 * min(le, ge) / 2 ** n)
        return WilcoxonResult(p_value=p, statistic=w_plus, n=n, exact=True)

    mean = n * (n + 1) / 4.0
    _, counts = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(counts ** 3 - counts)) / 48.0
    z = (w_plus - mean) / math.sqrt(var)
    p = min(1.0, float(2.0 * norm.sf(abs(z))))
    return WilcoxonResult(p_value=p, statistic=w_plus, n=n, exact=False)


def cliffs_delta(a: Sequence[float], b: Sequence[float]) -> float:
    '''
    (#{a_i > b_j} - #{a_i < b_j}) / (|a| |b|)
    '''
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.size == 0 or b.size == 0:
        raise EvaluationError("Cliff's delta needs two non-empty samples")
    signs = np.sign(a[:, None] - b[None, :])
    return float(signs.sum() / (a.size * b.size))


def bonferroni(p_values: Sequence[float], m: int) -> list[float]:
    """Scale each p by m and cap at 1."""
    p_values = [float(p) for p in p_values]
    if m < len(p_values):
        raise EvaluationError(f"m={m} is smaller than the {len(p_values)} p-value(s) given")
    return [min(1.0, p * m) for p in p_values]


def paired_test(a: Sequence[float], b: Sequence[float], m: int = 1, measure: str = "") -> StatTestResult:
    """Wilcoxon + Bonferroni(m) + Cliff's delta for one measure."""
    w = wilcoxon_signed_rank(a, b)
    adjusted = bonferroni([w.p_value], m)[0]
    delta = cliffs_delta(a, b)
    return StatTestResult(
        measure=measure,
        p_value=w.p_value,
        p_value_bonferroni=adjusted,
        cliffs_delta=delta,
        significant=adjusted < ALPHA,
        large_effect=abs(delta) >= LARGE_EFFECT,
        degenerate=w.degenerate,
    )
