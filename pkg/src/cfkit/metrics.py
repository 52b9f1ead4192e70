"""Counterfactual quality metrics, aggregation, and significance testing."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import FeatureSchema, FeatureWeights, Instance, feature_diffs

#: fixed CSV column order for per-run metric rows
CSV_COLUMNS = ("dataset", "method", "seed", "instance_id", "step",
               "elapsed_ms", "generations", "found", "proximity", "sparsity")


@dataclass(frozen=True)
class RunMetrics:
    elapsed: float  # seconds
    generations: int
    found: bool
    proximity: float | None
    sparsity: float | None

    def __post_init__(self) -> None:
        if self.proximity is not None and self.proximity < 0:
            raise ValueError("proximity must be non-negative")
        if self.sparsity is not None and not (0.0 <= self.sparsity <= 1.0):
            raise ValueError("sparsity must lie in [0, 1]")


@dataclass(frozen=True)
class AggregateStats:
    n: int
    cf_rate: float  # percent of runs with found=true
    elapsed_mean: float
    elapsed_std: float
    generations_mean: float
    generations_std: float
    proximity_mean: float | None
    proximity_std: float | None
    sparsity_mean: float | None
    sparsity_std: float | None


def proximity(x: Instance, cand: Instance, weights: FeatureWeights,
              schema: FeatureSchema) -> float:
    """Weighted mean absolute difference in normalized space (overlap on categoricals)."""
    diffs = feature_diffs(schema, x.values, cand.values)
    return float(diffs @ weights.w / weights.w.sum())


def sparsity(x: Instance, cand: Instance, epsilon: float,
             schema: FeatureSchema) -> float:
    """Fraction of features changed beyond epsilon (any change counts for categoricals)."""
    diffs = feature_diffs(schema, x.values, cand.values)
    return float((diffs > epsilon).sum() / len(diffs))


def _mean_std(values) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    if len(arr) == 1:
        return float(arr[0]), 0.0
    return float(arr.mean()), float(arr.std(ddof=1))


def aggregate(runs: list[RunMetrics]) -> AggregateStats:
    """Sample mean/std over runs; proximity and sparsity cover found runs only."""
    if not runs:
        raise ValueError("cannot aggregate zero runs")
    elapsed_mean, elapsed_std = _mean_std([r.elapsed for r in runs])
    gens_mean, gens_std = _mean_std([r.generations for r in runs])
    found = [r for r in runs if r.found]
    cf_rate = 100.0 * len(found) / len(runs)
    if found:
        prox_mean, prox_std = _mean_std([r.proximity for r in found])
        spars_mean, spars_std = _mean_std([r.sparsity for r in found])
    else:
        prox_mean = prox_std = spars_mean = spars_std = None
    return AggregateStats(len(runs), cf_rate, elapsed_mean, elapsed_std,
                          gens_mean, gens_std, prox_mean, prox_std,
                          spars_mean, spars_std)


# -- Welch t-test ---------------------------------------------------------------

def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (Lentz's method)."""
    MAXIT, EPS, FPMIN = 300, 3e-16, 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < FPMIN:
        d = FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, MAXIT + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < FPMIN:
            d = FPMIN
        c = 1.0 + aa / c
        if abs(c) < FPMIN:
            c = FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < FPMIN:
            d = FPMIN
        c = 1.0 + aa / c
        if abs(c) < FPMIN:
            c = FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < EPS:
            return h
    raise ArithmeticError("incomplete beta continued fraction failed to converge")


def _betai(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log(1.0 - x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def welch_t_test(a, b) -> float:
    """Two-sided Welch t-test p-value (Welch-Satterthwaite degrees of freedom).

    Degenerate convention: if both samples have zero variance the p-value is
    1 for equal means and 0 otherwise.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("each sample needs at least 2 observations")
    v1, v2 = a.var(ddof=1), b.var(ddof=1)
    m1, m2 = a.mean(), b.mean()
    if v1 == 0.0 and v2 == 0.0:
        return 1.0 if m1 == m2 else 0.0
    se1, se2 = v1 / len(a), v2 / len(b)
    t = (m1 - m2) / math.sqrt(se1 + se2)
    df = (se1 + se2) ** 2 / (
        (se1 ** 2 / (len(a) - 1)) + (se2 ** 2 / (len(b) - 1))
    )
    # two-sided tail of Student-t: 2*P(T > |t|) = I_{df/(df+t^2)}(df/2, 1/2)
    return _betai(df / 2.0, 0.5, df / (df + t * t))


# -- CSV serialization -----------------------------------------------------------

def format_csv_number(v: float) -> str:
    """Shortest exact float representation (stable across reruns)."""
    return repr(float(v))


def metrics_csv_row(dataset: str, method: str, seed: int, instance_id: int,
                    step: int, rm: RunMetrics) -> list[str]:
    return [
        dataset,
        method,
        str(seed),
        str(instance_id),
        str(step),
        format_csv_number(rm.elapsed * 1000.0),
        str(rm.generations),
        "true" if rm.found else "false",
        "" if rm.proximity is None else format_csv_number(rm.proximity),
        "" if rm.sparsity is None else format_csv_number(rm.sparsity),
    ]
