"""Quantile-regression head with split-conformal calibration.

Trains one boosted tree model per quantile level, sorts predicted quantiles
to enforce monotonicity, and widens/narrows the outer interval pairs by the
empirical quantile of hold-out conformity scores. Each conformalized pair
carries its own significance level and offset.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import gbt
from .domain import PredictiveDistribution

FIXED_LEVELS = (0.05, 0.10, 0.25, 0.50, 0.75, 0.90, 0.95)
# interval pairs that get conformalized: alpha -> (lower level, upper level)
DEFAULT_PAIRS = {0.10: (0.05, 0.95), 0.20: (0.10, 0.90)}


class CrossedIntervalError(ValueError):
    """Interval bounds are crossed; monotonize before scoring."""


class InfeasibleLevelError(ValueError):
    """Calibration set too small for the requested significance level."""


class MissingLevelError(KeyError):
    """A required quantile level is absent from the distribution."""


def conformal_score(y, q_lo, q_hi):
    """Signed distance of y to the interval [q_lo, q_hi]; positive outside."""
    y = np.asarray(y, dtype=float)
    q_lo = np.asarray(q_lo, dtype=float)
    q_hi = np.asarray(q_hi, dtype=float)
    if np.any(q_lo > q_hi):
        raise CrossedIntervalError("q_lo > q_hi; interval must be monotonized first")
    score = np.maximum(q_lo - y, y - q_hi)
    return float(score) if score.ndim == 0 else score


@dataclass(frozen=True)
class ConformalCalibration:
    alpha: float
    s_hat: float
    n_cal: int


def calibrate(scores, alpha: float) -> ConformalCalibration:
    """Empirical (n+1)(1-alpha)/n quantile of the conformity scores."""
    scores = np.asarray(scores, dtype=float)
    n = scores.size
    if n < 1:
        raise ValueError("need at least one calibration score")
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    target = (n + 1) * (1 - alpha)
    if target > n + 1e-12:
        raise InfeasibleLevelError(
            f"(n+1)(1-alpha) = {target:.3f} exceeds n = {n}; enlarge the calibration set")
    k = math.ceil(target - 1e-12)
    s_hat = float(np.sort(scores)[k - 1])
    return ConformalCalibration(alpha=float(alpha), s_hat=s_hat, n_cal=n)


def conformalized_interval(dist: PredictiveDistribution,
                           cal: ConformalCalibration) -> tuple[float, float]:
    """Interval [q_{a/2} - s_hat, q_{1-a/2} + s_hat]; crossed results collapse
    to their midpoint (large negative s_hat on a narrow interval)."""
    half = cal.alpha / 2
    try:
        lo = dist.quantile(half)
        hi = dist.quantile(1 - half)
    except KeyError as exc:
        raise MissingLevelError(str(exc)) from exc
    lo, hi = lo - cal.s_hat, hi + cal.s_hat
    if lo > hi:
        mid = 0.5 * (lo + hi)
        lo = hi = mid
    return lo, hi


def _level_index(levels, level) -> int:
    for i, lv in enumerate(levels):
        if abs(lv - level) < 1e-9:
            return i
    raise MissingLevelError(f"level {level} not present in {levels}")


def monotonize(values):
    """Sort quantile values ascending so they are non-crossing in the levels."""
    return np.sort(np.asarray(values, dtype=float))


@dataclass
class QuantileModelSet:
    models: dict[float, gbt.TreeEnsembleModel]
    feature_names: list[str] | None = None

    @property
    def levels(self) -> tuple[float, ...]:
        return tuple(sorted(self.models))

    def to_dict(self):
        return {
            "feature_names": self.feature_names,
            "models": {repr(tau): m.to_dict() for tau, m in self.models.items()},
        }

    @classmethod
    def from_dict(cls, d):
        models = {float(tau): gbt.TreeEnsembleModel.from_dict(m)
                  for tau, m in d["models"].items()}
        return cls(models=models, feature_names=d["feature_names"])


def train_quantile_models(X, y, params: gbt.GbtParams, levels=FIXED_LEVELS,
                          validation=None, feature_names=None) -> QuantileModelSet:
    models = {}
    for tau in levels:
        models[float(tau)] = gbt.train(
            X, y, gbt.quantile_objective(tau), params,
            validation=validation, feature_names=feature_names)
    return QuantileModelSet(models=models, feature_names=list(feature_names)
                            if feature_names is not None else None)


def raw_quantile_matrix(models: QuantileModelSet, X) -> np.ndarray:
    """(n_rows, n_levels) raw predictions in level order, before monotonization."""
    return np.column_stack([models.models[tau].predict(X) for tau in models.levels])


def calibrate_model_set(models: QuantileModelSet, X_cal, y_cal,
                        pairs=None) -> dict[float, ConformalCalibration]:
    """Per-pair split-conformal calibration on hold-out data.

    Scores are computed on the monotonized raw quantiles, matching how the
    intervals are formed at prediction time.
    """
    pairs = DEFAULT_PAIRS if pairs is None else pairs
    q = np.sort(raw_quantile_matrix(models, X_cal), axis=1)
    levels = list(models.levels)
    y_cal = np.asarray(y_cal, dtype=float)
    out = {}
    for alpha, (lo_level, hi_level) in sorted(pairs.items()):
        lo = q[:, _level_index(levels, lo_level)]
        hi = q[:, _level_index(levels, hi_level)]
        out[alpha] = calibrate(conformal_score(y_cal, lo, hi), alpha)
    return out


def predict_distribution(models: QuantileModelSet, X, times,
                         calibrations: dict[float, ConformalCalibration] | None = None,
                         capacity: float | None = None) -> list[PredictiveDistribution]:
    """Monotonized (optionally conformalized) quantile predictions per row.

    Values are clamped to [0, capacity] when a capacity is given, and sorted
    once more at the end so the emitted distributions are monotone even when
    a conformalized pair overtakes a neighbouring quantile.
    """
    q = np.sort(raw_quantile_matrix(models, X), axis=1)
    levels = list(models.levels)
    out = []
    for i, t in enumerate(times):
        values = q[i].copy()
        if calibrations:
            dist = PredictiveDistribution(time=t, quantile_levels=levels,
                                          quantile_values=values)
            for alpha, cal in calibrations.items():
                lo, hi = conformalized_interval(dist, cal)
                values[_level_index(levels, alpha / 2)] = lo
                values[_level_index(levels, 1 - alpha / 2)] = hi
        if capacity is not None:
            values = np.clip(values, 0.0, capacity)
        values = monotonize(values)
        out.append(PredictiveDistribution(time=t, quantile_levels=levels,
                                          quantile_values=values))
    return out


def save_calibrations(calibrations: dict[float, ConformalCalibration], path) -> None:
    payload = [
        {"alpha": cal.alpha, "s_hat": cal.s_hat, "n_cal": cal.n_cal}
        for _, cal in sorted(calibrations.items())
    ]
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)


def load_calibrations(path) -> dict[float, ConformalCalibration]:
    with open(path) as fh:
        payload = json.load(fh)
    return {c["alpha"]: ConformalCalibration(c["alpha"], c["s_hat"], c["n_cal"])
            for c in payload}
