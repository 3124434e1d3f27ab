"""Design-matrix construction from ensemble weather forecasts.

Per timestamp and provider: wind speed plus the direction encoded as a
(sin, cos) pair. Per timestamp across providers: mean/std of speed and
circular mean/std of direction. All of these are repeated at every
requested hourly lag offset; rows missing any lag neighbour are dropped.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .domain import EnsembleForecastRecord, PowerObservation

DEFAULT_LAGS = (-1, 0, 1)


class DegenerateResultantError(ValueError):
    """Resultant vector length is zero: the circular mean is undefined."""


class MisalignedTargetError(ValueError):
    """A feature timestamp has no matching target observation."""


@dataclass(frozen=True)
class CircularSummary:
    mean_direction: float  # degrees in [0, 360)
    circular_std: float  # sqrt(-2 ln R), dimensionless
    resultant_length: float  # R in (0, 1]


def circular_mean_std(directions) -> CircularSummary:
    """Circular mean and standard deviation of angles in degrees."""
    directions = np.asarray(directions, dtype=float)
    if directions.size == 0:
        raise ValueError("need at least one direction")
    rad = np.deg2rad(directions)
    s = np.mean(np.sin(rad))
    c = np.mean(np.cos(rad))
    r = float(np.hypot(s, c))
    if r < 1e-12:
        raise DegenerateResultantError("zero resultant length, circular mean undefined")
    mean = float(np.mod(np.rad2deg(np.arctan2(s, c)), 360.0))
    if mean >= 360.0:  # mod can round up to exactly 360 for tiny negatives
        mean = 0.0
    std = float(np.sqrt(-2.0 * np.log(min(r, 1.0))))
    return CircularSummary(mean_direction=mean, circular_std=std, resultant_length=min(r, 1.0))


@dataclass
class FeatureMatrix:
    times: pd.DatetimeIndex
    columns: dict[str, np.ndarray]
    target: np.ndarray | None = None

    def __post_init__(self):
        lengths = {len(v) for v in self.columns.values()}
        lengths.add(len(self.times))
        if self.target is not None:
            lengths.add(len(self.target))
        if len(lengths) > 1:
            raise ValueError(f"inconsistent column lengths: {lengths}")
        for name, col in self.columns.items():
            if not np.all(np.isfinite(col)):
                raise ValueError(f"column {name} contains non-finite values")

    @property
    def names(self) -> list[str]:
        return list(self.columns.keys())

    @property
    def n_rows(self) -> int:
        return len(self.times)

    def matrix(self) -> np.ndarray:
        if not self.columns:
            return np.empty((len(self.times), 0))
        return np.column_stack([self.columns[name] for name in self.names])

    def select(self, mask) -> "FeatureMatrix":
        mask = np.asarray(mask)
        return FeatureMatrix(
            times=self.times[mask],
            columns={k: v[mask] for k, v in self.columns.items()},
            target=self.target[mask] if self.target is not None else None,
        )


def _lag_tag(lag: int) -> str:
    return f"lag{lag:+d}"


def _base_features(records, provider_ids):
    """Per-timestamp feature values before lag assembly.

    Missing providers are filled with the cross-provider mean (plus a flag),
    degenerate circular means fall back to 0 degrees (plus a flag).
    """
    n = len(records)
    cols = {}
    for pid in provider_ids:
        cols[f"{pid}_speed"] = np.empty(n)
        cols[f"{pid}_dir_sin"] = np.empty(n)
        cols[f"{pid}_dir_cos"] = np.empty(n)
    for name in ("speed_mean", "speed_std", "dir_circ_mean", "dir_circ_std"):
        cols[name] = np.empty(n)
    missing = {pid: np.zeros(n) for pid in provider_ids}
    degenerate = np.zeros(n)

    for i, rec in enumerate(records):
        by_id = {p.provider_id: p for p in rec.providers}
        speeds = np.array([p.wind_speed for p in rec.providers])
        dirs = np.array([p.wind_direction for p in rec.providers])
        try:
            summ = circular_mean_std(dirs)
            circ_mean, circ_std = summ.mean_direction, summ.circular_std
        except DegenerateResultantError:
            circ_mean, circ_std = 0.0, 0.0
            degenerate[i] = 1.0
        cols["speed_mean"][i] = speeds.mean()
        cols["speed_std"][i] = speeds.std()
        cols["dir_circ_mean"][i] = circ_mean
        cols["dir_circ_std"][i] = circ_std
        for pid in provider_ids:
            p = by_id.get(pid)
            if p is None:
                missing[pid][i] = 1.0
                speed, direction = speeds.mean(), circ_mean
            else:
                speed, direction = p.wind_speed, p.wind_direction
            rad = np.deg2rad(direction)
            cols[f"{pid}_speed"][i] = speed
            cols[f"{pid}_dir_sin"][i] = np.sin(rad)
            cols[f"{pid}_dir_cos"][i] = np.cos(rad)

    flags = {pid: arr for pid, arr in missing.items() if arr.any()}
    return cols, flags, (degenerate if degenerate.any() else None)


def feature_names(provider_ids, lags=DEFAULT_LAGS) -> list[str]:
    """Column names for complete data (no missing/degenerate flag columns)."""
    names = []
    for lag in sorted(lags):
        tag = _lag_tag(lag)
        for pid in sorted(provider_ids):
            names += [f"{pid}_speed_{tag}", f"{pid}_dir_sin_{tag}", f"{pid}_dir_cos_{tag}"]
        names += [f"speed_mean_{tag}", f"speed_std_{tag}",
                  f"dir_circ_mean_{tag}", f"dir_circ_std_{tag}"]
    return names


def build_features(records, lags=DEFAULT_LAGS,
                   targets: list[PowerObservation] | None = None) -> FeatureMatrix:
    """Assemble the lagged design matrix from ensemble forecast records.

    Records must be sorted by time; lag neighbours are looked up by exact
    timestamp so gaps in the series simply drop the affected edge rows.
    When ``targets`` is given, the target power is joined by timestamp and a
    missing target raises :class:`MisalignedTargetError`.
    """
    records = list(records)
    lags = sorted(set(int(v) for v in lags))
    times = [rec.time for rec in records]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ValueError("records must be sorted by strictly increasing time")

    provider_ids = sorted({pid for rec in records for pid in rec.provider_ids()})
    base, flags, degenerate = _base_features(records, provider_ids)

    index_of = {t: i for i, t in enumerate(times)}
    keep, lag_idx = [], []
    for i, t in enumerate(times):
        neigh = [index_of.get(t + pd.Timedelta(hours=lag)) for lag in lags]
        if all(j is not None for j in neigh):
            keep.append(i)
            lag_idx.append(neigh)
    lag_idx = np.asarray(lag_idx, dtype=int).reshape(len(keep), len(lags))

    columns: dict[str, np.ndarray] = {}
    for k, lag in enumerate(lags):
        tag = _lag_tag(lag)
        rows = lag_idx[:, k]
        for pid in provider_ids:
            for suffix in ("speed", "dir_sin", "dir_cos"):
                columns[f"{pid}_{suffix}_{tag}"] = base[f"{pid}_{suffix}"][rows]
        for name in ("speed_mean", "speed_std", "dir_circ_mean", "dir_circ_std"):
            columns[f"{name}_{tag}"] = base[name][rows]
    for k, lag in enumerate(lags):
        tag = _lag_tag(lag)
        rows = lag_idx[:, k]
        for pid, arr in flags.items():
            columns[f"{pid}_missing_{tag}"] = arr[rows]
        if degenerate is not None:
            columns[f"dir_degenerate_{tag}"] = degenerate[rows]

    out_times = pd.DatetimeIndex([times[i] for i in keep])
    target = None
    if targets is not None:
        power_by_time = {obs.time: obs.power for obs in targets}
        missing = [t for t in out_times if t not in power_by_time]
        if missing:
            raise MisalignedTargetError(
                f"{len(missing)} feature timestamps lack a target (first: {missing[0]})")
        target = np.array([power_by_time[t] for t in out_times], dtype=float)
    return FeatureMatrix(times=out_times, columns=columns, target=target)


def ensemble_mean_inputs(records) -> list[tuple[pd.Timestamp, float, float]]:
    """Cross-provider mean speed and circular mean direction per timestamp.

    This is the input used by the deterministic engineering baselines.
    """
    out = []
    for rec in records:
        speeds = [p.wind_speed for p in rec.providers]
        dirs = [p.wind_direction for p in rec.providers]
        summ = circular_mean_std(dirs)
        out.append((rec.time, float(np.mean(speeds)), summ.mean_direction))
    return out
