"""Core data types shared across the forecasting toolkit.

Conventions: power in MW everywhere (normalization to capacity fraction
happens only at scoring time), wind direction in meteorological degrees
(0 = wind from north, clockwise), planar easting/northing coordinates
in metres, hourly timestamps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd
import yaml


class MissingMedianError(ValueError):
    """Raised when a distribution has neither a 0.5 quantile nor Gaussian parameters."""


class ZeroCapacityError(ValueError):
    """Raised when normalizing power against a farm with no installed capacity."""


def check_hourly(ts: pd.Timestamp) -> pd.Timestamp:
    """Validate that a timestamp lies exactly on an hour boundary."""
    ts = pd.Timestamp(ts)
    if ts.minute != 0 or ts.second != 0 or ts.microsecond != 0 or ts.nanosecond != 0:
        raise ValueError(f"timestamp {ts} is not on an hourly boundary")
    return ts


def normalize_direction(deg: float) -> float:
    """Map an angle in degrees onto [0, 360)."""
    out = float(np.mod(deg, 360.0))
    return 0.0 if out >= 360.0 else out


@dataclass(frozen=True)
class ProviderForecast:
    provider_id: str
    wind_speed: float  # m/s
    wind_direction: float  # degrees, [0, 360)

    def __post_init__(self):
        if self.wind_speed < 0:
            raise ValueError(f"negative wind speed {self.wind_speed}")
        object.__setattr__(self, "wind_direction", normalize_direction(self.wind_direction))


@dataclass(frozen=True)
class EnsembleForecastRecord:
    """All providers' wind forecasts for a single hour."""

    time: pd.Timestamp
    providers: tuple[ProviderForecast, ...]

    def __post_init__(self):
        object.__setattr__(self, "time", check_hourly(self.time))
        object.__setattr__(self, "providers", tuple(self.providers))
        if not self.providers:
            raise ValueError("provider list must be non-empty")
        ids = [p.provider_id for p in self.providers]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate provider entries at {self.time}: {ids}")

    def provider_ids(self) -> list[str]:
        return [p.provider_id for p in self.providers]


@dataclass(frozen=True)
class PowerObservation:
    time: pd.Timestamp
    power: float  # MW
    farm_id: str

    def __post_init__(self):
        object.__setattr__(self, "time", check_hourly(self.time))


@dataclass(frozen=True)
class Curve:
    """Monotone-x piecewise-linear curve with constant extrapolation at the ends."""

    speeds: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "speeds", tuple(float(v) for v in self.speeds))
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if len(self.speeds) != len(self.values) or len(self.speeds) < 2:
            raise ValueError("curve needs at least two (speed, value) points")
        if np.any(np.diff(self.speeds) <= 0):
            raise ValueError("curve speeds must be strictly increasing")

    def __call__(self, speed):
        return np.interp(speed, self.speeds, self.values)


@dataclass(frozen=True)
class Turbine:
    position: tuple[float, float]  # (easting m, northing m)
    rotor_diameter: float
    hub_height: float
    power_curve: Curve  # wind speed m/s -> MW
    thrust_curve: Curve  # wind speed m/s -> Ct
    cut_in: float
    rated_speed: float
    cut_out: float
    turbine_id: str = ""

    def __post_init__(self):
        if not (0 < self.cut_in < self.rated_speed < self.cut_out):
            raise ValueError("require 0 < cut_in < rated < cut_out")

    @property
    def rated_power(self) -> float:
        return float(max(self.power_curve.values))

    def power(self, speed):
        """Power in MW at hub-height wind speed, zero outside [cut_in, cut_out)."""
        speed = np.asarray(speed, dtype=float)
        p = self.power_curve(speed)
        p = np.where((speed < self.cut_in) | (speed >= self.cut_out), 0.0, p)
        return p if p.ndim else float(p)

    def thrust_coefficient(self, speed):
        """Rotor thrust coefficient; parked (negligible) outside [cut_in, cut_out)."""
        speed = np.asarray(speed, dtype=float)
        ct = np.clip(self.thrust_curve(speed), 1e-6, 1 - 1e-6)
        ct = np.where((speed < self.cut_in) | (speed >= self.cut_out), 1e-6, ct)
        return ct if speed.ndim else float(ct)


@dataclass(frozen=True)
class FarmLayout:
    farm_id: str
    turbines: tuple[Turbine, ...]
    neighbours: tuple["FarmLayout", ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "turbines", tuple(self.turbines))
        object.__setattr__(self, "neighbours", tuple(self.neighbours))
        if not self.turbines:
            raise ValueError("layout must contain at least one turbine")
        positions = [t.position for t in self.turbines]
        if len(set(positions)) != len(positions):
            raise ValueError("turbine positions must be pairwise distinct")

    @property
    def installed_capacity(self) -> float:
        """Sum of rated turbine powers of the farm itself (MW)."""
        return float(sum(t.rated_power for t in self.turbines))

    def all_turbines(self) -> list[Turbine]:
        """Own turbines plus every neighbouring farm's turbines (wake sources)."""
        out = list(self.turbines)
        for nb in self.neighbours:
            out.extend(nb.all_turbines())
        return out


@dataclass(frozen=True)
class PredictiveDistribution:
    """One model's probabilistic output for a single hour."""

    time: pd.Timestamp
    quantile_levels: tuple[float, ...]
    quantile_values: tuple[float, ...]
    gaussian: tuple[float, float] | None = None  # (mu, sigma) in MW
    samples: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "quantile_levels", tuple(float(t) for t in self.quantile_levels))
        object.__setattr__(self, "quantile_values", tuple(float(v) for v in self.quantile_values))
        if len(self.quantile_levels) != len(self.quantile_values):
            raise ValueError("levels and values must have the same length")
        lv = np.asarray(self.quantile_levels)
        if lv.size and (np.any(lv <= 0) or np.any(lv >= 1) or np.any(np.diff(lv) <= 0)):
            raise ValueError("quantile levels must be strictly increasing within (0, 1)")
        if np.any(np.diff(self.quantile_values) < 0):
            raise ValueError("quantile values must be non-decreasing (monotonize first)")
        if self.gaussian is not None:
            mu, sigma = self.gaussian
            if sigma <= 0:
                raise ValueError(f"sigma must be positive, got {sigma}")
            object.__setattr__(self, "gaussian", (float(mu), float(sigma)))
        if self.samples is not None:
            object.__setattr__(self, "samples", tuple(float(s) for s in self.samples))

    def quantile(self, level: float) -> float:
        for lv, v in zip(self.quantile_levels, self.quantile_values):
            if abs(lv - level) < 1e-12:
                return v
        raise KeyError(f"level {level} not present")


def point_forecast(dist: PredictiveDistribution) -> float:
    """Median of the distribution; falls back to the Gaussian mean (= median)."""
    try:
        return dist.quantile(0.5)
    except KeyError:
        pass
    if dist.gaussian is not None:
        return dist.gaussian[0]
    raise MissingMedianError("distribution has neither a 0.5 quantile nor Gaussian parameters")


def normalize_power(p: float, layout: FarmLayout) -> float:
    """Express power as a fraction of the farm's installed capacity."""
    cap = layout.installed_capacity
    if cap <= 0:
        raise ZeroCapacityError(f"farm {layout.farm_id} has zero installed capacity")
    return p / cap


# ---------------------------------------------------------------------------
# Layout file I/O (YAML: turbine table plus attached power/thrust curve tables)
# ---------------------------------------------------------------------------

def _layout_to_dict(layout: FarmLayout) -> dict:
    return {
        "farm_id": layout.farm_id,
        "turbines": [
            {
                "id": t.turbine_id,
                "easting_m": t.position[0],
                "northing_m": t.position[1],
                "rotor_diameter_m": t.rotor_diameter,
                "hub_height_m": t.hub_height,
                "cut_in": t.cut_in,
                "rated": t.rated_speed,
                "cut_out": t.cut_out,
            }
            for t in layout.turbines
        ],
        # curve tables shared by all turbines of the farm (0.5 m/s sampling)
        "power_curve": [list(pair) for pair in zip(layout.turbines[0].power_curve.speeds,
                                                   layout.turbines[0].power_curve.values)],
        "thrust_curve": [list(pair) for pair in zip(layout.turbines[0].thrust_curve.speeds,
                                                    layout.turbines[0].thrust_curve.values)],
        "neighbours": [_layout_to_dict(nb) for nb in layout.neighbours],
    }


def save_layout(layout: FarmLayout, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(_layout_to_dict(layout), fh, sort_keys=True)


def _layout_from_dict(d: dict) -> FarmLayout:
    power = Curve(*zip(*d["power_curve"]))
    thrust = Curve(*zip(*d["thrust_curve"]))
    turbines = []
    for row in d["turbines"]:
        turbines.append(Turbine(
            position=(float(row["easting_m"]), float(row["northing_m"])),
            rotor_diameter=float(row["rotor_diameter_m"]),
            hub_height=float(row["hub_height_m"]),
            power_curve=power,
            thrust_curve=thrust,
            cut_in=float(row["cut_in"]),
            rated_speed=float(row["rated"]),
            cut_out=float(row["cut_out"]),
            turbine_id=str(row["id"]),
        ))
    neighbours = tuple(_layout_from_dict(nb) for nb in d.get("neighbours", []))
    return FarmLayout(farm_id=d["farm_id"], turbines=tuple(turbines), neighbours=neighbours)


def load_layout(path) -> FarmLayout:
    with open(path) as fh:
        return _layout_from_dict(yaml.safe_load(fh))


def reference_turbine(position=(0.0, 0.0), turbine_id="T1", rated_power_mw=8.0,
                      rotor_diameter=164.0, hub_height=107.0,
                      cut_in=3.0, rated_speed=12.0, cut_out=25.0) -> Turbine:
    """Generic offshore reference turbine with smooth power and thrust tables.

    Curve tables are sampled at 0.5 m/s. The power curve ramps cubically from
    cut-in to rated; the thrust curve decays from ~0.8 towards rated and beyond.
    """
    speeds = np.arange(0.0, cut_out + 2.0 + 1e-9, 0.5)
    frac = np.clip((speeds - cut_in) / (rated_speed - cut_in), 0.0, 1.0)
    power = rated_power_mw * frac ** 3
    power[speeds < cut_in] = 0.0
    power[speeds >= rated_speed] = rated_power_mw
    # thrust: high below rated, falling off once pitch control engages
    ct = np.where(speeds < rated_speed, 0.8,
                  0.8 * (rated_speed / np.maximum(speeds, 1e-6)) ** 3)
    ct = np.clip(ct, 0.05, 0.85)
    return Turbine(
        position=position,
        rotor_diameter=rotor_diameter,
        hub_height=hub_height,
        power_curve=Curve(tuple(speeds), tuple(power)),
        thrust_curve=Curve(tuple(speeds), tuple(ct)),
        cut_in=cut_in,
        rated_speed=rated_speed,
        cut_out=cut_out,
        turbine_id=turbine_id,
    )
