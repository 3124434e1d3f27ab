"""Deterministic engineering baselines: power curve and Gaussian wake model.

The wake model uses a self-similar Gaussian velocity deficit whose growth
rate k* = k_a * TI_local + k_b couples to the local turbulence intensity.
Freestream TI follows the IEC normal turbulence model, wake-added TI the
Crespo-Hernandez correlation, and overlapping deficits combine by linear
superposition of absolute (local-speed scaled) deficits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import optimize

from .domain import FarmLayout, Turbine

# literature defaults for the TI-coupled wake recovery rate
DEFAULT_K_A = 0.38371
DEFAULT_K_B = 0.003678


class ZeroSpeedError(ValueError):
    pass


class InvalidCtError(ValueError):
    pass


class DegenerateDataError(ValueError):
    """Calibration observations do not span multiple wind directions."""


@dataclass(frozen=True)
class WakeParams:
    k_a: float = DEFAULT_K_A
    k_b: float = DEFAULT_K_B
    ambient_ti_iref: float = 0.06

    def __post_init__(self):
        if self.k_a * 0.01 + self.k_b <= 0:
            raise ValueError("wake recovery rate must be positive for admissible TI")


@dataclass(frozen=True)
class FlowCase:
    wind_speed: float  # m/s at hub height, freestream
    wind_direction: float  # meteorological degrees

    def __post_init__(self):
        if self.wind_speed < 0:
            raise ValueError("wind speed must be >= 0")


def power_curve_forecast(layout: FarmLayout, wind_speed: float) -> float:
    """Wake-free farm power: sum of manufacturer power curves (MW)."""
    if wind_speed < 0:
        raise ValueError("wind speed must be >= 0")
    return float(sum(t.power(wind_speed) for t in layout.turbines))


def freestream_ti(wind_speed: float, iref: float) -> float:
    """IEC normal-turbulence-model representative TI at hub height."""
    if wind_speed <= 0:
        raise ZeroSpeedError("freestream TI undefined at zero wind speed")
    return iref * (0.75 * wind_speed + 5.6) / wind_speed


def gaussian_deficit(ct, x, r, d0, ti_local, params: WakeParams):
    """Fractional velocity deficit at downstream distance x and radial offset r.

    Wake width: sigma/d0 = k* x/d0 + 0.2 sqrt(beta) with
    beta = (1 + sqrt(1-ct)) / (2 sqrt(1-ct)). The on-axis deficit is capped
    at 1 in the near field where the closed form breaks down.
    """
    if not 0 < ct < 1:
        raise InvalidCtError(f"ct must lie in (0, 1), got {ct}")
    if x <= 0:
        raise ValueError("deficit defined for downstream distances x > 0")
    k_star = params.k_a * ti_local + params.k_b
    sqrt1ct = math.sqrt(1.0 - ct)
    beta = (1.0 + sqrt1ct) / (2.0 * sqrt1ct)
    sigma_over_d0 = k_star * x / d0 + 0.2 * math.sqrt(beta)
    sigma = sigma_over_d0 * d0
    arg = 1.0 - ct / (8.0 * sigma_over_d0 ** 2)
    core = 1.0 - math.sqrt(max(0.0, arg))  # capped at 1 in the near field
    return core * math.exp(-(r ** 2) / (2.0 * sigma ** 2))


def crespo_hernandez_added_ti(ct, ti_ambient, x, d0):
    """Wake-added turbulence intensity downstream of a rotor."""
    if not 0 <= ct < 1:
        raise InvalidCtError(f"ct must lie in [0, 1), got {ct}")
    if x <= 0:
        raise ValueError("added TI defined for downstream distances x > 0")
    if ct == 0:
        return 0.0
    a = (1.0 - math.sqrt(1.0 - ct)) / 2.0  # axial induction
    return 0.73 * a ** 0.8325 * ti_ambient ** 0.0325 * (x / d0) ** (-0.32)


def local_turbulence(ti_ambient, added_tis):
    """Ambient TI combined with the strongest impinging wake's added TI."""
    if not added_tis:
        return ti_ambient
    return math.sqrt(ti_ambient ** 2 + max(added_tis) ** 2)


@dataclass
class FarmPowerResult:
    total: float  # MW over the layout's own turbines
    turbine_power: np.ndarray  # MW per own turbine
    turbine_speed: np.ndarray  # local hub-height speed per own turbine


def farm_power(layout: FarmLayout, case: FlowCase, params: WakeParams) -> FarmPowerResult:
    """Waked farm power for one flow case.

    Turbines (including neighbouring farms' turbines as wake sources) are
    processed upstream to downstream along the wind vector. Each turbine's
    incident speed is the freestream minus the linear sum of absolute
    deficits from upstream rotors, each scaled by the waking rotor's own
    incident speed. Deficits are evaluated at the hub centre.
    """
    turbines = layout.all_turbines()
    n_own = len(layout.turbines)
    n = len(turbines)
    if case.wind_speed == 0:
        zeros = np.zeros(n_own)
        return FarmPowerResult(0.0, zeros, zeros.copy())

    theta = np.deg2rad(case.wind_direction)
    downstream = np.array([-np.sin(theta), -np.cos(theta)])  # direction of travel
    crosswind = np.array([-np.cos(theta), np.sin(theta)])
    pos = np.array([t.position for t in turbines])
    dw = pos @ downstream
    cw = pos @ crosswind
    hh = np.array([t.hub_height for t in turbines])

    ti_amb = freestream_ti(case.wind_speed, params.ambient_ti_iref)
    order = np.argsort(dw, kind="stable")

    speed = np.empty(n)
    ti_local = np.empty(n)
    ct = np.empty(n)
    for rank, i in enumerate(order):
        deficit_abs = 0.0
        added = []
        for j in order[:rank]:
            x = dw[i] - dw[j]
            if x <= 0:
                continue
            r = math.hypot(cw[i] - cw[j], hh[i] - hh[j])
            frac = gaussian_deficit(ct[j], x, r, turbines[j].rotor_diameter,
                                    ti_local[j], params)
            if frac > 1e-6:
                deficit_abs += speed[j] * frac
                added.append(crespo_hernandez_added_ti(
                    ct[j], ti_amb, x, turbines[j].rotor_diameter))
        speed[i] = max(0.0, case.wind_speed - deficit_abs)
        ti_local[i] = local_turbulence(ti_amb, added)
        ct[i] = turbines[i].thrust_coefficient(speed[i])

    own_speed = speed[:n_own]
    own_power = np.array([t.power(s) for t, s in zip(layout.turbines, own_speed)])
    return FarmPowerResult(float(own_power.sum()), own_power, own_speed)


def _mse(layout, observations, params):
    err = [farm_power(layout, case, params).total - p for case, p in observations]
    return float(np.mean(np.square(err)))


def calibrate_wake(layout: FarmLayout, observations,
                   params_init: WakeParams | None = None,
                   bounds=((0.1, 0.6), (0.0, 0.01)),
                   grid_size: int = 6) -> WakeParams:
    """Fit (k_a, k_b) to observed farm power by grid search plus local refinement.

    ``observations`` is a list of (FlowCase, farm power MW) pairs covering
    multiple wind directions.
    """
    observations = list(observations)
    if len(observations) < 20:
        raise ValueError(f"need at least 20 observations, got {len(observations)}")
    directions = {round(case.wind_direction, 6) for case, _ in observations}
    if len(directions) < 2:
        raise DegenerateDataError("observations at a single direction cannot identify (k_a, k_b)")
    base = params_init if params_init is not None else WakeParams()

    best = None
    for k_a in np.linspace(*bounds[0], grid_size):
        for k_b in np.linspace(*bounds[1], grid_size):
            p = replace(base, k_a=float(k_a), k_b=float(k_b))
            mse = _mse(layout, observations, p)
            if best is None or mse < best[0]:
                best = (mse, k_a, k_b)

    def objective(v):
        return _mse(layout, observations, replace(base, k_a=float(v[0]), k_b=float(v[1])))

    res = optimize.minimize(objective, x0=[best[1], best[2]], method="Nelder-Mead",
                            bounds=bounds, options={"xatol": 1e-6, "fatol": 1e-10})
    return replace(base, k_a=float(res.x[0]), k_b=float(res.x[1]))


def calibration_rmse(layout: FarmLayout, observations, params: WakeParams) -> float:
    return float(np.sqrt(_mse(layout, list(observations), params)))


def rescale_engineering(predictions, max_observed_power: float, rated_power: float):
    """Grid-loss proxy: scale predictions by max observed power over rated power."""
    if rated_power <= 0:
        raise ValueError("rated power must be positive")
    return np.asarray(predictions, dtype=float) * (max_observed_power / rated_power)
