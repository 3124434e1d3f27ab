"""Seeded synthetic scenario: latent wind, provider forecasts, production.

The true hub-height wind is a transformed AR(1) process with a Weibull-ish
marginal; the direction follows a von Mises random walk. Provider forecasts
are the truth plus a provider bias and noise. Production is the wake
model's farm power at the true wind, with multiplicative noise and injected
curtailment events (a flagged balancing subset and an unflagged economic
subset). The truth bundle keeps every latent value for oracle checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import stats

from .domain import (EnsembleForecastRecord, FarmLayout, PowerObservation,
                     ProviderForecast, reference_turbine, save_layout)
from .wake import FarmPowerResult, FlowCase, WakeParams, farm_power

CSV_FLOAT_FORMAT = "%.6f"


@dataclass(frozen=True)
class ProviderSpec:
    provider_id: str
    speed_bias: float = 0.0  # m/s
    speed_noise: float = 0.8  # m/s, std
    dir_bias: float = 0.0  # degrees
    dir_noise: float = 10.0  # degrees, std


DEFAULT_PROVIDERS = (
    ProviderSpec("icon", speed_bias=1.0, speed_noise=0.7, dir_bias=5.0, dir_noise=12.0),
    ProviderSpec("hres", speed_bias=-0.7, speed_noise=0.9, dir_bias=-8.0, dir_noise=10.0),
    ProviderSpec("arpege", speed_bias=1.5, speed_noise=1.4, dir_bias=12.0, dir_noise=18.0),
)


def default_layout(farm_id="synthfarm", n_rows=3, n_cols=3, spacing_d=5.0,
                   with_neighbour=True) -> FarmLayout:
    """Grid farm of reference turbines plus a small neighbouring farm west of it."""
    proto = reference_turbine()
    d = proto.rotor_diameter
    turbines = []
    for i in range(n_rows):
        for j in range(n_cols):
            turbines.append(reference_turbine(
                position=(j * spacing_d * d, i * spacing_d * d),
                turbine_id=f"T{i * n_cols + j + 1:02d}"))
    neighbours = ()
    if with_neighbour:
        nb_turbines = tuple(
            reference_turbine(position=(-4 * spacing_d * d, i * spacing_d * d),
                              turbine_id=f"N{i + 1:02d}")
            for i in range(2))
        neighbours = (FarmLayout(farm_id="neighbour", turbines=nb_turbines),)
    return FarmLayout(farm_id=farm_id, turbines=tuple(turbines), neighbours=neighbours)


@dataclass
class SyntheticScenario:
    n_hours: int = 2160
    start: str = "2022-01-01T00:00:00"
    providers: tuple[ProviderSpec, ...] = DEFAULT_PROVIDERS
    ar_rho: float = 0.97
    weibull_shape: float = 2.3
    weibull_scale: float = 10.0
    dir_kappa: float = 80.0  # von Mises concentration of the hourly direction step
    balancing_event_rate: float = 0.008  # per-hour probability of starting an event
    economic_event_rate: float = 0.004
    power_noise: float = 0.03  # multiplicative, std
    seed: int = 0
    wake_params: WakeParams = field(default_factory=WakeParams)
    layout: FarmLayout | None = None

    def resolved_layout(self) -> FarmLayout:
        return self.layout if self.layout is not None else default_layout()


@dataclass
class SyntheticDataset:
    scenario: SyntheticScenario
    layout: FarmLayout
    records: list[EnsembleForecastRecord]
    observations: list[PowerObservation]
    flags: dict[pd.Timestamp, bool]  # balancing-activation flag per hour
    truth: pd.DataFrame  # latent values for oracle checks

    @property
    def capacity(self) -> float:
        return self.layout.installed_capacity

    def write_csvs(self, outdir) -> dict[str, str]:
        """Forecast/production/flags/truth CSVs plus the layout file."""
        import os
        paths = {}
        times = [r.time for r in self.records]
        fc_rows = []
        for rec in self.records:
            for p in rec.providers:
                fc_rows.append((rec.time.isoformat(), p.provider_id,
                                p.wind_speed, p.wind_direction))
        fc = pd.DataFrame(fc_rows, columns=["time", "provider", "wind_speed_ms",
                                            "wind_direction_deg"])
        prod = pd.DataFrame({
            "time": [o.time.isoformat() for o in self.observations],
            "farm_id": [o.farm_id for o in self.observations],
            "power_mw": [o.power for o in self.observations],
        })
        flags = pd.DataFrame({
            "time": [t.isoformat() for t in times],
            "balancing_flag": [int(self.flags[t]) for t in times],
        })
        paths["forecasts"] = os.path.join(outdir, "forecasts.csv")
        paths["production"] = os.path.join(outdir, "production.csv")
        paths["flags"] = os.path.join(outdir, "flags.csv")
        paths["truth"] = os.path.join(outdir, "truth.csv")
        paths["layout"] = os.path.join(outdir, "layout.yaml")
        fc.to_csv(paths["forecasts"], index=False, float_format=CSV_FLOAT_FORMAT)
        prod.to_csv(paths["production"], index=False, float_format=CSV_FLOAT_FORMAT)
        flags.to_csv(paths["flags"], index=False)
        truth = self.truth.copy()
        truth["time"] = [t.isoformat() for t in truth["time"]]
        truth.to_csv(paths["truth"], index=False, float_format=CSV_FLOAT_FORMAT)
        save_layout(self.layout, paths["layout"])
        return paths


def _event_mask(rng, n, start_rate, min_len=1, max_len=6):
    """Random curtailment event blocks: start w.p. start_rate, random length."""
    mask = np.zeros(n, dtype=bool)
    i = 0
    while i < n:
        if rng.random() < start_rate:
            length = int(rng.integers(min_len, max_len + 1))
            mask[i:i + length] = True
            i += length
        else:
            i += 1
    return mask


def generate_synthetic(scenario: SyntheticScenario) -> SyntheticDataset:
    rng = np.random.default_rng(scenario.seed)
    n = scenario.n_hours
    layout = scenario.resolved_layout()
    capacity = layout.installed_capacity
    times = pd.date_range(scenario.start, periods=n, freq="h")

    # latent wind speed: standard-normal AR(1) pushed through the Weibull quantile map
    w = np.empty(n)
    w[0] = rng.standard_normal()
    innov = rng.standard_normal(n)
    sq = np.sqrt(1.0 - scenario.ar_rho ** 2)
    for i in range(1, n):
        w[i] = scenario.ar_rho * w[i - 1] + sq * innov[i]
    u = stats.norm.cdf(w)
    speed_true = stats.weibull_min.ppf(u, scenario.weibull_shape,
                                       scale=scenario.weibull_scale)

    # direction: von Mises random walk
    steps = np.rad2deg(rng.vonmises(0.0, scenario.dir_kappa, size=n))
    dir_true = np.mod(rng.uniform(0, 360) + np.cumsum(steps), 360.0)

    # provider forecasts
    records = []
    prov_speed = {}
    prov_dir = {}
    for spec in scenario.providers:
        prov_speed[spec.provider_id] = np.clip(
            speed_true + spec.speed_bias + spec.speed_noise * rng.standard_normal(n),
            0.0, None)
        prov_dir[spec.provider_id] = np.mod(
            dir_true + spec.dir_bias + spec.dir_noise * rng.standard_normal(n), 360.0)
    for i, t in enumerate(times):
        providers = tuple(ProviderForecast(spec.provider_id,
                                           float(prov_speed[spec.provider_id][i]),
                                           float(prov_dir[spec.provider_id][i]))
                          for spec in scenario.providers)
        records.append(EnsembleForecastRecord(time=t, providers=providers))

    # latent farm power from the wake model at the true wind
    latent = np.array([farm_power(layout, FlowCase(float(speed_true[i]),
                                                   float(dir_true[i])),
                                  scenario.wake_params).total
                       for i in range(n)])
    production = np.clip(latent * (1.0 + scenario.power_noise * rng.standard_normal(n)),
                         0.0, capacity)

    balancing = _event_mask(rng, n, scenario.balancing_event_rate)
    economic = _event_mask(rng, n, scenario.economic_event_rate) & ~balancing
    curtail_factor = rng.uniform(0.1, 0.5, size=n)
    production = np.where(balancing | economic, production * curtail_factor, production)

    observations = [PowerObservation(time=t, power=float(production[i]),
                                     farm_id=layout.farm_id)
                    for i, t in enumerate(times)]
    flags = {t: bool(balancing[i]) for i, t in enumerate(times)}
    truth = pd.DataFrame({
        "time": times,
        "speed_true": speed_true,
        "dir_true": dir_true,
        "latent_power": latent,
        "production": production,
        "balancing_flag": balancing.astype(int),
        "economic_flag": economic.astype(int),
    })
    return SyntheticDataset(scenario=scenario, layout=layout, records=records,
                            observations=observations, flags=flags, truth=truth)
