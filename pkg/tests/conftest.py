import numpy as np
import pandas as pd
import pytest

from windprob.domain import (Curve, FarmLayout, EnsembleForecastRecord,
                             ProviderForecast, Turbine, reference_turbine)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_turbine(position=(0.0, 0.0), turbine_id="T1", rated=8.0):
    return reference_turbine(position=position, turbine_id=turbine_id,
                             rated_power_mw=rated)


@pytest.fixture
def single_turbine_layout():
    return FarmLayout(farm_id="one", turbines=(make_turbine(),))


@pytest.fixture
def row_layout():
    """Three turbines in a west-east row, 5 diameters apart."""
    d = reference_turbine().rotor_diameter
    turbines = tuple(make_turbine(position=(i * 5 * d, 0.0), turbine_id=f"T{i+1}")
                     for i in range(3))
    return FarmLayout(farm_id="row", turbines=turbines)


def make_records(n, start="2022-01-01", providers=("a", "b"), seed=0):
    """Simple hourly forecast records with deterministic pseudo-random values."""
    gen = np.random.default_rng(seed)
    times = pd.date_range(start, periods=n, freq="h")
    records = []
    for t in times:
        provs = tuple(
            ProviderForecast(pid, float(gen.uniform(3, 15)), float(gen.uniform(0, 360)))
            for pid in providers)
        records.append(EnsembleForecastRecord(time=t, providers=provs))
    return records
