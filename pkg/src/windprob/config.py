"""Strict YAML run configuration mirroring the toolkit's parameter types.

Unknown keys anywhere in the document are errors, so typos fail loudly
instead of silently falling back to defaults.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields, is_dataclass

import yaml

from .gbt import GbtParams
from .pipeline import SplitSpec
from .synthetic import ProviderSpec, SyntheticScenario
from .wake import WakeParams


class UnknownKeyError(ValueError):
    pass


@dataclass
class ScenarioConfig:
    n_hours: int = 2160
    start: str = "2022-01-01T00:00:00"
    ar_rho: float = 0.97
    weibull_shape: float = 2.3
    weibull_scale: float = 10.0
    dir_kappa: float = 80.0
    balancing_event_rate: float = 0.008
    economic_event_rate: float = 0.004
    power_noise: float = 0.03
    providers: list["ProviderConfig"] = field(default_factory=list)


@dataclass
class ProviderConfig:
    provider_id: str
    speed_bias: float = 0.0
    speed_noise: float = 0.8
    dir_bias: float = 0.0
    dir_noise: float = 10.0


@dataclass
class FeaturesConfig:
    lags: list[int] = field(default_factory=lambda: [-1, 0, 1])


@dataclass
class GbtConfig:
    learning_rate: float = 0.1
    max_depth: int = 4
    min_child_weight: float = 1.0
    gamma: float = 0.0
    subsample: float = 1.0
    n_estimators: int = 100
    num_leaves: int = 31
    early_stopping_rounds: int | None = None

    def to_params(self, seed: int) -> GbtParams:
        return GbtParams(seed=seed, **dataclasses.asdict(self))


@dataclass
class CqrConfig:
    gbt: GbtConfig = field(default_factory=GbtConfig)
    alphas: list[float] = field(default_factory=lambda: [0.1, 0.2])


@dataclass
class NgboostConfig:
    gbt: GbtConfig = field(default_factory=lambda: GbtConfig(n_estimators=150))


@dataclass
class DiffusionConfig:
    gbt: GbtConfig = field(default_factory=lambda: GbtConfig(num_leaves=31))
    n_repeats: int = 20
    sigma_min: float = 0.01
    sigma_max: float = 8.0
    n_samples: int = 50
    n_steps: int = 50


@dataclass
class WakeConfig:
    k_a: float = 0.38371
    k_b: float = 0.003678
    ambient_ti_iref: float = 0.06

    def to_params(self) -> WakeParams:
        return WakeParams(k_a=self.k_a, k_b=self.k_b,
                          ambient_ti_iref=self.ambient_ti_iref)


@dataclass
class SplitConfig:
    train_frac: float = 0.5
    cal_frac: float = 0.25

    def to_spec(self) -> SplitSpec:
        return SplitSpec(train_frac=self.train_frac, cal_frac=self.cal_frac)


@dataclass
class TuneConfig:
    n_iter: int = 25


@dataclass
class RunConfig:
    seed: int = 0
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    features: FeaturesConfig = field(default_factory=FeaturesConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    wake: WakeConfig = field(default_factory=WakeConfig)
    cqr: CqrConfig = field(default_factory=CqrConfig)
    ngboost: NgboostConfig = field(default_factory=NgboostConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    tune: TuneConfig = field(default_factory=TuneConfig)

    def to_scenario(self) -> SyntheticScenario:
        kwargs = dataclasses.asdict(self.scenario)
        providers = kwargs.pop("providers")
        scenario = SyntheticScenario(seed=self.seed,
                                     wake_params=self.wake.to_params(), **kwargs)
        if providers:
            scenario.providers = tuple(ProviderSpec(**p) for p in providers)
        return scenario

    def hash(self) -> str:
        payload = json.dumps(dataclasses.asdict(self), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()


def _build(cls, data, path="config"):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise UnknownKeyError(f"{path}: expected a mapping, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise UnknownKeyError(f"{path}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        f = known[name]
        target = _nested_dataclass(f)
        if target is not None:
            kwargs[name] = _build(target, value, f"{path}.{name}")
        elif name == "providers":
            kwargs[name] = [_build(ProviderConfig, v, f"{path}.providers[{i}]")
                            for i, v in enumerate(value)]
        else:
            kwargs[name] = value
    return cls(**kwargs)


def _nested_dataclass(f):
    t = f.type if not isinstance(f.type, str) else f.type
    mapping = {
        "ScenarioConfig": ScenarioConfig, "FeaturesConfig": FeaturesConfig,
        "SplitConfig": SplitConfig, "WakeConfig": WakeConfig,
        "CqrConfig": CqrConfig, "NgboostConfig": NgboostConfig,
        "DiffusionConfig": DiffusionConfig, "TuneConfig": TuneConfig,
        "GbtConfig": GbtConfig,
    }
    if isinstance(t, str):
        return mapping.get(t)
    return t if is_dataclass(t) else None


def load_config(path) -> RunConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh)
    return _build(RunConfig, data)


def default_config() -> RunConfig:
    return RunConfig()
