"""End-to-end orchestration: filtering, splits, tuning, training, ablation.

Chronological splits (train, calibration, test), curtailment filtering
(balancing flags remove hours everywhere; the economic 5th-percentile bin
filter touches only the training split), random hyperparameter search, and
the experiment drivers used by the CLI.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from . import cqr, diffusion, gbt, ngboost, wake
from .domain import PowerObservation, point_forecast
from .features import (DEFAULT_LAGS, FeatureMatrix, build_features,
                       ensemble_mean_inputs)
from .synthetic import SyntheticDataset


class MisalignmentError(ValueError):
    """Curtailment flags do not cover the observation timestamps."""


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    """Chronological fractions; the remainder after train+calibration is test."""
    train_frac: float = 0.5
    cal_frac: float = 0.25

    def __post_init__(self):
        if not (0 < self.train_frac < 1 and 0 < self.cal_frac < 1
                and self.train_frac + self.cal_frac < 1):
            raise ValueError("fractions must be positive and sum below 1")


def chronological_split(n: int, spec: SplitSpec):
    """(train, calibration, test) index arrays over n chronologically ordered rows."""
    n_train = int(round(spec.train_frac * n))
    n_cal = int(round(spec.cal_frac * n))
    return (np.arange(0, n_train),
            np.arange(n_train, n_train + n_cal),
            np.arange(n_train + n_cal, n))


# ---------------------------------------------------------------------------
# Curtailment filters
# ---------------------------------------------------------------------------

def filter_balancing_curtailments(observations, activation_flags) -> list[PowerObservation]:
    """Drop observations at hours where downward balancing bids were active.

    ``activation_flags`` maps timestamp -> bool and must cover every
    observation timestamp.
    """
    missing = [o.time for o in observations if o.time not in activation_flags]
    if missing:
        raise MisalignmentError(
            f"{len(missing)} observation timestamps lack a flag (first: {missing[0]})")
    return [o for o in observations if not activation_flags[o.time]]


def economic_curtailment_mask(powers, reference_speeds, bin_width=0.5,
                              min_count=100, percentile=5.0) -> np.ndarray:
    """Keep-mask for the economic curtailment proxy filter.

    Observations are grouped into reference-speed bins of ``bin_width`` m/s;
    bins with fewer than ``min_count`` rows are widened by merging the next
    bin rightward (the top group merges leftward). Within each final group,
    rows with power below the group's 5th percentile are dropped.
    """
    powers = np.asarray(powers, dtype=float)
    speeds = np.asarray(reference_speeds, dtype=float)
    if powers.shape != speeds.shape:
        raise ValueError("powers and reference speeds must align")
    n = powers.size
    if n == 0:
        return np.ones(0, dtype=bool)
    bin_idx = np.floor(speeds / bin_width).astype(int)
    lo, hi = bin_idx.min(), bin_idx.max()

    groups = []  # lists of row indices
    current: list[int] = []
    for b in range(lo, hi + 1):
        current.extend(np.where(bin_idx == b)[0])
        if len(current) >= min_count:
            groups.append(current)
            current = []
    if current:
        if groups:
            groups[-1] = groups[-1] + current  # top group merges leftward
        else:
            groups.append(current)

    keep = np.ones(n, dtype=bool)
    for rows in groups:
        rows = np.asarray(rows)
        thr = np.percentile(powers[rows], percentile)
        keep[rows[powers[rows] < thr]] = False
    return keep


def filter_economic_curtailments(observations, reference_speeds, **kwargs):
    """Training-split filter; returns (kept observations, keep mask)."""
    powers = [o.power for o in observations]
    keep = economic_curtailment_mask(powers, reference_speeds, **kwargs)
    return [o for o, k in zip(observations, keep) if k], keep


# ---------------------------------------------------------------------------
# Hyperparameter search
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Uniform:
    a: float
    b: float

    def sample(self, rng):
        return float(rng.uniform(self.a, self.b))


@dataclass(frozen=True)
class LogUniform:
    a: float
    b: float

    def sample(self, rng):
        return float(np.exp(rng.uniform(np.log(self.a), np.log(self.b))))


@dataclass(frozen=True)
class DiscreteUniform:
    a: int
    b: int  # inclusive

    def sample(self, rng):
        return int(rng.integers(self.a, self.b + 1))


@dataclass(frozen=True)
class Categorical:
    values: tuple

    def sample(self, rng):
        return self.values[int(rng.integers(len(self.values)))]


@dataclass
class SearchSpace:
    params: dict[str, object]

    def sample(self, rng) -> dict:
        return {name: dist.sample(rng) for name, dist in self.params.items()}


def depthwise_search_space() -> SearchSpace:
    """Depth-wise tree vocabulary (quantile and Gaussian heads)."""
    return SearchSpace({
        "learning_rate": Uniform(0.01, 0.2),
        "max_depth": DiscreteUniform(3, 7),
        "min_child_weight": Categorical((1, 5, 10, 20)),
        "gamma": Uniform(0.0, 1.0),
        "subsample": Uniform(0.5, 1.0),
    })


def leafwise_search_space() -> SearchSpace:
    """Leaf-wise tree vocabulary (diffusion head), includes n_repeats."""
    return SearchSpace({
        "n_estimators": DiscreteUniform(100, 3000),
        "n_repeats": DiscreteUniform(10, 50),
        "learning_rate": LogUniform(0.01, 1.0),
        "early_stopping_rounds": DiscreteUniform(10, 100),
        "num_leaves": DiscreteUniform(10, 100),
    })


def random_search(space: SearchSpace, objective, n_iter: int = 25, seed: int = 0):
    """Draw n_iter parameter vectors, score each, return (best params, trial log).

    ``objective`` maps a parameter dict to a scalar score (lower is better);
    trials that raise are recorded with their error and skipped.
    """
    rng = np.random.default_rng(seed)
    trials = []
    best = None
    for i in range(n_iter):
        params = space.sample(rng)
        try:
            score = float(objective(params))
        except Exception as exc:  # noqa: BLE001 - trial errors are data
            trials.append({"trial": i, "params": params, "error": str(exc)})
            continue
        trials.append({"trial": i, "params": params, "score": score})
        if best is None or score < best[0]:
            best = (score, params)
    if best is None:
        raise RuntimeError("every random-search trial failed")
    return best[1], trials


def params_from_sample(sample: dict, base: gbt.GbtParams) -> gbt.GbtParams:
    """Overlay sampled hyperparameters onto a base GbtParams."""
    known = {k: v for k, v in sample.items() if k in gbt.GbtParams.__dataclass_fields__}
    return replace(base, **known)


# ---------------------------------------------------------------------------
# Dataset preparation
# ---------------------------------------------------------------------------

@dataclass
class PreparedData:
    fm: FeatureMatrix  # rows remaining after balancing filter, chronological
    splits: dict[str, np.ndarray]  # name -> row indices into fm
    train_keep: np.ndarray  # economic-filter keep mask over the train indices
    mean_speed: np.ndarray  # ensemble mean speed per row
    mean_dir: np.ndarray  # circular mean direction per row
    reference_speed: np.ndarray  # binning reference (truth wind when available)

    def design(self, split: str):
        idx = self.splits[split]
        if split == "train":
            idx = idx[self.train_keep]
        sub = self.fm.select(np.isin(np.arange(self.fm.n_rows), idx))
        return sub.matrix(), sub.target, sub.times

    def split_rows(self, split: str) -> np.ndarray:
        idx = self.splits[split]
        if split == "train":
            idx = idx[self.train_keep]
        return idx


def prepare_dataset(records, observations, flags, lags=DEFAULT_LAGS,
                    split_spec: SplitSpec = SplitSpec(),
                    reference_speed_by_time=None) -> PreparedData:
    """Feature build + balancing filter + chronological split + economic filter."""
    kept = filter_balancing_curtailments(observations, flags)
    power_by_time = {o.time: o.power for o in kept}
    fm_all = build_features(records, lags=lags)
    has_target = np.array([t in power_by_time for t in fm_all.times])
    fm = fm_all.select(has_target)
    fm.target = np.array([power_by_time[t] for t in fm.times], dtype=float)

    mean_inputs = {t: (s, d) for t, s, d in ensemble_mean_inputs(records)}
    mean_speed = np.array([mean_inputs[t][0] for t in fm.times])
    mean_dir = np.array([mean_inputs[t][1] for t in fm.times])
    if reference_speed_by_time is not None:
        reference = np.array([reference_speed_by_time[t] for t in fm.times])
    else:
        reference = mean_speed

    train_idx, cal_idx, test_idx = chronological_split(fm.n_rows, split_spec)
    train_keep = economic_curtailment_mask(fm.target[train_idx], reference[train_idx])
    return PreparedData(fm=fm,
                        splits={"train": train_idx, "cal": cal_idx, "test": test_idx},
                        train_keep=train_keep,
                        mean_speed=mean_speed, mean_dir=mean_dir,
                        reference_speed=reference)


def prepare_from_synthetic(data: SyntheticDataset, lags=DEFAULT_LAGS,
                           split_spec: SplitSpec = SplitSpec()) -> PreparedData:
    truth_speed = dict(zip(data.truth["time"], data.truth["speed_true"]))
    return prepare_dataset(data.records, data.observations, data.flags,
                           lags=lags, split_spec=split_spec,
                           reference_speed_by_time=truth_speed)


# ---------------------------------------------------------------------------
# Heads and baselines
# ---------------------------------------------------------------------------

def train_cqr_head(prepared: PreparedData, params: gbt.GbtParams):
    X, y, _ = prepared.design("train")
    Xc, yc, _ = prepared.design("cal")
    models = cqr.train_quantile_models(X, y, params, feature_names=prepared.fm.names)
    calibrations = cqr.calibrate_model_set(models, Xc, yc)
    return models, calibrations


def predict_cqr(models, calibrations, prepared: PreparedData, split="test",
                capacity=None):
    X, _, times = prepared.design(split)
    return cqr.predict_distribution(models, X, times, calibrations=calibrations,
                                    capacity=capacity)


def train_ngboost_head(prepared: PreparedData, params: gbt.GbtParams,
                       capacity=None):
    X, y, _ = prepared.design("train")
    floor = 1e-6 * capacity if capacity else None
    return ngboost.train_ngboost(X, y, params, sigma_floor=floor,
                                 feature_names=prepared.fm.names)


def predict_ngboost(model, prepared: PreparedData, split="test"):
    X, _, times = prepared.design(split)
    return ngboost.predict_distribution(model, X, times)


def train_diffusion_head(prepared: PreparedData, params: gbt.GbtParams,
                         n_repeats=20, sde=None, n_samples=50, n_steps=50):
    X, y, _ = prepared.design("train")
    kwargs = {} if sde is None else {"sde": sde}
    return diffusion.train_diffusion(X, y, params, n_repeats=n_repeats,
                                     n_samples=n_samples, n_steps=n_steps,
                                     feature_names=prepared.fm.names, **kwargs)


def predict_diffusion(model, prepared: PreparedData, split="test", seed=0,
                      capacity=None):
    X, _, times = prepared.design(split)
    return diffusion.predict_distribution(model, X, times, seed=seed,
                                          capacity=capacity)


def wake_calibration_observations(data: SyntheticDataset, prepared: PreparedData,
                                  max_cases=60):
    """SCADA-proxy calibration cases: true wind vs produced power on clean
    training-split hours (mid power curve, no curtailment)."""
    truth = data.truth.set_index("time")
    rows = prepared.split_rows("train")
    cases = []
    for i in rows:
        t = prepared.fm.times[i]
        rec = truth.loc[t]
        if rec["balancing_flag"] or rec["economic_flag"]:
            continue
        v = float(rec["speed_true"])
        if not 5.0 <= v <= 11.0:  # wake losses only identifiable below rated
            continue
        cases.append((wake.FlowCase(v, float(rec["dir_true"])), float(rec["production"])))
    stride = max(1, len(cases) // max_cases)
    return cases[::stride][:max_cases]


def engineering_forecasts(layout, prepared: PreparedData, params: wake.WakeParams,
                          split="test"):
    """(power curve, wake model) MW predictions from the ensemble mean inputs."""
    rows = prepared.split_rows(split)
    pc = np.array([wake.power_curve_forecast(layout, prepared.mean_speed[i])
                   for i in rows])
    wk = np.array([wake.farm_power(layout, wake.FlowCase(prepared.mean_speed[i],
                                                         prepared.mean_dir[i]),
                                   params).total
                   for i in rows])
    return pc, wk


def loss_rescale_ratio(prepared: PreparedData) -> float:
    """Max observed training power over rated power (grid-loss proxy)."""
    X, y, _ = prepared.design("train")
    return float(np.max(y))


# ---------------------------------------------------------------------------
# Ensemble-input ablation
# ---------------------------------------------------------------------------

def _point_mae(records, observations, flags, lags, split_spec, params,
               reference_speed_by_time=None) -> float:
    prepared = prepare_dataset(records, observations, flags, lags=lags,
                               split_spec=split_spec,
                               reference_speed_by_time=reference_speed_by_time)
    X, y, _ = prepared.design("train")
    model = gbt.train(X, y, gbt.quantile_objective(0.5), params)
    Xt, yt, _ = prepared.design("test")
    return float(np.mean(np.abs(yt - model.predict(Xt))))


def run_ablation_inputs(data: SyntheticDataset, params: gbt.GbtParams,
                        lags=DEFAULT_LAGS,
                        split_spec: SplitSpec = SplitSpec()) -> dict:
    """Test MAE (MW) of the median head under different input sets.

    Configurations: the full provider ensemble, each single provider, and
    the latent true wind (reanalysis proxy).
    """
    from .domain import EnsembleForecastRecord, ProviderForecast

    truth_speed = dict(zip(data.truth["time"], data.truth["speed_true"]))
    common = dict(observations=data.observations, flags=data.flags, lags=lags,
                  split_spec=split_spec, params=params,
                  reference_speed_by_time=truth_speed)

    results = {"ensemble": _point_mae(records=data.records, **common)}
    provider_ids = data.records[0].provider_ids()
    for pid in provider_ids:
        solo = [EnsembleForecastRecord(
            time=r.time,
            providers=tuple(p for p in r.providers if p.provider_id == pid))
            for r in data.records]
        results[f"single:{pid}"] = _point_mae(records=solo, **common)
    truth_records = [EnsembleForecastRecord(
        time=t, providers=(ProviderForecast("reanalysis", float(s), float(d)),))
        for t, s, d in zip(data.truth["time"], data.truth["speed_true"],
                           data.truth["dir_true"])]
    results["truth"] = _point_mae(records=truth_records, **common)

    singles = [v for k, v in results.items() if k.startswith("single:")]
    worst = max(singles)
    results["improvement_vs_worst_single_pct"] = 100.0 * (worst - results["ensemble"]) / worst
    return results


# ---------------------------------------------------------------------------
# Dataset bundle I/O (CSV + JSON sidecar)
# ---------------------------------------------------------------------------

def save_prepared(prepared: PreparedData, csv_path, meta_path) -> None:
    import json

    n = prepared.fm.n_rows
    split_col = np.empty(n, dtype=object)
    for name, idx in prepared.splits.items():
        split_col[idx] = name
    keep_col = np.ones(n, dtype=int)
    train_idx = prepared.splits["train"]
    keep_col[train_idx[~prepared.train_keep]] = 0

    df = pd.DataFrame({
        "time": [t.isoformat() for t in prepared.fm.times],
        "target": prepared.fm.target,
        "split": split_col,
        "train_keep": keep_col,
        "mean_speed": prepared.mean_speed,
        "mean_dir": prepared.mean_dir,
        "reference_speed": prepared.reference_speed,
    })
    for name in prepared.fm.names:
        df[name] = prepared.fm.columns[name]
    df.to_csv(csv_path, index=False)
    with open(meta_path, "w") as fh:
        json.dump({"feature_names": prepared.fm.names}, fh, indent=2)


def load_prepared(csv_path, meta_path) -> PreparedData:
    import json

    with open(meta_path) as fh:
        meta = json.load(fh)
    df = pd.read_csv(csv_path)
    times = pd.DatetimeIndex(pd.to_datetime(df["time"]))
    fm = FeatureMatrix(times=times,
                       columns={name: df[name].to_numpy(dtype=float)
                                for name in meta["feature_names"]},
                       target=df["target"].to_numpy(dtype=float))
    splits = {name: np.where(df["split"] == name)[0]
              for name in ("train", "cal", "test")}
    train_keep = df["train_keep"].to_numpy(dtype=int)[splits["train"]].astype(bool)
    return PreparedData(fm=fm, splits=splits, train_keep=train_keep,
                        mean_speed=df["mean_speed"].to_numpy(dtype=float),
                        mean_dir=df["mean_dir"].to_numpy(dtype=float),
                        reference_speed=df["reference_speed"].to_numpy(dtype=float))
