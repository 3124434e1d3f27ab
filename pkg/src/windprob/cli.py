"""Command-line entry points: simulate, prepare, tune, train, predict,
baseline, evaluate. Every run writes a manifest (config hash, seed, input
and output file hashes) so outputs can be reproduced byte-identically."""

from __future__ import annotations

import hashlib
import json
import os

import click
import numpy as np
import pandas as pd

from . import cqr, diffusion, evaluation, gbt, ngboost, pipeline, wake
from .config import RunConfig, default_config, load_config
from .domain import (EnsembleForecastRecord, PowerObservation, ProviderForecast,
                     load_layout, point_forecast)
from .evaluation import FIXED_LEVELS
from .synthetic import SyntheticDataset, SyntheticScenario, generate_synthetic

HEADS = ("cqr", "ngboost", "diffusion")


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(outdir, command, cfg: RunConfig, inputs, outputs):
    manifest = {
        "command": command,
        "seed": cfg.seed,
        "config_hash": cfg.hash(),
        "inputs": {os.path.basename(p): _sha256(p) for p in sorted(inputs)},
        "outputs": {os.path.basename(p): _sha256(p) for p in sorted(outputs)},
    }
    path = os.path.join(outdir, f"manifest_{command}.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def _load_inputs(outdir):
    """Read the simulate CSVs back into domain objects."""
    fc = pd.read_csv(os.path.join(outdir, "forecasts.csv"))
    fc["time"] = pd.to_datetime(fc["time"])
    records = []
    for t, grp in fc.groupby("time", sort=True):
        providers = tuple(ProviderForecast(str(r.provider), float(r.wind_speed_ms),
                                           float(r.wind_direction_deg))
                          for r in grp.itertuples())
        records.append(EnsembleForecastRecord(time=t, providers=providers))
    prod = pd.read_csv(os.path.join(outdir, "production.csv"))
    prod["time"] = pd.to_datetime(prod["time"])
    observations = [PowerObservation(time=r.time, power=float(r.power_mw),
                                     farm_id=str(r.farm_id))
                    for r in prod.itertuples()]
    fl = pd.read_csv(os.path.join(outdir, "flags.csv"))
    fl["time"] = pd.to_datetime(fl["time"])
    flags = {r.time: bool(r.balancing_flag) for r in fl.itertuples()}
    truth = None
    truth_path = os.path.join(outdir, "truth.csv")
    if os.path.exists(truth_path):
        truth = pd.read_csv(truth_path)
        truth["time"] = pd.to_datetime(truth["time"])
    return records, observations, flags, truth


def _load_prepared(outdir):
    return pipeline.load_prepared(os.path.join(outdir, "dataset.csv"),
                                  os.path.join(outdir, "dataset_meta.json"))


def _predictions_path(outdir, name):
    return os.path.join(outdir, f"predictions_{name}.csv")


def _save_predictions(path, times, dists):
    data = {"time": [t.isoformat() for t in times]}
    for k, level in enumerate(FIXED_LEVELS):
        data[f"q{level:0.2f}"] = [d.quantile_values[k] for d in dists]
    if dists and dists[0].gaussian is not None:
        data["mu"] = [d.gaussian[0] for d in dists]
        data["sigma"] = [d.gaussian[1] for d in dists]
    pd.DataFrame(data).to_csv(path, index=False)


def _load_predictions(path):
    df = pd.read_csv(path)
    times = pd.to_datetime(df["time"])
    dists = []
    for i in range(len(df)):
        values = [df[f"q{level:0.2f}"].iloc[i] for level in FIXED_LEVELS]
        gaussian = None
        if "mu" in df.columns:
            gaussian = (float(df["mu"].iloc[i]), float(df["sigma"].iloc[i]))
        dists.append(evaluation.PredictiveDistribution(
            time=times.iloc[i], quantile_levels=FIXED_LEVELS,
            quantile_values=np.sort(values), gaussian=gaussian))
    return dists


@click.group()
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--out", "outdir", type=click.Path(), required=True)
@click.pass_context
def main(ctx, seed, config_path, outdir):
    """Probabilistic day-ahead wind power forecasting toolkit."""
    cfg = load_config(config_path) if config_path else default_config()
    if seed is not None:
        cfg.seed = seed
    os.makedirs(outdir, exist_ok=True)
    ctx.obj = {"cfg": cfg, "outdir": outdir}


@main.command()
@click.pass_obj
def simulate(obj):
    """Generate the synthetic scenario CSVs (forecasts, production, flags, truth)."""
    cfg, outdir = obj["cfg"], obj["outdir"]
    data = generate_synthetic(cfg.to_scenario())
    paths = data.write_csvs(outdir)
    _write_manifest(outdir, "simulate", cfg, [], paths.values())
    click.echo(f"simulated {len(data.records)} hours into {outdir}")


@main.command()
@click.pass_obj
def prepare(obj):
    """Ingest CSVs, filter curtailments, build the lagged feature matrix."""
    cfg, outdir = obj["cfg"], obj["outdir"]
    records, observations, flags, truth = _load_inputs(outdir)
    reference = None
    if truth is not None:
        reference = dict(zip(truth["time"], truth["speed_true"]))
    prepared = pipeline.prepare_dataset(records, observations, flags,
                                        lags=cfg.features.lags,
                                        split_spec=cfg.split.to_spec(),
                                        reference_speed_by_time=reference)
    csv_path = os.path.join(outdir, "dataset.csv")
    meta_path = os.path.join(outdir, "dataset_meta.json")
    pipeline.save_prepared(prepared, csv_path, meta_path)
    inputs = [os.path.join(outdir, f) for f in
              ("forecasts.csv", "production.csv", "flags.csv")]
    _write_manifest(outdir, "prepare", cfg, inputs, [csv_path, meta_path])
    click.echo(f"prepared {prepared.fm.n_rows} rows "
               f"({len(prepared.split_rows('train'))} train after filtering)")


def _head_params(cfg: RunConfig, head: str) -> gbt.GbtParams:
    section = getattr(cfg, head)
    return section.gbt.to_params(cfg.seed)


def _train_head(cfg, head, prepared, capacity):
    params = _head_params(cfg, head)
    if head == "cqr":
        models, calibrations = pipeline.train_cqr_head(prepared, params)
        return {"model": models, "calibrations": calibrations}
    if head == "ngboost":
        return {"model": pipeline.train_ngboost_head(prepared, params,
                                                     capacity=capacity)}
    sde = diffusion.SdeSpec(cfg.diffusion.sigma_min, cfg.diffusion.sigma_max)
    model = pipeline.train_diffusion_head(
        prepared, params, n_repeats=cfg.diffusion.n_repeats, sde=sde,
        n_samples=cfg.diffusion.n_samples, n_steps=cfg.diffusion.n_steps)
    return {"model": model}


@main.command()
@click.option("--head", type=click.Choice(HEADS), required=True)
@click.pass_obj
def tune(obj, head):
    """Random hyperparameter search scored by calibration-split CRPS."""
    cfg, outdir = obj["cfg"], obj["outdir"]
    prepared = _load_prepared(outdir)
    layout = load_layout(os.path.join(outdir, "layout.yaml"))
    capacity = layout.installed_capacity
    Xc, yc, times_c = prepared.design("cal")
    space = (pipeline.leafwise_search_space() if head == "diffusion"
             else pipeline.depthwise_search_space())
    base = _head_params(cfg, head)

    def objective(sample):
        params = pipeline.params_from_sample(sample, base)
        if head == "cqr":
            models = cqr.train_quantile_models(
                *prepared.design("train")[:2], params, feature_names=prepared.fm.names)
            dists = cqr.predict_distribution(models, Xc, times_c, capacity=capacity)
        elif head == "ngboost":
            model = pipeline.train_ngboost_head(prepared, params, capacity=capacity)
            dists = ngboost.predict_distribution(model, Xc, times_c)
        else:
            model = pipeline.train_diffusion_head(
                prepared, params, n_repeats=sample.get("n_repeats", cfg.diffusion.n_repeats))
            dists = diffusion.predict_distribution(model, Xc, times_c,
                                                   seed=cfg.seed, capacity=capacity)
        return evaluation.mean_crps(yc, dists)

    best, trials = pipeline.random_search(space, objective,
                                          n_iter=cfg.tune.n_iter, seed=cfg.seed)
    best_path = os.path.join(outdir, f"tuned_{head}.json")
    trials_path = os.path.join(outdir, f"trials_{head}.json")
    with open(best_path, "w") as fh:
        json.dump(best, fh, indent=2, sort_keys=True)
    with open(trials_path, "w") as fh:
        json.dump(trials, fh, indent=2)
    _write_manifest(outdir, f"tune_{head}", cfg,
                    [os.path.join(outdir, "dataset.csv")], [best_path, trials_path])
    click.echo(f"best {head} params: {best}")


@main.command()
@click.option("--head", type=click.Choice(HEADS), required=True)
@click.pass_obj
def train(obj, head):
    """Train one probabilistic head on the prepared dataset."""
    cfg, outdir = obj["cfg"], obj["outdir"]
    prepared = _load_prepared(outdir)
    layout = load_layout(os.path.join(outdir, "layout.yaml"))
    bundle = _train_head(cfg, head, prepared, layout.installed_capacity)
    outputs = []
    model_path = os.path.join(outdir, f"model_{head}.json")
    if head == "cqr":
        with open(model_path, "w") as fh:
            json.dump(bundle["model"].to_dict(), fh)
        cal_path = os.path.join(outdir, "calibration_cqr.json")
        cqr.save_calibrations(bundle["calibrations"], cal_path)
        outputs = [model_path, cal_path]
    else:
        bundle["model"].save(model_path)
        outputs = [model_path]
    _write_manifest(outdir, f"train_{head}", cfg,
                    [os.path.join(outdir, "dataset.csv")], outputs)
    click.echo(f"trained {head} -> {model_path}")


@main.command()
@click.option("--head", type=click.Choice(HEADS), required=True)
@click.option("--split", type=click.Choice(("train", "cal", "test")), default="test")
@click.pass_obj
def predict(obj, head, split):
    """Predict quantile distributions for a split with a trained head."""
    cfg, outdir = obj["cfg"], obj["outdir"]
    prepared = _load_prepared(outdir)
    layout = load_layout(os.path.join(outdir, "layout.yaml"))
    capacity = layout.installed_capacity
    X, _, times = prepared.design(split)
    model_path = os.path.join(outdir, f"model_{head}.json")
    if head == "cqr":
        with open(model_path) as fh:
            models = cqr.QuantileModelSet.from_dict(json.load(fh))
        calibrations = cqr.load_calibrations(os.path.join(outdir, "calibration_cqr.json"))
        dists = cqr.predict_distribution(models, X, times,
                                         calibrations=calibrations, capacity=capacity)
    elif head == "ngboost":
        model = ngboost.NgboostModel.load(model_path)
        dists = ngboost.predict_distribution(model, X, times)
    else:
        model = diffusion.DiffusionModel.load(model_path)
        dists = diffusion.predict_distribution(model, X, times, seed=cfg.seed,
                                               capacity=capacity)
    pred_path = _predictions_path(outdir, head)
    _save_predictions(pred_path, times, dists)
    _write_manifest(outdir, f"predict_{head}", cfg, [model_path], [pred_path])
    click.echo(f"wrote {pred_path}")


@main.command()
@click.argument("model", type=click.Choice(("power-curve", "wake", "calibrate-wake")))
@click.pass_obj
def baseline(obj, model):
    """Deterministic engineering baselines and wake-model calibration."""
    cfg, outdir = obj["cfg"], obj["outdir"]
    prepared = _load_prepared(outdir)
    layout = load_layout(os.path.join(outdir, "layout.yaml"))
    params = cfg.wake.to_params()

    if model == "calibrate-wake":
        records, observations, flags, truth = _load_inputs(outdir)
        data = SyntheticDataset(scenario=cfg.to_scenario(), layout=layout,
                                records=records, observations=observations,
                                flags=flags, truth=truth)
        cases = pipeline.wake_calibration_observations(data, prepared)
        fitted = wake.calibrate_wake(layout, cases, params_init=params)
        rmse = wake.calibration_rmse(layout, cases, fitted)
        report_path = os.path.join(outdir, "wake_calibration.json")
        with open(report_path, "w") as fh:
            json.dump({"k_a": fitted.k_a, "k_b": fitted.k_b,
                       "ambient_ti_iref": fitted.ambient_ti_iref,
                       "rmse_mw": rmse, "n_cases": len(cases)}, fh,
                      indent=2, sort_keys=True)
        _write_manifest(outdir, "baseline_calibrate_wake", cfg,
                        [os.path.join(outdir, "dataset.csv")], [report_path])
        click.echo(f"calibrated wake params -> {report_path}")
        return

    cal_path = os.path.join(outdir, "wake_calibration.json")
    if model == "wake" and os.path.exists(cal_path):
        with open(cal_path) as fh:
            fitted = json.load(fh)
        params = wake.WakeParams(k_a=fitted["k_a"], k_b=fitted["k_b"],
                                 ambient_ti_iref=fitted["ambient_ti_iref"])
    pc, wk = pipeline.engineering_forecasts(layout, prepared, params)
    pred = pc if model == "power-curve" else wk
    max_obs = pipeline.loss_rescale_ratio(prepared)
    pred = wake.rescale_engineering(pred, max_obs, layout.installed_capacity)
    _, _, times = prepared.design("test")
    path = os.path.join(outdir, f"baseline_{model}.csv")
    pd.DataFrame({"time": [t.isoformat() for t in times],
                  "power_mw": pred}).to_csv(path, index=False)
    _write_manifest(outdir, f"baseline_{model}", cfg,
                    [os.path.join(outdir, "dataset.csv")], [path])
    click.echo(f"wrote {path}")


@main.command()
@click.option("--ablation", is_flag=True, help="Also run the input-set ablation.")
@click.pass_obj
def evaluate(obj, ablation):
    """Score every available prediction set and write the report."""
    cfg, outdir = obj["cfg"], obj["outdir"]
    prepared = _load_prepared(outdir)
    layout = load_layout(os.path.join(outdir, "layout.yaml"))
    _, y, times = prepared.design("test")
    rows = prepared.split_rows("test")
    speeds = prepared.mean_speed[rows]

    scores = {}
    for head in HEADS:
        path = _predictions_path(outdir, head)
        if not os.path.exists(path):
            continue
        dists = _load_predictions(path)
        point = np.array([point_forecast(d) for d in dists])
        scores[head] = evaluation.score_farm(layout.farm_id, layout, y, point,
                                             speeds, dists=dists)
    for name in ("power-curve", "wake"):
        path = os.path.join(outdir, f"baseline_{name}.csv")
        if not os.path.exists(path):
            continue
        pred = pd.read_csv(path)["power_mw"].to_numpy()
        scores[name] = evaluation.score_farm(layout.farm_id, layout, y, pred, speeds)

    report = {name: evaluation.build_report([fs]).to_dict()
              for name, fs in scores.items()}
    if ablation:
        records, observations, flags, truth = _load_inputs(outdir)
        data = SyntheticDataset(scenario=cfg.to_scenario(), layout=layout,
                                records=records, observations=observations,
                                flags=flags, truth=truth)
        report["ablation"] = pipeline.run_ablation_inputs(
            data, _head_params(cfg, "cqr"), lags=cfg.features.lags,
            split_spec=cfg.split.to_spec())

    json_path = os.path.join(outdir, "report.json")
    with open(json_path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    text_path = os.path.join(outdir, "report.txt")
    with open(text_path, "w") as fh:
        for name, fs in sorted(scores.items()):
            fh.write(f"== {name} ==\n")
            fh.write(evaluation.build_report([fs]).render_text())
            fh.write("\n")
    _write_manifest(outdir, "evaluate", cfg, [], [json_path, text_path])
    click.echo(f"wrote {json_path}")


if __name__ == "__main__":
    main()
