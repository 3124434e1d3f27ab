"""End-to-end acceptance suite.

Ten gates, one test each, covering: conformal coverage, the pinball
minimizer, gradient correctness, Gaussian-head parameter recovery,
diffusion distributional fidelity, the method ordering against the
engineering baselines, the ensemble-input ablation, wake-model
self-consistency, the CRPS/MAE identity, and byte-level determinism of
the CLI pipeline. Each test prints a single pass/fail line with the
measured numbers before asserting.
"""

import dataclasses
import datetime
import functools
import hashlib
import json
from pathlib import Path

import numpy as np
import yaml
from click.testing import CliRunner
from scipy.special import ndtri

from windprob import cqr, diffusion, evaluation, gbt, ngboost, pipeline, synthetic, wake
from windprob.cli import main as cli_main
from windprob.domain import FarmLayout, PredictiveDistribution, reference_turbine

LEVELS = evaluation.FIXED_LEVELS
T0 = datetime.datetime(2022, 1, 1)
N_SEEDS = 20

SCENARIO_HOURS = 4320
SCENARIO_POWER_NOISE = 0.02
POINT_PARAMS = gbt.GbtParams(n_estimators=80, max_depth=3, learning_rate=0.1,
                             subsample=0.9, seed=0)
DIFFUSION_PARAMS = gbt.GbtParams(n_estimators=50, max_depth=3, learning_rate=0.15,
                                 subsample=0.9, seed=0)


def report(name, ok, detail):
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


def dists_from_quantiles(q):
    return [PredictiveDistribution(T0, LEVELS, np.sort(row)) for row in q]


@functools.lru_cache(maxsize=None)
def scenario_data(seed):
    sc = synthetic.SyntheticScenario(seed=seed, n_hours=SCENARIO_HOURS,
                                     power_noise=SCENARIO_POWER_NOISE)
    return sc, synthetic.generate_synthetic(sc)


# ---------------------------------------------------------------------------
# 1. Conformal coverage on exchangeable data
# ---------------------------------------------------------------------------

def test_acceptance_01_conformal_coverage():
    """Mean coverage of the conformalized 80%/90% intervals over 20 seeds
    stays within [target - 2pp, target + 1/(n_cal+1) + 2pp] on i.i.d. data."""
    n_cal = 1000

    def run(seed):
        rng = np.random.default_rng(seed)

        def make(n):
            X = rng.uniform(-2, 2, size=(n, 3))
            noise = (0.4 + 0.3 * np.abs(X[:, 1])) * rng.standard_normal(n)
            return X, np.sin(X[:, 0]) + 0.5 * X[:, 1] * X[:, 2] + noise

        X_tr, y_tr = make(2000)
        X_cal, y_cal = make(n_cal)
        X_te, y_te = make(5000)
        params = gbt.GbtParams(n_estimators=40, max_depth=3, learning_rate=0.1, seed=0)
        models = cqr.train_quantile_models(X_tr, y_tr, params)
        cals = cqr.calibrate_model_set(models, X_cal, y_cal)
        dists = cqr.predict_distribution(models, X_te, [T0] * y_te.size,
                                         calibrations=cals)
        return (evaluation.interval_coverage(y_te, dists, 0.20),
                evaluation.interval_coverage(y_te, dists, 0.10))

    covs = np.array([run(seed) for seed in range(N_SEEDS)])
    mean80, mean90 = covs.mean(axis=0)
    slack = 1.0 / (n_cal + 1)
    ok80 = 0.80 - 0.02 <= mean80 <= 0.80 + slack + 0.02
    ok90 = 0.90 - 0.02 <= mean90 <= 0.90 + slack + 0.02
    report("conformal coverage", ok80 and ok90,
           f"mean 80% interval {mean80:.4f}, mean 90% interval {mean90:.4f} "
           f"over {N_SEEDS} seeds (bands [0.780, {0.82 + slack:.3f}] / "
           f"[0.880, {0.92 + slack:.3f}])")


# ---------------------------------------------------------------------------
# 2. Pinball minimizer matches the brute-force empirical quantile
# ---------------------------------------------------------------------------

def test_acceptance_02_pinball_minimizer_oracle():
    """A constant-feature quantile fit reaches the brute-force minimum of the
    total pinball loss within 1e-6 at every fixed level."""
    n = 500
    params = gbt.GbtParams(n_estimators=80, max_depth=2, learning_rate=0.5, seed=0)
    worst = 0.0
    for tau in LEVELS:
        for rep in range(10):
            rng = np.random.default_rng(1000 * rep + int(tau * 100))
            y = np.concatenate([rng.normal(0, 1, n // 2),
                                rng.normal(4, 2, n - n // 2)])
            X = np.ones((n, 1))
            model = gbt.train(X, y, gbt.quantile_objective(tau), params)
            fit_total = gbt.pinball_loss(y, model.predict(X), tau) * n
            brute_total = min(gbt.pinball_loss(y, np.full(n, c), tau) * n for c in y)
            worst = max(worst, abs(fit_total - brute_total))
    report("pinball minimizer oracle", worst <= 1e-6,
           f"worst |fit - brute force| total loss gap {worst:.3e} "
           f"over {len(LEVELS)} levels x 10 datasets (tol 1e-6)")


# ---------------------------------------------------------------------------
# 3. Gradient checks
# ---------------------------------------------------------------------------

def test_acceptance_03_gradient_checks():
    """Quantile and Gaussian log-score gradients match central finite
    differences away from the kink, and the natural gradient equals the
    inverse Fisher applied to the numerical gradient, all within 1e-6."""
    rng = np.random.default_rng(7)
    eps = 1e-6
    worst = 0.0

    for tau in (0.05, 0.25, 0.5, 0.9, 0.95):
        obj = gbt.quantile_objective(tau)
        checked = 0
        while checked < 50:
            y = rng.normal(size=1)
            pred = rng.normal(size=1)
            if abs(y[0] - pred[0]) <= 1e-3:
                continue
            num = (obj.loss(y, pred + eps) - obj.loss(y, pred - eps)) / (2 * eps)
            worst = max(worst, abs(obj.gradient(y, pred)[0] - num)
                        / max(1.0, abs(num)))
            checked += 1

    for _ in range(50):
        y = rng.normal(size=1)
        mu = rng.normal(size=1)
        ls = rng.uniform(-1.0, 1.0, size=1)
        g_mu, g_ls = ngboost.ordinary_gradient(y, mu, ls)
        num_mu = (ngboost.log_score(y, mu + eps, np.exp(ls))
                  - ngboost.log_score(y, mu - eps, np.exp(ls))) / (2 * eps)
        num_ls = (ngboost.log_score(y, mu, np.exp(ls + eps))
                  - ngboost.log_score(y, mu, np.exp(ls - eps))) / (2 * eps)
        worst = max(worst, abs(g_mu[0] - num_mu) / max(1.0, abs(num_mu)),
                    abs(g_ls[0] - num_ls) / max(1.0, abs(num_ls)))
        # Fisher information in the (mu, log sigma) chart is diag(1/sigma^2, 2)
        n_mu, n_ls = ngboost.natural_gradient(y, mu, ls)
        worst = max(worst,
                    abs(n_mu[0] - num_mu * np.exp(2 * ls[0])) / max(1.0, abs(n_mu[0])),
                    abs(n_ls[0] - num_ls / 2.0) / max(1.0, abs(n_ls[0])))

    report("gradient checks", worst <= 1e-6,
           f"worst relative error {worst:.3e} across quantile, log-score "
           f"and natural-gradient checks (tol 1e-6)")


# ---------------------------------------------------------------------------
# 4. Gaussian head recovers a heteroskedastic generator
# ---------------------------------------------------------------------------

def test_acceptance_04_gaussian_head_recovery():
    """On y = sin(x) + (0.5 + 0.4|x|) eps with 20k rows, the fitted mean has
    RMSE < 0.1 and every binned sigma ratio lies in [0.85, 1.15]."""
    rng = np.random.default_rng(0)
    n = 20000
    x = rng.uniform(-2, 2, size=n)
    sigma_true = 0.5 + 0.4 * np.abs(x)
    y = np.sin(x) + sigma_true * rng.standard_normal(n)
    params = gbt.GbtParams(n_estimators=200, max_depth=3, learning_rate=0.1, seed=0)
    model = ngboost.train_ngboost(x.reshape(-1, 1), y, params)
    mu, sig = model.predict_params(x.reshape(-1, 1))
    rmse = float(np.sqrt(np.mean((mu - np.sin(x)) ** 2)))
    bins = np.digitize(x, np.linspace(-2, 2, 11))
    ratios = np.array([np.mean(sig[bins == b]) / np.mean(sigma_true[bins == b])
                       for b in range(1, 11)])
    ok = rmse < 0.1 and np.all((0.85 <= ratios) & (ratios <= 1.15))
    report("gaussian head recovery", ok,
           f"mean RMSE {rmse:.4f} (< 0.1), sigma ratios "
           f"[{ratios.min():.3f}, {ratios.max():.3f}] (within [0.85, 1.15])")


# ---------------------------------------------------------------------------
# 5. Diffusion beats the Gaussian head on a bimodal target
# ---------------------------------------------------------------------------

def test_acceptance_05_diffusion_beats_gaussian_on_bimodal():
    """The diffusion head's CRPS beats the Gaussian head's in at least 18 of
    20 seeds when the conditional target is bimodal."""
    def run(seed):
        rng = np.random.default_rng(seed)

        def make(n):
            x = rng.uniform(-1, 1, size=n)
            mode = rng.integers(0, 2, size=n)
            y = np.where(mode == 1, 2.0 + x, -2.0 - x) + 0.3 * rng.standard_normal(n)
            return x.reshape(-1, 1), y

        X_tr, y_tr = make(800)
        X_te, y_te = make(300)
        params = gbt.GbtParams(n_estimators=60, max_depth=3, learning_rate=0.1,
                               seed=seed)
        ng = ngboost.train_ngboost(X_tr, y_tr, params)
        mu, sig = ng.predict_params(X_te)
        q_gauss = mu[:, None] + sig[:, None] * ndtri(np.array(LEVELS))[None, :]
        dm = diffusion.train_diffusion(X_tr, y_tr, params, n_repeats=20)
        samples = diffusion.sample_many(dm, X_te, n_samples=50, seed=seed)
        q_diff = np.quantile(samples, LEVELS, axis=1).T
        return (evaluation.mean_crps(y_te, dists_from_quantiles(q_diff)),
                evaluation.mean_crps(y_te, dists_from_quantiles(q_gauss)))

    wins = 0
    margins = []
    for seed in range(N_SEEDS):
        crps_diff, crps_gauss = run(seed)
        wins += crps_diff < crps_gauss
        margins.append(crps_gauss - crps_diff)
    report("diffusion vs gaussian on bimodal target", wins >= 18,
           f"diffusion CRPS lower in {wins}/{N_SEEDS} seeds "
           f"(mean margin {np.mean(margins):.3f})")


# ---------------------------------------------------------------------------
# 6. Method ordering: learned heads < calibrated wake < raw power curve
# ---------------------------------------------------------------------------

def test_acceptance_06_method_ordering():
    """Every learned head's normalized test MAE beats the calibrated wake
    model, which beats the raw power curve, each gap > 1pp, in >= 18/20
    seeds of the synthetic scenario."""
    def run(seed):
        sc, data = scenario_data(seed)
        prepared = pipeline.prepare_from_synthetic(data)
        X_tr, y_tr, _ = prepared.design("train")
        X_te, y_te, _ = prepared.design("test")
        cap = data.capacity

        med = gbt.train(X_tr, y_tr, gbt.quantile_objective(0.5), POINT_PARAMS)
        nmae_med = evaluation.mae(y_te, np.clip(med.predict(X_te), 0, cap)) / cap
        ng = ngboost.train_ngboost(X_tr, y_tr, POINT_PARAMS)
        mu, _ = ng.predict_params(X_te)
        nmae_ng = evaluation.mae(y_te, np.clip(mu, 0, cap)) / cap
        dm = diffusion.train_diffusion(X_tr, y_tr, DIFFUSION_PARAMS, n_repeats=10)
        samples = diffusion.sample_many(dm, X_te, n_samples=50, seed=0, capacity=cap)
        nmae_diff = evaluation.mae(y_te, np.median(samples, axis=1)) / cap

        obs = pipeline.wake_calibration_observations(data, prepared)
        fitted = wake.calibrate_wake(data.layout, obs, params_init=sc.wake_params)
        max_obs = pipeline.loss_rescale_ratio(prepared)
        pc_raw, wk_raw = pipeline.engineering_forecasts(data.layout, prepared,
                                                        fitted, split="test")
        nmae_pc = evaluation.mae(y_te, wake.rescale_engineering(pc_raw, max_obs, cap)) / cap
        nmae_wk = evaluation.mae(y_te, wake.rescale_engineering(wk_raw, max_obs, cap)) / cap
        return max(nmae_med, nmae_ng, nmae_diff), nmae_wk, nmae_pc

    wins = 0
    rows = []
    for seed in range(N_SEEDS):
        worst_head, wk, pc = run(seed)
        ok = worst_head < wk - 0.01 and wk < pc - 0.01
        wins += ok
        rows.append((seed, worst_head, wk, pc, ok))
    detail = ", ".join(f"seed {s}: heads<= {h:.3f} wake {w:.3f} curve {p:.3f}"
                       for s, h, w, p, ok in rows if not ok) or "all seeds ordered"
    report("method ordering", wins >= 18,
           f"heads < wake < power curve with >1pp gaps in {wins}/{N_SEEDS} "
           f"seeds ({detail})")


# ---------------------------------------------------------------------------
# 7. Ensemble inputs beat single providers; truth beats ensemble
# ---------------------------------------------------------------------------

def test_acceptance_07_ensemble_ablation():
    """Ensemble-input MAE <= every single-provider MAE and true-wind-input
    MAE <= ensemble MAE in >= 18/20 seeds."""
    wins = 0
    failed = []
    for seed in range(N_SEEDS):
        _, data = scenario_data(seed)
        res = pipeline.run_ablation_inputs(data, POINT_PARAMS)
        singles = [v for k, v in res.items() if k.startswith("single:")]
        ok = (res["ensemble"] <= min(singles) and res["truth"] <= res["ensemble"])
        wins += ok
        if not ok:
            failed.append(seed)
    report("ensemble ablation", wins >= 18,
           f"ensemble <= singles and truth <= ensemble in {wins}/{N_SEEDS} "
           f"seeds (failing seeds: {failed or 'none'})")


# ---------------------------------------------------------------------------
# 8. Wake model self-consistency
# ---------------------------------------------------------------------------

def _row_layout(n_turbines, spacing_d):
    ref = reference_turbine()
    d = ref.rotor_diameter
    return FarmLayout(farm_id="row", turbines=tuple(
        dataclasses.replace(ref, turbine_id=f"T{i}", position=(i * spacing_d * d, 0.0))
        for i in range(n_turbines)))


def _aligned_cases(layout, params, rng, n_cases, noise, n_readings=1):
    """Calibration cases along the row axis with jittered directions.

    Each case's power is the mean of ``n_readings`` noisy measurements,
    mirroring the direction-binned averaging used on real telemetry.
    """
    cases = []
    for _ in range(n_cases):
        fc = wake.FlowCase(float(rng.uniform(4.5, 9.5)),
                           float(np.mod(270.0 + 12.0 * rng.standard_normal(), 360.0)))
        clean = wake.farm_power(layout, fc, params).total
        readings = clean * (1.0 + noise * rng.standard_normal(n_readings))
        cases.append((fc, float(np.mean(readings))))
    return cases


def test_acceptance_08_wake_self_consistency():
    """Calibration recovers planted (k_a, k_b) within 5% from noise-free
    observations and within 15% from 2%-noise observations, and waked power
    never exceeds wake-free power over 1000 random flow cases."""
    planted = wake.WakeParams()
    deep_row = _row_layout(10, 4.0)

    rng = np.random.default_rng(1)
    clean = wake.calibrate_wake(deep_row, _aligned_cases(deep_row, planted, rng,
                                                         n_cases=60, noise=0.0))
    err_clean = max(abs(clean.k_a / planted.k_a - 1), abs(clean.k_b / planted.k_b - 1))

    noisy_cases = _aligned_cases(deep_row, planted, np.random.default_rng(2),
                                 n_cases=240, noise=0.02, n_readings=200)
    noisy = wake.calibrate_wake(deep_row, noisy_cases)
    err_noisy = max(abs(noisy.k_a / planted.k_a - 1), abs(noisy.k_b / planted.k_b - 1))

    short_row = _row_layout(3, 5.0)
    rng = np.random.default_rng(3)
    violations = 0
    for _ in range(1000):
        v = float(rng.uniform(0.1, 30.0))
        case = wake.FlowCase(v, float(rng.uniform(0.0, 360.0)))
        waked = wake.farm_power(short_row, case, planted).total
        if waked > wake.power_curve_forecast(short_row, v) + 1e-9:
            violations += 1

    ok = err_clean <= 0.05 and err_noisy <= 0.15 and violations == 0
    report("wake self-consistency", ok,
           f"recovery error {err_clean:.4f} noise-free (tol 0.05), "
           f"{err_noisy:.4f} with 2% noise (tol 0.15), "
           f"{violations}/1000 wake-free violations")


# ---------------------------------------------------------------------------
# 9. CRPS reduces to half the absolute error for point forecasts
# ---------------------------------------------------------------------------

def test_acceptance_09_crps_point_forecast_identity():
    """Degenerate distributions score exactly the documented closed form
    0.5 |y - yhat|, and the docs state the factor-2 deviation bound."""
    rng = np.random.default_rng(4)
    w = evaluation.quantile_cell_weights()
    worst = 0.0
    for _ in range(500):
        y = float(rng.normal(scale=10.0))
        yhat = float(rng.normal(scale=10.0))
        dist = PredictiveDistribution(T0, LEVELS, [yhat] * len(LEVELS))
        got = evaluation.crps_from_quantiles(y, dist)
        diff = y - yhat
        closed_form = float(np.dot(w, np.where(
            diff >= 0, np.array(LEVELS) * diff, (np.array(LEVELS) - 1.0) * diff)))
        worst = max(worst, abs(got - closed_form), abs(got - 0.5 * abs(diff)))

    docs = (Path(__file__).resolve().parent.parent / "docs" / "conventions.md").read_text()
    documented = "0.5 * |y - yhat|" in docs and "factor" in docs
    ok = worst <= 1e-12 and documented
    report("CRPS point-forecast identity", ok,
           f"worst deviation from 0.5|y - yhat| is {worst:.3e} (tol 1e-12), "
           f"deviation bound documented: {documented}")


# ---------------------------------------------------------------------------
# 10. Byte-identical reruns of the CLI pipeline
# ---------------------------------------------------------------------------

DETERMINISM_CONFIG = {
    "seed": 11,
    "scenario": {"n_hours": 720},
    "cqr": {"gbt": {"n_estimators": 30, "max_depth": 2, "learning_rate": 0.2}},
}


def _run_cli_pipeline(out_dir, cfg_path):
    runner = CliRunner()
    for args in (["simulate"], ["prepare"], ["train", "--head", "cqr"],
                 ["predict", "--head", "cqr"], ["evaluate"]):
        result = runner.invoke(cli_main,
                               ["--config", str(cfg_path), "--out", str(out_dir), *args],
                               catch_exceptions=False)
        assert result.exit_code == 0, result.output


def _file_hashes(out_dir):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(Path(out_dir).iterdir()) if p.is_file()}


def test_acceptance_10_cli_determinism(tmp_path):
    """simulate -> prepare -> train -> predict -> evaluate twice with the
    same seed produces byte-identical artifacts."""
    cfg_path = tmp_path / "run.yaml"
    cfg_path.write_text(yaml.safe_dump(DETERMINISM_CONFIG))
    dirs = (tmp_path / "run_a", tmp_path / "run_b")
    for d in dirs:
        d.mkdir()
        _run_cli_pipeline(d, cfg_path)
    hashes_a, hashes_b = (_file_hashes(d) for d in dirs)
    same_names = set(hashes_a) == set(hashes_b)
    differing = [name for name in hashes_a if hashes_b.get(name) != hashes_a[name]]
    ok = same_names and not differing and len(hashes_a) >= 8
    report("CLI determinism", ok,
           f"{len(hashes_a)} artifacts, differing: {differing or 'none'}")
