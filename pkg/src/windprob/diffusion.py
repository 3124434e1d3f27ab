"""Conditional score-based diffusion head over boosted trees.

Variance-exploding forward process on the standardized target: the noise
scale grows geometrically from sigma_min to sigma_max over t in [0, 1].
The tree model is trained to predict the injected noise z from
(features, noised target, t, log sigma(t)); the score at (y_t, t) is then
-z_hat / sigma(t). Sampling integrates the reverse SDE with Euler-Maruyama
and reports empirical quantiles over the drawn samples.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import gbt
from .domain import PredictiveDistribution


class TooFewSamplesError(ValueError):
    pass


@dataclass(frozen=True)
class SdeSpec:
    sigma_min: float = 0.01
    sigma_max: float = 8.0

    def __post_init__(self):
        if not 0 < self.sigma_min < self.sigma_max:
            raise ValueError("require 0 < sigma_min < sigma_max")

    def sigma(self, t):
        return self.sigma_min * (self.sigma_max / self.sigma_min) ** np.asarray(t, dtype=float)

    def g_squared(self, t):
        """d sigma^2(t) / dt, the squared diffusion coefficient."""
        return self.sigma(t) ** 2 * 2.0 * np.log(self.sigma_max / self.sigma_min)


@dataclass
class DiffusionModel:
    score_model: gbt.TreeEnsembleModel
    sde: SdeSpec
    y_mean: float
    y_std: float
    n_samples: int = 50
    n_steps: int = 50
    feature_names: list[str] | None = None

    def __post_init__(self):
        if self.n_samples < 2 or self.n_steps < 10:
            raise ValueError("require n_samples >= 2 and n_steps >= 10")
        if self.y_std <= 0:
            raise ValueError("y_std must be positive")

    def to_dict(self):
        return {
            "format_version": gbt.MODEL_FORMAT_VERSION,
            "sde": {"sigma_min": self.sde.sigma_min, "sigma_max": self.sde.sigma_max},
            "y_mean": self.y_mean,
            "y_std": self.y_std,
            "n_samples": self.n_samples,
            "n_steps": self.n_steps,
            "feature_names": self.feature_names,
            "score_model": self.score_model.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            score_model=gbt.TreeEnsembleModel.from_dict(d["score_model"]),
            sde=SdeSpec(**d["sde"]),
            y_mean=d["y_mean"],
            y_std=d["y_std"],
            n_samples=d["n_samples"],
            n_steps=d["n_steps"],
            feature_names=d["feature_names"],
        )

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def make_training_pairs(X, y_std, n_repeats, sde: SdeSpec, rng):
    """Replicated noise-prediction training set.

    Per replicate: t ~ U(0,1), z ~ N(0,1), y_t = y + sigma(t) z; the model
    input is (features, y_t, t, log sigma(t)) and the target is z.
    """
    n = X.shape[0]
    Xs, zs = [], []
    for _ in range(n_repeats):
        t = rng.uniform(0.0, 1.0, size=n)
        z = rng.standard_normal(n)
        sig = sde.sigma(t)
        y_t = y_std + sig * z
        Xs.append(np.column_stack([X, y_t, t, np.log(sig)]))
        zs.append(z)
    return np.vstack(Xs), np.concatenate(zs)


def train_diffusion(X, y, params: gbt.GbtParams, n_repeats: int = 30,
                    sde: SdeSpec = SdeSpec(), n_samples: int = 50, n_steps: int = 50,
                    validation=None, feature_names=None) -> DiffusionModel:
    """Fit the noise-prediction tree model on the standardized target."""
    X = gbt._check_matrix(X)
    y = np.asarray(y, dtype=float)
    y_mean = float(np.mean(y))
    y_std = float(np.std(y))
    if y_std <= 0:
        y_std = 1.0
    rng = np.random.default_rng(params.seed)
    Xt, zt = make_training_pairs(X, (y - y_mean) / y_std, n_repeats, sde, rng)
    val = None
    if validation is not None:
        Xv = gbt._check_matrix(validation[0])
        yv = (np.asarray(validation[1], dtype=float) - y_mean) / y_std
        val = make_training_pairs(Xv, yv, max(1, n_repeats // 4), sde,
                                  np.random.default_rng(params.seed + 1))
    names = None
    if feature_names is not None:
        names = list(feature_names) + ["__y_t", "__t", "__log_sigma_t"]
    model = gbt.train(Xt, zt, gbt.SquaredError(), params, validation=val,
                      feature_names=names)
    return DiffusionModel(score_model=model, sde=sde, y_mean=y_mean, y_std=y_std,
                          n_samples=n_samples, n_steps=n_steps,
                          feature_names=list(feature_names)
                          if feature_names is not None else None)


def _row_rng(seed, row_index):
    return np.random.default_rng(np.random.SeedSequence(entropy=seed,
                                                        spawn_key=(row_index,)))


def sample_many(model: DiffusionModel, X, n_samples=None, seed=0,
                capacity: float | None = None) -> np.ndarray:
    """Reverse-SDE samples for every row; returns (n_rows, n_samples) in MW.

    Euler-Maruyama from t=1 down to t=0 over n_steps uniform steps. Each
    row owns a generator stream derived from (seed, row index), so results
    are a pure function of (model, X, seed) regardless of batching.
    """
    X = gbt._check_matrix(X)
    n_rows = X.shape[0]
    n_samples = model.n_samples if n_samples is None else int(n_samples)
    n_steps = model.n_steps
    sde = model.sde
    if n_rows == 0:
        return np.empty((0, n_samples))

    # per-row noise: initial draw plus one increment per step
    noise = np.empty((n_rows, n_samples, n_steps + 1))
    for i in range(n_rows):
        noise[i] = _row_rng(seed, i).standard_normal((n_samples, n_steps + 1))

    y = sde.sigma_max * noise[:, :, 0]
    dt = 1.0 / n_steps
    # score-model design matrix: (rows x samples) stacked, X block constant
    base = np.repeat(X, n_samples, axis=0)
    design = np.column_stack([base, np.zeros(base.shape[0]),
                              np.zeros(base.shape[0]), np.zeros(base.shape[0])])
    for k in range(n_steps):
        t = 1.0 - k * dt
        sig = float(sde.sigma(t))
        g2 = float(sde.g_squared(t))
        design[:, -3] = y.ravel()
        design[:, -2] = t
        design[:, -1] = np.log(sig)
        z_hat = model.score_model.predict(design).reshape(n_rows, n_samples)
        score = -z_hat / sig
        y = y + g2 * score * dt + np.sqrt(g2 * dt) * noise[:, :, k + 1]

    out = model.y_mean + model.y_std * y
    if capacity is not None:
        out = np.clip(out, 0.0, capacity)
    return out


def sample(model: DiffusionModel, x_row, n_samples=None, seed=0,
           capacity: float | None = None, row_index: int = 0) -> np.ndarray:
    """Samples for a single feature row (see :func:`sample_many`)."""
    x_row = np.asarray(x_row, dtype=float).reshape(1, -1)
    if row_index:
        # reproduce the stream the row would own inside a batched call
        n_feat = x_row.shape[1]
        X = np.vstack([np.zeros((row_index, n_feat)), x_row])
        return sample_many(model, X, n_samples=n_samples, seed=seed,
                           capacity=capacity)[row_index]
    return sample_many(model, x_row, n_samples=n_samples, seed=seed,
                       capacity=capacity)[0]


def samples_to_distribution(samples, time=None,
                            levels=(0.05, 0.10, 0.25, 0.50, 0.75, 0.90, 0.95)
                            ) -> PredictiveDistribution:
    """Empirical quantiles (linear interpolation of order statistics)."""
    samples = np.asarray(samples, dtype=float)
    if samples.size < 2:
        raise TooFewSamplesError(f"need at least 2 samples, got {samples.size}")
    values = np.quantile(samples, levels)
    return PredictiveDistribution(time=time, quantile_levels=levels,
                                  quantile_values=values, samples=tuple(samples))


def predict_distribution(model: DiffusionModel, X, times, seed=0,
                         capacity: float | None = None) -> list[PredictiveDistribution]:
    draws = sample_many(model, X, seed=seed, capacity=capacity)
    return [samples_to_distribution(draws[i], time=t) for i, t in enumerate(times)]
