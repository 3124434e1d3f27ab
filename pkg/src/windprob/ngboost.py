"""Gaussian parametric head boosted by natural gradients of the log score.

The distribution is parameterized as (mu, log sigma) so positivity of sigma
is structural. In this chart the Fisher information matrix is diagonal,
diag(1/sigma^2, 2), which makes the natural gradient closed form:

    d_mu        = mu - y
    d_log_sigma = (1 - ((y - mu)/sigma)^2) / 2

One regression tree is fitted per parameter per boosting round.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from . import gbt
from .domain import PredictiveDistribution

HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


class DegenerateVarianceError(ValueError):
    """Target variance is zero; the Gaussian head cannot be initialized."""


def log_score(y, mu, sigma):
    """Negative Gaussian log likelihood per sample."""
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma <= 0):
        raise ValueError("sigma must be positive")
    out = HALF_LOG_2PI + np.log(sigma) + (y - mu) ** 2 / (2.0 * sigma ** 2)
    if not np.all(np.isfinite(out)):
        raise ValueError("non-finite log score")
    return float(out) if out.ndim == 0 else out


def ordinary_gradient(y, mu, log_sigma):
    """d log_score / d(mu, log_sigma)."""
    sigma = np.exp(log_sigma)
    z = (np.asarray(y, dtype=float) - mu) / sigma
    return (mu - y) / sigma ** 2, 1.0 - z ** 2


def natural_gradient(y, mu, log_sigma):
    """Fisher-preconditioned gradient of the log score in the (mu, log sigma) chart."""
    sigma = np.exp(np.asarray(log_sigma, dtype=float))
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    z = (y - mu) / sigma
    d_mu = mu - y
    d_log_sigma = (1.0 - z ** 2) / 2.0
    if not (np.all(np.isfinite(d_mu)) and np.all(np.isfinite(d_log_sigma))):
        raise ValueError("non-finite natural gradient")
    return d_mu, d_log_sigma


@dataclass
class NgboostModel:
    mu_trees: list[gbt.Tree]
    sigma_trees: list[gbt.Tree]
    mu0: float
    log_sigma0: float
    learning_rate: float
    sigma_floor: float
    feature_names: list[str] | None = None
    train_scores: list[float] | None = None  # mean train log score per round

    def predict_params(self, X):
        """(mu, sigma) surfaces for each row."""
        X = gbt._check_matrix(X)
        if self.feature_names is not None and X.shape[1] != len(self.feature_names):
            raise gbt.SchemaMismatchError(
                f"expected {len(self.feature_names)} features, got {X.shape[1]}")
        mu = np.full(X.shape[0], self.mu0)
        log_sigma = np.full(X.shape[0], self.log_sigma0)
        for t_mu, t_sigma in zip(self.mu_trees, self.sigma_trees):
            mu += self.learning_rate * t_mu.predict(X)
            log_sigma += self.learning_rate * t_sigma.predict(X)
        sigma = np.maximum(np.exp(log_sigma), self.sigma_floor)
        return mu, sigma

    def to_dict(self):
        return {
            "format_version": gbt.MODEL_FORMAT_VERSION,
            "mu0": self.mu0,
            "log_sigma0": self.log_sigma0,
            "learning_rate": self.learning_rate,
            "sigma_floor": self.sigma_floor,
            "feature_names": self.feature_names,
            "mu_trees": [t.to_dict() for t in self.mu_trees],
            "sigma_trees": [t.to_dict() for t in self.sigma_trees],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            mu_trees=[gbt.Tree.from_dict(t) for t in d["mu_trees"]],
            sigma_trees=[gbt.Tree.from_dict(t) for t in d["sigma_trees"]],
            mu0=d["mu0"],
            log_sigma0=d["log_sigma0"],
            learning_rate=d["learning_rate"],
            sigma_floor=d["sigma_floor"],
            feature_names=d["feature_names"],
        )

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def train_ngboost(X, y, params: gbt.GbtParams, validation=None,
                  sigma_floor: float | None = None,
                  feature_names=None) -> NgboostModel:
    """Boost (mu, log sigma) by fitting one tree per natural-gradient coordinate.

    Trees are fitted with unit hessian (gradient-only targets); the natural
    gradient already pre-conditions curvature. Initialization is the sample
    mean and log sample std of y.
    """
    X = gbt._check_matrix(X)
    y = np.asarray(y, dtype=float)
    if X.shape[0] == 0:
        raise gbt.EmptyDataError("training data is empty")
    std0 = float(np.std(y))
    if std0 <= 0:
        raise DegenerateVarianceError("std(y) = 0; target is constant")
    if sigma_floor is None:
        sigma_floor = 1e-6 * max(std0, 1.0)
    mu0 = float(np.mean(y))
    log_sigma0 = float(np.log(std0))
    log_floor = np.log(sigma_floor)

    rng = np.random.default_rng(params.seed)
    mu = np.full(y.size, mu0)
    log_sigma = np.full(y.size, log_sigma0)
    mu_trees: list[gbt.Tree] = []
    sigma_trees: list[gbt.Tree] = []
    train_scores: list[float] = []

    if validation is not None:
        Xv = gbt._check_matrix(validation[0])
        yv = np.asarray(validation[1], dtype=float)
        mu_v = np.full(yv.size, mu0)
        log_sigma_v = np.full(yv.size, log_sigma0)
        best_loss = np.inf
        best_round = 0

    ones = np.ones(y.size)
    for round_idx in range(params.n_estimators):
        d_mu, d_ls = natural_gradient(y, mu, log_sigma)
        t_mu = gbt._fit_tree(X, d_mu, ones, params, rng)
        t_sigma = gbt._fit_tree(X, d_ls, ones, params, rng)
        mu_trees.append(t_mu)
        sigma_trees.append(t_sigma)
        mu += params.learning_rate * t_mu.predict(X)
        log_sigma += params.learning_rate * t_sigma.predict(X)
        log_sigma = np.maximum(log_sigma, log_floor)
        train_scores.append(float(np.mean(log_score(y, mu, np.exp(log_sigma)))))
        if validation is not None:
            mu_v += params.learning_rate * t_mu.predict(Xv)
            log_sigma_v += params.learning_rate * t_sigma.predict(Xv)
            log_sigma_v = np.maximum(log_sigma_v, log_floor)
            val_loss = float(np.mean(log_score(yv, mu_v, np.exp(log_sigma_v))))
            if val_loss < best_loss - 1e-12:
                best_loss = val_loss
                best_round = round_idx + 1
            elif (params.early_stopping_rounds is not None
                  and round_idx + 1 - best_round >= params.early_stopping_rounds):
                mu_trees = mu_trees[:best_round]
                sigma_trees = sigma_trees[:best_round]
                train_scores = train_scores[:best_round]
                break

    return NgboostModel(
        mu_trees=mu_trees,
        sigma_trees=sigma_trees,
        mu0=mu0,
        log_sigma0=log_sigma0,
        learning_rate=params.learning_rate,
        sigma_floor=sigma_floor,
        feature_names=list(feature_names) if feature_names is not None else None,
        train_scores=train_scores,
    )


def gaussian_quantiles(mu, sigma, levels):
    """mu + sigma * Phi^{-1}(tau) for each level."""
    levels = np.asarray(levels, dtype=float)
    return np.asarray(mu, dtype=float) + np.asarray(sigma, dtype=float) * ndtri(levels)


def predict_distribution(model: NgboostModel, X, times,
                         levels=(0.05, 0.10, 0.25, 0.50, 0.75, 0.90, 0.95)
                         ) -> list[PredictiveDistribution]:
    """Gaussian quantile predictions per row (no physical clamping: the
    parametric head reports its raw Normal quantiles)."""
    mu, sigma = model.predict_params(X)
    out = []
    for i, t in enumerate(times):
        values = gaussian_quantiles(mu[i], sigma[i], levels)
        out.append(PredictiveDistribution(
            time=t, quantile_levels=levels, quantile_values=values,
            gaussian=(float(mu[i]), float(sigma[i]))))
    return out
