"""Scoring: normalized MAE, quantile-based CRPS, coverage, region breakdowns.

CRPS follows the pinball-integral form without the conventional factor 2:
CRPS = sum_k w_k L(y, q_k) with midpoint cell weights over [0, 1]. For the
fixed 7-level set the weights are (0.075, 0.10, 0.20, 0.25, 0.20, 0.10,
0.075); for an all-quantiles-equal (point) forecast this reduces to
0.5 * |y - yhat|, i.e. half the MAE under this convention.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .domain import FarmLayout, PredictiveDistribution, Turbine
from .gbt import pinball_loss

FIXED_LEVELS = (0.05, 0.10, 0.25, 0.50, 0.75, 0.90, 0.95)

REGION_BELOW_CUT_IN = 1
REGION_PARTIAL_LOAD = 2
REGION_RATED = 3
REGION_EXCLUDED = 4  # above cut-out; dropped from every aggregate


class MissingLevelsError(KeyError):
    pass


def mae(y, yhat) -> float:
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if y.shape != yhat.shape:
        raise ValueError(f"length mismatch: {y.shape} vs {yhat.shape}")
    if y.size == 0:
        raise ValueError("need at least one sample")
    return float(np.mean(np.abs(y - yhat)))


def quantile_cell_weights(levels=FIXED_LEVELS) -> np.ndarray:
    """Riemann cell widths: boundaries at midpoints between adjacent levels,
    first cell starting at 0 and last ending at 1."""
    levels = np.asarray(levels, dtype=float)
    mids = 0.5 * (levels[:-1] + levels[1:])
    bounds = np.concatenate([[0.0], mids, [1.0]])
    return np.diff(bounds)


def crps_from_quantiles(y: float, dist: PredictiveDistribution,
                        levels=FIXED_LEVELS) -> float:
    """Riemann approximation of the pinball-integral CRPS."""
    got = dist.quantile_levels
    if tuple(np.round(got, 9)) != tuple(np.round(levels, 9)):
        raise MissingLevelsError(f"distribution levels {got} do not match {levels}")
    w = quantile_cell_weights(levels)
    q = np.asarray(dist.quantile_values)
    tau = np.asarray(levels)
    diff = y - q
    pinball = np.where(diff >= 0, tau * diff, (tau - 1.0) * diff)
    return float(np.dot(w, pinball))


def mean_crps(y, dists, levels=FIXED_LEVELS) -> float:
    y = np.asarray(y, dtype=float)
    if y.size != len(dists):
        raise ValueError("y and distributions length mismatch")
    return float(np.mean([crps_from_quantiles(yi, d, levels) for yi, d in zip(y, dists)]))


def interval_coverage(y, dists, alpha: float) -> float:
    """Fraction of observations inside the central (1-alpha) interval."""
    y = np.asarray(y, dtype=float)
    inside = 0
    for yi, d in zip(y, dists):
        try:
            lo = d.quantile(alpha / 2)
            hi = d.quantile(1 - alpha / 2)
        except KeyError as exc:
            raise MissingLevelsError(str(exc)) from exc
        inside += lo <= yi <= hi
    return inside / y.size


def assign_region(mean_speed_forecast: float, turbine: Turbine) -> int:
    """Operating region from the average wind speed forecast.

    Half-open boundaries: rated and cut-out speeds belong to the upper region.
    Region 4 (>= cut-out) is excluded from all aggregates downstream.
    """
    v = mean_speed_forecast
    if v < 0:
        raise ValueError("speed must be >= 0")
    if v < turbine.cut_in:
        return REGION_BELOW_CUT_IN
    if v < turbine.rated_speed:
        return REGION_PARTIAL_LOAD
    if v < turbine.cut_out:
        return REGION_RATED
    return REGION_EXCLUDED


def modal_turbine(layout: FarmLayout) -> Turbine:
    """Representative turbine: the most common (cut_in, rated, cut_out) type."""
    counts: dict[tuple, Turbine] = {}
    tally: dict[tuple, int] = {}
    for t in layout.turbines:
        key = (t.cut_in, t.rated_speed, t.cut_out)
        counts.setdefault(key, t)
        tally[key] = tally.get(key, 0) + 1
    best = max(sorted(tally), key=lambda k: tally[k])
    return counts[best]


@dataclass
class FarmScores:
    farm_id: str
    n_total: int
    n_excluded: int
    nmae: float
    ncrps: float | None
    regions: dict[int, dict]  # region -> {"n", "nmae", "ncrps"}
    coverage: dict[float, float]  # alpha -> empirical coverage

    def to_dict(self):
        return {
            "farm_id": self.farm_id,
            "n_total": self.n_total,
            "n_excluded": self.n_excluded,
            "nmae": self.nmae,
            "ncrps": self.ncrps,
            "regions": {str(k): v for k, v in sorted(self.regions.items())},
            "coverage": {repr(k): v for k, v in sorted(self.coverage.items())},
        }


@dataclass
class EvaluationReport:
    farms: dict[str, FarmScores]
    average_nmae: float
    average_ncrps: float | None

    def to_dict(self):
        return {
            "farms": {fid: fs.to_dict() for fid, fs in sorted(self.farms.items())},
            "average_nmae": self.average_nmae,
            "average_ncrps": self.average_ncrps,
        }

    def render_text(self) -> str:
        lines = []
        header = f"{'farm':<12}{'n':>7}{'excl':>6}{'nMAE':>9}{'nCRPS':>9}"
        lines.append(header)
        lines.append("-" * len(header))
        for fid, fs in sorted(self.farms.items()):
            ncrps = f"{fs.ncrps:8.4f}" if fs.ncrps is not None else "      NA"
            lines.append(f"{fid:<12}{fs.n_total:>7}{fs.n_excluded:>6}{fs.nmae:9.4f} {ncrps}")
            for region in sorted(fs.regions):
                r = fs.regions[region]
                rc = f"{r['ncrps']:8.4f}" if r["ncrps"] is not None else "      NA"
                lines.append(f"  region {region:<4}{r['n']:>7}{'':>6}{r['nmae']:9.4f} {rc}")
            for alpha in sorted(fs.coverage):
                lines.append(f"  coverage {1 - alpha:.0%}: {fs.coverage[alpha]:.4f}")
        avg_crps = f"{self.average_ncrps:8.4f}" if self.average_ncrps is not None else "      NA"
        lines.append("-" * len(header))
        lines.append(f"{'average':<12}{'':>7}{'':>6}{self.average_nmae:9.4f} {avg_crps}")
        return "\n".join(lines) + "\n"


def score_farm(farm_id: str, layout: FarmLayout, y, point_pred,
               mean_speeds, dists=None, alphas=(0.10, 0.20)) -> FarmScores:
    """Capacity-normalized scores for one farm, per region and overall.

    ``y`` and ``point_pred`` are MW; region-4 rows (speed >= cut-out) are
    removed from every aggregate.
    """
    cap = layout.installed_capacity
    y = np.asarray(y, dtype=float)
    point_pred = np.asarray(point_pred, dtype=float)
    mean_speeds = np.asarray(mean_speeds, dtype=float)
    turbine = modal_turbine(layout)
    regions = np.array([assign_region(v, turbine) for v in mean_speeds])
    include = regions != REGION_EXCLUDED

    region_stats = {}
    for region in (REGION_BELOW_CUT_IN, REGION_PARTIAL_LOAD, REGION_RATED):
        m = regions == region
        if not m.any():
            region_stats[region] = {"n": 0, "nmae": 0.0, "ncrps": None if dists is None else 0.0}
            continue
        r_nmae = mae(y[m], point_pred[m]) / cap
        r_ncrps = None
        if dists is not None:
            r_ncrps = float(np.mean([crps_from_quantiles(yi, d) for yi, d
                                     in zip(y[m], [dists[i] for i in np.where(m)[0]])])) / cap
        region_stats[region] = {"n": int(m.sum()), "nmae": r_nmae, "ncrps": r_ncrps}

    nmae = mae(y[include], point_pred[include]) / cap if include.any() else 0.0
    ncrps = None
    coverage = {}
    if dists is not None:
        included_dists = [dists[i] for i in np.where(include)[0]]
        ncrps = mean_crps(y[include], included_dists) / cap
        for alpha in alphas:
            coverage[alpha] = interval_coverage(y[include], included_dists, alpha)

    return FarmScores(farm_id=farm_id, n_total=int(y.size),
                      n_excluded=int((~include).sum()),
                      nmae=nmae, ncrps=ncrps, regions=region_stats, coverage=coverage)


def build_report(farm_scores: list[FarmScores]) -> EvaluationReport:
    """Average the per-farm scores into one report."""
    if not farm_scores:
        raise ValueError("need at least one farm")
    avg_nmae = float(np.mean([fs.nmae for fs in farm_scores]))
    crps_vals = [fs.ncrps for fs in farm_scores if fs.ncrps is not None]
    avg_ncrps = float(np.mean(crps_vals)) if crps_vals else None
    return EvaluationReport(farms={fs.farm_id: fs for fs in farm_scores},
                            average_nmae=avg_nmae, average_ncrps=avg_ncrps)
