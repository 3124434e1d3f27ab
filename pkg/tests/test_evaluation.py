import numpy as np
import pandas as pd
import pytest

from windprob import evaluation
from windprob.domain import FarmLayout, PredictiveDistribution
from windprob.evaluation import FIXED_LEVELS

from conftest import make_turbine


def _dist(values, time=None, gaussian=None):
    return PredictiveDistribution(time=time or pd.Timestamp("2022-01-01"),
                                  quantile_levels=FIXED_LEVELS,
                                  quantile_values=values, gaussian=gaussian)


def test_mae_oracle_and_validation():
    assert evaluation.mae([1.0, 2.0], [2.0, 0.0]) == pytest.approx(1.5)
    with pytest.raises(ValueError):
        evaluation.mae([1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        evaluation.mae([], [])


def test_quantile_cell_weights_oracle():
    w = evaluation.quantile_cell_weights()
    np.testing.assert_allclose(w, [0.075, 0.10, 0.20, 0.25, 0.20, 0.10, 0.075])
    assert w.sum() == pytest.approx(1.0)
    # weighted level sum is exactly one half (the point-forecast factor)
    assert float(np.dot(w, FIXED_LEVELS)) == pytest.approx(0.5, abs=1e-15)


def test_crps_degenerate_equals_half_absolute_error():
    for y, q in [(3.0, 1.0), (0.0, 5.0), (-2.0, -2.0)]:
        d = _dist(np.full(7, q))
        assert evaluation.crps_from_quantiles(y, d) == pytest.approx(
            0.5 * abs(y - q), abs=1e-12)


def test_crps_hand_computed_symmetric_case():
    # quantiles symmetric about y=0: q = (-3,-2,-1,0,1,2,3)
    q = np.arange(-3.0, 4.0)
    d = _dist(q)
    w = evaluation.quantile_cell_weights()
    tau = np.asarray(FIXED_LEVELS)
    pinball = np.where(-q >= 0, tau * (-q), (tau - 1) * (-q))
    assert evaluation.crps_from_quantiles(0.0, d) == pytest.approx(
        float(np.dot(w, pinball)), abs=1e-15)


def test_crps_increases_when_widening():
    y = 0.0
    narrow = _dist(np.linspace(-1, 1, 7))
    wide = _dist(np.linspace(-4, 4, 7))
    assert evaluation.crps_from_quantiles(y, wide) > evaluation.crps_from_quantiles(y, narrow)


def test_crps_level_mismatch_raises():
    d = PredictiveDistribution(time=pd.Timestamp("2022-01-01"),
                               quantile_levels=(0.25, 0.75), quantile_values=(0.0, 1.0))
    with pytest.raises(evaluation.MissingLevelsError):
        evaluation.crps_from_quantiles(0.5, d)


def test_crps_propriety_spot_check(rng):
    # the true-quantile forecast scores better in expectation than a shifted one
    true_q = np.quantile(rng.standard_normal(200_000), FIXED_LEVELS)
    honest = _dist(true_q)
    shifted = _dist(true_q + 1.0)
    ys = rng.standard_normal(5000)
    s_honest = np.mean([evaluation.crps_from_quantiles(y, honest) for y in ys])
    s_shifted = np.mean([evaluation.crps_from_quantiles(y, shifted) for y in ys])
    assert s_honest < s_shifted


def test_interval_coverage_oracle():
    dists = [_dist(np.linspace(0, 6, 7)) for _ in range(4)]
    y = [3.0, -1.0, 6.0, 7.0]  # inside, below, boundary, above
    assert evaluation.interval_coverage(y, dists, 0.10) == pytest.approx(0.5)


def test_assign_region_boundaries():
    t = make_turbine()
    assert evaluation.assign_region(t.cut_in - 0.01, t) == 1
    assert evaluation.assign_region(t.cut_in, t) == 2
    assert evaluation.assign_region(t.rated_speed, t) == 3
    assert evaluation.assign_region(t.cut_out, t) == 4
    with pytest.raises(ValueError):
        evaluation.assign_region(-1.0, t)


def test_modal_turbine_picks_most_common_type():
    from windprob.domain import reference_turbine
    odd = reference_turbine(position=(0, 0), turbine_id="S", cut_in=4.0,
                            rated_speed=13.0, cut_out=22.0)
    big1 = make_turbine(position=(1000, 0), turbine_id="B1")
    big2 = make_turbine(position=(2000, 0), turbine_id="B2")
    layout = FarmLayout(farm_id="mix", turbines=(odd, big1, big2))
    assert evaluation.modal_turbine(layout).cut_out == pytest.approx(25.0)


def test_score_farm_region_recombination(rng):
    layout = FarmLayout(farm_id="f", turbines=(make_turbine(),))
    cap = layout.installed_capacity
    t = make_turbine()
    n = 300
    speeds = rng.uniform(0.0, 24.0, size=n)  # all below cut-out
    y = rng.uniform(0, cap, size=n)
    pred = rng.uniform(0, cap, size=n)
    fs = evaluation.score_farm("f", layout, y, pred, speeds)
    # overall nMAE equals the row-count weighted recombination of region nMAEs
    total_n = sum(fs.regions[r]["n"] for r in (1, 2, 3))
    recombined = sum(fs.regions[r]["nmae"] * fs.regions[r]["n"] for r in (1, 2, 3)) / total_n
    assert fs.nmae == pytest.approx(recombined, abs=1e-12)
    assert fs.n_excluded == 0


def test_score_farm_excludes_region_four(rng):
    layout = FarmLayout(farm_id="f", turbines=(make_turbine(),))
    speeds = np.array([5.0, 8.0, 30.0, 40.0])
    y = np.array([1.0, 2.0, 3.0, 4.0])
    pred = np.array([1.5, 2.5, 100.0, 100.0])  # wild errors only on excluded rows
    fs = evaluation.score_farm("f", layout, y, pred, speeds)
    assert fs.n_excluded == 2
    assert fs.nmae == pytest.approx(0.5 / layout.installed_capacity)


def test_score_farm_with_distributions_and_coverage(rng):
    layout = FarmLayout(farm_id="f", turbines=(make_turbine(),))
    n = 50
    speeds = rng.uniform(4.0, 20.0, size=n)
    y = rng.uniform(0, 8, size=n)
    dists = [_dist(np.linspace(0, 8, 7), time=pd.Timestamp("2022-01-01")) for _ in range(n)]
    pred = np.array([d.quantile(0.5) for d in dists])
    fs = evaluation.score_farm("f", layout, y, pred, speeds, dists=dists)
    assert fs.ncrps is not None and fs.ncrps > 0
    assert set(fs.coverage) == {0.10, 0.20}
    assert 0.0 <= fs.coverage[0.10] <= 1.0


def test_build_report_averages_and_renders():
    layout = FarmLayout(farm_id="a", turbines=(make_turbine(),))
    y = np.array([1.0, 2.0])
    speeds = np.array([8.0, 9.0])
    fa = evaluation.score_farm("a", layout, y, y + 1.0, speeds)
    fb = evaluation.score_farm("b", layout, y, y + 2.0, speeds)
    report = evaluation.build_report([fa, fb])
    assert report.average_nmae == pytest.approx(0.5 * (fa.nmae + fb.nmae))
    text = report.render_text()
    assert "nMAE" in text and "a" in text and "average" in text
    d = report.to_dict()
    assert set(d["farms"]) == {"a", "b"}
