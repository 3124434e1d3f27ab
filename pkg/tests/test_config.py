import pytest
import yaml

from windprob import config


def test_default_config_hash_is_stable():
    a = config.default_config()
    b = config.default_config()
    assert a.hash() == b.hash()
    b.seed = 1
    assert a.hash() != b.hash()


def test_load_config_round_trip(tmp_path):
    doc = {
        "seed": 11,
        "scenario": {"n_hours": 300, "providers": [
            {"provider_id": "p1", "speed_bias": 0.5},
            {"provider_id": "p2"},
        ]},
        "cqr": {"gbt": {"n_estimators": 20, "max_depth": 3}},
        "wake": {"k_a": 0.3},
        "split": {"train_frac": 0.6, "cal_frac": 0.2},
        "tune": {"n_iter": 2},
    }
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(doc))
    cfg = config.load_config(path)
    assert cfg.seed == 11
    assert cfg.scenario.n_hours == 300
    assert cfg.scenario.providers[0].provider_id == "p1"
    assert cfg.scenario.providers[0].speed_bias == 0.5
    assert cfg.cqr.gbt.n_estimators == 20
    assert cfg.wake.k_a == 0.3
    assert cfg.split.to_spec().train_frac == 0.6
    assert cfg.tune.n_iter == 2


def test_unknown_keys_raise_at_any_depth(tmp_path):
    for doc in (
        {"not_a_key": 1},
        {"scenario": {"typo_hours": 10}},
        {"cqr": {"gbt": {"n_estimator": 5}}},
        {"scenario": {"providers": [{"provider_id": "a", "nois": 1.0}]}},
    ):
        path = tmp_path / "bad.yaml"
        path.write_text(yaml.safe_dump(doc))
        with pytest.raises(config.UnknownKeyError):
            config.load_config(path)


def test_to_scenario_applies_seed_wake_and_providers():
    cfg = config.default_config()
    cfg.seed = 99
    cfg.wake.k_a = 0.25
    cfg.scenario.providers = [config.ProviderConfig(provider_id="only")]
    scenario = cfg.to_scenario()
    assert scenario.seed == 99
    assert scenario.wake_params.k_a == 0.25
    assert [p.provider_id for p in scenario.providers] == ["only"]


def test_gbt_config_to_params():
    params = config.GbtConfig(learning_rate=0.05, max_depth=3).to_params(seed=4)
    assert params.learning_rate == 0.05
    assert params.seed == 4
