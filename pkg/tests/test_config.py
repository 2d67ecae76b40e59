from dataclasses import fields, replace

import pytest
import yaml

from signmimic.config import (SCHEMA_VERSION, RewardSpec, RunConfig, SweepSpec, apply_trial, dump_run_config,
                              load_run_config, run_config_from_dict)
from signmimic.errors import ConfigError
from signmimic.reward import PRESETS
from signmimic.rl import TrainConfig

CONFIGS = ["toy.yaml", "sign.yaml", "sweep_hand.yaml"]


@pytest.fixture
def configs_dir(request):
    return request.config.rootpath / "configs"


@pytest.mark.parametrize("name", CONFIGS)
def test_shipped_configs_load(configs_dir, name):
    cfg = load_run_config(configs_dir / name)
    cfg.check_files()
    assert run_config_from_dict(yaml.safe_load(dump_run_config(cfg))).to_dict() == cfg.to_dict()


def test_sign_config_scales_to_half_a_million_steps(configs_dir, signer):
    cfg = load_run_config(configs_dir / "sign.yaml")
    # rounded up to whole rollouts of 512 x 8 steps
    assert cfg.scaled_total_steps % 4096 == 0
    assert 500_000 <= cfg.scaled_total_steps < 500_000 + 4096
    tc = cfg.train_config(7)
    assert tc.seed == 7 and tc.total_steps == cfg.scaled_total_steps
    assert cfg.reward.build(signer).k_ph == PRESETS["final"]["k_ph"]


def test_hash_changes_with_every_field():
    base = RunConfig()
    variants = [
        replace(base, model="other.model"),
        replace(base, clips=["a.json"]),
        replace(base, reward=RewardSpec("default")),
        replace(base, reward=RewardSpec("final", {"k_ph": 0.3})),
        replace(base, train=replace(base.train, learning_rate=1e-5)),
        replace(base, episode=replace(base.episode, max_steps=10)),
        replace(base, residual=False),
        replace(base, kd_scale={"l_elbow": 2.0}),
        replace(base, out="elsewhere"),
        replace(base, seeds=[2]),
        replace(base, scale=0.5),
    ]
    hashes = {v.hash() for v in variants}
    assert len(hashes) == len(variants) and base.hash() not in hashes
    assert RunConfig().hash() == base.hash()
    for f in TrainConfig.__dataclass_fields__.values():
        assert f.name in base.to_dict()["train"]


@pytest.mark.parametrize("doc,match", [
    ({}, "schema_version"),
    ({"schema_version": 99}, "schema_version"),
    ({"schema_version": SCHEMA_VERSION, "bogus": 1}, "unknown"),
    ({"schema_version": SCHEMA_VERSION, "train": {"gamma": 2.0}}, "train"),
    ({"schema_version": SCHEMA_VERSION, "train": {"nsteps": 2}}, "unknown"),
    ({"schema_version": SCHEMA_VERSION, "reward": {"preset": "nope"}}, "preset"),
    ({"schema_version": SCHEMA_VERSION, "reward": {"k_ph": -1}}, "k_ph"),
    ({"schema_version": SCHEMA_VERSION, "reward": {"k_xx": 1}}, "unknown"),
    ({"schema_version": SCHEMA_VERSION, "seeds": []}, "seeds"),
    ({"schema_version": SCHEMA_VERSION, "seeds": [1, 1]}, "seeds"),
    ({"schema_version": SCHEMA_VERSION, "scale": 0}, "scale"),
    ({"schema_version": SCHEMA_VERSION, "episode": {"max_steps": 0}}, "episode"),
    ([1, 2], "mapping"),
])
def test_invalid_configs(doc, match):
    with pytest.raises(ConfigError, match=match):
        run_config_from_dict(doc)


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError):
        load_run_config(tmp_path / "absent.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("a: [1, 2\n")
    with pytest.raises(ConfigError, match="YAML"):
        load_run_config(bad)
    cfg = run_config_from_dict({"schema_version": 1, "clips": ["bundled:clips/missing.json"]})
    with pytest.raises(ConfigError, match="does not exist"):
        cfg.check_files()


def test_scaled_budget_rounds_to_whole_rollouts():
    cfg = RunConfig(train=TrainConfig(n_steps=100, num_envs=2, batch_size=50, total_steps=10_000), scale=0.0001)
    assert cfg.scaled_total_steps == 200
    cfg = RunConfig(train=TrainConfig(n_steps=100, num_envs=2, batch_size=50, total_steps=10_000), scale=0.5)
    assert cfg.scaled_total_steps == 5000
    cfg = RunConfig(train=TrainConfig(n_steps=100, num_envs=2, batch_size=50, total_steps=10_000), scale=0.0201)
    assert cfg.scaled_total_steps == 400


def test_grid_sweep_enumerates_product(configs_dir):
    doc = yaml.safe_load((configs_dir / "sweep_hand.yaml").read_text())
    spec = SweepSpec.from_dict(doc["sweep"])
    trials = spec.trials()
    assert len(trials) == 16
    assert len({tuple(sorted(t.items())) for t in trials}) == 16
    assert {t["k_ph"] for t in trials} == {2, 1, 0.5, 0.2}


def test_random_sweep_is_seeded_subset():
    spec = SweepSpec({"k_ph": [1, 2, 3], "k_vh": [4, 5, 6]}, strategy="random", n_trials=4, seed=3)
    a, b = spec.trials(), spec.trials()
    assert a == b and len(a) == 4
    grid = SweepSpec(spec.axes).trials()
    assert all(t in grid for t in a)


@pytest.mark.parametrize("doc", [
    {"axes": {}},
    {"axes": {"k_ph": []}},
    {"axes": {"k_ph": [1]}, "strategy": "bayes"},
    {"axes": {"k_ph": [1]}, "objective": "vibes"},
    {"axes": {"k_ph": [1]}, "budget_fraction": 0},
    {"axes": {"k_ph": [float("nan")]}},
    {"strategy": "grid"},
    {"axes": {"k_ph": [1]}, "extra": 1},
])
def test_invalid_sweeps(doc):
    with pytest.raises(ConfigError):
        SweepSpec.from_dict(doc)


def test_apply_trial():
    base = RunConfig()
    cfg = apply_trial(base, {"k_ph": 0.5, "train.learning_rate": 1e-4, "train.n_epochs": 3.0})
    assert cfg.reward.factors["k_ph"] == 0.5 and cfg.reward.preset == base.reward.preset
    assert cfg.train.learning_rate == 1e-4 and cfg.train.n_epochs == 3 and isinstance(cfg.train.n_epochs, int)
    assert base.reward.factors == {}
    for bad in ({"bogus": 1}, {"train.bogus": 1}, {"train.gamma": 5.0}):
        with pytest.raises(ConfigError):
            apply_trial(base, bad)


def test_reward_spec_roundtrip():
    spec = RewardSpec("tune_run2", {"k_vh": 0.01}, ("l_wrist",))
    d = spec.to_dict()
    assert d == {"preset": "tune_run2", "k_vh": 0.01, "end_effectors": ["l_wrist"]}
    assert [f.name for f in fields(RewardSpec)] == ["preset", "factors", "end_effectors"]
