import math

import numpy as np
import pytest
from oracles import brute_force, check_point, random_point

from signmimic.env import make_toy_env
from signmimic.errors import ContractError, NumericalError
from signmimic.rl import (MLP, Adam, NetworkParams, RolloutBuffer, TrainConfig, Trainer, curve_to_csv,
                          gaussian_log_prob, init_params, load_checkpoint, normalize_advantages, policy_forward,
                          policy_loss_and_grad, ppo_update, read_curve, returns_and_advantages, train,
                          value_forward)
from signmimic.rl.network import check_finite, orthogonal
from signmimic.rl.train import checkpoint_name, latest_checkpoint

SMALL = dict(learning_rate=3e-4, n_steps=32, batch_size=32, n_epochs=2, num_envs=2, hidden=(16, 16),
             log_std=-1.0, total_steps=256, checkpoint_every=2)


def toy_factory(seed):
    return make_toy_env(seed)


# -- policy distribution ------------------------------------------------------

def test_log_prob_at_mean():
    d = 44
    lp = gaussian_log_prob(np.zeros(d), np.zeros(d), np.full(d, -3.0))
    assert lp == pytest.approx(d * (3.0 - 0.5 * math.log(2 * math.pi)), abs=1e-9)


def test_log_prob_matches_density_oracle(rng):
    from scipy.stats import norm

    mean = rng.standard_normal(5)
    log_std = rng.uniform(-3, 0, 5)
    x = mean + rng.standard_normal(5)
    expected = norm.logpdf(x, mean, np.exp(log_std)).sum()
    assert gaussian_log_prob(x, mean, log_std) == pytest.approx(expected, abs=1e-10)


def test_density_integrates_to_one():
    from scipy.integrate import quad

    for mu, ls in [(0.0, -3.0), (0.4, -1.0), (-1.0, 0.5)]:
        s = math.exp(ls)
        val, _ = quad(lambda x: math.exp(gaussian_log_prob(np.array([x]), mu, np.array([ls]))),
                      mu - 12 * s, mu + 12 * s, points=[mu], limit=200)
        assert val == pytest.approx(1.0, abs=1e-6)


def test_deterministic_action_is_mean(rng):
    params = init_params(6, 3, rng, hidden=(8,))
    obs = rng.standard_normal((4, 6))
    out = policy_forward(params, obs, deterministic=True)
    np.testing.assert_array_equal(out.action, params.policy(params.normalize(obs)))
    with pytest.raises(ContractError):
        policy_forward(params, obs)


def test_sampled_actions_have_configured_spread(rng):
    params = init_params(3, 2, rng, hidden=(8,), log_std=-1.0)
    obs = np.zeros((20000, 3))
    out = policy_forward(params, obs, rng)
    np.testing.assert_allclose((out.action - out.mean).std(axis=0), math.exp(-1.0), rtol=0.02)


def test_init_scales(rng):
    params = init_params(10, 4, rng, hidden=(32, 32))
    w = params.policy.weights[0]
    np.testing.assert_allclose(w @ w.T, 2.0 * np.eye(10), atol=1e-10)
    assert np.abs(params.policy.weights[-1]).max() <= 1e-2 + 1e-15
    np.testing.assert_array_equal(params.log_std, -3.0)
    q = orthogonal(rng, 5, 5, 1.0)
    np.testing.assert_allclose(q @ q.T, np.eye(5), atol=1e-12)


def test_mlp_shape_validation():
    with pytest.raises(ContractError):
        MLP([np.zeros((3, 4)), np.zeros((5, 2))], [np.zeros(4), np.zeros(2)])
    with pytest.raises(ContractError):
        MLP([np.zeros((3, 4))], [np.zeros(4)], activation="sigmoid")


# -- returns and advantages ---------------------------------------------------

def test_returns_worked_example():
    buf = RolloutBuffer(np.zeros((3, 1)), np.zeros((3, 1)), [1.0, 1.0, 1.0], np.zeros(3), np.zeros(3),
                        [False, False, True])
    R, A = returns_and_advantages(buf, 0.5)
    np.testing.assert_allclose(R[:, 0], [1.75, 1.5, 1.0], atol=1e-15)
    np.testing.assert_allclose(A, R)


def test_zero_discount_returns_rewards(rng):
    r = rng.standard_normal((10, 3))
    buf = RolloutBuffer(np.zeros((10, 3, 1)), np.zeros((10, 3, 1)), r, rng.standard_normal((10, 3)),
                        np.zeros((10, 3)), np.zeros((10, 3), bool), last_value=rng.standard_normal(3))
    R, _ = returns_and_advantages(buf, 1e-300)
    np.testing.assert_allclose(R, r, atol=1e-12)


@pytest.mark.parametrize("mode", ["paper", "gae"])
def test_returns_match_brute_force(mode):
    rng = np.random.default_rng(7)
    for _ in range(200):
        r, v, boot = rng.standard_normal((3, 10))
        d = rng.random(10) < 0.25
        tr = d & (rng.random(10) < 0.5)
        last = rng.standard_normal()
        gamma, lam = rng.uniform(0.5, 1.0), rng.uniform(0.0, 1.0)
        buf = RolloutBuffer(np.zeros((10, 1)), np.zeros((10, 1)), r, v, np.zeros(10), d, tr, boot, [last])
        R, A = returns_and_advantages(buf, gamma, mode, lam)
        R0, A0 = brute_force(r, v, d, tr, boot, last, gamma, mode, lam)
        np.testing.assert_allclose(R[:, 0], R0, atol=1e-12, rtol=0)
        np.testing.assert_allclose(A[:, 0], A0, atol=1e-12, rtol=0)


def test_gae_with_unit_lambda_equals_paper_returns(rng):
    r, v = rng.standard_normal((2, 12, 2))
    d = np.zeros((12, 2), bool)
    d[5, 0] = True
    buf = RolloutBuffer(np.zeros((12, 2, 1)), np.zeros((12, 2, 1)), r, v, np.zeros((12, 2)), d,
                        last_value=rng.standard_normal(2))
    Rp, _ = returns_and_advantages(buf, 0.9, "paper")
    Rg, _ = returns_and_advantages(buf, 0.9, "gae", 1.0)
    np.testing.assert_allclose(Rp, Rg, atol=1e-12)


def test_buffer_contracts():
    with pytest.raises(ContractError):
        RolloutBuffer(np.zeros((2, 1)), np.zeros((2, 1)), [0, 0], [0, 0], [0, 0], [False, False], [True, False])
    buf = RolloutBuffer(np.zeros((2, 1)), np.zeros((2, 1)), [0, 0], [0, 0], [0, 0], [False, False])
    with pytest.raises(ContractError):
        returns_and_advantages(buf, 0.9, "td")


def test_advantage_normalization_preserves_order(rng):
    a = rng.standard_normal(50) * 7 + 3
    n = normalize_advantages(a)
    assert n.mean() == pytest.approx(0.0, abs=1e-12)
    assert n.std() == pytest.approx(1.0, abs=1e-6)
    np.testing.assert_array_equal(np.argsort(a), np.argsort(n))


# -- gradients and updates ----------------------------------------------------

@pytest.mark.parametrize("activation", ["relu", "tanh"])
def test_gradients_match_finite_differences(activation):
    rng = np.random.default_rng(3)
    for _ in range(10):
        assert check_point(rng, activation=activation) < 1e-4


def test_unbounded_clip_equals_vanilla_policy_gradient(rng):
    params, obs, actions, old_logp, adv, _ = random_point(rng)
    _, g, _ = policy_loss_and_grad(params, obs, actions, old_logp, adv, 1e12)
    mean, cache = params.policy.forward(obs)
    logp = gaussian_log_prob(actions, mean, params.log_std)
    ratio = np.exp(logp - old_logp)
    dmean = (-(adv * ratio) / len(adv))[:, None] * (actions - mean) * np.exp(-2 * params.log_std)
    expected, _ = params.policy.backward(cache, dmean)
    for a, b in zip(g, expected):
        np.testing.assert_allclose(a, b, atol=1e-10, rtol=0)


def test_clipped_samples_carry_no_gradient(rng):
    params, obs, actions, _, _, _ = random_point(rng)
    logp = gaussian_log_prob(actions, params.policy(obs), params.log_std)
    # ratio e^1 with positive advantage lies beyond the clip range
    loss, g, st = policy_loss_and_grad(params, obs, actions, logp - 1.0, np.ones(len(logp)), 0.2)
    assert loss == pytest.approx(-1.2)
    assert st["clip_fraction"] == 1.0
    assert all(np.all(x == 0) for x in g)


def _buffer(rng, params, T=16, N=2, adv_zero=False):
    obs = rng.standard_normal((T, N, params.obs_dim))
    out = policy_forward(params, obs, rng, normalized=True)
    v = value_forward(params, obs, normalized=True)
    r = v.copy() if adv_zero else rng.standard_normal((T, N))
    dones = np.zeros((T, N), bool)
    return RolloutBuffer(obs, out.action, r, v, out.log_prob, dones, last_value=np.zeros(N))


def test_zero_advantage_leaves_policy_unchanged(rng):
    params = init_params(4, 2, rng, hidden=(8,))
    buf = _buffer(rng, params)
    buf.rewards[:] = 0.0
    # gamma tiny makes R = r = 0; with V = 0 as well every advantage is zero
    buf.values[:] = 0.0
    cfg = TrainConfig(gamma=1e-300, normalize_advantages=False, n_steps=16, num_envs=2, batch_size=8,
                      hidden=(8,), learning_rate=1e-2)
    new, _ = ppo_update(params, buf, cfg, rng=np.random.default_rng(0))
    for a, b in zip(new.policy.parameters(), params.policy.parameters()):
        np.testing.assert_array_equal(a, b)


def test_ppo_update_does_not_mutate_input(rng):
    params = init_params(4, 2, rng, hidden=(8,))
    before = {k: v.copy() for k, v in params.arrays().items()}
    cfg = TrainConfig(n_steps=16, num_envs=2, batch_size=8, hidden=(8,), learning_rate=1e-2)
    new, stats = ppo_update(params, _buffer(rng, params), cfg, rng=np.random.default_rng(0))
    for k, v in params.arrays().items():
        np.testing.assert_array_equal(v, before[k])
    assert any(not np.array_equal(a, b) for a, b in zip(new.value.parameters(), params.value.parameters()))
    assert np.isfinite([stats.policy_loss, stats.value_loss, stats.kl, stats.clip_fraction]).all()


def test_value_regression_reduces_loss(rng):
    params = init_params(4, 2, rng, hidden=(16,))
    buf = _buffer(rng, params)
    cfg = TrainConfig(n_steps=16, num_envs=2, batch_size=32, hidden=(16,), learning_rate=1e-2, n_epochs=50,
                      gamma=1e-300)
    _, first = ppo_update(params, buf, TrainConfig(**{**cfg.to_dict(), "n_epochs": 1}), rng=np.random.default_rng(0))
    _, many = ppo_update(params, buf, cfg, rng=np.random.default_rng(0))
    assert many.value_loss < first.value_loss


def test_non_finite_gradient_names_layer():
    with pytest.raises(NumericalError, match="policy.1.bias"):
        check_finite([np.zeros(2), np.array([0.0, np.inf])], ["policy.0.weight", "policy.1.bias"])


def test_nan_rewards_raise_numerical_error(rng):
    params = init_params(4, 2, rng, hidden=(8,))
    buf = _buffer(rng, params)
    buf.rewards[3, 1] = np.nan
    cfg = TrainConfig(n_steps=16, num_envs=2, batch_size=8, hidden=(8,), normalize_advantages=False)
    with pytest.raises(NumericalError, match="value"):
        ppo_update(params, buf, cfg)


def test_adam_first_step_moves_by_lr():
    p = [np.array([1.0, -2.0])]
    opt = Adam(p, 0.1)
    opt.step(p, [np.array([3.0, -0.5])])
    np.testing.assert_allclose(p[0], [0.9, -1.9], atol=1e-8)


def test_observation_statistics_match_batch_moments(rng):
    params = init_params(3, 1, rng, hidden=(4,))
    data = rng.standard_normal((5, 40, 3)) * [1.0, 2.0, 3.0] + [0.5, -1.0, 4.0]
    for chunk in data:
        params.update_obs_stats(chunk)
    flat = data.reshape(-1, 3)
    np.testing.assert_allclose(params.obs_mean, flat.mean(0), atol=1e-12)
    np.testing.assert_allclose(params.obs_var, flat.var(0), atol=1e-12)
    assert params.obs_count == 200


# -- training loop --------------------------------------------------------------

def test_train_config_validation():
    for bad in [dict(gamma=0.0), dict(gamma=1.5), dict(learning_rate=0.0), dict(batch_size=10_000),
                dict(advantage_mode="x"), dict(n_steps=0), dict(clip_ratio=0.0)]:
        with pytest.raises(ContractError):
            TrainConfig(**bad)
    cfg = TrainConfig(**SMALL)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.n_updates == 256 // (32 * 2)


def test_curve_length_and_columns():
    cfg = TrainConfig(**SMALL)
    result = train(toy_factory, cfg)
    assert len(result.curve) == cfg.total_steps // (cfg.n_steps * cfg.num_envs)
    assert [r["step"] for r in result.curve] == [64, 128, 192, 256]
    for row in result.curve:
        assert 0.0 <= row["reward_mean"] <= 1.0


def test_training_is_deterministic():
    cfg = TrainConfig(**SMALL)
    a = curve_to_csv(train(toy_factory, cfg).curve)
    b = curve_to_csv(train(toy_factory, cfg).curve)
    assert a == b
    c = curve_to_csv(train(toy_factory, TrainConfig(**{**SMALL, "seed": 2})).curve)
    assert a != c


def test_resume_reproduces_uninterrupted_run(tmp_path):
    cfg = TrainConfig(**SMALL)
    full = train(toy_factory, cfg, tmp_path / "full")
    part = train(toy_factory, cfg, tmp_path / "part", stop_after=2)
    assert len(part.curve) == 2
    resumed = train(toy_factory, cfg, tmp_path / "part")
    assert curve_to_csv(resumed.curve) == curve_to_csv(full.curve)
    assert (tmp_path / "part" / "curve.csv").read_text() == (tmp_path / "full" / "curve.csv").read_text()
    for k, v in full.params.arrays().items():
        np.testing.assert_array_equal(resumed.params.arrays()[k], v)


def test_checkpoint_roundtrip(tmp_path):
    cfg = TrainConfig(**SMALL)
    result = train(toy_factory, cfg, tmp_path)
    assert [p.name for p in result.checkpoints] == [checkpoint_name(128), checkpoint_name(256)]
    assert latest_checkpoint(tmp_path / "checkpoints").name == checkpoint_name(256)
    ck = load_checkpoint(result.checkpoints[-1])
    assert ck["config"] == cfg
    assert ck["meta"]["steps"] == 256
    for k, v in result.params.arrays().items():
        np.testing.assert_array_equal(ck["params"].arrays()[k], v)
    assert read_curve(tmp_path / "curve.csv")[-1]["step"] == 256


def test_resume_rejects_changed_config(tmp_path):
    train(toy_factory, TrainConfig(**SMALL), tmp_path, stop_after=2)
    with pytest.raises(ContractError):
        train(toy_factory, TrainConfig(**{**SMALL, "learning_rate": 1e-3}), tmp_path)


def test_too_short_budget_is_rejected():
    with pytest.raises(ContractError):
        train(toy_factory, TrainConfig(**{**SMALL, "total_steps": 10}))


def test_trainer_collect_shapes():
    tr = Trainer(toy_factory, TrainConfig(**SMALL))
    buf, _ = tr.collect()
    assert buf.obs.shape == (32, 2, tr.envs[0].observation_dim)
    assert buf.actions.shape == (32, 2, 2)
    assert isinstance(tr.params, NetworkParams)
