import numpy as np
import pytest
from scipy.stats import chisquare

from signmimic import bundled
from signmimic import quaternion as quat
from signmimic.dynamics import DynState
from signmimic.env import (LINK_FEATURES, EpisodeConfig, ImitationEnv, link_features, make_toy_env,
                           observation_dim, toy_clip)
from signmimic.errors import ContractError
from signmimic.retarget import ceiling
from signmimic.reward import RewardConfig
from signmimic.skeleton import forward_kinematics


@pytest.fixture(scope="module")
def clip():
    return bundled.clip("69546")


@pytest.fixture
def env(signer, clip):
    return ImitationEnv(signer, clip, seed=3)


def test_dimensions(signer, env):
    assert observation_dim(signer) == 1 + 13 * 45 == 586
    assert env.observation_dim == 586
    assert env.action_dim == 44
    obs = env.reset()
    assert obs.shape == (586,) and np.isfinite(obs).all()


def test_reset_without_rsi_matches_frame_zero(signer, clip):
    env = ImitationEnv(signer, clip, episode=EpisodeConfig(reference_state_init=False))
    obs = env.reset(11)
    feats, _ = link_features(signer, env.ref_q[0], env.ref_qd[0])
    np.testing.assert_array_equal(obs, np.concatenate([[0.0], feats.ravel()]))
    assert env.frame == 0


def test_reset_is_deterministic_per_seed(env):
    a = env.reset(5)
    b = env.reset(5)
    np.testing.assert_array_equal(a, b)


def test_rsi_start_frames_uniform(signer, clip):
    env = ImitationEnv(signer, clip, seed=0)
    counts = np.zeros(env.n_frames)
    for _ in range(10_000):
        env.reset()
        counts[env.frame] += 1
    # chi-square goodness of fit against the uniform distribution
    _, p = chisquare(counts)
    assert p > 1e-3
    assert counts.min() > 0


def test_zero_action_tracks_at_ceiling(signer, clip):
    steps = 200
    rep = ceiling(signer, clip, mode="pd_tracked", steps=steps)
    env = ImitationEnv(signer, clip, episode=EpisodeConfig(max_steps=steps, reference_state_init=False))
    env.reset(0)
    rewards = [env.step(np.zeros(env.action_dim))[1] for _ in range(steps)]
    np.testing.assert_allclose(rewards, rep.series, rtol=0, atol=1e-12)
    assert np.mean(rewards) > 0.95


def test_done_fires_at_max_steps_and_reward_bounded(signer, clip):
    env = ImitationEnv(signer, clip, episode=EpisodeConfig(max_steps=17), seed=1)
    env.reset()
    total = 0.0
    for i in range(17):
        _, r, done, b = env.step(np.zeros(env.action_dim))
        assert r == b.total
        total += r
        assert done == (i == 16)
    assert env.truncated
    assert total <= 17


def test_early_stop(signer, clip):
    env = ImitationEnv(signer, clip, episode=EpisodeConfig(max_steps=50, early_stop_reward=0.5), seed=1)
    env.reset()
    _, r, done, _ = env.step(np.full(env.action_dim, 1.0))
    assert r < 0.5 and done and not env.truncated


def test_bad_actions_rejected(env):
    env.reset()
    bad = np.zeros(env.action_dim)
    bad[0] = np.nan
    with pytest.raises(ContractError):
        env.step(bad)
    with pytest.raises(ContractError):
        env.step(np.zeros(env.action_dim + 1))


def test_episode_config_validation():
    with pytest.raises(ContractError):
        EpisodeConfig(max_steps=0)
    with pytest.raises(ContractError):
        EpisodeConfig(early_stop_reward=1.0)


def test_rest_state_features_are_rest_offsets(signer):
    feats, _ = link_features(signer, np.zeros(signer.total_dofs), np.zeros(signer.total_dofs))
    fk = forward_kinematics(signer, signer.rest_pose())
    for i, link in enumerate(signer.links):
        np.testing.assert_allclose(feats[i, :3], fk[link.name][0], atol=1e-14)
        np.testing.assert_allclose(feats[i, 3:7], quat.IDENTITY, atol=1e-14)
        np.testing.assert_array_equal(feats[i, 7:], 0.0)


def test_features_invariant_to_world_transform(signer, rng):
    q = np.clip(rng.uniform(-0.7, 0.7, signer.total_dofs), signer.lower, signer.upper)
    qd = rng.standard_normal(signer.total_dofs)
    base, _ = link_features(signer, q, qd)
    r = quat.normalize(rng.standard_normal(4))
    moved, _ = link_features(signer, q, qd, rng.standard_normal(3), r)
    np.testing.assert_allclose(moved, base, atol=1e-10)


def test_features_match_fk_oracle(signer, rng):
    q = np.clip(rng.uniform(-0.7, 0.7, signer.total_dofs), signer.lower, signer.upper)
    qd = rng.standard_normal(signer.total_dofs)
    root_p, root_r = rng.standard_normal(3), quat.normalize(rng.standard_normal(4))
    feats, _ = link_features(signer, q, qd, root_p, root_r)
    fk = forward_kinematics(signer, signer.pose_from_q(q, root_p, root_r))
    inv = quat.conj(root_r)
    h = 1e-6
    fk_p = forward_kinematics(signer, signer.pose_from_q(q + h * qd, root_p, root_r))
    fk_m = forward_kinematics(signer, signer.pose_from_q(q - h * qd, root_p, root_r))
    for i, link in enumerate(signer.links):
        p, r = fk[link.name]
        np.testing.assert_allclose(feats[i, :3], quat.rotate(inv, p - root_p), atol=1e-10)
        np.testing.assert_allclose(feats[i, 3:7], quat.canonical(quat.mul(inv, r)), atol=1e-10)
        lin = (fk_p[link.name][0] - fk_m[link.name][0]) / (2 * h)
        np.testing.assert_allclose(feats[i, 7:10], quat.rotate(inv, lin), atol=1e-6)
    assert feats.shape[1] == LINK_FEATURES


def test_observe_matches_env_observation(signer, clip):
    env = ImitationEnv(signer, clip, episode=EpisodeConfig(reference_state_init=False))
    obs = env.reset(0)
    again = env.observe(DynState(env.q, env.qdot), 0.0)
    np.testing.assert_array_equal(obs, again)


def test_markov_determinism(signer, clip, rng):
    actions = 0.05 * rng.standard_normal((30, signer.total_dofs))

    def run():
        env = ImitationEnv(signer, clip, seed=9)
        env.reset()
        return [env.step(a)[0] for a in actions]

    for a, b in zip(run(), run()):
        assert a.tobytes() == b.tobytes()


def test_state_roundtrip_continues_identically(signer, clip, rng):
    env = ImitationEnv(signer, clip, episode=EpisodeConfig(max_steps=5), seed=4)
    env.reset()
    for _ in range(3):
        env.step(0.01 * rng.standard_normal(env.action_dim))
    st = env.get_state()
    clone = ImitationEnv(signer, clip, episode=EpisodeConfig(max_steps=5), seed=99)
    clone.load_state(st)
    a = 0.01 * rng.standard_normal(env.action_dim)
    for e in (env, clone):
        e.step(a)
        e.step(a)
    np.testing.assert_array_equal(env.q, clone.q)
    assert env.reset().tobytes() == clone.reset().tobytes()


def test_residual_target_interpolates_reference(signer, clip):
    env = ImitationEnv(signer, clip)
    np.testing.assert_array_equal(env.reference_at(3.0), env.ref_q[3])
    np.testing.assert_allclose(env.reference_at(3.25), 0.75 * env.ref_q[3] + 0.25 * env.ref_q[4])
    np.testing.assert_array_equal(env.reference_at(env.n_frames), env.ref_q[0])


def test_clip_is_resampled_to_control_rate(signer):
    src = bundled.clip("00433")
    fast = type(src)(60.0, [p for p in src.frames for _ in (0, 1)], src.label)
    env = ImitationEnv(signer, fast)
    assert env.clip.rate == 30


def test_fingerprint(signer, clip):
    a = ImitationEnv(signer, clip).fingerprint()
    b = ImitationEnv(signer, clip).fingerprint()
    c = ImitationEnv(signer, bundled.clip("00433")).fingerprint()
    assert a == b and a["clip_sha256"] != c["clip_sha256"] and a["model_sha256"] == c["model_sha256"]


def test_toy_env(toy):
    env = make_toy_env(0)
    assert env.action_dim == 2 and not env.residual
    assert env.observation_dim == 1 + 13 * len(toy.links)
    clip = toy_clip(toy)
    assert clip.n_frames == 60
    env.reset()
    _, r, _, _ = env.step(env.reference_action())
    assert 0.0 < r <= 1.0
    cfg = env.reward_config
    assert cfg.end_effectors == ("tip",) and isinstance(cfg, RewardConfig)
