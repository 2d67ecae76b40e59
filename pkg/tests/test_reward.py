import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from signmimic import bundled
from signmimic import quaternion as quat
from signmimic.errors import ContractError, ParseError
from signmimic.reward import (CSV_COLUMNS, PRESETS, TERMS, CoordinateErrors, RewardConfig, compose,
                              end_effector_error, estimate_pose_velocity_reward, pose_error, pose_errors,
                              read_error_trace, velocity_error)
from signmimic.skeleton import forward_kinematics

TRACE = bundled.DATA_DIR / "traces" / "tuning_trace.csv"


@pytest.fixture(scope="module")
def config(signer):
    return RewardConfig.for_model(signer)


def random_pose(model, rng, scale=0.6):
    q = np.clip(rng.uniform(-scale, scale, model.total_dofs), model.lower, model.upper)
    return model.pose_from_q(q), q


def test_compose_examples(config):
    b = compose(config, {})
    assert b.total == 1.0 and all(getattr(b, f"r_{t}") == 1.0 for t in TERMS)
    half = compose(RewardConfig(k_pb=2.0), {"pb": math.log(2) / 2})
    assert abs(half.r_pb - 0.5) < 1e-12
    assert abs(half.total - 0.5) < 1e-12


def test_compose_rejects_negative_error(config):
    with pytest.raises(ContractError):
        compose(config, {"ph": -1e-3})


def test_breakdown_is_product_of_exponentials(config, rng):
    eps = {t: float(v) for t, v in zip(TERMS, rng.uniform(0, 3, 6))}
    b = compose(config, eps)
    prod = 1.0
    for t in TERMS:
        assert getattr(b, f"r_{t}") == math.exp(-getattr(config, f"k_{t}") * eps[t])
        assert getattr(b, f"eps_{t}") == eps[t]
        prod *= getattr(b, f"r_{t}")
    assert abs(b.total - prod) < 1e-12
    assert len(b.row(3)) == len(CSV_COLUMNS)


def test_zero_annihilation():
    b = compose(RewardConfig(), {"vh": 1e12})
    assert b.r_vh == 0.0 and b.total == 0.0


def test_pose_error_examples(signer, rng):
    p, _ = random_pose(signer, rng)
    assert pose_error(p, p, signer.actuated) == 0.0
    a, b = signer.rest_pose(), signer.rest_pose()
    b.joint_rotations["right_elbow"] = 0.5
    assert pose_error(b, a, ["right_elbow"]) == pytest.approx(0.25, abs=1e-15)
    with pytest.raises(ContractError):
        pose_error(a, b, ["tail"])


def test_pose_error_loop_oracle(signer, rng):
    joints = ["neck", "right_shoulder", "left_elbow", "right_index_pip", "chest"]
    for _ in range(20):
        pa, _ = random_pose(signer, rng)
        pb, _ = random_pose(signer, rng)
        expected = 0.0
        for n in joints:
            va, vb = pa.joint_rotations[n], pb.joint_rotations[n]
            if np.ndim(va):
                rel = quat.mul(quat.conj(va), vb)
                ang = 2 * math.atan2(math.sqrt(rel[1] ** 2 + rel[2] ** 2 + rel[3] ** 2), abs(rel[0]))
            else:
                ang = va - vb
            expected += ang * ang
        assert pose_error(pa, pb, joints) == pytest.approx(expected, abs=1e-12)


def test_velocity_error_examples(signer, rng):
    v = rng.standard_normal(signer.total_dofs)
    assert velocity_error(signer, v, v, signer.actuated) == 0.0
    w = v.copy()
    w[signer.dof_slices["right_elbow"]] += 0.5
    assert velocity_error(signer, w, v, ["right_elbow"]) == pytest.approx(0.25)
    joints = ["neck", "right_shoulder", "left_elbow", "right_index_pip", "chest"]
    u = rng.standard_normal(signer.total_dofs)
    expected = sum((u[i] - v[i]) ** 2 for n in joints for i in range(signer.dof_slices[n].start,
                                                                        signer.dof_slices[n].stop))
    assert velocity_error(signer, u, v, joints) == pytest.approx(expected, abs=1e-12)
    with pytest.raises(ContractError):
        velocity_error(signer, u[:-1], v[:-1], joints)


def test_end_effector_error_examples(signer, rng):
    p, _ = random_pose(signer, rng)
    assert end_effector_error(signer, p, p) == 0.0
    moved = p.copy()
    moved.root_position = moved.root_position + np.array([0.1, 0.0, 0.0])
    assert end_effector_error(signer, moved, p) == pytest.approx(0.02, abs=1e-15)
    for _ in range(10):
        a, _ = random_pose(signer, rng)
        b, _ = random_pose(signer, rng)
        fa, fb = forward_kinematics(signer, a), forward_kinematics(signer, b)
        expected = sum(np.sum((fa[w][0] - fb[w][0]) ** 2) for w in ("left_palm", "right_palm"))
        assert end_effector_error(signer, a, b) == pytest.approx(expected, abs=1e-10)
    with pytest.raises(ContractError):
        end_effector_error(signer, p, p, ["left_ankle_x"])


def test_config_joint_split(signer, config):
    assert set(config.body_joints).isdisjoint(config.hand_joints)
    assert set(config.body_joints) | set(config.hand_joints) == set(signer.actuated)
    # 16 joints per hand, of which the thumb CMC is fixed
    assert len(config.hand_joints) == 30
    assert "right_wrist" in config.hand_joints and "right_elbow" in config.body_joints
    assert config.end_effectors == ("left_wrist", "right_wrist")
    assert (config.k_pb, config.k_ph, config.k_vb, config.k_vh) == (2.0, 0.2, 5e-3, 1e-4)


def test_config_validation_and_roundtrip(signer):
    with pytest.raises(ContractError):
        RewardConfig(k_ph=-1.0)
    with pytest.raises(ContractError):
        RewardConfig(body_joints=("a",), hand_joints=("a",))
    cfg = RewardConfig.for_model(signer, "default")
    assert RewardConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ParseError):
        RewardConfig.from_dict({"k_zz": 1.0})


def test_coordinate_errors_match_pose_errors(signer, config, rng):
    ce = CoordinateErrors(signer, config)
    for _ in range(10):
        pa, qa = random_pose(signer, rng)
        pb, qb = random_pose(signer, rng)
        va, vb = rng.standard_normal((2, signer.total_dofs))
        fk = forward_kinematics(signer, pa)
        pos = np.array([fk[l.name][0] for l in signer.links])
        ref_fk = forward_kinematics(signer, pb)
        ee_ref = np.array([ref_fk[signer.joint_by_name[n].child_link][0] for n in config.end_effectors])
        fast = ce(qa, va, qb, vb, pos, ee_ref)
        slow = pose_errors(signer, config, pa, pb, va, vb)
        for t in TERMS:
            assert fast[t] == pytest.approx(slow[t], abs=1e-10)


errors_strategy = st.fixed_dictionaries({t: st.floats(0, 50) for t in TERMS})
factor_strategy = st.fixed_dictionaries({f"k_{t}": st.floats(1e-4, 10) for t in TERMS})


@given(errors_strategy, factor_strategy, st.sampled_from(TERMS), st.floats(1e-3, 10))
def test_monotonicity_and_leniency(errors, factors, term, delta):
    cfg = RewardConfig(**factors)
    base = compose(cfg, errors).total
    assert 0.0 <= base <= 1.0
    if base > 1e-250:
        worse = compose(cfg, {**errors, term: errors[term] + delta}).total
        assert worse < base
        if factors[f"k_{term}"] * errors[term] > 1e-9:
            kinder = compose(cfg.with_factors(**{f"k_{term}": factors[f"k_{term}"] / 2}), errors).total
            assert kinder > base


def test_trace_ranks_tuned_factors_above_default():
    trace = read_error_trace(TRACE)
    assert trace.shape[1] == 6
    default = estimate_pose_velocity_reward(PRESETS["default"], trace)
    run3 = estimate_pose_velocity_reward(PRESETS["tune_run3"], trace)
    assert run3 > default
    for name in ("tune_run1", "tune_run2"):
        assert default < estimate_pose_velocity_reward(PRESETS[name], trace) <= run3


@pytest.mark.xfail(strict=True, reason="bundled trace comes from synthetic clips; default factors keep "
                                       "r_p*r_v near 0.16 rather than collapsing to zero")
def test_trace_reproduces_absolute_estimates():
    trace = read_error_trace(TRACE)
    assert estimate_pose_velocity_reward(PRESETS["default"], trace) < 1e-3
    assert estimate_pose_velocity_reward(PRESETS["tune_run3"], trace) == pytest.approx(0.79, abs=0.05)


def test_read_error_trace_errors(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("step,eps_pb\n0,1\n")
    with pytest.raises(ParseError, match="missing columns"):
        read_error_trace(p)
    p.write_text(",".join(CSV_COLUMNS) + "\n")
    with pytest.raises(ParseError, match="empty"):
        read_error_trace(p)
