"""Regenerate the files under src/signmimic/data/.

    python tools/make_bundled_data.py models     # signer.model, toy_arm.model
    python tools/make_bundled_data.py motions    # sample capture + clips
    python tools/make_bundled_data.py traces     # recorded error traces

The sign captures are synthetic stand-ins shaped like pose-estimator exports
(SMPL body axis-angles, MANO hand axis-angles at 30 fps). They start and end
in a relaxed arms-down pose so looping evaluation has no large seam.
"""

import json
import math
import sys
from pathlib import Path

import numpy as np

from signmimic import quaternion as quat
from signmimic.skeleton import Joint, Link, SkeletonModel, dump_skeleton

DATA = Path(__file__).resolve().parents[1] / "src" / "signmimic" / "data"
PI = math.pi

# finger name, MCP offset on the right palm, phalanx lengths
FINGERS = [
    ("index", (-0.090, 0.0, 0.026), (0.040, 0.025, 0.020)),
    ("middle", (-0.092, 0.0, 0.008), (0.044, 0.028, 0.021)),
    ("ring", (-0.088, 0.0, -0.010), (0.041, 0.026, 0.020)),
    ("pinky", (-0.080, 0.0, -0.027), (0.032, 0.020, 0.018)),
]
THUMB_DIR = np.array([-0.6, 0.0, 0.8])
THUMB_AXIS = np.array([0.8, 0.0, 0.6])
FINGER_AXIS = np.array([0.0, 0.0, 1.0])
PHALANX_MASS = 0.2 / 15.0


def _right_arm_and_hand():
    """Right arm + hand in T-pose (arm along -x). Returns (links, joints)."""
    links, joints = [], []

    def add(name, parent, offset, mass, shape, dims, com, joint=None):
        links.append(Link(name, parent, np.array(offset, float), mass, shape, dims, np.array(com, float)))
        if joint is not None:
            jname, jtype, axis, limits, kp, kd = joint
            joints.append(Joint(jname, jtype, name, None if axis is None else np.array(axis, float),
                                np.array(limits, float).reshape(-1, 2), kp, kd))

    full = [[-PI, PI]] * 3
    add("right_upper_arm", "torso", (-0.18311, 0.24350, -0.02405), 1.5, "capsule", (0.045, 0.18),
        (-0.1374, 0, 0), ("right_shoulder", "spherical", None, full, 400.0, 8.0))
    add("right_forearm", "right_upper_arm", (-0.274788, 0, 0), 1.0, "capsule", (0.04, 0.135),
        (-0.1295, 0, 0), ("right_elbow", "revolute", (0, 1, 0), [[-PI, PI]], 300.0, 6.0))
    add("right_palm", "right_forearm", (-0.258947, 0, 0), 0.3, "box", ((0.09, 0.025, 0.08),),
        (-0.045, 0, 0), ("right_wrist", "revolute", FINGER_AXIS, [[-PI, PI]], 30.0, 0.5))

    flex = [[0.0, PI / 2]]
    kp_f, kd_f = 2.0, 0.02
    tdir = THUMB_DIR / np.linalg.norm(THUMB_DIR)
    tlen = (0.030, 0.030, 0.025)
    add("right_thumb1", "right_palm", (-0.025, -0.010, 0.035), PHALANX_MASS, "capsule", (0.01, tlen[0]),
        tdir * tlen[0] / 2, ("right_thumb_cmc", "fixed", None, np.zeros((0, 2)), 0.0, 0.0))
    add("right_thumb2", "right_thumb1", tdir * tlen[0], PHALANX_MASS, "capsule", (0.009, tlen[1]),
        tdir * tlen[1] / 2, ("right_thumb_mcp", "revolute", THUMB_AXIS, flex, kp_f, kd_f))
    add("right_thumb3", "right_thumb2", tdir * tlen[1], PHALANX_MASS, "capsule", (0.008, tlen[2]),
        tdir * tlen[2] / 2, ("right_thumb_ip", "revolute", THUMB_AXIS, flex, kp_f, kd_f))
    for name, mcp, lens in FINGERS:
        parent, offset = "right_palm", mcp
        for k, (jn, ln) in enumerate(zip(("mcp", "pip", "dip"), lens)):
            link = f"right_{name}{k + 1}"
            add(link, parent, offset, PHALANX_MASS, "capsule", (0.009 - 0.001 * k, ln), (-ln / 2, 0, 0),
                (f"right_{name}_{jn}", "revolute", FINGER_AXIS, flex, kp_f, kd_f))
            parent, offset = link, (-ln, 0, 0)
    return links, joints


def _mirror(links, joints):
    def swap(n):
        return None if n is None or not n.startswith("right_") else "left_" + n[len("right_"):]

    mlinks = [Link(swap(l.name), swap(l.parent) or l.parent, quat.mirror_point(l.offset), l.mass, l.shape, l.dims,
                   quat.mirror_point(l.com)) for l in links]
    mjoints = [Joint(swap(j.name), j.type, swap(j.child_link), None if j.axis is None else quat.mirror_axis_angle(j.axis),
                     j.limits, j.kp, j.kd) for j in joints]
    return mlinks, mjoints


def signer_model() -> SkeletonModel:
    full = np.array([[-PI, PI]] * 3)
    links = [
        Link("pelvis", None, np.zeros(3), 6.0, "sphere", (0.09,), np.array([0, 0.07, 0])),
        Link("torso", "pelvis", np.array([0, 0.236151, 0]), 14.0, "box", ((0.3, 0.28, 0.16),), np.array([0, 0.12, 0])),
        Link("head", "torso", np.array([0, 0.223894, 0]), 2.0, "sphere", (0.1,), np.array([0, 0.1, 0])),
    ]
    joints = [
        Joint("root", "spherical", "pelvis", None, full, 0.0, 0.0),
        Joint("chest", "spherical", "torso", None, full, 1000.0, 100.0),
        Joint("neck", "spherical", "head", None, full, 100.0, 10.0),
    ]
    leg_links = [
        Link("right_thigh", "pelvis", np.array([-0.084887, 0, 0]), 4.5, "capsule", (0.055, 0.3), np.array([0, -0.21, 0])),
        Link("right_shin", "right_thigh", np.array([0, -0.421546, 0]), 3.0, "capsule", (0.05, 0.31), np.array([0, -0.2, 0])),
        Link("right_foot", "right_shin", np.array([0, -0.40987, 0]), 1.0, "box", ((0.09, 0.055, 0.18),), np.array([0, -0.045, 0.045])),
    ]
    leg_joints = [
        Joint("right_hip", "spherical", "right_thigh", None, full, 500.0, 50.0),
        Joint("right_knee", "revolute", "right_shin", np.array([1.0, 0, 0]), np.array([[-PI, 0.0]]), 500.0, 50.0),
        Joint("right_ankle", "spherical", "right_foot", None, full, 400.0, 40.0),
    ]
    arm_links, arm_joints = _right_arm_and_hand()
    r_links, r_joints = arm_links + leg_links, arm_joints + leg_joints
    l_links, l_joints = _mirror(r_links, r_joints)
    links += r_links + l_links
    joints += r_joints + l_joints

    rmap = {"body/spine3": "chest", "body/neck": "neck"}
    for side in ("right", "left"):
        rmap[f"body/{side}_shoulder"] = f"{side}_shoulder"
        rmap[f"body/{side}_elbow"] = f"{side}_elbow"
        rmap[f"body/{side}_wrist"] = f"{side}_wrist"
        rmap[f"{side}_hand/thumb1"] = f"{side}_thumb_cmc"
        rmap[f"{side}_hand/thumb2"] = f"{side}_thumb_mcp"
        rmap[f"{side}_hand/thumb3"] = f"{side}_thumb_ip"
        for name, _, _ in FINGERS:
            for k, jn in enumerate(("mcp", "pip", "dip")):
                rmap[f"{side}_hand/{name}{k + 1}"] = f"{side}_{name}_{jn}"
    fixed = ["root"] + [f"{s}_{j}" for s in ("right", "left") for j in ("hip", "knee", "ankle")]
    return SkeletonModel(links, joints, rmap, fixed, name="signer")


def toy_arm_model() -> SkeletonModel:
    lim = np.array([[-PI, PI]])
    z = np.array([0.0, 0.0, 1.0])
    links = [
        Link("base", None, np.zeros(3), 1.0, "sphere", (0.05,)),
        Link("upper", "base", np.zeros(3), 1.0, "capsule", (0.03, 0.3), np.array([0.15, 0, 0])),
        Link("lower", "upper", np.array([0.3, 0, 0]), 0.7, "capsule", (0.025, 0.25), np.array([0.125, 0, 0])),
        Link("hand", "lower", np.array([0.25, 0, 0]), 0.1, "sphere", (0.03,)),
    ]
    joints = [
        Joint("shoulder", "revolute", "upper", z, lim, 60.0, 3.0),
        Joint("elbow", "revolute", "lower", z, lim, 40.0, 2.0),
        Joint("tip", "fixed", "hand"),
    ]
    return SkeletonModel(links, joints, {}, [], name="toy_arm")


def write_models():
    for fname, model in (("signer.model", signer_model()), ("toy_arm.model", toy_arm_model())):
        (DATA / fname).write_text(dump_skeleton(model))
        print(f"wrote {fname}: {len(model.joints)} joints, {model.total_dofs} actuated DoFs")


# -- synthetic captures ---------------------------------------------------
FPS = 30.0


def _neutral():
    return {
        "chest": np.zeros(3), "neck": np.zeros(3),
        "r_sh": np.array([0.0, 0.0, 1.25]), "l_sh": np.array([0.0, 0.0, -1.25]),
        "r_el": 0.35, "l_el": 0.35, "r_wr": 0.0, "l_wr": 0.0,
        "r_curl": np.full(4, 0.25), "l_curl": np.full(4, 0.25), "r_thumb": 0.2, "l_thumb": 0.2,
    }


def _smoothstep(u):
    return u * u * (3.0 - 2.0 * u)


def _track(keys, duration):
    """Sample keyframed parameters at FPS with smoothstep blending."""
    n = int(round(duration * FPS))
    times = [k[0] for k in keys]
    poses = []
    for i in range(n):
        t = i / FPS
        j = max(0, min(len(keys) - 2, int(np.searchsorted(times, t, side="right")) - 1))
        (t0, a), (t1, b) = keys[j], keys[j + 1]
        u = _smoothstep(float(np.clip((t - t0) / (t1 - t0), 0.0, 1.0)))
        poses.append({k: (1 - u) * np.asarray(a[k], float) + u * np.asarray(b[k], float) for k in a})
    return poses


def _keys(spec):
    """Expand ``[(time, overrides)]`` into full parameter dicts."""
    out, cur = [], _neutral()
    for t, over in spec:
        cur = {**cur, **{k: np.asarray(v, float) for k, v in over.items()}}
        out.append((t, dict(cur)))
    return out


def _capture_frames(poses, legs=False, left_hand=True):
    from signmimic.motion import CaptureFrame, HandData, MANO_JOINTS, SMPL_JOINTS

    frames = []
    for i, p in enumerate(poses):
        body = np.zeros((24, 3))
        body[SMPL_JOINTS.index("spine3")] = p["chest"]
        body[SMPL_JOINTS.index("neck")] = p["neck"]
        body[SMPL_JOINTS.index("right_shoulder")] = p["r_sh"]
        body[SMPL_JOINTS.index("left_shoulder")] = p["l_sh"]
        body[SMPL_JOINTS.index("right_elbow")] = [0.0, p["r_el"], 0.0]
        body[SMPL_JOINTS.index("left_elbow")] = quat.mirror_axis_angle([0.0, p["l_el"], 0.0])
        body[SMPL_JOINTS.index("right_wrist")] = [0.0, 0.0, p["r_wr"]]
        body[SMPL_JOINTS.index("left_wrist")] = quat.mirror_axis_angle([0.0, 0.0, p["l_wr"]])
        if legs:
            swing = 0.4 * math.sin(2 * math.pi * i / len(poses))
            body[SMPL_JOINTS.index("right_hip")] = [swing, 0, 0]
            body[SMPL_JOINTS.index("left_knee")] = [-abs(swing), 0, 0]
        hands = {}
        for side, sgn in (("r", 1.0), ("l", -1.0)):
            rot = np.zeros((15, 3))
            for fi, finger in enumerate(("index", "middle", "pinky", "ring")):
                c = p[f"{side}_curl"][("index", "middle", "ring", "pinky").index(finger)]
                for k in range(3):
                    rot[MANO_JOINTS.index(f"{finger}{k + 1}")] = [0.0, 0.0, c * (1.0 - 0.15 * k)]
            for k in (2, 3):
                rot[MANO_JOINTS.index(f"thumb{k}")] = p[f"{side}_thumb"] * THUMB_AXIS
            rot[MANO_JOINTS.index("thumb1")] = [0.0, 0.0, 0.1]
            hands[side] = HandData(rot if side == "r" else quat.mirror_axis_angle(rot))
        frames.append(CaptureFrame(body, hands["l"] if left_hand else None, hands["r"], np.zeros(3)))
    return frames


# Each sign: keyframes of (seconds, overrides on the previous keyframe).
UP = {"r_sh": [0.35, -0.95, 0.55], "r_el": 2.05}
SIGNS = {
    "00433": ("above", 2.4, [
        (0.0, {}), (0.25, {}),
        (0.8, {"l_sh": [0.2, 0.7, -0.6], "l_el": 1.6, "l_curl": [0.05] * 4,
               "r_sh": [0.3, -0.8, 0.5], "r_el": 1.5, "r_curl": [0.05] * 4}),
        (1.3, {"r_sh": [0.35, -0.9, 0.25], "r_el": 1.3, "r_wr": 0.3}),
        (1.7, {"r_sh": [0.3, -0.8, 0.5], "r_el": 1.5, "r_wr": 0.0}),
        (2.15, dict(_neutral())), (2.4, {})]),
    "52861": ("snow", 2.6, [
        (0.0, {}), (0.2, {}),
        (0.8, {"r_sh": [0.4, -0.8, 0.2], "l_sh": [0.4, 0.8, -0.2], "r_el": 1.7, "l_el": 1.7,
               "r_curl": [0.05] * 4, "l_curl": [0.05] * 4, "r_wr": 0.5, "l_wr": 0.5}),
        (1.2, {"r_sh": [0.3, -0.7, 0.5], "l_sh": [0.3, 0.7, -0.5], "r_curl": [0.5, 0.2, 0.5, 0.2],
               "l_curl": [0.2, 0.5, 0.2, 0.5]}),
        (1.6, {"r_sh": [0.25, -0.6, 0.8], "l_sh": [0.25, 0.6, -0.8], "r_curl": [0.2, 0.5, 0.2, 0.5],
               "l_curl": [0.5, 0.2, 0.5, 0.2]}),
        (2.3, dict(_neutral())), (2.6, {})]),
    "69318": ("father", 2.2, [
        (0.0, {}), (0.2, {}),
        (0.8, {**UP, "r_curl": [0.0] * 4, "r_thumb": 0.0, "r_wr": -0.3}),
        (1.05, {"r_sh": [0.35, -0.95, 0.45]}), (1.3, {"r_sh": [0.35, -0.95, 0.55]}),
        (1.95, dict(_neutral())), (2.2, {})]),
    "69402": ("mother", 2.2, [
        (0.0, {}), (0.2, {}),
        (0.8, {"r_sh": [0.3, -0.9, 0.8], "r_el": 2.2, "r_curl": [0.0] * 4, "r_thumb": 0.0, "r_wr": -0.3}),
        (1.05, {"r_sh": [0.3, -0.9, 0.7]}), (1.3, {"r_sh": [0.3, -0.9, 0.8]}),
        (1.95, dict(_neutral())), (2.2, {})]),
    "69546": ("yes", 2.0, [
        (0.0, {}), (0.2, {}),
        (0.65, {"r_sh": [0.3, -0.7, 0.6], "r_el": 1.6, "r_curl": [1.3] * 4, "r_thumb": 0.9}),
        (0.95, {"r_wr": 0.6}), (1.2, {"r_wr": -0.1}), (1.45, {"r_wr": 0.5}),
        (1.8, dict(_neutral())), (2.0, {})]),
}
TUNING = (2.0, [
    (0.0, {}), (0.2, {}),
    (0.7, {"r_sh": [0.0, -0.3, 0.2], "r_el": 1.2, "r_curl": [0.0] * 4}),
    (1.0, {"r_wr": 0.5, "r_el": 1.0}), (1.3, {"r_wr": -0.4, "r_el": 1.3}),
    (1.8, dict(_neutral())), (2.0, {})])


def write_motions():
    from signmimic.motion import SourceCapture, capture_to_dict, convert, save_clip

    model = signer_model()
    duration, spec = TUNING
    sample = SourceCapture(FPS, _capture_frames(_track(_keys(spec), duration), legs=True, left_hand=False))
    (DATA / "captures" / "sample_capture.json").write_text(json.dumps(capture_to_dict(sample)))
    save_clip(convert(sample, model, label="tuning"), DATA / "clips" / "tuning.json")
    print(f"wrote sample capture ({len(sample.frames)} frames) and tuning clip")
    for label, (lemma, duration, spec) in SIGNS.items():
        cap = SourceCapture(FPS, _capture_frames(_track(_keys(spec), duration)))
        clip = convert(cap, model, label=label)
        save_clip(clip, DATA / "clips" / f"{label}.json")
        print(f"wrote clip {label} ({lemma}): {clip.n_frames} frames")
    from signmimic.env import toy_clip

    save_clip(toy_clip(toy_arm_model()), DATA / "clips" / "toy_sine.json")
    print("wrote toy_sine clip")


def write_traces(steps=600, seed=0):
    """Error trace of the untrained stochastic policy (log-std -3) on the tuning clip."""
    from signmimic.cli import evaluate, write_csv
    from signmimic.env import EpisodeConfig, ImitationEnv
    from signmimic.motion import load_clip
    from signmimic.reward import CSV_COLUMNS, RewardConfig
    from signmimic.rl.ppo import init_params

    model = signer_model()
    env = ImitationEnv(model, load_clip(DATA / "clips" / "tuning.json"), RewardConfig.for_model(model, "final"),
                       EpisodeConfig(max_steps=steps, reference_state_init=False))
    params = init_params(env.observation_dim, env.action_dim, np.random.default_rng(seed))
    rows = evaluate(env, params, steps, seed=seed, stochastic=True)
    write_csv(DATA / "traces" / "tuning_trace.csv", CSV_COLUMNS, rows)
    print(f"wrote tuning trace ({steps} steps)")


if __name__ == "__main__":
    what = sys.argv[1:] or ["models"]
    if "models" in what:
        write_models()
    if "motions" in what:
        write_motions()
    if "traces" in what:
        write_traces()
