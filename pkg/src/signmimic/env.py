"""Imitation MDP: observations, PD-target actions, rewards and episode bounds."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import quaternion as quat
from .dynamics import DynState, PDSystem, rollout_kinematic
from .errors import ContractError
from .motion import MotionClip, clip_to_dict, phase_of, resample
from .reward import CoordinateErrors, RewardBreakdown, RewardConfig, compose
from .skeleton import SkeletonModel, dump_skeleton

SIM_RATE = 240
CONTROL_RATE = 30
LINK_FEATURES = 13  # position 3, rotation 4, linear velocity 3, angular velocity 3


@dataclass(frozen=True)
class EpisodeConfig:
    max_steps: int | None = None  # None: clip length at the control rate
    early_stop_reward: float = 0.0
    reference_state_init: bool = True

    def __post_init__(self):
        if self.max_steps is not None and self.max_steps < 1:
            raise ContractError(f"max_steps must be >= 1, got {self.max_steps}")
        if not 0.0 <= self.early_stop_reward < 1.0:
            raise ContractError(f"early_stop_reward must lie in [0, 1), got {self.early_stop_reward}")

    def to_dict(self) -> dict:
        return asdict(self)


def observation_dim(model: SkeletonModel) -> int:
    return 1 + LINK_FEATURES * len(model.links)


def link_features(model: SkeletonModel, q, qdot, root_position=None, root_rotation=None):
    """Root-relative per-link features ``(L, 13)`` plus world link positions."""
    root_position = np.zeros(3) if root_position is None else np.asarray(root_position, dtype=float)
    root_rotation = quat.IDENTITY if root_rotation is None else np.asarray(root_rotation, dtype=float)
    pos, rot = model.fk_arrays(model.local_rotations_from_q(q), root_position, root_rotation)
    lin, ang = model.link_velocities(q, qdot, pos, rot)
    inv = quat.conj(root_rotation)
    feats = np.concatenate([
        quat.rotate(inv, pos - root_position),
        quat.canonical(quat.mul(inv, rot)),
        quat.rotate(inv, lin),
        quat.rotate(inv, ang),
    ], axis=-1)
    return feats, pos


def observe(model: SkeletonModel, state: DynState, clip: MotionClip, t: float,
            root_position=None, root_rotation=None) -> np.ndarray:
    """Flattened observation: phase followed by root-relative link features."""
    feats, _ = link_features(model, state.q, state.qdot, root_position, root_rotation)
    return np.concatenate([[phase_of(clip, t)], feats.ravel()])


class ImitationEnv:
    """Single-clip imitation environment with a fixed root.

    With ``residual=True`` actions are offsets added to the reference pose; the
    PD target is the reference interpolated at every simulation substep plus
    the offset. With ``residual=False`` the action is the absolute target.
    """

    def __init__(self, model: SkeletonModel, clip: MotionClip, reward_config: RewardConfig | None = None,
                 episode: EpisodeConfig | None = None, sim_rate: int = SIM_RATE, control_rate: int = CONTROL_RATE,
                 residual: bool = True, system: PDSystem | None = None, seed: int | None = None):
        if sim_rate % control_rate:
            raise ContractError("sim_rate must be a multiple of control_rate")
        self.model = model
        self.clip = clip if clip.rate == control_rate else resample(clip, control_rate)
        self.reward_config = reward_config or RewardConfig.for_model(model)
        self.episode = episode or EpisodeConfig()
        self.control_rate = control_rate
        self.substeps = sim_rate // control_rate
        self.dt = 1.0 / sim_rate
        self.residual = residual
        self.system = system or PDSystem.from_model(model)
        if self.system.ndof != model.total_dofs:
            raise ContractError("PD system and model disagree on DoF count")
        self.max_steps = self.episode.max_steps or self.clip.n_frames
        self.errors = CoordinateErrors(model, self.reward_config)

        states = rollout_kinematic(model, self.clip)
        self.ref_q = np.array([s.q for s in states]).reshape(-1, model.total_dofs)
        self.ref_qd = np.array([s.qdot for s in states]).reshape(-1, model.total_dofs)
        pos, _ = model.fk_arrays(model.local_rotations_from_q(self.ref_q), np.zeros(3), quat.IDENTITY)
        self.ref_ee = pos[:, self.errors.ee_links]
        self.n_frames = self.clip.n_frames

        self.observation_dim = observation_dim(model)
        self.action_dim = model.total_dofs
        self.rng = np.random.default_rng(seed)
        self.q = self.ref_q[0].copy()
        self.qdot = self.ref_qd[0].copy()
        self.frame = 0
        self.steps = 0
        self.truncated = False

    # -- reference -------------------------------------------------------
    def reference_at(self, s: float) -> np.ndarray:
        """Reference coordinates at fractional frame position ``s`` (looping)."""
        k = math.floor(s)
        u = s - k
        a = self.ref_q[k % self.n_frames]
        if u == 0.0:
            return a
        b = self.ref_q[(k + 1) % self.n_frames]
        return (1.0 - u) * a + u * b

    def reference_action(self) -> np.ndarray:
        """Action that commands the reference motion exactly."""
        if self.residual:
            return np.zeros(self.action_dim)
        return self.ref_q[(self.frame + 1) % self.n_frames].copy()

    # -- MDP -------------------------------------------------------------
    def _observation(self, feats) -> np.ndarray:
        phase = (self.frame % self.n_frames) / self.n_frames
        return np.concatenate([[phase], feats.ravel()])

    @property
    def time(self) -> float:
        return self.frame / self.control_rate

    def state(self) -> DynState:
        return DynState(self.q.copy(), self.qdot.copy(), self.time)

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        start = int(self.rng.integers(self.n_frames)) if self.episode.reference_state_init else 0
        self.frame = start
        self.steps = 0
        self.truncated = False
        self.q = self.ref_q[start].copy()
        self.qdot = self.ref_qd[start].copy()
        feats, _ = link_features(self.model, self.q, self.qdot)
        return self._observation(feats)

    def current_observation(self) -> np.ndarray:
        feats, _ = link_features(self.model, self.q, self.qdot)
        return self._observation(feats)

    def set_state(self, q, qdot, frame: int):
        """Place the character at an arbitrary state (used by ceiling runs)."""
        self.q = np.array(q, dtype=float)
        self.qdot = np.array(qdot, dtype=float)
        self.frame = int(frame)

    def step(self, action):
        action = np.asarray(action, dtype=float)
        if action.shape != (self.action_dim,):
            raise ContractError(f"action has shape {action.shape}, expected ({self.action_dim},)")
        if not np.isfinite(action).all():
            raise ContractError("action contains non-finite values")
        sys = self.system
        lo, hi = sys.lower, sys.upper
        zero = np.zeros(self.action_dim)
        q, qdot = self.q, self.qdot
        for j in range(1, self.substeps + 1):
            if self.residual:
                q_des = self.reference_at(self.frame + j / self.substeps) + action
            else:
                q_des = action
            q, qdot = sys.integrate(q, qdot, np.clip(q_des, lo, hi), zero, self.dt)
        self.q, self.qdot = q, qdot
        self.frame += 1
        self.steps += 1

        k = self.frame % self.n_frames
        feats, pos = link_features(self.model, q, qdot)
        errs = self.errors(q, qdot, self.ref_q[k], self.ref_qd[k], pos, self.ref_ee[k])
        breakdown = compose(self.reward_config, errs)
        reward = breakdown.total
        early = reward < self.episode.early_stop_reward
        self.truncated = self.steps >= self.max_steps and not early
        done = early or self.steps >= self.max_steps
        return self._observation(feats), reward, done, breakdown

    def observe(self, state: DynState, t: float) -> np.ndarray:
        return observe(self.model, state, self.clip, t)

    # -- checkpointing -----------------------------------------------------
    def fingerprint(self) -> dict:
        """Content hashes of the model and clip this environment imitates."""
        model = hashlib.sha256(dump_skeleton(self.model).encode()).hexdigest()
        clip = hashlib.sha256(json.dumps(clip_to_dict(self.clip), sort_keys=True).encode()).hexdigest()
        return {"model_sha256": model, "clip_sha256": clip}

    def get_state(self) -> dict:
        return {"q": self.q.tolist(), "qdot": self.qdot.tolist(), "frame": self.frame, "steps": self.steps,
                "truncated": self.truncated, "rng": self.rng.bit_generator.state}

    def load_state(self, st: dict):
        self.q = np.array(st["q"], dtype=float)
        self.qdot = np.array(st["qdot"], dtype=float)
        self.frame = int(st["frame"])
        self.steps = int(st["steps"])
        self.truncated = bool(st["truncated"])
        self.rng = np.random.default_rng()
        self.rng.bit_generator.state = st["rng"]


def toy_clip(model: SkeletonModel, rate: int = CONTROL_RATE, period: float = 2.0,
             amplitudes=(0.8, 0.6), phases=(0.0, 1.0)) -> MotionClip:
    """Sinusoidal reference for the 2-DoF toy arm; loops seamlessly."""
    n = int(round(rate * period))
    t = np.arange(n) / rate
    q = np.stack([a * np.sin(2 * np.pi * t / period + p) for a, p in zip(amplitudes, phases)], axis=1)
    return MotionClip(rate, [model.pose_from_q(row) for row in q], "toy_sine")


def make_toy_env(seed: int | None = None, residual: bool = False, episode: EpisodeConfig | None = None,
                 reward_config: RewardConfig | None = None) -> ImitationEnv:
    """2-DoF planar arm tracking a sinusoid; absolute targets by default."""
    from .bundled import toy_model

    model = toy_model()
    config = reward_config or RewardConfig.for_model(model, end_effectors=("tip",), k_pb=2.0, k_vb=0.1)
    return ImitationEnv(model, toy_clip(model), config, episode or EpisodeConfig(), residual=residual, seed=seed)
