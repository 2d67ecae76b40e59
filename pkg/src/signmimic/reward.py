"""Multiplicative imitation reward.

The total reward is the product of six exponential sub-rewards,
``r = r_pb * r_ph * r_vb * r_vh * r_e * r_r`` with ``r_x = exp(-k_x * eps_x)``,
where the pose and velocity terms are split between body and hand joints and
the end-effector term uses the two wrist positions only.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Iterable, Mapping

import numpy as np

from . import quaternion as quat
from .errors import ContractError, ParseError
from .skeleton import Pose, SkeletonModel, forward_kinematics

TERMS = ("pb", "ph", "vb", "vh", "e", "r")
CSV_COLUMNS = ("step",) + tuple(f"r_{t}" for t in TERMS) + ("total",) + tuple(f"eps_{t}" for t in TERMS)
DEFAULT_END_EFFECTORS = ("left_wrist", "right_wrist")

# Scaling-factor sets from the hand/body sweeps. k_e and k_r stay at the
# class defaults (40 and 10) unless overridden.
PRESETS: dict[str, dict[str, float]] = {
    "final": dict(k_pb=2.0, k_ph=0.2, k_vb=5e-3, k_vh=1e-4),
    "default": dict(k_pb=2.0, k_ph=2.0, k_vb=1e-1, k_vh=1e-1),
    "tune_run1": dict(k_pb=2.0, k_ph=0.5, k_vb=1e-1, k_vh=5e-4),
    "tune_run2": dict(k_pb=2.0, k_ph=0.2, k_vb=1e-1, k_vh=1e-4),
    "tune_run3": dict(k_pb=2.0, k_ph=0.2, k_vb=5e-3, k_vh=1e-4),
    "father_run1": dict(k_pb=2.0, k_ph=2.0, k_vb=5e-3, k_vh=1e-4),
    "father_run2": dict(k_pb=2.0, k_ph=0.2, k_vb=1e-1, k_vh=5e-4),
    "father_run3": dict(k_pb=1.0, k_ph=0.2, k_vb=1e-3, k_vh=1e-4),
    "father_run4": dict(k_pb=0.5, k_ph=0.2, k_vb=5e-3, k_vh=1e-4),
}


@dataclass(frozen=True)
class RewardConfig:
    k_pb: float = 2.0
    k_ph: float = 0.2
    k_vb: float = 5e-3
    k_vh: float = 1e-4
    k_e: float = 40.0
    k_r: float = 10.0
    body_joints: tuple = ()
    hand_joints: tuple = ()
    end_effectors: tuple = DEFAULT_END_EFFECTORS

    def __post_init__(self):
        for t in TERMS:
            k = getattr(self, f"k_{t}")
            if not (np.isfinite(k) and k >= 0):
                raise ContractError(f"k_{t} must be a finite nonnegative number, got {k}")
        object.__setattr__(self, "body_joints", tuple(self.body_joints))
        object.__setattr__(self, "hand_joints", tuple(self.hand_joints))
        object.__setattr__(self, "end_effectors", tuple(self.end_effectors))
        overlap = set(self.body_joints) & set(self.hand_joints)
        if overlap:
            raise ContractError(f"body and hand joint sets overlap: {sorted(overlap)}")

    @property
    def factors(self) -> dict[str, float]:
        return {t: getattr(self, f"k_{t}") for t in TERMS}

    def with_factors(self, **factors) -> "RewardConfig":
        return replace(self, **factors)

    @classmethod
    def for_model(cls, model: SkeletonModel, preset: str | None = None, end_effectors=None, **factors):
        """Split the model's actuated joints into body and hand sets.

        Hand joints are the end-effector joints and every actuated joint
        below them; the rest are body joints.
        """
        ee = tuple(end_effectors) if end_effectors is not None else tuple(
            n for n in DEFAULT_END_EFFECTORS if n in model.joint_by_name)
        hand = set()
        for name in ee:
            if name not in model.joint_by_name:
                raise ContractError(f"end effector {name!r} is not a joint of the model")
            root = model.joint_by_name[name].child_link
            for j in model.actuated:
                link = model.joint_by_name[j].child_link
                cur = link
                while cur is not None:
                    if cur == root:
                        hand.add(j)
                        break
                    cur = model.links[model.link_index[cur]].parent
        if preset is not None:
            factors = {**PRESETS[preset], **factors}
        return cls(body_joints=tuple(j for j in model.actuated if j not in hand),
                   hand_joints=tuple(j for j in model.actuated if j in hand), end_effectors=ee, **factors)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("body_joints", "hand_joints", "end_effectors"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "RewardConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ParseError(f"reward: unknown fields {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class RewardBreakdown:
    r_pb: float
    r_ph: float
    r_vb: float
    r_vh: float
    r_e: float
    r_r: float
    total: float
    eps_pb: float
    eps_ph: float
    eps_vb: float
    eps_vh: float
    eps_e: float
    eps_r: float

    def row(self, step: int) -> list:
        return [step] + [getattr(self, c) for c in CSV_COLUMNS[1:]]


def pose_error(sim: Pose, ref: Pose, joint_set: Iterable[str]) -> float:
    """Sum of squared per-joint rotation differences over ``joint_set``."""
    total = 0.0
    for name in joint_set:
        if name not in sim.joint_rotations or name not in ref.joint_rotations:
            raise ContractError(f"unknown joint {name!r}")
        a, b = sim.joint_rotations[name], ref.joint_rotations[name]
        if np.ndim(a) != np.ndim(b):
            raise ContractError(f"joint {name!r}: incompatible values")
        d = float(quat.geodesic(a, b)) if np.ndim(a) else float(a) - float(b)
        total += d * d
    return total


def velocity_error(model: SkeletonModel, sim_qdot, ref_qdot, joint_set: Iterable[str]) -> float:
    """Sum of squared velocity differences over the DoFs of ``joint_set``."""
    sim_qdot = np.asarray(sim_qdot, dtype=float)
    ref_qdot = np.asarray(ref_qdot, dtype=float)
    if sim_qdot.shape != (model.total_dofs,) or ref_qdot.shape != sim_qdot.shape:
        raise ContractError(f"velocity vectors must have shape ({model.total_dofs},)")
    total = 0.0
    for name in joint_set:
        if name not in model.dof_slices:
            raise ContractError(f"unknown or non-actuated joint {name!r}")
        d = sim_qdot[model.dof_slices[name]] - ref_qdot[model.dof_slices[name]]
        total += float(d @ d)
    return total


def end_effector_error(model: SkeletonModel, sim: Pose, ref: Pose,
                       end_effectors: Iterable[str] = DEFAULT_END_EFFECTORS) -> float:
    """Sum over end-effector joints of squared world-position distance (m^2)."""
    names = list(end_effectors)
    for n in names:
        if n not in model.joint_by_name:
            raise ContractError(f"model has no end-effector joint {n!r}")
    fs, fr = forward_kinematics(model, sim), forward_kinematics(model, ref)
    total = 0.0
    for n in names:
        link = model.joint_by_name[n].child_link
        d = fs[link][0] - fr[link][0]
        total += float(d @ d)
    return total


def root_error(sim: Pose, ref: Pose) -> float:
    d = np.asarray(sim.root_position, dtype=float) - np.asarray(ref.root_position, dtype=float)
    g = float(quat.geodesic(sim.root_rotation, ref.root_rotation))
    return float(d @ d) + g * g


def compose(config: RewardConfig, errors: Mapping[str, float]) -> RewardBreakdown:
    """Exponentiate each error and multiply the sub-rewards.

    ``errors`` maps each term name in ``("pb", "ph", "vb", "vh", "e", "r")``
    to a nonnegative error; missing terms count as zero.
    """
    eps = {t: float(errors.get(t, 0.0)) for t in TERMS}
    for t, e in eps.items():
        if not e >= 0:
            raise ContractError(f"error term {t!r} must be nonnegative, got {e}")
    sub = {}
    for t in TERMS:
        k = getattr(config, f"k_{t}")
        sub[t] = 1.0 if k == 0 else float(np.exp(-k * eps[t]))
    total = 1.0
    for t in TERMS:
        total *= sub[t]
    return RewardBreakdown(**{f"r_{t}": sub[t] for t in TERMS}, total=total, **{f"eps_{t}": eps[t] for t in TERMS})


def pose_errors(model: SkeletonModel, config: RewardConfig, sim: Pose, ref: Pose, sim_qdot, ref_qdot) -> dict:
    """All six error terms for a simulated/reference pose pair."""
    return {
        "pb": pose_error(sim, ref, config.body_joints),
        "ph": pose_error(sim, ref, config.hand_joints),
        "vb": velocity_error(model, sim_qdot, ref_qdot, config.body_joints),
        "vh": velocity_error(model, sim_qdot, ref_qdot, config.hand_joints),
        "e": end_effector_error(model, sim, ref, config.end_effectors),
        "r": root_error(sim, ref),
    }


class CoordinateErrors:
    """Error terms computed directly from flat coordinates (the env's hot path).

    Gives the same values as :func:`pose_errors` on the corresponding poses
    when the root is fixed.
    """

    def __init__(self, model: SkeletonModel, config: RewardConfig):
        self.model = model
        self.config = config
        self.groups = {}
        for key, joints in (("b", config.body_joints), ("h", config.hand_joints)):
            sph, rev, dofs = [], [], []
            for n in joints:
                if n not in model.dof_slices:
                    raise ContractError(f"reward joint {n!r} is not actuated")
                s = model.dof_slices[n]
                dofs.extend(range(s.start, s.stop))
                if model.joint_by_name[n].type == "spherical":
                    sph.append(list(range(s.start, s.stop)))
                else:
                    rev.append(s.start)
            self.groups[key] = (np.array(sph, dtype=int).reshape(-1, 3), np.array(rev, dtype=int),
                                np.array(dofs, dtype=int))
        self.ee_links = np.array([model.link_index[model.joint_by_name[n].child_link] for n in config.end_effectors],
                                 dtype=int)

    def pose_term(self, q_sim, q_ref, key) -> float:
        sph, rev, _ = self.groups[key]
        total = 0.0
        if len(sph):
            g = quat.geodesic(quat.from_axis_angle(q_sim[sph]), quat.from_axis_angle(q_ref[sph]))
            total += float(g @ g)
        if len(rev):
            d = q_sim[rev] - q_ref[rev]
            total += float(d @ d)
        return total

    def velocity_term(self, qd_sim, qd_ref, key) -> float:
        dofs = self.groups[key][2]
        d = qd_sim[dofs] - qd_ref[dofs]
        return float(d @ d)

    def __call__(self, q_sim, qd_sim, q_ref, qd_ref, link_pos_sim, ee_ref) -> dict:
        d = link_pos_sim[self.ee_links] - ee_ref
        return {
            "pb": self.pose_term(q_sim, q_ref, "b"),
            "ph": self.pose_term(q_sim, q_ref, "h"),
            "vb": self.velocity_term(qd_sim, qd_ref, "b"),
            "vh": self.velocity_term(qd_sim, qd_ref, "h"),
            "e": float(np.sum(d * d)),
            "r": 0.0,
        }


# -- estimated sub-rewards from recorded traces --------------------------
def read_error_trace(path) -> np.ndarray:
    """Load the six error columns of a per-step metrics CSV as ``(N, 6)``."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        cols = [f"eps_{t}" for t in TERMS]
        missing = [c for c in cols if c not in (reader.fieldnames or [])]
        if missing:
            raise ParseError(f"{path}: missing columns {missing}")
        rows = [[float(r[c]) for c in cols] for r in reader]
    if not rows:
        raise ParseError(f"{path}: empty trace")
    return np.array(rows)


def estimate_pose_velocity_reward(factors: Mapping[str, float], trace: np.ndarray) -> float:
    """Mean over a trace of the pose-velocity component ``r^p * r^v``."""
    trace = np.asarray(trace, dtype=float)
    k = np.array([factors["k_pb"], factors["k_ph"], factors["k_vb"], factors["k_vh"]])
    return float(np.mean(np.exp(-(trace[:, :4] @ k))))
