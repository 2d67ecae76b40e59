"""Joint-space PD dynamics with stable-PD, semi-implicit Euler integration.

Each actuated DoF is an independent second-order system whose inertia is the
diagonal of the composite rigid-body inertia at the rest pose. Gravity and
contacts are not modelled; the root and legs are fixed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, InstabilityError
from .skeleton import SkeletonModel

MAX_DT = 0.05


@dataclass(frozen=True)
class DynState:
    q: np.ndarray
    qdot: np.ndarray
    time: float = 0.0


@dataclass(frozen=True)
class ControlTarget:
    q_des: np.ndarray
    qdot_des: np.ndarray | None = None


def pd_error(state: DynState, target: ControlTarget, kp, kd) -> np.ndarray:
    """Per-DoF ``kp * (q - q_des) + kd * (qdot - qdot_des)``."""
    q = np.asarray(state.q, dtype=float)
    qdot = np.asarray(state.qdot, dtype=float)
    q_des = np.asarray(target.q_des, dtype=float)
    qdot_des = np.zeros_like(q_des) if target.qdot_des is None else np.asarray(target.qdot_des, dtype=float)
    kp = np.broadcast_to(np.asarray(kp, dtype=float), q.shape)
    kd = np.broadcast_to(np.asarray(kd, dtype=float), q.shape)
    if not (q.shape == qdot.shape == q_des.shape == qdot_des.shape):
        raise ContractError(f"dimension mismatch: q{q.shape} qdot{qdot.shape} q_des{q_des.shape} qdot_des{qdot_des.shape}")
    return kp * (q - q_des) + kd * (qdot - qdot_des)


def effective_inertia(model: SkeletonModel) -> np.ndarray:
    """Diagonal composite rigid-body inertia per actuated DoF at the rest pose."""
    pos, rot = model.fk_arrays(model.local_rotations_from_q(np.zeros(model.total_dofs)), np.zeros(3),
                               np.array([1.0, 0.0, 0.0, 0.0]))
    com = pos + np.array([l.com for l in model.links])
    children = {i: [] for i in range(len(model.links))}
    for i, p in enumerate(model.parent_index):
        if p >= 0:
            children[p].append(i)

    def subtree(i):
        out, stack = [], [i]
        while stack:
            k = stack.pop()
            out.append(k)
            stack.extend(children[k])
        return out

    inertia = np.zeros(model.total_dofs)
    for name in model.actuated:
        j = model.joint_by_name[name]
        li = model.link_index[j.child_link]
        axes = [j.axis] if j.type == "revolute" else list(np.eye(3))
        sub = subtree(li)
        for k, axis in enumerate(axes):
            total = 0.0
            for s in sub:
                link = model.links[s]
                r = com[s] - pos[li]
                total += link.mass * (r @ r - (r @ axis) ** 2) + link.shape_inertia()
            inertia[model.dof_slices[name].start + k] = total
    return inertia


class PDSystem:
    """Per-DoF inertia, gains and limits for one model.

    Instances are immutable by convention; :meth:`step` is a pure function of
    its arguments.
    """

    def __init__(self, inertia, kp, kd, lower, upper, names=None):
        self.inertia = np.asarray(inertia, dtype=float)
        self.kp = np.asarray(kp, dtype=float)
        self.kd = np.asarray(kd, dtype=float)
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        n = self.inertia.shape[0]
        self.names = tuple(names) if names is not None else tuple(f"dof{i}" for i in range(n))
        if not all(a.shape == (n,) for a in (self.kp, self.kd, self.lower, self.upper)):
            raise ContractError("inertia, gains and limits must share one length")

    @classmethod
    def from_model(cls, model: SkeletonModel, kd_scale: dict | None = None) -> "PDSystem":
        kd = model.kd.copy()
        for name, factor in (kd_scale or {}).items():
            kd[model.dof_slices[name]] *= factor
        return cls(effective_inertia(model), model.kp, kd, model.lower, model.upper, model.dof_names)

    def with_gains(self, kp=None, kd=None) -> "PDSystem":
        return PDSystem(self.inertia, self.kp if kp is None else kp, self.kd if kd is None else kd,
                        self.lower, self.upper, self.names)

    @property
    def ndof(self) -> int:
        return self.inertia.shape[0]

    def integrate(self, q, qdot, q_des, qdot_des, dt):
        """Array-level stable-PD update; returns ``(q_next, qdot_next)``.

        The position term is evaluated at the predicted next position and the
        damping term is solved implicitly:
        ``(I + kd dt) qddot = -kp (q + dt qdot - q_des) - kd (qdot - qdot_des)``.
        """
        with np.errstate(invalid="ignore", over="ignore"):
            err = self.kp * (q + dt * qdot - q_des) + self.kd * (qdot - qdot_des)
            qddot = -err / (self.inertia + self.kd * dt)
            qdot_n = qdot + dt * qddot
            q_n = q + dt * qdot_n
        lo = q_n < self.lower
        hi = q_n > self.upper
        if lo.any() or hi.any():
            q_n = np.clip(q_n, self.lower, self.upper)
            qdot_n = np.where(lo | hi, 0.0, qdot_n)
        if not (np.isfinite(q_n).all() and np.isfinite(qdot_n).all()):
            bad = int(np.flatnonzero(~(np.isfinite(q_n) & np.isfinite(qdot_n)))[0])
            raise InstabilityError(f"non-finite state at DoF {self.names[bad]!r}")
        return q_n, qdot_n

    def step(self, state: DynState, target: ControlTarget, dt: float) -> DynState:
        if not (0.0 < dt <= MAX_DT):
            raise ContractError(f"dt must lie in (0, {MAX_DT}], got {dt}")
        q = np.asarray(state.q, dtype=float)
        qdot = np.asarray(state.qdot, dtype=float)
        q_des = np.asarray(target.q_des, dtype=float)
        qdot_des = np.zeros(self.ndof) if target.qdot_des is None else np.asarray(target.qdot_des, dtype=float)
        for name, arr in (("q", q), ("qdot", qdot), ("q_des", q_des), ("qdot_des", qdot_des)):
            if arr.shape != (self.ndof,):
                raise ContractError(f"{name} has shape {arr.shape}, expected ({self.ndof},)")
        q_n, qdot_n = self.integrate(q, qdot, q_des, qdot_des, dt)
        return DynState(q_n, qdot_n, state.time + dt)


def step(system: PDSystem, state: DynState, target: ControlTarget, dt: float) -> DynState:
    return system.step(state, target, dt)


def finite_difference_velocities(coords: np.ndarray, dt: float) -> np.ndarray:
    """Central differences inside, one-sided at both ends."""
    coords = np.asarray(coords, dtype=float)
    n = coords.shape[0]
    vel = np.zeros_like(coords)
    if n < 2:
        return vel
    vel[1:-1] = (coords[2:] - coords[:-2]) / (2.0 * dt)
    vel[0] = (coords[1] - coords[0]) / dt
    vel[-1] = (coords[-1] - coords[-2]) / dt
    return vel


def rollout_kinematic(model: SkeletonModel, clip) -> list[DynState]:
    """States that replay ``clip`` exactly, with finite-difference velocities."""
    coords = clip.coordinates(model)
    dt = 1.0 / clip.rate
    vel = finite_difference_velocities(coords, dt)
    return [DynState(coords[i].copy(), vel[i].copy(), i * dt) for i in range(len(coords))]
