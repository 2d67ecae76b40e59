"""Articulated character model: schema parsing, pose types and forward kinematics.

A model is a tree of links. Each non-root link may carry one joint that sits at
the link's origin (``offset`` from the parent link frame) and rotates the link
relative to its parent. The joint attached to the root link, if any, is the
floating base; its coordinates live in :attr:`Pose.root_rotation` and
:attr:`Pose.root_position` rather than in ``joint_rotations``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import yaml

from . import quaternion as quat
from .errors import ContractError, ParseError, StructuralError

SCHEMA_VERSION = 1
JOINT_TYPES = {"spherical": 3, "revolute": 1, "fixed": 0}
SHAPE_FIELDS = {"capsule": ("radius", "length"), "box": ("size",), "sphere": ("radius",)}
UNIT_TOL = 1e-9


@dataclass(frozen=True)
class Link:
    name: str
    parent: str | None
    offset: np.ndarray
    mass: float
    shape: str = "sphere"
    dims: tuple = (0.05,)
    com: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def shape_inertia(self) -> float:
        """Mean principal moment of the link's primitive about its centroid."""
        m = self.mass
        if self.shape == "sphere":
            (r,) = self.dims
            return 0.4 * m * r * r
        if self.shape == "capsule":
            r, h = self.dims
            axial = 0.5 * m * r * r
            transverse = m * (3 * r * r + h * h) / 12.0
            return (axial + 2 * transverse) / 3.0
        a, b, c = self.dims[0]
        return m * (2 * (a * a + b * b + c * c)) / 36.0


@dataclass(frozen=True)
class Joint:
    name: str
    type: str
    child_link: str
    axis: np.ndarray | None = None
    limits: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    kp: float = 0.0
    kd: float = 0.0

    @property
    def ndof(self) -> int:
        return JOINT_TYPES[self.type]


@dataclass
class Pose:
    """Root pose plus one rotation per articulated joint.

    Spherical joints hold unit quaternions ``(w, x, y, z)``; revolute joints
    hold a scalar angle in radians.
    """

    root_position: np.ndarray
    root_rotation: np.ndarray
    joint_rotations: dict

    def copy(self) -> "Pose":
        return Pose(
            np.array(self.root_position, dtype=float),
            np.array(self.root_rotation, dtype=float),
            {k: (np.array(v, dtype=float) if np.ndim(v) else float(v)) for k, v in self.joint_rotations.items()},
        )


class SkeletonModel:
    """Validated, immutable kinematic tree with flat DoF bookkeeping."""

    def __init__(self, links, joints, retarget_map=None, fixed=(), name="model"):
        self.name = name
        self.links: tuple[Link, ...] = tuple(links)
        self.joints: tuple[Joint, ...] = tuple(joints)
        self.retarget_map: dict[str, str] = dict(retarget_map or {})
        self.fixed_set: frozenset[str] = frozenset(fixed)
        self._validate()
        self._index()

    # -- construction -------------------------------------------------
    def _validate(self):
        names = [l.name for l in self.links]
        if len(set(names)) != len(names):
            raise ParseError(f"links: duplicate link name in {names}")
        if not self.links:
            raise ParseError("links: at least one link is required")
        roots = [l.name for l in self.links if l.parent is None]
        if len(roots) != 1:
            raise StructuralError(f"expected exactly one root link, found {roots}")
        by_name = {l.name: l for l in self.links}
        for l in self.links:
            if l.parent is not None and l.parent not in by_name:
                raise ParseError(f"links[{l.name}].parent: unknown link {l.parent!r}")
            if not l.mass > 0:
                raise ParseError(f"links[{l.name}].mass: must be > 0, got {l.mass}")
            if not np.all(np.isfinite(l.offset)):
                raise ParseError(f"links[{l.name}].offset: non-finite")
        for l in self.links:
            seen = {l.name}
            cur = l.parent
            while cur is not None:
                if cur in seen:
                    raise StructuralError(f"cyclic parent graph through link {cur!r}")
                seen.add(cur)
                cur = by_name[cur].parent

        jnames = [j.name for j in self.joints]
        if len(set(jnames)) != len(jnames):
            dup = sorted({n for n in jnames if jnames.count(n) > 1})
            raise ParseError(f"joints: duplicate joint name {dup}")
        children = set()
        for j in self.joints:
            if j.child_link not in by_name:
                raise ParseError(f"joints[{j.name}].child_link: unknown link {j.child_link!r}")
            if j.child_link in children:
                raise StructuralError(f"link {j.child_link!r} is driven by more than one joint")
            children.add(j.child_link)
            if j.type == "revolute" and abs(np.linalg.norm(j.axis) - 1.0) > UNIT_TOL:
                raise ParseError(f"joints[{j.name}].axis: must have unit norm")
            if np.any(j.limits[:, 0] > j.limits[:, 1]):
                raise ParseError(f"joints[{j.name}].limits: low > high")
        for src, dst in self.retarget_map.items():
            if dst not in jnames:
                raise ParseError(f"retarget_map[{src}]: unknown joint {dst!r}")
        for f in self.fixed_set:
            if f not in jnames:
                raise ParseError(f"fixed: unknown joint {f!r}")
        root = roots[0]
        for j in self.joints:
            actuated = j.type != "fixed" and j.name not in self.fixed_set and j.child_link != root
            if actuated and not (j.kp > 0 and j.kd >= 0):
                raise ParseError(f"joints[{j.name}]: actuated joints need kp > 0 and kd >= 0")

    def _index(self):
        self.link_index = {l.name: i for i, l in enumerate(self.links)}
        self.joint_by_name = {j.name: j for j in self.joints}
        self.root_link = next(l.name for l in self.links if l.parent is None)
        self.joint_of_link = {j.child_link: j for j in self.joints}
        root_joint = self.joint_of_link.get(self.root_link)
        self.root_joint = root_joint.name if root_joint else None

        # joints with a per-pose rotation value
        self.articulated = tuple(
            j.name for j in self.joints if j.type != "fixed" and j.name != self.root_joint
        )
        self.actuated = tuple(n for n in self.articulated if n not in self.fixed_set)
        self.dof_slices: dict[str, slice] = {}
        self.dof_index: dict[tuple[str, int], int] = {}
        k = 0
        for n in self.actuated:
            d = self.joint_by_name[n].ndof
            self.dof_slices[n] = slice(k, k + d)
            for i in range(d):
                self.dof_index[(n, i)] = k + i
            k += d
        self.total_dofs = k
        self.dof_names = tuple(f"{n}[{i}]" if self.joint_by_name[n].ndof > 1 else n for n in self.actuated
                               for i in range(self.joint_by_name[n].ndof))
        self.lower = np.concatenate([self.joint_by_name[n].limits[:, 0] for n in self.actuated] or [np.zeros(0)])
        self.upper = np.concatenate([self.joint_by_name[n].limits[:, 1] for n in self.actuated] or [np.zeros(0)])
        self.kp = np.concatenate([np.full(self.joint_by_name[n].ndof, self.joint_by_name[n].kp) for n in self.actuated] or [np.zeros(0)])
        self.kd = np.concatenate([np.full(self.joint_by_name[n].ndof, self.joint_by_name[n].kd) for n in self.actuated] or [np.zeros(0)])

        # breadth-first levels for vectorized kinematics
        depth = {}
        for l in self.links:
            d, cur = 0, l
            while cur.parent is not None:
                d += 1
                cur = self.links[self.link_index[cur.parent]]
            depth[l.name] = d
        L = len(self.links)
        self.parent_index = np.array([self.link_index[l.parent] if l.parent else -1 for l in self.links])
        self.offsets = np.array([l.offset for l in self.links], dtype=float).reshape(L, 3)
        self.levels = []
        for d in range(1, max(depth.values()) + 1):
            idx = np.array([i for i, l in enumerate(self.links) if depth[l.name] == d], dtype=int)
            self.levels.append((idx, self.parent_index[idx]))

        sph_links, sph_dofs, rev_links, rev_dofs, rev_axes = [], [], [], [], []
        for n in self.actuated:
            j = self.joint_by_name[n]
            li = self.link_index[j.child_link]
            s = self.dof_slices[n]
            if j.type == "spherical":
                sph_links.append(li)
                sph_dofs.append(list(range(s.start, s.stop)))
            else:
                rev_links.append(li)
                rev_dofs.append(s.start)
                rev_axes.append(j.axis)
        self._sph_links = np.array(sph_links, dtype=int)
        self._sph_dofs = np.array(sph_dofs, dtype=int).reshape(-1, 3)
        self._rev_links = np.array(rev_links, dtype=int)
        self._rev_dofs = np.array(rev_dofs, dtype=int)
        self._rev_axes = np.array(rev_axes, dtype=float).reshape(-1, 3)

    # -- pose conversion ----------------------------------------------
    def rest_pose(self) -> Pose:
        rots = {}
        for n in self.articulated:
            j = self.joint_by_name[n]
            rots[n] = quat.IDENTITY.copy() if j.type == "spherical" else 0.0
        return Pose(np.zeros(3), quat.IDENTITY.copy(), rots)

    def check_pose(self, pose: Pose):
        keys = set(pose.joint_rotations)
        if keys != set(self.articulated):
            missing = sorted(set(self.articulated) - keys)
            extra = sorted(keys - set(self.articulated))
            raise ContractError(f"pose does not match model: missing {missing}, unexpected {extra}")
        if np.shape(pose.root_position) != (3,) or np.shape(pose.root_rotation) != (4,):
            raise ContractError("pose root must be a 3-vector and a quaternion")
        for n in self.articulated:
            v = pose.joint_rotations[n]
            if self.joint_by_name[n].type == "spherical":
                if np.shape(v) != (4,):
                    raise ContractError(f"joint {n!r}: expected quaternion")
            elif np.ndim(v) != 0:
                raise ContractError(f"joint {n!r}: expected scalar angle")

    def q_from_pose(self, pose: Pose) -> np.ndarray:
        """Flat actuated coordinates; spherical joints use rotation vectors."""
        q = np.zeros(self.total_dofs)
        for n in self.actuated:
            s = self.dof_slices[n]
            v = pose.joint_rotations[n]
            q[s] = quat.to_axis_angle(v) if self.joint_by_name[n].type == "spherical" else v
        return q

    def pose_from_q(self, q, root_position=None, root_rotation=None) -> Pose:
        q = np.asarray(q, dtype=float)
        if q.shape != (self.total_dofs,):
            raise ContractError(f"expected {self.total_dofs} coordinates, got shape {q.shape}")
        pose = self.rest_pose()
        if root_position is not None:
            pose.root_position = np.array(root_position, dtype=float)
        if root_rotation is not None:
            pose.root_rotation = np.array(root_rotation, dtype=float)
        for n in self.actuated:
            s = self.dof_slices[n]
            if self.joint_by_name[n].type == "spherical":
                pose.joint_rotations[n] = quat.from_axis_angle(q[s])
            else:
                pose.joint_rotations[n] = float(q[s][0])
        return pose

    # -- kinematics ---------------------------------------------------
    def local_rotations_from_pose(self, pose: Pose) -> np.ndarray:
        local = np.tile(quat.IDENTITY, (len(self.links), 1))
        for n in self.articulated:
            j = self.joint_by_name[n]
            v = pose.joint_rotations[n]
            li = self.link_index[j.child_link]
            if j.type == "spherical":
                local[li] = v
            else:
                local[li] = quat.from_axis_angle(j.axis * v)
        return local

    def local_rotations_from_q(self, q) -> np.ndarray:
        """Per-link joint rotations for actuated coordinates ``q`` (batched)."""
        q = np.asarray(q, dtype=float)
        lead = q.shape[:-1]
        local = np.broadcast_to(quat.IDENTITY, lead + (len(self.links), 4)).copy()
        if len(self._sph_links):
            local[..., self._sph_links, :] = quat.from_axis_angle(q[..., self._sph_dofs])
        if len(self._rev_links):
            local[..., self._rev_links, :] = quat.from_axis_angle(self._rev_axes * q[..., self._rev_dofs, None])
        return local

    def fk_arrays(self, local, root_position, root_rotation):
        """World link positions ``(..., L, 3)`` and rotations ``(..., L, 4)``."""
        local = np.asarray(local, dtype=float)
        lead = local.shape[:-2]
        L = len(self.links)
        pos = np.zeros(lead + (L, 3))
        rot = np.zeros(lead + (L, 4))
        r = self.link_index[self.root_link]
        pos[..., r, :] = root_position
        rot[..., r, :] = root_rotation
        for idx, par in self.levels:
            prot = rot[..., par, :]
            pos[..., idx, :] = pos[..., par, :] + quat.rotate(prot, self.offsets[idx])
            rot[..., idx, :] = quat.mul(prot, local[..., idx, :])
        return pos, rot

    def link_velocities(self, q, qdot, pos, rot):
        """World linear and angular link velocities for a fixed root."""
        q = np.asarray(q, dtype=float)
        qdot = np.asarray(qdot, dtype=float)
        lead = q.shape[:-1]
        L = len(self.links)
        wj = np.zeros(lead + (L, 3))
        if len(self._sph_links):
            wj[..., self._sph_links, :] = quat.left_jacobian_apply(q[..., self._sph_dofs], qdot[..., self._sph_dofs])
        if len(self._rev_links):
            wj[..., self._rev_links, :] = self._rev_axes * qdot[..., self._rev_dofs, None]
        lin = np.zeros(lead + (L, 3))
        ang = np.zeros(lead + (L, 3))
        for idx, par in self.levels:
            wp = ang[..., par, :]
            ang[..., idx, :] = wp + quat.rotate(rot[..., par, :], wj[..., idx, :])
            lin[..., idx, :] = lin[..., par, :] + quat.cross(wp, pos[..., idx, :] - pos[..., par, :])
        return lin, ang

    def joint_world_position(self, pos, joint_name):
        return pos[..., self.link_index[self.joint_by_name[joint_name].child_link], :]


def forward_kinematics(model: SkeletonModel, pose: Pose) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """World position and rotation of every link for ``pose``."""
    model.check_pose(pose)
    local = model.local_rotations_from_pose(pose)
    pos, rot = model.fk_arrays(local, pose.root_position, pose.root_rotation)
    return {l.name: (pos[i], rot[i]) for i, l in enumerate(model.links)}


def quat_geodesic(a, b) -> float:
    """Angle in radians of the relative rotation between unit quaternions."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    for name, q in (("a", a), ("b", b)):
        if q.shape != (4,) or abs(np.linalg.norm(q) - 1.0) > 1e-6:
            raise ContractError(f"{name} is not a unit quaternion: {q}")
    return float(quat.geodesic(a, b))


# -- schema ------------------------------------------------------------
def _vec(doc, key, where, n=3, default=None):
    v = doc.get(key, default)
    if v is None:
        raise ParseError(f"{where}.{key}: missing")
    try:
        arr = np.array(v, dtype=float).reshape(-1)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{where}.{key}: not numeric") from exc
    if arr.shape != (n,):
        raise ParseError(f"{where}.{key}: expected {n} numbers, got {len(arr)}")
    return arr


def _parse_link(doc, i) -> Link:
    where = f"links[{i}]"
    if not isinstance(doc, Mapping) or "name" not in doc:
        raise ParseError(f"{where}.name: missing")
    where = f"links[{doc['name']}]"
    try:
        mass = float(doc["mass"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{where}.mass: missing or not numeric") from exc
    shape_doc = doc.get("shape", {"type": "sphere", "radius": 0.05})
    stype = shape_doc.get("type")
    if stype not in SHAPE_FIELDS:
        raise ParseError(f"{where}.shape.type: expected one of {sorted(SHAPE_FIELDS)}, got {stype!r}")
    try:
        if stype == "box":
            dims = (tuple(float(x) for x in shape_doc["size"]),)
            if len(dims[0]) != 3:
                raise ValueError
        else:
            dims = tuple(float(shape_doc[k]) for k in SHAPE_FIELDS[stype])
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{where}.shape: bad dimensions for {stype}") from exc
    return Link(
        name=str(doc["name"]),
        parent=None if doc.get("parent") is None else str(doc["parent"]),
        offset=_vec(doc, "offset", where, default=[0.0, 0.0, 0.0]),
        mass=mass,
        shape=stype,
        dims=dims,
        com=_vec(doc, "com", where, default=[0.0, 0.0, 0.0]),
    )


def _parse_joint(doc, i) -> Joint:
    where = f"joints[{i}]"
    if not isinstance(doc, Mapping) or "name" not in doc:
        raise ParseError(f"{where}.name: missing")
    where = f"joints[{doc['name']}]"
    jtype = doc.get("type")
    if jtype not in JOINT_TYPES:
        raise ParseError(f"{where}.type: expected one of {sorted(JOINT_TYPES)}, got {jtype!r}")
    if "child_link" not in doc:
        raise ParseError(f"{where}.child_link: missing")
    n = JOINT_TYPES[jtype]
    axis = None
    if jtype == "revolute":
        axis = _vec(doc, "axis", where)
        norm = np.linalg.norm(axis)
        if abs(norm - 1.0) > 1e-6:
            raise ParseError(f"{where}.axis: must have unit norm, got {norm}")
        axis = axis / norm
    lim = doc.get("limits")
    if lim is None:
        limits = np.tile([-math.pi, math.pi], (n, 1))
    else:
        try:
            limits = np.array(lim, dtype=float).reshape(n, 2)
        except ValueError as exc:
            raise ParseError(f"{where}.limits: expected {n} [low, high] pairs") from exc
    try:
        kp = float(doc.get("kp", 0.0))
        kd = float(doc.get("kd", 0.0))
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{where}.kp/kd: not numeric") from exc
    return Joint(str(doc["name"]), jtype, str(doc["child_link"]), axis, limits, kp, kd)


def load_skeleton(model_text: str) -> SkeletonModel:
    """Parse and validate a skeleton document (YAML or JSON text)."""
    try:
        doc = yaml.safe_load(model_text)
    except yaml.YAMLError as exc:
        raise ParseError(f"not a structured document: {exc}") from exc
    if not isinstance(doc, Mapping):
        raise ParseError("document root must be a mapping")
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ParseError(f"schema_version: expected {SCHEMA_VERSION}, got {doc.get('schema_version')!r}")
    links_doc = doc.get("links")
    if not isinstance(links_doc, list):
        raise ParseError("links: expected a list")
    joints_doc = doc.get("joints", []) or []
    if not isinstance(joints_doc, list):
        raise ParseError("joints: expected a list")
    rmap = doc.get("retarget_map", {}) or {}
    if not isinstance(rmap, Mapping):
        raise ParseError("retarget_map: expected a mapping")
    fixed = doc.get("fixed", []) or []
    if not isinstance(fixed, list):
        raise ParseError("fixed: expected a list")
    links = [_parse_link(d, i) for i, d in enumerate(links_doc)]
    joints = [_parse_joint(d, i) for i, d in enumerate(joints_doc)]
    return SkeletonModel(links, joints, {str(k): str(v) for k, v in rmap.items()}, fixed, doc.get("name", "model"))


def load_skeleton_file(path) -> SkeletonModel:
    with open(path, encoding="utf-8") as fh:
        return load_skeleton(fh.read())


def dump_skeleton(model: SkeletonModel) -> str:
    def r(x):
        return [round(float(v), 6) for v in x]

    links = []
    for l in model.links:
        shape = {"type": l.shape}
        if l.shape == "box":
            shape["size"] = r(l.dims[0])
        else:
            shape.update({k: round(float(v), 6) for k, v in zip(SHAPE_FIELDS[l.shape], l.dims)})
        links.append({"name": l.name, "parent": l.parent, "offset": r(l.offset), "mass": round(l.mass, 6),
                      "com": r(l.com), "shape": shape})
    joints = []
    for j in model.joints:
        d = {"name": j.name, "type": j.type, "child_link": j.child_link}
        if j.axis is not None:
            d["axis"] = [float(v) for v in j.axis]
        if j.ndof:
            d["limits"] = [r(row) for row in j.limits]
        d["kp"] = j.kp
        d["kd"] = j.kd
        joints.append(d)
    doc = {"schema_version": SCHEMA_VERSION, "name": model.name, "links": links, "joints": joints,
           "retarget_map": dict(model.retarget_map), "fixed": sorted(model.fixed_set)}
    return yaml.safe_dump(doc, sort_keys=False, default_flow_style=None, width=120)
