"""Pose-estimator captures to reference clips: retargeting, resampling and phase."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import quaternion as quat
from .errors import ContractError, IngestionError, ParseError
from .skeleton import Pose, SkeletonModel

log = logging.getLogger(__name__)

CLIP_SCHEMA_VERSION = 1

SMPL_JOINTS = (
    "pelvis", "left_hip", "right_hip", "spine1", "left_knee", "right_knee", "spine2", "left_ankle",
    "right_ankle", "spine3", "left_foot", "right_foot", "neck", "left_collar", "right_collar", "head",
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow", "left_wrist", "right_wrist",
    "left_hand", "right_hand",
)
MANO_JOINTS = tuple(f"{f}{k}" for f in ("index", "middle", "pinky", "ring", "thumb") for k in (1, 2, 3))
LOWER_BODY = frozenset({"left_hip", "right_hip", "left_knee", "right_knee", "left_ankle", "right_ankle",
                        "left_foot", "right_foot"})
HAND_KEYPOINTS = 21


def _swap_side(name: str) -> str:
    if name.startswith("right_"):
        return "left_" + name[6:]
    if name.startswith("left_"):
        return "right_" + name[5:]
    return name


@dataclass
class HandData:
    rotations: np.ndarray | None = None  # (15, 3) axis-angle, MANO order
    keypoints: np.ndarray | None = None  # (21, 3)


@dataclass
class CaptureFrame:
    body_rotations: np.ndarray  # (24, 3) axis-angle, SMPL order
    left_hand: HandData | None = None
    right_hand: HandData | None = None
    root_translation: np.ndarray = field(default_factory=lambda: np.zeros(3))


@dataclass
class SourceCapture:
    fps: float
    frames: list

    def __post_init__(self):
        if not self.fps > 0:
            raise ParseError(f"fps must be > 0, got {self.fps}")
        if not self.frames:
            raise ParseError("capture has no frames")
        sig = _arity(self.frames[0])
        for i, f in enumerate(self.frames):
            if _arity(f) != sig:
                raise ParseError(f"frames[{i}]: payload arity differs from frame 0")


def _arity(frame: CaptureFrame):
    def hand(h):
        if h is None:
            return None
        return (None if h.rotations is None else h.rotations.shape, None if h.keypoints is None else h.keypoints.shape)

    return frame.body_rotations.shape, hand(frame.left_hand), hand(frame.right_hand)


@dataclass(frozen=True)
class MotionClip:
    rate: float
    frames: tuple
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        if len(self.frames) < 2:
            raise ContractError("a clip needs at least 2 frames")
        if not self.rate > 0:
            raise ContractError(f"rate must be > 0, got {self.rate}")
        for i, p in enumerate(self.frames):
            for name, v in [("root_rotation", p.root_rotation)] + list(p.joint_rotations.items()):
                if np.ndim(v) and abs(np.linalg.norm(v) - 1.0) > 1e-9:
                    raise ContractError(f"frame {i}: {name} is not unit-norm")

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    @property
    def duration(self) -> float:
        """Loop period in seconds (frame count over rate)."""
        return self.n_frames / self.rate

    @property
    def phase(self) -> np.ndarray:
        return np.arange(self.n_frames) / self.n_frames

    def coordinates(self, model: SkeletonModel) -> np.ndarray:
        """``(n_frames, total_dofs)`` actuated coordinates."""
        return np.array([model.q_from_pose(p) for p in self.frames]).reshape(self.n_frames, model.total_dofs)


def phase_of(clip: MotionClip, t: float) -> float:
    if t < 0:
        raise ContractError(f"t must be >= 0, got {t}")
    return float((t / clip.duration) % 1.0)


# -- retargeting -------------------------------------------------------
def _frame_sources(frame: CaptureFrame, mirror_missing_hand: bool = True) -> dict:
    src = {f"body/{n}": frame.body_rotations[i] for i, n in enumerate(SMPL_JOINTS)}
    hands = {"left": frame.left_hand, "right": frame.right_hand}
    for side, other in (("left", "right"), ("right", "left")):
        h = hands[side]
        if h is not None and h.rotations is not None:
            for i, n in enumerate(MANO_JOINTS):
                src[f"{side}_hand/{n}"] = h.rotations[i]
        elif mirror_missing_hand:
            o = hands[other]
            if o is not None and o.rotations is not None:
                for i, n in enumerate(MANO_JOINTS):
                    src[f"{side}_hand/{n}"] = quat.mirror_axis_angle(o.rotations[i])
    return src


def _smooth(frames_aa: list, window: int = 5) -> list:
    keys = frames_aa[0].keys()
    half = window // 2
    out = []
    n = len(frames_aa)
    for i in range(n):
        lo, hi = max(0, i - half), min(n, i + half + 1)
        out.append({k: np.mean([frames_aa[j][k] for j in range(lo, hi)], axis=0) for k in keys})
    return out


def convert(capture: SourceCapture, model: SkeletonModel, label: str = "", smooth: bool = False,
            use_root_translation: bool = False) -> MotionClip:
    """Map a capture onto ``model`` through its retarget map."""
    sources = [_frame_sources(f) for f in capture.frames]
    absent = sorted(k for k in model.retarget_map if k not in sources[0])
    if absent:
        raise IngestionError(f"capture lacks mapped joints: {absent}")

    mapped = {k: v for k, v in model.retarget_map.items()
              if v in model.actuated and k.split("/", 1)[-1] not in LOWER_BODY}
    per_frame = [{k: np.asarray(s[k], dtype=float) for k in mapped} for s in sources]

    kept, rejected = [], []
    for i, aa in enumerate(per_frame):
        if all(np.all(np.isfinite(v)) for v in aa.values()):
            kept.append(i)
        else:
            rejected.append(i)
    if rejected:
        log.warning("rejected %d frame(s) with non-finite rotations: %s", len(rejected), rejected)
    if len(kept) < 2:
        raise IngestionError(f"fewer than 2 usable frames (rejected {rejected})")
    per_frame = [per_frame[i] for i in kept]
    if smooth:
        per_frame = _smooth(per_frame)

    frames = []
    for k, aa in zip(kept, per_frame):
        pose = model.rest_pose()
        for src, dst in mapped.items():
            j = model.joint_by_name[dst]
            q = quat.from_axis_angle(aa[src])
            if j.type == "spherical":
                pose.joint_rotations[dst] = q
            else:
                angle = float(quat.twist_angle(q, j.axis))
                pose.joint_rotations[dst] = float(np.clip(angle, j.limits[0, 0], j.limits[0, 1]))
        if use_root_translation:
            pose.root_position = np.asarray(capture.frames[k].root_translation, dtype=float).copy()
        frames.append(pose)
    return MotionClip(float(capture.fps), frames, label)


def mirror_capture(capture: SourceCapture) -> SourceCapture:
    """Reflect a capture across the sagittal plane, swapping sides."""
    order = [SMPL_JOINTS.index(_swap_side(n)) for n in SMPL_JOINTS]

    def hand(h):
        if h is None:
            return None
        return HandData(None if h.rotations is None else quat.mirror_axis_angle(h.rotations),
                        None if h.keypoints is None else quat.mirror_point(h.keypoints))

    frames = [CaptureFrame(quat.mirror_axis_angle(f.body_rotations[order]), hand(f.right_hand), hand(f.left_hand),
                           quat.mirror_point(f.root_translation)) for f in capture.frames]
    return SourceCapture(capture.fps, frames)


def mirror_clip(clip: MotionClip, model: SkeletonModel) -> MotionClip:
    frames = []
    for p in clip.frames:
        rots = {}
        for name, v in p.joint_rotations.items():
            target = _swap_side(name)
            if target not in model.joint_by_name:
                raise ContractError(f"joint {name!r} has no mirrored counterpart")
            rots[target] = quat.mirror(v) if np.ndim(v) else float(v)
        frames.append(Pose(quat.mirror_point(p.root_position), quat.mirror(p.root_rotation), rots))
    return MotionClip(clip.rate, frames, clip.label)


# -- resampling --------------------------------------------------------
def _interp_pose(a: Pose, b: Pose, u: float) -> Pose:
    if u == 0.0:
        return a.copy()
    rots = {}
    for n, va in a.joint_rotations.items():
        vb = b.joint_rotations[n]
        rots[n] = quat.slerp(va, vb, u) if np.ndim(va) else float((1 - u) * va + u * vb)
    return Pose((1 - u) * np.asarray(a.root_position) + u * np.asarray(b.root_position),
                quat.slerp(a.root_rotation, b.root_rotation, u), rots)


def resample(clip: MotionClip, target_rate: float) -> MotionClip:
    """Resample to ``target_rate``; first and last frames are kept exactly."""
    if not target_rate > 0:
        raise ContractError(f"target_rate must be > 0, got {target_rate}")
    n = clip.n_frames
    if target_rate == clip.rate:
        return MotionClip(clip.rate, [p.copy() for p in clip.frames], clip.label)
    n_out = max(2, int(round((n - 1) * target_rate / clip.rate)) + 1)
    frames = []
    for i in range(n_out - 1):
        s = i * (n - 1) / (n_out - 1)
        k = min(int(math.floor(s)), n - 2)
        frames.append(_interp_pose(clip.frames[k], clip.frames[k + 1], s - k))
    frames.append(clip.frames[-1].copy())
    return MotionClip(float(target_rate), frames, clip.label)


# -- file formats ------------------------------------------------------
def clip_to_dict(clip: MotionClip) -> dict:
    frames = []
    for p in clip.frames:
        joints = {n: (list(map(float, v)) if np.ndim(v) else float(v)) for n, v in p.joint_rotations.items()}
        frames.append({"root_position": list(map(float, p.root_position)),
                       "root_rotation": list(map(float, p.root_rotation)), "joints": joints})
    return {"schema_version": CLIP_SCHEMA_VERSION, "rate": clip.rate, "label": clip.label, "frames": frames}


def clip_from_dict(doc: dict) -> MotionClip:
    if doc.get("schema_version") != CLIP_SCHEMA_VERSION:
        raise ParseError(f"schema_version: expected {CLIP_SCHEMA_VERSION}, got {doc.get('schema_version')!r}")
    try:
        frames = [
            Pose(np.array(f["root_position"], dtype=float), np.array(f["root_rotation"], dtype=float),
                 {n: (np.array(v, dtype=float) if isinstance(v, list) else float(v)) for n, v in f["joints"].items()})
            for f in doc["frames"]
        ]
        return MotionClip(float(doc["rate"]), frames, str(doc.get("label", "")))
    except (KeyError, TypeError) as exc:
        raise ParseError(f"malformed clip document: {exc}") from exc


def save_clip(clip: MotionClip, path) -> None:
    Path(path).write_text(json.dumps(clip_to_dict(clip), separators=(",", ":")))


def load_clip(path) -> MotionClip:
    with open(path, encoding="utf-8") as fh:
        return clip_from_dict(json.load(fh))


def _parse_hand(doc, where):
    if doc is None:
        return None
    rot = doc.get("rotations")
    kp = doc.get("keypoints")
    try:
        rot = None if rot is None else np.array(rot, dtype=float).reshape(len(MANO_JOINTS), 3)
        kp = None if kp is None else np.array(kp, dtype=float).reshape(HAND_KEYPOINTS, 3)
    except ValueError as exc:
        raise ParseError(f"{where}: expected 15 rotations / 21 keypoints") from exc
    return HandData(rot, kp)


def _parse_frame(doc, where) -> CaptureFrame:
    try:
        body = np.array(doc["body_rotations"], dtype=float).reshape(len(SMPL_JOINTS), 3)
    except (KeyError, ValueError) as exc:
        raise ParseError(f"{where}.body_rotations: expected 24 axis-angle vectors") from exc
    return CaptureFrame(body, _parse_hand(doc.get("left_hand"), f"{where}.left_hand"),
                        _parse_hand(doc.get("right_hand"), f"{where}.right_hand"),
                        np.array(doc.get("root_translation", [0, 0, 0]), dtype=float))


def read_capture(path, fps: float | None = None) -> SourceCapture:
    """Read a concatenated capture document or a directory of per-frame documents."""
    path = Path(path)
    if path.is_dir():
        files = sorted(path.glob("*.json"))
        if not files:
            raise ParseError(f"{path}: no per-frame .json documents")
        docs = [json.loads(f.read_text()) for f in files]
        rate = fps or docs[0].get("fps", 30.0)
        return SourceCapture(float(rate), [_parse_frame(d, f.name) for d, f in zip(docs, files)])
    doc = json.loads(path.read_text())
    rate = fps or doc.get("fps")
    if rate is None:
        raise ParseError(f"{path}: fps missing")
    return SourceCapture(float(rate), [_parse_frame(d, f"frames[{i}]") for i, d in enumerate(doc.get("frames", []))])


def capture_to_dict(capture: SourceCapture) -> dict:
    def hand(h):
        if h is None:
            return None
        d = {}
        if h.rotations is not None:
            d["rotations"] = np.round(h.rotations, 8).tolist()
        if h.keypoints is not None:
            d["keypoints"] = np.round(h.keypoints, 8).tolist()
        return d

    return {"fps": capture.fps, "frames": [
        {"body_rotations": np.round(f.body_rotations, 8).tolist(), "left_hand": hand(f.left_hand),
         "right_hand": hand(f.right_hand), "root_translation": np.round(f.root_translation, 8).tolist()}
        for f in capture.frames]}
