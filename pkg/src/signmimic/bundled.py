"""Access to the files shipped under ``signmimic/data``.

Config files may refer to them as ``bundled:<name>``, e.g.
``bundled:signer.model`` or ``bundled:clips/00433.json``.
"""

from __future__ import annotations

from pathlib import Path

DATA_DIR = Path(__file__).resolve().parent / "data"
SIGN_LABELS = ("00433", "52861", "69318", "69402", "69546")
SIGN_LEMMAS = {"00433": "above", "52861": "snow", "69318": "father", "69402": "mother", "69546": "yes"}
TUNING_LABEL = "tuning"
PREFIX = "bundled:"


def resolve(path) -> Path:
    s = str(path)
    if s.startswith(PREFIX):
        return DATA_DIR / s[len(PREFIX):]
    return Path(s)


def model_path(name: str = "signer") -> Path:
    return DATA_DIR / f"{name}.model"


def clip_path(label: str) -> Path:
    return DATA_DIR / "clips" / f"{label}.json"


def signer_model():
    from .skeleton import load_skeleton_file

    return load_skeleton_file(model_path("signer"))


def toy_model():
    from .skeleton import load_skeleton_file

    return load_skeleton_file(model_path("toy_arm"))


def clip(label: str):
    from .motion import load_clip

    return load_clip(clip_path(label))


def sign_clips():
    return [clip(label) for label in SIGN_LABELS]
