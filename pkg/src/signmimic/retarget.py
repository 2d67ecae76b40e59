"""Ideal-retargeting ceiling: command the reference directly and score it.

``kinematic`` places the character exactly on the reference every step, so any
shortfall from 1 per step comes only from discretization. ``pd_tracked`` runs
the PD dynamics with the reference as the target and no learned correction.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .dynamics import PDSystem
from .env import EpisodeConfig, ImitationEnv, link_features
from .errors import ContractError
from .motion import MotionClip
from .reward import CSV_COLUMNS, TERMS, RewardBreakdown, RewardConfig, compose
from .skeleton import SkeletonModel

MODES = ("kinematic", "pd_tracked")
DEFAULT_STEPS = 2000


@dataclass
class CeilingReport:
    label: str
    mode: str
    series: np.ndarray
    breakdowns: list[RewardBreakdown] = field(default_factory=list, repr=False)

    @property
    def cumulative(self) -> float:
        return float(np.sum(self.series))

    @property
    def steps(self) -> int:
        return len(self.series)

    @property
    def term_means(self) -> dict[str, float]:
        return {f"r_{t}": float(np.mean([getattr(b, f"r_{t}") for b in self.breakdowns])) for t in TERMS}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for i, b in enumerate(self.breakdowns):
            w.writerow([i] + [repr(float(v)) for v in b.row(i)[1:]])
        return buf.getvalue()

    def summary(self) -> dict:
        return {"label": self.label, "mode": self.mode, "steps": self.steps, "cumulative": self.cumulative,
                "mean": self.cumulative / max(self.steps, 1), **self.term_means}


def run_env_ceiling(env: ImitationEnv, mode: str = "pd_tracked", steps: int = DEFAULT_STEPS,
                    label: str | None = None) -> CeilingReport:
    """Ceiling of an already-built environment, starting at clip frame 0."""
    if mode not in MODES:
        raise ContractError(f"mode must be one of {MODES}, got {mode!r}")
    if steps < 1:
        raise ContractError(f"steps must be >= 1, got {steps}")
    env.reset()
    env.set_state(env.ref_q[0], env.ref_qd[0], 0)
    series = np.zeros(steps)
    rows = []
    for i in range(steps):
        if mode == "kinematic":
            k = (i + 1) % env.n_frames
            env.set_state(env.ref_q[k], env.ref_qd[k], i + 1)
            _, pos = link_features(env.model, env.q, env.qdot)
            b = compose(env.reward_config,
                        env.errors(env.q, env.qdot, env.ref_q[k], env.ref_qd[k], pos, env.ref_ee[k]))
        else:
            _, _, _, b = env.step(env.reference_action())
        series[i] = b.total
        rows.append(b)
    return CeilingReport(label if label is not None else env.clip.label, mode, series, rows)


def ceiling(model: SkeletonModel, clip: MotionClip, config: RewardConfig | None = None, mode: str = "pd_tracked",
            steps: int = DEFAULT_STEPS, system: PDSystem | None = None) -> CeilingReport:
    """Per-step reward of ideal retargeting over ``steps`` control steps (the clip loops)."""
    env = ImitationEnv(model, clip, config, EpisodeConfig(max_steps=steps, reference_state_init=False),
                       residual=True, system=system)
    return run_env_ceiling(env, mode, steps, clip.label)
