"""Rollout collection over several environments, PPO updates, checkpoints and curves."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .. import __version__
from ..errors import ContractError
from .ppo import (NetworkParams, Optimizers, RolloutBuffer, TrainConfig, UpdateStats, init_params,
                  policy_forward, ppo_update, value_forward)

log = logging.getLogger(__name__)

CURVE_COLUMNS = ("step", "reward_mean", "reward_std", "episode_return_mean", "policy_loss", "value_loss",
                 "kl", "clip_fraction")
CHECKPOINT_FORMAT = 1


def format_row(row: dict) -> list[str]:
    out = []
    for c in CURVE_COLUMNS:
        v = row[c]
        out.append(str(int(v)) if c == "step" else repr(float(v)))
    return out


def curve_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_COLUMNS)
    for row in rows:
        w.writerow(format_row(row))
    return buf.getvalue()


def read_curve(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (int(v) if k == "step" else float(v)) for k, v in r.items()} for r in rows]


def env_fingerprint(env) -> dict:
    fp = getattr(env, "fingerprint", None)
    return fp() if callable(fp) else {}


@dataclass
class TrainResult:
    params: NetworkParams
    curve: list[dict]
    checkpoints: list[Path] = field(default_factory=list)
    fingerprint: dict = field(default_factory=dict)


class Trainer:
    """Owns the parameters, optimizers, environments and random streams of one run.

    Environments are stepped in a fixed order inside one process so that a run
    is fully determined by ``(seed, num_envs)``.
    """

    def __init__(self, env_factory: Callable, config: TrainConfig):
        self.config = config
        seq = np.random.SeedSequence(config.seed)
        children = seq.spawn(config.num_envs + 3)
        env_seeds = [int(c.generate_state(1)[0]) for c in children[:config.num_envs]]
        self.envs = [env_factory(s) for s in env_seeds]
        self.obs = np.array([env.reset(s) for env, s in zip(self.envs, env_seeds)])
        env0 = self.envs[0]
        self.params = init_params(env0.observation_dim, env0.action_dim, np.random.default_rng(children[-3]),
                                  config.hidden, config.activation, config.log_std)
        self.optim = Optimizers.create(self.params, config.learning_rate)
        self.sample_rng = np.random.default_rng(children[-2])
        self.update_rng = np.random.default_rng(children[-1])
        self.ep_return = np.zeros(config.num_envs)
        self.updates = 0
        self.curve: list[dict] = []
        self.fingerprint = env_fingerprint(env0)

    @property
    def steps(self) -> int:
        return self.updates * self.config.steps_per_update

    # -- rollouts ----------------------------------------------------------
    def collect(self) -> tuple[RolloutBuffer, list[float]]:
        cfg = self.config
        T, N = cfg.n_steps, cfg.num_envs
        obs_buf = np.zeros((T, N, self.obs.shape[1]))
        raw_obs = np.zeros((T, N, self.obs.shape[1]))
        act_buf = np.zeros((T, N, self.params.action_dim))
        rew = np.zeros((T, N))
        val = np.zeros((T, N))
        logp = np.zeros((T, N))
        dones = np.zeros((T, N), bool)
        trunc = np.zeros((T, N), bool)
        boot = np.zeros((T, N))
        finished = []
        for t in range(T):
            x = self.params.normalize(self.obs) if cfg.normalize_observations else self.obs
            out = policy_forward(self.params, x, self.sample_rng, normalized=True)
            val[t] = value_forward(self.params, x, normalized=True)
            obs_buf[t], raw_obs[t], act_buf[t], logp[t] = x, self.obs, out.action, out.log_prob
            term_obs = {}
            for i, env in enumerate(self.envs):
                o, r, d, _ = env.step(out.action[i])
                rew[t, i] = r
                self.ep_return[i] += r
                if d:
                    dones[t, i] = True
                    if env.truncated:
                        trunc[t, i] = True
                        term_obs[i] = o
                    finished.append(self.ep_return[i])
                    self.ep_return[i] = 0.0
                    o = env.reset()
                self.obs[i] = o
            if term_obs:
                keys = sorted(term_obs)
                x_term = np.array([term_obs[k] for k in keys])
                if cfg.normalize_observations:
                    x_term = self.params.normalize(x_term)
                boot[t, keys] = value_forward(self.params, x_term, normalized=True)
        x = self.params.normalize(self.obs) if cfg.normalize_observations else self.obs
        last = value_forward(self.params, x, normalized=True)
        buf = RolloutBuffer(obs_buf, act_buf, rew, val, logp, dones, trunc, boot, last)
        self._raw_obs = raw_obs
        return buf, finished

    def update_once(self) -> dict:
        buf, finished = self.collect()
        self.params, stats = ppo_update(self.params, buf, self.config, self.optim, self.update_rng)
        if self.config.normalize_observations:
            self.params.update_obs_stats(self._raw_obs)
        self.updates += 1
        row = self._row(buf, finished, stats)
        self.curve.append(row)
        return row

    def _row(self, buf: RolloutBuffer, finished, stats: UpdateStats) -> dict:
        return {
            "step": self.steps,
            "reward_mean": float(buf.rewards.mean()),
            "reward_std": float(buf.rewards.std()),
            "episode_return_mean": float(np.mean(finished)) if finished else float("nan"),
            "policy_loss": stats.policy_loss,
            "value_loss": stats.value_loss,
            "kl": stats.kl,
            "clip_fraction": stats.clip_fraction,
        }

    # -- checkpoints -------------------------------------------------------
    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        arrays = dict(self.params.arrays())
        opt_arrays, opt_meta = self.optim.state()
        arrays.update(opt_arrays)
        arrays["current_obs"] = self.obs
        arrays["ep_return"] = self.ep_return
        meta = {
            "format": CHECKPOINT_FORMAT,
            "version": __version__,
            "config": self.config.to_dict(),
            "fingerprint": self.fingerprint,
            "updates": self.updates,
            "steps": self.steps,
            "optimizer": opt_meta,
            "sample_rng": self.sample_rng.bit_generator.state,
            "update_rng": self.update_rng.bit_generator.state,
            "envs": [env.get_state() for env in self.envs],
            "curve": self.curve,
        }
        arrays["meta"] = np.array(json.dumps(meta, allow_nan=True))
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "wb") as fh:
            np.savez(fh, **arrays)
        tmp.replace(path)
        return path

    def load(self, path):
        data = load_checkpoint(path)
        meta = data["meta"]
        if meta["config"] != self.config.to_dict():
            raise ContractError(f"checkpoint {path} was written with a different train config")
        if self.fingerprint and meta["fingerprint"] and meta["fingerprint"] != self.fingerprint:
            raise ContractError(f"checkpoint {path} was written for a different model or clip")
        self.params = data["params"]
        self.optim = Optimizers.create(self.params, self.config.learning_rate)
        self.optim.load(data["arrays"], meta["optimizer"])
        self.sample_rng.bit_generator.state = meta["sample_rng"]
        self.update_rng.bit_generator.state = meta["update_rng"]
        for env, st in zip(self.envs, meta["envs"]):
            env.load_state(st)
        self.obs = np.array(data["arrays"]["current_obs"])
        self.ep_return = np.array(data["arrays"]["ep_return"])
        self.updates = int(meta["updates"])
        self.curve = [dict(r) for r in meta["curve"]]


def load_checkpoint(path) -> dict:
    """Read a checkpoint: ``{"params", "meta", "config", "arrays"}``."""
    with np.load(path, allow_pickle=False) as z:
        arrays = {k: z[k] for k in z.files}
    meta = json.loads(str(arrays.pop("meta")))
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise ContractError(f"unsupported checkpoint format {meta.get('format')!r} in {path}")
    config = TrainConfig.from_dict(meta["config"])
    params = NetworkParams.from_arrays(arrays, config.activation)
    return {"params": params, "meta": meta, "config": config, "arrays": arrays}


def checkpoint_name(step: int) -> str:
    return f"ckpt_{step:09d}.npz"


def latest_checkpoint(directory) -> Path | None:
    found = sorted(Path(directory).glob("ckpt_*.npz"))
    return found[-1] if found else None


def train(env_factory: Callable, config: TrainConfig, out_dir=None, resume: bool = True,
          stop_after: int | None = None, callback: Callable | None = None) -> TrainResult:
    """Train for ``config.n_updates`` updates.

    With ``out_dir`` set, checkpoints go to ``out_dir/checkpoints`` every
    ``config.checkpoint_every`` updates and at the end, and ``curve.csv`` is
    rewritten after each checkpoint. An existing checkpoint is resumed from
    when ``resume`` is true. ``stop_after`` ends the run early after that many
    total updates (used to simulate interruptions). ``callback(trainer, row)``
    runs after every update.
    """
    if config.n_updates < 1:
        raise ContractError(f"total_steps {config.total_steps} is smaller than one rollout "
                            f"({config.steps_per_update} steps)")
    trainer = Trainer(env_factory, config)
    ckpt_dir = Path(out_dir) / "checkpoints" if out_dir is not None else None
    saved: list[Path] = []
    if ckpt_dir is not None and resume:
        last = latest_checkpoint(ckpt_dir)
        if last is not None:
            trainer.load(last)
            log.info("resumed from %s at step %d", last, trainer.steps)
    end = config.n_updates if stop_after is None else min(stop_after, config.n_updates)
    while trainer.updates < end:
        row = trainer.update_once()
        log.debug("step %d reward %.4f", row["step"], row["reward_mean"])
        if callback is not None:
            callback(trainer, row)
        if ckpt_dir is not None and (trainer.updates % config.checkpoint_every == 0 or trainer.updates == end):
            saved.append(trainer.save(ckpt_dir / checkpoint_name(trainer.steps)))
            (Path(out_dir) / "curve.csv").write_text(curve_to_csv(trainer.curve))
    return TrainResult(trainer.params, trainer.curve, saved, trainer.fingerprint)
