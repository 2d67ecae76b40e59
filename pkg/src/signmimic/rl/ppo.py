"""Gaussian policy, value baseline, advantage estimation and clipped-surrogate updates."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ..errors import ContractError
from .network import MLP, Adam, check_finite

LOG_2PI = float(np.log(2.0 * np.pi))
ADVANTAGE_MODES = ("paper", "gae")


@dataclass
class TrainConfig:
    learning_rate: float = 3e-6
    n_steps: int = 512  # per environment
    batch_size: int = 128
    n_epochs: int = 5
    gamma: float = 0.95
    clip_ratio: float = 0.2
    gae_lambda: float = 0.95
    advantage_mode: str = "paper"
    total_steps: int = 500_000
    seed: int = 1
    num_envs: int = 8
    hidden: tuple = (256, 512, 256)
    activation: str = "relu"
    log_std: float = -3.0
    normalize_advantages: bool = True
    normalize_observations: bool = True
    checkpoint_every: int = 10  # updates

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if not 0.0 < self.gamma <= 1.0:
            raise ContractError(f"gamma must lie in (0, 1], got {self.gamma}")
        if not self.learning_rate > 0.0:
            raise ContractError(f"learning_rate must be positive, got {self.learning_rate}")
        for name in ("n_steps", "batch_size", "n_epochs", "num_envs", "total_steps", "checkpoint_every"):
            if int(getattr(self, name)) < 1:
                raise ContractError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.batch_size > self.n_steps * self.num_envs:
            raise ContractError(f"batch_size {self.batch_size} exceeds n_steps x num_envs "
                                f"= {self.n_steps * self.num_envs}")
        if self.advantage_mode not in ADVANTAGE_MODES:
            raise ContractError(f"advantage_mode must be one of {ADVANTAGE_MODES}, got {self.advantage_mode!r}")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ContractError(f"gae_lambda must lie in [0, 1], got {self.gae_lambda}")
        if not self.clip_ratio > 0.0:
            raise ContractError(f"clip_ratio must be positive, got {self.clip_ratio}")
        if any(h < 1 for h in self.hidden):
            raise ContractError(f"hidden sizes must be positive, got {self.hidden}")

    @property
    def steps_per_update(self) -> int:
        return self.n_steps * self.num_envs

    @property
    def n_updates(self) -> int:
        return self.total_steps // self.steps_per_update

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ContractError(f"unknown train config fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class NetworkParams:
    """Policy and value networks, the fixed log-std and observation statistics."""

    policy: MLP
    value: MLP
    log_std: np.ndarray
    obs_mean: np.ndarray
    obs_var: np.ndarray
    obs_count: float = 0.0

    @property
    def obs_dim(self) -> int:
        return self.policy.sizes[0]

    @property
    def action_dim(self) -> int:
        return self.policy.sizes[-1]

    def normalize(self, obs) -> np.ndarray:
        return (np.asarray(obs, dtype=float) - self.obs_mean) / np.sqrt(self.obs_var + 1e-8)

    def update_obs_stats(self, batch):
        """Merge a batch into the running mean and variance (parallel Welford)."""
        batch = np.asarray(batch, dtype=float).reshape(-1, self.obs_dim)
        n = batch.shape[0]
        if n == 0:
            return
        b_mean = batch.mean(axis=0)
        b_var = batch.var(axis=0)
        total = self.obs_count + n
        delta = b_mean - self.obs_mean
        m2 = self.obs_var * self.obs_count + b_var * n + delta**2 * self.obs_count * n / total
        self.obs_mean = self.obs_mean + delta * n / total
        self.obs_var = m2 / total
        self.obs_count = total

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.policy.copy(), self.value.copy(), self.log_std.copy(), self.obs_mean.copy(),
                             self.obs_var.copy(), self.obs_count)

    def arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for net in (self.policy, self.value):
            out.update(zip(net.layer_names(), net.parameters()))
        out.update(log_std=self.log_std, obs_mean=self.obs_mean, obs_var=self.obs_var,
                   obs_count=np.array(self.obs_count))
        return out

    @classmethod
    def from_arrays(cls, arrays, activation: str) -> "NetworkParams":
        def net(name):
            n = sum(1 for k in arrays if k.startswith(name + ".") and k.endswith(".weight"))
            return MLP([arrays[f"{name}.{i}.weight"] for i in range(n)],
                       [arrays[f"{name}.{i}.bias"] for i in range(n)], activation, name)

        return cls(net("policy"), net("value"), np.array(arrays["log_std"]), np.array(arrays["obs_mean"]),
                   np.array(arrays["obs_var"]), float(arrays["obs_count"]))


def init_params(obs_dim: int, action_dim: int, rng: np.random.Generator, hidden=(256, 512, 256),
                activation: str = "relu", log_std: float = -3.0) -> NetworkParams:
    """Orthogonal initialization; the policy output layer is scaled by 1e-2."""
    policy = MLP.create([obs_dim, *hidden, action_dim], rng, activation, final_scale=1e-2, name="policy")
    value = MLP.create([obs_dim, *hidden, 1], rng, activation, final_scale=1.0, name="value")
    return NetworkParams(policy, value, np.full(action_dim, float(log_std)), np.zeros(obs_dim), np.ones(obs_dim))


def gaussian_log_prob(x, mean, log_std) -> np.ndarray:
    """Log-density of a diagonal Gaussian, summed over the last axis."""
    z = (np.asarray(x, dtype=float) - mean) * np.exp(-log_std)
    return np.sum(-0.5 * z * z - log_std - 0.5 * LOG_2PI, axis=-1)


@dataclass
class PolicyOutput:
    mean: np.ndarray
    log_std: np.ndarray
    action: np.ndarray
    log_prob: np.ndarray


def policy_forward(params: NetworkParams, obs, rng: np.random.Generator | None = None,
                   deterministic: bool = False, normalized: bool = False) -> PolicyOutput:
    """Mean from the policy network and a sample from ``Normal(mean, exp(log_std))``.

    ``obs`` is normalized with the stored statistics unless ``normalized`` is set.
    """
    x = obs if normalized else params.normalize(obs)
    mean = params.policy(x)
    if deterministic:
        action = mean.copy()
    else:
        if rng is None:
            raise ContractError("stochastic policy_forward needs an rng")
        action = mean + np.exp(params.log_std) * rng.standard_normal(mean.shape)
    return PolicyOutput(mean, params.log_std, action, gaussian_log_prob(action, mean, params.log_std))


def value_forward(params: NetworkParams, obs, normalized: bool = False) -> np.ndarray:
    x = obs if normalized else params.normalize(obs)
    return params.value(x)[..., 0]


@dataclass
class RolloutBuffer:
    """Time-major rollout storage, arrays shaped ``(T, N, ...)`` for N environments.

    ``truncated`` marks episode ends caused by the step limit; their
    ``bootstrap`` entry holds V of the final observation. ``last_value`` is V
    of the observation following the final stored step.
    """

    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    log_probs: np.ndarray
    dones: np.ndarray
    truncated: np.ndarray = None
    bootstrap: np.ndarray = None
    last_value: np.ndarray = None

    def __post_init__(self):
        self.rewards = np.asarray(self.rewards, dtype=float)
        if self.rewards.ndim == 1:
            self.rewards = self.rewards[:, None]
        shape = self.rewards.shape
        self.values = np.asarray(self.values, dtype=float).reshape(shape)
        self.log_probs = np.asarray(self.log_probs, dtype=float).reshape(shape)
        self.dones = np.asarray(self.dones, dtype=bool).reshape(shape)
        self.truncated = (np.zeros(shape, bool) if self.truncated is None
                          else np.asarray(self.truncated, dtype=bool).reshape(shape))
        self.bootstrap = (np.zeros(shape) if self.bootstrap is None
                          else np.asarray(self.bootstrap, dtype=float).reshape(shape))
        self.last_value = (np.zeros(shape[1]) if self.last_value is None
                           else np.asarray(self.last_value, dtype=float).reshape(shape[1]))
        self.obs = np.asarray(self.obs, dtype=float).reshape(shape + (-1,))
        self.actions = np.asarray(self.actions, dtype=float).reshape(shape + (-1,))
        if np.any(self.truncated & ~self.dones):
            raise ContractError("truncated steps must also be marked done")

    def __len__(self) -> int:
        return self.rewards.size


def returns_and_advantages(buffer: RolloutBuffer, gamma: float, mode: str = "paper", lam: float = 0.95):
    """Returns ``R_t`` and raw advantages ``A_t`` shaped like ``buffer.rewards``.

    ``paper``: ``R_t`` is the discounted reward-to-go within the episode,
    bootstrapped by the value at truncation and at the end of the buffer, and
    ``A_t = R_t - V(s_t)``. ``gae``: lambda-weighted TD advantages, ``R_t = A_t + V(s_t)``.
    """
    if mode not in ADVANTAGE_MODES:
        raise ContractError(f"mode must be one of {ADVANTAGE_MODES}, got {mode!r}")
    r, v, d = buffer.rewards, buffer.values, buffer.dones
    T = r.shape[0]
    # value of the successor state, zero at true terminations
    next_v = np.where(buffer.truncated, buffer.bootstrap, 0.0)
    nonterminal = ~d
    R = np.zeros_like(r)
    A = np.zeros_like(r)
    if mode == "paper":
        carry = buffer.last_value.copy()
        for t in range(T - 1, -1, -1):
            carry = r[t] + gamma * np.where(nonterminal[t], carry, next_v[t])
            R[t] = carry
        A = R - v
    else:
        succ = np.where(nonterminal, np.vstack([v[1:], buffer.last_value[None]]), next_v)
        delta = r + gamma * succ - v
        carry = np.zeros(r.shape[1])
        for t in range(T - 1, -1, -1):
            carry = delta[t] + gamma * lam * np.where(nonterminal[t], carry, 0.0)
            A[t] = carry
        R = A + v
    return R, A


def normalize_advantages(adv) -> np.ndarray:
    adv = np.asarray(adv, dtype=float)
    std = adv.std()
    return (adv - adv.mean()) / (std + 1e-8)


def policy_loss_and_grad(params: NetworkParams, obs, actions, old_log_probs, advantages, clip_ratio: float):
    """Clipped surrogate loss (negated, to minimize) and its parameter gradients.

    ``obs`` must already be normalized. Returns ``(loss, grads, stats)``.
    """
    mean, cache = params.policy.forward(obs)
    inv_var = np.exp(-2.0 * params.log_std)
    logp = gaussian_log_prob(actions, mean, params.log_std)
    ratio = np.exp(logp - old_log_probs)
    clipped = np.clip(ratio, 1.0 - clip_ratio, 1.0 + clip_ratio)
    unclipped_obj = ratio * advantages
    clipped_obj = clipped * advantages
    n = len(advantages)
    loss = -np.mean(np.minimum(unclipped_obj, clipped_obj))
    # the gradient flows only where the unclipped term is the active minimum
    active = unclipped_obj <= clipped_obj
    dlogp = np.where(active, -advantages * ratio / n, 0.0)
    dmean = dlogp[:, None] * (actions - mean) * inv_var
    grads, _ = params.policy.backward(cache, dmean)
    stats = {"kl": float(np.mean(old_log_probs - logp)),
             "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > clip_ratio))}
    return float(loss), grads, stats


def value_loss_and_grad(params: NetworkParams, obs, returns):
    """Mean squared error of the value network; ``obs`` already normalized."""
    out, cache = params.value.forward(obs)
    err = out[:, 0] - returns
    loss = np.mean(err * err)
    grads, _ = params.value.backward(cache, (2.0 * err / len(err))[:, None])
    return float(loss), grads


@dataclass
class Optimizers:
    policy: Adam
    value: Adam

    @classmethod
    def create(cls, params: NetworkParams, lr: float) -> "Optimizers":
        return cls(Adam(params.policy.parameters(), lr), Adam(params.value.parameters(), lr))

    def state(self) -> tuple[dict, dict]:
        arrays, meta = {}, {}
        for key, opt in (("policy", self.policy), ("value", self.value)):
            meta[key] = {"t": opt.t, "lr": opt.lr}
            for i, (m, v) in enumerate(zip(opt.m, opt.v)):
                arrays[f"adam.{key}.m{i}"] = m
                arrays[f"adam.{key}.v{i}"] = v
        return arrays, meta

    def load(self, arrays, meta):
        for key, opt in (("policy", self.policy), ("value", self.value)):
            opt.t = int(meta[key]["t"])
            opt.lr = float(meta[key]["lr"])
            opt.m = [np.array(arrays[f"adam.{key}.m{i}"]) for i in range(len(opt.m))]
            opt.v = [np.array(arrays[f"adam.{key}.v{i}"]) for i in range(len(opt.v))]


@dataclass
class UpdateStats:
    policy_loss: float = 0.0
    value_loss: float = 0.0
    kl: float = 0.0
    clip_fraction: float = 0.0
    extra: dict = field(default_factory=dict)


def ppo_update(params: NetworkParams, buffer: RolloutBuffer, config: TrainConfig,
               optimizers: Optimizers | None = None, rng: np.random.Generator | None = None):
    """Run ``n_epochs`` of minibatch updates; returns ``(new_params, stats)``.

    Observations in ``buffer`` are taken as already normalized. The optimizer
    state in ``optimizers`` is advanced in place and bound to the new params.
    """
    new = params.copy()
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    if optimizers is None:
        optimizers = Optimizers.create(new, config.learning_rate)
    R, A = returns_and_advantages(buffer, config.gamma, config.advantage_mode, config.gae_lambda)
    obs = buffer.obs.reshape(len(buffer), -1)
    actions = buffer.actions.reshape(len(buffer), -1)
    old_logp = buffer.log_probs.ravel()
    R = R.ravel()
    A = A.ravel()
    if config.normalize_advantages:
        A = normalize_advantages(A)

    n = len(buffer)
    pl, vl, kl, cf = [], [], [], []
    pol_params, val_params = new.policy.parameters(), new.value.parameters()
    pol_names, val_names = new.policy.layer_names(), new.value.layer_names()
    for _ in range(config.n_epochs):
        order = rng.permutation(n)
        for start in range(0, n - config.batch_size + 1, config.batch_size):
            idx = order[start:start + config.batch_size]
            # overflow surfaces as a non-finite gradient, reported below with its layer
            with np.errstate(over="ignore", invalid="ignore"):
                loss_p, g_p, st = policy_loss_and_grad(new, obs[idx], actions[idx], old_logp[idx], A[idx],
                                                       config.clip_ratio)
                loss_v, g_v = value_loss_and_grad(new, obs[idx], R[idx])
            check_finite(g_p, pol_names)
            check_finite(g_v, val_names)
            optimizers.policy.step(pol_params, g_p)
            optimizers.value.step(val_params, g_v)
            pl.append(loss_p)
            vl.append(loss_v)
            kl.append(st["kl"])
            cf.append(st["clip_fraction"])
    return new, UpdateStats(float(np.mean(pl)), float(np.mean(vl)), float(np.mean(kl)), float(np.mean(cf)))
