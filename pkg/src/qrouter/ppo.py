"""Stateless PPO over a diagonal Gaussian policy with a scalar critic."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

log = logging.getLogger(__name__)

STD_FLOOR = 1e-4


class TrainingAborted(RuntimeError):
    def __init__(self, message: str, result: "TrainResult"):
        super().__init__(message)
        self.result = result


@dataclass(frozen=True, eq=False)
class GaussianPolicy:
    """Independent Gaussians per action coordinate plus a critic value.

    The standard deviation is stored through its logarithm and floored at
    ``STD_FLOOR``.
    """

    a_mean: np.ndarray
    log_std: np.ndarray
    value: float = 0.0

    def __post_init__(self):
        mean = np.array(self.a_mean, dtype=float).reshape(-1)
        log_std = np.maximum(np.array(self.log_std, dtype=float).reshape(-1), math.log(STD_FLOOR))
        if mean.shape != log_std.shape:
            raise ValueError(f"mean shape {mean.shape} and std shape {log_std.shape} differ")
        mean.setflags(write=False)
        log_std.setflags(write=False)
        object.__setattr__(self, "a_mean", mean)
        object.__setattr__(self, "log_std", log_std)
        object.__setattr__(self, "value", float(self.value))

    @classmethod
    def create(cls, a_mean, a_std, value: float = 0.0) -> "GaussianPolicy":
        a_std = np.broadcast_to(np.asarray(a_std, dtype=float), np.shape(a_mean))
        if np.any(a_std <= 0):
            raise ValueError("a_std must be positive")
        return cls(np.asarray(a_mean, dtype=float), np.log(a_std), value)

    @property
    def a_std(self) -> np.ndarray:
        return np.exp(self.log_std)

    @property
    def dimension(self) -> int:
        return self.a_mean.size

    def log_prob(self, actions) -> np.ndarray:
        a = np.atleast_2d(actions)
        z = (a - self.a_mean) / self.a_std
        return -0.5 * np.sum(z * z, axis=1) - np.sum(self.log_std) - 0.5 * self.dimension * math.log(2 * math.pi)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.a_mean + self.a_std * rng.standard_normal((n, self.dimension))


@dataclass(frozen=True)
class PpoConfig:
    """Optimizer settings.

    ``eta_std`` sets a separate Adam rate for the log standard deviation; by
    default the mean and the spread share ``eta_a``. Rates are multiplied by
    ``lr_decay`` after every epoch.
    """

    eta_a: float = 1e-4
    eta_c: float = 1e-3
    eta_std: float | None = None
    eps: float = 0.2
    K: int = 1
    Nb: int = 10
    epochs: int = 2000
    gamma: float = 0.0
    lr_decay: float = 0.9995
    mode: str = "ppo"
    checkpoint_every: int = 100

    def __post_init__(self):
        if not (0 < self.eps < 1 or math.isinf(self.eps)):
            raise ValueError("clip eps must lie in (0, 1), or be infinite to disable clipping")
        if self.Nb < 1 or self.K < 1 or self.epochs < 1:
            raise ValueError("Nb, K and epochs must be at least 1")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must lie in (0, 1]")
        if self.mode not in ("ppo", "a2c"):
            raise ValueError("mode must be 'ppo' or 'a2c'")


class RewardEnv(Protocol):
    dimension: int

    def evaluate(self, action: np.ndarray, seed) -> tuple[float, dict]:
        ...


@dataclass(frozen=True)
class Batch:
    actions: np.ndarray
    logp_current: np.ndarray
    logp_old: np.ndarray

    @property
    def ratios(self) -> np.ndarray:
        return np.exp(self.logp_current - self.logp_old)


def sample_batch(policy: GaussianPolicy, old: GaussianPolicy, n: int, seed) -> Batch:
    """Draw ``n`` actions from the old policy with log-densities under both policies."""
    rng = np.random.default_rng(seed)
    actions = old.sample(n, rng)
    return Batch(actions, policy.log_prob(actions), old.log_prob(actions))


def advantage(rewards, value: float) -> np.ndarray:
    """Stateless advantage ``r - V``."""
    return np.asarray(rewards, dtype=float) - value


def ppo_objective(policy: GaussianPolicy, old: GaussianPolicy, actions, adv, eps: float) -> float:
    r = np.exp(policy.log_prob(actions) - old.log_prob(actions))
    adv = np.asarray(adv, dtype=float)
    return float(np.mean(np.minimum(r * adv, np.clip(r, 1 - eps, 1 + eps) * adv)))


def a2c_objective(policy: GaussianPolicy, actions, adv) -> float:
    return float(np.mean(np.asarray(adv) * policy.log_prob(actions)))


def _score(policy: GaussianPolicy, actions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # d log pi / d mean and d log pi / d log std for every sample
    z = (actions - policy.a_mean) / policy.a_std
    return z / policy.a_std, z * z - 1.0


def ppo_gradient(policy: GaussianPolicy, old: GaussianPolicy, actions, adv, eps: float) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of J_PPO with respect to (a_mean, log a_std).

    The clipped branch contributes nothing; only samples whose unclipped
    term is the minimum carry ``r A d(log pi)``.
    """
    actions = np.atleast_2d(actions)
    adv = np.asarray(adv, dtype=float)
    r = np.exp(policy.log_prob(actions) - old.log_prob(actions))
    unclipped = r * adv
    clipped = np.clip(r, 1 - eps, 1 + eps) * adv
    active = unclipped <= clipped
    w = np.where(active, r * adv, 0.0) / len(adv)
    d_mean, d_logstd = _score(policy, actions)
    return w @ d_mean, w @ d_logstd


def a2c_gradient(policy: GaussianPolicy, actions, adv) -> tuple[np.ndarray, np.ndarray]:
    actions = np.atleast_2d(actions)
    w = np.asarray(adv, dtype=float) / len(adv)
    d_mean, d_logstd = _score(policy, actions)
    return w @ d_mean, w @ d_logstd


def critic_loss(rewards, value: float) -> float:
    a = advantage(rewards, value)
    return float(0.5 * np.mean(a * a))


def critic_gradient(rewards, value: float) -> float:
    return float(-np.mean(advantage(rewards, value)))


class Adam:
    """Adam on a flat parameter vector (minimization)."""

    def __init__(self, size: int, lr, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state(self) -> dict:
        return {"m": self.m.copy(), "v": self.v.copy(), "t": self.t, "lr": self.lr}


@dataclass
class PpoOptimizer:
    """Owns the policy, its old copy and the two Adam states."""

    policy: GaussianPolicy
    config: PpoConfig
    old: GaussianPolicy = None
    actor: Adam = None
    critic: Adam = None

    def __post_init__(self):
        if self.old is None:
            self.old = self.policy
        d = self.policy.dimension
        eta_std = self.config.eta_a if self.config.eta_std is None else self.config.eta_std
        rates = np.concatenate([np.full(d, self.config.eta_a), np.full(d, eta_std)])
        self.actor = self.actor or Adam(2 * d, rates)
        self.critic = self.critic or Adam(1, self.config.eta_c)

    def update(self, batch: Batch, rewards) -> tuple[GaussianPolicy, bool]:
        """One gradient step on -J and on L; returns (policy, applied)."""
        pol = self.policy
        adv = advantage(rewards, pol.value)
        if self.config.mode == "a2c":
            g_mean, g_logstd = a2c_gradient(pol, batch.actions, adv)
        else:
            g_mean, g_logstd = ppo_gradient(pol, self.old, batch.actions, adv, self.config.eps)
        g_value = critic_gradient(rewards, pol.value)
        grad = -np.concatenate([g_mean, g_logstd])
        if not (np.all(np.isfinite(grad)) and np.isfinite(g_value)):
            return pol, False
        theta = self.actor.step(np.concatenate([pol.a_mean, pol.log_std]), grad)
        value = self.critic.step(np.array([pol.value]), np.array([g_value]))[0]
        d = pol.dimension
        self.policy = GaussianPolicy(theta[:d], theta[d:], value)
        return self.policy, True

    def decay(self):
        self.actor.lr *= self.config.lr_decay
        self.critic.lr *= self.config.lr_decay


def ppo_update(policy: GaussianPolicy, old: GaussianPolicy, batch: Batch, rewards, config: PpoConfig,
               actor: Adam | None = None, critic: Adam | None = None) -> GaussianPolicy:
    """Single functional update step; pass Adam states to continue a run."""
    opt = PpoOptimizer(policy, config, old, actor, critic)
    return opt.update(batch, rewards)[0]


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    policy: GaussianPolicy
    rewards: np.ndarray  # (epochs, Nb)
    log: list[dict] = field(default_factory=list)
    skipped: list[int] = field(default_factory=list)
    aborted: bool = False

    @property
    def a_mean(self) -> np.ndarray:
        return self.policy.a_mean

    def reward_trace(self) -> np.ndarray:
        return self.rewards.mean(axis=1)


LOG_FIELDS = ("epoch", "reward_mean", "reward_min", "reward_max", "value", "lr_actor", "lr_critic")


def _evaluate_batch(env: RewardEnv, actions: np.ndarray, seed: np.random.SeedSequence) -> np.ndarray:
    # environments may score a whole batch at once, e.g. to share random circuits
    if hasattr(env, "evaluate_batch"):
        rewards = np.asarray(env.evaluate_batch(actions, seed), dtype=float)
    else:
        rewards = np.array([env.evaluate(a, s)[0] for a, s in zip(actions, seed.spawn(len(actions)))], dtype=float)
    if not np.all(np.isfinite(rewards)):
        raise FloatingPointError(f"non-finite rewards {rewards}")
    return rewards


def _evaluate_with_retry(env: RewardEnv, actions: np.ndarray, seed: np.random.SeedSequence) -> np.ndarray:
    try:
        return _evaluate_batch(env, actions, seed)
    except Exception as exc:
        log.warning("environment failed (%s); retrying the epoch once", exc)
        return _evaluate_batch(env, actions, np.random.SeedSequence(seed.entropy, spawn_key=seed.spawn_key))


def train(env: RewardEnv, config: PpoConfig, policy: GaussianPolicy, seed=0, checkpoint_dir: str | Path | None = None,
          log_path: str | Path | None = None, callback=None) -> TrainResult:
    """Clipped actor-critic loop: sample from the old policy, refresh it every K epochs, then step.

    Seeds for action sampling and for each environment call come from
    ``SeedSequence(seed)`` so the whole run is reproducible.
    """
    if env.dimension != policy.dimension:
        raise ValueError(f"environment expects {env.dimension} actions, policy has {policy.dimension}")
    opt = PpoOptimizer(policy, config)
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    rewards = np.full((config.epochs, config.Nb), np.nan)
    result = TrainResult(policy, rewards)
    writer = None
    fh = None
    if log_path is not None:
        fh = open(log_path, "w", newline="", encoding="utf-8")
        writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        writer.writeheader()
    try:
        for t in range(1, config.epochs + 1):
            epoch_seed = np.random.SeedSequence(root.entropy, spawn_key=tuple(root.spawn_key) + (t,))
            sample_seed, env_seed = epoch_seed.spawn(2)
            batch = sample_batch(opt.policy, opt.old, config.Nb, sample_seed)
            try:
                r = _evaluate_with_retry(env, batch.actions, env_seed)
            except Exception as exc:
                result.aborted = True
                result.rewards = rewards[: t - 1]
                raise TrainingAborted(f"environment failed twice at epoch {t}: {exc}", result) from exc
            rewards[t - 1] = r
            if t % config.K == 0:
                opt.old = opt.policy
            _, applied = opt.update(batch, r)
            if not applied:
                result.skipped.append(t)
                log.warning("non-finite gradient at epoch %d; update skipped", t)
            row = {"epoch": t, "reward_mean": float(r.mean()), "reward_min": float(r.min()),
                   "reward_max": float(r.max()), "value": opt.policy.value,
                   "lr_actor": float(np.ravel(opt.actor.lr)[0]), "lr_critic": float(opt.critic.lr)}
            result.log.append(row)
            if writer:
                writer.writerow(row)
            opt.decay()
            result.policy = opt.policy
            if checkpoint_dir is not None and t % config.checkpoint_every == 0:
                save_policy(opt.policy, Path(checkpoint_dir) / f"policy_{t:06d}.txt")
            if callback is not None:
                callback(t, opt.policy, r)
    finally:
        if fh:
            fh.close()
    return result


# ---------------------------------------------------------------------------
# checkpoints


def save_policy(policy: GaussianPolicy, path: str | Path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["# GaussianPolicy"]
    for name, arr in (("a_mean", policy.a_mean), ("a_std", policy.a_std), ("value", np.array([policy.value]))):
        lines.append(f"{name} {arr.size}")
        lines.append(" ".join(repr(float(x)) for x in arr))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_policy(path: str | Path) -> GaussianPolicy:
    lines = [l for l in Path(path).read_text(encoding="utf-8").splitlines() if l and not l.startswith("#")]
    arrays = {}
    for header, body in zip(lines[::2], lines[1::2]):
        name, size = header.split()
        arr = np.array([float(x) for x in body.split()])
        if arr.size != int(size):
            raise ValueError(f"{name}: header says {size} values, found {arr.size}")
        arrays[name] = arr
    return GaussianPolicy(arrays["a_mean"], np.log(arrays["a_std"]), float(arrays["value"][0]))
