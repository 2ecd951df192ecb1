"""DDPG with adaptive parameter-space noise for phase selection."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .env import IRSEnv, State
from .neural import (
    AdamState,
    MLPParams,
    actor_widths,
    adam_step,
    backward,
    critic_widths,
    forward,
    init_mlp,
    perturb_params,
    policy_forward,
    polyak_update,
    HIDDEN,
)
from .system import TWO_PI

log = logging.getLogger(__name__)

SIGMA_MIN, SIGMA_MAX = 1e-6, 10.0


@dataclass(frozen=True)
class AgentConfig:
    gamma: float = 0.99
    tau: float = 0.005
    batch_size: int = 64
    t_train: int = 1000
    n_train: int = 50
    t_adapt: int = 50
    total_env_steps: int = 50_000
    lr_actor: float = 1e-3
    lr_critic: float = 1e-3
    buffer_capacity: int = 1_000_000
    # critic regresses on reward_scale * reward_db
    reward_scale: float = 0.01
    hidden: tuple[int, ...] = HIDDEN

    def __post_init__(self):
        for name in ("batch_size", "t_train", "n_train", "t_adapt", "total_env_steps", "buffer_capacity"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")


@dataclass(frozen=True)
class NoiseState:
    sigma_k: float = 0.1
    alpha_adapt: float = 1.01
    delta: float = 0.1
    sigma_a: float = 0.1

    def __post_init__(self):
        if self.sigma_k < 0:
            raise ValueError("sigma_k must be non-negative")
        if self.alpha_adapt <= 1.0:
            raise ValueError("alpha_adapt must exceed 1")


class ReplayBuffer:
    """FIFO ring buffer storing transitions as flat arrays.

    Storage grows geometrically up to ``capacity`` so a 10^6 capacity does
    not allocate 10^6 rows up front.
    """

    def __init__(self, state_dim: int, action_dim: int, capacity: int = 1_000_000):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.state_dim, self.action_dim = state_dim, action_dim
        self.size = 0
        self.cursor = 0
        self._alloc(min(capacity, 1024))

    def _alloc(self, rows: int):
        old = getattr(self, "_s", None)
        s = np.zeros((rows, self.state_dim))
        a = np.zeros((rows, self.action_dim))
        r = np.zeros(rows)
        s2 = np.zeros((rows, self.state_dim))
        d = np.zeros(rows, dtype=bool)
        if old is not None:
            n = self.size
            s[:n], a[:n], r[:n], s2[:n], d[:n] = self._s[:n], self._a[:n], self._r[:n], self._s2[:n], self._d[:n]
        self._s, self._a, self._r, self._s2, self._d = s, a, r, s2, d

    def __len__(self):
        return self.size

    def add(self, state, action, reward, next_state, truncated):
        i = self.cursor
        if i >= self._s.shape[0]:
            self._alloc(min(self.capacity, 2 * self._s.shape[0]))
        self._s[i], self._a[i], self._r[i], self._s2[i], self._d[i] = state, action, reward, next_state, truncated
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, rng: np.random.Generator, n: int):
        idx = rng.integers(0, self.size, n)
        return self._s[idx], self._a[idx], self._r[idx], self._s2[idx], self._d[idx]

    def rewards(self) -> np.ndarray:
        """Stored rewards, oldest first."""
        if self.size < self.capacity:
            return self._r[: self.size].copy()
        return np.roll(self._r, -self.cursor)


@dataclass
class Networks:
    actor: MLPParams
    critic: MLPParams
    target_actor: MLPParams
    target_critic: MLPParams
    actor_opt: AdamState
    critic_opt: AdamState

    @classmethod
    def create(cls, rng: np.random.Generator, m: int, cfg: AgentConfig = AgentConfig()) -> "Networks":
        actor = init_mlp(rng, actor_widths(m, cfg.hidden), "scaled-phase")
        critic = init_mlp(rng, critic_widths(m, cfg.hidden), "linear")
        return cls(
            actor,
            critic,
            actor.copy(),
            critic.copy(),
            AdamState.for_params(actor, lr=cfg.lr_actor),
            AdamState.for_params(critic, lr=cfg.lr_critic),
        )


def critic_input(states, actions) -> np.ndarray:
    """State features and phases rescaled to [-1, 1]."""
    return np.concatenate([states, np.asarray(actions) / np.pi - 1.0], axis=-1)


def select_action(perturbed_actor: MLPParams, state, noise: NoiseState, rng: np.random.Generator) -> np.ndarray:
    feats = state.features if isinstance(state, State) else np.asarray(state)
    a = policy_forward(perturbed_actor, feats)
    if noise.sigma_a > 0:
        a = a + noise.sigma_a * np.pi * rng.standard_normal(a.shape)
    return np.clip(a, 0.0, TWO_PI)


def critic_loss_and_grads(nets: Networks, batch, gamma: float, reward_scale: float = 1.0):
    s, a, r, s2, _ = batch
    a2, _ = forward(nets.target_actor, s2)
    q2, _ = forward(nets.target_critic, critic_input(s2, a2))
    # time-limit truncation is not terminal: always bootstrap
    y = reward_scale * r + gamma * q2[:, 0]
    q, cache = forward(nets.critic, critic_input(s, a))
    err = q[:, 0] - y
    loss = 0.5 * float(np.mean(err * err))
    grads = backward(nets.critic, cache, (err / len(err))[:, None])
    return loss, grads


def critic_update(batch, nets: Networks, gamma: float, reward_scale: float = 1.0) -> float:
    """One Adam step on the halved mean-squared Bellman error; returns the pre-step loss."""
    loss, grads = critic_loss_and_grads(nets, batch, gamma, reward_scale)
    adam_step(nets.critic, grads, nets.critic_opt)
    return loss


def actor_objective_and_grads(nets: Networks, states):
    m = nets.actor.widths[-1]
    a, a_cache = forward(nets.actor, states)
    q, q_cache = forward(nets.critic, critic_input(states, a))
    n = len(q)
    gq = backward(nets.critic, q_cache, np.full((n, 1), 1.0 / n))
    # chain through the action rescaling a / pi - 1
    da = gq.d_input[:, -m:] / np.pi
    grads = backward(nets.actor, a_cache, da)
    return float(q.mean()), grads


def actor_update(states, nets: Networks) -> float:
    """One ascent step on the batch-mean Q; returns the pre-step estimate."""
    j, grads = actor_objective_and_grads(nets, states)
    adam_step(nets.actor, grads, nets.actor_opt, ascend=True)
    return j


def policy_distance(actor_a: MLPParams, actor_b: MLPParams, states) -> float:
    """Mean over states of the per-state RMS phase difference (radians)."""
    mu_a, _ = forward(actor_a, states)
    mu_b, _ = forward(actor_b, states)
    return float(np.mean(np.sqrt(np.mean((mu_a - mu_b) ** 2, axis=1))))


def adapt_noise(online_actor: MLPParams, noise: NoiseState, probe_states, rng: np.random.Generator):
    """Grow or shrink the parameter-noise scale; returns ``(noise, d_k)``."""
    probe = perturb_params(online_actor, noise.sigma_k, rng)
    d_k = policy_distance(online_actor, probe, probe_states)
    if d_k <= noise.delta:
        sigma = noise.sigma_k * noise.alpha_adapt
    else:
        sigma = noise.sigma_k / noise.alpha_adapt
    sigma = float(np.clip(sigma, SIGMA_MIN, SIGMA_MAX))
    return replace(noise, sigma_k=sigma), d_k


@dataclass
class TrainingCurve:
    episode: list[int] = field(default_factory=list)
    env_steps: list[int] = field(default_factory=list)
    mean_reward_db: list[float] = field(default_factory=list)
    sigma_k: list[float] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.episode)

    def rows(self):
        return zip(self.episode, self.env_steps, self.mean_reward_db, self.sigma_k)

    def to_csv(self, path):
        with open(path, "w", newline="\n", encoding="utf-8") as fh:
            fh.write("episode,env_steps,mean_reward_db,sigma_k\n")
            for e, t, r, s in self.rows():
                fh.write(f"{e},{t},{r!r},{s!r}\n")


def train(env: IRSEnv, cfg: AgentConfig = AgentConfig(), noise: NoiseState = NoiseState(),
          rng: np.random.Generator | None = None, nets: Networks | None = None):
    """Run DDPG with parameter-space exploration for ``cfg.total_env_steps``.

    Returns ``(networks, curve, noise)``.
    """
    rng = rng if rng is not None else np.random.default_rng(env.cfg.seed)
    m = env.m
    nets = nets if nets is not None else Networks.create(rng, m, cfg)
    buf = ReplayBuffer(env.feature_dim, m, cfg.buffer_capacity)
    curve = TrainingCurve(meta={"skipped_phases": 0, "gradient_steps": 0})

    explorer = perturb_params(nets.actor, noise.sigma_k, rng)
    state = env.reset().features
    ep_rewards: list[float] = []
    episode = 0
    for t in range(1, cfg.total_env_steps + 1):
        action = select_action(explorer, state, noise, rng)
        nxt, r, truncated = env.step(action)
        nxt = nxt.features
        buf.add(state, action, r, nxt, truncated)
        ep_rewards.append(r)
        if truncated:
            episode += 1
            curve.episode.append(episode)
            curve.env_steps.append(t)
            curve.mean_reward_db.append(float(np.mean(ep_rewards)))
            curve.sigma_k.append(noise.sigma_k)
            ep_rewards = []
            state = env.reset().features
            explorer = perturb_params(nets.actor, noise.sigma_k, rng)
        else:
            state = nxt

        if t % cfg.t_train == 0:
            if len(buf) < cfg.batch_size:
                curve.meta["skipped_phases"] += 1
                continue
            for i in range(cfg.n_train):
                batch = buf.sample(rng, cfg.batch_size)
                critic_update(batch, nets, cfg.gamma, cfg.reward_scale)
                actor_update(batch[0], nets)
                polyak_update(nets.target_critic, nets.critic, cfg.tau)
                polyak_update(nets.target_actor, nets.actor, cfg.tau)
                if i % cfg.t_adapt == 0:
                    noise, d_k = adapt_noise(nets.actor, noise, batch[0], rng)
                curve.meta["gradient_steps"] += 1
            log.debug("t=%d sigma_k=%.4g", t, noise.sigma_k)
    return nets, curve, noise


def greedy_phases(actor: MLPParams, env: IRSEnv, state: State, n_steps: int = 10):
    """Roll the unperturbed actor from ``state``; return ``(phases, reward_db)`` of the best step."""
    feats = state.features
    best_theta, best_r = None, -np.inf
    for _ in range(n_steps):
        theta = np.clip(policy_forward(actor, feats), 0.0, TWO_PI)
        nxt, r, truncated = env.step(theta)
        if r > best_r:
            best_theta, best_r = nxt.action_prev, r
        feats = nxt.features
        if truncated:
            break
    return best_theta, best_r
