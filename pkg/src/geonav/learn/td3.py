"""Twin delayed deterministic policy gradient trainer over NavEnv."""

import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from ..core.exceptions import ConfigError
from ..core.models import Action, NavTask, TerminationReason
from ..core.seeding import substream
from ..sim.nav_env import ACT_DIM, OBS_DIM, ActionBounds, NavEnv
from .artifacts import ActorBundle, save_actor
from .neural import (
    AdamState, Mlp, adam_step, assert_finite, backward_from_cache, forward, forward_with_cache,
    load_checkpoint, polyak_update,
)

logger = logging.getLogger(__name__)

TRAINING_LOG_COLUMNS = ["episode", "steps", "return", "first_success_flag", "wall_ms"]
REWARD_CURVE_WINDOW = 100


@dataclass(frozen=True)
class Td3Config:
    gamma: float = 0.995
    tau: float = 0.005
    batch: int = 256
    lr: float = 3e-4
    exploration_noise_std: float = 0.1
    policy_delay: int = 2
    warmup_steps: int = 1000
    total_env_steps: int = 50_000
    max_episodes: Optional[int] = None
    hidden: Tuple[int, ...] = (64, 64)
    buffer_capacity: int = 50_000
    target_smoothing_std: float = 0.0
    target_noise_clip: float = 0.5
    checkpoint_interval: int = 0
    log_interval: int = 10
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError("td3.gamma", f"must lie in (0, 1), got {self.gamma}")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError("td3.tau", f"must lie in (0, 1], got {self.tau}")
        if self.policy_delay < 1:
            raise ConfigError("td3.policy_delay", f"must be >= 1, got {self.policy_delay}")
        for name in ("batch", "buffer_capacity", "total_env_steps"):
            if getattr(self, name) < 1:
                raise ConfigError(f"td3.{name}", "must be positive")
        if self.lr <= 0 or self.exploration_noise_std < 0 or self.target_smoothing_std < 0:
            raise ConfigError("td3", "lr must be positive and noise scales non-negative")
        if self.warmup_steps < 0 or self.checkpoint_interval < 0:
            raise ConfigError("td3", "warmup_steps and checkpoint_interval must be non-negative")
        if not self.hidden or any(h < 1 for h in self.hidden):
            raise ConfigError("td3.hidden", f"invalid hidden sizes {self.hidden}")


@dataclass
class Transition:
    obs: np.ndarray
    action: np.ndarray
    reward: float
    next_obs: np.ndarray
    done: bool


@dataclass
class Batch:
    obs: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    next_obs: np.ndarray
    done: np.ndarray

    def __len__(self) -> int:
        return self.obs.shape[0]


class ReplayBuffer:
    """Fixed-capacity ring of transitions; the oldest entry is overwritten first."""

    def __init__(self, capacity: int = 50_000, obs_dim: int = OBS_DIM, act_dim: int = ACT_DIM):
        if capacity < 1:
            raise ValueError(f"capacity must be positive: {capacity}")
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.action = np.zeros((capacity, act_dim))
        self.reward = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, obs_dim))
        self.done = np.zeros(capacity)
        self.size = 0
        self.cursor = 0

    def __len__(self) -> int:
        return self.size

    def add(self, t: Transition) -> None:
        i = self.cursor
        self.obs[i] = t.obs
        self.action[i] = t.action
        self.reward[i] = t.reward
        self.next_obs[i] = t.next_obs
        self.done[i] = float(t.done)
        self.cursor = (self.cursor + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch: int, rng: np.random.Generator) -> Batch:
        if self.size < batch:
            raise ValueError(f"cannot sample {batch} from {self.size} transitions")
        idx = rng.integers(0, self.size, size=batch)
        return Batch(self.obs[idx], self.action[idx], self.reward[idx], self.next_obs[idx], self.done[idx])

    def transitions(self) -> List[Transition]:
        """Stored transitions, oldest first."""
        start = self.cursor if self.size == self.capacity else 0
        order = [(start + k) % self.capacity for k in range(self.size)]
        return [
            Transition(self.obs[i].copy(), self.action[i].copy(), float(self.reward[i]),
                       self.next_obs[i].copy(), bool(self.done[i]))
            for i in order
        ]

    def arrays(self) -> Dict[str, np.ndarray]:
        return {
            "obs": self.obs, "action": self.action, "reward": self.reward,
            "next_obs": self.next_obs, "done": self.done,
            "meta": np.array([float(self.size), float(self.cursor)]),
        }

    def load_arrays(self, arrays: Dict[str, np.ndarray]) -> None:
        for name in ("obs", "action", "reward", "next_obs", "done"):
            setattr(self, name, arrays[name].reshape(getattr(self, name).shape).copy())
        self.size, self.cursor = int(arrays["meta"][0]), int(arrays["meta"][1])


class Td3Agent:
    """Actor, twin critics, their target copies and optimizer states."""

    NETWORKS = ("actor", "critic1", "critic2", "actor_target", "critic1_target", "critic2_target")

    def __init__(self, cfg: Td3Config, bounds: ActionBounds = ActionBounds(),
                 rng: Optional[np.random.Generator] = None,
                 obs_dim: int = OBS_DIM, act_dim: int = ACT_DIM):
        rng = rng if rng is not None else substream(cfg.seed, "td3", "init")
        self.cfg = cfg
        self.bounds = bounds
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        hidden = list(cfg.hidden)
        self.actor = Mlp([obs_dim, *hidden, act_dim], "tanh", rng)
        self.critic1 = Mlp([obs_dim + act_dim, *hidden, 1], "identity", rng)
        self.critic2 = Mlp([obs_dim + act_dim, *hidden, 1], "identity", rng)
        self.actor_target = self.actor.copy()
        self.critic1_target = self.critic1.copy()
        self.critic2_target = self.critic2.copy()
        self.actor_opt = AdamState.for_params(self.actor.params(), cfg.lr)
        self.critic1_opt = AdamState.for_params(self.critic1.params(), cfg.lr)
        self.critic2_opt = AdamState.for_params(self.critic2.params(), cfg.lr)
        self.critic_updates = 0
        self.actor_updates = 0

    def networks(self) -> Dict[str, Mlp]:
        return {name: getattr(self, name) for name in self.NETWORKS}

    def optimizer_arrays(self) -> Dict[str, np.ndarray]:
        out = {}
        for name in ("actor", "critic1", "critic2"):
            for key, arr in getattr(self, f"{name}_opt").arrays().items():
                out[f"adam.{name}.{key}"] = arr
        out["counters"] = np.array([float(self.critic_updates), float(self.actor_updates)])
        return out

    def load_optimizer_arrays(self, arrays: Dict[str, np.ndarray]) -> None:
        for name in ("actor", "critic1", "critic2"):
            prefix = f"adam.{name}."
            getattr(self, f"{name}_opt").load_arrays(
                {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}
            )
        self.critic_updates, self.actor_updates = (int(x) for x in arrays["counters"])

    def act_normalized(self, obs: np.ndarray, explore: bool = False,
                       rng: Optional[np.random.Generator] = None) -> np.ndarray:
        u = forward(self.actor, obs)
        if explore:
            u = u + rng.normal(0.0, self.cfg.exploration_noise_std, size=u.shape)
        return np.clip(u, -1.0, 1.0)


def select_action(agent: Td3Agent, obs: np.ndarray, explore: bool = False,
                  rng: Optional[np.random.Generator] = None) -> Action:
    """Actor output, with clipped Gaussian exploration noise when ``explore``."""
    return agent.bounds.denormalize(agent.act_normalized(obs, explore, rng))


def _critic_input(obs: np.ndarray, action: np.ndarray) -> np.ndarray:
    return np.concatenate([obs, action], axis=1)


def compute_target(agent: Td3Agent, batch: Batch, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """y = r + gamma * min(Q1', Q2')(s', pi'(s')), without the bootstrap on goal transitions."""
    next_a = forward(agent.actor_target, batch.next_obs)
    if agent.cfg.target_smoothing_std > 0:
        noise = rng.normal(0.0, agent.cfg.target_smoothing_std, size=next_a.shape)
        noise = np.clip(noise, -agent.cfg.target_noise_clip, agent.cfg.target_noise_clip)
        next_a = np.clip(next_a + noise, -1.0, 1.0)
    sa = _critic_input(batch.next_obs, next_a)
    q1 = forward(agent.critic1_target, sa)[:, 0]
    q2 = forward(agent.critic2_target, sa)[:, 0]
    bootstrap = np.where(batch.done > 0.5, 0.0, agent.cfg.gamma * np.minimum(q1, q2))
    return batch.reward + bootstrap


def _regress(net: Mlp, opt: AdamState, x: np.ndarray, y: np.ndarray, what: str) -> float:
    cache = forward_with_cache(net, x)
    err = cache.output[:, 0] - y
    loss = float(np.mean(err ** 2))
    assert_finite(loss, what, step=opt.t)
    grads, _ = backward_from_cache(net, cache, (2.0 * err / err.size)[:, None])
    adam_step(net.params(), grads.params(), opt)
    return loss


def critic_update(agent: Td3Agent, batch: Batch, rng: Optional[np.random.Generator] = None) -> Tuple[float, float]:
    """One Adam step per critic on the MSE to the shared target; returns both pre-step losses."""
    y = compute_target(agent, batch, rng)
    sa = _critic_input(batch.obs, batch.action)
    loss1 = _regress(agent.critic1, agent.critic1_opt, sa, y, "critic1 loss")
    loss2 = _regress(agent.critic2, agent.critic2_opt, sa, y, "critic2 loss")
    agent.critic_updates += 1
    return loss1, loss2


def actor_update(agent: Td3Agent, batch: Batch) -> float:
    """One ascent step on mean Q1(s, pi(s)), then Polyak-track all three targets."""
    actor_cache = forward_with_cache(agent.actor, batch.obs)
    sa = _critic_input(batch.obs, actor_cache.output)
    q_cache = forward_with_cache(agent.critic1, sa)
    objective = float(np.mean(q_cache.output))
    assert_finite(objective, "actor objective", step=agent.actor_opt.t)
    n = sa.shape[0]
    _, d_sa = backward_from_cache(agent.critic1, q_cache, np.full((n, 1), -1.0 / n))
    grads, _ = backward_from_cache(agent.actor, actor_cache, d_sa[:, agent.obs_dim:])
    adam_step(agent.actor.params(), grads.params(), agent.actor_opt)
    tau = agent.cfg.tau
    polyak_update(agent.actor_target, agent.actor, tau)
    polyak_update(agent.critic1_target, agent.critic1, tau)
    polyak_update(agent.critic2_target, agent.critic2, tau)
    agent.actor_updates += 1
    return objective


def update(agent: Td3Agent, batch: Batch, rng: Optional[np.random.Generator] = None) -> dict:
    """Critic step, plus an actor step every ``policy_delay`` critic steps."""
    loss1, loss2 = critic_update(agent, batch, rng)
    stats = {"critic1_loss": loss1, "critic2_loss": loss2}
    if agent.critic_updates % agent.cfg.policy_delay == 0:
        stats["actor_objective"] = actor_update(agent, batch)
    return stats


@dataclass
class TrainingLog:
    rows: List[dict] = field(default_factory=list)
    first_success_episode: Optional[int] = None
    total_steps: int = 0
    first_update_step: Optional[int] = None

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=TRAINING_LOG_COLUMNS)

    def write_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, float_format="%.10g")
        return path

    def reward_curve(self, window: int = REWARD_CURVE_WINDOW) -> pd.DataFrame:
        frame = self.to_frame()[["episode", "return"]].copy()
        frame["moving_avg"] = frame["return"].rolling(window, min_periods=1).mean()
        return frame

    def write_reward_curve(self, path: Union[str, Path], window: int = REWARD_CURVE_WINDOW) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.reward_curve(window).to_csv(path, index=False, float_format="%.10g")
        return path


@dataclass
class _Streams:
    explore: np.random.Generator
    replay: np.random.Generator
    smoothing: np.random.Generator

    @classmethod
    def for_seed(cls, seed: int) -> "_Streams":
        return cls(
            explore=substream(seed, "td3", "explore"),
            replay=substream(seed, "td3", "replay"),
            smoothing=substream(seed, "td3", "smoothing"),
        )

    def state(self) -> dict:
        return {k: getattr(self, k).bit_generator.state for k in ("explore", "replay", "smoothing")}

    def restore(self, state: dict) -> None:
        for k, s in state.items():
            getattr(self, k).bit_generator.state = s


def save_training_state(path: Union[str, Path], agent: Td3Agent, buffer: ReplayBuffer, log: TrainingLog,
                        streams: _Streams, episode: int, bundle_meta: ActorBundle) -> Path:
    """Everything needed to continue a run bit-for-bit: networks, Adam, replay, RNG, log."""
    networks = agent.networks()
    networks.pop("actor")
    arrays = agent.optimizer_arrays()
    arrays.update({f"replay.{k}": v for k, v in buffer.arrays().items()})
    extra = {
        "td3": _config_dict(agent.cfg),
        "resume": {
            "episode": episode,
            "total_steps": log.total_steps,
            "first_success_episode": log.first_success_episode,
            "first_update_step": log.first_update_step,
            "rng": streams.state(),
            "rows": log.rows,
        },
    }
    bundle = ActorBundle(agent.actor, bundle_meta.normalizer, bundle_meta.bounds, "teacher", bundle_meta.name)
    return save_actor(path, bundle, extra_networks=networks, arrays=arrays, extra=extra)


def _config_dict(cfg: Td3Config) -> dict:
    data = asdict(cfg)
    data["hidden"] = list(cfg.hidden)
    return {k: v for k, v in data.items() if v is not None}


def save_agent(path: Union[str, Path], agent: Td3Agent, bundle_meta: ActorBundle) -> Path:
    """Final teacher checkpoint: actor, critics and targets."""
    networks = agent.networks()
    networks.pop("actor")
    bundle = ActorBundle(agent.actor, bundle_meta.normalizer, bundle_meta.bounds, "teacher", bundle_meta.name)
    return save_actor(path, bundle, extra_networks=networks, extra={"td3": _config_dict(agent.cfg)})


def load_agent(path: Union[str, Path], cfg: Optional[Td3Config] = None) -> Td3Agent:
    ckpt = load_checkpoint(path)
    if cfg is None:
        stored = dict(ckpt.metadata["td3"])
        stored["hidden"] = tuple(stored["hidden"])
        cfg = Td3Config(**stored)
    bounds = ckpt.metadata.get("action_bounds")
    agent = Td3Agent(cfg, ActionBounds(**bounds) if bounds else ActionBounds())
    for name in Td3Agent.NETWORKS:
        net = ckpt.networks[name]
        if not net.same_architecture(getattr(agent, name)):
            raise ValueError(f"checkpoint network {name} has layer_dims {net.layer_dims}")
        setattr(agent, name, net)
    if "counters" in ckpt.arrays:
        agent.load_optimizer_arrays(ckpt.arrays)
    return agent


def train_teacher(
    env: NavEnv,
    cfg: Td3Config,
    task_for_episode: Callable[[int], NavTask],
    name: str = "teacher",
    checkpoint_path: Optional[Union[str, Path]] = None,
    resume_path: Optional[Union[str, Path]] = None,
    on_episode: Optional[Callable[[dict], None]] = None,
) -> Tuple[Td3Agent, TrainingLog]:
    """Train one teacher in ``env``.

    Uniform random actions fill the replay buffer for the first
    ``cfg.warmup_steps`` steps; afterwards every environment step is followed
    by one critic update. Only goal terminations stop the bootstrap.

    Args:
        env: Environment over the teacher's training region.
        cfg: Trainer settings, including the root seed of every random stream.
        task_for_episode: Maps an episode index to its task.
        name: Teacher name stored in checkpoints.
        checkpoint_path: Resume checkpoint rewritten every
            ``cfg.checkpoint_interval`` episodes.
        resume_path: Continue from a resume checkpoint.
        on_episode: Called with each training-log row.

    Returns:
        The trained agent and its training log.
    """
    bundle_meta = ActorBundle(None, env.normalizer, env.bounds, "teacher", name)
    streams = _Streams.for_seed(cfg.seed)
    buffer = ReplayBuffer(cfg.buffer_capacity)
    log = TrainingLog()
    episode = 0
    if resume_path is not None:
        agent = load_agent(resume_path, cfg)
        ckpt = load_checkpoint(resume_path)
        buffer.load_arrays({k[len("replay."):]: v for k, v in ckpt.arrays.items() if k.startswith("replay.")})
        state = ckpt.metadata["resume"]
        streams.restore(state["rng"])
        episode = state["episode"]
        log = TrainingLog(
            rows=list(state["rows"]),
            first_success_episode=state["first_success_episode"],
            total_steps=state["total_steps"],
            first_update_step=state["first_update_step"],
        )
        logger.info("resumed %s at episode %d, step %d", name, episode, log.total_steps)
    else:
        agent = Td3Agent(cfg, env.bounds)

    while log.total_steps < cfg.total_env_steps and (cfg.max_episodes is None or episode < cfg.max_episodes):
        obs, _ = env.reset(options={"task": task_for_episode(episode)})
        ep_return, steps = 0.0, 0
        success = False
        started = time.perf_counter()
        while True:
            if log.total_steps < cfg.warmup_steps:
                u = streams.explore.uniform(-1.0, 1.0, size=ACT_DIM)
            else:
                u = agent.act_normalized(obs, explore=True, rng=streams.explore)
            next_obs, reward, terminated, truncated, info = env.step(u)
            goal = info["outcome"].termination_reason is TerminationReason.GOAL
            buffer.add(Transition(obs, u, reward, next_obs, goal))
            log.total_steps += 1
            steps += 1
            ep_return += reward
            if log.total_steps > cfg.warmup_steps and len(buffer) >= cfg.batch:
                if log.first_update_step is None:
                    log.first_update_step = log.total_steps
                stats = update(agent, buffer.sample(cfg.batch, streams.replay), streams.smoothing)
                logger.debug("step %d %s", log.total_steps, stats)
            obs = next_obs
            if terminated or truncated:
                success = goal
                break
            if log.total_steps >= cfg.total_env_steps:
                break
        first = success and log.first_success_episode is None
        if first:
            log.first_success_episode = episode
        row = {
            "episode": episode,
            "steps": steps,
            "return": ep_return,
            "first_success_flag": int(first),
            "wall_ms": int(round((time.perf_counter() - started) * 1000.0)),
        }
        log.rows.append(row)
        if on_episode is not None:
            on_episode(row)
        if cfg.log_interval and episode % cfg.log_interval == 0:
            logger.info("%s episode %d return %.3f steps %d total %d", name, episode, ep_return, steps, log.total_steps)
        episode += 1
        if checkpoint_path is not None and cfg.checkpoint_interval and episode % cfg.checkpoint_interval == 0:
            save_training_state(checkpoint_path, agent, buffer, log, streams, episode, bundle_meta)

    logger.info("%s finished: %d episodes, %d steps, first success at %s",
                name, episode, log.total_steps, log.first_success_episode)
    return agent, log


def teacher_bundle(agent: Td3Agent, env: NavEnv, name: str) -> ActorBundle:
    return ActorBundle(agent.actor, env.normalizer, env.bounds, "teacher", name)
