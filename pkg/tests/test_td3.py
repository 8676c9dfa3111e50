"""Tests for the TD3 teacher trainer."""

from dataclasses import replace

import numpy as np
import pytest

from geonav.core.exceptions import ConfigError
from geonav.learn.artifacts import load_actor
from geonav.learn.neural import forward
from geonav.learn.td3 import (
    TRAINING_LOG_COLUMNS,
    Batch,
    ReplayBuffer,
    Td3Agent,
    Td3Config,
    TrainingLog,
    Transition,
    actor_update,
    compute_target,
    critic_update,
    load_agent,
    save_agent,
    select_action,
    teacher_bundle,
    train_teacher,
    update,
)

SMALL = Td3Config(hidden=(8, 8), batch=8, warmup_steps=20, total_env_steps=1000, buffer_capacity=500, log_interval=0)


def _constant(net, value):
    net.load_flat(np.zeros(net.flat().size))
    net.biases[-1][0] = value


def _batch(n=2, reward=1.0, done=(0.0, 1.0)):
    return Batch(
        obs=np.zeros((n, 6)), action=np.zeros((n, 2)), reward=np.full(n, reward),
        next_obs=np.zeros((n, 6)), done=np.array(done, dtype=float),
    )


def _transition(k):
    return Transition(np.full(6, float(k)), np.zeros(2), float(k), np.full(6, k + 1.0), False)


class TestTd3Config:
    """Test cases for Td3Config validation."""

    def test_defaults(self):
        cfg = Td3Config()
        assert (cfg.gamma, cfg.tau, cfg.batch, cfg.policy_delay) == (0.995, 0.005, 256, 2)
        assert cfg.hidden == (64, 64)

    @pytest.mark.parametrize("kwargs", [
        {"gamma": 1.0},
        {"tau": 0.0},
        {"policy_delay": 0},
        {"batch": 0},
        {"lr": 0.0},
        {"hidden": ()},
        {"warmup_steps": -1},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            Td3Config(**kwargs)


class TestReplayBuffer:
    """Test cases for the transition ring."""

    def test_fills_then_overwrites_oldest(self):
        buffer = ReplayBuffer(3)
        for k in range(5):
            buffer.add(_transition(k))
        assert len(buffer) == 3
        assert [t.reward for t in buffer.transitions()] == [2.0, 3.0, 4.0]

    def test_sample_shapes(self):
        buffer = ReplayBuffer(10)
        for k in range(4):
            buffer.add(_transition(k))
        batch = buffer.sample(6, np.random.default_rng(0))
        assert len(batch) == 6
        assert batch.obs.shape == (6, 6) and batch.action.shape == (6, 2)
        assert set(batch.reward) <= {0.0, 1.0, 2.0, 3.0}

    def test_sample_more_than_stored(self):
        buffer = ReplayBuffer(10)
        buffer.add(_transition(0))
        with pytest.raises(ValueError):
            buffer.sample(2, np.random.default_rng(0))

    def test_zero_capacity(self):
        with pytest.raises(ValueError):
            ReplayBuffer(0)

    def test_arrays_round_trip(self):
        buffer = ReplayBuffer(3)
        for k in range(4):
            buffer.add(_transition(k))
        restored = ReplayBuffer(3)
        restored.load_arrays(buffer.arrays())
        assert [t.reward for t in restored.transitions()] == [1.0, 2.0, 3.0]
        restored.add(_transition(9))
        assert [t.reward for t in restored.transitions()] == [2.0, 3.0, 9.0]


class TestUpdates:
    """Test cases for the target, critic and actor steps."""

    @pytest.fixture
    def agent(self):
        return Td3Agent(replace(SMALL, seed=1))

    def test_target_uses_smaller_critic(self, agent):
        _constant(agent.critic1_target, 10.0)
        _constant(agent.critic2_target, 12.0)
        y = compute_target(agent, _batch())
        assert y[0] == pytest.approx(1.0 + 0.995 * 10.0)
        assert y[1] == 1.0

    def test_critic_loss(self, agent):
        _constant(agent.critic1_target, 0.0)
        _constant(agent.critic2_target, 0.0)
        _constant(agent.critic1, 3.0)
        _constant(agent.critic2, 3.0)
        loss1, loss2 = critic_update(agent, _batch(done=(0.0, 0.0)))
        assert loss1 == pytest.approx(4.0)
        assert loss2 == pytest.approx(4.0)
        assert agent.critic_updates == 1
        assert forward(agent.critic1, np.zeros(8))[0] < 3.0

    def test_flat_critic_leaves_actor(self, agent):
        _constant(agent.critic1, 0.0)
        before = agent.actor.checksum()
        objective = actor_update(agent, _batch())
        assert objective == 0.0
        assert agent.actor.checksum() == before
        assert agent.actor_updates == 1

    def test_actor_follows_critic(self, agent):
        """With Q increasing in the turn input the actor's turn output grows."""
        _constant(agent.critic1, 0.0)
        agent.critic1.weights[0][6, :] = 1.0
        agent.critic1.biases[0][:] = 1.0
        agent.critic1.weights[1][:, :] = 1.0
        agent.critic1.weights[2][:, 0] = 1.0
        obs = np.zeros((4, 6))
        before = forward(agent.actor, obs)[:, 0].mean()
        for _ in range(5):
            actor_update(agent, Batch(obs, np.zeros((4, 2)), np.zeros(4), obs, np.zeros(4)))
        assert forward(agent.actor, obs)[:, 0].mean() > before

    def test_policy_delay(self, agent):
        _constant(agent.critic1, 0.0)
        stats = [update(agent, _batch()) for _ in range(4)]
        assert ["actor_objective" in s for s in stats] == [False, True, False, True]
        assert (agent.critic_updates, agent.actor_updates) == (4, 2)

    def test_exploration_stays_in_bounds(self):
        agent = Td3Agent(replace(SMALL, exploration_noise_std=1e6))
        rng = np.random.default_rng(0)
        for _ in range(10):
            a = select_action(agent, np.zeros(6), explore=True, rng=rng)
            assert abs(a.psi) == pytest.approx(np.pi / 2)
            assert a.dist_l in (0.0, 50.0)

    def test_deterministic_without_exploration(self, agent):
        assert select_action(agent, np.ones(6)) == select_action(agent, np.ones(6))


class TestTrainingLog:
    """Test cases for the training log and reward curve."""

    def test_columns_and_curve(self, tmp_path):
        log = TrainingLog(rows=[
            {"episode": k, "steps": 5, "return": float(k + 1), "first_success_flag": 0, "wall_ms": 1}
            for k in range(3)
        ])
        assert list(log.to_frame().columns) == TRAINING_LOG_COLUMNS
        assert log.reward_curve(window=2)["moving_avg"].tolist() == [1.0, 1.5, 2.5]
        assert log.write_csv(tmp_path / "log.csv").exists()
        assert log.write_reward_curve(tmp_path / "curve.csv").exists()


class TestTrainTeacher:
    """Test cases for the training loop."""

    def test_warmup_then_updates(self, env, task_a):
        cfg = replace(SMALL, warmup_steps=30, total_env_steps=60)
        agent, log = train_teacher(env, cfg, lambda episode: task_a)
        assert log.total_steps == 60
        assert log.first_update_step == 31
        assert agent.critic_updates == 30
        assert agent.actor_updates == 15
        assert sum(row["steps"] for row in log.rows) == 60
        assert [row["episode"] for row in log.rows] == list(range(len(log.rows)))

    def test_same_seed_same_actor(self, env, task_a):
        cfg = replace(SMALL, total_env_steps=45)
        first, log1 = train_teacher(env, cfg, lambda episode: task_a)
        second, log2 = train_teacher(env, cfg, lambda episode: task_a)
        assert first.actor.checksum() == second.actor.checksum()
        assert [r["return"] for r in log1.rows] == [r["return"] for r in log2.rows]

    def test_episode_callback(self, env, task_a):
        seen = []
        train_teacher(env, replace(SMALL, total_env_steps=25), lambda episode: task_a, on_episode=seen.append)
        assert seen and set(seen[0]) == set(TRAINING_LOG_COLUMNS)

    def test_resume_matches_uninterrupted(self, env, task_a, tmp_path):
        def drop_wall(rows):
            return [{k: v for k, v in r.items() if k != "wall_ms"} for r in rows]

        full, full_log = train_teacher(env, replace(SMALL, max_episodes=4), lambda episode: task_a)
        ckpt = tmp_path / "resume.json"
        train_teacher(
            env, replace(SMALL, max_episodes=2, checkpoint_interval=1), lambda episode: task_a,
            checkpoint_path=ckpt,
        )
        resumed, resumed_log = train_teacher(
            env, replace(SMALL, max_episodes=4), lambda episode: task_a, resume_path=ckpt,
        )
        assert resumed.actor.checksum() == full.actor.checksum()
        assert resumed.critic1.checksum() == full.critic1.checksum()
        assert resumed_log.total_steps == full_log.total_steps
        assert drop_wall(resumed_log.rows) == drop_wall(full_log.rows)

    def test_agent_checkpoint_round_trip(self, env, tmp_path):
        agent = Td3Agent(SMALL)
        path = save_agent(tmp_path / "teacher_A.json", agent, teacher_bundle(agent, env, "A"))
        loaded = load_agent(path)
        assert loaded.cfg == SMALL
        for name in Td3Agent.NETWORKS:
            assert getattr(loaded, name).checksum() == getattr(agent, name).checksum()
        bundle = load_actor(path)
        assert (bundle.role, bundle.name) == ("teacher", "A")
        assert bundle.normalizer == env.normalizer
