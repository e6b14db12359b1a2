"""Online fine-tuning of an offline-trained agent.

The pretrained agent keeps interacting with the environment: act with
exploration noise, append the transition to a replay buffer preloaded with
the offline data, then run the usual critic/actor cycle on a buffer sample.
The density model stays frozen throughout (refreshing a behavior model on a
shifting action distribution is unreliable) while lam decays linearly to a
floor, loosening the constraint as fresh on-policy data accumulates.

from_scratch_baseline runs the same loop with lam pinned to zero and an
empty buffer, as the reference point fine-tuning is judged against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import spot
from .data import Batch, OfflineDataset
from .envs import evaluate_policy, make_env, reset_for_eval
from .spot import SpotAgent, TrainLog


@dataclass
class ReplayBuffer:
    """Fixed-capacity transition store, oldest rows evicted first.

    Arrays are preallocated at capacity; `size` and `cursor` track the live
    region and the next write slot. Offline rows loaded at construction are
    ordinary entries and get evicted like any others once the ring wraps.
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray
    size: int = 0
    cursor: int = 0

    @classmethod
    def empty(cls, capacity: int, state_dim: int, action_dim: int) -> "ReplayBuffer":
        if capacity <= 0:
            raise ValueError(f"capacity must be positive, got {capacity}")
        return cls(states=np.zeros((capacity, state_dim)),
                   actions=np.zeros((capacity, action_dim)),
                   rewards=np.zeros(capacity),
                   next_states=np.zeros((capacity, state_dim)),
                   dones=np.zeros(capacity))

    @classmethod
    def from_dataset(cls, dataset: OfflineDataset, capacity: int) -> "ReplayBuffer":
        """Preload a buffer with the dataset's rows (the newest rows win if the
        dataset is larger than the capacity)."""
        buf = cls.empty(capacity, dataset.state_dim, dataset.action_dim)
        n = min(len(dataset), capacity)
        buf.states[:n] = dataset.states[-n:]
        buf.actions[:n] = dataset.actions[-n:]
        buf.rewards[:n] = dataset.rewards[-n:]
        buf.next_states[:n] = dataset.next_states[-n:]
        buf.dones[:n] = dataset.dones[-n:].astype(np.float64)
        buf.size = n
        buf.cursor = n % capacity
        return buf

    @property
    def capacity(self) -> int:
        return len(self.states)

    def __len__(self) -> int:
        return self.size

    def add(self, state, action, reward, next_state, done) -> None:
        i = self.cursor
        self.states[i] = state
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_states[i] = next_state
        self.dones[i] = float(done)
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, n: int, rng: np.random.Generator) -> Batch:
        """Uniform with replacement over the current contents."""
        if self.size == 0:
            raise ValueError("sampling from an empty buffer")
        idx = rng.integers(0, self.size, size=n)
        return Batch(self.states[idx], self.actions[idx], self.rewards[idx],
                     self.next_states[idx], self.dones[idx])


@dataclass(frozen=True)
class DecaySchedule:
    """lam(t) = lam0 * max(floor_fraction, 1 - t/total): linear decay that
    flattens out once it reaches the floor, at t = (1 - floor) * total."""

    lam0: float
    total: int
    floor_fraction: float = 0.2

    @property
    def knee_fraction(self) -> float:
        return 1.0 - self.floor_fraction


def lambda_at(schedule: DecaySchedule, t: int) -> float:
    if t < 0 or t > schedule.total:
        raise ValueError(f"step {t} outside the schedule range [0, {schedule.total}]")
    if schedule.total == 0:
        return schedule.lam0
    return schedule.lam0 * max(schedule.floor_fraction, 1.0 - t / schedule.total)


def _run_online(agent: SpotAgent, env, eval_env, buffer: ReplayBuffer,
                schedule: DecaySchedule | None, normalize, reward_shift: float,
                rng: np.random.Generator, *, steps: int, batch_size: int,
                exploration_noise: float, eval_interval: int,
                eval_episodes: int, seed: int, evaluate: bool) -> TrainLog:
    """The interaction/update loop shared by finetune and the scratch baseline.

    One environment step, one critic update, a delayed actor update; lam is
    set from the schedule (at the 0-based step index) before each update.
    Evaluation runs noiseless on a separate env instance.
    """
    log = TrainLog.empty(steps)
    noise_std = exploration_noise * agent.action_bound
    eval_policy = lambda obs: agent.act(normalize(obs))
    obs = reset_for_eval(env, rng)
    for step in range(1, steps + 1):
        if schedule is not None:
            agent.lam = lambda_at(schedule, step - 1)
        norm_obs = normalize(obs)
        action = agent.act(norm_obs) + noise_std * rng.standard_normal(agent.action_dim)
        action = np.clip(action, -agent.action_bound, agent.action_bound)
        result = env.step(action)
        buffer.add(norm_obs, action, result.reward + reward_shift,
                   normalize(result.obs), result.terminal)
        obs = result.obs if not result.done else reset_for_eval(env, rng)

        batch = buffer.sample(batch_size, rng)
        noise = spot.target_noise(agent, batch.actions.shape, rng)
        log.critic_loss[step - 1] = spot.critic_update(agent, batch, noise)
        log.lam[step - 1] = agent.lam
        if step % agent.policy_update_freq == 0:
            info = spot.actor_update(agent, batch,
                                     spot.reg_noise(agent, batch_size, rng),
                                     dropout_rng=rng)
            log.actor_loss[step - 1] = info["actor_loss"]
            log.mean_q[step - 1] = info["mean_q"]
            log.mean_logp[step - 1] = info["mean_logp"]
        if evaluate and step % eval_interval == 0:
            returns = evaluate_policy(eval_env, eval_policy, eval_episodes,
                                      spot._eval_seed(seed, step))
            log.eval_steps.append(step)
            log.eval_returns.append(returns)
    return log


def finetune(agent: SpotAgent, dataset: OfflineDataset, *, steps: int,
             seed: int = 0, batch_size: int = 256,
             exploration_noise: float = 0.1, decay_floor: float = 0.2,
             buffer_capacity: int | None = None, eval_interval: int = 5_000,
             eval_episodes: int | None = None,
             evaluate: bool = True) -> tuple[SpotAgent, TrainLog]:
    """Continue training the agent online for `steps` environment steps.

    The buffer starts as the offline dataset (default capacity: dataset size
    plus the step budget, so nothing is forced out). States fed to the agent
    and stored in the buffer use the dataset's frozen normalization stats;
    stored rewards keep the dataset's shift convention. lam decays from its
    current value to decay_floor times that over the first (1 - decay_floor)
    fraction of the run, then holds.

    The agent is updated in place and also returned, with the TrainLog.
    """
    if dataset.state_dim != agent.state_dim or dataset.action_dim != agent.action_dim:
        raise ValueError(
            f"dataset dims ({dataset.state_dim}, {dataset.action_dim}) do not "
            f"match agent dims ({agent.state_dim}, {agent.action_dim})")
    env = make_env(dataset.env_name)
    eval_env = make_env(dataset.env_name)
    if eval_episodes is None:
        eval_episodes = 20 if env.spec.reward_kind == "sparse" else 10
    capacity = (len(dataset) + steps) if buffer_capacity is None else buffer_capacity
    rng = np.random.default_rng(seed)
    buffer = ReplayBuffer.from_dataset(dataset, capacity)
    schedule = DecaySchedule(agent.lam, steps, decay_floor)
    log = _run_online(agent, env, eval_env, buffer, schedule,
                      dataset.normalize_obs, dataset.reward_shift, rng,
                      steps=steps, batch_size=batch_size,
                      exploration_noise=exploration_noise,
                      eval_interval=eval_interval, eval_episodes=eval_episodes,
                      seed=seed, evaluate=evaluate)
    return agent, log


def from_scratch_baseline(env_name: str, *, steps: int, seed: int = 0,
                          warmup: int = 1_000, batch_size: int = 256,
                          exploration_noise: float = 0.1, hidden: int = 64,
                          depth: int = 3, eval_interval: int = 5_000,
                          eval_episodes: int | None = None,
                          evaluate: bool = True) -> tuple[SpotAgent, TrainLog]:
    """Plain online TD3 from a fresh start: lam pinned at zero, empty buffer.

    The buffer is first filled with `warmup` uniform-random steps (no
    updates), then the same loop as finetune runs. Observations are used raw;
    there are no offline statistics to freeze. Rewards keep the same shift
    convention the offline datasets use for this env, so returns are
    comparable.
    """
    env = make_env(env_name)
    eval_env = make_env(env_name)
    sparse = env.spec.reward_kind == "sparse"
    if eval_episodes is None:
        eval_episodes = 20 if sparse else 10
    reward_shift = -1.0 if sparse else 0.0
    rng = np.random.default_rng(seed)
    agent = spot.make_agent(env.spec.state_dim, env.spec.action_dim,
                            float(env.spec.action_high[0]), None, 0.0, rng=rng,
                            hidden=hidden, depth=depth,
                            actor_lr=1e-4 if sparse else 3e-4,
                            actor_dropout=0.0 if sparse else 0.1)
    buffer = ReplayBuffer.empty(max(warmup + steps, 1), env.spec.state_dim,
                                env.spec.action_dim)
    obs = reset_for_eval(env, rng)
    for _ in range(warmup):
        action = rng.uniform(env.spec.action_low, env.spec.action_high)
        result = env.step(action)
        buffer.add(obs, action, result.reward + reward_shift, result.obs,
                   result.terminal)
        obs = result.obs if not result.done else reset_for_eval(env, rng)
    log = _run_online(agent, env, eval_env, buffer, None, lambda o: o,
                      reward_shift, rng, steps=steps, batch_size=batch_size,
                      exploration_noise=exploration_noise,
                      eval_interval=eval_interval, eval_episodes=eval_episodes,
                      seed=seed, evaluate=evaluate)
    return agent, log
