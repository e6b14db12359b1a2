"""Offline transition datasets: generation, normalization, storage, sampling.

Datasets are columnar (one array per Transition field) with two episode
boundary markers: `dones` for true MDP termination (the TD bootstrap cut)
and `timeouts` for episodes that simply stopped. Sparse-env rewards are
stored with the configured shift already applied; `reward_shift` records it
so raw returns can always be reconstructed.

The stitch regime only exists for the maze: trajectories run between
corridor nodes such that no single trajectory visits both the start region
and the goal region, so any policy that solves the task from the start must
combine pieces of different trajectories. A fraction of stitch episodes
wander at random on one side of the wall instead of following a route;
without them the data never leaves the corridor ribbons and a fitted critic
happily interpolates high goal-side values straight across the wall.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import envs

REGIMES = ("expert", "medium", "medium_replay", "medium_expert", "stitch")

STD_FLOOR = 1e-3

# Stitch routes: every corridor pair except ones joining the start corner A
# and the goal corner D in a single trajectory.
STITCH_ROUTES = ("AB", "AC", "BA", "BC", "BD", "CA", "CB", "CD")

STITCH_WANDER_FRACTION = 0.2
WANDER_STEPS = 80


class DatasetFormatError(ValueError):
    """Bad magic, version, or truncation in a stored dataset."""


@dataclass
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    done: bool


class Batch(NamedTuple):
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray


@dataclass
class OfflineDataset:
    env_name: str
    regime: str
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray
    timeouts: np.ndarray
    reward_shift: float = 0.0
    normalized: bool = False
    state_mean: np.ndarray | None = None
    state_std: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.states)
        for name in ("actions", "rewards", "next_states", "dones", "timeouts"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} has length {len(getattr(self, name))}, expected {n}")
        if self.state_mean is None:
            self.state_mean = np.zeros(self.states.shape[1])
        if self.state_std is None:
            self.state_std = np.ones(self.states.shape[1])

    def __len__(self) -> int:
        return len(self.states)

    @property
    def state_dim(self) -> int:
        return self.states.shape[1]

    @property
    def action_dim(self) -> int:
        return self.actions.shape[1]

    def transition(self, i: int) -> Transition:
        return Transition(self.states[i], self.actions[i], float(self.rewards[i]),
                          self.next_states[i], bool(self.dones[i]))

    def episode_slices(self) -> list[slice]:
        """Contiguous index ranges, split where done or timeout is set."""
        ends = np.flatnonzero(self.dones | self.timeouts)
        slices, start = [], 0
        for e in ends:
            slices.append(slice(start, e + 1))
            start = e + 1
        if start < len(self):
            slices.append(slice(start, len(self)))
        return slices

    def episode_returns(self) -> np.ndarray:
        """Raw (unshifted) return of each stored episode."""
        return np.array([float(self.rewards[s].sum() - self.reward_shift * self.rewards[s].size)
                         for s in self.episode_slices()])

    def normalize_obs(self, obs: np.ndarray) -> np.ndarray:
        """Apply this dataset's state statistics to a live observation."""
        return (obs - self.state_mean) / self.state_std


def sample_batch(dataset: OfflineDataset, n: int, rng: np.random.Generator) -> Batch:
    """Uniform with replacement; every row is an exact dataset record."""
    if n <= 0:
        raise ValueError(f"batch size must be positive, got {n}")
    idx = rng.integers(0, len(dataset), size=n)
    return Batch(dataset.states[idx], dataset.actions[idx], dataset.rewards[idx],
                 dataset.next_states[idx], dataset.dones[idx].astype(np.float64))


def normalize_states(dataset: OfflineDataset) -> OfflineDataset:
    """New dataset with states standardized by their own mean and floored std."""
    if dataset.normalized:
        raise ValueError("dataset is already normalized")
    mean = dataset.states.mean(axis=0)
    std = np.maximum(dataset.states.std(axis=0), STD_FLOOR)
    return replace(
        dataset,
        states=(dataset.states - mean) / std,
        next_states=(dataset.next_states - mean) / std,
        normalized=True,
        state_mean=mean,
        state_std=std,
    )


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------


def _noisy(action, sigma, low, high, rng):
    if sigma == 0.0:
        return np.clip(action, low, high)
    return np.clip(action + rng.normal(0.0, sigma, size=len(low)), low, high)


class _Collector:
    def __init__(self, size):
        self.size = size
        self.rows = {k: [] for k in ("s", "a", "r", "s2", "d", "t")}

    def __len__(self):
        return len(self.rows["s"])

    @property
    def full(self):
        return len(self) >= self.size

    def add(self, s, a, r, s2, terminal, timeout):
        self.rows["s"].append(s)
        self.rows["a"].append(a)
        self.rows["r"].append(r)
        self.rows["s2"].append(s2)
        self.rows["d"].append(terminal)
        self.rows["t"].append(timeout)

    def mark_last_timeout(self):
        if self.rows["t"] and not self.rows["d"][-1]:
            self.rows["t"][-1] = True


def _run_episode(env, collector, policy, reward_shift, rng,
                 *, reset_kwargs=None, stop_at=None, sigma=0.0, random_frac=0.0):
    low, high = env.spec.action_low, env.spec.action_high
    obs = env.reset(**(reset_kwargs or {}))
    while not collector.full:
        scripted = policy(obs)
        if random_frac > 0.0 and rng.random() < random_frac:
            action = rng.uniform(low, high)
        else:
            action = _noisy(scripted, sigma, low, high, rng)
        result = env.step(action)
        stopped = stop_at is not None and not result.done \
            and np.linalg.norm(result.obs - stop_at) < 0.15
        collector.add(obs, action, result.reward + reward_shift, result.obs,
                      result.terminal, bool((result.done and not result.terminal) or stopped))
        obs = result.obs
        if result.done or stopped:
            return
    collector.mark_last_timeout()


def _generate_staged(env, size, seed, reward_shift, stages):
    """stages: list of (fraction, sigma, random_frac) phases over the dataset."""
    rng = np.random.default_rng(seed)
    collector = _Collector(size)
    while not collector.full:
        progress = len(collector) / size
        acc = 0.0
        sigma, random_frac = stages[-1][1], stages[-1][2]
        for frac, sg, rf in stages:
            acc += frac
            if progress < acc:
                sigma, random_frac = sg, rf
                break
        reset_kwargs = {"rng": rng} if env.spec.name == "pendulum" else None
        _run_episode(env, collector, envs.scripted_expert(env), reward_shift, rng,
                     reset_kwargs=reset_kwargs, sigma=sigma, random_frac=random_frac)
    return collector


def _generate_anneal(env, size, seed, reward_shift, sigma_start, sigma_end):
    rng = np.random.default_rng(seed)
    collector = _Collector(size)
    while not collector.full:
        progress = len(collector) / size
        sigma = sigma_start + (sigma_end - sigma_start) * progress
        reset_kwargs = {"rng": rng} if env.spec.name == "pendulum" else None
        _run_episode(env, collector, envs.scripted_expert(env), reward_shift, rng,
                     reset_kwargs=reset_kwargs, sigma=sigma)
    return collector


def _jittered_node(name, rng):
    return envs.MAZE_NODES[name] + rng.uniform(-0.15, 0.15, size=2)


def _run_wander(env, collector, reward_shift, rng):
    """One episode of uniform-random actions confined to one side of the wall.

    These episodes fill the open space between the corridors and bump into
    the wall, anchoring critic values where route data never goes. The side
    boundary is structural: an episode ends the moment it crosses the wall
    band (only possible through the open right column), so a wanderer that
    started below the wall can never reach the goal region and one that
    started above can never reach the start region.
    """
    _, _, wall_ymin, wall_ymax = envs.MAZE_WALL
    below = rng.random() < 0.5
    y_lo, y_hi = (0.1, wall_ymin - 0.1) if below else (wall_ymax + 0.1, envs.MAZE_SIZE - 0.1)
    start = np.array([rng.uniform(0.1, envs.MAZE_SIZE - 0.1), rng.uniform(y_lo, y_hi)])
    obs = env.reset(position=start)
    for _ in range(WANDER_STEPS):
        if collector.full:
            break
        action = rng.uniform(env.spec.action_low, env.spec.action_high)
        result = env.step(action)
        crossed = result.obs[1] > wall_ymax if below else result.obs[1] < wall_ymin
        collector.add(obs, action, result.reward + reward_shift, result.obs,
                      result.terminal, bool((result.done and not result.terminal) or crossed))
        obs = result.obs
        if result.done or crossed:
            return
    collector.mark_last_timeout()


def _generate_stitch(env, size, seed, reward_shift):
    if env.spec.name != "pointmaze":
        raise ValueError("the stitch regime only exists for pointmaze")
    rng = np.random.default_rng(seed)
    collector = _Collector(size)
    while not collector.full:
        if rng.random() < STITCH_WANDER_FRACTION:
            _run_wander(env, collector, reward_shift, rng)
            continue
        route = STITCH_ROUTES[rng.integers(len(STITCH_ROUTES))]
        start = _jittered_node(route[0], rng)
        waypoints = envs.maze_route(route[0], route[1])
        controller = envs.WaypointController(waypoints)
        stop = None if route[1] == "D" else waypoints[-1]
        _run_episode(env, collector, controller, reward_shift, rng,
                     reset_kwargs={"position": start}, stop_at=stop, sigma=0.1)
    return collector


def generate(env_name: str, regime: str, size: int, seed: int,
             reward_shift: float | None = None) -> OfflineDataset:
    """Roll out the regime's behavior policy until `size` transitions exist.

    reward_shift defaults to -1 for sparse envs and 0 for dense ones; it is
    added to every stored reward.
    """
    if regime not in REGIMES:
        raise ValueError(f"unknown regime {regime!r}; choose from {REGIMES}")
    if size <= 0:
        raise ValueError(f"size must be positive, got {size}")
    env = envs.make_env(env_name)
    if reward_shift is None:
        reward_shift = -1.0 if env.spec.reward_kind == "sparse" else 0.0

    if regime == "expert":
        collector = _generate_staged(env, size, seed, reward_shift, [(1.0, 0.1, 0.0)])
    elif regime == "medium":
        collector = _generate_staged(env, size, seed, reward_shift, [(1.0, 0.3, 0.2)])
    elif regime == "medium_expert":
        collector = _generate_staged(env, size, seed, reward_shift,
                                     [(0.5, 0.3, 0.2), (0.5, 0.1, 0.0)])
    elif regime == "medium_replay":
        collector = _generate_anneal(env, size, seed, reward_shift, 1.0, 0.3)
    else:
        collector = _generate_stitch(env, size, seed, reward_shift)

    rows = collector.rows
    ds = OfflineDataset(
        env_name=env_name,
        regime=regime,
        states=np.array(rows["s"][:size]),
        actions=np.array(rows["a"][:size]),
        rewards=np.array(rows["r"][:size]),
        next_states=np.array(rows["s2"][:size]),
        dones=np.array(rows["d"][:size], dtype=bool),
        timeouts=np.array(rows["t"][:size], dtype=bool),
        reward_shift=reward_shift,
    )
    if not (ds.dones[-1] or ds.timeouts[-1]):
        ds.timeouts[-1] = True  # the size cap can cut an episode short
    return ds


# ---------------------------------------------------------------------------
# storage
# ---------------------------------------------------------------------------

MAGIC = b"SPOTRLD1"
VERSION = 1


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def save_dataset(path, ds: OfflineDataset) -> None:
    """Lossless binary dump; see load_dataset for the exact layout."""
    path = Path(path)
    n, sd, ad = len(ds), ds.state_dim, ds.action_dim
    parts = [
        MAGIC,
        struct.pack("<B", VERSION),
        _pack_str(ds.env_name),
        _pack_str(ds.regime),
        struct.pack("<QII", n, sd, ad),
        struct.pack("<dB", ds.reward_shift, int(ds.normalized)),
        np.asarray(ds.state_mean, dtype="<f8").tobytes(),
        np.asarray(ds.state_std, dtype="<f8").tobytes(),
        np.asarray(ds.states, dtype="<f8").tobytes(),
        np.asarray(ds.actions, dtype="<f8").tobytes(),
        np.asarray(ds.rewards, dtype="<f8").tobytes(),
        np.asarray(ds.next_states, dtype="<f8").tobytes(),
        np.asarray(ds.dones, dtype=np.uint8).tobytes(),
        np.asarray(ds.timeouts, dtype=np.uint8).tobytes(),
    ]
    path.write_bytes(b"".join(parts))


def load_dataset(path) -> OfflineDataset:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 9 or raw[:8] != MAGIC:
        raise DatasetFormatError(f"{path}: not a dataset file (bad magic)")
    if raw[8] != VERSION:
        raise DatasetFormatError(f"{path}: unsupported dataset version {raw[8]}")
    pos = 9

    def read_str():
        nonlocal pos
        (length,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        s = raw[pos:pos + length].decode("utf-8")
        pos += length
        return s

    def read_block(count, dtype):
        nonlocal pos
        width = np.dtype(dtype).itemsize
        end = pos + count * width
        if end > len(raw):
            raise DatasetFormatError(f"{path}: truncated data block")
        block = np.frombuffer(raw[pos:end], dtype=dtype).copy()
        pos = end
        return block

    try:
        env_name = read_str()
        regime = read_str()
        n, sd, ad = struct.unpack_from("<QII", raw, pos)
        pos += 16
        reward_shift, normalized = struct.unpack_from("<dB", raw, pos)
        pos += 9
    except struct.error as err:
        raise DatasetFormatError(f"{path}: truncated header ({err})") from None

    mean = read_block(sd, "<f8")
    std = read_block(sd, "<f8")
    ds = OfflineDataset(
        env_name=env_name,
        regime=regime,
        states=read_block(n * sd, "<f8").reshape(n, sd),
        actions=read_block(n * ad, "<f8").reshape(n, ad),
        rewards=read_block(n, "<f8"),
        next_states=read_block(n * sd, "<f8").reshape(n, sd),
        dones=read_block(n, np.uint8).astype(bool),
        timeouts=read_block(n, np.uint8).astype(bool),
        reward_shift=reward_shift,
        normalized=bool(normalized),
        state_mean=mean,
        state_std=std,
    )
    if pos != len(raw):
        raise DatasetFormatError(f"{path}: {len(raw) - pos} trailing bytes")
    return ds
