"""Two toy continuous-control environments and their scripted controllers.

PointMaze: a point agent moves through a U-shaped corridor by choosing a
2-D velocity. Reward is sparse (1 inside the goal ball, else 0) and the
episode terminates at the goal. The wall forces a detour, which is what
makes stitched datasets interesting.

Pendulum: the classic torque-limited swing-up with a dense quadratic cost.

Both are deterministic given reset arguments; all randomness comes from
caller-supplied generators.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np


@dataclass(frozen=True)
class EnvSpec:
    name: str
    state_dim: int
    action_dim: int
    action_low: np.ndarray
    action_high: np.ndarray
    max_steps: int
    reward_kind: str  # "sparse" or "dense"


class StepResult(NamedTuple):
    obs: np.ndarray
    reward: float
    done: bool       # episode over (terminal state or step limit)
    terminal: bool   # true MDP termination; the bootstrap cut for TD targets


class EpisodeOver(RuntimeError):
    """step() was called after done; reset first."""


# ---------------------------------------------------------------------------
# PointMaze
# ---------------------------------------------------------------------------

MAZE_SIZE = 3.0
MAZE_WALL = (0.0, 2.0, 1.4, 1.6)  # xmin, xmax, ymin, ymax
MAZE_START = np.array([0.5, 0.5])
MAZE_GOAL = np.array([0.5, 2.5])
GOAL_RADIUS = 0.5
MAZE_STEP_SIZE = 0.1
MAZE_MAX_STEPS = 300

# Corridor nodes used by the scripted controller and the stitched datasets:
# start corner, lower right, upper right, goal corner.
MAZE_NODES = {
    "A": np.array([0.5, 0.5]),
    "B": np.array([2.45, 0.5]),
    "C": np.array([2.45, 2.5]),
    "D": np.array([0.5, 2.5]),
}
MAZE_NODE_ORDER = "ABCD"


def _in_wall(x: float, y: float) -> bool:
    xmin, xmax, ymin, ymax = MAZE_WALL
    return xmin <= x <= xmax and ymin <= y <= ymax


class PointMaze:
    """Sparse-reward 2-D navigation around a U-shaped wall.

    Observation is the raw position. Actions are per-axis velocities in
    [-1, 1], scaled by a 0.1 step size. Movement resolves one axis at a
    time so the agent slides along walls instead of sticking to them.
    """

    def __init__(self):
        self.spec = EnvSpec(
            name="pointmaze",
            state_dim=2,
            action_dim=2,
            action_low=np.array([-1.0, -1.0]),
            action_high=np.array([1.0, 1.0]),
            max_steps=MAZE_MAX_STEPS,
            reward_kind="sparse",
        )
        self._pos = MAZE_START.copy()
        self._steps = 0
        self._done = True

    def reset(self, position: np.ndarray | None = None) -> np.ndarray:
        pos = MAZE_START if position is None else np.asarray(position, dtype=np.float64)
        if _in_wall(pos[0], pos[1]):
            raise ValueError(f"reset position {pos} is inside the wall")
        self._pos = np.clip(pos, 0.0, MAZE_SIZE).astype(np.float64)
        self._steps = 0
        self._done = False
        return self._pos.copy()

    def step(self, action: np.ndarray) -> StepResult:
        if self._done:
            raise EpisodeOver("pointmaze episode is over; call reset()")
        a = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
        x, y = self._pos
        new_x = float(np.clip(x + MAZE_STEP_SIZE * a[0], 0.0, MAZE_SIZE))
        if _in_wall(new_x, y):
            new_x = x
        new_y = float(np.clip(y + MAZE_STEP_SIZE * a[1], 0.0, MAZE_SIZE))
        if _in_wall(new_x, new_y):
            new_y = y
        self._pos = np.array([new_x, new_y])
        self._steps += 1
        at_goal = bool(np.linalg.norm(self._pos - MAZE_GOAL) <= GOAL_RADIUS)
        reward = 1.0 if at_goal else 0.0
        done = at_goal or self._steps >= MAZE_MAX_STEPS
        self._done = done
        return StepResult(self._pos.copy(), reward, done, at_goal)


class WaypointController:
    """Steers through a list of waypoints with a saturating P controller.

    Stateful: it remembers which waypoint it is heading for, advancing when
    within `advance_radius`. Build a fresh one per episode.
    """

    def __init__(self, waypoints: list[np.ndarray], gain: float = 8.0,
                 advance_radius: float = 0.15):
        if not waypoints:
            raise ValueError("need at least one waypoint")
        self.waypoints = [np.asarray(w, dtype=np.float64) for w in waypoints]
        self.gain = gain
        self.advance_radius = advance_radius
        self._index = 0

    @property
    def target(self) -> np.ndarray:
        return self.waypoints[self._index]

    def __call__(self, obs: np.ndarray) -> np.ndarray:
        pos = np.asarray(obs, dtype=np.float64)
        while (self._index < len(self.waypoints) - 1
               and np.linalg.norm(pos - self.target) < self.advance_radius):
            self._index += 1
        return np.clip(self.gain * (self.target - pos), -1.0, 1.0)


def maze_route(start: str, end: str) -> list[np.ndarray]:
    """Waypoints along the corridor between two named nodes (A, B, C, D)."""
    i, j = MAZE_NODE_ORDER.index(start), MAZE_NODE_ORDER.index(end)
    if i == j:
        raise ValueError(f"route needs distinct nodes, got {start!r} twice")
    step = 1 if j > i else -1
    names = [MAZE_NODE_ORDER[k] for k in range(i + step, j + step, step)]
    return [MAZE_NODES[n] for n in names]


def maze_expert_controller() -> WaypointController:
    """The full start-to-goal route used by expert and medium datasets."""
    return WaypointController(maze_route("A", "D"))


# ---------------------------------------------------------------------------
# Pendulum
# ---------------------------------------------------------------------------

PENDULUM_MAX_TORQUE = 2.0
PENDULUM_MAX_SPEED = 8.0
PENDULUM_DT = 0.05
PENDULUM_HORIZON = 200
_G, _M, _L = 10.0, 1.0, 1.0


def _wrap_angle(theta: float) -> float:
    return ((theta + math.pi) % (2.0 * math.pi)) - math.pi


class Pendulum:
    """Torque-limited swing-up, angle measured from upright.

    Observation is (cos theta, sin theta, theta_dot). The quadratic cost is
    charged on the pre-step state and action, then velocity updates by Euler
    integration and position by the updated velocity.
    """

    def __init__(self):
        self.spec = EnvSpec(
            name="pendulum",
            state_dim=3,
            action_dim=1,
            action_low=np.array([-PENDULUM_MAX_TORQUE]),
            action_high=np.array([PENDULUM_MAX_TORQUE]),
            max_steps=PENDULUM_HORIZON,
            reward_kind="dense",
        )
        self._theta = math.pi
        self._theta_dot = 0.0
        self._steps = 0
        self._done = True

    def _obs(self) -> np.ndarray:
        return np.array([math.cos(self._theta), math.sin(self._theta), self._theta_dot])

    def reset(self, rng: np.random.Generator | None = None,
              theta: float | None = None, theta_dot: float | None = None) -> np.ndarray:
        """Random start when given an rng, otherwise hanging at rest (or as given)."""
        if rng is not None:
            self._theta = float(rng.uniform(-math.pi, math.pi))
            self._theta_dot = float(rng.uniform(-1.0, 1.0))
        else:
            self._theta = math.pi if theta is None else float(theta)
            self._theta_dot = 0.0 if theta_dot is None else float(theta_dot)
        self._steps = 0
        self._done = False
        return self._obs()

    def step(self, action: np.ndarray) -> StepResult:
        if self._done:
            raise EpisodeOver("pendulum episode is over; call reset()")
        u = float(np.clip(np.asarray(action, dtype=np.float64).reshape(-1)[0],
                          -PENDULUM_MAX_TORQUE, PENDULUM_MAX_TORQUE))
        angle = _wrap_angle(self._theta)
        cost = angle * angle + 0.1 * self._theta_dot ** 2 + 0.001 * u * u
        acc = 3.0 * _G / (2.0 * _L) * math.sin(self._theta) + 3.0 / (_M * _L * _L) * u
        self._theta_dot = float(np.clip(self._theta_dot + acc * PENDULUM_DT,
                                        -PENDULUM_MAX_SPEED, PENDULUM_MAX_SPEED))
        self._theta = self._theta + self._theta_dot * PENDULUM_DT
        self._steps += 1
        done = self._steps >= PENDULUM_HORIZON
        self._done = done
        return StepResult(self._obs(), -cost, done, False)


def pendulum_energy(obs: np.ndarray) -> float:
    """Rotational energy relative to the bottom, upright rest = mgl/2."""
    cos_t, _, theta_dot = obs
    inertia = _M * _L * _L / 3.0
    return 0.5 * inertia * theta_dot * theta_dot + 0.5 * _M * _G * _L * cos_t


def pendulum_expert_action(obs: np.ndarray) -> np.ndarray:
    """Energy-pumping swing-up with a PD hold near the top."""
    cos_t, sin_t, theta_dot = obs
    theta = math.atan2(sin_t, cos_t)
    if cos_t > 0.85 and abs(theta_dot) < 3.0:
        u = -12.0 * theta - 2.2 * theta_dot
    else:
        deficit = 0.5 * _M * _G * _L - pendulum_energy(obs)
        u = 3.0 * theta_dot * deficit
        if abs(theta_dot) < 0.3:
            u += 2.0 * (1.0 if sin_t >= 0.0 else -1.0)
    return np.array([float(np.clip(u, -PENDULUM_MAX_TORQUE, PENDULUM_MAX_TORQUE))])


# ---------------------------------------------------------------------------
# Construction, evaluation, normalized scores
# ---------------------------------------------------------------------------

ENV_NAMES = ("pointmaze", "pendulum")


def make_env(name: str):
    if name == "pointmaze":
        return PointMaze()
    if name == "pendulum":
        return Pendulum()
    raise ValueError(f"unknown env {name!r}; choose from {ENV_NAMES}")


def reset_for_eval(env, rng: np.random.Generator) -> np.ndarray:
    """The evaluation reset protocol: fixed start for the maze, random for pendulum."""
    if env.spec.name == "pendulum":
        return env.reset(rng=rng)
    return env.reset()


def run_episode(env, policy: Callable[[np.ndarray], np.ndarray],
                rng: np.random.Generator) -> float:
    obs = reset_for_eval(env, rng)
    total = 0.0
    while True:
        result = env.step(policy(obs))
        total += result.reward
        obs = result.obs
        if result.done:
            return total


def evaluate_policy(env, policy, n_episodes: int, seed: int) -> np.ndarray:
    """Returns per-episode raw returns under the evaluation reset protocol."""
    rng = np.random.default_rng(seed)
    return np.array([run_episode(env, policy, rng) for _ in range(n_episodes)])


def scripted_expert(env) -> Callable[[np.ndarray], np.ndarray]:
    """A fresh expert policy for one episode of the given env."""
    if env.spec.name == "pointmaze":
        return maze_expert_controller()
    return pendulum_expert_action


def _random_policy(env, rng: np.random.Generator):
    low, high = env.spec.action_low, env.spec.action_high

    def policy(_obs):
        return rng.uniform(low, high)

    return policy


def calibrate_reference_returns(name: str, n_episodes: int = 100,
                                seed: int = 0) -> tuple[float, float]:
    """Mean random-policy and scripted-expert returns under the eval protocol.

    This is the procedure that produced reference_returns.txt; rerunning it
    with the same arguments reproduces the stored values exactly.
    """
    env = make_env(name)
    rng = np.random.default_rng(seed)
    random_returns = [run_episode(env, _random_policy(env, rng), rng)
                      for _ in range(n_episodes)]
    expert_rng = np.random.default_rng(seed + 1)
    expert_returns = [run_episode(env, scripted_expert(env), expert_rng)
                      for _ in range(n_episodes)]
    return float(np.mean(random_returns)), float(np.mean(expert_returns))


_REFS_PATH = Path(__file__).parent / "reference_returns.txt"


def load_reference_returns() -> dict[str, tuple[float, float]]:
    refs = {}
    for line in _REFS_PATH.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        name, rand_ref, expert_ref = line.split()
        refs[name] = (float(rand_ref), float(expert_ref))
    return refs


def normalized_score(env_name: str, raw_return: float) -> float:
    """100 * (raw - random_ref) / (expert_ref - random_ref), so expert play ~ 100."""
    refs = load_reference_returns()
    if env_name not in refs:
        raise KeyError(f"no reference returns for {env_name!r}")
    rand_ref, expert_ref = refs[env_name]
    return 100.0 * (raw_return - rand_ref) / (expert_ref - rand_ref)
