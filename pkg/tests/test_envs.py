"""Environment dynamics, scripted controllers, and score normalization."""

import math

import numpy as np
import pytest

from spotrl import envs


def test_maze_reset_and_spec():
    env = envs.PointMaze()
    obs = env.reset()
    assert np.array_equal(obs, [0.5, 0.5])
    assert env.spec.state_dim == 2 and env.spec.action_dim == 2
    assert env.spec.reward_kind == "sparse"


def test_maze_goal_gives_reward_and_terminates():
    env = envs.PointMaze()
    env.reset(position=envs.MAZE_GOAL)
    result = env.step([0.3, -0.7])
    assert result.reward == 1.0
    assert result.done and result.terminal
    with pytest.raises(envs.EpisodeOver):
        env.step([0.0, 0.0])


def test_maze_wall_blocks_and_slides():
    env = envs.PointMaze()
    env.reset(position=[1.0, 1.3])
    blocked = env.step([0.0, 1.0])
    assert np.allclose(blocked.obs, [1.0, 1.3])  # y move into the wall is dropped

    env.reset(position=[1.0, 1.3])
    slid = env.step([1.0, 1.0])
    assert np.allclose(slid.obs, [1.1, 1.3])  # x succeeds, y is blocked


def test_maze_reset_inside_wall_rejected():
    with pytest.raises(ValueError, match="wall"):
        envs.PointMaze().reset(position=[1.0, 1.5])


def test_maze_actions_clip_to_unit_box():
    a = envs.PointMaze()
    b = envs.PointMaze()
    a.reset(position=[2.5, 0.5])
    b.reset(position=[2.5, 0.5])
    ra = a.step([10.0, -99.0])
    rb = b.step([1.0, -1.0])
    assert np.array_equal(ra.obs, rb.obs)


def test_maze_stays_inside_bounds():
    env = envs.PointMaze()
    env.reset(position=[0.05, 0.05])
    result = env.step([-1.0, -1.0])
    assert np.all(result.obs >= 0.0)


def test_maze_times_out_without_terminal_flag():
    env = envs.PointMaze()
    env.reset(position=[2.5, 0.5])
    for i in range(envs.MAZE_MAX_STEPS):
        result = env.step([0.0, 0.0])
    assert result.done and not result.terminal
    assert i == envs.MAZE_MAX_STEPS - 1


def test_maze_expert_reaches_goal():
    env = envs.PointMaze()
    obs = env.reset()
    policy = envs.scripted_expert(env)
    for _ in range(envs.MAZE_MAX_STEPS):
        result = env.step(policy(obs))
        obs = result.obs
        if result.done:
            break
    assert result.terminal and result.reward == 1.0


def test_maze_route_endpoints():
    route = envs.maze_route("A", "D")
    assert [tuple(w) for w in route] == [(2.45, 0.5), (2.45, 2.5), (0.5, 2.5)]
    back = envs.maze_route("C", "A")
    assert [tuple(w) for w in back] == [(2.45, 0.5), (0.5, 0.5)]


def test_pendulum_hanging_zero_torque_first_reward_is_minus_pi_squared():
    env = envs.Pendulum()
    env.reset()
    result = env.step([0.0])
    assert result.reward == -math.pi ** 2


def test_pendulum_upright_is_a_fixed_point():
    env = envs.Pendulum()
    obs = env.reset(theta=0.0)
    assert np.allclose(obs, [1.0, 0.0, 0.0])
    for _ in range(5):
        result = env.step([0.0])
        assert result.reward == 0.0
        assert np.array_equal(result.obs, [1.0, 0.0, 0.0])


def test_pendulum_rewards_are_nonpositive_and_speed_clamped():
    env = envs.Pendulum()
    env.reset(theta=2.0, theta_dot=7.9)
    for _ in range(50):
        result = env.step([2.0])
        assert result.reward <= 0.0
        assert abs(result.obs[2]) <= envs.PENDULUM_MAX_SPEED


def test_pendulum_horizon_and_episode_over():
    env = envs.Pendulum()
    env.reset()
    for _ in range(envs.PENDULUM_HORIZON):
        result = env.step([0.0])
    assert result.done and not result.terminal
    with pytest.raises(envs.EpisodeOver):
        env.step([0.0])


def test_pendulum_action_clipping_is_internal():
    a, b = envs.Pendulum(), envs.Pendulum()
    a.reset(theta=1.0, theta_dot=0.5)
    b.reset(theta=1.0, theta_dot=0.5)
    ra = a.step([100.0])
    rb = b.step([2.0])
    assert np.array_equal(ra.obs, rb.obs)
    assert ra.reward == rb.reward


def test_pendulum_expert_swings_up():
    returns = envs.evaluate_policy(envs.Pendulum(), envs.pendulum_expert_action,
                                   n_episodes=50, seed=3)
    assert returns.mean() > -300.0


def test_reference_manifest_matches_recalibration():
    refs = envs.load_reference_returns()
    for name in envs.ENV_NAMES:
        rand_ref, expert_ref = envs.calibrate_reference_returns(name)
        assert refs[name] == (rand_ref, expert_ref)


def test_normalized_score_anchors():
    refs = envs.load_reference_returns()
    for name in envs.ENV_NAMES:
        rand_ref, expert_ref = refs[name]
        assert envs.normalized_score(name, expert_ref) == pytest.approx(100.0)
        assert envs.normalized_score(name, rand_ref) == pytest.approx(0.0)
    assert envs.normalized_score("pointmaze", 1.0) == pytest.approx(100.0)


def test_unknown_env_rejected():
    with pytest.raises(ValueError, match="unknown env"):
        envs.make_env("cartpole")
