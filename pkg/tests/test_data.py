"""Dataset generation regimes, normalization, sampling, and the binary format."""

import numpy as np
import pytest
from scipy import stats

from spotrl import data, envs


@pytest.fixture(scope="module")
def stitch_ds():
    return data.generate("pointmaze", "stitch", 30_000, seed=11)


def test_generate_rejects_bad_args():
    with pytest.raises(ValueError, match="regime"):
        data.generate("pointmaze", "nope", 100, seed=0)
    with pytest.raises(ValueError, match="size"):
        data.generate("pointmaze", "expert", 0, seed=0)
    with pytest.raises(ValueError, match="stitch"):
        data.generate("pendulum", "stitch", 100, seed=0)


def test_generate_is_seeded_and_sized():
    a = data.generate("pendulum", "medium", 1500, seed=5)
    b = data.generate("pendulum", "medium", 1500, seed=5)
    assert len(a) == 1500
    assert np.array_equal(a.states, b.states)
    assert np.array_equal(a.actions, b.actions)
    c = data.generate("pendulum", "medium", 1500, seed=6)
    assert not np.array_equal(a.actions, c.actions)


def test_sparse_rewards_are_shifted_dense_are_not():
    maze = data.generate("pointmaze", "expert", 800, seed=0)
    assert maze.reward_shift == -1.0
    assert set(np.unique(maze.rewards)) <= {-1.0, 0.0}
    pend = data.generate("pendulum", "expert", 800, seed=0)
    assert pend.reward_shift == 0.0
    assert np.all(pend.rewards <= 0.0)


def test_next_state_chaining_within_episodes():
    ds = data.generate("pointmaze", "medium", 2000, seed=1)
    for sl in ds.episode_slices():
        s, s2 = ds.states[sl], ds.next_states[sl]
        assert np.array_equal(s[1:], s2[:-1])


def test_episode_boundaries_cover_everything():
    ds = data.generate("pendulum", "expert", 1500, seed=2)
    slices = ds.episode_slices()
    assert sum(sl.stop - sl.start for sl in slices) == len(ds)
    # pendulum never terminates, so every boundary is a timeout
    assert not ds.dones.any()
    assert ds.timeouts.sum() == len(slices)


def test_expert_maze_episodes_reach_goal():
    ds = data.generate("pointmaze", "expert", 600, seed=3, reward_shift=0.0)
    returns = ds.episode_returns()
    # the size cap may cut the final episode short; all complete ones succeed
    assert np.all(returns[:-1] == 1.0)


def test_medium_scores_sit_between_references():
    for env_name in ("pointmaze", "pendulum"):
        ds = data.generate(env_name, "medium", 6000, seed=4)
        score = envs.normalized_score(env_name, float(ds.episode_returns().mean()))
        assert 0.0 < score < 100.0


def test_medium_expert_is_half_and_half():
    ds = data.generate("pointmaze", "medium_expert", 6000, seed=5)
    mid = len(ds) // 2
    lengths_by_half = {False: [], True: []}
    for sl in ds.episode_slices():
        lengths_by_half[sl.start >= mid].append(sl.stop - sl.start)
    # the noisy stage wanders, the expert stage beelines to the goal
    assert np.mean(lengths_by_half[False]) > np.mean(lengths_by_half[True]) + 5


def test_stitch_never_joins_start_and_goal(stitch_ds):
    ds = stitch_ds
    for sl in ds.episode_slices():
        pts = np.vstack([ds.states[sl], ds.next_states[sl]])
        near_start = np.linalg.norm(pts - envs.MAZE_START, axis=1) <= envs.GOAL_RADIUS
        near_goal = np.linalg.norm(pts - envs.MAZE_GOAL, axis=1) <= envs.GOAL_RADIUS
        assert not (near_start.any() and near_goal.any())


def test_stitch_contains_goal_reward_and_start_coverage(stitch_ds):
    ds = stitch_ds
    assert ds.dones.sum() > 0  # some trajectories do enter the goal ball
    near_start = np.linalg.norm(ds.states - envs.MAZE_START, axis=1) <= envs.GOAL_RADIUS
    assert near_start.sum() > 0  # and some cover the start region


def test_stitch_covers_the_band_between_corridors(stitch_ds):
    ds = stitch_ds
    _, _, wall_ymin, _ = envs.MAZE_WALL
    band = (ds.states[:, 1] > 0.8) & (ds.states[:, 1] < wall_ymin) \
        & (ds.states[:, 0] < 2.0)
    assert band.mean() > 0.05  # route ribbons alone would leave this empty
    # and some transitions press into the wall and lose their northward motion
    at_wall = band & (ds.states[:, 1] > wall_ymin - 0.15)
    pressed = at_wall & (ds.actions[:, 1] > 0.3) \
        & (ds.next_states[:, 1] == ds.states[:, 1])
    assert pressed.sum() > 0


def test_normalize_states_stats_and_floor():
    ds = data.generate("pendulum", "medium", 3000, seed=6)
    norm = data.normalize_states(ds)
    assert norm.normalized and not ds.normalized
    assert np.allclose(norm.states.mean(axis=0), 0.0, atol=1e-10)
    recon = norm.states * norm.state_std + norm.state_mean
    assert np.allclose(recon, ds.states, atol=1e-12)
    assert np.all(norm.state_std >= data.STD_FLOOR)
    # next_states use the same statistics, not their own
    recon2 = norm.next_states * norm.state_std + norm.state_mean
    assert np.allclose(recon2, ds.next_states, atol=1e-12)
    with pytest.raises(ValueError, match="already"):
        data.normalize_states(norm)


def test_constant_state_column_hits_std_floor():
    ds = data.OfflineDataset(
        env_name="pointmaze", regime="expert",
        states=np.column_stack([np.ones(50), np.linspace(0, 1, 50)]),
        actions=np.zeros((50, 2)), rewards=np.zeros(50),
        next_states=np.column_stack([np.ones(50), np.linspace(0, 1, 50)]),
        dones=np.zeros(50, dtype=bool), timeouts=np.ones(50, dtype=bool),
    )
    norm = data.normalize_states(ds)
    assert norm.state_std[0] == data.STD_FLOOR


def test_sampled_rows_are_exact_dataset_records(stitch_ds):
    rng = np.random.default_rng(0)
    batch = data.sample_batch(stitch_ds, 64, rng)
    for i in range(len(batch.states)):
        matches = np.all(stitch_ds.states == batch.states[i], axis=1)
        matches &= np.all(stitch_ds.actions == batch.actions[i], axis=1)
        matches &= stitch_ds.rewards == batch.rewards[i]
        matches &= np.all(stitch_ds.next_states == batch.next_states[i], axis=1)
        assert matches.any()
    single = data.sample_batch(stitch_ds, 1, rng)
    assert single.states.shape == (1, 2)


def test_sampling_is_uniform_chi_square():
    ds = data.OfflineDataset(
        env_name="pendulum", regime="expert",
        states=np.arange(100, dtype=np.float64).reshape(100, 1),
        actions=np.zeros((100, 1)), rewards=np.zeros(100),
        next_states=np.zeros((100, 1)),
        dones=np.zeros(100, dtype=bool), timeouts=np.ones(100, dtype=bool),
    )
    rng = np.random.default_rng(123)
    draws = data.sample_batch(ds, 1_000_000, rng).states[:, 0].astype(int)
    counts = np.bincount(draws, minlength=100)
    chi2 = float(((counts - 10_000.0) ** 2 / 10_000.0).sum())
    assert chi2 < stats.chi2.ppf(0.999, df=99)


def test_dataset_roundtrip_is_lossless(tmp_path, stitch_ds):
    path = tmp_path / "ds.bin"
    data.save_dataset(path, stitch_ds)
    back = data.load_dataset(path)
    assert back.env_name == stitch_ds.env_name
    assert back.regime == stitch_ds.regime
    assert back.reward_shift == stitch_ds.reward_shift
    assert back.normalized == stitch_ds.normalized
    for field in ("states", "actions", "rewards", "next_states", "dones",
                  "timeouts", "state_mean", "state_std"):
        a, b = getattr(stitch_ds, field), getattr(back, field)
        assert np.array_equal(a, b), field
        assert np.asarray(a).tobytes() == np.asarray(b).tobytes(), field
    # saving the loaded copy reproduces identical bytes
    path2 = tmp_path / "ds2.bin"
    data.save_dataset(path2, back)
    assert path.read_bytes() == path2.read_bytes()


def test_dataset_format_errors(tmp_path, stitch_ds):
    path = tmp_path / "ds.bin"
    data.save_dataset(path, stitch_ds)
    blob = path.read_bytes()

    bad_magic = tmp_path / "m.bin"
    bad_magic.write_bytes(b"WRONG!!!" + blob[8:])
    with pytest.raises(data.DatasetFormatError, match="magic"):
        data.load_dataset(bad_magic)

    bad_version = tmp_path / "v.bin"
    bad_version.write_bytes(blob[:8] + b"\x09" + blob[9:])
    with pytest.raises(data.DatasetFormatError, match="version"):
        data.load_dataset(bad_version)

    truncated = tmp_path / "t.bin"
    truncated.write_bytes(blob[:len(blob) // 2])
    with pytest.raises(data.DatasetFormatError, match="truncated"):
        data.load_dataset(truncated)
