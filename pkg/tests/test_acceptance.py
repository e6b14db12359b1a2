"""End-to-end acceptance gates, one test per gate.

Each gate is a self-contained check of one promised behavior, from gradient
exactness up through the full offline-to-online pipeline. The maze gates
train real agents and dominate the runtime; everything they share (dataset,
density model, the regularized runs) is built once in module fixtures.
Thresholds and budgets are stated inline next to each assertion.
"""

import numpy as np
import pytest

from oracles import (
    finite_difference_grad,
    mixture_eval_grid,
    relative_error,
)
from spotrl import autodiff as ad
from spotrl import cvae, data, envs, finetune, spot, tabular
from spotrl.autodiff import Tensor
from test_spot import random_batch, reference_td3_actor_grads, tiny_agent

# Maze-gate budgets. 100k offline steps with the sparse defaults is where the
# stitch value function is reliably sharp; lam 0.5 is the grid point the
# lambda sweep selects on this data.
STITCH_SIZE = 30_000
VAE_ITERS = 20_000
OFFLINE_STEPS = 100_000
PROFILE_STEPS = 30_000
ONLINE_STEPS = 30_000
LAM_STAR = 0.5
SEEDS = (0, 1, 2)


# ---------------------------------------------------------------------------
# shared maze artifacts
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def stitch_data():
    return data.generate("pointmaze", "stitch", STITCH_SIZE, seed=0)


@pytest.fixture(scope="module")
def stitch_vae(stitch_data):
    model, losses = cvae.train_vae(stitch_data, iters=VAE_ITERS, seed=0)
    assert np.isfinite(losses).all()
    return model


@pytest.fixture(scope="module")
def spot_star_runs(stitch_data, stitch_vae):
    """The flagship offline runs: lam = LAM_STAR, one per seed."""
    runs = {}
    for seed in SEEDS:
        runs[seed] = spot.train_offline(stitch_data, stitch_vae, lam=LAM_STAR,
                                        steps=OFFLINE_STEPS,
                                        eval_interval=OFFLINE_STEPS, seed=seed)
    return runs


def goal_rate(policy, dataset):
    """Fraction of evaluation episodes that reach the goal (raw return > 0)."""
    env = envs.make_env("pointmaze")
    fn = spot.make_eval_policy(policy, dataset)
    return float(np.mean(envs.evaluate_policy(env, fn, 20, seed=10_000) > 0))


# ---------------------------------------------------------------------------
# gate 1: analytic gradients of all three losses match finite differences
# ---------------------------------------------------------------------------


def _check_grads(params, build_loss, tol=1e-4):
    with ad.Graph() as g:
        loss = build_loss()
    g.backward(loss)
    grads = [p.grad.copy() for p in params]
    arrays = [p.data.copy() for p in params]

    def f(arrs):
        for p, arr in zip(params, arrs):
            p.data[...] = arr
        return build_loss().item()

    for i in range(len(params)):
        fd = finite_difference_grad(f, arrays, i)
        assert relative_error(grads[i], fd) < tol
    for p, arr in zip(params, arrays):
        p.data[...] = arr


def test_gate_gradients_match_finite_differences():
    for trial in range(20):
        rng = np.random.default_rng(1000 + trial)
        sd, adim = int(rng.integers(1, 4)), int(rng.integers(1, 3))
        density = cvae.make_cvae(sd, adim, 1.0, rng=rng, hidden=4, depth=2,
                                 latent_dim=1)
        agent = tiny_agent(trial, state_dim=sd, action_dim=adim, lam=0.6,
                           density=density, q_norm_enabled=False,
                           reg_samples=3 if trial % 2 else 1)
        batch = random_batch(rng, n=4, state_dim=sd, action_dim=adim)
        y = spot.critic_target(agent, batch,
                               spot.target_noise(agent, batch.actions.shape, rng))
        sa = np.concatenate([batch.states, batch.actions], axis=1)

        def critic_loss():
            target = Tensor(y)
            return ad.add(ad.mean(ad.square(ad.sub(agent.critic1(sa), target))),
                          ad.mean(ad.square(ad.sub(agent.critic2(sa), target))))

        _check_grads(agent.critic1.params() + agent.critic2.params(), critic_loss)

        vae_noise = spot.reg_noise(agent, len(batch.states), rng)
        _check_grads(agent.actor.params() + agent.critic1.params(),
                     lambda: spot.actor_loss(agent, batch.states, vae_noise)[0])

        eps = rng.standard_normal((4, density.latent_dim))
        _check_grads(density.params(),
                     lambda: cvae.elbo_loss(density, batch.states,
                                            batch.actions, eps))


# ---------------------------------------------------------------------------
# gate 2: the supported-backup suboptimality bound on random MDPs
# ---------------------------------------------------------------------------


def test_gate_suboptimality_bound_on_random_mdps():
    for seed in range(100):
        mdp = tabular.random_mdp(6, 4, 0.9, np.random.default_rng(seed))
        for eps in (0.0, 0.05, 0.1, 0.2):
            report = tabular.suboptimality_gap(mdp, eps)
            assert report.gap <= report.bound + 1e-9
            if eps == 0.0:
                assert report.gap == 0.0


# ---------------------------------------------------------------------------
# gate 3: density fidelity on the closed-form mixture task
# ---------------------------------------------------------------------------


def test_gate_mixture_density_fidelity(mixture_cvae):
    gs, ga, truth = mixture_eval_grid(10, 10)
    s, a = gs[:, None], ga[:, None]
    rng = np.random.default_rng(7)

    # (a) the one-sample bound, averaged over noise draws, stays below the
    # true log density at every grid point (up to Monte Carlo error)
    draws = np.array([cvae.log_density_lb(
        mixture_cvae, s, a,
        rng.standard_normal((len(gs), mixture_cvae.latent_dim))).data
        for _ in range(200)])
    elbo = draws.mean(axis=0)
    stderr = draws.std(axis=0, ddof=1) / np.sqrt(draws.shape[0])
    assert np.all(elbo <= truth + 3.0 * stderr)

    # (b) the heavily sampled estimate recovers the truth on average
    est = cvae.estimate_log_density(mixture_cvae, s, a, 1000,
                                    np.random.default_rng(8))
    assert np.mean(np.abs(est.values - truth)) < 0.05

    # (c) grid-mean estimates are nondecreasing in the sample count
    reps = 30
    means = {}
    for L in (1, 5, 25, 125):
        vals = [cvae.estimate_log_density(mixture_cvae, s, a, L,
                                          np.random.default_rng(100 * L + r)).mean
                for r in range(reps)]
        means[L] = (np.mean(vals), np.std(vals, ddof=1) / np.sqrt(reps))
    for lo, hi in ((1, 5), (5, 25), (25, 125)):
        (m_lo, se_lo), (m_hi, se_hi) = means[lo], means[hi]
        assert m_hi >= m_lo - 2.0 * (se_lo + se_hi)


# ---------------------------------------------------------------------------
# gate 4: the one-sample estimator is the ELBO, exactly
# ---------------------------------------------------------------------------


def test_gate_single_sample_estimate_equals_elbo():
    checked = 0
    for trial in range(50):
        rng = np.random.default_rng(3000 + trial)
        sd, adim = int(rng.integers(1, 4)), int(rng.integers(1, 3))
        model = cvae.make_cvae(sd, adim, 1.0, rng=rng, hidden=5, depth=2)
        s = rng.standard_normal((20, sd))
        a = rng.uniform(-1, 1, (20, adim))
        noise = rng.standard_normal((1, 20, model.latent_dim))
        iw = cvae.iw_log_density(model, s, a, noise).data
        lb = cvae.log_density_lb(model, s, a, noise[0], analytic_kl=False).data
        assert np.array_equal(iw, lb)
        checked += len(s)
    assert checked == 1000


# ---------------------------------------------------------------------------
# gate 5: with no regularizer the actor update is normalized TD3
# ---------------------------------------------------------------------------


def test_gate_unregularized_actor_is_normalized_td3():
    for step in range(100):
        rng = np.random.default_rng(5000 + step)
        agent = tiny_agent(step, state_dim=3, action_dim=2,
                           actor_dropout=0.1 if step % 2 else 0.0)
        states = rng.standard_normal((16, 3))
        expected = reference_td3_actor_grads(agent, states, dropout_seed=step)
        drng = np.random.default_rng(step) if step % 2 else None
        with ad.Graph() as g:
            loss, _ = spot.actor_loss(agent, states, dropout_rng=drng)
        g.backward(loss)
        for p, ref in zip(agent.actor.params(), expected):
            assert np.array_equal(p.grad, ref)


# ---------------------------------------------------------------------------
# gate 6: the online decay schedule is exact
# ---------------------------------------------------------------------------


def test_gate_decay_schedule_is_exact():
    for lam0 in (0.5, 0.3):
        total = 10_000
        sched = finetune.DecaySchedule(lam0, total, floor_fraction=0.2)
        assert finetune.lambda_at(sched, 0) == lam0
        assert finetune.lambda_at(sched, 8_000) == 0.2 * lam0
        assert finetune.lambda_at(sched, total) == 0.2 * lam0
        # linear in between: matches the affine interpolant of the endpoints
        for t in np.linspace(800, 7_200, 10).astype(int):
            expected = lam0 + (0.2 * lam0 - lam0) * (t / 8_000)
            assert abs(finetune.lambda_at(sched, int(t)) - expected) < 1e-12


# ---------------------------------------------------------------------------
# gates 7-9: behavioral trends on the stitch maze
# ---------------------------------------------------------------------------


def test_gate_stronger_lambda_stays_on_support(stitch_data, stitch_vae):
    p5 = {}
    for lam in (0.05, 0.5):
        vals = []
        for seed in SEEDS:
            agent, _ = spot.train_offline(stitch_data, stitch_vae, lam=lam,
                                          steps=PROFILE_STEPS,
                                          eval_interval=PROFILE_STEPS,
                                          seed=seed, evaluate=False)
            vals.append(spot.constraint_strength_profile(
                agent, stitch_data, seed=seed)[5])
        p5[lam] = float(np.mean(vals))
    assert p5[0.5] > p5[0.05]


def test_gate_stitching_beats_both_baselines(stitch_data, stitch_vae,
                                             spot_star_runs):
    spot_rate = np.mean([goal_rate(agent, stitch_data)
                         for agent, _ in spot_star_runs.values()])
    td3_rates, bc_rates = [], []
    for seed in SEEDS:
        agent, _ = spot.train_offline(stitch_data, None, lam=0.0,
                                      steps=OFFLINE_STEPS,
                                      eval_interval=OFFLINE_STEPS, seed=seed)
        td3_rates.append(goal_rate(agent, stitch_data))
        policy, _ = spot.bc_baseline(stitch_data, seed=seed)
        bc_rates.append(goal_rate(policy, stitch_data))
    assert spot_rate >= 0.6
    assert np.mean(bc_rates) <= 0.1
    assert np.mean(td3_rates) <= 0.2


def test_gate_finetuning_improves_on_offline(stitch_data, spot_star_runs):
    offline_means, tuned_means, tuned_rates, scratch_rates = [], [], [], []
    for seed in SEEDS:
        agent, log = spot_star_runs[seed]
        offline_means.append(log.final_eval_mean())
        tuned, tlog = finetune.finetune(agent, stitch_data, steps=ONLINE_STEPS,
                                        eval_interval=ONLINE_STEPS, seed=seed)
        tuned_means.append(tlog.final_eval_mean())
        tuned_rates.append(goal_rate(tuned, stitch_data))
        scratch, _ = finetune.from_scratch_baseline("pointmaze",
                                                    steps=ONLINE_STEPS,
                                                    eval_interval=ONLINE_STEPS,
                                                    seed=seed)
        scratch_rates.append(goal_rate(scratch, stitch_data))
    assert np.mean(tuned_means) >= np.mean(offline_means)
    assert np.mean(tuned_rates) > np.mean(scratch_rates)


# ---------------------------------------------------------------------------
# gate 10: reruns are byte-identical, storage is lossless
# ---------------------------------------------------------------------------


def test_gate_determinism_and_lossless_storage(tmp_path, stitch_data):
    from spotrl import cli

    def run_pipeline(root):
        steps = [
            ["gen-data", "--env", "pendulum", "--regime", "medium",
             "--dataset-size", "400", "--seed", "3", "--out", str(root / "d")],
            ["train-vae", "--data", str(root / "d" / "pendulum_medium.ds"),
             "--vae-iters", "120", "--seed", "3", "--out", str(root / "v")],
            ["train-spot", "--data", str(root / "d" / "pendulum_medium.ds"),
             "--vae", str(root / "v" / "density.ckpt"), "--lambda", "0.1",
             "--steps", "150", "--eval-interval", "150", "--eval-episodes",
             "2", "--seed", "3", "--out", str(root / "t")],
            ["eval", "--agent", str(root / "t" / "agent.ckpt"), "--data",
             str(root / "d" / "pendulum_medium.ds"), "--episodes", "3",
             "--seed", "3", "--out", str(root / "e")],
        ]
        for argv in steps:
            assert cli.main(argv) == 0

    run_pipeline(tmp_path / "one")
    run_pipeline(tmp_path / "two")
    for rel in ("d/summary.csv", "v/losses.csv", "t/summary.csv",
                "e/episodes.csv", "e/summary.csv", "v/density.ckpt",
                "t/agent.ckpt", "d/pendulum_medium.ds"):
        a = (tmp_path / "one" / rel).read_bytes()
        b = (tmp_path / "two" / rel).read_bytes()
        assert a == b, rel

    # dataset storage round-trips every array bitwise
    ds_path = tmp_path / "stitch.ds"
    data.save_dataset(ds_path, stitch_data)
    back = data.load_dataset(ds_path)
    for name in ("states", "actions", "rewards", "next_states", "dones",
                 "timeouts"):
        assert np.array_equal(getattr(back, name), getattr(stitch_data, name))

    # and so do model checkpoints, through the evaluation path
    rng = np.random.default_rng(0)
    density = cvae.make_cvae(2, 2, 1.0, rng=rng, hidden=4, depth=2)
    agent = tiny_agent(1, state_dim=2, action_dim=2, lam=0.2, density=density)
    cvae.save_density(tmp_path / "density.ckpt", density)
    spot.save_agent(tmp_path / "agent.ckpt", agent)
    density_back = cvae.load_density(tmp_path / "density.ckpt")
    agent_back = spot.load_agent(tmp_path / "agent.ckpt",
                                 density=density_back)
    obs = rng.standard_normal((5, 2))
    assert np.array_equal(agent.act(obs), agent_back.act(obs))
    noise = rng.standard_normal((5, density.latent_dim))
    assert np.array_equal(
        cvae.log_density_lb(density, obs, agent.act(obs), noise).data,
        cvae.log_density_lb(density_back, obs, agent_back.act(obs), noise).data)
