"""Density-regularized offline actor-critic training.

The agent is plain TD3 (twin critics, min-backup with smoothed target
actions, delayed policy updates, Polyak-tracked targets) whose actor loss
carries an extra term: the estimated behavior log density of the actor's own
action, weighted by lam. The Q term is divided by the minibatch mean |Q| so
one lam scale works across tasks. With lam = 0 the update is exactly
normalized TD3; the reduction is covered bit-for-bit in the tests.

The density model is trained elsewhere (cvae module) and stays frozen here:
its parameters receive gradients during the actor backward pass but no
optimizer ever steps them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import cvae as cv
from .autodiff import Adam, Mlp, Tensor, checkpoint, polyak_update
from .data import Batch, OfflineDataset, sample_batch
from .envs import evaluate_policy, make_env

Q_NORM_FLOOR = 1e-8


@dataclass
class SpotAgent:
    actor: Mlp
    critic1: Mlp
    critic2: Mlp
    target_actor: Mlp
    target_critic1: Mlp
    target_critic2: Mlp
    density: object | None          # CvaeModel, GaussianBaseline, or None
    lam: float
    action_bound: float
    gamma: float = 0.99
    tau: float = 0.005
    policy_noise: float = 0.2
    noise_clip: float = 0.5
    policy_update_freq: int = 2
    q_norm_enabled: bool = True
    reg_samples: int = 1
    actor_opt: Adam = field(repr=False, default=None)
    critic_opt: Adam = field(repr=False, default=None)

    @property
    def state_dim(self) -> int:
        return self.actor.widths[0]

    @property
    def action_dim(self) -> int:
        return self.actor.widths[-1]

    def act(self, obs: np.ndarray) -> np.ndarray:
        """Deterministic policy action(s) for raw observation row(s)."""
        single = np.ndim(obs) == 1
        out = self.action_bound * self.actor(np.atleast_2d(obs)).data
        return out[0] if single else out


def make_agent(state_dim: int, action_dim: int, action_bound: float,
               density, lam: float, *, rng: np.random.Generator,
               hidden: int = 64, depth: int = 3, actor_dropout: float = 0.0,
               actor_lr: float = 3e-4, critic_lr: float = 3e-4,
               gamma: float = 0.99, tau: float = 0.005,
               policy_noise: float = 0.2, noise_clip: float = 0.5,
               policy_update_freq: int = 2, q_norm_enabled: bool = True,
               reg_samples: int = 1) -> SpotAgent:
    if lam < 0.0:
        raise ValueError(f"lam must be nonnegative, got {lam}")
    if lam > 0.0 and density is None:
        raise ValueError("a positive lam needs a density model")
    hiddens = [hidden] * (depth - 1)
    actor = Mlp([state_dim] + hiddens + [action_dim], rng=rng,
                output_activation="tanh", dropout=actor_dropout, name="actor")
    critic1 = Mlp([state_dim + action_dim] + hiddens + [1], rng=rng, name="q1")
    critic2 = Mlp([state_dim + action_dim] + hiddens + [1], rng=rng, name="q2")
    agent = SpotAgent(actor=actor, critic1=critic1, critic2=critic2,
                      target_actor=actor.copy(), target_critic1=critic1.copy(),
                      target_critic2=critic2.copy(), density=density, lam=lam,
                      action_bound=float(action_bound), gamma=gamma, tau=tau,
                      policy_noise=policy_noise, noise_clip=noise_clip,
                      policy_update_freq=policy_update_freq,
                      q_norm_enabled=q_norm_enabled, reg_samples=reg_samples)
    agent.actor_opt = Adam(actor.params(), lr=actor_lr)
    agent.critic_opt = Adam(critic1.params() + critic2.params(), lr=critic_lr)
    return agent


def target_noise(agent: SpotAgent, shape: tuple[int, int],
                 rng: np.random.Generator) -> np.ndarray:
    """Clipped smoothing noise for target-policy actions."""
    raw = rng.normal(0.0, agent.policy_noise, size=shape)
    return np.clip(raw, -agent.noise_clip, agent.noise_clip)


def critic_target(agent: SpotAgent, batch: Batch, noise: np.ndarray) -> np.ndarray:
    """Backup values y = r + gamma * (1 - done) * min(Q1bar, Q2bar) at smoothed
    target actions. Pure numpy path: nothing here ever joins a gradient tape."""
    next_a = agent.action_bound * agent.target_actor(batch.next_states).data
    next_a = np.clip(next_a + noise, -agent.action_bound, agent.action_bound)
    sa = np.concatenate([batch.next_states, next_a], axis=1)
    q1 = agent.target_critic1(sa).data
    q2 = agent.target_critic2(sa).data
    min_q = np.minimum(q1, q2)
    not_done = 1.0 - batch.dones.astype(np.float64)[:, None]
    return batch.rewards[:, None] + agent.gamma * not_done * min_q


def critic_update(agent: SpotAgent, batch: Batch, noise: np.ndarray) -> float:
    y = Tensor(critic_target(agent, batch, noise))
    sa = np.concatenate([batch.states, batch.actions], axis=1)
    with ad.Graph() as g:
        q1 = agent.critic1(sa)
        q2 = agent.critic2(sa)
        loss = ad.add(ad.mean(ad.square(ad.sub(q1, y))),
                      ad.mean(ad.square(ad.sub(q2, y))))
    g.backward(loss)
    agent.critic_opt.step()
    return loss.item()


def q_normalizer(agent: SpotAgent, q_values: np.ndarray) -> float:
    """The actor loss scale alpha: minibatch mean |Q|, gradient-free."""
    if q_values.size == 0:
        raise ValueError("q_normalizer needs a nonempty batch")
    if not agent.q_norm_enabled:
        return 1.0
    return max(float(np.mean(np.abs(q_values))), Q_NORM_FLOOR)


def _regularizer(agent: SpotAgent, states: Tensor, actions: Tensor,
                 vae_noise: np.ndarray | None) -> Tensor:
    """Per-datum estimated log pi_beta(actions | states) under the frozen model."""
    density = agent.density
    if isinstance(density, cv.GaussianBaseline):
        return cv.baseline_log_density(density, states, actions)
    if agent.reg_samples == 1:
        return cv.log_density_lb(density, states, actions, vae_noise)
    return cv.iw_log_density(density, states, actions, vae_noise)


def actor_loss(agent: SpotAgent, states: np.ndarray,
               vae_noise: np.ndarray | None = None,
               dropout_rng: np.random.Generator | None = None):
    """Build the actor objective -mean(Q)/alpha - lam * mean(log pi_beta).

    Returns (loss tensor, info dict). Exposed separately from actor_update so
    the lam = 0 reduction to normalized TD3 can be checked gradient-for-gradient.
    """
    states_t = Tensor(np.atleast_2d(states))
    actions = ad.mul(agent.actor(states_t, dropout_rng=dropout_rng),
                     agent.action_bound)
    q = agent.critic1(ad.concat(states_t, actions))
    alpha = q_normalizer(agent, q.data)
    loss = ad.mul(ad.neg(ad.mean(q)), 1.0 / alpha)
    info = {"mean_q": float(q.data.mean()), "alpha": alpha, "mean_logp": np.nan}
    if agent.lam > 0.0:
        logp = _regularizer(agent, states_t, actions, vae_noise)
        loss = ad.sub(loss, ad.mul(ad.mean(logp), agent.lam))
        info["mean_logp"] = float(logp.data.mean())
    return loss, info


def actor_update(agent: SpotAgent, batch: Batch,
                 vae_noise: np.ndarray | None = None,
                 dropout_rng: np.random.Generator | None = None) -> dict:
    """One delayed policy step: actor Adam update, then Polyak on all targets."""
    with ad.Graph() as g:
        loss, info = actor_loss(agent, batch.states, vae_noise, dropout_rng)
    g.backward(loss)
    agent.actor_opt.step()
    polyak_update(agent.target_actor, agent.actor, agent.tau)
    polyak_update(agent.target_critic1, agent.critic1, agent.tau)
    polyak_update(agent.target_critic2, agent.critic2, agent.tau)
    info["actor_loss"] = loss.item()
    return info


def reg_noise(agent: SpotAgent, batch_size: int,
              rng: np.random.Generator) -> np.ndarray | None:
    """Latent noise for the actor's density term, sized to reg_samples."""
    if not isinstance(agent.density, cv.CvaeModel) or agent.lam == 0.0:
        return None
    dz = agent.density.latent_dim
    if agent.reg_samples == 1:
        return rng.standard_normal((batch_size, dz))
    return rng.standard_normal((agent.reg_samples, batch_size, dz))


@dataclass
class TrainLog:
    """Per-step training scalars plus evaluation checkpoints.

    Actor columns hold nan on steps without a policy update; mean_logp also
    stays nan when no regularizer is active.
    """

    critic_loss: np.ndarray
    actor_loss: np.ndarray
    mean_q: np.ndarray
    mean_logp: np.ndarray
    lam: np.ndarray
    eval_steps: list[int] = field(default_factory=list)
    eval_returns: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def empty(cls, steps: int) -> "TrainLog":
        nan = lambda: np.full(steps, np.nan)
        return cls(critic_loss=nan(), actor_loss=nan(), mean_q=nan(),
                   mean_logp=nan(), lam=nan())

    @property
    def steps(self) -> int:
        return len(self.critic_loss)

    def final_eval_mean(self) -> float:
        return float(self.eval_returns[-1].mean())


def make_eval_policy(policy, dataset: OfflineDataset):
    """Wrap anything with .act() so it consumes raw observations, applying the
    dataset's (possibly identity) state normalization first."""
    return lambda obs: policy.act(dataset.normalize_obs(obs))


def _eval_seed(seed: int, step: int) -> int:
    return (seed + 1) * 1_000_003 + step


def train_offline(dataset: OfflineDataset, density, *, lam: float,
                  steps: int = 100_000, batch_size: int = 256, seed: int = 0,
                  eval_interval: int = 5_000, eval_episodes: int | None = None,
                  hidden: int = 64, depth: int = 3,
                  actor_lr: float | None = None, critic_lr: float = 3e-4,
                  actor_dropout: float | None = None, gamma: float = 0.99,
                  tau: float = 0.005, policy_noise: float = 0.2,
                  noise_clip: float = 0.5, policy_update_freq: int = 2,
                  q_norm_enabled: bool = True, reg_samples: int = 1,
                  evaluate: bool = True) -> tuple[SpotAgent, TrainLog]:
    """Algorithm: repeated critic updates with delayed, regularized actor
    updates, sampling minibatches from the fixed dataset. Sparse tasks default
    to the gentler actor learning rate and no dropout; dense tasks keep
    dropout 0.1.
    """
    env = make_env(dataset.env_name)
    sparse = env.spec.reward_kind == "sparse"
    if actor_lr is None:
        actor_lr = 1e-4 if sparse else 3e-4
    if actor_dropout is None:
        actor_dropout = 0.0 if sparse else 0.1
    if eval_episodes is None:
        eval_episodes = 20 if sparse else 10
    rng = np.random.default_rng(seed)
    agent = make_agent(dataset.state_dim, dataset.action_dim,
                       float(env.spec.action_high[0]), density, lam, rng=rng,
                       hidden=hidden, depth=depth, actor_dropout=actor_dropout,
                       actor_lr=actor_lr, critic_lr=critic_lr, gamma=gamma,
                       tau=tau, policy_noise=policy_noise, noise_clip=noise_clip,
                       policy_update_freq=policy_update_freq,
                       q_norm_enabled=q_norm_enabled, reg_samples=reg_samples)
    log = TrainLog.empty(steps)
    for step in range(1, steps + 1):
        batch = sample_batch(dataset, batch_size, rng)
        noise = target_noise(agent, batch.actions.shape, rng)
        log.critic_loss[step - 1] = critic_update(agent, batch, noise)
        log.lam[step - 1] = agent.lam
        if step % agent.policy_update_freq == 0:
            info = actor_update(agent, batch, reg_noise(agent, batch_size, rng),
                                dropout_rng=rng)
            log.actor_loss[step - 1] = info["actor_loss"]
            log.mean_q[step - 1] = info["mean_q"]
            log.mean_logp[step - 1] = info["mean_logp"]
        if evaluate and step % eval_interval == 0:
            returns = evaluate_policy(env, make_eval_policy(agent, dataset),
                                      eval_episodes, _eval_seed(seed, step))
            log.eval_steps.append(step)
            log.eval_returns.append(returns)
    return agent, log


# ---------------------------------------------------------------------------
# behavior cloning baseline
# ---------------------------------------------------------------------------


@dataclass
class BcPolicy:
    net: Mlp
    action_bound: float

    def act(self, obs: np.ndarray) -> np.ndarray:
        single = np.ndim(obs) == 1
        out = self.action_bound * self.net(np.atleast_2d(obs)).data
        return out[0] if single else out


def bc_baseline(dataset: OfflineDataset, *, iters: int = 20_000,
                batch_size: int = 256, lr: float = 3e-4, hidden: int = 64,
                depth: int = 3, seed: int = 0) -> tuple[BcPolicy, np.ndarray]:
    """Deterministic regression onto dataset actions (mean squared error)."""
    rng = np.random.default_rng(seed)
    env = make_env(dataset.env_name)
    bound = float(env.spec.action_high[0])
    net = Mlp([dataset.state_dim] + [hidden] * (depth - 1) + [dataset.action_dim],
              rng=rng, output_activation="tanh", name="bc")
    opt = Adam(net.params(), lr=lr)
    losses = np.empty(iters)
    for i in range(iters):
        batch = sample_batch(dataset, batch_size, rng)
        with ad.Graph() as g:
            pred = ad.mul(net(batch.states), bound)
            loss = ad.mean(ad.square(ad.sub(pred, Tensor(batch.actions))))
        g.backward(loss)
        opt.step()
        losses[i] = loss.item()
    return BcPolicy(net=net, action_bound=bound), losses


# ---------------------------------------------------------------------------
# analysis
# ---------------------------------------------------------------------------


def nearest_rank_percentile(values: np.ndarray, pct: float) -> float:
    """Classic nearest-rank percentile: the ceil(p/100 * n)-th smallest value."""
    values = np.sort(np.asarray(values).ravel())
    if values.size == 0:
        raise ValueError("percentile of an empty collection")
    rank = int(np.ceil(pct / 100.0 * values.size))
    return float(values[max(rank, 1) - 1])


def constraint_strength_profile(agent: SpotAgent, dataset: OfflineDataset, *,
                                num_samples: int = 500, subsample: int = 5_000,
                                seed: int = 0,
                                actions: np.ndarray | None = None) -> dict:
    """Percentiles of estimated log pi_beta at the policy's actions over
    dataset states. Low percentiles say how far the policy's worst actions
    stray from behavior support. Passing explicit actions profiles those
    instead (e.g. the dataset's own actions as a reference)."""
    if subsample <= 0:
        raise ValueError("subsample must be positive")
    if agent.density is None:
        raise ValueError("profiling needs a density model")
    rng = np.random.default_rng(seed)
    n = min(subsample, len(dataset))
    idx = rng.choice(len(dataset), size=n, replace=False)
    states = dataset.states[idx]
    acts = agent.act(states) if actions is None else actions[idx]
    if isinstance(agent.density, cv.GaussianBaseline):
        logp = cv.baseline_log_density(agent.density, states, acts).data
    else:
        logp = cv.estimate_log_density(agent.density, states, acts,
                                       num_samples, rng).values
    return {pct: nearest_rank_percentile(logp, pct) for pct in (5, 25, 50)}


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

_META_FIELDS = ("action_bound", "lam", "gamma", "tau", "policy_noise",
                "noise_clip", "policy_update_freq", "q_norm_enabled",
                "reg_samples")


def save_agent(path, agent: SpotAgent) -> None:
    """Checkpoint all six networks plus the scalar hyperparameters.

    Optimizer moments are not stored: a reloaded agent starts with fresh Adam
    state (the learning rates themselves are kept). The density model is a
    separate artifact and is never embedded here.
    """
    named = {f"meta.{name}": np.asarray(float(getattr(agent, name)))
             for name in _META_FIELDS}
    named["meta.actor_widths"] = np.array(agent.actor.widths, dtype=np.float64)
    named["meta.actor_dropout"] = np.asarray(agent.actor.dropout)
    named["meta.actor_lr"] = np.asarray(agent.actor_opt.lr)
    named["meta.critic_lr"] = np.asarray(agent.critic_opt.lr)
    for net in (agent.actor, agent.critic1, agent.critic2):
        named.update(checkpoint.mlp_state(net))
    for net in (agent.target_actor, agent.target_critic1, agent.target_critic2):
        named.update({f"target.{p.name}": p.data for p in net.params()})
    checkpoint.save_params(path, named)


def load_agent(path, density=None) -> SpotAgent:
    """Rebuild an agent from save_agent output.

    The stored lam is restored even when no density model is passed, so a
    regularized agent can be reloaded for evaluation alone; attach the
    density (and a positive lam) before calling actor_update again.
    """
    state = checkpoint.load_params(path)
    if "meta.actor_widths" not in state:
        raise checkpoint.CheckpointError(f"{path}: not an agent checkpoint")
    widths = [int(w) for w in state["meta.actor_widths"]]
    depth = len(widths) - 1
    agent = make_agent(widths[0], widths[-1],
                       float(state["meta.action_bound"]), density, 0.0,
                       rng=np.random.default_rng(0),
                       hidden=widths[1] if depth > 1 else 1, depth=depth,
                       actor_dropout=float(state["meta.actor_dropout"]),
                       actor_lr=float(state["meta.actor_lr"]),
                       critic_lr=float(state["meta.critic_lr"]),
                       gamma=float(state["meta.gamma"]),
                       tau=float(state["meta.tau"]),
                       policy_noise=float(state["meta.policy_noise"]),
                       noise_clip=float(state["meta.noise_clip"]),
                       policy_update_freq=int(state["meta.policy_update_freq"]),
                       q_norm_enabled=bool(state["meta.q_norm_enabled"]),
                       reg_samples=int(state["meta.reg_samples"]))
    agent.lam = float(state["meta.lam"])
    for net in (agent.actor, agent.critic1, agent.critic2):
        checkpoint.load_into_mlp(net, state)
    target_state = {k[len("target."):]: v for k, v in state.items()
                    if k.startswith("target.")}
    for net in (agent.target_actor, agent.target_critic1, agent.target_critic2):
        checkpoint.load_into_mlp(net, target_state)
    return agent
