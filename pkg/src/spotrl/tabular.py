"""Finite MDPs and the support-constrained Bellman analysis.

The object of study is the backup that only maximizes over actions whose
behavior-policy probability exceeds a threshold eps. Its fixed point is the
best Q function achievable while staying on the behavior support, and the
distance to the unconstrained optimum obeys

    max |Q* - Q*_eps|  <=  max |T Q* - T_eps Q*| / (1 - gamma)

which these routines compute exactly on small tabular problems.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class EmptySupportError(ValueError):
    """Some state has no action with behavior probability above eps."""


@dataclass
class TabularMdp:
    """A finite MDP plus the behavior policy that generated its data.

    transitions: [S, A, S] row-stochastic, rewards: [S, A],
    behavior: [S, A] row-stochastic (pi_beta(a | s)).
    """

    transitions: np.ndarray
    rewards: np.ndarray
    behavior: np.ndarray
    gamma: float

    def __post_init__(self):
        self.transitions = np.asarray(self.transitions, dtype=np.float64)
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        self.behavior = np.asarray(self.behavior, dtype=np.float64)
        s, a, s2 = self.transitions.shape
        if s != s2:
            raise ValueError(f"transitions must be [S, A, S], got {self.transitions.shape}")
        if self.rewards.shape != (s, a):
            raise ValueError(f"rewards shape {self.rewards.shape} != {(s, a)}")
        if self.behavior.shape != (s, a):
            raise ValueError(f"behavior shape {self.behavior.shape} != {(s, a)}")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma}")
        if np.any(self.transitions < 0) or np.any(self.behavior < 0):
            raise ValueError("transition and behavior probabilities must be nonnegative")
        row_sums = self.transitions.sum(axis=2)
        if not np.allclose(row_sums, 1.0, atol=1e-10):
            raise ValueError("transition rows must sum to 1")
        if not np.allclose(self.behavior.sum(axis=1), 1.0, atol=1e-10):
            raise ValueError("behavior rows must sum to 1")

    @property
    def n_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[1]


def support_mask(mdp: TabularMdp, eps: float) -> np.ndarray:
    """Boolean [S, A] of actions with pi_beta(a|s) strictly above eps.

    Raises EmptySupportError naming the first offending state if any row
    comes out empty.
    """
    if eps < 0:
        raise ValueError(f"eps must be nonnegative, got {eps}")
    mask = mdp.behavior > eps
    empty = np.flatnonzero(~mask.any(axis=1))
    if empty.size:
        raise EmptySupportError(
            f"state {empty[0]}: no action has behavior probability above eps={eps}")
    return mask


def _masked_backup(mdp: TabularMdp, q: np.ndarray, mask: np.ndarray) -> np.ndarray:
    v = np.where(mask, q, -np.inf).max(axis=1)
    return mdp.rewards + mdp.gamma * (mdp.transitions @ v)


def bellman_backup(mdp: TabularMdp, q: np.ndarray) -> np.ndarray:
    """One synchronous optimality backup T q."""
    return _masked_backup(mdp, np.asarray(q, dtype=np.float64),
                          np.ones_like(mdp.behavior, dtype=bool))


def supported_backup(mdp: TabularMdp, q: np.ndarray, eps: float) -> np.ndarray:
    """One backup T_eps q whose max ranges only over supported actions."""
    return _masked_backup(mdp, np.asarray(q, dtype=np.float64), support_mask(mdp, eps))


def _fixed_point(mdp: TabularMdp, mask: np.ndarray, tol: float,
                 max_iter: int) -> np.ndarray:
    q = np.zeros((mdp.n_states, mdp.n_actions))
    for _ in range(max_iter):
        nxt = _masked_backup(mdp, q, mask)
        if np.max(np.abs(nxt - q)) < tol:
            return nxt
        q = nxt
    raise RuntimeError(f"value iteration did not reach tol={tol} in {max_iter} sweeps")


def optimal_q(mdp: TabularMdp, tol: float = 1e-10, max_iter: int = 1_000_000) -> np.ndarray:
    """Q* by synchronous value iteration to sup-norm tolerance."""
    return _fixed_point(mdp, np.ones_like(mdp.behavior, dtype=bool), tol, max_iter)


def supported_optimal_q(mdp: TabularMdp, eps: float, tol: float = 1e-10,
                        max_iter: int = 1_000_000) -> np.ndarray:
    """Fixed point of the supported backup at threshold eps."""
    return _fixed_point(mdp, support_mask(mdp, eps), tol, max_iter)


def greedy_policy(q: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Deterministic argmax policy; ties go to the lowest action index."""
    scored = q if mask is None else np.where(mask, q, -np.inf)
    return scored.argmax(axis=1)


def policy_value(mdp: TabularMdp, policy: np.ndarray) -> np.ndarray:
    """Exact V^pi for a deterministic policy via the linear system."""
    idx = np.arange(mdp.n_states)
    p_pi = mdp.transitions[idx, policy]
    r_pi = mdp.rewards[idx, policy]
    return np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * p_pi, r_pi)


@dataclass
class GapReport:
    """Everything the suboptimality bound talks about, on one MDP at one eps."""

    eps: float
    gap: float            # max |Q* - Q*_eps|
    alpha: float          # max |T Q* - T_eps Q*|
    bound: float          # alpha / (1 - gamma)
    q_star: np.ndarray = field(repr=False)
    q_supported: np.ndarray = field(repr=False)


def suboptimality_gap(mdp: TabularMdp, eps: float, tol: float = 1e-10) -> GapReport:
    """Compare the supported fixed point against Q* and the one-step bound."""
    q_star = optimal_q(mdp, tol=tol)
    q_sup = supported_optimal_q(mdp, eps, tol=tol)
    gap = float(np.max(np.abs(q_star - q_sup)))
    alpha = float(np.max(np.abs(bellman_backup(mdp, q_star)
                                - supported_backup(mdp, q_star, eps))))
    return GapReport(eps=eps, gap=gap, alpha=alpha,
                     bound=alpha / (1.0 - mdp.gamma),
                     q_star=q_star, q_supported=q_sup)


def random_mdp(n_states: int, n_actions: int, gamma: float,
               rng: np.random.Generator) -> TabularMdp:
    """Dirichlet(1) transition and behavior rows, rewards uniform on [0, 1]."""
    transitions = rng.dirichlet(np.ones(n_states),
                                size=n_states * n_actions).reshape(n_states, n_actions, n_states)
    behavior = rng.dirichlet(np.ones(n_actions), size=n_states)
    rewards = rng.uniform(0.0, 1.0, size=(n_states, n_actions))
    return TabularMdp(transitions=transitions, rewards=rewards,
                      behavior=behavior, gamma=gamma)


def chain_with_masked_shortcut(gamma: float = 0.9, length: int = 3) -> tuple[TabularMdp, float]:
    """Deterministic chain whose final state hides a high-reward self-loop.

    The behavior policy puts probability 0.05 on the rewarding action at the
    last state, so eps >= 0.05 masks it. Returns the MDP and the eps at which
    the bound is tight (gap == alpha / (1 - gamma) exactly).
    """
    if length < 2:
        raise ValueError("chain needs at least 2 states")
    s, a = length, 2
    transitions = np.zeros((s, a, s))
    rewards = np.zeros((s, a))
    behavior = np.full((s, a), 0.5)
    for i in range(length - 1):
        transitions[i, :, i + 1] = 1.0
    transitions[-1, :, -1] = 1.0
    rewards[-1, 0] = 1.0
    behavior[-1] = [0.05, 0.95]
    mdp = TabularMdp(transitions=transitions, rewards=rewards,
                     behavior=behavior, gamma=gamma)
    return mdp, 0.1
