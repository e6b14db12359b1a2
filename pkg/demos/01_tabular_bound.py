"""Supported value iteration and its suboptimality bound.

Two parts. First, a handcrafted chain MDP whose shortcut action is rare
under the behavior policy: raising the support threshold eps masks the
shortcut and the supported optimum drops to the long way around. Second,
random MDPs: the gap between Q* and the supported fixed point never exceeds
alpha/(1-gamma), where alpha measures how much one supported backup lags the
full backup at Q*.

Runs in a couple of seconds.
"""
import numpy as np

from spotrl import tabular


def main():
    print("== chain with a rarely-taken shortcut ==")
    mdp, tight_eps = tabular.chain_with_masked_shortcut()
    for eps in (0.0, 0.02, tight_eps, 0.2):
        report = tabular.suboptimality_gap(mdp, eps)
        masked = "masked" if report.gap > 1e-8 else "kept"
        print(f"  eps={eps:<5} shortcut {masked:<7} "
              f"gap={report.gap:.4f} bound={report.bound:.4f}")

    print("== 30 random MDPs, gap vs bound ==")
    worst = -np.inf
    for seed in range(30):
        mdp = tabular.random_mdp(6, 4, 0.9, np.random.default_rng(seed))
        for eps in (0.0, 0.05, 0.1, 0.2):
            report = tabular.suboptimality_gap(mdp, eps)
            worst = max(worst, report.gap - report.bound)
            assert report.gap <= report.bound + 1e-9
    print(f"  max gap-bound excess over 120 cases: {worst:.3e} (never positive)")
    print("done")


if __name__ == "__main__":
    main()
