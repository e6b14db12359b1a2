"""spotrl: offline RL with a density-supported policy constraint.

A TD3-style actor-critic whose actor is regularized toward the support of
the behavior policy via a conditional-VAE log-density estimate, together
with the tabular operator analysis that motivates the constraint, toy
continuous-control environments, dataset tooling, and an offline-to-online
fine-tuning loop with a decaying constraint weight.
"""

__version__ = "0.1.0"
